//! Tiling of oversized images into fixed-size squares.
//!
//! Tiles form a non-overlapping grid from the top-left corner; when the image
//! size is not a multiple of the tile size, the last row/column of tiles is
//! anchored to the image edge (overlapping its neighbor) so every source
//! pixel lands in at least one tile.

use crate::imgio::{MaskBuffer, RgbBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileLabel {
    Normal,
    Anomalous,
    /// Mask overlap above zero but below the minimum defect size; the tile is
    /// neither cleanly normal nor a usable anomaly.
    Discarded,
}

#[derive(Debug, Clone)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    /// Top-left corner in the source image.
    pub origin: (usize, usize),
    pub image: RgbBuffer,
    pub mask: MaskBuffer,
    pub label: TileLabel,
}

/// Anchor offsets along one axis: a stride-`tile` grid plus an edge-anchored
/// remainder tile.
fn axis_offsets(extent: usize, tile: usize) -> Vec<usize> {
    let mut offsets = Vec::new();
    let mut pos = 0;
    while pos + tile <= extent {
        offsets.push(pos);
        pos += tile;
    }
    if offsets
        .last()
        .map(|&last| last + tile < extent)
        .unwrap_or(false)
    {
        offsets.push(extent - tile);
    }
    offsets
}

/// Cuts `image` (and its mask, when given) into `tile_size` squares.
///
/// A tile is anomalous iff its mask region holds at least `min_defect_px`
/// positive pixels; tiles with a smaller nonzero overlap are marked
/// [`TileLabel::Discarded`]. Images smaller than the tile size in either
/// dimension pass through as a single centered tile padded with black.
pub fn tile(
    image: &RgbBuffer,
    mask: Option<&MaskBuffer>,
    tile_size: usize,
    min_defect_px: usize,
) -> Vec<Tile> {
    assert!(tile_size > 0, "tile size must be positive");
    if let Some(m) = mask {
        assert_eq!(
            (m.width, m.height),
            (image.width, image.height),
            "mask dimensions must match the image"
        );
    }

    if image.width < tile_size || image.height < tile_size {
        return vec![center_pad(image, mask, tile_size, min_defect_px)];
    }

    let xs = axis_offsets(image.width, tile_size);
    let ys = axis_offsets(image.height, tile_size);
    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    for (row, &oy) in ys.iter().enumerate() {
        for (col, &ox) in xs.iter().enumerate() {
            let mut timg = RgbBuffer::new(tile_size, tile_size);
            let mut tmask = MaskBuffer::new(tile_size, tile_size);
            for y in 0..tile_size {
                for x in 0..tile_size {
                    timg.set(x, y, image.get(ox + x, oy + y));
                    if let Some(m) = mask {
                        tmask.set(x, y, m.get(ox + x, oy + y));
                    }
                }
            }
            let positives = tmask.count_positive();
            let label = if positives == 0 {
                TileLabel::Normal
            } else if positives >= min_defect_px {
                TileLabel::Anomalous
            } else {
                TileLabel::Discarded
            };
            tiles.push(Tile {
                row,
                col,
                origin: (ox, oy),
                image: timg,
                mask: tmask,
                label,
            });
        }
    }
    tiles
}

fn center_pad(
    image: &RgbBuffer,
    mask: Option<&MaskBuffer>,
    tile_size: usize,
    min_defect_px: usize,
) -> Tile {
    let mut timg = RgbBuffer::new(tile_size, tile_size);
    let mut tmask = MaskBuffer::new(tile_size, tile_size);
    let ox = (tile_size.saturating_sub(image.width)) / 2;
    let oy = (tile_size.saturating_sub(image.height)) / 2;
    for y in 0..image.height.min(tile_size) {
        for x in 0..image.width.min(tile_size) {
            timg.set(ox + x, oy + y, image.get(x, y));
            if let Some(m) = mask {
                tmask.set(ox + x, oy + y, m.get(x, y));
            }
        }
    }
    let positives = tmask.count_positive();
    let label = if positives == 0 {
        TileLabel::Normal
    } else if positives >= min_defect_px {
        TileLabel::Anomalous
    } else {
        TileLabel::Discarded
    };
    Tile {
        row: 0,
        col: 0,
        origin: (0, 0),
        image: timg,
        mask: tmask,
        label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: usize, h: usize) -> RgbBuffer {
        let mut img = RgbBuffer::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set(
                    x,
                    y,
                    [(x % 251) as u8, (y % 251) as u8, ((x + y) % 251) as u8],
                );
            }
        }
        img
    }

    #[test]
    fn exact_grid_has_no_overlap() {
        let img = gradient_image(512, 512);
        let tiles = tile(&img, None, 256, 10);
        assert_eq!(tiles.len(), 4);
        assert!(tiles.iter().all(|t| t.label == TileLabel::Normal));
    }

    #[test]
    fn remainder_tiles_anchor_to_the_edge() {
        let img = gradient_image(600, 600);
        let tiles = tile(&img, None, 256, 10);
        assert_eq!(tiles.len(), 9);
        let offsets: Vec<usize> = axis_offsets(600, 256);
        assert_eq!(offsets, vec![0, 256, 344]);
    }

    #[test]
    fn every_source_pixel_is_covered() {
        for extent in [512usize, 600, 700, 257] {
            let offsets = axis_offsets(extent, 256);
            let mut covered = vec![false; extent];
            for &o in &offsets {
                for c in covered.iter_mut().skip(o).take(256) {
                    *c = true;
                }
            }
            assert!(covered.iter().all(|&c| c), "extent {extent} left gaps");
        }
    }

    #[test]
    fn defect_inside_one_tile_is_conserved() {
        let img = gradient_image(512, 512);
        let mut mask = MaskBuffer::new(512, 512);
        for y in 300..320 {
            for x in 40..60 {
                mask.set(x, y, true);
            }
        }
        let tiles = tile(&img, Some(&mask), 256, 10);
        let anomalous: Vec<&Tile> = tiles
            .iter()
            .filter(|t| t.label == TileLabel::Anomalous)
            .collect();
        assert_eq!(anomalous.len(), 1);
        assert_eq!(anomalous[0].mask.count_positive(), 400);
        assert_eq!(anomalous[0].origin, (0, 256));
    }

    #[test]
    fn tiny_defects_are_discarded() {
        let img = gradient_image(512, 512);
        let mut mask = MaskBuffer::new(512, 512);
        mask.set(10, 10, true);
        mask.set(11, 10, true);
        let tiles = tile(&img, Some(&mask), 256, 10);
        assert_eq!(
            tiles
                .iter()
                .filter(|t| t.label == TileLabel::Discarded)
                .count(),
            1
        );
        assert!(tiles.iter().all(|t| t.label != TileLabel::Anomalous));
    }

    #[test]
    fn small_images_are_center_padded() {
        let img = gradient_image(100, 80);
        let tiles = tile(&img, None, 256, 10);
        assert_eq!(tiles.len(), 1);
        let t = &tiles[0];
        assert_eq!(t.image.width, 256);
        // original content sits centered
        assert_eq!(t.image.get(78 + 50, 88 + 40), img.get(50, 40));
        assert_eq!(t.image.get(0, 0), [0, 0, 0]);
    }
}
