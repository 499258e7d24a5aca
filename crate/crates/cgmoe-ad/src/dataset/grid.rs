//! Spatial localization: connected components and 3x3 grid descriptors.

use crate::error::{Error, Result};
use crate::imgio::MaskBuffer;

/// One connected region of positive mask pixels (8-connectivity).
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub size: usize,
    /// Pixel-coordinate centroid `(x, y)`.
    pub centroid: (f64, f64),
}

/// Extracts connected components by flood fill with 8-connectivity.
pub fn connected_components(mask: &MaskBuffer) -> Vec<Component> {
    let (w, h) = (mask.width, mask.height);
    let mut visited = vec![false; w * h];
    let mut components = Vec::new();
    let mut queue: Vec<(usize, usize)> = Vec::new();

    for start_y in 0..h {
        for start_x in 0..w {
            let idx = start_y * w + start_x;
            if visited[idx] || !mask.pixels[idx] {
                continue;
            }
            visited[idx] = true;
            queue.clear();
            queue.push((start_x, start_y));
            let mut size = 0usize;
            let mut sum_x = 0f64;
            let mut sum_y = 0f64;
            while let Some((x, y)) = queue.pop() {
                size += 1;
                sum_x += x as f64;
                sum_y += y as f64;
                let x0 = x.saturating_sub(1);
                let y0 = y.saturating_sub(1);
                for ny in y0..=(y + 1).min(h - 1) {
                    for nx in x0..=(x + 1).min(w - 1) {
                        let nidx = ny * w + nx;
                        if !visited[nidx] && mask.pixels[nidx] {
                            visited[nidx] = true;
                            queue.push((nx, ny));
                        }
                    }
                }
            }
            components.push(Component {
                size,
                centroid: (sum_x / size as f64, sum_y / size as f64),
            });
        }
    }
    components
}

pub const LOCATION_VOCABULARY: [&str; 9] = [
    "top-left",
    "top-center",
    "top-right",
    "middle-left",
    "middle-center",
    "middle-right",
    "bottom-left",
    "bottom-center",
    "bottom-right",
];

fn band(coord: f64, extent: usize) -> usize {
    // equal thirds; remainder pixels belong to the last band
    let third = (extent / 3).max(1) as f64;
    ((coord / third) as usize).min(2)
}

pub fn cell_name(row: usize, col: usize) -> &'static str {
    LOCATION_VOCABULARY[row * 3 + col]
}

/// Grid-cell descriptors for every defect instance in the mask: the image is
/// divided into a 3x3 grid and each connected component contributes the cell
/// holding its centroid. Duplicates collapse; order is by component size,
/// largest first.
pub fn grid_location(mask: &MaskBuffer) -> Result<Vec<String>> {
    let mut components = connected_components(mask);
    if components.is_empty() {
        return Err(Error::Contract(
            "grid_location requires a nonempty mask".into(),
        ));
    }
    components.sort_by(|a, b| b.size.cmp(&a.size));
    let mut out: Vec<String> = Vec::new();
    for c in components {
        let row = band(c.centroid.1, mask.height);
        let col = band(c.centroid.0, mask.width);
        let name = cell_name(row, col).to_string();
        if !out.contains(&name) {
            out.push(name);
        }
    }
    Ok(out)
}
