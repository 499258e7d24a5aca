//! Dense tensors with reverse-mode differentiation.
//!
//! Tensors are immutable once created; each differentiable operation records
//! the backward rule it needs as a closure over its (shared) inputs, so the
//! graph is rebuilt from scratch on every forward pass. [`Tensor::backward`]
//! walks the graph once in reverse topological order and returns per-leaf
//! gradients. A graph is traversed by exactly one thread; sharing values
//! across threads for reading is fine.
//!
//! Element types are generic over [`Scalar`]: training runs at `f32`, all
//! gradient oracles at `f64`.
//!
//! Shape mismatches are programming errors and panic; data-dependent failures
//! live in higher layers.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Element type for tensor math.
pub trait Scalar:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    /// Gauss error function, used by the exact GELU.
    fn erf(self) -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn maximum(self, other: Self) -> Self {
        f32::max(self, other)
    }
    fn erf(self) -> Self {
        libm::erf(f64::from(self)) as f32
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn maximum(self, other: Self) -> Self {
        f64::max(self, other)
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static MATMUL_MACS: Cell<u64> = const { Cell::new(0) };
}

/// Resets this thread's matmul multiply-accumulate counter.
pub fn reset_matmul_macs() {
    MATMUL_MACS.with(|c| c.set(0));
}

/// Multiply-accumulate operations executed by matmul kernels on this thread
/// since the last reset.
pub fn matmul_macs() -> u64 {
    MATMUL_MACS.with(|c| c.get())
}

fn count_macs(n: u64) {
    MATMUL_MACS.with(|c| c.set(c.get().wrapping_add(n)));
}

type BackFn<E> = Box<dyn Fn(&[E]) -> Vec<Option<Vec<E>>> + Send + Sync>;

struct Node<E: Scalar> {
    parents: Vec<Tensor<E>>,
    back: BackFn<E>,
}

struct Inner<E: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<E>,
    node: Option<Node<E>>,
}

/// Dense n-dimensional array, optionally tracked for gradients.
#[derive(Clone)]
pub struct Tensor<E: Scalar> {
    inner: Arc<Inner<E>>,
}

impl<E: Scalar> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("tracked", &self.inner.node.is_some())
            .finish()
    }
}

impl<E: Scalar> Tensor<E> {
    fn new_inner(shape: Vec<usize>, data: Vec<E>, node: Option<Node<E>>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                node,
            }),
        }
    }

    /// Untracked constant tensor.
    pub fn from_vec(shape: Vec<usize>, data: Vec<E>) -> Self {
        Self::new_inner(shape, data, None)
    }

    /// Tracked leaf: participates in backward and receives a gradient.
    pub fn param(shape: Vec<usize>, data: Vec<E>) -> Self {
        Self::new_inner(
            shape,
            data,
            Some(Node {
                parents: Vec::new(),
                back: Box::new(|_| Vec::new()),
            }),
        )
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![E::ZERO; n])
    }

    pub fn scalar(v: E) -> Self {
        Self::from_vec(vec![1], vec![v])
    }

    fn op(
        shape: Vec<usize>,
        data: Vec<E>,
        parents: Vec<Tensor<E>>,
        back: impl Fn(&[E]) -> Vec<Option<Vec<E>>> + Send + Sync + 'static,
    ) -> Self {
        let tracked = parents.iter().any(Tensor::is_tracked);
        let node = tracked.then(|| Node {
            parents,
            back: Box::new(back),
        });
        Self::new_inner(shape, data, node)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[E] {
        &self.inner.data
    }

    pub fn len(&self) -> usize {
        self.inner.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.data.is_empty()
    }

    pub fn is_tracked(&self) -> bool {
        self.inner.node.is_some()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.len(), 1, "item() requires a one-element tensor");
        self.inner.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    fn dims2(&self, what: &str) -> (usize, usize) {
        assert_eq!(
            self.inner.shape.len(),
            2,
            "{what}: expected a 2-d tensor, got shape {:?}",
            self.inner.shape
        );
        (self.inner.shape[0], self.inner.shape[1])
    }

    /// Untracked view of the same values.
    pub fn detach(&self) -> Tensor<E> {
        Tensor::from_vec(self.inner.shape.clone(), self.inner.data.clone())
    }

    // ── elementwise ─────────────────────────────────────────────────

    pub fn add(&self, rhs: &Tensor<E>) -> Tensor<E> {
        assert_eq!(self.shape(), rhs.shape(), "add: shape mismatch");
        let data = zip_map(self.data(), rhs.data(), |a, b| a + b);
        Tensor::op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            |gy| vec![Some(gy.to_vec()), Some(gy.to_vec())],
        )
    }

    pub fn sub(&self, rhs: &Tensor<E>) -> Tensor<E> {
        assert_eq!(self.shape(), rhs.shape(), "sub: shape mismatch");
        let data = zip_map(self.data(), rhs.data(), |a, b| a - b);
        Tensor::op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            |gy| vec![Some(gy.to_vec()), Some(gy.iter().map(|&g| -g).collect())],
        )
    }

    /// Hadamard product.
    pub fn mul(&self, rhs: &Tensor<E>) -> Tensor<E> {
        assert_eq!(self.shape(), rhs.shape(), "mul: shape mismatch");
        let data = zip_map(self.data(), rhs.data(), |a, b| a * b);
        let (a, b) = (self.clone(), rhs.clone());
        Tensor::op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            move |gy| {
                vec![
                    Some(zip_map(gy, b.data(), |g, x| g * x)),
                    Some(zip_map(gy, a.data(), |g, x| g * x)),
                ]
            },
        )
    }

    /// Multiplies by a compile-time-known constant.
    pub fn scale(&self, c: f64) -> Tensor<E> {
        let cc = E::from_f64(c);
        let data = self.data().iter().map(|&x| x * cc).collect();
        Tensor::op(self.shape().to_vec(), data, vec![self.clone()], move |gy| {
            vec![Some(gy.iter().map(|&g| g * cc).collect())]
        })
    }

    /// Multiplies by a one-element tensor, differentiable in both operands.
    pub fn scale_by(&self, s: &Tensor<E>) -> Tensor<E> {
        assert_eq!(s.len(), 1, "scale_by: scale must be a one-element tensor");
        let sv = s.data()[0];
        let data = self.data().iter().map(|&x| x * sv).collect();
        let a = self.clone();
        Tensor::op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), s.clone()],
            move |gy| {
                let mut ds = E::ZERO;
                for (&g, &x) in gy.iter().zip(a.data()) {
                    ds += g * x;
                }
                vec![Some(gy.iter().map(|&g| g * sv).collect()), Some(vec![ds])]
            },
        )
    }

    /// Adds a bias row vector to every row of a 2-d tensor.
    pub fn add_bias(&self, bias: &Tensor<E>) -> Tensor<E> {
        let (r, d) = self.dims2("add_bias");
        assert_eq!(bias.shape(), [d], "add_bias: bias must have shape [{d}]");
        let mut data = self.data().to_vec();
        for row in data.chunks_mut(d) {
            for (x, &b) in row.iter_mut().zip(bias.data()) {
                *x += b;
            }
        }
        Tensor::op(
            vec![r, d],
            data,
            vec![self.clone(), bias.clone()],
            move |gy| {
                let mut db = vec![E::ZERO; d];
                for row in gy.chunks(d) {
                    for (acc, &g) in db.iter_mut().zip(row) {
                        *acc += g;
                    }
                }
                vec![Some(gy.to_vec()), Some(db)]
            },
        )
    }

    // ── linear algebra ──────────────────────────────────────────────

    pub fn matmul(&self, rhs: &Tensor<E>) -> Tensor<E> {
        let (m, k) = self.dims2("matmul lhs");
        let (k2, n) = rhs.dims2("matmul rhs");
        assert_eq!(
            k, k2,
            "matmul: inner dimensions disagree ([{m}x{k}] x [{k2}x{n}])"
        );
        let data = mm_nn(self.data(), rhs.data(), m, k, n);
        let (a, b) = (self.clone(), rhs.clone());
        Tensor::op(
            vec![m, n],
            data,
            vec![self.clone(), rhs.clone()],
            move |gy| {
                let da = mm_nt(gy, b.data(), m, n, k);
                let db = mm_tn(a.data(), gy, m, k, n);
                vec![Some(da), Some(db)]
            },
        )
    }

    pub fn transpose(&self) -> Tensor<E> {
        let (m, n) = self.dims2("transpose");
        let src = self.data();
        let mut data = vec![E::ZERO; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        Tensor::op(vec![n, m], data, vec![self.clone()], move |gy| {
            let mut dx = vec![E::ZERO; m * n];
            for j in 0..n {
                for i in 0..m {
                    dx[i * n + j] = gy[j * m + i];
                }
            }
            vec![Some(dx)]
        })
    }

    // ── shape plumbing ──────────────────────────────────────────────

    pub fn reshape(&self, shape: Vec<usize>) -> Tensor<E> {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, self.len(), "reshape: element count must not change");
        Tensor::op(shape, self.data().to_vec(), vec![self.clone()], |gy| {
            vec![Some(gy.to_vec())]
        })
    }

    /// Contiguous slice along `axis` (1-d or 2-d tensors).
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor<E> {
        match self.shape() {
            [n] => {
                assert_eq!(axis, 0, "narrow: 1-d tensors only have axis 0");
                assert!(start + len <= *n, "narrow: range out of bounds");
                let n = *n;
                let data = self.data()[start..start + len].to_vec();
                Tensor::op(vec![len], data, vec![self.clone()], move |gy| {
                    let mut dx = vec![E::ZERO; n];
                    dx[start..start + len].copy_from_slice(gy);
                    vec![Some(dx)]
                })
            }
            [r, c] => {
                let (r, c) = (*r, *c);
                match axis {
                    0 => {
                        assert!(start + len <= r, "narrow: row range out of bounds");
                        let data = self.data()[start * c..(start + len) * c].to_vec();
                        Tensor::op(vec![len, c], data, vec![self.clone()], move |gy| {
                            let mut dx = vec![E::ZERO; r * c];
                            dx[start * c..(start + len) * c].copy_from_slice(gy);
                            vec![Some(dx)]
                        })
                    }
                    1 => {
                        assert!(start + len <= c, "narrow: column range out of bounds");
                        let src = self.data();
                        let mut data = vec![E::ZERO; r * len];
                        for i in 0..r {
                            data[i * len..(i + 1) * len]
                                .copy_from_slice(&src[i * c + start..i * c + start + len]);
                        }
                        Tensor::op(vec![r, len], data, vec![self.clone()], move |gy| {
                            let mut dx = vec![E::ZERO; r * c];
                            for i in 0..r {
                                dx[i * c + start..i * c + start + len]
                                    .copy_from_slice(&gy[i * len..(i + 1) * len]);
                            }
                            vec![Some(dx)]
                        })
                    }
                    _ => panic!("narrow: axis {axis} out of range for 2-d tensor"),
                }
            }
            s => panic!("narrow: unsupported shape {s:?}"),
        }
    }

    /// Concatenation along `axis` (1-d or 2-d tensors).
    pub fn concat(axis: usize, parts: &[&Tensor<E>]) -> Tensor<E> {
        assert!(!parts.is_empty(), "concat: no inputs");
        let ndim = parts[0].shape().len();
        assert!(
            parts.iter().all(|p| p.shape().len() == ndim),
            "concat: rank mismatch"
        );
        match (ndim, axis) {
            (1, 0) => {
                let lens: Vec<usize> = parts.iter().map(|p| p.len()).collect();
                let mut data = Vec::with_capacity(lens.iter().sum());
                for p in parts {
                    data.extend_from_slice(p.data());
                }
                let total = data.len();
                let owned: Vec<Tensor<E>> = parts.iter().map(|p| (*p).clone()).collect();
                Tensor::op(vec![total], data, owned, move |gy| {
                    let mut out = Vec::with_capacity(lens.len());
                    let mut off = 0;
                    for &l in &lens {
                        out.push(Some(gy[off..off + l].to_vec()));
                        off += l;
                    }
                    out
                })
            }
            (2, 0) => {
                let c = parts[0].shape()[1];
                assert!(
                    parts.iter().all(|p| p.shape()[1] == c),
                    "concat rows: column counts differ"
                );
                let rows: Vec<usize> = parts.iter().map(|p| p.shape()[0]).collect();
                let mut data = Vec::new();
                for p in parts {
                    data.extend_from_slice(p.data());
                }
                let total_rows: usize = rows.iter().sum();
                let owned: Vec<Tensor<E>> = parts.iter().map(|p| (*p).clone()).collect();
                Tensor::op(vec![total_rows, c], data, owned, move |gy| {
                    let mut out = Vec::with_capacity(rows.len());
                    let mut off = 0;
                    for &r in &rows {
                        out.push(Some(gy[off..off + r * c].to_vec()));
                        off += r * c;
                    }
                    out
                })
            }
            (2, 1) => {
                let r = parts[0].shape()[0];
                assert!(
                    parts.iter().all(|p| p.shape()[0] == r),
                    "concat cols: row counts differ"
                );
                let cols: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
                let total_cols: usize = cols.iter().sum();
                let mut data = vec![E::ZERO; r * total_cols];
                let mut off = 0;
                for p in parts {
                    let pc = p.shape()[1];
                    for i in 0..r {
                        data[i * total_cols + off..i * total_cols + off + pc]
                            .copy_from_slice(&p.data()[i * pc..(i + 1) * pc]);
                    }
                    off += pc;
                }
                let owned: Vec<Tensor<E>> = parts.iter().map(|p| (*p).clone()).collect();
                Tensor::op(vec![r, total_cols], data, owned, move |gy| {
                    let mut out = Vec::with_capacity(cols.len());
                    let mut off = 0;
                    for &pc in &cols {
                        let mut d = vec![E::ZERO; r * pc];
                        for i in 0..r {
                            d[i * pc..(i + 1) * pc].copy_from_slice(
                                &gy[i * total_cols + off..i * total_cols + off + pc],
                            );
                        }
                        out.push(Some(d));
                        off += pc;
                    }
                    out
                })
            }
            _ => panic!("concat: unsupported rank/axis combination ({ndim}, {axis})"),
        }
    }

    // ── nonlinearities ──────────────────────────────────────────────

    /// Softmax along `axis`, stabilized by max subtraction. Outputs are
    /// nonnegative and sum to one along the axis.
    pub fn softmax(&self, axis: usize) -> Tensor<E> {
        let (lanes, lane_len, stride, lane_base) = self.lane_layout(axis, "softmax");
        let mut data = self.data().to_vec();
        for lane in 0..lanes {
            let base = lane_base(lane);
            let mut mx = data[base];
            for i in 1..lane_len {
                let v = data[base + i * stride];
                if v > mx {
                    mx = v;
                }
            }
            let mut sum = E::ZERO;
            for i in 0..lane_len {
                let idx = base + i * stride;
                let e = (data[idx] - mx).exp();
                data[idx] = e;
                sum += e;
            }
            for i in 0..lane_len {
                data[base + i * stride] = data[base + i * stride] / sum;
            }
        }
        let y = data.clone();
        let shape = self.shape().to_vec();
        let (lanes_b, lane_len_b, stride_b) = (lanes, lane_len, stride);
        let lane_base_b = self.lane_layout(axis, "softmax").3;
        Tensor::op(shape, data, vec![self.clone()], move |gy| {
            let mut dx = vec![E::ZERO; gy.len()];
            for lane in 0..lanes_b {
                let base = lane_base_b(lane);
                let mut s = E::ZERO;
                for i in 0..lane_len_b {
                    let idx = base + i * stride_b;
                    s += gy[idx] * y[idx];
                }
                for i in 0..lane_len_b {
                    let idx = base + i * stride_b;
                    dx[idx] = y[idx] * (gy[idx] - s);
                }
            }
            vec![Some(dx)]
        })
    }

    /// Lane decomposition for axis-wise ops on 1-d/2-d tensors: returns
    /// (lane count, lane length, stride within lane, base index of lane).
    #[allow(clippy::type_complexity)]
    fn lane_layout(
        &self,
        axis: usize,
        what: &str,
    ) -> (
        usize,
        usize,
        usize,
        Box<dyn Fn(usize) -> usize + Send + Sync>,
    ) {
        match (self.shape(), axis) {
            ([n], 0) => (1, *n, 1, Box::new(|_| 0)),
            ([r, c], 1) => {
                let c = *c;
                (*r, c, 1, Box::new(move |lane| lane * c))
            }
            ([r, c], 0) => {
                let c = *c;
                (c, *r, c, Box::new(move |lane| lane))
            }
            (s, a) => panic!("{what}: invalid axis {a} for shape {s:?}"),
        }
    }

    /// Exact Gaussian-CDF GELU: `x * Phi(x)`.
    pub fn gelu(&self) -> Tensor<E> {
        let inv_sqrt2 = E::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let half = E::from_f64(0.5);
        let data: Vec<E> = self
            .data()
            .iter()
            .map(|&x| half * x * (E::ONE + (x * inv_sqrt2).erf()))
            .collect();
        let x = self.clone();
        Tensor::op(self.shape().to_vec(), data, vec![self.clone()], move |gy| {
            let inv_sqrt_2pi = E::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
            let d: Vec<E> = gy
                .iter()
                .zip(x.data())
                .map(|(&g, &x)| {
                    let phi_cdf = half * (E::ONE + (x * inv_sqrt2).erf());
                    let pdf = inv_sqrt_2pi * (-half * x * x).exp();
                    g * (phi_cdf + x * pdf)
                })
                .collect();
            vec![Some(d)]
        })
    }

    /// Per-token layer normalization over the last dimension, then affine.
    pub fn layer_norm(&self, gain: &Tensor<E>, bias: &Tensor<E>, eps: f64) -> Tensor<E> {
        let d = *self.shape().last().expect("layer_norm: empty shape");
        assert_eq!(gain.shape(), [d], "layer_norm: gain must have shape [{d}]");
        assert_eq!(bias.shape(), [d], "layer_norm: bias must have shape [{d}]");
        let rows = self.len() / d;
        let epsv = E::from_f64(eps);
        let inv_d = E::from_f64(1.0 / d as f64);

        let src = self.data();
        let mut xhat = vec![E::ZERO; self.len()];
        let mut inv_std = vec![E::ZERO; rows];
        let mut out = vec![E::ZERO; self.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mut mean = E::ZERO;
            for &v in row {
                mean += v;
            }
            mean = mean * inv_d;
            let mut var = E::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var = var * inv_d;
            let is = E::ONE / (var + epsv).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = gain.data()[j] * xh + bias.data()[j];
            }
        }

        let g = gain.clone();
        let xhat_b = xhat;
        Tensor::op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            move |gy| {
                let mut dx = vec![E::ZERO; gy.len()];
                let mut dgain = vec![E::ZERO; d];
                let mut dbias = vec![E::ZERO; d];
                for r in 0..rows {
                    let gyr = &gy[r * d..(r + 1) * d];
                    let xhr = &xhat_b[r * d..(r + 1) * d];
                    let mut m1 = E::ZERO;
                    let mut m2 = E::ZERO;
                    for j in 0..d {
                        dgain[j] += gyr[j] * xhr[j];
                        dbias[j] += gyr[j];
                        let h = gyr[j] * g.data()[j];
                        m1 += h;
                        m2 += h * xhr[j];
                    }
                    m1 = m1 * inv_d;
                    m2 = m2 * inv_d;
                    for j in 0..d {
                        let h = gyr[j] * g.data()[j];
                        dx[r * d + j] = inv_std[r] * (h - m1 - xhr[j] * m2);
                    }
                }
                vec![Some(dx), Some(dgain), Some(dbias)]
            },
        )
    }

    /// Per-row cosine distance `1 - <a,b>/(|a||b|)` between two `[n, d]`
    /// tensors; the norm product is clamped below by `eps` so zero rows never
    /// divide by zero. Range `[0, 2]`.
    pub fn cosine_distance(a: &Tensor<E>, b: &Tensor<E>, eps: f64) -> Tensor<E> {
        let (n, d) = a.dims2("cosine_distance lhs");
        assert_eq!(a.shape(), b.shape(), "cosine_distance: shape mismatch");
        let epsv = E::from_f64(eps);

        // denom = sqrt(|a|^2 |b|^2): the single square root makes identical
        // rows come out at distance 0.0 exactly, which the mining tie rule
        // relies on
        let mut out = vec![E::ZERO; n];
        let mut dots = vec![E::ZERO; n];
        let mut na2s = vec![E::ZERO; n];
        let mut nb2s = vec![E::ZERO; n];
        for r in 0..n {
            let ar = &a.data()[r * d..(r + 1) * d];
            let br = &b.data()[r * d..(r + 1) * d];
            let mut dot = E::ZERO;
            let mut na2 = E::ZERO;
            let mut nb2 = E::ZERO;
            for j in 0..d {
                dot += ar[j] * br[j];
                na2 += ar[j] * ar[j];
                nb2 += br[j] * br[j];
            }
            let denom = (na2 * nb2).sqrt().maximum(epsv);
            out[r] = E::ONE - dot / denom;
            dots[r] = dot;
            na2s[r] = na2;
            nb2s[r] = nb2;
        }

        let (ac, bc) = (a.clone(), b.clone());
        Tensor::op(vec![n], out, vec![a.clone(), b.clone()], move |gy| {
            let eps2 = epsv * epsv;
            let mut da = vec![E::ZERO; n * d];
            let mut db = vec![E::ZERO; n * d];
            for r in 0..n {
                let g = gy[r];
                let ar = &ac.data()[r * d..(r + 1) * d];
                let br = &bc.data()[r * d..(r + 1) * d];
                let denom = (na2s[r] * nb2s[r]).sqrt().maximum(epsv);
                let s = dots[r] / denom;
                let na2 = na2s[r].maximum(eps2);
                let nb2 = nb2s[r].maximum(eps2);
                for j in 0..d {
                    // d(1 - s)/da = -(b/denom - s*a/|a|^2)
                    da[r * d + j] = g * (s * ar[j] / na2 - br[j] / denom);
                    db[r * d + j] = g * (s * br[j] / nb2 - ar[j] / denom);
                }
            }
            vec![Some(da), Some(db)]
        })
    }

    /// Forward identity; backward passes gradient only where `keep` is true.
    pub fn detach_mask(&self, keep: &[bool]) -> Tensor<E> {
        assert_eq!(
            keep.len(),
            self.len(),
            "detach_mask: mask length must match tensor length"
        );
        let mask = keep.to_vec();
        Tensor::op(
            self.shape().to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            move |gy| {
                let d = gy
                    .iter()
                    .zip(&mask)
                    .map(|(&g, &k)| if k { g } else { E::ZERO })
                    .collect();
                vec![Some(d)]
            },
        )
    }

    // ── reductions ──────────────────────────────────────────────────

    pub fn sum(&self) -> Tensor<E> {
        let mut s = E::ZERO;
        for &v in self.data() {
            s += v;
        }
        let n = self.len();
        Tensor::op(vec![1], vec![s], vec![self.clone()], move |gy| {
            vec![Some(vec![gy[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor<E> {
        let n = self.len();
        assert!(n > 0, "mean: empty tensor");
        self.sum().scale(1.0 / n as f64)
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse-mode differentiation from a scalar loss. Returns gradients for
    /// every tracked leaf reachable from the loss. Deterministic: identical
    /// graphs produce bit-identical gradients.
    pub fn backward(&self) -> Gradients<E> {
        assert_eq!(self.len(), 1, "backward requires a scalar loss");
        if !self.is_tracked() {
            return Gradients {
                by_id: HashMap::new(),
            };
        }

        // Post-order DFS; reversed it is a topological order with every
        // consumer before its inputs.
        let mut order: Vec<Tensor<E>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        enum Frame<E: Scalar> {
            Enter(Tensor<E>),
            Exit(Tensor<E>),
        }
        let mut stack = vec![Frame::Enter(self.clone())];
        while let Some(frame) = stack.pop() {
            match frame {
                Frame::Enter(t) => {
                    if !visited.insert(t.id()) {
                        continue;
                    }
                    let parents = t.inner.node.as_ref().map(|n| n.parents.clone());
                    stack.push(Frame::Exit(t));
                    if let Some(parents) = parents {
                        for p in parents {
                            if p.is_tracked() && !visited.contains(&p.id()) {
                                stack.push(Frame::Enter(p));
                            }
                        }
                    }
                }
                Frame::Exit(t) => order.push(t),
            }
        }

        let mut grads: HashMap<u64, Vec<E>> = HashMap::new();
        grads.insert(self.id(), vec![E::ONE]);
        for t in order.iter().rev() {
            let node = t.inner.node.as_ref().expect("order holds tracked tensors");
            if node.parents.is_empty() {
                continue; // leaf: its accumulated gradient is the result
            }
            let Some(gy) = grads.remove(&t.id()) else {
                continue; // not on a path to the loss
            };
            let contributions = (node.back)(&gy);
            debug_assert_eq!(contributions.len(), node.parents.len());
            for (parent, contrib) in node.parents.iter().zip(contributions) {
                if !parent.is_tracked() {
                    continue;
                }
                if let Some(c) = contrib {
                    match grads.entry(parent.id()) {
                        std::collections::hash_map::Entry::Occupied(mut e) => {
                            for (acc, v) in e.get_mut().iter_mut().zip(&c) {
                                *acc += *v;
                            }
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(c);
                        }
                    }
                }
            }
        }
        Gradients { by_id: grads }
    }
}

/// Gradient assignment produced by [`Tensor::backward`], keyed by tensor id.
pub struct Gradients<E: Scalar> {
    by_id: HashMap<u64, Vec<E>>,
}

impl<E: Scalar> Gradients<E> {
    pub fn get(&self, t: &Tensor<E>) -> Option<&[E]> {
        self.by_id.get(&t.id()).map(Vec::as_slice)
    }

    pub fn take(&mut self, t: &Tensor<E>) -> Option<Vec<E>> {
        self.by_id.remove(&t.id())
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

fn zip_map<E: Scalar>(a: &[E], b: &[E], f: impl Fn(E, E) -> E) -> Vec<E> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

// ── raw matmul kernels (row-major) ──────────────────────────────────

/// `a [m,k] · b [k,n]`.
fn mm_nn<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    count_macs((m * k * n) as u64);
    let mut c = vec![E::ZERO; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `a [m,n] · b^T` where `b` is `[k,n]`; result `[m,k]`.
fn mm_nt<E: Scalar>(a: &[E], b: &[E], m: usize, n: usize, k: usize) -> Vec<E> {
    count_macs((m * k * n) as u64);
    let mut c = vec![E::ZERO; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = E::ZERO;
            for (&av, &bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            c[i * k + p] = s;
        }
    }
    c
}

/// `a^T · b` where `a` is `[m,k]` and `b` is `[m,n]`; result `[k,n]`.
fn mm_tn<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    count_macs((m * k * n) as u64);
    let mut c = vec![E::ZERO; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}
