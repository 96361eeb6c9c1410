//! Scan operators: convolution with symmetric kernels, activation, pooling,
//! 1×1 cross-channel mixing, min/max filtering, translation padding and the
//! stride/pool divisibility rule.
//!
//! Convolution is valid-mode correlation (no kernel flip, no implicit
//! padding). Whenever a stride or a pooling window does not evenly cover its
//! input the operation fails with [`Error::Divisibility`] unless the caller
//! opts in with `allow_nondivisible`, in which case the trailing remainder is
//! dropped.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::symmetry::{orbit_table, OrbitTable, SymmetryGroup};
use crate::tensor::Tensor2D;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    #[default]
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Self::Relu, Self::Tanh, Self::Sigmoid, Self::Identity];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Tanh => x.tanh(),
            Self::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Self::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - y * y,
            Self::Sigmoid => y * (1.0 - y),
            Self::Identity => 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
            Self::Identity => "identity",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let l = s.trim().to_ascii_lowercase();
        Self::ALL.into_iter().find(|a| a.tag() == l).ok_or_else(|| Error::Config(format!("unknown activation `{s}`")))
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

pub fn apply_activation(t: &Tensor2D, kind: Activation) -> Tensor2D {
    if kind == Activation::Identity {
        return t.clone();
    }
    t.map(|v| kind.apply(v))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    #[default]
    Max,
    Average,
    None,
}

impl FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "max" => Ok(Self::Max),
            "average" | "avg" | "mean" => Ok(Self::Average),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown pool kind `{other}`"))),
        }
    }
}

/// Pooling window; rows and columns may differ. Config files may give a
/// single integer for a square window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "PoolSizeRepr")]
pub struct PoolSize {
    pub rows: usize,
    pub cols: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PoolSizeRepr {
    Square(usize),
    Rect { rows: usize, cols: usize },
}

impl From<PoolSizeRepr> for PoolSize {
    fn from(r: PoolSizeRepr) -> Self {
        match r {
            PoolSizeRepr::Square(n) => PoolSize::square(n),
            PoolSizeRepr::Rect { rows, cols } => PoolSize { rows, cols },
        }
    }
}

impl PoolSize {
    pub const ONE: PoolSize = PoolSize { rows: 1, cols: 1 };

    pub fn square(n: usize) -> Self {
        Self { rows: n, cols: n }
    }

    pub fn is_square(self) -> bool {
        self.rows == self.cols
    }

    pub fn is_identity(self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    pub stride: usize,
    pub pool: PoolSize,
    pub pool_kind: PoolKind,
    pub activation: Activation,
    /// Drop trailing remainders instead of failing on non-divisible sizes.
    pub allow_nondivisible: bool,
    /// Zero-pad intermediate maps symmetrically so every stride and pooling
    /// window covers them evenly.
    pub remedy_padding: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            pool: PoolSize::ONE,
            pool_kind: PoolKind::None,
            activation: Activation::Tanh,
            allow_nondivisible: false,
            remedy_padding: false,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.pool.rows == 0 || self.pool.cols == 0 {
            return Err(Error::Config("stride and pool sizes must be at least 1".into()));
        }
        Ok(())
    }

    /// Effective pooling; `PoolKind::None` or a 1×1 window is a no-op.
    pub fn pools(&self) -> bool {
        self.pool_kind != PoolKind::None && !self.pool.is_identity()
    }
}

/// A convolution kernel with an optional symmetry constraint. When a group is
/// set the weights are exactly invariant under every element of it.
#[derive(Clone, Debug, PartialEq)]
pub struct TiKernel {
    weights: Tensor2D,
    group: Option<SymmetryGroup>,
    table: Option<Arc<OrbitTable>>,
}

impl TiKernel {
    /// Wraps `weights` that must already satisfy the group exactly.
    pub fn new(weights: Tensor2D, group: Option<SymmetryGroup>) -> Result<Self> {
        let table = match group {
            Some(g) => {
                let table = orbit_table(g, weights.height(), weights.width())?;
                if !table.is_shared(&weights, 0.0) {
                    return Err(Error::Config(format!("kernel weights are not {g}-invariant")));
                }
                Some(table)
            }
            None => None,
        };
        Ok(Self { weights, group, table })
    }

    /// Projects arbitrary weights onto the group (orbit mean) and wraps them.
    pub fn symmetrized(weights: &Tensor2D, group: SymmetryGroup) -> Result<Self> {
        let table = orbit_table(group, weights.height(), weights.width())?;
        let w = table.project(weights, crate::symmetry::SymmetrizeMode::Average)?;
        Ok(Self { weights: w, group: Some(group), table: Some(table) })
    }

    pub fn unconstrained(weights: Tensor2D) -> Self {
        Self { weights, group: None, table: None }
    }

    pub fn weights(&self) -> &Tensor2D {
        &self.weights
    }

    pub fn group(&self) -> Option<SymmetryGroup> {
        self.group
    }

    pub fn table(&self) -> Option<&Arc<OrbitTable>> {
        self.table.as_ref()
    }

    pub fn size(&self) -> usize {
        self.weights.height()
    }

    /// Replaces the weights, re-checking the constraint exactly.
    pub fn set_weights(&mut self, weights: Tensor2D) -> Result<()> {
        if weights.shape() != self.weights.shape() {
            return shape_err("kernel weight shape changed");
        }
        if let Some(t) = &self.table {
            if !t.is_shared(&weights, 0.0) {
                return Err(Error::Config("update broke kernel symmetry".into()));
            }
        }
        self.weights = weights;
        Ok(())
    }

    /// Drops the constraint, keeping the current weights.
    pub fn into_unconstrained(self) -> Self {
        Self::unconstrained(self.weights)
    }

    fn grouped(&self) -> bool {
        matches!(self.group, Some(SymmetryGroup::Dih4 | SymmetryGroup::C4))
    }
}

/// Plain elementwise inner product of the window at `(r0, c0)` with `kernel`.
#[inline]
fn naive_at(input: &Tensor2D, r0: usize, c0: usize, kernel: &Tensor2D) -> f64 {
    let w = input.width();
    let src = input.values();
    let (kh, kw) = kernel.shape();
    let kv = kernel.values();
    let mut acc = 0.0;
    for u in 0..kh {
        let row = &src[(r0 + u) * w + c0..(r0 + u) * w + c0 + kw];
        let krow = &kv[u * kw..(u + 1) * kw];
        for (a, b) in row.iter().zip(krow) {
            acc += a * b;
        }
    }
    acc
}

/// Grouped inner product: sum the window over each orbit (row-major member
/// order), then one multiply by the orbit's shared weight.
#[inline]
fn grouped_at(input: &Tensor2D, r0: usize, c0: usize, kernel: &Tensor2D, table: &OrbitTable) -> f64 {
    let w = input.width();
    let k = kernel.width();
    let src = input.values();
    let kv = kernel.values();
    let base = r0 * w + c0;
    let mut acc = 0.0;
    for cls in table.classes() {
        let mut s = 0.0;
        for &i in cls {
            s += src[base + (i / k) * w + i % k];
        }
        acc += s * kv[cls[0]];
    }
    acc
}

#[inline]
fn inner_at(input: &Tensor2D, r0: usize, c0: usize, kernel: &TiKernel) -> f64 {
    match (&kernel.table, kernel.grouped()) {
        (Some(t), true) => grouped_at(input, r0, c0, &kernel.weights, t),
        _ => naive_at(input, r0, c0, &kernel.weights),
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Sum of products accumulated in doubled working precision (Ogita, Rump and
/// Oishi's Dot2): the result is as accurate as if computed with a 106-bit
/// significand and then rounded, so cancellation costs nothing until the
/// condition number reaches ~1e16.
#[derive(Default)]
struct Dot2 {
    p: f64,
    s: f64,
}

impl Dot2 {
    #[inline]
    fn add(&mut self, a: f64, b: f64) {
        let (h, r) = two_prod(a, b);
        let (p, q) = two_sum(self.p, h);
        self.p = p;
        self.s += q + r;
    }

    /// Adds `w · (hi + lo)` for a double-double `hi + lo`.
    #[inline]
    fn add_dd(&mut self, w: f64, hi: f64, lo: f64) {
        self.add(w, hi);
        self.s += w * lo;
    }

    fn value(&self) -> f64 {
        self.p + self.s
    }
}

/// Inner product of a kernel-sized region with the kernel. Dih4 and C4
/// kernels use one multiply per orbit, on the orbit sum of the region; other
/// kernels use the plain sum. Both run in doubled precision, so this and
/// [`naive_inner_product`] agree to ~1e-16 relative even under heavy
/// cancellation. The convolution loops use the plain-precision versions.
pub fn ti_inner_product(region: &Tensor2D, kernel: &TiKernel) -> Result<f64> {
    if region.shape() != kernel.weights.shape() {
        return shape_err(format!("region {:?} vs kernel {:?}", region.shape(), kernel.weights.shape()));
    }
    let (Some(table), true) = (&kernel.table, kernel.grouped()) else {
        return naive_inner_product(region, &kernel.weights);
    };
    let x = region.values();
    let w = kernel.weights.values();
    let mut acc = Dot2::default();
    for cls in table.classes() {
        let (mut hi, mut lo) = (0.0, 0.0);
        for &i in cls {
            let (s, e) = two_sum(hi, x[i]);
            hi = s;
            lo += e;
        }
        acc.add_dd(w[cls[0]], hi, lo);
    }
    Ok(acc.value())
}

/// Plain elementwise inner product, in doubled precision.
pub fn naive_inner_product(region: &Tensor2D, kernel: &Tensor2D) -> Result<f64> {
    region.expect_same_shape(kernel)?;
    let mut acc = Dot2::default();
    for (a, b) in region.values().iter().zip(kernel.values()) {
        acc.add(*a, *b);
    }
    Ok(acc.value())
}

fn conv_output_len(n: usize, k: usize, stride: usize, allow_nondivisible: bool, axis: &str) -> Result<usize> {
    if n < k {
        return shape_err(format!("{axis} input size {n} smaller than kernel {k}"));
    }
    if !(n - k).is_multiple_of(stride) && !allow_nondivisible {
        return Err(Error::Divisibility(format!(
            "stride {stride} does not evenly divide {axis} extent {n} - {k} = {}",
            n - k
        )));
    }
    Ok((n - k) / stride + 1)
}

/// Valid-mode strided correlation.
pub fn conv2d(input: &Tensor2D, kernel: &TiKernel, stride: usize) -> Result<Tensor2D> {
    conv2d_with(input, kernel, stride, false)
}

pub fn conv2d_with(input: &Tensor2D, kernel: &TiKernel, stride: usize, allow_nondivisible: bool) -> Result<Tensor2D> {
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let (kh, kw) = kernel.weights.shape();
    let oh = conv_output_len(input.height(), kh, stride, allow_nondivisible, "vertical")?;
    let ow = conv_output_len(input.width(), kw, stride, allow_nondivisible, "horizontal")?;
    Ok(Tensor2D::from_fn(oh, ow, |r, c| inner_at(input, r * stride, c * stride, kernel)))
}

/// Gradients of a valid strided correlation given the output gradient:
/// returns `(d input, d kernel)`.
pub fn conv2d_backward(input: &Tensor2D, kernel: &Tensor2D, stride: usize, grad_out: &Tensor2D) -> (Tensor2D, Tensor2D) {
    let (kh, kw) = kernel.shape();
    let (oh, ow) = grad_out.shape();
    let w = input.width();
    let src = input.values();
    let kv = kernel.values();
    let mut gin = Tensor2D::zeros(input.height(), input.width());
    let mut gk = Tensor2D::zeros(kh, kw);
    {
        let gi = gin.values_mut();
        for r in 0..oh {
            for c in 0..ow {
                let g = grad_out.get(r, c);
                if g == 0.0 {
                    continue;
                }
                let base = r * stride * w + c * stride;
                for u in 0..kh {
                    for v in 0..kw {
                        gi[base + u * w + v] += g * kv[u * kw + v];
                    }
                }
            }
        }
    }
    {
        let gkv = gk.values_mut();
        for u in 0..kh {
            for v in 0..kw {
                let mut acc = 0.0;
                for r in 0..oh {
                    let row = (r * stride + u) * w + v;
                    for c in 0..ow {
                        acc += grad_out.get(r, c) * src[row + c * stride];
                    }
                }
                gkv[u * kw + v] = acc;
            }
        }
    }
    (gin, gk)
}

/// Location of each pooled cell's contribution, kept for backpropagation.
#[derive(Clone, Debug)]
pub enum PoolTrace {
    Identity,
    /// Flat input index of the selected maximum for each output cell.
    Max { input_shape: (usize, usize), argmax: Vec<usize> },
    Average { input_shape: (usize, usize), size: PoolSize, output_shape: (usize, usize) },
}

fn pool_output_len(n: usize, p: usize, allow_nondivisible: bool, axis: &str) -> Result<usize> {
    if n < p {
        return shape_err(format!("{axis} size {n} smaller than pool {p}"));
    }
    if !n.is_multiple_of(p) && !allow_nondivisible {
        return Err(Error::Divisibility(format!("pool {p} does not evenly divide {axis} size {n}")));
    }
    Ok(n / p)
}

/// Non-overlapping square pooling; the size must evenly divide both dimensions.
pub fn pool(t: &Tensor2D, size: usize, kind: PoolKind) -> Result<Tensor2D> {
    pool_with(t, PoolSize::square(size), kind, false).map(|(p, _)| p)
}

pub fn pool_with(t: &Tensor2D, size: PoolSize, kind: PoolKind, allow_nondivisible: bool) -> Result<(Tensor2D, PoolTrace)> {
    if size.rows == 0 || size.cols == 0 {
        return Err(Error::Config("pool size must be at least 1".into()));
    }
    if kind == PoolKind::None || size.is_identity() {
        return Ok((t.clone(), PoolTrace::Identity));
    }
    let oh = pool_output_len(t.height(), size.rows, allow_nondivisible, "vertical")?;
    let ow = pool_output_len(t.width(), size.cols, allow_nondivisible, "horizontal")?;
    let w = t.width();
    let v = t.values();
    match kind {
        PoolKind::Max => {
            let mut argmax = Vec::with_capacity(oh * ow);
            let out = Tensor2D::from_fn(oh, ow, |r, c| {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for u in 0..size.rows {
                    for x in 0..size.cols {
                        let i = (r * size.rows + u) * w + c * size.cols + x;
                        if v[i] > best {
                            best = v[i];
                            at = i;
                        }
                    }
                }
                argmax.push(at);
                best
            });
            Ok((out, PoolTrace::Max { input_shape: t.shape(), argmax }))
        }
        PoolKind::Average => {
            let n = (size.rows * size.cols) as f64;
            let out = Tensor2D::from_fn(oh, ow, |r, c| {
                let mut s = 0.0;
                for u in 0..size.rows {
                    for x in 0..size.cols {
                        s += v[(r * size.rows + u) * w + c * size.cols + x];
                    }
                }
                s / n
            });
            Ok((out, PoolTrace::Average { input_shape: t.shape(), size, output_shape: (oh, ow) }))
        }
        PoolKind::None => unreachable!(),
    }
}

pub fn pool_backward(trace: &PoolTrace, grad_out: &Tensor2D) -> Tensor2D {
    match trace {
        PoolTrace::Identity => grad_out.clone(),
        PoolTrace::Max { input_shape, argmax } => {
            let mut g = Tensor2D::zeros(input_shape.0, input_shape.1);
            let gv = g.values_mut();
            for (o, &i) in argmax.iter().enumerate() {
                gv[i] += grad_out.values()[o];
            }
            g
        }
        PoolTrace::Average { input_shape, size, output_shape } => {
            let mut g = Tensor2D::zeros(input_shape.0, input_shape.1);
            let n = (size.rows * size.cols) as f64;
            for r in 0..output_shape.0 {
                for c in 0..output_shape.1 {
                    let share = grad_out.get(r, c) / n;
                    for u in 0..size.rows {
                        for x in 0..size.cols {
                            g.add_at(r * size.rows + u, c * size.cols + x, share);
                        }
                    }
                }
            }
            g
        }
    }
}

/// 1×1 convolution across channels: `out[q] = Σ_i weights[q][i] · channels[i]`.
pub fn cross_channel_1x1(channels: &[Tensor2D], weights: &[Vec<f64>]) -> Result<Vec<Tensor2D>> {
    let Some(first) = channels.first() else {
        return shape_err("cross-channel mixing needs at least one channel");
    };
    for ch in channels {
        first.expect_same_shape(ch)?;
    }
    weights
        .iter()
        .map(|row| {
            if row.len() != channels.len() {
                return shape_err(format!("1x1 weight row has {} entries for {} channels", row.len(), channels.len()));
            }
            let mut out = Tensor2D::zeros(first.height(), first.width());
            for (w, ch) in row.iter().zip(channels) {
                out.axpy(*w, ch);
            }
            Ok(out)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinMax {
    Min,
    Max,
}

/// Sliding-window (valid, stride 1) min or max with a flat `k × k` structuring element.
pub fn minmax_filter(t: &Tensor2D, k: usize, kind: MinMax) -> Result<Tensor2D> {
    if k == 0 || k > t.height() || k > t.width() {
        return shape_err(format!("filter size {k} does not fit {:?}", t.shape()));
    }
    let (oh, ow) = (t.height() - k + 1, t.width() - k + 1);
    Ok(Tensor2D::from_fn(oh, ow, |r, c| {
        let mut acc = t.get(r, c);
        for u in 0..k {
            for v in 0..k {
                let x = t.get(r + u, c + v);
                acc = match kind {
                    MinMax::Min => acc.min(x),
                    MinMax::Max => acc.max(x),
                };
            }
        }
        acc
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadDirection {
    Horizontal,
    Vertical,
    Diagonal45,
    Diagonal135,
}

impl FromStr for PadDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "h" | "horizontal" => Ok(Self::Horizontal),
            "v" | "vertical" => Ok(Self::Vertical),
            "d45" => Ok(Self::Diagonal45),
            "d135" => Ok(Self::Diagonal135),
            other => Err(Error::Config(format!("unknown padding direction `{other}`"))),
        }
    }
}

/// Zero padding ahead of a translation-identical pipeline: `max_shift` cells on
/// both ends of the translation axis, or a frame of `max_shift` cells for the
/// diagonal directions.
pub fn pad_for_translation(t: &Tensor2D, direction: PadDirection, max_shift: usize) -> Tensor2D {
    let m = max_shift;
    match direction {
        PadDirection::Horizontal => t.pad(0, 0, m, m),
        PadDirection::Vertical => t.pad(m, m, 0, 0),
        PadDirection::Diagonal45 | PadDirection::Diagonal135 => t.pad(m, m, m, m),
    }
}

/// Smallest symmetric pad `q` with `(n + 2q - window) % step == 0`, if any.
pub fn symmetric_pad_for(n: usize, window: usize, step: usize) -> Option<usize> {
    (0..=step).find(|&q| n + 2 * q >= window && (n + 2 * q - window).is_multiple_of(step))
}

/// Divisibility rule for a stack whose maps (as entering each pooling stage)
/// have the given sizes, with a common stride and pooling size: every size must
/// be divisible by the pool and the shift by the cumulative `(stride × pool)^L`.
pub fn validate_divisibility(layer_sizes: &[usize], stride: usize, pool: usize, shift: usize) -> bool {
    if stride == 0 || pool == 0 {
        return false;
    }
    if layer_sizes.iter().any(|&n| n % pool != 0) {
        return false;
    }
    let factor = (stride * pool).checked_pow(layer_sizes.len().max(1) as u32);
    match factor {
        Some(f) => shift.is_multiple_of(f),
        None => shift == 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symmetry::{symmetrize, SymmetrizeMode};
    use crate::transform::{transform, TransformElement};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn dih4_kernel(k: usize, r: &mut ChaCha8Rng) -> TiKernel {
        TiKernel::symmetrized(&Tensor2D::random_uniform(k, k, -1.0, 1.0, r), SymmetryGroup::Dih4).unwrap()
    }

    /// Straight double loop, no tables.
    fn naive_conv(input: &Tensor2D, k: &Tensor2D, stride: usize) -> Tensor2D {
        let oh = (input.height() - k.height()) / stride + 1;
        let ow = (input.width() - k.width()) / stride + 1;
        Tensor2D::from_fn(oh, ow, |r, c| {
            let mut s = 0.0;
            for u in 0..k.height() {
                for v in 0..k.width() {
                    s += input.get(r * stride + u, c * stride + v) * k.get(u, v);
                }
            }
            s
        })
    }

    #[test]
    fn kernel_constructor_checks_symmetry() {
        let w = Tensor2D::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert!(TiKernel::new(w.clone(), Some(SymmetryGroup::Dih4)).is_err());
        assert!(TiKernel::new(w, None).is_ok());
    }

    #[test]
    fn inner_product_examples() {
        let mut r = rng(1);
        let k = dih4_kernel(3, &mut r);
        let ones = Tensor2D::filled(3, 3, 1.0);
        let ip = ti_inner_product(&ones, &k).unwrap();
        assert!((ip - k.weights().sum()).abs() < 1e-12);
        let self_ip = ti_inner_product(k.weights(), &k).unwrap();
        let sq: f64 = k.weights().values().iter().map(|v| v * v).sum();
        assert!((self_ip - sq).abs() < 1e-12);
        assert!(ti_inner_product(&Tensor2D::zeros(2, 2), &k).is_err());
    }

    #[test]
    fn grouped_matches_naive() {
        let mut r = rng(2);
        for k in [3, 4, 5, 7, 9] {
            for g in [SymmetryGroup::Dih4, SymmetryGroup::C4] {
                for _ in 0..50 {
                    let kern = TiKernel::symmetrized(&Tensor2D::random_uniform(k, k, -1.0, 1.0, &mut r), g).unwrap();
                    let region = Tensor2D::random_uniform(k, k, -1.0, 1.0, &mut r);
                    let a = ti_inner_product(&region, &kern).unwrap();
                    let b = naive_inner_product(&region, kern.weights()).unwrap();
                    assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn conv_ones() {
        let k = TiKernel::new(Tensor2D::filled(3, 3, 1.0), Some(SymmetryGroup::Dih4)).unwrap();
        let out = conv2d(&Tensor2D::filled(4, 4, 1.0), &k, 1).unwrap();
        assert_eq!(out, Tensor2D::filled(2, 2, 9.0));
    }

    #[test]
    fn conv_matches_naive_and_rejects_nondivisible_stride() {
        let mut r = rng(3);
        let v = Tensor2D::random_uniform(9, 9, -1.0, 1.0, &mut r);
        let k = dih4_kernel(3, &mut r);
        let out = conv2d(&v, &k, 2).unwrap();
        assert!(out.max_abs_diff(&naive_conv(&v, k.weights(), 2)) < 1e-12);
        let v8 = Tensor2D::random_uniform(8, 8, -1.0, 1.0, &mut r);
        assert!(matches!(conv2d(&v8, &k, 2), Err(Error::Divisibility(_))));
        assert_eq!(conv2d_with(&v8, &k, 2, true).unwrap().shape(), (3, 3));
    }

    #[test]
    fn ti_kernel_commutes_generic_does_not() {
        let mut r = rng(4);
        let v = Tensor2D::random_uniform(8, 8, -1.0, 1.0, &mut r);
        let k = dih4_kernel(3, &mut r);
        for e in TransformElement::DIH4 {
            let lhs = conv2d(&transform(&v, e).unwrap(), &k, 1).unwrap();
            let rhs = transform(&conv2d(&v, &k, 1).unwrap(), e).unwrap();
            assert!(lhs.max_abs_diff(&rhs) <= 1e-12, "{e}");
        }
        let kp = TiKernel::unconstrained(Tensor2D::random_uniform(3, 3, -1.0, 1.0, &mut r));
        let lhs = conv2d(&transform(&v, TransformElement::Rot90).unwrap(), &kp, 1).unwrap();
        let rhs = transform(&conv2d(&v, &kp, 1).unwrap(), TransformElement::Rot90).unwrap();
        assert!(lhs.max_abs_diff(&rhs) > 1e-3);
    }

    #[test]
    fn activation_examples() {
        let t = Tensor2D::from_rows(&[[-1.0, 2.0], [0.0, -3.0]]);
        assert_eq!(apply_activation(&t, Activation::Relu), Tensor2D::from_rows(&[[0.0, 2.0], [0.0, 0.0]]));
        assert_eq!(apply_activation(&t, Activation::Identity), t);
        let mut r = rng(5);
        let v = Tensor2D::random_uniform(5, 5, -2.0, 2.0, &mut r);
        for a in Activation::ALL {
            for e in TransformElement::DIH4 {
                let lhs = apply_activation(&transform(&v, e).unwrap(), a);
                let rhs = transform(&apply_activation(&v, a), e).unwrap();
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn pool_examples() {
        let t = Tensor2D::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(pool(&t, 2, PoolKind::Max).unwrap(), Tensor2D::from_rows(&[[4.0]]));
        assert_eq!(pool(&t, 2, PoolKind::Average).unwrap(), Tensor2D::from_rows(&[[2.5]]));
        assert!(matches!(pool(&Tensor2D::zeros(3, 3), 2, PoolKind::Max), Err(Error::Divisibility(_))));
        let (p, _) = pool_with(&Tensor2D::zeros(5, 4), PoolSize::square(2), PoolKind::Max, true).unwrap();
        assert_eq!(p.shape(), (2, 2));
    }

    #[test]
    fn pool_commutes_with_rot180() {
        let mut r = rng(6);
        let v = Tensor2D::random_uniform(6, 6, -1.0, 1.0, &mut r);
        for kind in [PoolKind::Max, PoolKind::Average] {
            for size in [2, 3] {
                let lhs = pool(&transform(&v, TransformElement::Rot180).unwrap(), size, kind).unwrap();
                let rhs = transform(&pool(&v, size, kind).unwrap(), TransformElement::Rot180).unwrap();
                assert!(lhs.max_abs_diff(&rhs) <= 1e-15);
            }
        }
    }

    #[test]
    fn pool_backward_routes_gradient() {
        let t = Tensor2D::from_rows(&[[1.0, 5.0], [3.0, 4.0]]);
        let (_, tr) = pool_with(&t, PoolSize::square(2), PoolKind::Max, false).unwrap();
        let g = pool_backward(&tr, &Tensor2D::from_rows(&[[2.0]]));
        assert_eq!(g, Tensor2D::from_rows(&[[0.0, 2.0], [0.0, 0.0]]));
        let (_, tr) = pool_with(&t, PoolSize::square(2), PoolKind::Average, false).unwrap();
        let g = pool_backward(&tr, &Tensor2D::from_rows(&[[2.0]]));
        assert_eq!(g, Tensor2D::filled(2, 2, 0.5));
    }

    #[test]
    fn cross_channel_examples() {
        let mut r = rng(7);
        let a = Tensor2D::random_uniform(4, 4, -1.0, 1.0, &mut r);
        assert_eq!(cross_channel_1x1(std::slice::from_ref(&a), &[vec![1.0]]).unwrap()[0], a);
        let mixed = cross_channel_1x1(&[a.clone(), a.clone()], &[vec![0.5, 0.5]]).unwrap();
        assert!(mixed[0].max_abs_diff(&a) <= 1e-15);
        let b = Tensor2D::random_uniform(4, 4, -1.0, 1.0, &mut r);
        let w = vec![vec![0.3, -1.2], vec![2.0, 0.7]];
        let rot = |t: &Tensor2D| transform(t, TransformElement::Rot90).unwrap();
        let lhs = cross_channel_1x1(&[rot(&a), rot(&b)], &w).unwrap();
        let rhs: Vec<Tensor2D> = cross_channel_1x1(&[a, b], &w).unwrap().iter().map(rot).collect();
        assert_eq!(lhs, rhs);
        assert!(cross_channel_1x1(&[Tensor2D::zeros(2, 2), Tensor2D::zeros(3, 3)], &[vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn minmax_examples() {
        let c = Tensor2D::filled(5, 5, 2.5);
        assert_eq!(minmax_filter(&c, 3, MinMax::Max).unwrap(), Tensor2D::filled(3, 3, 2.5));
        let g = Tensor2D::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]);
        assert_eq!(minmax_filter(&g, 3, MinMax::Max).unwrap().get(0, 0), 9.0);
        let mut r = rng(8);
        let v = Tensor2D::random_uniform(7, 7, -1.0, 1.0, &mut r);
        for kind in [MinMax::Min, MinMax::Max] {
            for e in TransformElement::DIH4 {
                let lhs = minmax_filter(&transform(&v, e).unwrap(), 3, kind).unwrap();
                let rhs = transform(&minmax_filter(&v, 3, kind).unwrap(), e).unwrap();
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn translation_padding() {
        let t = Tensor2D::filled(4, 4, 1.0);
        assert_eq!(pad_for_translation(&t, PadDirection::Horizontal, 0), t);
        let h = pad_for_translation(&t, PadDirection::Horizontal, 2);
        assert_eq!(h.shape(), (4, 8));
        assert_eq!(h.crop(0, 2, 4, 4).unwrap(), t);
        assert_eq!(pad_for_translation(&t, PadDirection::Vertical, 1).shape(), (6, 4));
        let d = pad_for_translation(&t, PadDirection::Diagonal45, 1);
        assert_eq!(d.shape(), (6, 6));
        assert_eq!(d.sum(), 16.0);
    }

    #[test]
    fn divisibility_rule() {
        assert!(validate_divisibility(&[8], 2, 2, 4));
        assert!(!validate_divisibility(&[8], 2, 2, 3));
        for shift in 0..10 {
            assert!(validate_divisibility(&[7, 5], 1, 1, shift));
        }
        assert!(!validate_divisibility(&[7], 1, 2, 0));
        assert!(validate_divisibility(&[8, 4], 1, 2, 4));
        assert!(!validate_divisibility(&[8, 4], 1, 2, 2));
    }

    #[test]
    fn symmetric_padding_amounts() {
        assert_eq!(symmetric_pad_for(8, 3, 3), Some(2));
        assert_eq!(symmetric_pad_for(9, 3, 3), Some(0));
        assert_eq!(symmetric_pad_for(7, 2, 2), None);
        assert_eq!(symmetric_pad_for(8, 3, 2), None);
        assert_eq!(symmetric_pad_for(9, 3, 2), Some(0));
    }

    #[test]
    fn conv_backward_matches_finite_difference() {
        let mut r = rng(9);
        let v = Tensor2D::random_uniform(7, 7, -1.0, 1.0, &mut r);
        let k = Tensor2D::random_uniform(3, 3, -1.0, 1.0, &mut r);
        let g = Tensor2D::random_uniform(3, 3, -1.0, 1.0, &mut r);
        let f = |v: &Tensor2D, k: &Tensor2D| naive_conv(v, k, 2).dot(&g).unwrap();
        let (gi, gk) = conv2d_backward(&v, &k, 2, &g);
        let h = 1e-6;
        for i in 0..9 {
            let mut kp = k.clone();
            kp.values_mut()[i] += h;
            let mut km = k.clone();
            km.values_mut()[i] -= h;
            let fd = (f(&v, &kp) - f(&v, &km)) / (2.0 * h);
            assert!((fd - gk.values()[i]).abs() < 1e-8);
        }
        for i in 0..49 {
            let mut vp = v.clone();
            vp.values_mut()[i] += h;
            let mut vm = v.clone();
            vm.values_mut()[i] -= h;
            let fd = (f(&vp, &k) - f(&vm, &k)) / (2.0 * h);
            assert!((fd - gi.values()[i]).abs() < 1e-8);
        }
        let _ = symmetrize(&k, SymmetryGroup::Dih4, SymmetrizeMode::Average);
    }
}
