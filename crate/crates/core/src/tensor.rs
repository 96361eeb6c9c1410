//! Dense row-major 2D tensors of `f64` and their plain-text grid format.

use std::fmt;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// A dense `height × width` grid stored in row-major order.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2D {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Tensor2D {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return shape_err(format!("tensor dimensions must be positive, got {height}x{width}"));
        }
        if values.len() != height * width {
            return shape_err(format!(
                "expected {} values for a {height}x{width} tensor, got {}",
                height * width,
                values.len()
            ));
        }
        Ok(Self { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "tensor dimensions must be positive");
        Self { height, width, values: vec![value; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "tensor dimensions must be positive");
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self { height, width, values }
    }

    /// Builds a tensor from nested rows. Panics on ragged input; intended for literals.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let height = rows.len();
        let width = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(height * width);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), width, "ragged rows");
            values.extend_from_slice(row);
        }
        Self::new(height, width, values).expect("valid literal tensor")
    }

    pub fn random_uniform<R: Rng + ?Sized>(height: usize, width: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(height, width, |_, _| rng.gen_range(lo..hi))
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.height && c < self.width);
        self.values[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.height && c < self.width);
        self.values[r * self.width + c] = v;
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.width + c] += v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.width..(r + 1) * self.width]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { height: self.height, width: self.width, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { height: self.height, width: self.width, values })
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return shape_err(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            ));
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Self) {
        assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max absolute elementwise difference; infinite when shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Zero-pads by the given amounts on each side.
    pub fn pad(&self, top: usize, bottom: usize, left: usize, right: usize) -> Self {
        let h = self.height + top + bottom;
        let w = self.width + left + right;
        let mut out = Self::zeros(h, w);
        for r in 0..self.height {
            let dst = (r + top) * w + left;
            out.values[dst..dst + self.width].copy_from_slice(self.row(r));
        }
        out
    }

    /// Extracts the `height × width` block whose top-left corner is `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || r0 + height > self.height || c0 + width > self.width {
            return shape_err(format!(
                "crop {height}x{width} at ({r0},{c0}) exceeds {}x{}",
                self.height, self.width
            ));
        }
        Ok(Self::from_fn(height, width, |r, c| self.get(r0 + r, c0 + c)))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.width, self.height, |r, c| self.get(c, r))
    }

    /// Text grid format: a `H W` header line followed by `H` rows of `W` numbers.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.height, self.width);
        for r in 0..self.height {
            let line: Vec<String> = self.row(r).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty tensor text".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| Error::Format(format!("bad header `{header}`: {e}"))))
            .collect::<Result<_>>()?;
        let [h, w] = dims[..] else {
            return Err(Error::Format(format!("header must be `H W`, got `{header}`")));
        };
        let mut values = Vec::with_capacity(h * w);
        for (i, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Format(format!("row {i}: bad number `{t}`: {e}"))))
                .collect::<Result<_>>()?;
            if row.len() != w {
                return Err(Error::Format(format!("row {i} has {} values, expected {w}", row.len())));
            }
            values.extend(row);
        }
        if values.len() != h * w {
            return Err(Error::Format(format!("expected {h} rows, got {}", values.len() / w.max(1))));
        }
        let t = Self::new(h, w, values)?;
        if !t.all_finite() {
            return Err(Error::Format("tensor text contains non-finite values".into()));
        }
        Ok(t)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in 0..self.height {
            let line: Vec<String> = self.row(r).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }
}

impl fmt::Debug for Tensor2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Tensor2D {}x{} [", self.height, self.width)?;
        for r in 0..self.height {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths() {
        assert!(Tensor2D::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Tensor2D::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let t = Tensor2D::from_rows(&[[1.0, -2.5, 3.0], [0.1, 1e-12, 7.0]]);
        let back = Tensor2D::from_text(&t.to_text()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn text_rejects_ragged_rows() {
        assert!(Tensor2D::from_text("2 2\n1 2\n3\n").is_err());
        assert!(Tensor2D::from_text("2 2\n1 2\n").is_err());
        assert!(Tensor2D::from_text("2 2\n1 2\n3 NaN\n").is_err());
    }

    #[test]
    fn pad_and_crop() {
        let t = Tensor2D::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let p = t.pad(1, 0, 2, 1);
        assert_eq!(p.shape(), (3, 5));
        assert_eq!(p.get(1, 2), 1.0);
        assert_eq!(p.get(2, 3), 4.0);
        assert_eq!(p.crop(1, 2, 2, 2).unwrap(), t);
    }

    #[test]
    fn csv_has_one_line_per_row() {
        let t = Tensor2D::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(t.to_csv(), "1.0,2.0\n3.0,4.0\n");
    }
}
