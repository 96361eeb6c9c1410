//! Single-level separable 2D wavelet decomposition used as a front-end to
//! symmetric networks, with symmetry classification of the four compartments.
//!
//! Conventions:
//! - Analysis filter `f` with start offset `s` produces
//!   `y[n] = Σ_j f[j] · x[ext(2n + s + j)]`, i.e. even-phase downsampling.
//! - Rows are filtered first (horizontal band), then columns (vertical band).
//!   Compartment names read horizontal-then-vertical: `LH` is low-pass along
//!   rows and high-pass along columns.
//! - [`Extension::Periodic`] wraps around and needs an even side.
//!   [`Extension::Symmetric`] mirrors about the edge samples (whole-sample
//!   symmetric) and needs an odd side and odd-length filters; it is the mode
//!   in which odd symmetric filters give exact reflection relations, because
//!   mirroring an odd-length signal maps even sample positions onto even ones.
//!
//! Under Haar with periodic extension, LL is exactly Dih4-equivariant, HH is
//! equivariant up to a sign (negated by m1, m2, rot90, rot270), and LH/HL are
//! equivariant up to sign under `{rot180, m1, m2}` and swap under transposing
//! elements. Under CDF 5/3 with symmetric extension the relations hold with
//! no signs: LL and HH are Dih4-equivariant, LH and HL are Klein-equivariant
//! and swap under transposing elements.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scan::{conv2d, TiKernel};
use crate::symmetry::SymmetryGroup;
use crate::tensor::Tensor2D;
use crate::transform::{transform_any, TransformElement};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterSymmetry {
    Symmetric,
    Antisymmetric,
    Neither,
}

impl FilterSymmetry {
    pub fn detect(coeffs: &[f64]) -> Self {
        let n = coeffs.len();
        let tol = 1e-12 * coeffs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if (0..n).all(|i| (coeffs[i] - coeffs[n - 1 - i]).abs() <= tol) {
            Self::Symmetric
        } else if (0..n).all(|i| (coeffs[i] + coeffs[n - 1 - i]).abs() <= tol) {
            Self::Antisymmetric
        } else {
            Self::Neither
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub coeffs: Vec<f64>,
    #[serde(default)]
    pub start: i64,
}

impl Filter {
    pub fn new(coeffs: Vec<f64>, start: i64) -> Self {
        Self { coeffs, start }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Offset of the centre tap; only meaningful for odd lengths.
    fn centre(&self) -> i64 {
        self.start + (self.coeffs.len() as i64 - 1) / 2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveletFilterPair {
    pub name: String,
    pub scaling: Filter,
    pub wavelet: Filter,
    #[serde(default)]
    pub scaling_tag: Option<FilterSymmetry>,
    #[serde(default)]
    pub wavelet_tag: Option<FilterSymmetry>,
    /// Synthesis (dual) filters `(low, high)` for reconstruction.
    #[serde(default)]
    pub synthesis: Option<(Filter, Filter)>,
}

impl WaveletFilterPair {
    /// Checks non-empty filters and that any declared tag matches the coefficients.
    pub fn validate(&self) -> Result<()> {
        for (what, f, tag) in [("scaling", &self.scaling, self.scaling_tag), ("wavelet", &self.wavelet, self.wavelet_tag)] {
            if f.is_empty() || f.coeffs.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("{what} filter must be non-empty and finite")));
            }
            if let Some(t) = tag {
                let actual = FilterSymmetry::detect(&f.coeffs);
                if t != FilterSymmetry::Neither && t != actual {
                    return Err(Error::Config(format!("{what} filter tagged {t:?} but coefficients are {actual:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn haar() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let lo = Filter::new(vec![s, s], 0);
        let hi = Filter::new(vec![s, -s], 0);
        Self {
            name: "haar".into(),
            scaling: lo.clone(),
            wavelet: hi.clone(),
            scaling_tag: Some(FilterSymmetry::Symmetric),
            wavelet_tag: Some(FilterSymmetry::Antisymmetric),
            synthesis: Some((lo, hi)),
        }
    }

    /// LeGall / CDF 5/3 biorthogonal pair.
    pub fn cdf53() -> Self {
        Self {
            name: "cdf53".into(),
            scaling: Filter::new([-1.0, 2.0, 6.0, 2.0, -1.0].iter().map(|v| v / 8.0).collect(), -2),
            wavelet: Filter::new(vec![-0.5, 1.0, -0.5], 0),
            scaling_tag: Some(FilterSymmetry::Symmetric),
            wavelet_tag: Some(FilterSymmetry::Symmetric),
            synthesis: Some((
                Filter::new(vec![0.5, 1.0, 0.5], -1),
                Filter::new([-1.0, -2.0, 6.0, -2.0, -1.0].iter().map(|v| v / 8.0).collect(), -1),
            )),
        }
    }

    /// Degenerate pair whose wavelet filter is the Haar scaling filter.
    pub fn scaling_only() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let lo = Filter::new(vec![s, s], 0);
        Self {
            name: "scaling-only".into(),
            scaling: lo.clone(),
            wavelet: lo,
            scaling_tag: Some(FilterSymmetry::Symmetric),
            wavelet_tag: Some(FilterSymmetry::Symmetric),
            synthesis: None,
        }
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "haar" => Ok(Self::haar()),
            "cdf53" | "cdf5/3" | "legall" => Ok(Self::cdf53()),
            "scaling-only" | "scaling_only" => Ok(Self::scaling_only()),
            other => Err(Error::Config(format!("unknown wavelet `{other}`"))),
        }
    }

    /// Boundary mode under which this pair's compartment relations are exact.
    pub fn natural_extension(&self) -> Extension {
        let odd = self.scaling.len() % 2 == 1 && self.wavelet.len() % 2 == 1;
        if odd {
            Extension::Symmetric
        } else {
            Extension::Periodic
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extension {
    #[default]
    Periodic,
    Symmetric,
}

impl FromStr for Extension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "periodic" => Ok(Self::Periodic),
            "symmetric" => Ok(Self::Symmetric),
            other => Err(Error::Config(format!("unknown extension `{other}`"))),
        }
    }
}

#[inline]
fn ext_index(i: i64, n: usize, ext: Extension) -> usize {
    let n = n as i64;
    match ext {
        Extension::Periodic => i.rem_euclid(n) as usize,
        Extension::Symmetric => {
            if n == 1 {
                return 0;
            }
            let p = 2 * (n - 1);
            let m = i.rem_euclid(p);
            (if m >= n { p - m } else { m }) as usize
        }
    }
}

/// Number of output samples of `f` on a length-`n` signal.
fn band_len(f: &Filter, n: usize, ext: Extension) -> usize {
    match ext {
        Extension::Periodic => n / 2,
        Extension::Symmetric => {
            // Outputs whose centre tap lands inside the signal.
            let c = f.centre();
            (0..n as i64).filter(|&k| (2 * k + c) >= 0 && (2 * k + c) < n as i64).count()
        }
    }
}

fn first_output(f: &Filter, ext: Extension) -> i64 {
    match ext {
        Extension::Periodic => 0,
        Extension::Symmetric => {
            let c = f.centre();
            if c >= 0 {
                0
            } else {
                (-c + 1) / 2
            }
        }
    }
}

fn analyze(x: &[f64], f: &Filter, ext: Extension) -> Vec<f64> {
    let n = x.len();
    let k0 = first_output(f, ext);
    (0..band_len(f, n, ext) as i64)
        .map(|k| {
            let base = 2 * (k + k0) + f.start;
            f.coeffs.iter().enumerate().map(|(j, c)| c * x[ext_index(base + j as i64, n, ext)]).sum()
        })
        .collect()
}

fn check_input(input: &Tensor2D, pair: &WaveletFilterPair, ext: Extension) -> Result<()> {
    pair.validate()?;
    if !input.is_square() {
        return shape_err(format!("wavelet input must be square, got {:?}", input.shape()));
    }
    let n = input.height();
    let longest = pair.scaling.len().max(pair.wavelet.len());
    match ext {
        Extension::Periodic => {
            if !n.is_multiple_of(2) {
                return shape_err(format!("periodic decomposition needs an even side, got {n}"));
            }
            if n < longest {
                return shape_err(format!("side {n} shorter than filter length {longest}"));
            }
        }
        Extension::Symmetric => {
            if n.is_multiple_of(2) || n < 3 {
                return shape_err(format!("symmetric decomposition needs an odd side ≥ 3, got {n}"));
            }
            if pair.scaling.len().is_multiple_of(2) || pair.wavelet.len().is_multiple_of(2) {
                return shape_err("symmetric extension needs odd-length filters");
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Compartment {
    LL,
    LH,
    HL,
    HH,
}

impl Compartment {
    pub const ALL: [Compartment; 4] = [Self::LL, Self::LH, Self::HL, Self::HH];

    /// The compartment that `e` maps this one onto: transposing elements swap LH and HL.
    pub fn image_under(self, e: TransformElement) -> Self {
        let transposes = !e.preserves_shape() && !e.is_translation();
        match (self, transposes) {
            (Self::LH, true) => Self::HL,
            (Self::HL, true) => Self::LH,
            (c, _) => c,
        }
    }
}

impl fmt::Display for Compartment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LL => "LL",
            Self::LH => "LH",
            Self::HL => "HL",
            Self::HH => "HH",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub ll: Tensor2D,
    pub lh: Tensor2D,
    pub hl: Tensor2D,
    pub hh: Tensor2D,
}

impl Decomposition {
    pub fn get(&self, c: Compartment) -> &Tensor2D {
        match c {
            Compartment::LL => &self.ll,
            Compartment::LH => &self.lh,
            Compartment::HL => &self.hl,
            Compartment::HH => &self.hh,
        }
    }

    pub fn energy(&self) -> f64 {
        Compartment::ALL.iter().map(|&c| self.get(c).values().iter().map(|v| v * v).sum::<f64>()).sum()
    }

    pub fn max_abs_diff(&self, other: &Decomposition) -> f64 {
        Compartment::ALL.iter().map(|&c| self.get(c).max_abs_diff(other.get(c))).fold(0.0, f64::max)
    }
}

fn rows_pass(t: &Tensor2D, f: &Filter, ext: Extension) -> Tensor2D {
    let rows: Vec<Vec<f64>> = (0..t.height()).map(|r| analyze(t.row(r), f, ext)).collect();
    Tensor2D::from_rows(&rows)
}

fn cols_pass(t: &Tensor2D, f: &Filter, ext: Extension) -> Tensor2D {
    rows_pass(&t.transpose(), f, ext).transpose()
}

/// One level of separable decomposition.
pub fn dwt2d(input: &Tensor2D, pair: &WaveletFilterPair, ext: Extension) -> Result<Decomposition> {
    check_input(input, pair, ext)?;
    let lo = rows_pass(input, &pair.scaling, ext);
    let hi = rows_pass(input, &pair.wavelet, ext);
    Ok(Decomposition {
        ll: cols_pass(&lo, &pair.scaling, ext),
        lh: cols_pass(&lo, &pair.wavelet, ext),
        hl: cols_pass(&hi, &pair.scaling, ext),
        hh: cols_pass(&hi, &pair.wavelet, ext),
    })
}

/// Direct 2D evaluation of each compartment, with no separable passes.
pub fn dwt2d_oracle(input: &Tensor2D, pair: &WaveletFilterPair, ext: Extension) -> Result<Decomposition> {
    check_input(input, pair, ext)?;
    let n = input.height();
    let band = |fh: &Filter, fv: &Filter| {
        let (kh, kv) = (first_output(fh, ext), first_output(fv, ext));
        Tensor2D::from_fn(band_len(fv, n, ext), band_len(fh, n, ext), |a, b| {
            let mut s = 0.0;
            for (u, cv) in fv.coeffs.iter().enumerate() {
                let r = ext_index(2 * (a as i64 + kv) + fv.start + u as i64, n, ext);
                for (v, ch) in fh.coeffs.iter().enumerate() {
                    let c = ext_index(2 * (b as i64 + kh) + fh.start + v as i64, n, ext);
                    s += cv * ch * input.get(r, c);
                }
            }
            s
        })
    };
    Ok(Decomposition {
        ll: band(&pair.scaling, &pair.scaling),
        lh: band(&pair.scaling, &pair.wavelet),
        hl: band(&pair.wavelet, &pair.scaling),
        hh: band(&pair.wavelet, &pair.wavelet),
    })
}

fn synthesize(low: &[f64], high: &[f64], sl: &Filter, sh: &Filter, n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for (band, f) in [(low, sl), (high, sh)] {
        for (k, &b) in band.iter().enumerate() {
            for (j, c) in f.coeffs.iter().enumerate() {
                x[ext_index(2 * k as i64 + f.start + j as i64, n, Extension::Periodic)] += c * b;
            }
        }
    }
    x
}

/// Inverse of a periodic [`dwt2d`] using the pair's synthesis filters.
pub fn idwt2d(dec: &Decomposition, pair: &WaveletFilterPair) -> Result<Tensor2D> {
    let Some((sl, sh)) = &pair.synthesis else {
        return Err(Error::Config(format!("wavelet `{}` has no synthesis filters", pair.name)));
    };
    let m = dec.ll.height();
    for c in Compartment::ALL {
        if dec.get(c).shape() != (m, m) {
            return shape_err("periodic reconstruction needs four equal square compartments");
        }
    }
    let n = 2 * m;
    // Undo the column pass, then the row pass.
    let cols = |low: &Tensor2D, high: &Tensor2D| {
        let cols: Vec<Vec<f64>> =
            (0..m).map(|c| synthesize(low.transpose().row(c), high.transpose().row(c), sl, sh, n)).collect();
        Tensor2D::from_rows(&cols).transpose()
    };
    let lo = cols(&dec.ll, &dec.lh);
    let hi = cols(&dec.hl, &dec.hh);
    let rows: Vec<Vec<f64>> = (0..n).map(|r| synthesize(lo.row(r), hi.row(r), sl, sh, n)).collect();
    Ok(Tensor2D::from_rows(&rows))
}

/// Symmetry group claimed for each compartment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompartmentClasses {
    pub ll: SymmetryGroup,
    pub lh: SymmetryGroup,
    pub hl: SymmetryGroup,
    pub hh: SymmetryGroup,
}

impl CompartmentClasses {
    pub fn get(&self, c: Compartment) -> SymmetryGroup {
        match c {
            Compartment::LL => self.ll,
            Compartment::LH => self.lh,
            Compartment::HL => self.hl,
            Compartment::HH => self.hh,
        }
    }
}

/// Classification from the filter tags: a symmetric wavelet filter makes every
/// compartment Dih4-compatible, an antisymmetric one leaves LH and HL with
/// only the 180° relation.
pub fn classify_compartment_symmetry(pair: &WaveletFilterPair) -> Result<CompartmentClasses> {
    pair.validate()?;
    let (Some(st), Some(wt)) = (pair.scaling_tag, pair.wavelet_tag) else {
        return Err(Error::Classification(format!("wavelet `{}` has untagged filters", pair.name)));
    };
    if st != FilterSymmetry::Symmetric {
        return Err(Error::Classification(format!("scaling filter of `{}` is not symmetric", pair.name)));
    }
    match wt {
        FilterSymmetry::Symmetric => Ok(CompartmentClasses {
            ll: SymmetryGroup::Dih4,
            lh: SymmetryGroup::Dih4,
            hl: SymmetryGroup::Dih4,
            hh: SymmetryGroup::Dih4,
        }),
        FilterSymmetry::Antisymmetric => Ok(CompartmentClasses {
            ll: SymmetryGroup::Dih4,
            lh: SymmetryGroup::C2,
            hl: SymmetryGroup::C2,
            hh: SymmetryGroup::Dih4,
        }),
        FilterSymmetry::Neither => {
            Err(Error::Classification(format!("wavelet filter of `{}` is neither symmetric nor antisymmetric", pair.name)))
        }
    }
}

/// How one compartment of `dwt(e·V)` relates to `e` applied to `dwt(V)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Relation {
    pub compartment: Compartment,
    pub element: TransformElement,
    /// The compartment of `dwt(e·V)` compared against.
    pub partner: Compartment,
    /// `+1` or `-1`, whichever fits better.
    pub sign: f64,
    pub residual: f64,
}

/// Measures the relation `dwt(e·V)[partner] = ± e(dwt(V)[c])` using the
/// brute-force oracle for the transformed side.
pub fn compartment_relation(input: &Tensor2D, pair: &WaveletFilterPair, ext: Extension, c: Compartment, e: TransformElement) -> Result<Relation> {
    let base = dwt2d(input, pair, ext)?;
    let moved = dwt2d_oracle(&transform_any(input, e)?, pair, ext)?;
    let partner = c.image_under(e);
    let expected = transform_any(base.get(c), e)?;
    let got = moved.get(partner);
    let plus = got.max_abs_diff(&expected);
    let minus = got.max_abs_diff(&expected.scale(-1.0));
    let (sign, residual) = if plus <= minus { (1.0, plus) } else { (-1.0, minus) };
    Ok(Relation { compartment: c, element: e, partner, sign, residual })
}

fn fixed_kernel(rows: [[f64; 3]; 3]) -> TiKernel {
    TiKernel::unconstrained(Tensor2D::from_rows(&rows))
}

/// Vertical Sobel derivative: antisymmetric under the top-down flip.
pub fn sobel_y() -> TiKernel {
    fixed_kernel([[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]])
}

/// Horizontal Sobel derivative: antisymmetric under the left-right flip.
pub fn sobel_x() -> TiKernel {
    fixed_kernel([[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]])
}

/// Antisymmetric under both axis flips, symmetric under transposition.
pub fn saddle() -> TiKernel {
    fixed_kernel([[1.0, 0.0, -1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 1.0]])
}

/// Reflection fix for antisymmetric-wavelet detail compartments: LH is
/// correlated with a kernel antisymmetric about the horizontal axis and HL
/// with its transpose, cancelling the sign each picks up under the matching
/// reflection. Valid mode, so each side shrinks by 2.
pub fn reflection_fix(lh: &Tensor2D, hl: &Tensor2D) -> Result<(Tensor2D, Tensor2D)> {
    lh.expect_same_shape(hl)?;
    Ok((conv2d(lh, &sobel_y(), 1)?, conv2d(hl, &sobel_x(), 1)?))
}

/// The same idea for HH, which changes sign under both axis flips.
pub fn hh_fix(hh: &Tensor2D) -> Result<Tensor2D> {
    conv2d(hh, &saddle(), 1)
}

/// Sum of the two fixed detail compartments: a single Dih4-equivariant map.
pub fn merge_fixed_details(lh: &Tensor2D, hl: &Tensor2D) -> Result<Tensor2D> {
    let (a, b) = reflection_fix(lh, hl)?;
    a.zip_map(&b, |x, y| x + y)
}

/// Merge of symmetric-extension detail compartments: `LH` (`m × (m+1)`) is
/// summed over horizontal neighbours and `HL` (`(m+1) × m`) over vertical
/// neighbours, giving two `m × m` maps that swap under transposition; their
/// sum is Dih4-equivariant.
pub fn merge_symmetric_details(lh: &Tensor2D, hl: &Tensor2D) -> Result<Tensor2D> {
    let (m, w) = lh.shape();
    if w != m + 1 || hl.shape() != (m + 1, m) {
        return shape_err(format!("detail compartments {:?} and {:?} are not an (m, m+1)/(m+1, m) pair", lh.shape(), hl.shape()));
    }
    Ok(Tensor2D::from_fn(m, m, |r, c| lh.get(r, c) + lh.get(r, c + 1) + hl.get(r, c) + hl.get(r + 1, c)))
}

/// Elementwise square: discards the sign a compartment may pick up.
pub fn energy_map(t: &Tensor2D) -> Tensor2D {
    t.map(|v| v * v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Tensor2D {
        Tensor2D::random_uniform(n, n, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn haar_constant_input() {
        let d = dwt2d(&Tensor2D::filled(8, 8, 3.0), &WaveletFilterPair::haar(), Extension::Periodic).unwrap();
        assert!(d.ll.values().iter().all(|&v| (v - 6.0).abs() < 1e-12));
        for c in [Compartment::LH, Compartment::HL, Compartment::HH] {
            assert!(d.get(c).values().iter().all(|&v| v == 0.0), "{c}");
        }
    }

    #[test]
    fn haar_preserves_energy() {
        let v = random(16, 1);
        let d = dwt2d(&v, &WaveletFilterPair::haar(), Extension::Periodic).unwrap();
        let e: f64 = v.values().iter().map(|x| x * x).sum();
        assert!((d.energy() - e).abs() < 1e-10);
    }

    #[test]
    fn perfect_reconstruction() {
        for pair in [WaveletFilterPair::haar(), WaveletFilterPair::cdf53()] {
            for n in [8, 12, 16] {
                let v = random(n, n as u64);
                let d = dwt2d(&v, &pair, Extension::Periodic).unwrap();
                let back = idwt2d(&d, &pair).unwrap();
                assert!(back.max_abs_diff(&v) < 1e-10, "{} n={n}", pair.name);
            }
        }
    }

    #[test]
    fn separable_matches_oracle() {
        for (pair, ext, n) in [
            (WaveletFilterPair::haar(), Extension::Periodic, 10),
            (WaveletFilterPair::cdf53(), Extension::Periodic, 12),
            (WaveletFilterPair::cdf53(), Extension::Symmetric, 13),
        ] {
            let v = random(n, 3);
            let a = dwt2d(&v, &pair, ext).unwrap();
            let b = dwt2d_oracle(&v, &pair, ext).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }

    #[test]
    fn symmetric_band_sizes() {
        let d = dwt2d(&random(9, 4), &WaveletFilterPair::cdf53(), Extension::Symmetric).unwrap();
        assert_eq!(d.ll.shape(), (5, 5));
        assert_eq!(d.lh.shape(), (4, 5));
        assert_eq!(d.hl.shape(), (5, 4));
        assert_eq!(d.hh.shape(), (4, 4));
    }

    #[test]
    fn rejects_bad_sides() {
        assert!(dwt2d(&random(7, 0), &WaveletFilterPair::haar(), Extension::Periodic).is_err());
        assert!(dwt2d(&random(8, 0), &WaveletFilterPair::cdf53(), Extension::Symmetric).is_err());
        assert!(dwt2d(&random(9, 0), &WaveletFilterPair::haar(), Extension::Symmetric).is_err());
    }

    #[test]
    fn classification_table() {
        let h = classify_compartment_symmetry(&WaveletFilterPair::haar()).unwrap();
        assert_eq!((h.ll, h.lh, h.hl, h.hh), (SymmetryGroup::Dih4, SymmetryGroup::C2, SymmetryGroup::C2, SymmetryGroup::Dih4));
        let c = classify_compartment_symmetry(&WaveletFilterPair::cdf53()).unwrap();
        assert!(Compartment::ALL.iter().all(|&k| c.get(k) == SymmetryGroup::Dih4));
        let s = classify_compartment_symmetry(&WaveletFilterPair::scaling_only()).unwrap();
        assert!(Compartment::ALL.iter().all(|&k| s.get(k) == SymmetryGroup::Dih4));
        let mut untagged = WaveletFilterPair::haar();
        untagged.wavelet_tag = None;
        assert!(matches!(classify_compartment_symmetry(&untagged), Err(Error::Classification(_))));
        let mut neither = WaveletFilterPair::haar();
        neither.wavelet = Filter::new(vec![1.0, 0.5], 0);
        neither.wavelet_tag = Some(FilterSymmetry::Neither);
        assert!(matches!(classify_compartment_symmetry(&neither), Err(Error::Classification(_))));
        let mut lying = WaveletFilterPair::haar();
        lying.wavelet_tag = Some(FilterSymmetry::Symmetric);
        assert!(matches!(lying.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn haar_relations_and_signs() {
        let v = random(12, 5);
        let pair = WaveletFilterPair::haar();
        for e in TransformElement::DIH4 {
            for c in Compartment::ALL {
                let r = compartment_relation(&v, &pair, Extension::Periodic, c, e).unwrap();
                assert!(r.residual < 1e-12, "{c} {e}");
                if c == Compartment::LL {
                    assert_eq!(r.sign, 1.0);
                }
            }
        }
        let hh = |e| compartment_relation(&v, &pair, Extension::Periodic, Compartment::HH, e).unwrap().sign;
        assert_eq!(hh(TransformElement::Rot90), -1.0);
        assert_eq!(hh(TransformElement::Rot180), 1.0);
        assert_eq!(hh(TransformElement::ReflectM1), -1.0);
        let lh = |e| compartment_relation(&v, &pair, Extension::Periodic, Compartment::LH, e).unwrap().sign;
        assert_eq!(lh(TransformElement::Rot180), -1.0);
    }

    #[test]
    fn cdf_symmetric_relations_are_sign_free() {
        let v = random(11, 6);
        let pair = WaveletFilterPair::cdf53();
        for e in TransformElement::DIH4 {
            for c in Compartment::ALL {
                let r = compartment_relation(&v, &pair, Extension::Symmetric, c, e).unwrap();
                assert!(r.residual < 1e-12, "{c} {e}: {}", r.residual);
                assert_eq!(r.sign, 1.0, "{c} {e}");
            }
        }
    }

    #[test]
    fn fixes_produce_dih4_maps() {
        let pair = WaveletFilterPair::haar();
        let v = random(16, 7);
        let d0 = dwt2d(&v, &pair, Extension::Periodic).unwrap();
        let s0 = merge_fixed_details(&d0.lh, &d0.hl).unwrap();
        let h0 = hh_fix(&d0.hh).unwrap();
        for e in TransformElement::DIH4 {
            let d = dwt2d(&transform_any(&v, e).unwrap(), &pair, Extension::Periodic).unwrap();
            let s = merge_fixed_details(&d.lh, &d.hl).unwrap();
            assert!(s.max_abs_diff(&transform_any(&s0, e).unwrap()) < 1e-12, "{e}");
            let h = hh_fix(&d.hh).unwrap();
            assert!(h.max_abs_diff(&transform_any(&h0, e).unwrap()) < 1e-12, "{e}");
        }
        let cdf = WaveletFilterPair::cdf53();
        let v = random(13, 8);
        let d0 = dwt2d(&v, &cdf, Extension::Symmetric).unwrap();
        let m0 = merge_symmetric_details(&d0.lh, &d0.hl).unwrap();
        for e in TransformElement::DIH4 {
            let d = dwt2d(&transform_any(&v, e).unwrap(), &cdf, Extension::Symmetric).unwrap();
            let m = merge_symmetric_details(&d.lh, &d.hl).unwrap();
            assert!(m.max_abs_diff(&transform_any(&m0, e).unwrap()) < 1e-12, "{e}");
        }
    }

    #[test]
    fn reflection_fix_trivial_cases() {
        let z = Tensor2D::zeros(6, 6);
        let (a, b) = reflection_fix(&z, &z).unwrap();
        assert_eq!(a, Tensor2D::zeros(4, 4));
        assert_eq!(b, Tensor2D::zeros(4, 4));
        let c = Tensor2D::filled(6, 6, 2.0);
        let (a, b) = reflection_fix(&c, &c).unwrap();
        assert!(a.values().iter().all(|&v| v == a.values()[0]));
        assert!(b.values().iter().all(|&v| v == b.values()[0]));
        assert!(reflection_fix(&z, &Tensor2D::zeros(5, 5)).is_err());
    }
}
