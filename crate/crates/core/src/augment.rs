//! Interpolated (type-2) augmentation plans and the count of input versions a
//! symmetric network covers for free.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symmetry::SymmetryGroup;
use crate::tensor::Tensor2D;
use crate::transform::{rotate_interpolated, transform, TransformElement};

fn dih4() -> SymmetryGroup {
    SymmetryGroup::Dih4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    /// Rotation angles in degrees, same sense as `rot90`.
    #[serde(default)]
    pub angles: Vec<f64>,
    /// Also add the left-right mirror of every rotated version.
    #[serde(default)]
    pub include_reflection: bool,
    /// Count and emit the unrotated image alongside the rotated ones.
    #[serde(default)]
    pub include_original: bool,
    #[serde(default = "dih4")]
    pub group: SymmetryGroup,
}

impl AugmentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("augmentation angles must be finite".into()));
        }
        Ok(())
    }

    /// `(angle, mirrored)` pairs of the explicitly requested versions.
    fn base_versions(&self) -> Vec<(f64, bool)> {
        let mut angles = self.angles.clone();
        if self.include_original || angles.is_empty() {
            angles.insert(0, 0.0);
        }
        let mut out: Vec<(f64, bool)> = angles.iter().map(|&a| (a, false)).collect();
        if self.include_reflection {
            out.extend(angles.iter().map(|&a| (a, true)));
        }
        out
    }
}

/// A version `M^f · R_θ` (rotate by θ, then mirror if `f`) keyed on a
/// 1e-9-degree grid.
type VersionKey = (i64, bool);

fn key(angle: f64, mirrored: bool) -> VersionKey {
    ((angle.rem_euclid(360.0) * 1e9).round() as i64 % 360_000_000_000, mirrored)
}

/// `(extra rotation, mirror)` form of each group element, with `M` the
/// left-right flip: every element is `M^f · R_φ`.
fn element_form(e: TransformElement) -> (f64, bool) {
    use TransformElement::*;
    match e {
        Identity => (0.0, false),
        Rot90 => (90.0, false),
        Rot180 => (180.0, false),
        Rot270 => (270.0, false),
        ReflectM1 => (0.0, true),
        ReflectM2 => (180.0, true),
        ReflectD1 => (90.0, true),
        ReflectD2 => (270.0, true),
        Translate { .. } => (0.0, false),
    }
}

/// Distinct input versions covered: every requested version composed with
/// every group element, with coincident angles merged.
pub fn implied_orbit_size(plan: &AugmentPlan) -> usize {
    let mut seen = BTreeSet::new();
    for (theta, f) in plan.base_versions() {
        for &e in plan.group.elements() {
            // (M^g R_φ)(M^f R_θ) = M^(g⊕f) R_(±φ + θ): R_φ M = M R_-φ.
            let (phi, g) = element_form(e);
            let angle = if f { theta - phi } else { theta + phi };
            seen.insert(key(angle, f ^ g));
        }
    }
    seen.len()
}

/// The augmented training images. With `materialize_orbit` every exact group
/// transform of each version is emitted too (for unconstrained baselines).
pub fn expand(plan: &AugmentPlan, image: &Tensor2D, materialize_orbit: bool) -> Result<Vec<Tensor2D>> {
    plan.validate()?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (theta, f) in plan.base_versions() {
        if !seen.insert(key(theta, f)) {
            continue;
        }
        let mut v = rotate_interpolated(image, theta)?;
        if f {
            v = transform(&v, TransformElement::ReflectM1)?;
        }
        if materialize_orbit {
            for &e in plan.group.elements() {
                out.push(transform(&v, e)?);
            }
        } else {
            out.push(v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(angles: Vec<f64>, reflect: bool, original: bool) -> AugmentPlan {
        AugmentPlan { angles, include_reflection: reflect, include_original: original, group: SymmetryGroup::Dih4 }
    }

    #[test]
    fn orbit_counts() {
        assert_eq!(implied_orbit_size(&plan(vec![22.5], false, false)), 8);
        assert_eq!(implied_orbit_size(&plan(vec![], false, false)), 8);
        let tens: Vec<f64> = (1..=8).map(|i| 10.0 * i as f64).collect();
        assert_eq!(implied_orbit_size(&plan(tens.clone(), true, true)), 72);
        assert_eq!(implied_orbit_size(&plan(tens, false, false)), 64);
        // Angles that differ by 90° collapse onto one orbit.
        assert_eq!(implied_orbit_size(&plan(vec![22.5, 112.5, 202.5], false, false)), 8);
        let mut c4 = plan(vec![22.5], false, false);
        c4.group = SymmetryGroup::C4;
        assert_eq!(implied_orbit_size(&c4), 4);
        c4.include_reflection = true;
        assert_eq!(implied_orbit_size(&c4), 8);
    }

    #[test]
    fn expand_examples() {
        let img = Tensor2D::from_fn(6, 6, |r, c| (r * 6 + c) as f64);
        assert_eq!(expand(&plan(vec![0.0], false, false), &img, false).unwrap(), vec![img.clone()]);
        let out = expand(&plan(vec![22.5], false, false), &img, true).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|t| t.shape() == img.shape()));
        let out = expand(&plan(vec![10.0, 20.0], true, true), &img, false).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(out[0], img);
    }
}
