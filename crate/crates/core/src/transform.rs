//! Exact (type-1) grid transformations and interpolated (type-2) rotation.
//!
//! Coordinates are `(row, col)` with row 0 at the top. The index maps are
//! written as "output cell reads input cell":
//!
//! | element  | `out[r][c]` reads          |
//! |----------|----------------------------|
//! | rot90    | `in[N-1-c][r]`             |
//! | rot180   | `in[H-1-r][W-1-c]`         |
//! | rot270   | `in[c][N-1-r]`             |
//! | m1       | `in[r][W-1-c]` (left-right)|
//! | m2       | `in[H-1-r][c]` (top-down)  |
//! | d1       | `in[N-1-c][N-1-r]` (anti-diagonal) |
//! | d2       | `in[c][r]` (main diagonal) |
//!
//! `rot90`, `rot270`, `d1` and `d2` exchange the axes and therefore need a
//! square input. `m1`, `m2` and `rot180` keep the shape and also act on
//! rectangles.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor2D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformElement {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    /// Left-right reflection (about the vertical axis, x = 0).
    ReflectM1,
    /// Top-down reflection (about the horizontal axis, y = 0).
    ReflectM2,
    /// Reflection about the upper-right/lower-left diagonal.
    ReflectD1,
    /// Reflection about the upper-left/lower-right diagonal.
    ReflectD2,
    /// Integer shift; `dx` moves right, `dy` moves down. Vacated cells are zero.
    Translate { dx: i64, dy: i64 },
}

use TransformElement::*;

impl TransformElement {
    /// The eight elements of the dihedral group of the square, identity first.
    pub const DIH4: [TransformElement; 8] =
        [Identity, Rot90, Rot180, Rot270, ReflectM1, ReflectM2, ReflectD1, ReflectD2];

    pub fn inverse(self) -> Self {
        match self {
            Rot90 => Rot270,
            Rot270 => Rot90,
            Translate { dx, dy } => Translate { dx: -dx, dy: -dy },
            other => other,
        }
    }

    pub fn is_translation(self) -> bool {
        matches!(self, Translate { .. })
    }

    /// True for elements that map an `H × W` grid onto an `H × W` grid for any `H`, `W`.
    pub fn preserves_shape(self) -> bool {
        matches!(self, Identity | Rot180 | ReflectM1 | ReflectM2 | Translate { .. })
    }

    /// Order of a point element; `None` for non-trivial translations.
    pub fn order(self) -> Option<usize> {
        match self {
            Identity => Some(1),
            Rot90 | Rot270 => Some(4),
            Rot180 | ReflectM1 | ReflectM2 | ReflectD1 | ReflectD2 => Some(2),
            Translate { dx: 0, dy: 0 } => Some(1),
            Translate { .. } => None,
        }
    }

    /// Input cell read by output cell `(r, c)` on an `h × w` grid, or `None`
    /// when a translation reads outside the grid.
    #[inline]
    pub fn source(self, r: usize, c: usize, h: usize, w: usize) -> Option<(usize, usize)> {
        Some(match self {
            Identity => (r, c),
            Rot90 => (h - 1 - c, r),
            Rot180 => (h - 1 - r, w - 1 - c),
            Rot270 => (c, w - 1 - r),
            ReflectM1 => (r, w - 1 - c),
            ReflectM2 => (h - 1 - r, c),
            ReflectD1 => (h - 1 - c, w - 1 - r),
            ReflectD2 => (c, r),
            Translate { dx, dy } => {
                let sr = r as i64 - dy;
                let sc = c as i64 - dx;
                if sr < 0 || sc < 0 || sr >= h as i64 || sc >= w as i64 {
                    return None;
                }
                (sr as usize, sc as usize)
            }
        })
    }

    /// Where input cell `(r, c)` lands; the inverse of [`source`](Self::source).
    #[inline]
    pub fn image(self, r: usize, c: usize, h: usize, w: usize) -> Option<(usize, usize)> {
        self.inverse().source(r, c, h, w)
    }

    /// The single element equal to applying `self` first and then `next`.
    /// Point elements compose to point elements; translations compose with
    /// translations. Mixed pairs have no single-element form here.
    pub fn then(self, next: Self) -> Option<Self> {
        match (self, next) {
            (Translate { dx: a, dy: b }, Translate { dx: c, dy: d }) => Some(Translate { dx: a + c, dy: b + d }),
            (Translate { dx: 0, dy: 0 }, p) | (p, Translate { dx: 0, dy: 0 }) => Some(p),
            (Translate { .. }, _) | (_, Translate { .. }) => None,
            (a, b) => {
                // Match the composite index map against the eight candidates on a 3x3 probe.
                let n = 3;
                Self::DIH4.into_iter().find(|cand| {
                    (0..n).all(|r| {
                        (0..n).all(|c| {
                            let (r1, c1) = b.source(r, c, n, n).unwrap();
                            let (r0, c0) = a.source(r1, c1, n, n).unwrap();
                            cand.source(r, c, n, n) == Some((r0, c0))
                        })
                    })
                })
            }
        }
    }

    pub fn name(self) -> String {
        match self {
            Identity => "identity".into(),
            Rot90 => "rot90".into(),
            Rot180 => "rot180".into(),
            Rot270 => "rot270".into(),
            ReflectM1 => "reflect-m1".into(),
            ReflectM2 => "reflect-m2".into(),
            ReflectD1 => "reflect-d1".into(),
            ReflectD2 => "reflect-d2".into(),
            Translate { dx, dy } => format!("translate({dx},{dy})"),
        }
    }
}

impl fmt::Display for TransformElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for TransformElement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "id" => Identity,
            "rot90" => Rot90,
            "rot180" => Rot180,
            "rot270" => Rot270,
            "reflect-m1" | "m1" => ReflectM1,
            "reflect-m2" | "m2" => ReflectM2,
            "reflect-d1" | "d1" => ReflectD1,
            "reflect-d2" | "d2" => ReflectD2,
            other => {
                let inner = other
                    .strip_prefix("translate(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::Config(format!("unknown transform `{s}`")))?;
                let parts: Vec<&str> = inner.split(',').collect();
                let [dx, dy] = parts[..] else {
                    return Err(Error::Config(format!("translate needs two offsets: `{s}`")));
                };
                let parse = |v: &str| v.trim().parse::<i64>().map_err(|e| Error::Config(format!("`{s}`: {e}")));
                Translate { dx: parse(dx)?, dy: parse(dy)? }
            }
        })
    }
}

/// Applies a type-1 transformation. Values are permuted exactly; translations zero-fill.
pub fn transform(t: &Tensor2D, e: TransformElement) -> Result<Tensor2D> {
    let (h, w) = t.shape();
    match e {
        Identity => return Ok(t.clone()),
        Translate { dx, dy } => {
            if dx.unsigned_abs() as usize >= w || dy.unsigned_abs() as usize >= h {
                return shape_err(format!("translation ({dx},{dy}) exceeds {h}x{w}"));
            }
        }
        _ if !e.preserves_shape() && h != w => {
            return shape_err(format!("{e} needs a square tensor, got {h}x{w}"));
        }
        _ => {}
    }
    Ok(Tensor2D::from_fn(h, w, |r, c| e.source(r, c, h, w).map_or(0.0, |(sr, sc)| t.get(sr, sc))))
}

/// Like [`transform`], but 90° rotations and diagonal reflections also act on
/// rectangles, producing the transposed shape.
pub fn transform_any(t: &Tensor2D, e: TransformElement) -> Result<Tensor2D> {
    let (h, w) = t.shape();
    if e.preserves_shape() || e.is_translation() {
        return transform(t, e);
    }
    Ok(Tensor2D::from_fn(w, h, |r, c| {
        let (sr, sc) = e.source(r, c, h, w).expect("point elements never leave the grid");
        t.get(sr, sc)
    }))
}

/// Bilinear rotation about the grid centre by `angle_degrees` in the same
/// sense as [`TransformElement::Rot90`]. Samples outside the grid read zero.
pub fn rotate_interpolated(t: &Tensor2D, angle_degrees: f64) -> Result<Tensor2D> {
    if !t.is_square() {
        return shape_err(format!("interpolated rotation needs a square tensor, got {:?}", t.shape()));
    }
    if angle_degrees.rem_euclid(360.0) == 0.0 {
        return Ok(t.clone());
    }
    let n = t.height();
    let centre = (n as f64 - 1.0) / 2.0;
    let (sin, cos) = angle_degrees.to_radians().sin_cos();
    let sample = |r: i64, c: i64| -> f64 {
        if r < 0 || c < 0 || r >= n as i64 || c >= n as i64 {
            0.0
        } else {
            t.get(r as usize, c as usize)
        }
    };
    Ok(Tensor2D::from_fn(n, n, |r, c| {
        let y = r as f64 - centre;
        let x = c as f64 - centre;
        let sy = y * cos - x * sin + centre;
        let sx = x * cos + y * sin + centre;
        let (r0, c0) = (sy.floor(), sx.floor());
        let (fy, fx) = (sy - r0, sx - c0);
        let (r0, c0) = (r0 as i64, c0 as i64);
        let top = sample(r0, c0) * (1.0 - fx) + sample(r0, c0 + 1) * fx;
        let bottom = sample(r0 + 1, c0) * (1.0 - fx) + sample(r0 + 1, c0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Tensor2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor2D::random_uniform(n, n, -1.0, 1.0, &mut rng)
    }

    #[test]
    fn identity_and_rot90_on_2x2() {
        let t = Tensor2D::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(transform(&t, Identity).unwrap(), t);
        assert_eq!(transform(&t, Rot90).unwrap(), Tensor2D::from_rows(&[[3.0, 1.0], [4.0, 2.0]]));
    }

    #[test]
    fn rot90_then_rot270_is_identity() {
        let v = random(8, 1);
        let back = transform(&transform(&v, Rot90).unwrap(), Rot270).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn inverses() {
        assert_eq!(Rot90.inverse(), Rot270);
        assert_eq!(ReflectM1.inverse(), ReflectM1);
        assert_eq!(Translate { dx: 2, dy: -1 }.inverse(), Translate { dx: -2, dy: 1 });
    }

    #[test]
    fn non_square_rotation_is_rejected() {
        let t = Tensor2D::zeros(2, 3);
        assert!(matches!(transform(&t, Rot90), Err(Error::Shape(_))));
        assert!(matches!(transform(&t, ReflectD2), Err(Error::Shape(_))));
        assert!(transform(&t, ReflectM1).is_ok());
        assert!(transform(&t, Rot180).is_ok());
    }

    #[test]
    fn translate_zero_fills() {
        let t = Tensor2D::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let s = transform(&t, Translate { dx: 1, dy: 0 }).unwrap();
        assert_eq!(s, Tensor2D::from_rows(&[[0.0, 1.0, 2.0], [0.0, 4.0, 5.0]]));
        let s = transform(&t, Translate { dx: 0, dy: -1 }).unwrap();
        assert_eq!(s, Tensor2D::from_rows(&[[4.0, 5.0, 6.0], [0.0, 0.0, 0.0]]));
        assert!(transform(&t, Translate { dx: 3, dy: 0 }).is_err());
    }

    #[test]
    fn element_orders() {
        for e in TransformElement::DIH4 {
            let k = e.order().unwrap();
            let mut acc = Identity;
            for _ in 0..k {
                acc = acc.then(e).unwrap();
            }
            assert_eq!(acc, Identity, "{e}");
        }
    }

    #[test]
    fn parse_names() {
        for e in TransformElement::DIH4 {
            assert_eq!(e.name().parse::<TransformElement>().unwrap(), e);
        }
        let t: TransformElement = "translate(3,-2)".parse().unwrap();
        assert_eq!(t, Translate { dx: 3, dy: -2 });
    }

    #[test]
    fn zero_angle_is_exact() {
        let v = random(9, 2);
        assert_eq!(rotate_interpolated(&v, 0.0).unwrap(), v);
    }

    #[test]
    fn ninety_degrees_matches_exact_rotation() {
        for n in [6, 7] {
            let v = random(n, 3);
            let a = rotate_interpolated(&v, 90.0).unwrap();
            let b = transform(&v, Rot90).unwrap();
            let interior = a.crop(1, 1, n - 2, n - 2).unwrap().max_abs_diff(&b.crop(1, 1, n - 2, n - 2).unwrap());
            assert!(interior <= 1e-9, "{interior}");
        }
    }

    #[test]
    fn interpolated_round_trip_is_lossy() {
        let v = random(12, 4);
        let back = rotate_interpolated(&rotate_interpolated(&v, 22.5).unwrap(), -22.5).unwrap();
        assert!(back.max_abs_diff(&v) > 0.0);
    }
}
