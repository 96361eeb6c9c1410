//! Finite symmetry groups acting on index grids, orbit tables, kernel
//! symmetrization and the translation-line sharing used by TLI flatten layers.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor2D;
use crate::transform::{transform, TransformElement};

use TransformElement::*;

/// Serialize through the lowercase tag so config files read `group = "dih4"`.
macro_rules! string_serde {
    ($t:ty) => {
        impl TryFrom<String> for $t {
            type Error = Error;
            fn try_from(s: String) -> Result<Self> {
                s.parse()
            }
        }
        impl From<$t> for String {
            fn from(v: $t) -> String {
                v.to_string()
            }
        }
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SymmetryGroup {
    /// Dihedral group of the square, order 8.
    Dih4,
    /// Rotations by multiples of 90°, order 4.
    C4,
    /// 180° rotation, order 2.
    C2,
    M1,
    M2,
    D1,
    D2,
    /// `{identity, rot180, m1, m2}`: the symmetries of a rectangle. Unlike the
    /// other groups it also acts on non-square grids.
    Klein,
}

impl SymmetryGroup {
    pub const ALL: [SymmetryGroup; 8] = [Self::Dih4, Self::C4, Self::C2, Self::M1, Self::M2, Self::D1, Self::D2, Self::Klein];

    pub fn elements(self) -> &'static [TransformElement] {
        match self {
            Self::Dih4 => &TransformElement::DIH4,
            Self::C4 => &[Identity, Rot90, Rot180, Rot270],
            Self::C2 => &[Identity, Rot180],
            Self::M1 => &[Identity, ReflectM1],
            Self::M2 => &[Identity, ReflectM2],
            Self::D1 => &[Identity, ReflectD1],
            Self::D2 => &[Identity, ReflectD2],
            Self::Klein => &[Identity, Rot180, ReflectM1, ReflectM2],
        }
    }

    pub fn order(self) -> usize {
        self.elements().len()
    }

    pub fn contains(self, e: TransformElement) -> bool {
        self.elements().contains(&e)
    }

    /// True when every element keeps an `H × W` grid's shape, so the group
    /// can act on rectangles.
    pub fn acts_on_rectangles(self) -> bool {
        self.elements().iter().all(|e| e.preserves_shape())
    }

    pub fn supports_shape(self, h: usize, w: usize) -> bool {
        h == w || self.acts_on_rectangles()
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::Dih4 => "dih4",
            Self::C4 => "c4",
            Self::C2 => "c2",
            Self::M1 => "m1",
            Self::M2 => "m2",
            Self::D1 => "d1",
            Self::D2 => "d2",
            Self::Klein => "klein",
        }
    }
}

impl fmt::Display for SymmetryGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for SymmetryGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|g| g.tag() == lower)
            .ok_or_else(|| Error::Config(format!("unknown symmetry group `{s}`")))
    }
}

string_serde!(SymmetryGroup);

/// True iff every element of `inner` is an element of `outer`.
pub fn subsumes(outer: SymmetryGroup, inner: SymmetryGroup) -> bool {
    inner.elements().iter().all(|e| outer.contains(*e))
}

/// One orbit: grid positions `(row, col)` mapped onto each other by the group,
/// sorted row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Orbit {
    pub positions: Vec<(usize, usize)>,
}

impl Orbit {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn representative(&self) -> (usize, usize) {
        self.positions[0]
    }
}

/// A partition of an `h × w` grid into weight-sharing classes. Classes are
/// ordered by their first (row-major smallest) member, and members within a
/// class are row-major sorted; accumulation over a class always follows that order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrbitTable {
    height: usize,
    width: usize,
    classes: Vec<Vec<usize>>,
    class_of: Vec<usize>,
}

impl OrbitTable {
    fn from_labels(height: usize, width: usize, labels: &[usize]) -> Self {
        let mut remap: HashMap<usize, usize> = HashMap::new();
        let mut classes: Vec<Vec<usize>> = Vec::new();
        let mut class_of = vec![0; height * width];
        for (idx, &l) in labels.iter().enumerate() {
            let next = classes.len();
            let id = *remap.entry(l).or_insert(next);
            if id == classes.len() {
                classes.push(Vec::new());
            }
            classes[id].push(idx);
            class_of[idx] = id;
        }
        Self { height, width, classes, class_of }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Flat (row-major) member indices of each class.
    pub fn classes(&self) -> &[Vec<usize>] {
        &self.classes
    }

    pub fn class_of(&self, flat_index: usize) -> usize {
        self.class_of[flat_index]
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn orbits(&self) -> Vec<Orbit> {
        self.classes
            .iter()
            .map(|cls| Orbit { positions: cls.iter().map(|&i| (i / self.width, i % self.width)).collect() })
            .collect()
    }

    /// Text dump: one class per line, positions as space-separated `r,c` pairs.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for orbit in self.orbits() {
            let line: Vec<String> = orbit.positions.iter().map(|(r, c)| format!("{r},{c}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    /// Replaces each class by its sum or mean, written to every member.
    pub fn project(&self, m: &Tensor2D, mode: SymmetrizeMode) -> Result<Tensor2D> {
        if m.shape() != (self.height, self.width) {
            return shape_err(format!(
                "cannot symmetrize {:?} with a {}x{} sharing table",
                m.shape(),
                self.height,
                self.width
            ));
        }
        let src = m.values();
        let mut out = m.clone();
        let dst = out.values_mut();
        for cls in &self.classes {
            let sum: f64 = cls.iter().map(|&i| src[i]).sum();
            let first = src[cls[0]];
            let v = match mode {
                SymmetrizeMode::Sum => sum,
                // An already-shared class keeps its value bit for bit: `n·v / n`
                // can round away from `v`, which would break idempotence.
                SymmetrizeMode::Average if cls.iter().all(|&i| src[i] == first) => first,
                SymmetrizeMode::Average => sum / cls.len() as f64,
            };
            for &i in cls {
                dst[i] = v;
            }
        }
        Ok(out)
    }

    /// True when every class holds one value, within `tol`.
    pub fn is_shared(&self, m: &Tensor2D, tol: f64) -> bool {
        if m.shape() != (self.height, self.width) {
            return false;
        }
        let v = m.values();
        self.classes.iter().all(|cls| {
            let first = v[cls[0]];
            cls.iter().all(|&i| (v[i] - first).abs() <= tol)
        })
    }
}

type OrbitCache = Mutex<HashMap<(SymmetryGroup, usize, usize), Arc<OrbitTable>>>;

fn orbit_cache() -> &'static OrbitCache {
    static CACHE: OnceLock<OrbitCache> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Orbit table of `group` on an `h × w` grid, computed by index-map closure
/// and memoized.
pub fn orbit_table(group: SymmetryGroup, h: usize, w: usize) -> Result<Arc<OrbitTable>> {
    if h == 0 || w == 0 {
        return shape_err("orbit grid must be non-empty");
    }
    if !group.supports_shape(h, w) {
        return shape_err(format!("group {group} needs a square grid, got {h}x{w}"));
    }
    let key = (group, h, w);
    if let Some(t) = orbit_cache().lock().unwrap().get(&key) {
        return Ok(t.clone());
    }
    // Label each cell by the smallest flat index reachable under the group.
    let mut labels = vec![usize::MAX; h * w];
    for r in 0..h {
        for c in 0..w {
            let idx = r * w + c;
            if labels[idx] != usize::MAX {
                continue;
            }
            let mut stack = vec![(r, c)];
            labels[idx] = idx;
            while let Some((pr, pc)) = stack.pop() {
                for e in group.elements() {
                    let (qr, qc) = e.image(pr, pc, h, w).expect("point elements stay in range");
                    let q = qr * w + qc;
                    if labels[q] == usize::MAX {
                        labels[q] = idx;
                        stack.push((qr, qc));
                    }
                }
            }
        }
    }
    let table = Arc::new(OrbitTable::from_labels(h, w, &labels));
    orbit_cache().lock().unwrap().insert(key, table.clone());
    Ok(table)
}

/// Orbits of `group` on a `k × k` kernel grid.
pub fn orbits(group: SymmetryGroup, k: usize) -> Result<Vec<Orbit>> {
    Ok(orbit_table(group, k, k)?.orbits())
}

pub fn free_parameter_count(group: SymmetryGroup, k: usize) -> Result<usize> {
    Ok(orbit_table(group, k, k)?.num_classes())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymmetrizeMode {
    /// Every member receives the orbit sum.
    Sum,
    /// Every member receives the orbit mean.
    #[default]
    Average,
}

impl FromStr for SymmetrizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sum" => Ok(Self::Sum),
            "average" | "avg" | "mean" => Ok(Self::Average),
            other => Err(Error::Config(format!("unknown symmetrize mode `{other}`"))),
        }
    }
}

pub fn symmetrize(m: &Tensor2D, group: SymmetryGroup, mode: SymmetrizeMode) -> Result<Tensor2D> {
    if !group.supports_shape(m.height(), m.width()) {
        return shape_err(format!("symmetrize over {group} needs a square matrix, got {:?}", m.shape()));
    }
    orbit_table(group, m.height(), m.width())?.project(m, mode)
}

/// True iff `max_e max|m - e(m)| <= tol` over the group's elements.
pub fn is_ti(m: &Tensor2D, group: SymmetryGroup, tol: f64) -> bool {
    ti_residual(m, group).is_some_and(|r| r <= tol)
}

/// `max_e max|m - e(m)|`, or `None` when the group cannot act on `m`'s shape.
pub fn ti_residual(m: &Tensor2D, group: SymmetryGroup) -> Option<f64> {
    if !group.supports_shape(m.height(), m.width()) {
        return None;
    }
    let mut worst: f64 = 0.0;
    for &e in group.elements() {
        let t = transform(m, e).ok()?;
        worst = worst.max(m.max_abs_diff(&t));
    }
    Some(worst)
}

/// Lines of weight sharing for translation-identical flatten kernels. Each
/// variant names the translation direction; all cells on one line parallel to
/// that direction share a weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TranslationLine {
    /// Horizontal translation: shared along rows.
    Y0,
    /// Vertical translation: shared along columns.
    X0,
    /// 45° translation (up and to the right): shared along `row + col = const`.
    XeqY,
    /// 135° translation (down and to the right): shared along `row - col = const`.
    XeqNegY,
}

impl TranslationLine {
    pub const ALL: [TranslationLine; 4] = [Self::Y0, Self::X0, Self::XeqY, Self::XeqNegY];

    /// Shift of `steps` along this direction as a translate element.
    pub fn shift(self, steps: i64) -> TransformElement {
        let (dx, dy) = match self {
            Self::Y0 => (steps, 0),
            Self::X0 => (0, steps),
            Self::XeqY => (steps, -steps),
            Self::XeqNegY => (steps, steps),
        };
        Translate { dx, dy }
    }

    fn label(self, r: usize, c: usize, w: usize) -> usize {
        match self {
            Self::Y0 => r,
            Self::X0 => c,
            Self::XeqY => r + c,
            Self::XeqNegY => r + w - c,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::Y0 => "y=0",
            Self::X0 => "x=0",
            Self::XeqY => "x=y",
            Self::XeqNegY => "x=-y",
        }
    }

    pub fn padding_direction(self) -> crate::scan::PadDirection {
        use crate::scan::PadDirection;
        match self {
            Self::Y0 => PadDirection::Horizontal,
            Self::X0 => PadDirection::Vertical,
            Self::XeqY => PadDirection::Diagonal45,
            Self::XeqNegY => PadDirection::Diagonal135,
        }
    }
}

impl fmt::Display for TranslationLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for TranslationLine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(' ', "").as_str() {
            "y=0" | "h" | "horizontal" => Ok(Self::Y0),
            "x=0" | "v" | "vertical" => Ok(Self::X0),
            "x=y" | "d45" => Ok(Self::XeqY),
            "x=-y" | "d135" => Ok(Self::XeqNegY),
            other => Err(Error::Config(format!("unknown translation line `{other}`"))),
        }
    }
}

pub fn line_table(line: TranslationLine, h: usize, w: usize) -> Result<Arc<OrbitTable>> {
    if h == 0 || w == 0 {
        return shape_err("line grid must be non-empty");
    }
    let labels: Vec<usize> = (0..h * w).map(|i| line.label(i / w, i % w, w)).collect();
    Ok(Arc::new(OrbitTable::from_labels(h, w, &labels)))
}

/// How a kernel's weights are tied together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Sharing {
    /// All weights free.
    None,
    Group(SymmetryGroup),
    Line(TranslationLine),
}

impl Sharing {
    /// The sharing classes on an `h × w` grid; `None` for unconstrained kernels.
    pub fn table(self, h: usize, w: usize) -> Result<Option<Arc<OrbitTable>>> {
        match self {
            Sharing::None => Ok(None),
            Sharing::Group(g) => orbit_table(g, h, w).map(Some),
            Sharing::Line(l) => line_table(l, h, w).map(Some),
        }
    }

    pub fn group(self) -> Option<SymmetryGroup> {
        match self {
            Sharing::Group(g) => Some(g),
            _ => None,
        }
    }

    pub fn tag(self) -> String {
        match self {
            Sharing::None => "none".into(),
            Sharing::Group(g) => g.tag().into(),
            Sharing::Line(l) => l.tag().into(),
        }
    }
}

impl fmt::Display for Sharing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

string_serde!(Sharing);
string_serde!(TranslationLine);

impl FromStr for Sharing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if t == "none" || t == "full" {
            return Ok(Sharing::None);
        }
        if let Ok(g) = t.parse::<SymmetryGroup>() {
            return Ok(Sharing::Group(g));
        }
        t.parse::<TranslationLine>().map(Sharing::Line)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Equivalence classes by applying every element to every position and
    /// merging with union-find; independent of the closure walk above.
    fn brute_orbit_sizes(group: SymmetryGroup, k: usize) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..k * k).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut x = x;
            while p[x] != x {
                x = p[x];
            }
            x
        }
        for r in 0..k {
            for c in 0..k {
                for e in group.elements() {
                    let (sr, sc) = e.source(r, c, k, k).unwrap();
                    let a = find(&mut parent, r * k + c);
                    let b = find(&mut parent, sr * k + sc);
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut sizes: HashMap<usize, usize> = HashMap::new();
        for i in 0..k * k {
            let root = find(&mut parent, i);
            *sizes.entry(root).or_default() += 1;
        }
        let mut v: Vec<usize> = sizes.into_values().collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn dih4_k3_orbits() {
        let o = orbits(SymmetryGroup::Dih4, 3).unwrap();
        assert_eq!(o.len(), 3);
        let sets: Vec<Vec<(usize, usize)>> = o.into_iter().map(|o| o.positions).collect();
        assert!(sets.contains(&vec![(1, 1)]));
        assert!(sets.contains(&vec![(0, 1), (1, 0), (1, 2), (2, 1)]));
        assert!(sets.contains(&vec![(0, 0), (0, 2), (2, 0), (2, 2)]));
    }

    #[test]
    fn small_orbit_counts() {
        assert_eq!(orbits(SymmetryGroup::Dih4, 1).unwrap().len(), 1);
        let c4 = orbits(SymmetryGroup::C4, 4).unwrap();
        assert_eq!(c4.len(), 4);
        assert!(c4.iter().all(|o| o.len() == 4));
        assert_eq!(free_parameter_count(SymmetryGroup::Dih4, 3).unwrap(), 3);
        assert_eq!(free_parameter_count(SymmetryGroup::Dih4, 5).unwrap(), 6);
        assert_eq!(free_parameter_count(SymmetryGroup::C2, 3).unwrap(), 5);
    }

    #[test]
    fn orbit_sizes_match_union_find() {
        for g in SymmetryGroup::ALL {
            for k in 1..=9 {
                let mut sizes: Vec<usize> = orbits(g, k).unwrap().iter().map(Orbit::len).collect();
                sizes.sort_unstable();
                assert_eq!(sizes, brute_orbit_sizes(g, k), "{g} k={k}");
                assert_eq!(sizes.iter().sum::<usize>(), k * k);
                assert!(sizes.iter().all(|s| g.order() % s == 0));
            }
        }
    }

    #[test]
    fn dih4_closed_form_count() {
        for m in 1..=5 {
            let k = 2 * m - 1;
            assert_eq!(free_parameter_count(SymmetryGroup::Dih4, k).unwrap(), m * (m + 1) / 2);
        }
    }

    #[test]
    fn symmetrize_examples() {
        let m = Tensor2D::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]);
        let s = symmetrize(&m, SymmetryGroup::Dih4, SymmetrizeMode::Average).unwrap();
        assert_eq!(s, Tensor2D::filled(3, 3, 5.0));

        let m = Tensor2D::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        let s = symmetrize(&m, SymmetryGroup::Dih4, SymmetrizeMode::Average).unwrap();
        let expected = Tensor2D::from_rows(&[[0.25, 0.0, 0.25], [0.0, 0.0, 0.0], [0.25, 0.0, 0.25]]);
        assert_eq!(s, expected);
    }

    #[test]
    fn sum_mode_scales_ti_input_by_orbit_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 1..=7 {
            let m = symmetrize(&Tensor2D::random_uniform(k, k, -1.0, 1.0, &mut rng), SymmetryGroup::Dih4, SymmetrizeMode::Average).unwrap();
            let s = symmetrize(&m, SymmetryGroup::Dih4, SymmetrizeMode::Sum).unwrap();
            for o in orbits(SymmetryGroup::Dih4, k).unwrap() {
                for &(r, c) in &o.positions {
                    let expected = o.len() as f64 * m.get(r, c);
                    assert!((s.get(r, c) - expected).abs() <= 1e-12 * expected.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn is_ti_examples() {
        assert!(is_ti(&Tensor2D::filled(5, 5, 1.0), SymmetryGroup::Dih4, 0.0));
        let m = Tensor2D::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(is_ti(&m, SymmetryGroup::D1, 0.0));
        assert!(is_ti(&m, SymmetryGroup::D2, 0.0));
        assert!(!is_ti(&m, SymmetryGroup::Dih4, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = Tensor2D::random_uniform(7, 7, -1.0, 1.0, &mut rng);
        let s = symmetrize(&r, SymmetryGroup::C4, SymmetrizeMode::Average).unwrap();
        assert!(is_ti(&s, SymmetryGroup::C4, 0.0));
    }

    #[test]
    fn subsumption() {
        assert!(subsumes(SymmetryGroup::Dih4, SymmetryGroup::C4));
        assert!(subsumes(SymmetryGroup::C4, SymmetryGroup::C2));
        assert!(!subsumes(SymmetryGroup::C2, SymmetryGroup::Dih4));
        assert!(subsumes(SymmetryGroup::Dih4, SymmetryGroup::Klein));
        for g in SymmetryGroup::ALL {
            assert!(subsumes(SymmetryGroup::Dih4, g));
            assert!(subsumes(g, g));
        }
    }

    #[test]
    fn non_square_symmetrize_is_rejected() {
        let m = Tensor2D::zeros(2, 3);
        assert!(symmetrize(&m, SymmetryGroup::Dih4, SymmetrizeMode::Average).is_err());
        assert!(symmetrize(&m, SymmetryGroup::Klein, SymmetrizeMode::Average).is_ok());
    }

    #[test]
    fn lines_partition_grid() {
        for line in TranslationLine::ALL {
            let t = line_table(line, 4, 6).unwrap();
            let total: usize = t.classes().iter().map(Vec::len).sum();
            assert_eq!(total, 24);
        }
        assert_eq!(line_table(TranslationLine::Y0, 4, 6).unwrap().num_classes(), 4);
        assert_eq!(line_table(TranslationLine::X0, 4, 6).unwrap().num_classes(), 6);
        assert_eq!(line_table(TranslationLine::XeqY, 4, 6).unwrap().num_classes(), 9);
        assert_eq!(line_table(TranslationLine::XeqNegY, 4, 6).unwrap().num_classes(), 9);
    }

    #[test]
    fn line_shift_moves_along_line() {
        for line in TranslationLine::ALL {
            let n = 6;
            let t = line_table(line, n, n).unwrap();
            let Translate { dx, dy } = line.shift(1) else { unreachable!() };
            for r in 1..n - 1 {
                for c in 1..n - 1 {
                    let r2 = (r as i64 + dy) as usize;
                    let c2 = (c as i64 + dx) as usize;
                    assert_eq!(t.class_of(r * n + c), t.class_of(r2 * n + c2), "{line}");
                }
            }
        }
    }

    #[test]
    fn dump_format() {
        let t = orbit_table(SymmetryGroup::Dih4, 3, 3).unwrap();
        let d = t.dump();
        assert_eq!(d.lines().count(), 3);
        assert_eq!(d.lines().next().unwrap(), "0,0 0,2 2,0 2,2");
    }
}
