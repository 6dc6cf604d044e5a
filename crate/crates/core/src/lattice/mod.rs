//! Resonant lattices: integer modes grouped into generations linked by nuclear families.

mod build;
mod verify;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use build::{build_prototype, BuildOptions, HEAVY_RATIO};
pub use verify::{right_angle_margin, verify_properties, PropertyCheck, PropertyReport, RightAngleMargin};

pub const SCHEMA_VERSION: u32 = 1;

/// A lattice point j = (m, n).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[i64; 2]", into = "[i64; 2]")]
pub struct Mode {
    pub m: i64,
    pub n: i64,
}

impl Mode {
    pub const fn new(m: i64, n: i64) -> Self {
        Mode { m, n }
    }

    pub fn norm2(self) -> i128 {
        let (m, n) = (self.m as i128, self.n as i128);
        m * m + n * n
    }

    pub fn dot(self, o: Mode) -> i128 {
        self.m as i128 * o.m as i128 + self.n as i128 * o.n as i128
    }

    pub fn norm(self) -> f64 {
        (self.norm2() as f64).sqrt()
    }

    pub fn scaled(self, k: i64) -> Mode {
        Mode::new(self.m * k, self.n * k)
    }
}

impl std::ops::Add for Mode {
    type Output = Mode;
    fn add(self, o: Mode) -> Mode {
        Mode::new(self.m + o.m, self.n + o.n)
    }
}

impl std::ops::Sub for Mode {
    type Output = Mode;
    fn sub(self, o: Mode) -> Mode {
        Mode::new(self.m - o.m, self.n - o.n)
    }
}

impl std::ops::Neg for Mode {
    type Output = Mode;
    fn neg(self) -> Mode {
        Mode::new(-self.m, -self.n)
    }
}

impl From<[i64; 2]> for Mode {
    fn from(a: [i64; 2]) -> Self {
        Mode::new(a[0], a[1])
    }
}

impl From<Mode> for [i64; 2] {
    fn from(j: Mode) -> Self {
        [j.m, j.n]
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.m, self.n)
    }
}

/// Family links, indexed `[generation][position]` with 0-based generations.
///
/// Generation k (< g-1) modes have a spouse and two children in generation k+1;
/// generation k (> 0) modes have a sibling and two parents in generation k-1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyTree {
    pub spouse: Vec<Vec<Option<usize>>>,
    pub children: Vec<Vec<Option<[usize; 2]>>>,
    pub sibling: Vec<Vec<Option<usize>>>,
    pub parents: Vec<Vec<Option<[usize; 2]>>>,
}

impl FamilyTree {
    pub fn empty(sizes: &[usize]) -> Self {
        FamilyTree {
            spouse: sizes.iter().map(|&s| vec![None; s]).collect(),
            children: sizes.iter().map(|&s| vec![None; s]).collect(),
            sibling: sizes.iter().map(|&s| vec![None; s]).collect(),
            parents: sizes.iter().map(|&s| vec![None; s]).collect(),
        }
    }
}

/// Generations plus the family tree linking them, before certification.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub generations: Vec<Vec<Mode>>,
    pub tree: FamilyTree,
}

impl Candidate {
    pub fn g(&self) -> usize {
        self.generations.len()
    }

    pub fn modes(&self) -> impl Iterator<Item = Mode> + '_ {
        self.generations.iter().flatten().copied()
    }

    pub fn mode_count(&self) -> usize {
        self.generations.iter().map(Vec::len).sum()
    }

    pub fn scaled(&self, n: i64) -> Candidate {
        Candidate {
            generations: self
                .generations
                .iter()
                .map(|gen| gen.iter().map(|j| j.scaled(n)).collect())
                .collect(),
            tree: self.tree.clone(),
        }
    }

    /// Nuclear families as (parent a, parent b, child a, child b).
    pub fn families(&self) -> Vec<(usize, [Mode; 4])> {
        let mut out = Vec::new();
        for (k, gen) in self.generations.iter().enumerate() {
            for (i, &j) in gen.iter().enumerate() {
                if let (Some(sp), Some([c1, c2])) = (self.tree.spouse[k][i], self.tree.children[k][i]) {
                    if i < sp {
                        let next = &self.generations[k + 1];
                        out.push((k, [j, gen[sp], next[c1], next[c2]]));
                    }
                }
            }
        }
        out
    }
}

/// A certified, scaled resonant set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifiedLambda {
    pub schema_version: u32,
    pub g: usize,
    pub generations: Vec<Vec<Mode>>,
    pub tree: FamilyTree,
    pub scale_n: i64,
    pub f_scale: f64,
    /// Smallest C with fScale/C <= |j| <= C 3^g fScale over all modes.
    pub bound_constant: f64,
    pub report: PropertyReport,
}

impl CertifiedLambda {
    pub fn candidate(&self) -> Candidate {
        Candidate { generations: self.generations.clone(), tree: self.tree.clone() }
    }

    pub fn modes_divisible(&self) -> bool {
        let n = self.scale_n;
        self.generations.iter().flatten().all(|j| j.m % n == 0 && j.n % n == 0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("lattice serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, LatticeError> {
        let v: CertifiedLambda = serde_json::from_str(s).map_err(|e| LatticeError::Parse(e.to_string()))?;
        if v.schema_version != SCHEMA_VERSION {
            return Err(LatticeError::Parse(format!("unsupported schema_version {}", v.schema_version)));
        }
        if v.generations.len() != v.g {
            return Err(LatticeError::Parse("g does not match generation count".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("no certified set after {attempts} attempts; last report: {last}")]
    BudgetExhausted { attempts: usize, last: Box<PropertyReport> },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("candidate fails properties after scaling: {0}")]
    NotCertified(Box<PropertyReport>),
    #[error("right-angle margin {margin} below sqrt(fScale) = {need}: pair {pair:?} with axis point {axis}")]
    MarginViolation { margin: i64, need: f64, pair: [Mode; 2], axis: Mode },
    #[error("parse error: {0}")]
    Parse(String),
}

/// An unordered rectangle given by its two diagonals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rectangle {
    pub diag_a: [Mode; 2],
    pub diag_b: [Mode; 2],
}

impl Rectangle {
    pub fn new(a: [Mode; 2], b: [Mode; 2]) -> Self {
        let sort2 = |mut p: [Mode; 2]| {
            p.sort();
            p
        };
        let (a, b) = (sort2(a), sort2(b));
        if a <= b {
            Rectangle { diag_a: a, diag_b: b }
        } else {
            Rectangle { diag_a: b, diag_b: a }
        }
    }

    pub fn vertices(&self) -> [Mode; 4] {
        [self.diag_a[0], self.diag_b[0], self.diag_a[1], self.diag_b[1]]
    }
}

/// All rectangles {j1,j3},{j2,j4} with j1+j3 = j2+j4 and |j1|²+|j3|² = |j2|²+|j4|².
///
/// Pairs are bucketed by (sum, norm sum); two distinct pairs in one bucket are
/// always disjoint, and any two of them form a rectangle.
pub fn enumerate_rectangles(modes: &[Mode]) -> Vec<Rectangle> {
    let mut pts = modes.to_vec();
    pts.sort();
    pts.dedup();
    let mut buckets: HashMap<(i64, i64, i128), Vec<(u32, u32)>> = HashMap::new();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let s = pts[i] + pts[j];
            buckets
                .entry((s.m, s.n, pts[i].norm2() + pts[j].norm2()))
                .or_default()
                .push((i as u32, j as u32));
        }
    }
    let mut out = Vec::new();
    for pairs in buckets.values().filter(|p| p.len() > 1) {
        for x in 0..pairs.len() {
            for y in x + 1..pairs.len() {
                let (a, b) = (pairs[x], pairs[y]);
                out.push(Rectangle::new(
                    [pts[a.0 as usize], pts[a.1 as usize]],
                    [pts[b.0 as usize], pts[b.1 as usize]],
                ));
            }
        }
    }
    out.sort();
    out
}

/// Reference O(n⁴) scan over ordered quadruples, for cross-checking.
pub fn enumerate_rectangles_naive(modes: &[Mode]) -> Vec<Rectangle> {
    let mut pts = modes.to_vec();
    pts.sort();
    pts.dedup();
    let n = pts.len();
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let (s, w) = (pts[a] + pts[b], pts[a].norm2() + pts[b].norm2());
            for c in a + 1..n {
                if c == b {
                    continue;
                }
                for d in c + 1..n {
                    if d != b && pts[c] + pts[d] == s && pts[c].norm2() + pts[d].norm2() == w {
                        out.push(Rectangle::new([pts[a], pts[b]], [pts[c], pts[d]]));
                    }
                }
            }
        }
    }
    out.sort();
    out
}

/// Weighted generation sums and the growth ratio test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationWeights {
    pub s: f64,
    pub sums: Vec<f64>,
    pub ratio: Option<f64>,
    pub threshold: Option<f64>,
    pub passes: Option<bool>,
}

/// Threshold ½·2^{|1-s|(g-4)} on S_{g-1}/S_3.
pub fn growth_threshold(g: usize, s: f64) -> f64 {
    0.5 * 2f64.powf((1.0 - s).abs() * (g as f64 - 4.0))
}

pub fn generation_weights(generations: &[Vec<Mode>], s: f64) -> Result<GenerationWeights, LatticeError> {
    if !(s.is_finite() && s > 0.0) {
        return Err(LatticeError::Invalid(format!("Sobolev exponent must be positive, got {s}")));
    }
    let sums: Vec<f64> = generations
        .iter()
        .map(|gen| gen.iter().map(|j| (j.norm2() as f64).powf(s)).sum())
        .collect();
    if sums.iter().any(|x| !x.is_finite()) {
        return Err(LatticeError::Invalid("non-finite weight".into()));
    }
    let g = generations.len();
    let (ratio, threshold, passes) = if g >= 4 {
        let r = sums[g - 2] / sums[2];
        let t = growth_threshold(g, s);
        (Some(r), Some(t), Some(r >= t))
    } else {
        (None, None, None)
    };
    Ok(GenerationWeights { s, sums, ratio, threshold, passes })
}

/// Multiply by N, re-verify, and check the right-angle margin against √fScale.
pub fn scale_and_certify(candidate: &Candidate, n: i64, f_scale: f64) -> Result<CertifiedLambda, LatticeError> {
    if n < 1 {
        return Err(LatticeError::Invalid(format!("scale N must be >= 1, got {n}")));
    }
    if !(f_scale.is_finite() && f_scale > 0.0) {
        return Err(LatticeError::Invalid(format!("fScale must be positive, got {f_scale}")));
    }
    let scaled = candidate.scaled(n);
    let mut report = verify_properties(&scaled);
    let margin = right_angle_margin(&scaled.modes().collect::<Vec<_>>());
    report.right_angle_margin = margin.clone();
    if !report.all_pass() {
        return Err(LatticeError::NotCertified(Box::new(report)));
    }
    let need = f_scale.sqrt();
    if let Some(mg) = &margin {
        if (mg.m.abs() as f64) < need {
            return Err(LatticeError::MarginViolation { margin: mg.m.abs(), need, pair: mg.pair, axis: mg.axis_point });
        }
    }
    let g = scaled.g();
    let (mut lo, mut hi) = (f64::INFINITY, 0f64);
    for j in scaled.modes() {
        lo = lo.min(j.norm());
        hi = hi.max(j.norm());
    }
    let bound_constant = (f_scale / lo).max(hi / (3f64.powi(g as i32) * f_scale)).max(1.0);
    Ok(CertifiedLambda {
        schema_version: SCHEMA_VERSION,
        g,
        generations: scaled.generations,
        tree: scaled.tree,
        scale_n: n,
        f_scale,
        bound_constant,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_rectangles(modes: &[Mode]) -> Vec<Rectangle> {
        let mut pts = modes.to_vec();
        pts.sort();
        pts.dedup();
        let n = pts.len();
        let mut out = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                for c in 0..n {
                    for d in c + 1..n {
                        if (a, b) >= (c, d) || [a, b].contains(&c) || [a, b].contains(&d) {
                            continue;
                        }
                        let (p, q, r, s) = (pts[a], pts[b], pts[c], pts[d]);
                        if p + q == r + s && p.norm2() + q.norm2() == r.norm2() + s.norm2() {
                            out.push(Rectangle::new([p, q], [r, s]));
                        }
                    }
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn unit_square_is_one_rectangle() {
        let m = [Mode::new(1, 1), Mode::new(3, 1), Mode::new(3, 3), Mode::new(1, 3)];
        let r = enumerate_rectangles(&m);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0], Rectangle::new([m[0], m[2]], [m[1], m[3]]));
    }

    #[test]
    fn fewer_than_four_points() {
        assert!(enumerate_rectangles(&[Mode::new(1, 2), Mode::new(2, 1), Mode::new(5, 5)]).is_empty());
        assert!(enumerate_rectangles(&[]).is_empty());
    }

    #[test]
    fn matches_brute_force_on_dense_grid() {
        let modes: Vec<Mode> = (-3..=3).flat_map(|m| (-3..=3).map(move |n| Mode::new(m, n))).collect();
        assert_eq!(enumerate_rectangles(&modes), brute_rectangles(&modes));
    }

    #[test]
    fn spouses_produce_corner_children() {
        // (1,1),(2,2) as diagonal spouses give children (2,1),(1,2)
        let r = enumerate_rectangles(&[Mode::new(1, 1), Mode::new(2, 2), Mode::new(2, 1), Mode::new(1, 2)]);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].diag_a, [Mode::new(1, 1), Mode::new(2, 2)]);
        assert_eq!(r[0].diag_b, [Mode::new(1, 2), Mode::new(2, 1)]);
    }

    #[test]
    fn growth_thresholds() {
        assert_eq!(growth_threshold(8, 0.5), 2.0);
        assert_eq!(growth_threshold(8, 1.0), 0.5);
        assert!((growth_threshold(8, 0.3) - 3.482202253184497).abs() < 1e-12);
        assert!((growth_threshold(8, 0.7) - 1.148698354997035).abs() < 1e-12);
    }

    #[test]
    fn weights_reject_bad_exponent() {
        assert!(generation_weights(&[vec![Mode::new(1, 1)]], 0.0).is_err());
        assert!(generation_weights(&[vec![Mode::new(1, 1)]], f64::NAN).is_err());
    }

    #[test]
    fn mode_json_is_pair() {
        assert_eq!(serde_json::to_string(&Mode::new(3, -4)).unwrap(), "[3,-4]");
        let j: Mode = serde_json::from_str("[5,6]").unwrap();
        assert_eq!(j, Mode::new(5, 6));
    }
}
