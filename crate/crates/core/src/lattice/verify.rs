use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{enumerate_rectangles, Candidate, Mode, Rectangle};

pub const PROPERTY_NAMES: [&str; 8] = ["closure", "one-parent-family", "one-child-family", "sibling-not-spouse", "rectangles-are-families", "nondegenerate", "off-axis", "no-origin-right-angle"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub pass: bool,
    /// Violating tuple, empty on pass.
    pub witness: Vec<Mode>,
    pub detail: String,
}

/// Smallest |m| over axis points (m,0) forming a right angle with a pair of modes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RightAngleMargin {
    pub m: i64,
    pub pair: [Mode; 2],
    pub axis_point: Mode,
    /// 1: right angle at a mode of the pair; 2: right angle at the axis point.
    pub case: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub checks: Vec<PropertyCheck>,
    pub rectangle_count: usize,
    pub nuclear_family_count: usize,
    pub right_angle_margin: Option<RightAngleMargin>,
}

impl Default for PropertyReport {
    fn default() -> Self {
        PropertyReport {
            checks: PROPERTY_NAMES
                .iter()
                .map(|n| PropertyCheck { name: n.to_string(), pass: false, witness: vec![], detail: "not checked".into() })
                .collect(),
            rectangle_count: 0,
            nuclear_family_count: 0,
            right_angle_margin: None,
        }
    }
}

impl PropertyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.len() == 8 && self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Verdicts and counts, without witnesses (which scale with the set).
    pub fn verdicts(&self) -> (Vec<bool>, usize, usize) {
        (self.checks.iter().map(|c| c.pass).collect(), self.rectangle_count, self.nuclear_family_count)
    }

    pub fn failures(&self) -> Vec<&PropertyCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

impl std::fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let fails = self.failures();
        if fails.is_empty() {
            return write!(f, "all properties pass ({} rectangles)", self.rectangle_count);
        }
        let parts: Vec<String> = fails
            .iter()
            .map(|c| {
                let w: Vec<String> = c.witness.iter().map(Mode::to_string).collect();
                format!("{} fails: {} [{}]", c.name, c.detail, w.join(" "))
            })
            .collect();
        write!(f, "{}", parts.join("; "))
    }
}

struct Checker {
    checks: Vec<PropertyCheck>,
}

impl Checker {
    fn fail(&mut self, name: &str, witness: Vec<Mode>, detail: impl Into<String>) {
        let c = self.checks.iter_mut().find(|c| c.name == name).expect("known property");
        if c.pass {
            c.pass = false;
            c.witness = witness;
            c.detail = detail.into();
        }
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.unsigned_abs(), b.unsigned_abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a as i64
}

/// Checks every property by explicit enumeration.
pub fn verify_properties(c: &Candidate) -> PropertyReport {
    let mut ck = Checker {
        checks: PROPERTY_NAMES
            .iter()
            .map(|n| PropertyCheck { name: n.to_string(), pass: true, witness: vec![], detail: String::new() })
            .collect(),
    };
    let g = c.g();
    let all: Vec<Mode> = c.modes().collect();
    let mut loc: HashMap<Mode, (usize, usize)> = HashMap::with_capacity(all.len());
    for (k, gen) in c.generations.iter().enumerate() {
        for (i, &j) in gen.iter().enumerate() {
            if loc.insert(j, (k, i)).is_some() {
                ck.fail("nondegenerate", vec![j, j], "repeated mode (j1 - j2 = 0)");
            }
        }
    }
    let n = all.len();

    // off-axis
    if let Some(&j) = all.iter().find(|j| j.m == 0 || j.n == 0) {
        ck.fail("off-axis", vec![j], "mode on a coordinate axis");
    }

    // no-origin-right-angle: the triangle (0, a, b) has a right angle at any vertex
    'viii: for a in 0..n {
        for b in a + 1..n {
            let (p, q) = (all[a], all[b]);
            let d = p.dot(q);
            if d == 0 || d == p.norm2() || d == q.norm2() {
                ck.fail("no-origin-right-angle", vec![p, q], format!("right triangle with the origin (dot = {d})"));
                break 'viii;
            }
        }
    }

    // nondegenerate
    if let Some(&j) = all.iter().find(|&&j| loc.contains_key(&-j)) {
        ck.fail("nondegenerate", vec![j, -j], "antipodal pair (j1 + j2 = 0)");
    }
    let mut sums: Vec<(Mode, u32, u32)> = Vec::with_capacity(n * (n + 1) / 2);
    for a in 0..n {
        for b in a..n {
            sums.push((all[a] + all[b], a as u32, b as u32));
        }
    }
    sums.sort_unstable();
    for &(s, a, b) in &sums {
        if loc.contains_key(&s) {
            ck.fail("nondegenerate", vec![all[a as usize], s, all[b as usize]], "three-term relation j1 - j2 + j3 = 0");
            break;
        }
    }
    let is_family = |p: [Mode; 2], q: [Mode; 2]| -> bool {
        let (Some(&(k1, i1)), Some(&(k2, i2))) = (loc.get(&p[0]), loc.get(&p[1])) else { return false };
        let (Some(&(k3, c1)), Some(&(k4, c2))) = (loc.get(&q[0]), loc.get(&q[1])) else { return false };
        if k1 != k2 || k3 != k4 || k3 != k1 + 1 || c.tree.spouse[k1][i1] != Some(i2) {
            return false;
        }
        c.tree.children[k1][i1] == Some([c1.min(c2), c1.max(c2)])
    };
    let mut i = 0;
    while i < sums.len() {
        let mut e = i + 1;
        while e < sums.len() && sums[e].0 == sums[i].0 {
            e += 1;
        }
        if e - i > 1 {
            let grp = &sums[i..e];
            let pair = |t: &(Mode, u32, u32)| [all[t.1 as usize], all[t.2 as usize]];
            let ok = grp.len() == 2 && {
                let (p, q) = (pair(&grp[0]), pair(&grp[1]));
                is_family(p, q) || is_family(q, p)
            };
            if !ok {
                let w: Vec<Mode> = grp.iter().take(2).flat_map(pair).collect();
                ck.fail("nondegenerate", vec![w[0], w[2], w[1], w[3]], format!("{} pairs share a sum outside a family", grp.len()));
            }
        }
        i = e;
    }
    drop(sums);

    // rectangles and family structure
    let rects = enumerate_rectangles(&all);
    let gen_of = |j: Mode| loc[&j].0;
    let mut families: Vec<Rectangle> = Vec::new();
    for r in &rects {
        let (ka, kb) = ((gen_of(r.diag_a[0]), gen_of(r.diag_a[1])), (gen_of(r.diag_b[0]), gen_of(r.diag_b[1])));
        let geometric = ka.0 == ka.1 && kb.0 == kb.1 && (ka.0 + 1 == kb.0 || kb.0 + 1 == ka.0);
        if geometric {
            families.push(*r);
        } else {
            ck.fail("rectangles-are-families", r.vertices().to_vec(), "rectangle that is not a nuclear family");
        }
    }
    // parent diagonal first
    let oriented: Vec<([Mode; 2], [Mode; 2])> = families
        .iter()
        .map(|r| if gen_of(r.diag_a[0]) < gen_of(r.diag_b[0]) { (r.diag_a, r.diag_b) } else { (r.diag_b, r.diag_a) })
        .collect();
    let mut as_parent: HashMap<Mode, Vec<usize>> = HashMap::new();
    let mut as_child: HashMap<Mode, Vec<usize>> = HashMap::new();
    for (f, (p, ch)) in oriented.iter().enumerate() {
        for &j in p {
            as_parent.entry(j).or_default().push(f);
        }
        for &j in ch {
            as_child.entry(j).or_default().push(f);
        }
    }
    for (k, gen) in c.generations.iter().enumerate() {
        for &j in gen {
            let np = as_parent.get(&j).map_or(0, Vec::len);
            let nc = as_child.get(&j).map_or(0, Vec::len);
            if k + 1 < g && np != 1 {
                ck.fail("one-parent-family", vec![j], format!("mode is a parent in {np} nuclear families"));
            }
            if k + 1 == g && np != 0 {
                ck.fail("one-parent-family", vec![j], "last-generation mode is a parent");
            }
            if k > 0 && nc != 1 {
                ck.fail("one-child-family", vec![j], format!("mode is a child in {nc} nuclear families"));
            }
            if k == 0 && nc != 0 {
                ck.fail("one-child-family", vec![j], "first-generation mode is a child");
            }
        }
    }
    for (p, ch) in &oriented {
        if !is_family(*p, *ch) {
            ck.fail("one-parent-family", vec![p[0], ch[0], p[1], ch[1]], "nuclear family disagrees with the family tree");
        }
    }
    // sibling-not-spouse: a mode's sibling (from its child family) differs from its spouse (from its parent family)
    for (&j, pf) in &as_parent {
        let Some(cf) = as_child.get(&j) else { continue };
        let spouse = oriented[pf[0]].0.iter().copied().find(|&x| x != j);
        let sibling = oriented[cf[0]].1.iter().copied().find(|&x| x != j);
        if spouse.is_some() && spouse == sibling {
            ck.fail("sibling-not-spouse", vec![j, spouse.unwrap()], "sibling equals spouse");
        }
    }
    for (k, gen) in c.generations.iter().enumerate() {
        for (i, &j) in gen.iter().enumerate() {
            if let (Some(s), Some(b)) = (c.tree.spouse[k][i], c.tree.sibling[k][i]) {
                if s == b {
                    ck.fail("sibling-not-spouse", vec![j, gen[s]], "tree sibling equals tree spouse");
                }
            }
        }
    }

    // closure: right angle at apex p between q1, q2 requires q1 + q2 - p in the set
    let set: HashSet<Mode> = all.iter().copied().collect();
    let mut dirs: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
    'closure: for (pi, &p) in all.iter().enumerate() {
        dirs.clear();
        for (qi, &q) in all.iter().enumerate() {
            if qi == pi {
                continue;
            }
            let v = q - p;
            let d = gcd(v.m, v.n);
            dirs.entry((v.m / d, v.n / d)).or_default().push(qi as u32);
        }
        for (&(a, b), q1s) in &dirs {
            // each perpendicular pair is found from both sides; take rot90 only
            let Some(q2s) = dirs.get(&(-b, a)) else { continue };
            for &q1 in q1s {
                for &q2 in q2s {
                    let r = all[q1 as usize] + all[q2 as usize] - p;
                    if !set.contains(&r) {
                        ck.fail("closure", vec![all[q1 as usize], p, all[q2 as usize], r], "fourth vertex missing");
                        break 'closure;
                    }
                }
            }
        }
    }

    PropertyReport {
        checks: ck.checks,
        rectangle_count: rects.len(),
        nuclear_family_count: families.len(),
        right_angle_margin: None,
    }
}

fn isqrt(x: i128) -> Option<i128> {
    if x < 0 {
        return None;
    }
    let mut r = (x as f64).sqrt() as i128;
    while r * r > x {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= x {
        r += 1;
    }
    Some(r)
}

fn better(best: &mut Option<RightAngleMargin>, cand: RightAngleMargin) {
    let replace = match best {
        None => true,
        Some(b) => (cand.m.abs(), cand.m, cand.pair, cand.case) < (b.m.abs(), b.m, b.pair, b.case),
    };
    if replace {
        *best = Some(cand);
    }
}

/// Minimum |m| over integer axis points (m,0) forming a right angle with two modes.
///
/// Case 1: right angle at j2, so m = m2 + (n1-n2)n2/(m1-m2) when integral.
/// Case 2: right angle at (m,0), so m² - (m1+m2)m + m1m2 + n1n2 = 0.
pub fn right_angle_margin(modes: &[Mode]) -> Option<RightAngleMargin> {
    let mut best = None;
    for (a, &j1) in modes.iter().enumerate() {
        for (b, &j2) in modes.iter().enumerate() {
            if a == b || j1 == j2 {
                continue;
            }
            let (m1, n1, m2, n2) = (j1.m as i128, j1.n as i128, j2.m as i128, j2.n as i128);
            if m1 != m2 {
                let num = (n1 - n2) * n2;
                if num % (m1 - m2) == 0 {
                    let m = m2 + num / (m1 - m2);
                    let ax = Mode::new(m as i64, 0);
                    if ax != j1 && ax != j2 {
                        better(&mut best, RightAngleMargin { m: m as i64, pair: [j1, j2], axis_point: ax, case: 1 });
                    }
                }
            }
            if a < b {
                let disc = (m1 - m2) * (m1 - m2) - 4 * n1 * n2;
                if let Some(r) = isqrt(disc).filter(|r| r * r == disc) {
                    for s in [m1 + m2 - r, m1 + m2 + r] {
                        if s % 2 == 0 {
                            let ax = Mode::new((s / 2) as i64, 0);
                            if ax != j1 && ax != j2 {
                                better(&mut best, RightAngleMargin { m: ax.m, pair: [j1, j2], axis_point: ax, case: 2 });
                            }
                        }
                    }
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_prototype, BuildOptions, FamilyTree};

    fn g2_candidate() -> Candidate {
        let mut t = FamilyTree::empty(&[2, 2]);
        t.spouse[0] = vec![Some(1), Some(0)];
        t.children[0] = vec![Some([0, 1]), Some([0, 1])];
        t.sibling[1] = vec![Some(1), Some(0)];
        t.parents[1] = vec![Some([0, 1]), Some([0, 1])];
        Candidate {
            generations: vec![vec![Mode::new(1, 1), Mode::new(2, 2)], vec![Mode::new(1, 2), Mode::new(2, 1)]],
            tree: t,
        }
    }

    #[test]
    fn unit_square_family_fails_vi() {
        let r = verify_properties(&g2_candidate());
        let vi = r.check("nondegenerate").unwrap();
        assert!(!vi.pass);
        // the witness is a genuine relation j1 - j2 + j3 (- j4) = 0
        let w = &vi.witness;
        if w.len() == 3 {
            assert_eq!(w[0] - w[1] + w[2], Mode::new(0, 0));
        } else {
            assert_eq!(w[0] - w[1] + w[2] - w[3], Mode::new(0, 0));
        }
        // (1,1) - (2,1) + (2,2) = (1,2) is such a relation
        assert_eq!(Mode::new(1, 1) - Mode::new(2, 1) + Mode::new(2, 2), Mode::new(1, 2));
        assert_eq!(r.rectangle_count, 1);
        assert_eq!(r.nuclear_family_count, 1);
    }

    #[test]
    fn axis_point_fails_vii() {
        let mut c = g2_candidate();
        c.generations[1][0] = Mode::new(0, 5);
        let r = verify_properties(&c);
        assert_eq!(r.check("off-axis").unwrap().witness, vec![Mode::new(0, 5)]);
    }

    #[test]
    fn planted_triple_fails_vi() {
        let mut c = build_prototype(4, 7, &BuildOptions { spread: 1e3, ..BuildOptions::for_generations(4) }).unwrap();
        let (a, b) = (c.generations[3][0], c.generations[3][1]);
        c.generations[3][2] = a + b;
        let r = verify_properties(&c);
        let vi = r.check("nondegenerate").unwrap();
        assert!(!vi.pass);
        assert_eq!(vi.witness.len(), 3);
        assert_eq!(vi.witness[0] - vi.witness[1] + vi.witness[2], Mode::new(0, 0));
    }

    #[test]
    fn orthogonal_pair_fails_viii() {
        let mut c = g2_candidate();
        c.generations = vec![vec![Mode::new(3, 4), Mode::new(-8, 6)], vec![Mode::new(101, 7), Mode::new(13, 201)]];
        let r = verify_properties(&c);
        assert!(!r.check("no-origin-right-angle").unwrap().pass);
    }

    #[test]
    fn certified_g4() {
        let c = build_prototype(4, 7, &BuildOptions { spread: 1e3, ..BuildOptions::for_generations(4) }).unwrap();
        let r = verify_properties(&c);
        assert!(r.all_pass(), "{r}");
        assert_eq!(r.rectangle_count, 4 * 3);
        assert_eq!(r.nuclear_family_count, 12);
    }

    #[test]
    fn isqrt_exact() {
        for x in [0i128, 1, 2, 3, 4, 15, 16, 17, 1 << 80, (1 << 80) - 1] {
            let r = isqrt(x).unwrap();
            assert!(r * r <= x && (r + 1) * (r + 1) > x);
        }
        assert!(isqrt(-1).is_none());
    }

    fn brute_margin(modes: &[Mode], bound: i64) -> Option<i64> {
        let mut best: Option<i64> = None;
        for m in -bound..=bound {
            let ax = Mode::new(m, 0);
            for (a, &p) in modes.iter().enumerate() {
                for &q in &modes[a + 1..] {
                    if ax == p || ax == q {
                        continue;
                    }
                    let right = (p - q).dot(ax - q) == 0 || (q - p).dot(ax - p) == 0 || (p - ax).dot(q - ax) == 0;
                    if right && best.is_none_or(|b| m.abs() < b) {
                        best = Some(m.abs());
                    }
                }
            }
        }
        best
    }

    #[test]
    fn margin_matches_scan_on_small_sets() {
        use rand::Rng;
        let mut r = crate::rng::stream(11, 0);
        for _ in 0..40 {
            let mut modes: Vec<Mode> = (0..6)
                .map(|_| Mode::new(r.gen_range(-12..=12), r.gen_range(1..=12) * if r.gen() { 1 } else { -1 }))
                .collect();
            modes.sort();
            modes.dedup();
            // every axis solution is bounded by the coordinates involved
            let got = right_angle_margin(&modes).map(|x| x.m.abs());
            assert_eq!(got, brute_margin(&modes, 400), "{modes:?}");
        }
    }
}
