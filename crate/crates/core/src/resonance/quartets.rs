//! Enumeration of admissible tuples (p = 2 or 4) in a finite mode window.
//!
//! A tuple is split into its column part (modes above tangential sites) and its
//! free part. Admissibility fixes Σσ and Σσm of the free part from ℓ and couples
//! the y-momenta of both parts, so free pairs are looked up in a table keyed by
//! (Σσ, Σσm, Σσn) and sorted by Σσ|j|² instead of being looped over.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::lattice::Mode;
use crate::spectrum::{ell_ball, ModeKind, SpectrumError, TangentialSites};

use super::FTerms;

pub const MAX_D: usize = 8;

/// One factor a_j (σ = +1) or ā_j (σ = −1); `site` is set for column modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Item {
    pub mode: Mode,
    pub sigma: i8,
    pub site: Option<u8>,
}

impl Item {
    pub fn new(mode: Mode, sigma: i8, sites: &TangentialSites) -> Self {
        let site = match sites.kind(mode) {
            ModeKind::Column(i) => Some(i as u8),
            _ => None,
        };
        Item { mode, sigma, site }
    }

    /// Contribution to K at ε = 0.
    fn k_part(&self) -> i64 {
        let s = self.sigma as i64;
        match self.site {
            Some(_) => s * self.mode.n * self.mode.n,
            None => s * (self.mode.m * self.mode.m + self.mode.n * self.mode.n),
        }
    }
}

/// (K, ℓ, c): everything the first-order divisor K + εF(λ) depends on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Signature {
    pub k: i64,
    pub ell: [i8; MAX_D],
    pub c: [i8; MAX_D],
    pub d: u8,
}

impl Signature {
    pub fn ell(&self) -> Vec<i64> {
        self.ell[..self.d as usize].iter().map(|&x| x as i64).collect()
    }

    pub fn c(&self) -> Vec<i64> {
        self.c[..self.d as usize].iter().map(|&x| x as i64).collect()
    }

    pub fn fterms(&self) -> FTerms {
        FTerms { ell: self.ell(), c: self.c() }
    }

    pub fn ell_l1(&self) -> i64 {
        self.ell.iter().map(|&x| (x as i64).abs()).sum()
    }

    pub fn c_l1(&self) -> i64 {
        self.c.iter().map(|&x| (x as i64).abs()).sum()
    }
}

pub trait TupleVisitor {
    /// Signature-level filter consulted before a tuple is handed to `visit`.
    fn wants(&mut self, sig: &Signature) -> bool;
    fn visit(&mut self, sig: &Signature, items: &[Item]);
}

struct EllInfo {
    ell: [i8; MAX_D],
    sum: i64,
    mdot: i64,
    m2dot: i64,
}

type GroupKey = (i8, i64, i64);

struct ZPair {
    key: GroupKey,
    w: i64,
    a: u32,
    b: u32,
}

pub struct QuartetSpace {
    pub p: usize,
    d: usize,
    s_items: Vec<Item>,
    z_items: Vec<Item>,
    z_index: HashMap<(Mode, i8), u32>,
    s_index: HashMap<(Mode, i8), u32>,
    ells: Vec<EllInfo>,
    ells_by_sum: HashMap<i64, Vec<u32>>,
    kernel: Vec<u32>,
    pairs: Vec<ZPair>,
    groups: HashMap<GroupKey, (usize, usize)>,
}

fn pack(ell: &[i64]) -> [i8; MAX_D] {
    let mut a = [0i8; MAX_D];
    for (x, &y) in a.iter_mut().zip(ell) {
        *x = y as i8;
    }
    a
}

impl QuartetSpace {
    /// Modes with |m|, |n| <= window on the sublattice ℤ × Nℤ, minus the sites.
    pub fn window(sites: &TangentialSites, n_sub: i64, window: i64, ell_max: i64, p: usize, budget: usize) -> Result<Self, SpectrumError> {
        if n_sub < 1 {
            return Err(SpectrumError::Invalid(format!("sublattice N must be >= 1, got {n_sub}")));
        }
        let mut modes = Vec::new();
        for m in -window..=window {
            for n in -window..=window {
                if n % n_sub == 0 {
                    modes.push(Mode::new(m, n));
                }
            }
        }
        Self::from_modes(sites, &modes, ell_max, p, budget)
    }

    pub fn from_modes(sites: &TangentialSites, modes: &[Mode], ell_max: i64, p: usize, budget: usize) -> Result<Self, SpectrumError> {
        if p != 2 && p != 4 {
            return Err(SpectrumError::Invalid(format!("tuple order {p} is not supported (use 2 or 4)")));
        }
        let d = sites.d();
        if d > MAX_D || !(0..=100).contains(&ell_max) {
            return Err(SpectrumError::Invalid("need d <= 8 and 0 <= ell_max <= 100".into()));
        }
        let mut s_items = Vec::new();
        let mut z_items = Vec::new();
        let mut ms = modes.to_vec();
        ms.sort();
        ms.dedup();
        for &j in &ms {
            for sigma in [1i8, -1] {
                let it = Item::new(j, sigma, sites);
                match sites.kind(j) {
                    ModeKind::Tangential(_) => {}
                    ModeKind::Column(_) => s_items.push(it),
                    ModeKind::Free => z_items.push(it),
                }
            }
        }
        s_items.sort();
        z_items.sort();
        let nz = z_items.len();
        let needed = if p == 4 || nz > 0 { nz * (nz + 1) / 2 } else { 0 };
        if needed > budget {
            return Err(SpectrumError::MemoryBudget { needed, budget });
        }
        let mut ells = Vec::new();
        for ell in ell_ball(d, ell_max) {
            ells.push(EllInfo {
                ell: pack(&ell),
                sum: ell.iter().sum(),
                mdot: ell.iter().zip(&sites.m).map(|(a, b)| a * b).sum(),
                m2dot: ell.iter().zip(&sites.m).map(|(a, b)| a * b * b).sum(),
            });
        }
        let mut ells_by_sum: HashMap<i64, Vec<u32>> = HashMap::new();
        for (i, e) in ells.iter().enumerate() {
            ells_by_sum.entry(e.sum).or_default().push(i as u32);
        }
        let kernel = (0..ells.len() as u32).filter(|&i| ells[i as usize].sum == 0 && ells[i as usize].mdot == 0).collect();
        let mut pairs = Vec::with_capacity(needed);
        for a in 0..nz {
            for b in a..nz {
                let (x, y) = (z_items[a], z_items[b]);
                let (sx, sy) = (x.sigma as i64, y.sigma as i64);
                pairs.push(ZPair {
                    key: ((sx + sy) as i8, sx * x.mode.m + sy * y.mode.m, sx * x.mode.n + sy * y.mode.n),
                    w: x.k_part() + y.k_part(),
                    a: a as u32,
                    b: b as u32,
                });
            }
        }
        pairs.sort_unstable_by_key(|e| (e.key, e.w, e.a, e.b));
        let mut groups = HashMap::new();
        let mut i = 0;
        while i < pairs.len() {
            let mut e = i + 1;
            while e < pairs.len() && pairs[e].key == pairs[i].key {
                e += 1;
            }
            groups.insert(pairs[i].key, (i, e));
            i = e;
        }
        let idx = |v: &[Item]| v.iter().enumerate().map(|(i, it)| ((it.mode, it.sigma), i as u32)).collect();
        Ok(QuartetSpace {
            p,
            d,
            z_index: idx(&z_items),
            s_index: idx(&s_items),
            s_items,
            z_items,
            ells,
            ells_by_sum,
            kernel,
            pairs,
            groups,
        })
    }

    pub fn column_items(&self) -> &[Item] {
        &self.s_items
    }

    pub fn free_items(&self) -> &[Item] {
        &self.z_items
    }

    /// Free pairs with the given (Σσ, Σσm, Σσn) and Σσ|j|² in [wlo, whi].
    fn pair_range(&self, key: GroupKey, wlo: i64, whi: i64) -> &[ZPair] {
        let Some(&(lo, hi)) = self.groups.get(&key) else { return &[] };
        let g = &self.pairs[lo..hi];
        let a = g.partition_point(|e| e.w < wlo);
        let b = g.partition_point(|e| e.w <= whi);
        &g[a..b.max(a)]
    }

    fn emit(&self, v: &mut dyn TupleVisitor, e: &EllInfo, k: i64, c: &[i64; MAX_D], items: &[Item]) {
        let mut cc = [0i8; MAX_D];
        for (x, &y) in cc.iter_mut().zip(c) {
            *x = y as i8;
        }
        let sig = Signature { k, ell: e.ell, c: cc, d: self.d as u8 };
        if v.wants(&sig) {
            v.visit(&sig, items);
        }
    }

    fn add_c(c: &mut [i64; MAX_D], it: &Item) {
        if let Some(s) = it.site {
            c[s as usize] += it.sigma as i64;
        }
    }

    /// Visits every admissible tuple (as a multiset) with K in [kmin, kmax].
    pub fn for_each(&self, kmin: i64, kmax: i64, v: &mut dyn TupleVisitor) {
        if self.p == 2 {
            self.pairs_p2(kmin, kmax, v);
        } else {
            self.quartets_s0(kmin, kmax, v);
            self.quartets_s1(kmin, kmax, v);
            self.quartets_s2(kmin, kmax, v);
            self.quartets_s3(kmin, kmax, v);
            self.quartets_s4(kmin, kmax, v);
        }
    }

    fn ells_with_sum(&self, s: i64) -> &[u32] {
        self.ells_by_sum.get(&s).map_or(&[], Vec::as_slice)
    }

    fn pairs_p2(&self, kmin: i64, kmax: i64, v: &mut dyn TupleVisitor) {
        let zero = [0i64; MAX_D];
        // two free modes
        for e in &self.ells {
            for q in self.pair_range(((-e.sum) as i8, -e.mdot, 0), kmin - e.m2dot, kmax - e.m2dot) {
                let items = [self.z_items[q.a as usize], self.z_items[q.b as usize]];
                self.emit(v, e, e.m2dot + q.w, &zero, &items);
            }
        }
        // one column mode, one free mode fixed by the selection rules
        for s in &self.s_items {
            let mut c = zero;
            Self::add_c(&mut c, s);
            for sz in [1i64, -1] {
                for &ei in self.ells_with_sum(-sz) {
                    let e = &self.ells[ei as usize];
                    let j = Mode::new(-sz * e.mdot, -sz * (s.sigma as i64 * s.mode.n));
                    let Some(&zi) = self.z_index.get(&(j, sz as i8)) else { continue };
                    let z = self.z_items[zi as usize];
                    let k = e.m2dot + s.k_part() + z.k_part();
                    if (kmin..=kmax).contains(&k) {
                        self.emit(v, e, k, &c, &[*s, z]);
                    }
                }
            }
        }
        // two column modes
        for i in 0..self.s_items.len() {
            for j in i..self.s_items.len() {
                let (a, b) = (self.s_items[i], self.s_items[j]);
                if a.sigma as i64 * a.mode.n + b.sigma as i64 * b.mode.n != 0 {
                    continue;
                }
                let mut c = zero;
                Self::add_c(&mut c, &a);
                Self::add_c(&mut c, &b);
                for &ei in &self.kernel {
                    let e = &self.ells[ei as usize];
                    let k = e.m2dot + a.k_part() + b.k_part();
                    if (kmin..=kmax).contains(&k) {
                        self.emit(v, e, k, &c, &[a, b]);
                    }
                }
            }
        }
    }

    fn quartets_s0(&self, kmin: i64, kmax: i64, v: &mut dyn TupleVisitor) {
        let zero = [0i64; MAX_D];
        for p in &self.pairs {
            let (sp, xp, yp) = p.key;
            for sq in [-2i64, 0, 2] {
                for &ei in self.ells_with_sum(-(sp as i64 + sq)) {
                    let e = &self.ells[ei as usize];
                    let base = e.m2dot + p.w;
                    for q in self.pair_range((sq as i8, -e.mdot - xp, -yp), kmin - base, kmax - base) {
                        if q.a < p.b {
                            continue;
                        }
                        let items = [
                            self.z_items[p.a as usize],
                            self.z_items[p.b as usize],
                            self.z_items[q.a as usize],
                            self.z_items[q.b as usize],
                        ];
                        self.emit(v, e, base + q.w, &zero, &items);
                    }
                }
            }
        }
    }

    fn quartets_s1(&self, kmin: i64, kmax: i64, v: &mut dyn TupleVisitor) {
        for s in &self.s_items {
            let mut c = [0i64; MAX_D];
            Self::add_c(&mut c, s);
            let ys = s.sigma as i64 * s.mode.n;
            for (zi, z) in self.z_items.iter().enumerate() {
                let sz = z.sigma as i64;
                for sq in [-2i64, 0, 2] {
                    for &ei in self.ells_with_sum(-(sz + sq)) {
                        let e = &self.ells[ei as usize];
                        let base = e.m2dot + s.k_part() + z.k_part();
                        let key = (sq as i8, -e.mdot - sz * z.mode.m, -ys - sz * z.mode.n);
                        for q in self.pair_range(key, kmin - base, kmax - base) {
                            if (q.a as usize) < zi {
                                continue;
                            }
                            let items = [*s, *z, self.z_items[q.a as usize], self.z_items[q.b as usize]];
                            self.emit(v, e, base + q.w, &c, &items);
                        }
                    }
                }
            }
        }
    }

    fn quartets_s2(&self, kmin: i64, kmax: i64, v: &mut dyn TupleVisitor) {
        let ns = self.s_items.len();
        for i in 0..ns {
            for j in i..ns {
                let (a, b) = (self.s_items[i], self.s_items[j]);
                let mut c = [0i64; MAX_D];
                Self::add_c(&mut c, &a);
                Self::add_c(&mut c, &b);
                let ys = a.sigma as i64 * a.mode.n + b.sigma as i64 * b.mode.n;
                for sq in [-2i64, 0, 2] {
                    for &ei in self.ells_with_sum(-sq) {
                        let e = &self.ells[ei as usize];
                        let base = e.m2dot + a.k_part() + b.k_part();
                        for q in self.pair_range((sq as i8, -e.mdot, -ys), kmin - base, kmax - base) {
                            let items = [a, b, self.z_items[q.a as usize], self.z_items[q.b as usize]];
                            self.emit(v, e, base + q.w, &c, &items);
                        }
                    }
                }
            }
        }
    }

    fn quartets_s3(&self, kmin: i64, kmax: i64, v: &mut dyn TupleVisitor) {
        let ns = self.s_items.len();
        for i in 0..ns {
            for j in i..ns {
                for l in j..ns {
                    let t = [self.s_items[i], self.s_items[j], self.s_items[l]];
                    let mut c = [0i64; MAX_D];
                    t.iter().for_each(|it| Self::add_c(&mut c, it));
                    let ys: i64 = t.iter().map(|it| it.sigma as i64 * it.mode.n).sum();
                    let ks: i64 = t.iter().map(Item::k_part).sum();
                    for sz in [1i64, -1] {
                        for &ei in self.ells_with_sum(-sz) {
                            let e = &self.ells[ei as usize];
                            let j4 = Mode::new(-sz * e.mdot, -sz * ys);
                            let Some(&zi) = self.z_index.get(&(j4, sz as i8)) else { continue };
                            let z = self.z_items[zi as usize];
                            let k = e.m2dot + ks + z.k_part();
                            if (kmin..=kmax).contains(&k) {
                                self.emit(v, e, k, &c, &[t[0], t[1], t[2], z]);
                            }
                        }
                    }
                }
            }
        }
    }

    fn quartets_s4(&self, kmin: i64, kmax: i64, v: &mut dyn TupleVisitor) {
        if self.kernel.is_empty() {
            return;
        }
        let ns = self.s_items.len();
        let site_ms: Vec<i64> = {
            let mut v: Vec<i64> = self.s_items.iter().map(|it| it.mode.m).collect();
            v.dedup();
            v.sort();
            v.dedup();
            v
        };
        for i in 0..ns {
            for j in i..ns {
                for l in j..ns {
                    let t = [self.s_items[i], self.s_items[j], self.s_items[l]];
                    let ys: i64 = t.iter().map(|it| it.sigma as i64 * it.mode.n).sum();
                    for &m in &site_ms {
                        for s4 in [1i64, -1] {
                            let j4 = Mode::new(m, -s4 * ys);
                            let Some(&qi) = self.s_index.get(&(j4, s4 as i8)) else { continue };
                            if (qi as usize) < l {
                                continue;
                            }
                            let q = self.s_items[qi as usize];
                            let items = [t[0], t[1], t[2], q];
                            let mut c = [0i64; MAX_D];
                            items.iter().for_each(|it| Self::add_c(&mut c, it));
                            let ks: i64 = items.iter().map(Item::k_part).sum();
                            for &ei in &self.kernel {
                                let e = &self.ells[ei as usize];
                                let k = e.m2dot + ks;
                                if (kmin..=kmax).contains(&k) {
                                    self.emit(v, e, k, &c, &items);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::resonance::{is_admissible, k_and_f};

    type Key = (i64, Vec<i64>, Vec<i64>, Vec<Item>);

    struct Collect(BTreeSet<Key>, usize);

    impl TupleVisitor for Collect {
        fn wants(&mut self, _: &Signature) -> bool {
            true
        }
        fn visit(&mut self, sig: &Signature, items: &[Item]) {
            let mut it = items.to_vec();
            it.sort();
            self.1 += 1;
            self.0.insert((sig.k, sig.ell(), sig.c(), it));
        }
    }

    /// Every multiset of p items and every ℓ, filtered by the selection rules.
    fn brute(sites: &TangentialSites, space: &QuartetSpace, ell_max: i64, p: usize, kmin: i64, kmax: i64) -> BTreeSet<Key> {
        let mut all: Vec<Item> = space.column_items().iter().chain(space.free_items()).copied().collect();
        all.sort();
        let n = all.len();
        let ells = ell_ball(sites.d(), ell_max);
        let mut out = BTreeSet::new();
        let mut check = |items: Vec<Item>| {
            let modes: Vec<Mode> = items.iter().map(|i| i.mode).collect();
            let sigma: Vec<i8> = items.iter().map(|i| i.sigma).collect();
            for ell in &ells {
                if is_admissible(&modes, ell, &sigma, sites, 1).unwrap() {
                    let (k, f) = k_and_f(&modes, ell, &sigma, sites).unwrap();
                    if (kmin..=kmax).contains(&k) {
                        out.insert((k, ell.clone(), f.c.clone(), items.clone()));
                    }
                }
            }
        };
        if p == 2 {
            for a in 0..n {
                for b in a..n {
                    check(vec![all[a], all[b]]);
                }
            }
        } else {
            for a in 0..n {
                for b in a..n {
                    for c in b..n {
                        for d in c..n {
                            check(vec![all[a], all[b], all[c], all[d]]);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn quartets_match_brute_force() {
        let sites = TangentialSites::unchecked(vec![1, 2]);
        let space = QuartetSpace::window(&sites, 1, 2, 2, 4, 1 << 20).unwrap();
        let mut c = Collect(BTreeSet::new(), 0);
        space.for_each(-3, 3, &mut c);
        assert_eq!(c.0.len(), c.1, "a multiset was visited twice");
        assert_eq!(c.0, brute(&sites, &space, 2, 4, -3, 3));
    }

    #[test]
    fn quartets_match_brute_force_three_sites() {
        let sites = TangentialSites::unchecked(vec![-1, 1, 2]);
        let modes: Vec<Mode> = [(-1, 1), (-1, -2), (1, 2), (1, -1), (2, 1), (2, -1), (0, 1), (3, 2), (0, -1), (-2, 0), (1, 3)]
            .iter()
            .map(|&(m, n)| Mode::new(m, n))
            .collect();
        let space = QuartetSpace::from_modes(&sites, &modes, 2, 4, 1 << 20).unwrap();
        let mut c = Collect(BTreeSet::new(), 0);
        space.for_each(-6, 6, &mut c);
        assert_eq!(c.0.len(), c.1);
        assert_eq!(c.0, brute(&sites, &space, 2, 4, -6, 6));
    }

    #[test]
    fn pairs_match_brute_force() {
        let sites = TangentialSites::unchecked(vec![1, 2]);
        let space = QuartetSpace::window(&sites, 1, 3, 3, 2, 1 << 20).unwrap();
        let mut c = Collect(BTreeSet::new(), 0);
        space.for_each(-5, 5, &mut c);
        assert_eq!(c.0.len(), c.1);
        assert_eq!(c.0, brute(&sites, &space, 3, 2, -5, 5));
    }

    #[test]
    fn budget_is_enforced() {
        let sites = TangentialSites::unchecked(vec![1, 2]);
        assert!(matches!(QuartetSpace::window(&sites, 1, 20, 6, 4, 1000), Err(SpectrumError::MemoryBudget { .. })));
    }
}
