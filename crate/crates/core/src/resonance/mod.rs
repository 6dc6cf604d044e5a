//! Selection rules, admissibility and the resonant sets of degree 0 and 2.

mod audit;
mod quartets;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::Mode;
use crate::spectrum::{ModeKind, TangentialSites};

pub use audit::{nonresonance_audit, AuditOptions, AuditReport, AuditTuple};
pub use quartets::{Item, QuartetSpace, Signature, TupleVisitor, MAX_D};

/// Default cutoff for |m₄| in the third family of resonances.
pub const DEFAULT_M0_CUTOFF: i64 = 32;

#[derive(Debug, Error, PartialEq)]
pub enum ResonanceError {
    #[error("mode {0} is a tangential site")]
    TangentialMode(Mode),
    #[error("mode {0} is outside the sublattice Z x {1}Z")]
    OffSublattice(Mode, i64),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Exponents of e^{iℓ·θ} 𝒴^l a^α ā^β.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MonomialIndex {
    pub ell: Vec<i64>,
    pub l: Vec<u32>,
    pub alpha: BTreeMap<Mode, u32>,
    pub beta: BTreeMap<Mode, u32>,
}

impl MonomialIndex {
    pub fn new(d: usize) -> Self {
        MonomialIndex { ell: vec![0; d], l: vec![0; d], alpha: BTreeMap::new(), beta: BTreeMap::new() }
    }

    pub fn d(&self) -> usize {
        self.ell.len()
    }

    /// e^{iℓ·θ} ∏ a_{j_k}^{σ_k}, with σ = +1 for a and −1 for ā.
    pub fn from_tuple(modes: &[Mode], sigma: &[i8], ell: &[i64]) -> Self {
        let mut idx = MonomialIndex::new(ell.len());
        idx.ell = ell.to_vec();
        for (&j, &s) in modes.iter().zip(sigma) {
            let map = if s > 0 { &mut idx.alpha } else { &mut idx.beta };
            *map.entry(j).or_insert(0) += 1;
        }
        idx
    }

    pub fn with_ell(mut self, ell: &[i64]) -> Self {
        self.ell = ell.to_vec();
        self
    }

    pub fn with_y(mut self, l: &[u32]) -> Self {
        self.l = l.to_vec();
        self
    }

    pub fn with_a(mut self, j: Mode, k: u32) -> Self {
        if k > 0 {
            *self.alpha.entry(j).or_insert(0) += k;
        }
        self
    }

    pub fn with_abar(mut self, j: Mode, k: u32) -> Self {
        if k > 0 {
            *self.beta.entry(j).or_insert(0) += k;
        }
        self
    }

    /// 2|l| + |α| + |β| − 2.
    pub fn degree(&self) -> i64 {
        let l: i64 = self.l.iter().map(|&x| x as i64).sum();
        let a: i64 = self.alpha.values().map(|&x| x as i64).sum();
        let b: i64 = self.beta.values().map(|&x| x as i64).sum();
        2 * l + a + b - 2
    }

    /// Index of the product of two monomials.
    pub fn product(&self, o: &MonomialIndex) -> MonomialIndex {
        let mut r = self.clone();
        for (x, y) in r.ell.iter_mut().zip(&o.ell) {
            *x += y;
        }
        for (x, y) in r.l.iter_mut().zip(&o.l) {
            *x += y;
        }
        for (&j, &k) in &o.alpha {
            *r.alpha.entry(j).or_insert(0) += k;
        }
        for (&j, &k) in &o.beta {
            *r.beta.entry(j).or_insert(0) += k;
        }
        r
    }

    /// Index of the complex conjugate monomial.
    pub fn conjugate(&self) -> MonomialIndex {
        MonomialIndex {
            ell: self.ell.iter().map(|x| -x).collect(),
            l: self.l.clone(),
            alpha: self.beta.clone(),
            beta: self.alpha.clone(),
        }
    }

    pub fn modes(&self) -> impl Iterator<Item = Mode> + '_ {
        self.alpha.keys().chain(self.beta.keys()).copied()
    }
}

/// Mass and momentum charges of a monomial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SelectionProfile {
    pub eta: i64,
    pub eta_ell: i64,
    pub pi_x: i64,
    pub pi_y: i64,
    pub pi_ell: i64,
    /// Restricted to modes off the site columns.
    pub eta_tilde: i64,
    pub pi_x_tilde: i64,
}

impl SelectionProfile {
    /// Commutes with the reduced mass and momenta.
    pub fn balanced(&self) -> bool {
        self.eta_tilde + self.eta_ell == 0 && self.pi_x_tilde + self.pi_ell == 0 && self.pi_y == 0
    }
}

pub fn selection_profile(idx: &MonomialIndex, sites: &TangentialSites) -> SelectionProfile {
    let mut p = SelectionProfile {
        eta_ell: idx.ell.iter().sum(),
        pi_ell: idx.ell.iter().zip(&sites.m).map(|(a, b)| a * b).sum(),
        ..Default::default()
    };
    let mut add = |j: Mode, k: i64| {
        p.eta += k;
        p.pi_x += k * j.m;
        p.pi_y += k * j.n;
        if sites.kind(j) == ModeKind::Free {
            p.eta_tilde += k;
            p.pi_x_tilde += k * j.m;
        }
    };
    for (&j, &k) in &idx.alpha {
        add(j, k as i64);
    }
    for (&j, &k) in &idx.beta {
        add(j, -(k as i64));
    }
    p
}

fn check_modes(modes: &[Mode], sites: &TangentialSites, n: i64) -> Result<(), ResonanceError> {
    if n < 1 {
        return Err(ResonanceError::Invalid(format!("sublattice N must be >= 1, got {n}")));
    }
    for &j in modes {
        if let ModeKind::Tangential(_) = sites.kind(j) {
            return Err(ResonanceError::TangentialMode(j));
        }
        if j.n % n != 0 {
            return Err(ResonanceError::OffSublattice(j, n));
        }
    }
    Ok(())
}

fn check_shape(modes: &[Mode], ell: &[i64], sigma: &[i8], sites: &TangentialSites) -> Result<(), ResonanceError> {
    if modes.len() != sigma.len() {
        return Err(ResonanceError::Invalid("one sign per mode required".into()));
    }
    if ell.len() != sites.d() {
        return Err(ResonanceError::Invalid(format!("ell has {} entries, expected {}", ell.len(), sites.d())));
    }
    if sigma.iter().any(|&s| s != 1 && s != -1) {
        return Err(ResonanceError::Invalid("signs must be ±1".into()));
    }
    Ok(())
}

pub fn is_admissible(modes: &[Mode], ell: &[i64], sigma: &[i8], sites: &TangentialSites, n: i64) -> Result<bool, ResonanceError> {
    check_shape(modes, ell, sigma, sites)?;
    check_modes(modes, sites, n)?;
    Ok(selection_profile(&MonomialIndex::from_tuple(modes, sigma, ell), sites).balanced())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResonanceTag {
    R2,
    R4Case1,
    R4Case2,
    R4Case3,
    R4Case4,
    Nonresonant,
    Inadmissible,
}

impl ResonanceTag {
    pub fn is_resonant(self) -> bool {
        !matches!(self, ResonanceTag::Nonresonant | ResonanceTag::Inadmissible)
    }

    pub fn is_r4(self) -> bool {
        matches!(self, ResonanceTag::R4Case1 | ResonanceTag::R4Case2 | ResonanceTag::R4Case3 | ResonanceTag::R4Case4)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResonanceClass {
    pub tag: ResonanceTag,
    /// |m₄| cutoff used, for the third family only.
    pub m0_cutoff: Option<i64>,
    pub witness: Vec<Mode>,
}

/// Tag of an admissible tuple given as items; order of items is irrelevant.
pub fn tag_items(items: &[Item], ell: &[i64], m0_cutoff: i64) -> ResonanceTag {
    let ell0 = ell.iter().all(|&x| x == 0);
    if items.len() == 2 {
        let (a, b) = (items[0], items[1]);
        return if ell0 && a.sigma == -b.sigma && a.mode == b.mode { ResonanceTag::R2 } else { ResonanceTag::Nonresonant };
    }
    if items.len() != 4 {
        return ResonanceTag::Nonresonant;
    }
    let (cols, free): (Vec<Item>, Vec<Item>) = items.iter().partition(|it| it.site.is_some());
    let sig_sum: i64 = items.iter().map(|it| it.sigma as i64).sum();
    let yn: i64 = items.iter().map(|it| it.sigma as i64 * it.mode.n).sum();
    let yn2: i64 = items.iter().map(|it| it.sigma as i64 * it.mode.n * it.mode.n).sum();
    match cols.len() {
        0 if ell0 => {
            let w: i128 = free.iter().map(|it| it.sigma as i128 * it.mode.norm2()).sum();
            let x: i64 = free.iter().map(|it| it.sigma as i64 * it.mode.m).sum();
            if sig_sum == 0 && x == 0 && yn == 0 && w == 0 {
                return ResonanceTag::R4Case1;
            }
        }
        2 if ell0 => {
            let vertical = |p: &[Item]| p[0].mode.m == p[1].mode.m && p[0].sigma == -p[1].sigma;
            if vertical(&free) && vertical(&cols) && cols[0].site == cols[1].site && yn == 0 && yn2 == 0 {
                return ResonanceTag::R4Case2;
            }
        }
        3 if !ell0 => {
            if free[0].mode.m.abs() < m0_cutoff {
                return ResonanceTag::R4Case3;
            }
        }
        4 if ell0 => {
            let mut plus: Vec<i64> = cols.iter().filter(|it| it.sigma > 0).map(|it| it.mode.n).collect();
            let mut minus: Vec<i64> = cols.iter().filter(|it| it.sigma < 0).map(|it| it.mode.n).collect();
            plus.sort();
            minus.sort();
            if sig_sum == 0 && plus == minus {
                return ResonanceTag::R4Case4;
            }
        }
        _ => {}
    }
    ResonanceTag::Nonresonant
}

pub fn classify(
    modes: &[Mode],
    ell: &[i64],
    sigma: &[i8],
    sites: &TangentialSites,
    n: i64,
    m0_cutoff: i64,
) -> Result<ResonanceClass, ResonanceError> {
    if !is_admissible(modes, ell, sigma, sites, n)? {
        return Ok(ResonanceClass { tag: ResonanceTag::Inadmissible, m0_cutoff: None, witness: vec![] });
    }
    let items: Vec<Item> = modes.iter().zip(sigma).map(|(&j, &s)| Item::new(j, s, sites)).collect();
    let tag = tag_items(&items, ell, m0_cutoff);
    Ok(ResonanceClass {
        tag,
        m0_cutoff: (tag == ResonanceTag::R4Case3).then_some(m0_cutoff),
        witness: if tag.is_resonant() { modes.to_vec() } else { vec![] },
    })
}

/// F(λ) = −λ·ℓ + c·μ(λ), with c_i the signed count of column modes above site i.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FTerms {
    pub ell: Vec<i64>,
    pub c: Vec<i64>,
}

impl FTerms {
    pub fn eval(&self, lambda: &[f64], mu: &[f64]) -> f64 {
        let a: f64 = self.ell.iter().zip(lambda).map(|(&l, &x)| l as f64 * x).sum();
        let b: f64 = self.c.iter().zip(mu).map(|(&c, &m)| c as f64 * m).sum();
        b - a
    }

    pub fn is_trivially_zero(&self) -> bool {
        self.ell.iter().chain(&self.c).all(|&x| x == 0)
    }
}

/// The divisor at first order in ε: K + εF(λ).
pub fn k_and_f(modes: &[Mode], ell: &[i64], sigma: &[i8], sites: &TangentialSites) -> Result<(i64, FTerms), ResonanceError> {
    check_shape(modes, ell, sigma, sites)?;
    let mut k: i64 = ell.iter().zip(&sites.m).map(|(l, m)| l * m * m).sum();
    let mut c = vec![0i64; sites.d()];
    for (&j, &s) in modes.iter().zip(sigma) {
        let s = s as i64;
        match sites.kind(j) {
            ModeKind::Tangential(_) => return Err(ResonanceError::TangentialMode(j)),
            ModeKind::Column(i) => {
                k += s * j.n * j.n;
                c[i] += s;
            }
            ModeKind::Free => k += s * (j.m * j.m + j.n * j.n),
        }
    }
    Ok((k, FTerms { ell: ell.to_vec(), c }))
}

/// Modes written as "(m,n);(m,n);...".
pub fn parse_modes(s: &str) -> Result<Vec<Mode>, ResonanceError> {
    let bad = |p: &str| ResonanceError::Invalid(format!("bad mode {p:?}, expected (m,n)"));
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let t = p.trim().strip_prefix('(').and_then(|t| t.strip_suffix(')')).ok_or_else(|| bad(p))?;
            let (m, n) = t.split_once(',').ok_or_else(|| bad(p))?;
            Ok(Mode::new(m.trim().parse().map_err(|_| bad(p))?, n.trim().parse().map_err(|_| bad(p))?))
        })
        .collect()
}

/// Signs written as a string of '+' and '-'.
pub fn parse_sigma(s: &str) -> Result<Vec<i8>, ResonanceError> {
    s.trim()
        .chars()
        .map(|c| match c {
            '+' => Ok(1),
            '-' => Ok(-1),
            _ => Err(ResonanceError::Invalid(format!("sign must be + or -, got {c:?}"))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::mu_real;

    fn sites12() -> TangentialSites {
        TangentialSites::unchecked(vec![1, 2])
    }

    #[test]
    fn profile_examples() {
        let s = TangentialSites::unchecked(vec![3]);
        let p = selection_profile(&MonomialIndex::new(1).with_a(Mode::new(1, 2), 1).with_abar(Mode::new(1, 2), 1), &s);
        assert_eq!((p.eta, p.pi_x, p.pi_y), (0, 0, 0));
        let p = selection_profile(&MonomialIndex::new(1).with_ell(&[1]).with_abar(Mode::new(3, 5), 1), &s);
        assert_eq!((p.eta_ell, p.eta, p.pi_ell, p.pi_x), (1, -1, 3, -3));
        let p = selection_profile(&MonomialIndex::new(1).with_y(&[1]), &s);
        assert_eq!((p.eta, p.pi_x), (0, 0));
    }

    #[test]
    fn degree_examples() {
        let j = Mode::new(2, 3);
        assert_eq!(MonomialIndex::new(1).with_a(j, 1).with_abar(j, 1).degree(), 0);
        assert_eq!(MonomialIndex::new(1).with_a(j, 4).degree(), 2);
        assert_eq!(MonomialIndex::new(1).with_y(&[1]).degree(), 0);
    }

    #[test]
    fn admissibility_examples() {
        let s = sites12();
        let r = [Mode::new(5, 3), Mode::new(7, 4), Mode::new(6, 6), Mode::new(4, 5)];
        assert!(is_admissible(&r, &[0, 0], &[1, -1, 1, -1], &s, 1).unwrap());
        assert!(!is_admissible(&r, &[0, 0], &[1, 1, 1, 1], &s, 1).unwrap());
        // three column modes plus one free mode, with the compensating ℓ
        let modes = [Mode::new(1, 2), Mode::new(2, 3), Mode::new(1, -4), Mode::new(-5, -9)];
        let sigma = [1, 1, -1, 1];
        // mass: σ₄ + Σℓ = 0; x-momentum: σ₄m₄ + m·ℓ = 0; y-momentum fixes n₄
        let ell = [-7, 6];
        assert!(is_admissible(&modes, &ell, &sigma, &s, 1).unwrap());
        assert_eq!(is_admissible(&[Mode::new(1, 0)], &[0, 0], &[1], &s, 1), Err(ResonanceError::TangentialMode(Mode::new(1, 0))));
    }

    #[test]
    fn classification_examples() {
        let s = sites12();
        let r = [Mode::new(5, 3), Mode::new(7, 4), Mode::new(6, 6), Mode::new(4, 5)];
        assert_eq!(classify(&r, &[0, 0], &[1, -1, 1, -1], &s, 1, 32).unwrap().tag, ResonanceTag::R4Case1);
        let h = [Mode::new(5, 3), Mode::new(5, 7), Mode::new(2, 7), Mode::new(2, 3)];
        assert_eq!(classify(&h, &[0, 0], &[1, -1, 1, -1], &s, 1, 32).unwrap().tag, ResonanceTag::R4Case2);
        // degenerate: action-type product
        let d = [Mode::new(5, 3), Mode::new(5, 3), Mode::new(2, 7), Mode::new(2, 7)];
        assert_eq!(classify(&d, &[0, 0], &[1, -1, 1, -1], &s, 1, 32).unwrap().tag, ResonanceTag::R4Case2);
        // admissible non-rectangle with ℓ = 0
        let nr = [Mode::new(5, 3), Mode::new(7, 4), Mode::new(8, 9), Mode::new(6, 8)];
        assert!(is_admissible(&nr, &[0, 0], &[1, -1, 1, -1], &s, 1).unwrap());
        assert_eq!(classify(&nr, &[0, 0], &[1, -1, 1, -1], &s, 1, 32).unwrap().tag, ResonanceTag::Nonresonant);
        let modes = [Mode::new(1, 2), Mode::new(2, 3), Mode::new(1, -4), Mode::new(-5, -9)];
        let c = classify(&modes, &[-7, 6], &[1, 1, -1, 1], &s, 1, 32).unwrap();
        assert_eq!((c.tag, c.m0_cutoff), (ResonanceTag::R4Case3, Some(32)));
        assert_eq!(classify(&modes, &[-7, 6], &[1, 1, -1, 1], &s, 1, 5).unwrap().tag, ResonanceTag::Nonresonant);
        let t = [Mode::new(1, 3), Mode::new(2, 3), Mode::new(2, 6), Mode::new(1, 6)];
        assert_eq!(classify(&t, &[0, 0], &[1, -1, 1, -1], &s, 1, 32).unwrap().tag, ResonanceTag::R4Case4);
        assert_eq!(classify(&r, &[0, 0], &[1, 1, 1, 1], &s, 1, 32).unwrap().tag, ResonanceTag::Inadmissible);
        let q = [Mode::new(4, 4), Mode::new(4, 4)];
        assert_eq!(classify(&q, &[0, 0], &[1, -1], &s, 1, 32).unwrap().tag, ResonanceTag::R2);
    }

    #[test]
    fn classification_ignores_order() {
        let s = sites12();
        let h = [Mode::new(5, 3), Mode::new(5, 7), Mode::new(2, 7), Mode::new(2, 3)];
        let sg = [1i8, -1, 1, -1];
        let mut idx = [0usize, 1, 2, 3];
        for _ in 0..24 {
            let m: Vec<Mode> = idx.iter().map(|&i| h[i]).collect();
            let g: Vec<i8> = idx.iter().map(|&i| sg[i]).collect();
            assert_eq!(classify(&m, &[0, 0], &g, &s, 1, 32).unwrap().tag, ResonanceTag::R4Case2);
            next_perm(&mut idx);
        }
    }

    fn next_perm(a: &mut [usize]) {
        let n = a.len();
        let Some(i) = (0..n - 1).rev().find(|&i| a[i] < a[i + 1]) else {
            a.reverse();
            return;
        };
        let j = (i + 1..n).rev().find(|&j| a[j] > a[i]).unwrap();
        a.swap(i, j);
        a[i + 1..].reverse();
    }

    #[test]
    fn k_and_f_examples() {
        let s = sites12();
        let r = [Mode::new(5, 3), Mode::new(7, 4), Mode::new(6, 6), Mode::new(4, 5)];
        let (k, f) = k_and_f(&r, &[0, 0], &[1, -1, 1, -1], &s).unwrap();
        assert_eq!(k, 0);
        assert!(f.is_trivially_zero());
        let (k, _) = k_and_f(&[Mode::new(3, 0), Mode::new(5, 0)], &[0, 0], &[1, -1], &s).unwrap();
        assert_eq!(k, -16);
        let lam = [0.6, 0.9];
        let mu = mu_real(&lam).unwrap();
        let (_, f) = k_and_f(&[Mode::new(2, 4), Mode::new(3, 3), Mode::new(4, 5), Mode::new(5, 1)], &[0, 0], &[1, -1, 1, -1], &s)
            .unwrap();
        assert_eq!(f.c, vec![0, 1]);
        assert!((f.eval(&lam, &mu) - mu[1]).abs() < 1e-15);
        assert!(mu[1].abs() > 0.1);
    }

    #[test]
    fn parses_cli_tuples() {
        let m = parse_modes("(4,0);(1,3); (-3, 3);(0,0)").unwrap();
        assert_eq!(m, vec![Mode::new(4, 0), Mode::new(1, 3), Mode::new(-3, 3), Mode::new(0, 0)]);
        assert_eq!(parse_sigma("+-+-").unwrap(), vec![1, -1, 1, -1]);
        assert!(parse_modes("(1,2,3)").is_err() && parse_modes("4,0").is_err() && parse_sigma("+x").is_err());
    }
}
