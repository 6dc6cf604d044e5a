//! Sparse Taylor–Fourier polynomials in (θ, 𝒴, a, ā): brackets, majorant
//! norms, the homological equation and truncated Lie series.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::Mode;
use crate::resonance::MonomialIndex;
use crate::spectrum::{FrequencyModel, ModeKind, SpectrumError, TangentialSites};

#[derive(Debug, Error, PartialEq)]
pub enum NormalFormError {
    #[error("divisor {divisor:e} below floor {floor:e} at ell={ell:?} modes={modes:?} sigma={sigma:?}")]
    SmallDivisor { ell: Vec<i64>, modes: Vec<Mode>, sigma: Vec<i8>, divisor: f64, floor: f64 },
    #[error(transparent)]
    Frequency(#[from] SpectrumError),
    #[error("invalid input: {0}")]
    Invalid(String),
}

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TaylorFourierPoly {
    d: usize,
    terms: BTreeMap<MonomialIndex, Complex64>,
}

impl TaylorFourierPoly {
    pub fn zero(d: usize) -> Self {
        TaylorFourierPoly { d, terms: BTreeMap::new() }
    }

    pub fn monomial(idx: MonomialIndex, c: Complex64) -> Self {
        let mut p = Self::zero(idx.d());
        p.add_term(idx, c);
        p
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MonomialIndex, &Complex64)> {
        self.terms.iter()
    }

    pub fn coeff(&self, idx: &MonomialIndex) -> Complex64 {
        self.terms.get(idx).copied().unwrap_or_default()
    }

    pub fn add_term(&mut self, idx: MonomialIndex, c: Complex64) {
        assert_eq!(idx.d(), self.d, "monomial dimension mismatch");
        if c == Complex64::new(0.0, 0.0) {
            return;
        }
        match self.terms.entry(idx) {
            Entry::Vacant(e) => {
                e.insert(c);
            }
            Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if *e.get() == Complex64::new(0.0, 0.0) {
                    e.remove();
                }
            }
        }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut p = Self::zero(self.d);
        for (k, &v) in &self.terms {
            p.add_term(k.clone(), v * s);
        }
        p
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn min_degree(&self) -> Option<i64> {
        self.terms.keys().map(MonomialIndex::degree).min()
    }

    pub fn max_degree(&self) -> Option<i64> {
        self.terms.keys().map(MonomialIndex::degree).max()
    }

    /// Drops monomials of degree above `cutoff`.
    pub fn truncate(&self, cutoff: i64) -> Self {
        TaylorFourierPoly { d: self.d, terms: self.terms.iter().filter(|(k, _)| k.degree() <= cutoff).map(|(k, v)| (k.clone(), *v)).collect() }
    }

    /// Coefficient of the conjugate monomial is the conjugate coefficient.
    pub fn is_real(&self, tol: f64) -> bool {
        self.terms.iter().all(|(k, v)| (self.coeff(&k.conjugate()) - v.conj()).norm() <= tol)
    }

    /// {F, G} = Σ(∂_𝒴F ∂_θG − ∂_θF ∂_𝒴G) + iΣ(∂_āF ∂_aG − ∂_aF ∂_āG).
    pub fn bracket(&self, g: &TaylorFourierPoly) -> TaylorFourierPoly {
        assert_eq!(self.d, g.d, "dimension mismatch");
        let mut out = Self::zero(self.d);
        for (a, &ca) in &self.terms {
            for (b, &cb) in &g.terms {
                let c = ca * cb;
                let prod = a.product(b);
                for i in 0..self.d {
                    let w = a.l[i] as i64 * b.ell[i] - a.ell[i] * b.l[i] as i64;
                    if w != 0 {
                        let mut idx = prod.clone();
                        idx.l[i] -= 1;
                        out.add_term(idx, c * I * w as f64);
                    }
                }
                let mut js: Vec<Mode> = a.beta.keys().filter(|j| b.alpha.contains_key(j)).copied().collect();
                js.extend(a.alpha.keys().filter(|j| b.beta.contains_key(j)));
                js.sort();
                js.dedup();
                for j in js {
                    let get = |m: &BTreeMap<Mode, u32>| m.get(&j).copied().unwrap_or(0) as i64;
                    let w = get(&a.beta) * get(&b.alpha) - get(&a.alpha) * get(&b.beta);
                    if w != 0 {
                        let mut idx = prod.clone();
                        dec(&mut idx.alpha, j);
                        dec(&mut idx.beta, j);
                        out.add_term(idx, c * I * w as f64);
                    }
                }
            }
        }
        out
    }

    /// Canonical record list, ordered by monomial index.
    pub fn to_records(&self) -> Vec<TermRecord> {
        self.terms
            .iter()
            .map(|(k, v)| TermRecord {
                ell: k.ell.clone(),
                l: k.l.clone(),
                alpha: k.alpha.iter().map(|(&j, &n)| (j, n)).collect(),
                beta: k.beta.iter().map(|(&j, &n)| (j, n)).collect(),
                re: v.re,
                im: v.im,
            })
            .collect()
    }

    pub fn from_records(d: usize, recs: &[TermRecord]) -> Result<Self, NormalFormError> {
        let mut p = Self::zero(d);
        for r in recs {
            if r.ell.len() != d || r.l.len() != d {
                return Err(NormalFormError::Invalid(format!("record has wrong dimension, expected {d}")));
            }
            let mut idx = MonomialIndex::new(d).with_ell(&r.ell).with_y(&r.l);
            for &(j, n) in &r.alpha {
                idx = idx.with_a(j, n);
            }
            for &(j, n) in &r.beta {
                idx = idx.with_abar(j, n);
            }
            p.add_term(idx, Complex64::new(r.re, r.im));
        }
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_records()).expect("records serialize")
    }

    pub fn from_json(d: usize, s: &str) -> Result<Self, NormalFormError> {
        let recs: Vec<TermRecord> = serde_json::from_str(s).map_err(|e| NormalFormError::Invalid(e.to_string()))?;
        Self::from_records(d, &recs)
    }
}

fn dec(m: &mut BTreeMap<Mode, u32>, j: Mode) {
    if let Some(v) = m.get_mut(&j) {
        *v -= 1;
        if *v == 0 {
            m.remove(&j);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermRecord {
    pub ell: Vec<i64>,
    pub l: Vec<u32>,
    pub alpha: Vec<(Mode, u32)>,
    pub beta: Vec<(Mode, u32)>,
    pub re: f64,
    pub im: f64,
}

impl Add for &TaylorFourierPoly {
    type Output = TaylorFourierPoly;
    fn add(self, o: &TaylorFourierPoly) -> TaylorFourierPoly {
        let mut p = self.clone();
        for (k, &v) in &o.terms {
            p.add_term(k.clone(), v);
        }
        p
    }
}

impl Sub for &TaylorFourierPoly {
    type Output = TaylorFourierPoly;
    fn sub(self, o: &TaylorFourierPoly) -> TaylorFourierPoly {
        self + &-o
    }
}

impl Neg for &TaylorFourierPoly {
    type Output = TaylorFourierPoly;
    fn neg(self) -> TaylorFourierPoly {
        self.scale(Complex64::new(-1.0, 0.0))
    }
}

impl Mul for &TaylorFourierPoly {
    type Output = TaylorFourierPoly;
    fn mul(self, o: &TaylorFourierPoly) -> TaylorFourierPoly {
        let mut p = TaylorFourierPoly::zero(self.d);
        for (a, &ca) in &self.terms {
            for (b, &cb) in &o.terms {
                p.add_term(a.product(b), ca * cb);
            }
        }
        p
    }
}

/// Conserved quantities restricted to a finite set of modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Charge {
    /// Σ𝒴_i + Σ|a_j|² over all modes.
    Mass,
    /// Σ𝒴_i + Σ|a_j|² over free modes only.
    MassTilde,
    MomentumX,
    MomentumXTilde,
    MomentumY,
}

pub fn charge(kind: Charge, sites: &TangentialSites, modes: &[Mode]) -> TaylorFourierPoly {
    let d = sites.d();
    let one = Complex64::new(1.0, 0.0);
    let mut p = TaylorFourierPoly::zero(d);
    for i in 0..d {
        let mut l = vec![0u32; d];
        l[i] = 1;
        let w = match kind {
            Charge::Mass | Charge::MassTilde => 1,
            Charge::MomentumX | Charge::MomentumXTilde => sites.m[i],
            Charge::MomentumY => 0,
        };
        p.add_term(MonomialIndex::new(d).with_y(&l), one * w as f64);
    }
    for &j in modes {
        let free = sites.kind(j) == ModeKind::Free;
        let w = match kind {
            Charge::Mass => 1,
            Charge::MassTilde => free as i64,
            Charge::MomentumX => j.m,
            Charge::MomentumXTilde => j.m * free as i64,
            Charge::MomentumY => j.n,
        };
        p.add_term(MonomialIndex::new(d).with_a(j, 1).with_abar(j, 1), one * w as f64);
    }
    p
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MajorantParams {
    pub rho: f64,
    pub r: f64,
}

impl MajorantParams {
    pub fn new(rho: f64, r: f64) -> Result<Self, NormalFormError> {
        if !(rho > 0.0 && r > 0.0 && rho.is_finite() && r.is_finite()) {
            return Err(NormalFormError::Invalid(format!("need rho, r > 0, got {rho}, {r}")));
        }
        Ok(MajorantParams { rho, r })
    }
}

/// Majorant vector-field norm with |𝒴_i| = r² and ‖a‖₁ = r concentrated on one mode.
///
/// A monomial c e^{iℓθ}𝒴^l a^α ā^β contributes |c| e^{ρ|ℓ|₁} (|l| + |ℓ|₁ + |α| + |β|) r^{deg}:
/// the θ, 𝒴, a and ā components scaled by 1, r⁻², r⁻¹, r⁻¹. This is exact for a
/// monomial in a single mode and an upper bound otherwise.
pub fn majorant_norm(f: &TaylorFourierPoly, p: MajorantParams) -> f64 {
    f.terms
        .iter()
        .map(|(k, c)| {
            let l: i64 = k.l.iter().map(|&x| x as i64).sum();
            let ell: i64 = k.ell.iter().map(|x| x.abs()).sum();
            let a: i64 = k.alpha.values().chain(k.beta.values()).map(|&x| x as i64).sum();
            c.norm() * (p.rho * ell as f64).exp() * (l + ell + a) as f64 * p.r.powi(k.degree() as i32)
        })
        .sum()
}

/// ω·ℓ + Σ(α_j − β_j)Ω_j, the eigenvalue of {N̂, ·} divided by i.
pub fn divisor(model: &FrequencyModel, idx: &MonomialIndex) -> Result<f64, NormalFormError> {
    let mut s: f64 = model.omega_tangential().iter().zip(&idx.ell).map(|(w, &l)| w * l as f64).sum();
    for (&j, &k) in &idx.alpha {
        s += k as f64 * model.omega_normal(j)?;
    }
    for (&j, &k) in &idx.beta {
        s -= k as f64 * model.omega_normal(j)?;
    }
    Ok(s)
}

/// N̂ = ω·𝒴 + ΣΩ_j|a_j|² over the given modes.
pub fn normal_hamiltonian(model: &FrequencyModel, modes: &[Mode]) -> Result<TaylorFourierPoly, NormalFormError> {
    let d = model.sites.d();
    let mut p = TaylorFourierPoly::zero(d);
    for (i, w) in model.omega_tangential().into_iter().enumerate() {
        let mut l = vec![0u32; d];
        l[i] = 1;
        p.add_term(MonomialIndex::new(d).with_y(&l), Complex64::new(w, 0.0));
    }
    for &j in modes {
        p.add_term(MonomialIndex::new(d).with_a(j, 1).with_abar(j, 1), Complex64::new(model.omega_normal(j)?, 0.0));
    }
    Ok(p)
}

/// χ with {N̂, χ} + K = 0: each coefficient is iK/D.
pub fn solve_homological(k: &TaylorFourierPoly, model: &FrequencyModel, floor: f64) -> Result<TaylorFourierPoly, NormalFormError> {
    if k.d != model.sites.d() {
        return Err(NormalFormError::Invalid("polynomial and model dimensions differ".into()));
    }
    let mut chi = TaylorFourierPoly::zero(k.d);
    for (idx, &c) in &k.terms {
        let dv = divisor(model, idx)?;
        if !(dv.abs() >= floor) || dv == 0.0 {
            let mut modes = Vec::new();
            let mut sigma = Vec::new();
            for (&j, &n) in &idx.alpha {
                modes.extend(std::iter::repeat(j).take(n as usize));
                sigma.extend(std::iter::repeat(1).take(n as usize));
            }
            for (&j, &n) in &idx.beta {
                modes.extend(std::iter::repeat(j).take(n as usize));
                sigma.extend(std::iter::repeat(-1).take(n as usize));
            }
            return Err(NormalFormError::SmallDivisor { ell: idx.ell.clone(), modes, sigma, divisor: dv, floor });
        }
        chi.add_term(idx.clone(), I * c / dv);
    }
    Ok(chi)
}

/// Largest coefficient of {N̂, χ} + K, with N̂ built on the modes of both.
pub fn homological_residual(chi: &TaylorFourierPoly, k: &TaylorFourierPoly, model: &FrequencyModel) -> Result<f64, NormalFormError> {
    let mut modes: Vec<Mode> = chi.terms.keys().chain(k.terms.keys()).flat_map(|i| i.modes().collect::<Vec<_>>()).collect();
    modes.sort();
    modes.dedup();
    let n = normal_hamiltonian(model, &modes)?;
    Ok((&n.bracket(chi) + k).max_abs())
}

/// Σ_{l ≥ i} ad(f)^l h / l! with ad(f)h = {h, f}, dropping degrees above `cutoff`.
pub fn lie_series(f: &TaylorFourierPoly, h: &TaylorFourierPoly, min_order: usize, cutoff: i64) -> Result<TaylorFourierPoly, NormalFormError> {
    if f.min_degree().is_some_and(|m| m < 1) {
        return Err(NormalFormError::Invalid("generator needs positive minimal degree".into()));
    }
    let mut out = TaylorFourierPoly::zero(h.d);
    let mut term = h.truncate(cutoff);
    let mut fact = 1.0;
    let mut order = 0usize;
    while !term.is_empty() {
        if order >= min_order {
            out = &out + &term.scale(Complex64::new(1.0 / fact, 0.0));
        }
        order += 1;
        fact *= order as f64;
        term = term.bracket(f).truncate(cutoff);
    }
    Ok(out)
}

/// Seeded sparse Hamiltonian of one degree whose monomials all obey the selection
/// rules, use free modes only, and have |divisor| ≥ `floor`.
pub fn random_admissible(
    model: &FrequencyModel,
    degree: i64,
    max_terms: usize,
    floor: f64,
    seed: u64,
) -> Result<TaylorFourierPoly, NormalFormError> {
    use rand::Rng;
    let sites = &model.sites;
    let d = sites.d();
    if d < 2 {
        return Err(NormalFormError::Invalid("need at least two tangential sites".into()));
    }
    if !(1..=8).contains(&degree) || max_terms == 0 {
        return Err(NormalFormError::Invalid(format!("degree must be in 1..=8 and terms > 0, got {degree}, {max_terms}")));
    }
    let nsub = model.sublattice_n;
    let free_m: Vec<i64> = (-5..=5).filter(|m| !sites.m.contains(m)).collect();
    let mut r = crate::rng::stream(seed, 0x6e66);
    let mut p = TaylorFourierPoly::zero(d);
    let mut attempts = 0usize;
    while p.len() < max_terms {
        attempts += 1;
        if attempts > 1000 * max_terms {
            return Err(NormalFormError::Invalid("could not draw enough admissible monomials".into()));
        }
        // degree = |α| + |β| + 2|l| − 2
        let l_total = r.gen_range(0..=((degree + 1) / 2).min(1));
        let k = (degree + 2 - 2 * l_total) as usize;
        let mut l = vec![0u32; d];
        if l_total == 1 {
            l[r.gen_range(0..d)] = 1;
        }
        let sigma: Vec<i8> = (0..k).map(|_| if r.gen_bool(0.5) { 1 } else { -1 }).collect();
        let mut modes: Vec<Mode> = (0..k).map(|_| Mode::new(free_m[r.gen_range(0..free_m.len())], nsub * r.gen_range(-3..=3))).collect();
        let yn: i64 = modes[..k - 1].iter().zip(&sigma).map(|(j, &s)| s as i64 * j.n).sum();
        modes[k - 1].n = -(sigma[k - 1] as i64) * yn;
        if modes.iter().any(|&j| sites.kind(j) != ModeKind::Free) {
            continue;
        }
        let eta: i64 = sigma.iter().map(|&s| s as i64).sum();
        let px: i64 = modes.iter().zip(&sigma).map(|(j, &s)| s as i64 * j.m).sum();
        let mut ell = vec![0i64; d];
        for e in ell.iter_mut().skip(2) {
            *e = r.gen_range(-1..=1);
        }
        let a = -eta - ell[2..].iter().sum::<i64>();
        let b = -px - ell[2..].iter().zip(&sites.m[2..]).map(|(x, m)| x * m).sum::<i64>();
        let (m1, m2) = (sites.m[0], sites.m[1]);
        if (b - m1 * a) % (m2 - m1) != 0 {
            continue;
        }
        ell[1] = (b - m1 * a) / (m2 - m1);
        ell[0] = a - ell[1];
        let idx = MonomialIndex::from_tuple(&modes, &sigma, &ell).with_y(&l);
        if divisor(model, &idx)?.abs() < floor {
            continue;
        }
        let c = Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
        p.add_term(idx, c);
    }
    Ok(p)
}
