//! The resonant system on a certified lattice, the rescaled toy orbit, and perturbed runs.

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{integrate_observed, toy_rhs_into, DynamicsError, Flow, IntegratorOptions, OdeSystem, StepStats};
use crate::lattice::{CertifiedLambda, Mode};
use crate::normal_form::TaylorFourierPoly;
use crate::resonance::MonomialIndex;
use crate::rng;
use crate::spectrum::{Corrections, FrequencyModel, TangentialSites};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyIndex {
    /// Generation of the parents (0-based).
    pub generation: usize,
    pub parents: [usize; 2],
    pub children: [usize; 2],
}

/// Flat indexing of a lattice: modes in generation order plus the nuclear families.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeIndex {
    pub g: usize,
    pub modes: Vec<Mode>,
    pub generation: Vec<usize>,
    pub families: Vec<FamilyIndex>,
    lookup: HashMap<Mode, usize>,
}

impl LatticeIndex {
    pub fn new(lam: &CertifiedLambda) -> Result<Self, DynamicsError> {
        Self::from_parts(&lam.generations, &lam.tree)
    }

    pub fn from_parts(generations: &[Vec<Mode>], tree: &crate::lattice::FamilyTree) -> Result<Self, DynamicsError> {
        let g = generations.len();
        let mut offsets = Vec::with_capacity(g);
        let mut modes = Vec::new();
        let mut generation = Vec::new();
        for (k, gen) in generations.iter().enumerate() {
            offsets.push(modes.len());
            modes.extend_from_slice(gen);
            generation.extend(std::iter::repeat(k).take(gen.len()));
        }
        let mut lookup = HashMap::with_capacity(modes.len());
        for (i, &j) in modes.iter().enumerate() {
            if lookup.insert(j, i).is_some() {
                return Err(DynamicsError::Invalid(format!("mode {j} appears twice in the lattice")));
            }
        }
        let bad = || DynamicsError::Invalid("family tree does not match the generations".into());
        let mut families = Vec::new();
        for k in 0..g {
            let (sp, ch) = (tree.spouse.get(k).ok_or_else(bad)?, tree.children.get(k).ok_or_else(bad)?);
            for i in 0..generations[k].len() {
                if let (Some(Some(s)), Some(Some([c1, c2]))) = (sp.get(i), ch.get(i)) {
                    if i < *s {
                        let next = generations.get(k + 1).ok_or_else(bad)?;
                        if *s >= generations[k].len() || *c1 >= next.len() || *c2 >= next.len() {
                            return Err(bad());
                        }
                        families.push(FamilyIndex {
                            generation: k,
                            parents: [offsets[k] + i, offsets[k] + s],
                            children: [offsets[k + 1] + c1, offsets[k + 1] + c2],
                        });
                    }
                }
            }
        }
        Ok(LatticeIndex { g, modes, generation, families, lookup })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn position(&self, j: Mode) -> Option<usize> {
        self.lookup.get(&j).copied()
    }

    /// β on Λ as a generation-constant vector with value `b[k]` on generation k.
    pub fn spread(&self, b: &[Complex64]) -> Vec<Complex64> {
        self.generation.iter().map(|&k| b[k]).collect()
    }

    pub fn generation_mass(&self, beta: &[Complex64]) -> Vec<f64> {
        let mut out = vec![0.0; self.g];
        for (z, &k) in beta.iter().zip(&self.generation) {
            out[k] += z.norm_sqr();
        }
        out
    }
}

/// (𝒴, θ, β) with β stored in the order of a `LatticeIndex`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeState {
    pub modes: Vec<Mode>,
    pub beta: Vec<Complex64>,
    pub y: Vec<f64>,
    pub theta: Vec<f64>,
    pub t: f64,
}

impl LatticeState {
    pub fn mass(&self) -> f64 {
        self.beta.iter().map(|z| z.norm_sqr()).sum()
    }

    /// (Σ m_j|β_j|², Σ n_j|β_j|²).
    pub fn momentum(&self) -> (f64, f64) {
        self.modes.iter().zip(&self.beta).fold((0.0, 0.0), |(a, b), (j, z)| {
            (a + j.m as f64 * z.norm_sqr(), b + j.n as f64 * z.norm_sqr())
        })
    }
}

/// β^ν_j(ν²t) = ν⁻¹ b_k(t) for every mode of generation k, with 𝒴 = 0 in d actions.
pub fn lift_state(b: &[Complex64], t: f64, nu: f64, lat: &LatticeIndex, d: usize) -> Result<LatticeState, DynamicsError> {
    if !(nu.is_finite() && nu > 0.0) {
        return Err(DynamicsError::Invalid(format!("nu must be positive, got {nu}")));
    }
    if b.len() != lat.g {
        return Err(DynamicsError::GenerationMismatch { lattice: lat.g, orbit: b.len() });
    }
    let scaled: Vec<Complex64> = b.iter().map(|z| z / nu).collect();
    Ok(LatticeState { modes: lat.modes.clone(), beta: lat.spread(&scaled), y: vec![0.0; d], theta: vec![0.0; d], t: nu * nu * t })
}

/// Lift a sampled toy path; time is dilated by ν².
pub fn lift_and_rescale(
    times: &[f64],
    states: &[Vec<Complex64>],
    nu: f64,
    lat: &LatticeIndex,
    d: usize,
) -> Result<Vec<LatticeState>, DynamicsError> {
    if times.len() != states.len() {
        return Err(DynamicsError::Invalid("times and states differ in length".into()));
    }
    times.iter().zip(states).map(|(&t, b)| lift_state(b, t, nu, lat, d)).collect()
}

/// i β̇_j = −|β_j|²β_j + 2β_{c1}β_{c2}β̄_{spouse} + 2β_{p1}β_{p2}β̄_{sibling}, returned as β̇.
pub fn resonant_rhs(beta: &[Complex64], lat: &LatticeIndex) -> Vec<Complex64> {
    let mut grad: Vec<Complex64> = beta.iter().map(|z| -z * z.norm_sqr()).collect();
    for f in &lat.families {
        let [p1, p2] = f.parents;
        let [c1, c2] = f.children;
        let (bp1, bp2, bc1, bc2) = (beta[p1], beta[p2], beta[c1], beta[c2]);
        grad[p1] += bc1 * bc2 * bp2.conj() * 2.0;
        grad[p2] += bc1 * bc2 * bp1.conj() * 2.0;
        grad[c1] += bp1 * bp2 * bc2.conj() * 2.0;
        grad[c2] += bp1 * bp2 * bc1.conj() * 2.0;
    }
    grad.into_iter().map(|z| Complex64::new(z.im, -z.re)).collect()
}

/// The unperturbed resonant flow on Λ as an ODE system.
#[derive(Clone, Copy, Debug)]
pub struct ResonantSystem<'a>(pub &'a LatticeIndex);

impl OdeSystem for ResonantSystem<'_> {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn rhs(&self, _t: f64, y: &[Complex64], dy: &mut [Complex64]) {
        dy.copy_from_slice(&resonant_rhs(y, self.0));
    }
}

/// Map form of [`resonant_rhs`]; nonzero amplitudes off the lattice are rejected.
pub fn resonant_rhs_map(state: &BTreeMap<Mode, Complex64>, lat: &LatticeIndex) -> Result<BTreeMap<Mode, Complex64>, DynamicsError> {
    let mut beta = vec![ZERO; lat.len()];
    for (&j, &z) in state {
        match lat.position(j) {
            Some(i) => beta[i] = z,
            None if z == ZERO => {}
            None => return Err(DynamicsError::SupportLeak(j)),
        }
    }
    Ok(lat.modes.iter().copied().zip(resonant_rhs(&beta, lat)).collect())
}

/// Knobs for the terms added on top of the resonant flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationModel {
    /// Rectangle terms carry e^{iΓt} with Γ from the frequency model.
    pub j1: bool,
    /// Multiplies every Γ.
    pub j1_scale: f64,
    /// Majorant norm |J2|/r² of the quartic family couplings Σ a_F (T_F + c.c.).
    pub j2_amplitude: f64,
    /// Majorant norm |R|/r⁴ of the sextic term Σ b_F (T_F + c.c.) S_F (a quintic field).
    pub r_amplitude: f64,
    /// Coupling shape: κ_F uniform in [−1, 1], rescaled to the norms above.
    pub normalization: CouplingNorm,
    pub nu: f64,
    pub sigma: f64,
    pub seed: u64,
    pub sites: Vec<i64>,
    pub lambda: Vec<f64>,
    pub eps: f64,
    /// Size of the bounded frequency corrections that produce Γ.
    pub m0: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingNorm {
    /// The amplitude bounds the majorant norm of the whole term.
    #[default]
    Majorant,
    /// The amplitude bounds each family coefficient.
    PerCoefficient,
}

impl Default for PerturbationModel {
    fn default() -> Self {
        PerturbationModel {
            j1: false,
            j1_scale: 1.0,
            j2_amplitude: 0.0,
            r_amplitude: 0.0,
            normalization: CouplingNorm::Majorant,
            nu: 50.0,
            sigma: 0.05,
            seed: 0,
            sites: vec![1, 2],
            lambda: vec![0.6, 0.8],
            eps: 0.1,
            m0: 1.0,
        }
    }
}

impl PerturbationModel {
    /// Amplitudes tied to ν: f = ν^{1/(1−σ)}, J2 ~ f^{−4/5}, R ~ ε^{−1/2}.
    pub fn nu_scaled(nu: f64, sigma: f64, seed: u64) -> Self {
        let base = PerturbationModel::default();
        let f = PerturbationModel { nu, sigma, ..base.clone() }.f_scale();
        PerturbationModel {
            j1: true,
            j2_amplitude: f.powf(-0.8),
            r_amplitude: 1.0 / base.eps.sqrt(),
            nu,
            sigma,
            seed,
            ..base
        }
    }

    /// f = ν^{1/(1−σ)}.
    pub fn f_scale(&self) -> f64 {
        self.nu.powf(1.0 / (1.0 - self.sigma))
    }

    /// Sublattice scale N = ⌈f^{4/5}⌉ that keeps the rectangle defects Γ small.
    pub fn sublattice_scale(&self) -> i64 {
        self.f_scale().powf(0.8).ceil() as i64
    }

    /// All knobs off: the pure resonant flow.
    pub fn unperturbed(nu: f64, sigma: f64) -> Self {
        PerturbationModel { nu, sigma, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !(nonneg(self.j1_scale) && nonneg(self.j2_amplitude) && nonneg(self.r_amplitude) && nonneg(self.m0)) {
            return Err(DynamicsError::Invalid("perturbation knobs must be finite and >= 0".into()));
        }
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(DynamicsError::Invalid(format!("nu must be positive, got {}", self.nu)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0 && self.sigma < 1.0) {
            return Err(DynamicsError::Invalid(format!("sigma must lie in [0, 1), got {}", self.sigma)));
        }
        if self.sites.len() != self.lambda.len() || self.sites.is_empty() {
            return Err(DynamicsError::Invalid("sites and lambda must be nonempty and of equal length".into()));
        }
        Ok(())
    }

    pub fn bound(&self) -> f64 {
        self.nu.powf(-1.0 - self.sigma)
    }
}

struct FamilyCoupling {
    idx: FamilyIndex,
    gamma: f64,
    kappa2: f64,
    kappa_r: f64,
}

/// State layout: β on Λ followed by the generation-constant reference (g entries).
struct CascadeSystem<'a> {
    lat: &'a LatticeIndex,
    fams: Vec<FamilyCoupling>,
    a2: f64,
    ar: f64,
}

impl<'a> CascadeSystem<'a> {
    fn new(lat: &'a LatticeIndex, model: &PerturbationModel) -> Result<Self, DynamicsError> {
        let (fams, a2, ar) = family_couplings(lat, model)?;
        Ok(CascadeSystem { lat, fams, a2, ar })
    }
}

/// Per-family Γ and couplings, with the overall J2 and R factors after normalization.
fn family_couplings(lat: &LatticeIndex, model: &PerturbationModel) -> Result<(Vec<FamilyCoupling>, f64, f64), DynamicsError> {
    let freq = if model.j1 {
        Some(FrequencyModel::new(
            TangentialSites::unchecked(model.sites.clone()),
            model.lambda.clone(),
            model.eps,
            1,
            Corrections::HashNoise { m0: model.m0, seed: model.seed },
        )?)
    } else {
        None
    };
    let mut r = rng::stream(model.seed, 0x6a32_7266);
    let kappas: Vec<(f64, f64)> = lat.families.iter().map(|_| (r.gen_range(-1.0..=1.0), r.gen_range(-1.0..=1.0))).collect();
    // T_F and its conjugate are two monomials of four variables each; times S_F that is eight of six
    let (w2, wr) = match model.normalization {
        CouplingNorm::Majorant => (
            8.0 * kappas.iter().map(|k| k.0.abs()).sum::<f64>(),
            48.0 * kappas.iter().map(|k| k.1.abs()).sum::<f64>(),
        ),
        CouplingNorm::PerCoefficient => (1.0, 1.0),
    };
    let mut fams = Vec::with_capacity(lat.families.len());
    for (f, &(kappa2, kappa_r)) in lat.families.iter().zip(&kappas) {
        let gamma = match &freq {
            Some(fm) => {
                let m = |i: usize| lat.modes[i];
                model.j1_scale * fm.gamma_defect([m(f.parents[0]), m(f.children[0]), m(f.parents[1]), m(f.children[1])])?
            }
            None => 0.0,
        };
        fams.push(FamilyCoupling { idx: *f, gamma, kappa2, kappa_r });
    }
    let a2 = if w2 > 0.0 { model.j2_amplitude / w2 } else { 0.0 };
    let ar = if wr > 0.0 { model.r_amplitude / wr } else { 0.0 };
    Ok((fams, a2, ar))
}

/// The J2 and R Hamiltonians of a model as explicit polynomials in (β, β̄).
pub fn perturbation_hamiltonians(lat: &LatticeIndex, model: &PerturbationModel) -> Result<(TaylorFourierPoly, TaylorFourierPoly), DynamicsError> {
    model.validate()?;
    let (fams, a2, ar) = family_couplings(lat, &PerturbationModel { j1: false, ..model.clone() })?;
    let d = model.sites.len();
    let mut j2 = TaylorFourierPoly::zero(d);
    let mut r = TaylorFourierPoly::zero(d);
    let bump = |m: &mut BTreeMap<Mode, u32>, j: Mode| *m.entry(j).or_insert(0) += 1;
    for fc in &fams {
        let [p1, p2] = fc.idx.parents.map(|i| lat.modes[i]);
        let [c1, c2] = fc.idx.children.map(|i| lat.modes[i]);
        // T_F = β̄_{p1} β̄_{p2} β_{c1} β_{c2}
        let mut t = MonomialIndex::new(d);
        for j in [c1, c2] {
            bump(&mut t.alpha, j);
        }
        for j in [p1, p2] {
            bump(&mut t.beta, j);
        }
        for idx in [t.clone(), t.conjugate()] {
            j2.add_term(idx.clone(), Complex64::new(a2 * fc.kappa2, 0.0));
            for q in [p1, p2, c1, c2] {
                let mut m = idx.clone();
                bump(&mut m.alpha, q);
                bump(&mut m.beta, q);
                r.add_term(m, Complex64::new(ar * fc.kappa_r, 0.0));
            }
        }
    }
    Ok((j2, r))
}

impl OdeSystem for CascadeSystem<'_> {
    fn dim(&self) -> usize {
        self.lat.len() + self.lat.g
    }

    fn rhs(&self, t: f64, y: &[Complex64], dy: &mut [Complex64]) {
        let n = self.lat.len();
        let (beta, reference) = y.split_at(n);
        let (dbeta, dref) = dy.split_at_mut(n);
        toy_rhs_into(reference, dref);
        for (d, z) in dbeta.iter_mut().zip(beta) {
            *d = -z * z.norm_sqr();
        }
        for fc in &self.fams {
            let [p1, p2] = fc.idx.parents;
            let [c1, c2] = fc.idx.children;
            let (bp1, bp2, bc1, bc2) = (beta[p1], beta[p2], beta[c1], beta[c2]);
            // H_F = w T + w̄ T̄ with T = β̄_{p1}β̄_{p2}β_{c1}β_{c2}
            let mut w = Complex64::from_polar(2.0, -fc.gamma * t) + self.a2 * fc.kappa2;
            let mut radial = ZERO;
            if self.ar != 0.0 {
                let s = bp1.norm_sqr() + bp2.norm_sqr() + bc1.norm_sqr() + bc2.norm_sqr();
                let tt = bp1.conj() * bp2.conj() * bc1 * bc2;
                w += self.ar * fc.kappa_r * s;
                radial = Complex64::new(2.0 * self.ar * fc.kappa_r * tt.re, 0.0);
            }
            dbeta[p1] += w * bp2.conj() * bc1 * bc2 + radial * bp1;
            dbeta[p2] += w * bp1.conj() * bc1 * bc2 + radial * bp2;
            dbeta[c1] += w.conj() * bp1 * bp2 * bc2.conj() + radial * bc1;
            dbeta[c2] += w.conj() * bp1 * bp2 * bc1.conj() + radial * bc2;
        }
        for d in dbeta.iter_mut() {
            *d = Complex64::new(d.im, -d.re);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeOptions {
    pub tol: f64,
    /// Number of evenly spaced samples recorded in the time series (besides t=0).
    pub samples: usize,
    /// ‖β‖₁ above this counts as blow-up.
    pub blowup_l1: f64,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        CascadeOptions { tol: 1e-10, samples: 200, blowup_l1: 1e6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftCertificate {
    pub nu: f64,
    pub sigma: f64,
    pub times: Vec<f64>,
    pub xi_l1: Vec<f64>,
    pub y_abs: Vec<f64>,
    pub m: Vec<f64>,
    pub bound: f64,
    /// Suprema over every accepted step, not only the samples.
    pub sup_xi: f64,
    pub sup_m: f64,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeRun {
    pub times: Vec<f64>,
    pub generation_mass: Vec<Vec<f64>>,
    pub reference_mass: Vec<Vec<f64>>,
    pub certificate: DriftCertificate,
    pub initial: LatticeState,
    pub final_state: LatticeState,
    pub reference_final: Vec<Complex64>,
    pub mass_drift: f64,
    pub momentum_drift: f64,
    pub stats: StepStats,
}

/// Integrate the perturbed resonant system from `state0` together with the
/// reference b^ν started at `reference0` (one amplitude per generation).
pub fn simulate_perturbed(
    state0: &LatticeState,
    reference0: &[Complex64],
    lat: &LatticeIndex,
    model: &PerturbationModel,
    t_end: f64,
    opts: &CascadeOptions,
) -> Result<CascadeRun, DynamicsError> {
    model.validate()?;
    if state0.beta.len() != lat.len() || state0.modes != lat.modes {
        return Err(DynamicsError::Invalid("initial state is not laid out on this lattice".into()));
    }
    if reference0.len() != lat.g {
        return Err(DynamicsError::GenerationMismatch { lattice: lat.g, orbit: reference0.len() });
    }
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(DynamicsError::Invalid(format!("end time must be >= 0, got {t_end}")));
    }
    let nu = model.nu;
    let y_abs: f64 = state0.y.iter().map(|v| v.abs()).sum();
    let xi0: f64 = state0.beta.iter().zip(&lat.generation).map(|(z, &k)| (z - reference0[k]).norm()).sum();
    let (xi_cap, y_cap) = (nu.powf(-1.0 - 4.0 * model.sigma), nu.powf(-2.0 - 4.0 * model.sigma));
    if xi0 > xi_cap {
        return Err(DynamicsError::Basin(format!("|beta(0) - beta_nu(0)|_1 = {xi0:e} exceeds {xi_cap:e}")));
    }
    if y_abs > y_cap {
        return Err(DynamicsError::Basin(format!("|Y(0)| = {y_abs:e} exceeds {y_cap:e}")));
    }
    let sys = CascadeSystem::new(lat, model)?;
    let n = lat.len();
    let mut z0 = state0.beta.clone();
    z0.extend_from_slice(reference0);
    let stops: Vec<f64> = (1..=opts.samples).map(|i| t_end * i as f64 / opts.samples.max(1) as f64).collect();
    let io = IntegratorOptions::with_tol(opts.tol);
    let bound = model.bound();
    let (mass0, (px0, py0)) = (state0.mass(), state0.momentum());
    let mut cert = DriftCertificate {
        nu,
        sigma: model.sigma,
        times: Vec::new(),
        xi_l1: Vec::new(),
        y_abs: Vec::new(),
        m: Vec::new(),
        bound,
        sup_xi: 0.0,
        sup_m: 0.0,
        passes: true,
    };
    let mut times = Vec::new();
    let mut gen_mass = Vec::new();
    let mut ref_mass = Vec::new();
    let (mut mass_drift, mut momentum_drift) = (0.0f64, 0.0f64);
    let mut blow: Option<(f64, f64)> = None;
    let scale = (px0.abs() + py0.abs()).max(mass0);
    let (_, zf, stats) = integrate_observed(&sys, state0.t, &z0, state0.t + t_end, &stops, &io, &mut |t, z, on_stop| {
        let (beta, reference) = z.split_at(n);
        let l1: f64 = beta.iter().map(|v| v.norm()).sum();
        if !l1.is_finite() || l1 > opts.blowup_l1 {
            blow = Some((t, l1));
            return Flow::Stop;
        }
        let xi: f64 = beta.iter().zip(&lat.generation).map(|(v, &k)| (v - reference[k]).norm()).sum();
        let m = xi + nu * y_abs;
        cert.sup_xi = cert.sup_xi.max(xi);
        cert.sup_m = cert.sup_m.max(m);
        let mass: f64 = beta.iter().map(|v| v.norm_sqr()).sum();
        let (px, py) = lat.modes.iter().zip(beta).fold((0.0, 0.0), |(a, b), (j, v)| {
            (a + j.m as f64 * v.norm_sqr(), b + j.n as f64 * v.norm_sqr())
        });
        if mass0 > 0.0 {
            mass_drift = mass_drift.max((mass - mass0).abs() / mass0);
            momentum_drift = momentum_drift.max(((px - px0).abs() + (py - py0).abs()) / scale);
        }
        if on_stop || t == state0.t {
            cert.times.push(t);
            cert.xi_l1.push(xi);
            cert.y_abs.push(y_abs);
            cert.m.push(m);
            times.push(t);
            gen_mass.push(lat.generation_mass(beta));
            ref_mass.push(reference.iter().map(|v| v.norm_sqr()).collect());
        }
        Flow::Continue
    })?;
    if let Some((t, norm)) = blow {
        return Err(DynamicsError::BlowUp { t, norm });
    }
    cert.passes = cert.sup_m <= bound;
    let (beta_f, ref_f) = zf.split_at(n);
    let final_state = LatticeState {
        modes: lat.modes.clone(),
        beta: beta_f.to_vec(),
        y: state0.y.clone(),
        theta: state0.theta.clone(),
        t: state0.t + t_end,
    };
    Ok(CascadeRun {
        times,
        generation_mass: gen_mass,
        reference_mass: ref_mass,
        certificate: cert,
        initial: state0.clone(),
        final_state,
        reference_final: ref_f.to_vec(),
        mass_drift,
        momentum_drift,
        stats,
    })
}
