//! Toy-model traversals, lifting to the resonant lattice, and perturbed cascade runs.

mod cascade;
mod integrator;
mod traversal;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::Mode;
use crate::spectrum::SpectrumError;

pub use cascade::{
    lift_and_rescale, lift_state, perturbation_hamiltonians, resonant_rhs, resonant_rhs_map, simulate_perturbed, CascadeOptions,
    CascadeRun, CouplingNorm, DriftCertificate, FamilyIndex, LatticeIndex, LatticeState, PerturbationModel,
    ResonantSystem,
};
pub use integrator::{integrate, integrate_observed, Flow, IntegratorOptions, OdeSystem, StepStats, Trajectory};
pub use traversal::{find_traversal_orbit, stage_times, ToyOrbitResult, TraversalOptions};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("step size underflow at t={t} (h={h:e})")]
    StepUnderflow { t: f64, h: f64, state: Vec<Complex64> },
    #[error("step limit {steps} reached at t={t}")]
    MaxSteps { t: f64, steps: usize },
    #[error("no traversal found: best peak |b_(g-1)|^2 = {best_peak:.4}, peak masses per generation {profile:?}")]
    SearchFailed { best_peak: f64, profile: Vec<f64> },
    #[error("lattice has {lattice} generations, orbit has {orbit}")]
    GenerationMismatch { lattice: usize, orbit: usize },
    #[error("state has support at {0}, outside the lattice")]
    SupportLeak(Mode),
    #[error("initial state outside the bootstrap basin: {0}")]
    Basin(String),
    #[error("blow-up detected at t={t}: l1 norm {norm:e}")]
    BlowUp { t: f64, norm: f64 },
    #[error(transparent)]
    Frequency(#[from] SpectrumError),
}

/// Toy-model state: one amplitude per generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyState {
    pub b: Vec<Complex64>,
    pub t: f64,
    pub mass0: f64,
}

impl ToyState {
    pub fn new(b: Vec<Complex64>, t: f64) -> Result<Self, DynamicsError> {
        if b.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(DynamicsError::Invalid("non-finite toy amplitude".into()));
        }
        let mass0 = toy_conserved(&b).0;
        Ok(ToyState { b, t, mass0 })
    }

    pub fn mass_drift(&self) -> f64 {
        let m = toy_conserved(&self.b).0;
        if self.mass0 == 0.0 {
            m
        } else {
            (m - self.mass0).abs() / self.mass0
        }
    }
}

/// i ḃ_k = −|b_k|² b_k + 2 b̄_k (b_{k−1}² + b_{k+1}²), written into `db` as ḃ.
pub fn toy_rhs_into(b: &[Complex64], db: &mut [Complex64]) {
    let g = b.len();
    let zero = Complex64::new(0.0, 0.0);
    for k in 0..g {
        let prev = if k > 0 { b[k - 1] * b[k - 1] } else { zero };
        let next = if k + 1 < g { b[k + 1] * b[k + 1] } else { zero };
        let rhs = -b[k] * b[k].norm_sqr() + b[k].conj() * (prev + next) * 2.0;
        db[k] = Complex64::new(rhs.im, -rhs.re);
    }
}

pub fn toy_rhs(b: &[Complex64]) -> Vec<Complex64> {
    let mut db = vec![Complex64::new(0.0, 0.0); b.len()];
    toy_rhs_into(b, &mut db);
    db
}

/// Mass Σ|b_k|² and H = −½Σ|b_k|⁴ + Σ(b_k² b̄_{k+1}² + c.c.).
pub fn toy_conserved(b: &[Complex64]) -> (f64, f64) {
    let mass = b.iter().map(|z| z.norm_sqr()).sum();
    let mut h = -0.5 * b.iter().map(|z| z.norm_sqr().powi(2)).sum::<f64>();
    for w in b.windows(2) {
        h += 2.0 * (w[0] * w[0] * (w[1] * w[1]).conj()).re;
    }
    (mass, h)
}

/// The toy model as an ODE system of dimension g.
#[derive(Clone, Copy, Debug)]
pub struct ToyModel {
    pub g: usize,
}

impl OdeSystem for ToyModel {
    fn dim(&self) -> usize {
        self.g
    }
    fn rhs(&self, _t: f64, y: &[Complex64], dy: &mut [Complex64]) {
        toy_rhs_into(y, dy);
    }
}

/// Norms of a lattice state and, optionally, growth ratios against a reference state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub l1: f64,
    pub l2: f64,
    /// (s, H^s norm) pairs.
    pub hs: Vec<(f64, f64)>,
}

/// H^s = (Σ(1+|j|)^{2s}|β_j|²)^{1/2} together with ℓ¹ and ℓ².
pub fn norm_report(modes: &[Mode], beta: &[Complex64], s_list: &[f64]) -> NormReport {
    let l1 = beta.iter().map(|z| z.norm()).sum();
    let l2 = beta.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let hs = s_list
        .iter()
        .map(|&s| {
            let v: f64 = modes.iter().zip(beta).map(|(j, z)| (1.0 + j.norm()).powf(2.0 * s) * z.norm_sqr()).sum();
            (s, v.sqrt())
        })
        .collect();
    NormReport { l1, l2, hs }
}

/// Target ⅛·2^{(1−s)(g−4)} for the H^s growth ratio.
pub fn growth_target(g: usize, s: f64) -> f64 {
    0.125 * 2f64.powf((1.0 - s) * (g as f64 - 4.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthEntry {
    pub s: f64,
    pub initial: f64,
    pub final_: f64,
    pub ratio: f64,
    pub target: f64,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub initial: NormReport,
    pub final_: NormReport,
    pub entries: Vec<GrowthEntry>,
    pub l2_drift: f64,
}

pub fn growth_report(modes: &[Mode], beta0: &[Complex64], beta1: &[Complex64], g: usize, s_list: &[f64]) -> GrowthReport {
    let initial = norm_report(modes, beta0, s_list);
    let final_ = norm_report(modes, beta1, s_list);
    let entries = initial
        .hs
        .iter()
        .zip(&final_.hs)
        .map(|(&(s, a), &(_, b))| {
            let ratio = b / a;
            let target = growth_target(g, s);
            GrowthEntry { s, initial: a, final_: b, ratio, target, passes: ratio >= target }
        })
        .collect();
    let l2_drift = if initial.l2 > 0.0 { (final_.l2 - initial.l2).abs() / initial.l2 } else { final_.l2 };
    GrowthReport { initial, final_, entries, l2_drift }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn single_mode_closed_form() {
        let mut b = vec![c(0.0, 0.0); 4];
        b[0] = c(1.0, 0.0);
        let (m, h) = toy_conserved(&b);
        assert_eq!((m, h), (1.0, -0.5));
        let times: Vec<f64> = (1..=10).map(|i| i as f64 * 0.7).collect();
        let tr = integrate(&ToyModel { g: 4 }, 0.0, &b, &times, &IntegratorOptions::default()).unwrap();
        for (t, y) in tr.times.iter().zip(&tr.states) {
            assert!((y[0] - Complex64::from_polar(1.0, *t)).norm() < 1e-9);
            assert!(y[1..].iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn zero_state_is_fixed() {
        assert!(toy_rhs(&[c(0.0, 0.0); 5]).iter().all(|z| z.norm() == 0.0));
    }

    // i ḃ = ∂H/∂b̄, with ∂/∂b̄ = ½(∂/∂x + i∂/∂y), via complex-step derivatives of the real H.
    fn grad_conj(b: &[Complex64], k: usize) -> Complex64 {
        let hstep = 1e-30;
        let eval = |dir: Complex64| -> f64 {
            // H is a real polynomial in (x, y); evaluate with x,y complexified by i·h along dir
            type C2 = (Complex64, Complex64);
            let xy: Vec<C2> = b
                .iter()
                .enumerate()
                .map(|(i, z)| {
                    let (mut x, mut y) = (Complex64::new(z.re, 0.0), Complex64::new(z.im, 0.0));
                    if i == k {
                        x += Complex64::new(0.0, hstep * dir.re);
                        y += Complex64::new(0.0, hstep * dir.im);
                    }
                    (x, y)
                })
                .collect();
            // real form: b² = P + iQ with P = x² − y², Q = 2xy, so Re(b_k² b̄_{k+1}²) = P_k P_{k+1} + Q_k Q_{k+1}
            let mut h = Complex64::new(0.0, 0.0);
            for &(x, y) in &xy {
                h -= 0.5 * (x * x + y * y) * (x * x + y * y);
            }
            for w in xy.windows(2) {
                let ((x1, y1), (x2, y2)) = (w[0], w[1]);
                let (p1, q1, p2, q2) = (x1 * x1 - y1 * y1, 2.0 * x1 * y1, x2 * x2 - y2 * y2, 2.0 * x2 * y2);
                h += 2.0 * (p1 * p2 + q1 * q2);
            }
            h.im / hstep
        };
        let dx = eval(c(1.0, 0.0));
        let dy = eval(c(0.0, 1.0));
        0.5 * c(dx, dy)
    }

    #[test]
    fn rhs_is_hamiltonian_gradient() {
        let b = vec![c(0.3, -0.7), c(1.1, 0.4), c(-0.2, 0.5)];
        let db = toy_rhs(&b);
        for k in 0..b.len() {
            let want = grad_conj(&b, k);
            let got = c(0.0, 1.0) * db[k];
            assert!((got - want).norm() < 1e-12, "k={k}: {got} vs {want}");
        }
        let b2 = vec![c(0.9, 0.2), c(-0.4, 0.6)];
        let db2 = toy_rhs(&b2);
        for k in 0..2 {
            assert!((c(0.0, 1.0) * db2[k] - grad_conj(&b2, k)).norm() < 1e-12);
        }
    }

    #[test]
    fn conserved_quantities_are_gauge_invariant() {
        let b = vec![c(0.3, -0.7), c(1.1, 0.4), c(-0.2, 0.5), c(0.05, 0.0)];
        let rot: Vec<Complex64> = b.iter().map(|z| z * Complex64::from_polar(1.0, 0.83)).collect();
        let (m0, h0) = toy_conserved(&b);
        let (m1, h1) = toy_conserved(&rot);
        assert!((m0 - m1).abs() < 1e-14 && (h0 - h1).abs() < 1e-14);
    }

    #[test]
    fn norms_of_single_mode() {
        let j = Mode::new(3, 4);
        let r = norm_report(&[j], &[c(0.0, 2.0)], &[0.5, 1.0]);
        assert_eq!(r.l1, 2.0);
        assert_eq!(r.l2, 2.0);
        assert!((r.hs[0].1 - 2.0 * 6f64.sqrt()).abs() < 1e-12);
        assert!((r.hs[1].1 - 12.0).abs() < 1e-12);
        assert!((growth_target(8, 0.5) - 0.5).abs() < 1e-15);
    }
}
