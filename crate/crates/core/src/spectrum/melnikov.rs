//! Monte-Carlo estimate of the λ-measure where a Melnikov lower bound fails.
//!
//! With corrections off the divisor of a tuple is K + εF(λ), with K an integer
//! and F = −λ·ℓ + c·μ(λ). Only |K| ≤ ε·max|F| + γε can ever violate the bound, so
//! tuples are reduced to the distinct signatures (K, ℓ, c) they realize, and a
//! λ sample is summarised by the critical γ*(λ) = min ⟨ℓ⟩^τ |K + εF| / ε over
//! those signatures. A sample violates the bound at γ exactly when γ* < γ.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::resonance::{tag_items, Item, QuartetSpace, Signature, TupleVisitor, DEFAULT_M0_CUTOFF};
use crate::rng;

use super::{mu_bound, mu_real, Corrections, FrequencyModel, SpectrumError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelnikovOptions {
    /// Tuple order, 2 or 4.
    pub p: usize,
    /// Defaults to d + 2.
    pub tau: Option<f64>,
    pub ell_max: i64,
    pub window: i64,
    pub samples: usize,
    pub seed: u64,
    pub exclude_resonant: bool,
    /// Also drop signatures whose divisor vanishes identically in λ.
    pub exclude_identical: bool,
    /// Latin hypercube instead of i.i.d. uniform draws.
    pub stratified: bool,
    pub pair_budget: usize,
}

impl Default for MelnikovOptions {
    fn default() -> Self {
        MelnikovOptions {
            p: 4,
            tau: None,
            ell_max: 6,
            window: 20,
            samples: 500,
            seed: 0,
            exclude_resonant: true,
            exclude_identical: false,
            stratified: false,
            pair_budget: 40_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelnikovPoint {
    pub gamma: f64,
    pub tau: f64,
    pub fraction: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Realized signatures and per-sample critical γ.
#[derive(Clone, Debug)]
pub struct MelnikovSetup {
    pub tau: f64,
    pub eps: f64,
    pub signatures: Vec<Signature>,
    pub lambdas: Vec<Vec<f64>>,
    pub critical: Vec<f64>,
    pub seed: u64,
}

struct Realized {
    exclude_resonant: bool,
    seen: HashSet<Signature>,
}

impl TupleVisitor for Realized {
    fn wants(&mut self, sig: &Signature) -> bool {
        !self.seen.contains(sig)
    }

    fn visit(&mut self, sig: &Signature, items: &[Item]) {
        if !self.exclude_resonant || !tag_items(items, &sig.ell(), DEFAULT_M0_CUTOFF).is_resonant() {
            self.seen.insert(*sig);
        }
    }
}

fn draw_lambdas(d: usize, count: usize, seed: u64, stratified: bool) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, 0x6d65_6c6e);
    if !stratified {
        return (0..count).map(|_| (0..d).map(|_| r.gen_range(0.5..1.0)).collect()).collect();
    }
    let mut out = vec![vec![0.0; d]; count];
    for i in 0..d {
        let mut cells: Vec<usize> = (0..count).collect();
        cells.shuffle(&mut r);
        for (row, &c) in out.iter_mut().zip(&cells) {
            row[i] = 0.5 + 0.5 * (c as f64 + r.gen::<f64>()) / count as f64;
        }
    }
    out
}

impl MelnikovSetup {
    /// Signatures that may violate the bound for some γ ≤ `gamma_max`.
    pub fn new(model: &FrequencyModel, opts: &MelnikovOptions, gamma_max: f64) -> Result<Self, SpectrumError> {
        if model.corrections != Corrections::Off {
            return Err(SpectrumError::Invalid("Melnikov sampling needs corrections off".into()));
        }
        if !(gamma_max.is_finite() && gamma_max >= 0.0) {
            return Err(SpectrumError::Invalid(format!("gamma must be >= 0, got {gamma_max}")));
        }
        if opts.samples == 0 {
            return Err(SpectrumError::Invalid("need at least one λ sample".into()));
        }
        let d = model.sites.d();
        let tau = opts.tau.unwrap_or(d as f64 + 2.0);
        let eps = model.eps;
        let space = QuartetSpace::window(&model.sites, model.sublattice_n, opts.window, opts.ell_max, opts.p, opts.pair_budget)?;
        let f_max = opts.ell_max as f64 + opts.p as f64 * mu_bound(d, 1.0);
        let kcap = (eps * (f_max + gamma_max)).floor() as i64;
        let mut v = Realized { exclude_resonant: opts.exclude_resonant, seen: HashSet::new() };
        space.for_each(-kcap, kcap, &mut v);
        let mut signatures: Vec<Signature> = v.seen.into_iter().collect();
        signatures.sort();
        let lambdas = draw_lambdas(d, opts.samples, opts.seed, opts.stratified);
        let mus = lambdas.par_iter().map(|l| mu_real(l)).collect::<Result<Vec<_>, _>>()?;
        if opts.exclude_identical {
            let probe = draw_lambdas(d, 20, opts.seed ^ 0x5eed, false);
            let probe_mu = probe.iter().map(|l| mu_real(l)).collect::<Result<Vec<_>, _>>()?;
            signatures.retain(|s| {
                let f = s.fterms();
                s.k != 0 || !probe.iter().zip(&probe_mu).all(|(l, m)| f.eval(l, m).abs() <= 1e-8)
            });
        }
        let fts: Vec<_> = signatures.iter().map(|s| (s.k as f64, (s.ell_l1().max(1) as f64).powf(tau), s.fterms())).collect();
        let critical = lambdas
            .par_iter()
            .zip(&mus)
            .map(|(l, m)| {
                fts.iter().map(|(k, w, f)| w * (k + eps * f.eval(l, m)).abs() / eps).fold(f64::INFINITY, f64::min)
            })
            .collect();
        Ok(MelnikovSetup { tau, eps, signatures, lambdas, critical, seed: opts.seed })
    }

    pub fn fraction(&self, gamma: f64) -> f64 {
        self.critical.iter().filter(|&&g| g < gamma).count() as f64 / self.critical.len() as f64
    }

    pub fn point(&self, gamma: f64) -> MelnikovPoint {
        MelnikovPoint { gamma, tau: self.tau, fraction: self.fraction(gamma), samples: self.critical.len(), seed: self.seed }
    }
}

/// λ is resampled over (1/2, 1)^d; the model supplies sites, ε and N.
pub fn melnikov_violation_fraction(model: &FrequencyModel, gamma: f64, opts: &MelnikovOptions) -> Result<f64, SpectrumError> {
    Ok(MelnikovSetup::new(model, opts, gamma)?.fraction(gamma))
}

pub fn melnikov_sweep(model: &FrequencyModel, gammas: &[f64], opts: &MelnikovOptions) -> Result<Vec<MelnikovPoint>, SpectrumError> {
    let gmax = gammas.iter().copied().fold(0.0, f64::max);
    let setup = MelnikovSetup::new(model, opts, gmax)?;
    Ok(gammas.iter().map(|&g| setup.point(g)).collect())
}

/// Slope of log(fraction) against log(γ) over points with a nonzero fraction.
pub fn fitted_decay_exponent(points: &[MelnikovPoint]) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) =
        points.iter().filter(|p| p.fraction > 0.0 && p.gamma > 0.0).map(|p| (p.gamma.ln(), p.fraction.ln())).unzip();
    let distinct = x.iter().any(|&a| (a - x[0]).abs() > 1e-12);
    (x.len() >= 2 && distinct).then(|| super::ls_slope(&x, &y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Mode;
    use crate::resonance::{classify, is_admissible};
    use crate::spectrum::{ell_ball, ModeKind, SmallDivisorQuery, TangentialSites};

    fn model(eps: f64) -> FrequencyModel {
        FrequencyModel::new(TangentialSites::unchecked(vec![1, 2]), vec![0.7, 0.8], eps, 1, Corrections::Off).unwrap()
    }

    #[test]
    fn zero_gamma_gives_zero() {
        let opts = MelnikovOptions { window: 4, ell_max: 3, samples: 30, ..Default::default() };
        assert_eq!(melnikov_violation_fraction(&model(0.1), 0.0, &opts).unwrap(), 0.0);
    }

    #[test]
    fn sweep_is_monotone() {
        let opts = MelnikovOptions { window: 5, ell_max: 3, samples: 60, exclude_identical: true, ..Default::default() };
        let g = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 3.0];
        let pts = melnikov_sweep(&model(0.1), &g, &opts).unwrap();
        assert!(pts.windows(2).all(|w| w[0].fraction <= w[1].fraction));
        for p in &pts {
            let f = melnikov_violation_fraction(&model(0.1), p.gamma, &opts).unwrap();
            assert_eq!(f, p.fraction);
        }
    }

    #[test]
    fn corrections_are_rejected() {
        let mut m = model(0.1);
        m.corrections = Corrections::HashNoise { m0: 1.0, seed: 1 };
        assert!(MelnikovSetup::new(&m, &MelnikovOptions::default(), 0.1).is_err());
    }

    #[test]
    fn stratified_draws_cover_every_stratum() {
        let l = draw_lambdas(3, 50, 9, true);
        for i in 0..3 {
            let mut cells: Vec<usize> = l.iter().map(|r| ((r[i] - 0.5) * 2.0 * 50.0) as usize).collect();
            cells.sort();
            assert_eq!(cells, (0..50).collect::<Vec<_>>());
        }
    }

    /// Double loop over ordered pairs evaluated with the model's own divisor.
    #[test]
    fn p2_matches_double_loop() {
        let sites = TangentialSites::unchecked(vec![1, 2]);
        let (window, ell_max, eps, tau) = (6, 4, 0.1, 4.0);
        let opts = MelnikovOptions { p: 2, window, ell_max, samples: 10, seed: 3, ..Default::default() };
        let base = FrequencyModel::new(sites.clone(), vec![0.7, 0.8], eps, 1, Corrections::Off).unwrap();
        let setup = MelnikovSetup::new(&base, &opts, 2.0).unwrap();
        let modes: Vec<Mode> = (-window..=window)
            .flat_map(|m| (-window..=window).map(move |n| Mode::new(m, n)))
            .filter(|&j| !matches!(sites.kind(j), ModeKind::Tangential(_)))
            .collect();
        let ells = ell_ball(2, ell_max);
        for (lam, &crit) in setup.lambdas.iter().zip(&setup.critical) {
            let m = FrequencyModel::new(sites.clone(), lam.clone(), eps, 1, Corrections::Off).unwrap();
            let mut best = f64::INFINITY;
            for &a in &modes {
                for &b in &modes {
                    for sa in [1i8, -1] {
                        for sb in [1i8, -1] {
                            for ell in &ells {
                                let (mo, sg) = ([a, b], [sa, sb]);
                                if !is_admissible(&mo, ell, &sg, &sites, 1).unwrap() {
                                    continue;
                                }
                                if classify(&mo, ell, &sg, &sites, 1, DEFAULT_M0_CUTOFF).unwrap().tag.is_resonant() {
                                    continue;
                                }
                                let q = SmallDivisorQuery { ell: ell.clone(), modes: mo.to_vec(), sigma: sg.to_vec() };
                                let l1: i64 = ell.iter().map(|x| x.abs()).sum();
                                let w = (l1.max(1) as f64).powf(tau);
                                best = best.min(w * m.small_divisor(&q).unwrap().abs() / eps);
                            }
                        }
                    }
                }
            }
            for g in [1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0] {
                assert_eq!(best < g, crit < g, "λ={lam:?} γ={g} brute={best} fast={crit}");
            }
        }
    }

    #[test]
    fn decay_exponent_of_power_law() {
        let pts: Vec<MelnikovPoint> = [1e-3, 1e-2, 1e-1]
            .iter()
            .map(|&g: &f64| MelnikovPoint { gamma: g, tau: 4.0, fraction: 0.5 * g.sqrt(), samples: 1, seed: 0 })
            .collect();
        assert!((fitted_decay_exponent(&pts).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(fitted_decay_exponent(&pts[..1]), None);
    }
}
