//! Shooting search for toy-model orbits that carry the mass from generation 3 to g−1.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{integrate_observed, toy_conserved, DynamicsError, Flow, IntegratorOptions, ToyModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraversalOptions {
    pub threshold_in: f64,
    pub threshold_out: f64,
    pub tol: f64,
    pub phase_grid: usize,
    pub refine_iters: usize,
    /// Handoff hysteresis for stage detection.
    pub hysteresis: f64,
    /// Largest step, so peaks are resolved between steps.
    pub max_step: f64,
}

impl Default for TraversalOptions {
    fn default() -> Self {
        TraversalOptions {
            threshold_in: 0.99,
            threshold_out: 0.90,
            tol: 1e-10,
            phase_grid: 48,
            refine_iters: 40,
            hysteresis: 0.05,
            max_step: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    /// 1-based generation that takes the lead.
    pub generation: usize,
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyOrbitResult {
    pub g: usize,
    pub mu: f64,
    pub initial: Vec<Complex64>,
    /// State at `t0`.
    pub final_state: Vec<Complex64>,
    pub t0: f64,
    pub stage_times: Vec<StageTime>,
    /// |b_3(0)|².
    pub mass_in: f64,
    /// Peak of |b_{g−1}(t)|² over its first excursion, attained at `t0`.
    pub mass_out: f64,
    /// Seed phases of generations 5..g−1.
    pub phases: Vec<f64>,
    /// Largest relative drift of mass and H over [0, t0].
    pub mass_drift: f64,
    pub energy_drift: f64,
    pub tol: f64,
}

fn seed_state(g: usize, mu: f64, phases: &[f64]) -> Vec<Complex64> {
    let mut b = vec![Complex64::new(0.0, 0.0); g];
    // unstable direction of the linearization at the generation-3 circle
    b[3] = Complex64::new(0.5, -0.5 * 3f64.sqrt()) * mu;
    for (i, &ph) in phases.iter().enumerate() {
        b[4 + i] = Complex64::from_polar(mu, ph);
    }
    let rest: f64 = b.iter().map(|z| z.norm_sqr()).sum();
    b[2] = Complex64::new((1.0 - rest).max(0.0).sqrt(), 0.0);
    b
}

struct Run {
    peaks: Vec<f64>,
    peak_time: Vec<f64>,
    times: Vec<f64>,
    masses: Vec<Vec<f64>>,
    mass_drift: f64,
    energy_drift: f64,
    last: Vec<Complex64>,
}

/// Integrate up to `horizon`, stopping once the `watch` generation has completed its
/// first excursion: its mass passed ½ and then fell by a quarter from the peak.
fn run(g: usize, b0: &[Complex64], horizon: f64, watch: usize, opts: &TraversalOptions, record: bool) -> Result<Run, DynamicsError> {
    let io = IntegratorOptions { rtol: opts.tol, atol: opts.tol, h_max: Some(opts.max_step), ..Default::default() };
    let (m0, h0) = toy_conserved(b0);
    let mut out = Run {
        peaks: vec![0.0; g],
        peak_time: vec![0.0; g],
        times: Vec::new(),
        masses: Vec::new(),
        mass_drift: 0.0,
        energy_drift: 0.0,
        last: Vec::new(),
    };
    integrate_observed(&ToyModel { g }, 0.0, b0, horizon, &[], &io, &mut |t, y, _| {
        for (k, z) in y.iter().enumerate() {
            let m = z.norm_sqr();
            if m > out.peaks[k] {
                out.peaks[k] = m;
                out.peak_time[k] = t;
            }
        }
        let w = y[watch].norm_sqr();
        if out.peaks[watch] >= 0.5 && w < out.peaks[watch] - 0.25 {
            return Flow::Stop;
        }
        if record {
            let (m, h) = toy_conserved(y);
            out.mass_drift = out.mass_drift.max((m - m0).abs() / m0);
            out.energy_drift = out.energy_drift.max((h - h0).abs() / h0.abs());
            out.times.push(t);
            out.masses.push(y.iter().map(|z| z.norm_sqr()).collect());
            out.last = y.to_vec();
        }
        Flow::Continue
    })?;
    Ok(out)
}

/// Handoff times from per-generation masses: the leader changes only when another
/// generation exceeds it by more than `hysteresis`.
pub fn stage_times(times: &[f64], masses: &[Vec<f64>], hysteresis: f64) -> Vec<StageTime> {
    let mut out = Vec::new();
    let Some(first) = masses.first() else { return out };
    let argmax = |m: &[f64]| m.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
    let mut leader = argmax(first);
    out.push(StageTime { generation: leader + 1, time: times[0] });
    for (t, m) in times.iter().zip(masses) {
        let cand = argmax(m);
        if cand != leader && m[cand] > m[leader] + hysteresis {
            leader = cand;
            out.push(StageTime { generation: leader + 1, time: *t });
        }
    }
    out
}

fn golden_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Search seed phases stage by stage so that the mass reaches generation g−1.
///
/// Generations 1, 2 and g stay at zero (an invariant subspace); generation 3 holds
/// the bulk of the mass, generation 4 is seeded along the unstable direction and
/// generations 5..g−1 get seeds of size μ whose phases are tuned one at a time.
pub fn find_traversal_orbit(g: usize, mu: f64, opts: &TraversalOptions) -> Result<ToyOrbitResult, DynamicsError> {
    if g < 5 {
        return Err(DynamicsError::Invalid(format!("traversal needs g >= 5, got {g}")));
    }
    if !(mu >= 0.0 && mu < 1.0) {
        return Err(DynamicsError::Invalid(format!("mu must lie in [0, 1), got {mu}")));
    }
    if !(opts.threshold_in > 0.0 && opts.threshold_in <= 1.0 && opts.threshold_out > 0.0 && opts.threshold_out <= 1.0) {
        return Err(DynamicsError::Invalid("thresholds must lie in (0, 1]".into()));
    }
    if opts.phase_grid < 3 || !(opts.max_step > 0.0) || !(opts.tol > 0.0) {
        return Err(DynamicsError::Invalid("phase_grid >= 3, max_step > 0 and tol > 0 required".into()));
    }
    let stage_len = 2.0 * (1.0 / mu.max(1e-300)).ln().min(700.0) / 3f64.sqrt() + 10.0;
    let n_free = g - 5;
    let mut phases = vec![0.0; n_free];
    for s in 0..n_free {
        // generation index (0-based) whose peak we maximize
        let target = 4 + s;
        let horizon = (target as f64 - 2.0) * stage_len;
        let objective = |ph: f64| -> f64 {
            let mut p = phases.clone();
            p[s] = ph;
            run(g, &seed_state(g, mu, &p), horizon, target, opts, false).map(|r| r.peaks[target]).unwrap_or(0.0)
        };
        let step = 2.0 * PI / opts.phase_grid as f64;
        let scores: Vec<(f64, f64)> = (0..opts.phase_grid)
            .into_par_iter()
            .map(|i| {
                let ph = i as f64 * step;
                (ph, objective(ph))
            })
            .collect();
        let (best_ph, best_val) = scores.iter().copied().fold((0.0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let (ph, val) = golden_max(&objective, best_ph - step, best_ph + step, opts.refine_iters);
        phases[s] = if val >= best_val { ph.rem_euclid(2.0 * PI) } else { best_ph };
    }
    let b0 = seed_state(g, mu, &phases);
    let horizon = (g as f64 - 3.0) * stage_len;
    let first = run(g, &b0, horizon, g - 2, opts, false)?;
    let out_idx = g - 2;
    if first.peaks[out_idx] < opts.threshold_out || b0[2].norm_sqr() < opts.threshold_in {
        return Err(DynamicsError::SearchFailed { best_peak: first.peaks[out_idx], profile: first.peaks });
    }
    let t0 = first.peak_time[out_idx];
    let full = run(g, &b0, t0, g - 2, opts, true)?;
    let final_state = full.last.clone();
    let stages = stage_times(&full.times, &full.masses, opts.hysteresis);
    Ok(ToyOrbitResult {
        g,
        mu,
        mass_in: b0[2].norm_sqr(),
        mass_out: final_state[out_idx].norm_sqr(),
        initial: b0,
        final_state,
        t0,
        stage_times: stages,
        phases,
        mass_drift: full.mass_drift,
        energy_drift: full.energy_drift,
        tol: opts.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mu_stays_on_circle() {
        match find_traversal_orbit(6, 0.0, &TraversalOptions { phase_grid: 4, refine_iters: 2, ..Default::default() }) {
            Err(DynamicsError::SearchFailed { profile, .. }) => {
                assert!((profile[2] - 1.0).abs() < 1e-12);
                assert!(profile.iter().enumerate().all(|(k, &m)| k == 2 || m == 0.0));
            }
            other => panic!("expected search failure, got {other:?}"),
        }
    }

    #[test]
    fn seed_is_normalized() {
        let b = seed_state(7, 1e-3, &[0.3, 1.2]);
        let m: f64 = b.iter().map(|z| z.norm_sqr()).sum();
        assert!((m - 1.0).abs() < 1e-14);
        assert_eq!(b[0], Complex64::new(0.0, 0.0));
        assert_eq!(b[6], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn hysteresis_suppresses_chatter() {
        let times = [0.0, 1.0, 2.0, 3.0];
        let masses = vec![vec![0.6, 0.4], vec![0.49, 0.51], vec![0.51, 0.49], vec![0.2, 0.8]];
        let st = stage_times(&times, &masses, 0.05);
        assert_eq!(st, vec![StageTime { generation: 1, time: 0.0 }, StageTime { generation: 2, time: 3.0 }]);
    }

    #[test]
    fn rejects_small_g() {
        assert!(find_traversal_orbit(4, 1e-3, &TraversalOptions::default()).is_err());
        assert!(find_traversal_orbit(6, 1.5, &TraversalOptions::default()).is_err());
    }
}
