//! Frequency model: tangential and normal frequencies, the characteristic
//! polynomial roots μ_i(λ), small divisors and rectangle defects.

mod melnikov;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::Mode;
use crate::rng;

pub use melnikov::{
    fitted_decay_exponent, melnikov_sweep, melnikov_violation_fraction, MelnikovOptions, MelnikovPoint,
    MelnikovSetup,
};

#[derive(Debug, Error, PartialEq)]
pub enum SpectrumError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("mode {0} is a tangential site")]
    TangentialMode(Mode),
    #[error("mode {0} is outside the sublattice Z x {1}Z")]
    OffSublattice(Mode, i64),
    #[error("root finder did not converge (residual {0:e})")]
    NoConvergence(f64),
    #[error("not a rectangle: {0:?}")]
    NotRectangle([Mode; 4]),
    #[error("enumeration needs {needed} table entries, budget is {budget}")]
    MemoryBudget { needed: usize, budget: usize },
}

/// ⟨x⟩ = max(1, |x|).
pub fn bracket(x: i64) -> f64 {
    (x.unsigned_abs().max(1)) as f64
}

/// Exhaustive search for 0 < |ℓ|₁ <= L with Σ ℓ_i m_i = 0.
///
/// ℓ is enumerated by increasing |ℓ|₁, lexicographically within a shell, and only
/// with a positive first nonzero entry (−ℓ gives the same relation).
pub fn check_l_generic(m: &[i64], l: usize) -> Result<(), Vec<i64>> {
    for norm in 1..=l as i64 {
        for v in ell_shell(m.len(), norm) {
            if v.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0) && v.iter().zip(m).map(|(a, b)| a * b).sum::<i64>() == 0
            {
                return Err(v);
            }
        }
    }
    Ok(())
}

/// All ℓ ∈ ℤ^d with |ℓ|₁ = norm, in lexicographic order.
pub fn ell_shell(d: usize, norm: i64) -> Vec<Vec<i64>> {
    fn rec(d: usize, rest: i64, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if d == 1 {
            for x in [-rest, rest] {
                cur.push(x);
                out.push(cur.clone());
                cur.pop();
                if rest == 0 {
                    break;
                }
            }
            return;
        }
        for x in -rest..=rest {
            cur.push(x);
            rec(d - 1, rest - x.abs(), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if d > 0 {
        rec(d, norm, &mut Vec::with_capacity(d), &mut out);
    }
    out
}

/// All ℓ with |ℓ|₁ <= max, shells in increasing order.
pub fn ell_ball(d: usize, max: i64) -> Vec<Vec<i64>> {
    (0..=max).flat_map(|r| ell_shell(d, r)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TangentialSites {
    pub m: Vec<i64>,
    /// Largest L for which genericity was verified.
    pub genericity_l: usize,
}

impl TangentialSites {
    pub fn new(m: Vec<i64>, l: usize) -> Result<Self, SpectrumError> {
        if m.is_empty() || m.len() > 8 {
            return Err(SpectrumError::Invalid(format!("need 1..=8 tangential sites, got {}", m.len())));
        }
        let mut s = m.clone();
        s.sort();
        if s.windows(2).any(|w| w[0] == w[1]) {
            return Err(SpectrumError::Invalid(format!("tangential sites must be distinct: {m:?}")));
        }
        check_l_generic(&m, l)
            .map_err(|ell| SpectrumError::Invalid(format!("sites {m:?} are not {l}-generic: ell = {ell:?}")))?;
        Ok(TangentialSites { m, genericity_l: l })
    }

    /// Distinct sites without a genericity requirement.
    pub fn unchecked(m: Vec<i64>) -> Self {
        TangentialSites { m, genericity_l: 0 }
    }

    pub fn d(&self) -> usize {
        self.m.len()
    }

    pub fn index_of(&self, m: i64) -> Option<usize> {
        self.m.iter().position(|&x| x == m)
    }

    pub fn kind(&self, j: Mode) -> ModeKind {
        match (self.index_of(j.m), j.n) {
            (Some(i), 0) => ModeKind::Tangential(i),
            (Some(i), _) => ModeKind::Column(i),
            (None, _) => ModeKind::Free,
        }
    }

    /// Smallest admissible sublattice step N > max |m_i|.
    pub fn default_sublattice(&self) -> i64 {
        self.m.iter().map(|x| x.abs()).max().unwrap_or(0) + 1
    }

    pub fn default_for(d: usize) -> Vec<i64> {
        match d {
            1 => vec![1],
            2 => vec![1, 2],
            3 => vec![1, 2, 4],
            _ => (0..d as u32).map(|k| 3i64.pow(k)).collect(),
        }
    }
}

/// Partition of ℤ²_N: tangential sites, columns above them, and the rest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeKind {
    Tangential(usize),
    Column(usize),
    Free,
}

/// Monic coefficients (ascending powers) of P(t) = ∏(t+λ_i) − 2Σλ_i∏_{k≠i}(t+λ_k).
pub fn char_poly(lambda: &[f64]) -> Vec<f64> {
    let mul = |p: &[f64], c: f64| {
        let mut out = vec![0.0; p.len() + 1];
        for (k, &a) in p.iter().enumerate() {
            out[k] += a * c;
            out[k + 1] += a;
        }
        out
    };
    let d = lambda.len();
    let mut full = vec![1.0];
    for &l in lambda {
        full = mul(&full, l);
    }
    let mut out = full;
    for i in 0..d {
        let mut q = vec![1.0];
        for (k, &l) in lambda.iter().enumerate() {
            if k != i {
                q = mul(&q, l);
            }
        }
        for (k, c) in q.iter().enumerate() {
            out[k] -= 2.0 * lambda[i] * c;
        }
    }
    out
}

pub fn eval_poly(c: &[f64], t: Complex64) -> Complex64 {
    c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &a| acc * t + a)
}

fn eval_poly_deriv(c: &[f64], t: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for k in (1..c.len()).rev() {
        acc = acc * t + c[k] * k as f64;
    }
    acc
}

/// Roots of P(·, λ), sorted by real part then imaginary part.
///
/// Durand–Kerner iteration followed by Newton polishing; tiny imaginary parts
/// are snapped to zero.
pub fn mu_roots(lambda: &[f64]) -> Result<Vec<Complex64>, SpectrumError> {
    if lambda.is_empty() || lambda.len() > 8 || lambda.iter().any(|x| !x.is_finite()) {
        return Err(SpectrumError::Invalid("lambda must have 1..=8 finite entries".into()));
    }
    let c = char_poly(lambda);
    let d = lambda.len();
    let cmax = c.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let radius = 1.0 + c[..d].iter().map(|x| x.abs()).fold(0.0, f64::max);
    let seed = Complex64::new(0.4, 0.9);
    let mut z: Vec<Complex64> = (0..d).map(|k| seed.powu(k as u32) * radius * 0.5).collect();
    for _ in 0..2000 {
        let mut delta = 0.0f64;
        for i in 0..d {
            let mut den = Complex64::new(1.0, 0.0);
            for k in 0..d {
                if k != i {
                    den *= z[i] - z[k];
                }
            }
            let step = eval_poly(&c, z[i]) / den;
            z[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 * radius {
            break;
        }
    }
    for r in &mut z {
        for _ in 0..3 {
            let dp = eval_poly_deriv(&c, *r);
            if dp.norm() == 0.0 {
                break;
            }
            let step = eval_poly(&c, *r) / dp;
            if !step.is_finite() {
                break;
            }
            *r -= step;
        }
        if r.im.abs() <= 1e-12 * (1.0 + r.re.abs()) {
            r.im = 0.0;
        }
    }
    let tol = 1e-10 * (1.0 + cmax);
    let worst = z.iter().map(|&r| eval_poly(&c, r).norm()).fold(0.0, f64::max);
    if !(worst <= tol) {
        return Err(SpectrumError::NoConvergence(worst));
    }
    z.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(z)
}

/// Real roots μ_1 <= ... <= μ_d; errors if any root is genuinely complex.
pub fn mu_real(lambda: &[f64]) -> Result<Vec<f64>, SpectrumError> {
    let z = mu_roots(lambda)?;
    if let Some(r) = z.iter().find(|r| r.im != 0.0) {
        return Err(SpectrumError::Invalid(format!("complex root {r} for lambda {lambda:?}")));
    }
    Ok(z.iter().map(|r| r.re).collect())
}

/// Upper bound on |μ_i| (Cauchy bound of the monic polynomial).
pub fn mu_bound(d: usize, lambda_max: f64) -> f64 {
    let lam = vec![lambda_max; d];
    let c = char_poly(&lam);
    // coefficients grow with λ, so λ_max bounds every λ in the box
    1.0 + c[..d].iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Bounded correction terms (ϖ_m, Θ_m, Θ_{m,n}).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Corrections {
    #[default]
    Off,
    /// Deterministic hash noise in [−M₀ε², M₀ε²].
    HashNoise { m0: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyModel {
    pub sites: TangentialSites,
    pub lambda: Vec<f64>,
    pub eps: f64,
    pub sublattice_n: i64,
    pub corrections: Corrections,
    pub mu: Vec<f64>,
}

impl FrequencyModel {
    pub fn new(sites: TangentialSites, lambda: Vec<f64>, eps: f64, n: i64, corrections: Corrections) -> Result<Self, SpectrumError> {
        if lambda.len() != sites.d() {
            return Err(SpectrumError::Invalid(format!("lambda has {} entries, sites {}", lambda.len(), sites.d())));
        }
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(SpectrumError::Invalid(format!("eps must be >= 0, got {eps}")));
        }
        if n < 1 {
            return Err(SpectrumError::Invalid(format!("sublattice N must be >= 1, got {n}")));
        }
        if let Corrections::HashNoise { m0, .. } = corrections {
            if !(m0.is_finite() && m0 >= 0.0) {
                return Err(SpectrumError::Invalid(format!("M0 must be >= 0, got {m0}")));
            }
        }
        let mu = mu_real(&lambda)?;
        Ok(FrequencyModel { sites, lambda, eps, sublattice_n: n, corrections, mu })
    }

    /// ω_i = m_i² − ελ_i.
    pub fn omega_tangential(&self) -> Vec<f64> {
        self.sites.m.iter().zip(&self.lambda).map(|(&m, &l)| (m * m) as f64 - self.eps * l).collect()
    }

    fn check_mode(&self, j: Mode) -> Result<ModeKind, SpectrumError> {
        if j.n % self.sublattice_n != 0 {
            return Err(SpectrumError::OffSublattice(j, self.sublattice_n));
        }
        match self.sites.kind(j) {
            ModeKind::Tangential(_) => Err(SpectrumError::TangentialMode(j)),
            k => Ok(k),
        }
    }

    /// Ω̃_j: m² on the axis, m²+n² on free modes, εμ_i + n² on columns.
    pub fn omega_tilde(&self, j: Mode) -> Result<f64, SpectrumError> {
        Ok(match self.check_mode(j)? {
            ModeKind::Column(i) => self.eps * self.mu[i] + (j.n * j.n) as f64,
            _ => j.norm2() as f64,
        })
    }

    pub fn correction(&self, j: Mode) -> f64 {
        let Corrections::HashNoise { m0, seed } = self.corrections else { return 0.0 };
        let amp = m0 * self.eps * self.eps;
        let (m, n) = (j.m as u64, j.n as u64);
        if j.n == 0 {
            amp * rng::hash_unit(&[seed, 1, m]) / bracket(j.m)
        } else {
            let bm = bracket(j.m);
            amp * rng::hash_unit(&[seed, 2, m]) / (bm * bm)
                + amp * rng::hash_unit(&[seed, 3, m, n]) / (bm * bm + bracket(j.n).powi(2))
        }
    }

    pub fn omega_normal(&self, j: Mode) -> Result<f64, SpectrumError> {
        Ok(self.omega_tilde(j)? + self.correction(j))
    }

    pub fn small_divisor(&self, q: &SmallDivisorQuery) -> Result<f64, SpectrumError> {
        q.validate(self.sites.d())?;
        let mut s: f64 = self.omega_tangential().iter().zip(&q.ell).map(|(w, &l)| w * l as f64).sum();
        for (&j, &sg) in q.modes.iter().zip(&q.sigma) {
            s += sg as f64 * self.omega_normal(j)?;
        }
        Ok(s)
    }

    /// Γ = Ω_{j1} − Ω_{j2} + Ω_{j3} − Ω_{j4} on an exact rectangle with diagonals (j1,j3), (j2,j4).
    pub fn gamma_defect(&self, r: [Mode; 4]) -> Result<f64, SpectrumError> {
        let [a, b, c, d] = r;
        if a + c != b + d || a.norm2() + c.norm2() != b.norm2() + d.norm2() {
            return Err(SpectrumError::NotRectangle(r));
        }
        // integer parts cancel exactly; summing them in floats would swamp the corrections
        let (ia, fa) = self.omega_split(a)?;
        let (ib, fb) = self.omega_split(b)?;
        let (ic, fc) = self.omega_split(c)?;
        let (id, fd) = self.omega_split(d)?;
        Ok((ia - ib + ic - id) as f64 + ((fa - fb) + (fc - fd)))
    }

    /// Ω_j as an exact integer part plus a small real part.
    fn omega_split(&self, j: Mode) -> Result<(i128, f64), SpectrumError> {
        let (int, frac) = match self.check_mode(j)? {
            ModeKind::Column(i) => ((j.n as i128) * (j.n as i128), self.eps * self.mu[i]),
            _ => (j.norm2(), 0.0),
        };
        Ok((int, frac + self.correction(j)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallDivisorQuery {
    pub ell: Vec<i64>,
    pub modes: Vec<Mode>,
    pub sigma: Vec<i8>,
}

impl SmallDivisorQuery {
    pub fn validate(&self, d: usize) -> Result<(), SpectrumError> {
        if self.ell.len() != d {
            return Err(SpectrumError::Invalid(format!("ell has {} entries, expected {d}", self.ell.len())));
        }
        if self.modes.len() != self.sigma.len() || !(2..=4).contains(&self.modes.len()) {
            return Err(SpectrumError::Invalid("need 2..=4 modes with one sign each".into()));
        }
        if self.sigma.iter().any(|&s| s != 1 && s != -1) {
            return Err(SpectrumError::Invalid("signs must be ±1".into()));
        }
        Ok(())
    }
}

/// Mean |Γ| over random rectangles with vertices in the window |m|,|n| ∈ [J, 2J].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaScaling {
    pub points: Vec<(i64, f64)>,
    pub slope: f64,
}

/// Random integer rectangle with every vertex in [J, 2J]², avoiding the site columns.
pub fn random_window_rectangle(rng: &mut impl Rng, j: i64, sites: &TangentialSites) -> [Mode; 4] {
    loop {
        let p = Mode::new(rng.gen_range(j..=2 * j), rng.gen_range(j..=2 * j));
        let u = Mode::new(rng.gen_range(-j / 2..=j / 2), rng.gen_range(-j / 2..=j / 2));
        if u == Mode::new(0, 0) {
            continue;
        }
        let t = rng.gen_range(1..=3) * if rng.gen() { 1 } else { -1 };
        let v = Mode::new(-u.n * t, u.m * t);
        let r = [p, p + u, p + u + v, p + v];
        let inside = r.iter().all(|x| (j..=2 * j).contains(&x.m) && (j..=2 * j).contains(&x.n));
        if inside && r.iter().all(|x| sites.index_of(x.m).is_none()) {
            return [r[0], r[1], r[2], r[3]];
        }
    }
}

/// Least-squares slope of y on x.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn gamma_scaling(model: &FrequencyModel, js: &[i64], samples: usize, seed: u64) -> Result<GammaScaling, SpectrumError> {
    if js.len() < 2 || samples == 0 || js.iter().any(|&j| j < 2) {
        return Err(SpectrumError::Invalid("need >= 2 window scales >= 2 and samples > 0".into()));
    }
    let mut points = Vec::with_capacity(js.len());
    for (k, &j) in js.iter().enumerate() {
        let mut r = rng::stream(seed, k as u64);
        let mut total = 0.0;
        for _ in 0..samples {
            total += model.gamma_defect(random_window_rectangle(&mut r, j, &model.sites))?.abs();
        }
        points.push((j, total / samples as f64));
    }
    let lx: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    Ok(GammaScaling { slope: ls_slope(&lx, &ly), points })
}
