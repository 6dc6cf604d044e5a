//! Adaptive Dormand–Prince 8(5,3) integration of complex ODE systems.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DynamicsError;

/// A first-order system y' = f(t, y) on complex vectors.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[Complex64], dy: &mut [Complex64]);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Upper bound on the step; `None` means unbounded.
    pub h_max: Option<f64>,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions { rtol: 1e-10, atol: 1e-10, max_steps: 5_000_000, h_max: None }
    }
}

impl IntegratorOptions {
    pub fn with_tol(tol: f64) -> Self {
        IntegratorOptions { rtol: tol, atol: tol, ..Default::default() }
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !ok(self.rtol) || !ok(self.atol) {
            return Err(DynamicsError::Invalid(format!("tolerances must be positive, got rtol={} atol={}", self.rtol, self.atol)));
        }
        if let Some(h) = self.h_max {
            if !ok(h) {
                return Err(DynamicsError::Invalid(format!("h_max must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evals: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// Samples of a trajectory at requested times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<Complex64>>,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn last(&self) -> Option<(f64, &[Complex64])> {
        Some((*self.times.last()?, self.states.last()?.as_slice()))
    }
}

const C: [f64; 12] = [0.0, 0.526001519587677318785587544488e-01, 0.789002279381515978178381316732e-01, 0.118350341907227396726757197510, 0.281649658092772603273242802490, 0.333333333333333333333333333333, 0.25, 0.307692307692307692307692307692, 0.651282051282051282051282051282, 0.6, 0.857142857142857142857142857142, 1.0];
const A: [[f64; 11]; 11] = [
    [5.26001519587677318785587544488e-02, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.97250569845378994544595329183e-02, 5.91751709536136983633785987549e-02, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [2.95875854768068491816892993775e-02, 0.0, 8.87627564304205475450678981324e-02, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [2.41365134159266685502369798665e-01, 0.0, -8.84549479328286085344864962717e-01, 9.24834003261792003115737966543e-01, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.70370370370370370370370370370e-02, 0.0, 0.0, 1.70828608729473871279604482173e-01, 1.25467687566822425016691814123e-01, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.71093750000000000000000000000e-02, 0.0, 0.0, 1.70252211019544039314978060272e-01, 6.02165389804559606850219397283e-02, -1.75781250000000000000000000000e-02, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.70920001185047927108779319836e-02, 0.0, 0.0, 1.70383925712239993810214054705e-01, 1.07262030446373284651809199168e-01, -1.53194377486244017527936158236e-02, 8.27378916381402288758473766002e-03, 0.0, 0.0, 0.0, 0.0],
    [6.24110958716075717114429577812e-01, 0.0, 0.0, -3.36089262944694129406857109825e+00, -8.68219346841726006818189891453e-01, 2.75920996994467083049415600797e+01, 2.01540675504778934086186788979e+01, -4.34898841810699588477366255144e+01, 0.0, 0.0, 0.0],
    [4.77662536438264365890433908527e-01, 0.0, 0.0, -2.48811461997166764192642586468e+00, -5.90290826836842996371446475743e-01, 2.12300514481811942347288949897e+01, 1.52792336328824235832596922938e+01, -3.32882109689848629194453265587e+01, -2.03312017085086261358222928593e-02, 0.0, 0.0],
    [-9.37142430085987325717040528057e-01, 0.0, 0.0, 5.18637242884406370830023853209e+00, 1.09143734899672957818500254654e+00, -8.14978701074692612513997267357e+00, -1.85200656599969598641566180701e+01, 2.27394870993505042818970056734e+01, 2.49360555267965238987089396762e+00, -3.04676447189821950038236690220e+00, 0.0],
    [2.27331014751653820792359768449e+00, 0.0, 0.0, -1.05344954667372501984066689879e+01, -2.00087205822486249909675718444e+00, -1.79589318631187989172765950534e+01, 2.79488845294199600508499808837e+01, -2.85899827713502369474065508674e+00, -8.87285693353062954433549289258e+00, 1.23605671757943030647266201528e+01, 6.43392746015763530355970484046e-01],
];
const B: [f64; 12] = [5.42937341165687622380535766363e-02, 0.0, 0.0, 0.0, 0.0, 4.45031289275240888144113950566e+00, 1.89151789931450038304281599044e+00, -5.80120396001058478146721142270e+00, 3.11164366957819894408916062370e-01, -1.52160949662516078556178806805e-01, 2.01365400804030348374776537501e-01, 4.47106157277725905176885569043e-02];
const E5: [f64; 12] = [0.1312004499419488073250102996e-01, 0.0, 0.0, 0.0, 0.0, -0.1225156446376204440720569753e+01, -0.4957589496572501915214079952e+00, 0.1664377182454986536961530415e+01, -0.3503288487499736816886487290e+00, 0.3341791187130174790297318841e+00, 0.8192320648511571246570742613e-01, -0.2235530786388629525884427845e-01];
// Third-order embedded weights: B minus the b-hat of the 3rd order pair.
const BHH: [f64; 3] = [0.244094488188976377952755905512, 0.733846688281611857341361741547, 0.220588235294117647058823529412e-01];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.333;
const MAX_FACTOR: f64 = 6.0;

fn e3(i: usize) -> f64 {
    match i {
        0 => B[0] - BHH[0],
        8 => B[8] - BHH[1],
        11 => B[11] - BHH[2],
        _ => B[i],
    }
}

fn scaled_norm(v: &[Complex64], y: &[Complex64], opts: &IntegratorOptions) -> f64 {
    let mut acc = 0.0;
    for (a, b) in v.iter().zip(y) {
        let sr = opts.atol + opts.rtol * b.re.abs();
        let si = opts.atol + opts.rtol * b.im.abs();
        acc += (a.re / sr).powi(2) + (a.im / si).powi(2);
    }
    (acc / (2 * v.len()).max(1) as f64).sqrt()
}

struct Stepper<'a, S: OdeSystem + ?Sized> {
    sys: &'a S,
    n: usize,
    k: Vec<Vec<Complex64>>,
    tmp: Vec<Complex64>,
    ynew: Vec<Complex64>,
    stats: StepStats,
}

impl<'a, S: OdeSystem + ?Sized> Stepper<'a, S> {
    fn new(sys: &'a S) -> Self {
        let n = sys.dim();
        Stepper {
            sys,
            n,
            k: vec![vec![Complex64::new(0.0, 0.0); n]; 13],
            tmp: vec![Complex64::new(0.0, 0.0); n],
            ynew: vec![Complex64::new(0.0, 0.0); n],
            stats: StepStats::default(),
        }
    }

    fn eval(&mut self, t: f64, y: &[Complex64], slot: usize) {
        self.stats.evals += 1;
        let mut out = std::mem::take(&mut self.k[slot]);
        self.sys.rhs(t, y, &mut out);
        self.k[slot] = out;
    }

    fn initial_step(&mut self, t: f64, y: &[Complex64], opts: &IntegratorOptions, dir: f64) -> f64 {
        let d0 = scaled_norm(y, y, opts);
        let d1 = scaled_norm(&self.k[0], y, opts);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        for i in 0..self.n {
            self.tmp[i] = y[i] + self.k[0][i] * (h0 * dir);
        }
        let probe = self.tmp.clone();
        self.eval(t + h0 * dir, &probe, 12);
        let diff: Vec<Complex64> = (0..self.n).map(|i| self.k[12][i] - self.k[0][i]).collect();
        let d2 = scaled_norm(&diff, y, opts) / h0;
        let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(1.0 / 8.0) };
        (100.0 * h0).min(h1)
    }

    /// One trial step from (t, y) with size h; returns the error norm. k[0] must hold f(t, y).
    fn trial(&mut self, t: f64, y: &[Complex64], h: f64, opts: &IntegratorOptions) -> f64 {
        for s in 1..12 {
            for i in 0..self.n {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, &a) in A[s - 1].iter().enumerate().take(s) {
                    if a != 0.0 {
                        acc += self.k[j][i] * a;
                    }
                }
                self.tmp[i] = y[i] + acc * h;
            }
            let stage = self.tmp.clone();
            self.eval(t + C[s] * h, &stage, s);
        }
        for i in 0..self.n {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, &b) in B.iter().enumerate() {
                if b != 0.0 {
                    acc += self.k[j][i] * b;
                }
            }
            self.ynew[i] = y[i] + acc * h;
        }
        let ynew = self.ynew.clone();
        self.eval(t + h, &ynew, 12);
        let (mut err5, mut err3) = (0.0, 0.0);
        for i in 0..self.n {
            let mut e5 = Complex64::new(0.0, 0.0);
            let mut e3v = Complex64::new(0.0, 0.0);
            for j in 0..12 {
                if E5[j] != 0.0 {
                    e5 += self.k[j][i] * E5[j];
                }
                let w = e3(j);
                if w != 0.0 {
                    e3v += self.k[j][i] * w;
                }
            }
            let sr = opts.atol + opts.rtol * y[i].re.abs().max(self.ynew[i].re.abs());
            let si = opts.atol + opts.rtol * y[i].im.abs().max(self.ynew[i].im.abs());
            err5 += (e5.re / sr).powi(2) + (e5.im / si).powi(2);
            err3 += (e3v.re / sr).powi(2) + (e3v.im / si).powi(2);
        }
        if err5 == 0.0 && err3 == 0.0 {
            return 0.0;
        }
        let denom = err5 + 0.01 * err3;
        h.abs() * err5 / (denom * (2 * self.n) as f64).sqrt()
    }
}

/// Integrate from `t0` to `t_end`, landing exactly on every time in `stops`.
///
/// The observer sees the initial state and every accepted step; the flag marks
/// states that sit on a requested stop. Returning `Flow::Stop` ends the run early.
pub fn integrate_observed<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[Complex64],
    t_end: f64,
    stops: &[f64],
    opts: &IntegratorOptions,
    observer: &mut dyn FnMut(f64, &[Complex64], bool) -> Flow,
) -> Result<(f64, Vec<Complex64>, StepStats), DynamicsError> {
    opts.validate()?;
    if y0.len() != sys.dim() {
        return Err(DynamicsError::Invalid(format!("state has length {}, system expects {}", y0.len(), sys.dim())));
    }
    if !(t0.is_finite() && t_end.is_finite()) {
        return Err(DynamicsError::Invalid("non-finite time bounds".into()));
    }
    if y0.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(DynamicsError::Invalid("non-finite initial state".into()));
    }
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut targets: Vec<f64> = stops.iter().copied().filter(|&s| (s - t0) * dir > 0.0 && (t_end - s) * dir >= 0.0).collect();
    targets.sort_by(|a, b| (a * dir).total_cmp(&(b * dir)));
    targets.dedup();
    if targets.last().map_or(true, |&l| l != t_end) && t_end != t0 {
        targets.push(t_end);
    }
    let mut y = y0.to_vec();
    let mut t = t0;
    let at_start = stops.iter().any(|&s| s == t0);
    if observer(t, &y, at_start) == Flow::Stop || t_end == t0 {
        return Ok((t, y, StepStats::default()));
    }
    let mut st = Stepper::new(sys);
    st.eval(t, &y, 0);
    let mut h = st.initial_step(t, &y, opts, dir);
    if let Some(hm) = opts.h_max {
        h = h.min(hm);
    }
    let mut next = 0usize;
    let mut rejected_last = false;
    loop {
        let target = targets[next];
        let remaining = (target - t) * dir;
        let clipped = h >= remaining;
        let step = if clipped { remaining } else { h };
        let floor = 1e-14 * t.abs().max(1.0);
        if step < floor && !clipped {
            return Err(DynamicsError::StepUnderflow { t, h: step, state: y });
        }
        if st.stats.accepted + st.stats.rejected >= opts.max_steps {
            return Err(DynamicsError::MaxSteps { t, steps: opts.max_steps });
        }
        let err = st.trial(t, &y, step * dir, opts);
        if !err.is_finite() {
            st.stats.rejected += 1;
            h = step * 0.25;
            rejected_last = true;
            continue;
        }
        if err <= 1.0 {
            st.stats.accepted += 1;
            t = if clipped { target } else { t + step * dir };
            std::mem::swap(&mut y, &mut st.ynew);
            let last = std::mem::take(&mut st.k[12]);
            st.k[0] = last;
            st.k[12] = vec![Complex64::new(0.0, 0.0); st.n];
            let mut factor = if err == 0.0 { MAX_FACTOR } else { (SAFETY * err.powf(-1.0 / 8.0)).clamp(MIN_FACTOR, MAX_FACTOR) };
            if rejected_last {
                factor = factor.min(1.0);
            }
            rejected_last = false;
            // a clipped step says nothing about how large h could be
            if !clipped || step * factor > h {
                h = step * factor;
            }
            if let Some(hm) = opts.h_max {
                h = h.min(hm);
            }
            let on_stop = clipped;
            if observer(t, &y, on_stop) == Flow::Stop {
                return Ok((t, y, st.stats));
            }
            if clipped {
                next += 1;
                if next == targets.len() {
                    return Ok((t, y, st.stats));
                }
            }
        } else {
            st.stats.rejected += 1;
            h = step * (SAFETY * err.powf(-1.0 / 8.0)).max(MIN_FACTOR).min(1.0);
            rejected_last = true;
        }
    }
}

/// Integrate and record the state at each time in `times` (sorted, starting at or after `t0`).
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[Complex64],
    times: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory, DynamicsError> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|&s| s < t0 || !s.is_finite()) {
        return Err(DynamicsError::Invalid("sample times must be finite, sorted and not before t0".into()));
    }
    let t_end = times.last().copied().unwrap_or(t0);
    let mut out = Trajectory { times: Vec::new(), states: Vec::new(), stats: StepStats::default() };
    let (_, _, stats) = integrate_observed(sys, t0, y0, t_end, times, opts, &mut |t, y, on_stop| {
        if on_stop {
            // repeated sample times all get the same state
            for _ in times.iter().filter(|&&s| s == t) {
                out.times.push(t);
                out.states.push(y.to_vec());
            }
        }
        Flow::Continue
    })?;
    out.stats = stats;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rotor(f64);
    impl OdeSystem for Rotor {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[Complex64], dy: &mut [Complex64]) {
            dy[0] = Complex64::new(0.0, self.0) * y[0];
        }
    }

    struct Cubic;
    impl OdeSystem for Cubic {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, t: f64, y: &[Complex64], dy: &mut [Complex64]) {
            dy[0] = Complex64::new(0.0, 1.0) * y[0] * y[0].norm_sqr() + y[1] * 0.3;
            dy[1] = -y[0].conj() * t.cos();
        }
    }

    #[test]
    fn tableau_consistent() {
        for (s, row) in A.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            assert!((sum - C[s + 1]).abs() < 1e-13, "row {s}");
        }
        assert!((B.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        assert!(E5.iter().sum::<f64>().abs() < 1e-13);
        assert!((0..12).map(e3).sum::<f64>().abs() < 1e-13);
    }

    #[test]
    fn rotation_closed_form() {
        let y0 = [Complex64::new(0.6, -0.3)];
        let times: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let tr = integrate(&Rotor(1.3), 0.0, &y0, &times, &IntegratorOptions::default()).unwrap();
        for (t, y) in tr.times.iter().zip(&tr.states) {
            let exact = y0[0] * Complex64::from_polar(1.0, 1.3 * t);
            assert!((y[0] - exact).norm() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn zero_span_is_identity() {
        let y0 = [Complex64::new(0.2, 0.1), Complex64::new(-1.0, 0.0)];
        let tr = integrate(&Cubic, 0.5, &y0, &[0.5], &IntegratorOptions::default()).unwrap();
        assert_eq!(tr.states, vec![y0.to_vec()]);
        assert_eq!(tr.stats.evals, 0);
    }

    #[test]
    fn error_shrinks_at_high_order() {
        let y0 = [Complex64::new(0.7, 0.1), Complex64::new(0.0, 0.4)];
        let reference = integrate(&Cubic, 0.0, &y0, &[6.0], &IntegratorOptions::with_tol(1e-14)).unwrap();
        let reference = &reference.states[0];
        let err = |h: f64| {
            let o = IntegratorOptions { h_max: Some(h), rtol: 1.0, atol: 1.0, ..Default::default() };
            let tr = integrate(&Cubic, 0.0, &y0, &[6.0], &o).unwrap();
            tr.states[0].iter().zip(reference).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
        };
        // fixed steps: halving h should cut the error by about 2^8
        let (e1, e2) = (err(0.2), err(0.1));
        let order = (e1 / e2).log2();
        assert!(order > 6.5, "observed order {order} ({e1:e} vs {e2:e})");
    }

    #[test]
    fn underflow_reports_state() {
        struct Blow;
        impl OdeSystem for Blow {
            fn dim(&self) -> usize {
                1
            }
            fn rhs(&self, _t: f64, y: &[Complex64], dy: &mut [Complex64]) {
                dy[0] = y[0] * y[0] * y[0];
            }
        }
        let y0 = [Complex64::new(1.0, 0.0)];
        match integrate(&Blow, 0.0, &y0, &[1.0], &IntegratorOptions::default()) {
            Err(DynamicsError::StepUnderflow { t, state, .. }) => {
                assert!((t - 0.5).abs() < 1e-3, "t={t}");
                assert!(state[0].re > 10.0);
            }
            other => panic!("expected underflow, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let y0 = [Complex64::new(1.0, 0.0)];
        assert!(integrate(&Rotor(1.0), 0.0, &y0, &[1.0], &IntegratorOptions::with_tol(0.0)).is_err());
        assert!(integrate(&Rotor(1.0), 0.0, &y0, &[2.0, 1.0], &IntegratorOptions::default()).is_err());
        assert!(integrate(&Rotor(1.0), 0.0, &[], &[1.0], &IntegratorOptions::default()).is_err());
    }
}
