//! Experiment configs, deterministic runs, artifact persistence and the acceptance report.
//!
//! A run writes its payloads (CSV and JSON) plus `artifact.json` into one directory.
//! CSV payloads are RFC-4180 with CRLF line ends and shortest round-trip floats, so
//! identical (config, seed) pairs give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{
    find_traversal_orbit, growth_report, integrate, lift_state, simulate_perturbed, CascadeOptions, CascadeRun, CouplingNorm,
    DynamicsError, IntegratorOptions, LatticeIndex, PerturbationModel, ToyModel, ToyOrbitResult, TraversalOptions,
};
use crate::lattice::{
    build_prototype, enumerate_rectangles, enumerate_rectangles_naive, generation_weights, scale_and_certify, BuildOptions,
    CertifiedLambda, LatticeError,
};
use crate::normal_form::{homological_residual, random_admissible, solve_homological, NormalFormError};
use crate::resonance::{nonresonance_audit, AuditOptions, ResonanceError, DEFAULT_M0_CUTOFF};
use crate::rng;
use crate::spectrum::{
    fitted_decay_exponent, gamma_scaling, melnikov_sweep, random_window_rectangle, Corrections, FrequencyModel, MelnikovOptions,
    SpectrumError, TangentialSites,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const ARTIFACT_FILE: &str = "artifact.json";
pub const THREADS_ENV: &str = "CASCADE_LAB_THREADS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error("lattice: {0}")]
    Lattice(#[from] LatticeError),
    #[error("spectrum: {0}")]
    Spectrum(#[from] SpectrumError),
    #[error("resonance: {0}")]
    Resonance(#[from] ResonanceError),
    #[error("normal form: {0}")]
    NormalForm(#[from] NormalFormError),
    #[error("dynamics: {0}")]
    Dynamics(#[from] DynamicsError),
}

fn cfg_err(path: &str, msg: impl Into<String>) -> HarnessError {
    HarnessError::Config { path: path.to_string(), msg: msg.into() }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    LatticeBuild,
    ToyTraversal,
    Cascade,
    MelnikovSweep,
    NfAudit,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::LatticeBuild => "lattice-build",
            ExperimentKind::ToyTraversal => "toy-traversal",
            ExperimentKind::Cascade => "cascade",
            ExperimentKind::MelnikovSweep => "melnikov-sweep",
            ExperimentKind::NfAudit => "nf-audit",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(with = "seed64")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice_build: Option<LatticeBuildParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy_traversal: Option<ToyTraversalParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cascade: Option<CascadeParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub melnikov_sweep: Option<MelnikovSweepParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nf_audit: Option<NfAuditParams>,
}

/// TOML integers are signed, so seeds above i64::MAX travel as decimal strings.
mod seed64 {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(u64),
        Text(String),
    }

    fn parse<E: Error>(r: Raw) -> Result<u64, E> {
        match r {
            Raw::Int(n) => Ok(n),
            Raw::Text(s) => s.trim().parse().map_err(|_| E::custom(format!("seed must be an unsigned 64-bit integer, got {s:?}"))),
        }
    }

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        if *v <= i64::MAX as u64 {
            s.serialize_u64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        parse(Raw::deserialize(d)?)
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<u64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(x) => super::serialize(x, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
            Option::<Raw>::deserialize(d)?.map(parse).transpose()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeBuildParams {
    pub g: usize,
    pub scale_n: i64,
    pub f_scale: f64,
    /// Sobolev exponents for the generation weight sums.
    pub growth_s: Vec<f64>,
    /// Cross-check rectangles against the quartic scan (sets up to 256 modes).
    pub oracle: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
}

impl Default for LatticeBuildParams {
    fn default() -> Self {
        LatticeBuildParams { g: 4, scale_n: 32, f_scale: 1000.0, growth_s: vec![0.3, 0.5, 0.7], oracle: true, spread: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTraversalParams {
    pub g: usize,
    pub mu: f64,
    /// Extra μ values for the T₀/ln(1/μ) comparison.
    pub scaling_mus: Vec<f64>,
    pub threshold_in: f64,
    pub threshold_out: f64,
    pub tol: f64,
    pub phase_grid: usize,
    pub refine_iters: usize,
    pub hysteresis: f64,
    pub max_step: f64,
    /// Rows in the trajectory CSV besides t=0.
    pub samples: usize,
}

impl Default for ToyTraversalParams {
    fn default() -> Self {
        let o = TraversalOptions::default();
        ToyTraversalParams {
            g: 6,
            mu: 1e-4,
            scaling_mus: vec![1e-3, 1e-4, 1e-5],
            threshold_in: o.threshold_in,
            threshold_out: o.threshold_out,
            tol: o.tol,
            phase_grid: o.phase_grid,
            refine_iters: o.refine_iters,
            hysteresis: o.hysteresis,
            max_step: o.max_step,
            samples: 400,
        }
    }
}

impl ToyTraversalParams {
    pub fn options(&self) -> TraversalOptions {
        TraversalOptions {
            threshold_in: self.threshold_in,
            threshold_out: self.threshold_out,
            tol: self.tol,
            phase_grid: self.phase_grid,
            refine_iters: self.refine_iters,
            hysteresis: self.hysteresis,
            max_step: self.max_step,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeParams {
    /// Certified set to load; built from `g` and `lattice_seed` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lattice: Option<PathBuf>,
    pub g: usize,
    /// Defaults to the run seed.
    #[serde(skip_serializing_if = "Option::is_none", with = "seed64::opt")]
    pub lattice_seed: Option<u64>,
    /// Defaults to ⌈f^{4/5}⌉.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale_n: Option<i64>,
    pub mu: f64,
    pub nu: f64,
    pub sigma: f64,
    pub j1: bool,
    pub j1_scale: f64,
    /// Defaults to f^{−4/5}.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j2_amplitude: Option<f64>,
    /// Defaults to ε^{−1/2}.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_amplitude: Option<f64>,
    pub normalization: CouplingNorm,
    pub sites: Vec<i64>,
    pub lambda: Vec<f64>,
    pub eps: f64,
    pub m0: f64,
    pub tol: f64,
    pub samples: usize,
    pub s_list: Vec<f64>,
    /// Also run with every knob off and certify ξ stays at round-off.
    pub check_unperturbed: bool,
}

impl Default for CascadeParams {
    fn default() -> Self {
        let m = PerturbationModel::default();
        CascadeParams {
            lattice: None,
            g: 6,
            lattice_seed: None,
            scale_n: None,
            mu: 1e-4,
            nu: m.nu,
            sigma: m.sigma,
            j1: true,
            j1_scale: m.j1_scale,
            j2_amplitude: None,
            r_amplitude: None,
            normalization: m.normalization,
            sites: m.sites,
            lambda: m.lambda,
            eps: m.eps,
            m0: m.m0,
            tol: 1e-10,
            samples: 200,
            s_list: vec![0.5],
            check_unperturbed: true,
        }
    }
}

impl CascadeParams {
    pub fn model(&self, seed: u64) -> PerturbationModel {
        let mut m = PerturbationModel {
            j1: self.j1,
            j1_scale: self.j1_scale,
            j2_amplitude: 0.0,
            r_amplitude: 0.0,
            normalization: self.normalization,
            nu: self.nu,
            sigma: self.sigma,
            seed,
            sites: self.sites.clone(),
            lambda: self.lambda.clone(),
            eps: self.eps,
            m0: self.m0,
        };
        m.j2_amplitude = self.j2_amplitude.unwrap_or_else(|| m.f_scale().powf(-0.8));
        m.r_amplitude = self.r_amplitude.unwrap_or_else(|| 1.0 / self.eps.sqrt());
        m
    }

    /// Every knob on at the amplitudes tied to ν.
    fn nu_scaled(&self) -> bool {
        let m = PerturbationModel::nu_scaled(self.nu, self.sigma, 0);
        self.j1
            && self.j1_scale == 1.0
            && self.j2_amplitude == Some(m.j2_amplitude)
            && self.r_amplitude == Some(m.r_amplitude)
            && self.normalization == CouplingNorm::Majorant
            && (self.eps, self.m0) == (m.eps, m.m0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelnikovSweepParams {
    pub p: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub ell_max: i64,
    pub window: i64,
    pub samples: usize,
    pub gammas: Vec<f64>,
    pub sites: Vec<i64>,
    pub n_sub: i64,
    pub eps: f64,
    pub exclude_identical: bool,
    pub stratified: bool,
    /// Window scales J for the rectangle defect fit.
    pub gamma_js: Vec<i64>,
    pub gamma_samples: usize,
    pub m0: f64,
}

impl Default for MelnikovSweepParams {
    fn default() -> Self {
        let o = MelnikovOptions::default();
        MelnikovSweepParams {
            p: o.p,
            tau: None,
            ell_max: o.ell_max,
            window: o.window,
            samples: o.samples,
            gammas: vec![1e-1, 5e-2, 2e-2, 1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 2e-4, 1e-4],
            sites: vec![1, 2],
            n_sub: 1,
            eps: 0.1,
            exclude_identical: false,
            stratified: false,
            gamma_js: vec![100, 1000, 10000],
            gamma_samples: 200,
            m0: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NfAuditParams {
    pub sites: Vec<i64>,
    pub n_sub: i64,
    pub window: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ell_max: Option<i64>,
    pub lambda_samples: usize,
    pub tol: f64,
    pub m0_cutoff: i64,
    pub max_listed: usize,
    pub lambda: Vec<f64>,
    pub eps: f64,
    pub homological_cases: usize,
    pub degree: i64,
    pub max_terms: usize,
    pub floor: f64,
    pub jacobi_cases: usize,
    pub jacobi_terms: usize,
}

impl Default for NfAuditParams {
    fn default() -> Self {
        NfAuditParams {
            sites: vec![1, 2],
            n_sub: 1,
            window: 8,
            ell_max: None,
            lambda_samples: 20,
            tol: 1e-8,
            m0_cutoff: DEFAULT_M0_CUTOFF,
            max_listed: 100,
            lambda: vec![0.6, 0.8],
            eps: 0.1,
            homological_cases: 100,
            degree: 3,
            max_terms: 100,
            floor: 0.1,
            jacobi_cases: 100,
            jacobi_terms: 20,
        }
    }
}

/// Parse TOML (or JSON, when the text starts with `{`), fill defaults and check ranges.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig, HarnessError> {
    let parsed: ExperimentConfig = if raw.trim_start().starts_with('{') {
        let de = &mut serde_json::Deserializer::from_str(raw);
        serde_path_to_error::deserialize(de).map_err(|e| cfg_err(&e.path().to_string(), e.inner().to_string()))?
    } else {
        let de = toml::Deserializer::new(raw);
        serde_path_to_error::deserialize(de).map_err(|e| cfg_err(&e.path().to_string(), e.inner().message().to_string()))?
    };
    normalize(parsed)
}

/// Fill defaults and check ranges of an already parsed config.
pub fn normalize(mut c: ExperimentConfig) -> Result<ExperimentConfig, HarnessError> {
    use ExperimentKind::*;
    let present = [
        (LatticeBuild, "lattice_build", c.lattice_build.is_some()),
        (ToyTraversal, "toy_traversal", c.toy_traversal.is_some()),
        (Cascade, "cascade", c.cascade.is_some()),
        (MelnikovSweep, "melnikov_sweep", c.melnikov_sweep.is_some()),
        (NfAudit, "nf_audit", c.nf_audit.is_some()),
    ];
    for (kind, name, is) in present {
        if is && kind != c.kind {
            return Err(cfg_err(name, format!("section does not belong to kind `{}`", c.kind.name())));
        }
    }
    if c.out.is_none() {
        c.out = Some(PathBuf::from(format!("runs/{}-{}", c.kind.name(), c.seed)));
    }
    match c.kind {
        LatticeBuild => check_lattice(c.lattice_build.get_or_insert_with(Default::default))?,
        ToyTraversal => check_toy(c.toy_traversal.get_or_insert_with(Default::default))?,
        Cascade => check_cascade(c.cascade.get_or_insert_with(Default::default))?,
        MelnikovSweep => check_melnikov(c.melnikov_sweep.get_or_insert_with(Default::default))?,
        NfAudit => check_nf(c.nf_audit.get_or_insert_with(Default::default))?,
    }
    Ok(c)
}

fn ensure(ok: bool, path: &str, msg: impl FnOnce() -> String) -> Result<(), HarnessError> {
    if ok {
        Ok(())
    } else {
        Err(cfg_err(path, msg()))
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn in_unit(x: f64) -> bool {
    x.is_finite() && x > 0.0 && x <= 1.0
}

fn check_sites(sites: &[i64], lambda: Option<&[f64]>, sec: &str) -> Result<(), HarnessError> {
    ensure(!sites.is_empty() && sites.len() <= 4, &format!("{sec}.sites"), || "need 1 to 4 tangential sites".into())?;
    let mut s = sites.to_vec();
    s.sort();
    s.dedup();
    ensure(s.len() == sites.len() && s[0] > 0, &format!("{sec}.sites"), || format!("sites must be distinct and positive, got {sites:?}"))?;
    if let Some(l) = lambda {
        ensure(l.len() == sites.len(), &format!("{sec}.lambda"), || format!("need {} entries, got {}", sites.len(), l.len()))?;
        ensure(l.iter().all(|&x| x > 0.5 && x < 1.0), &format!("{sec}.lambda"), || format!("entries must lie in (1/2, 1), got {l:?}"))?;
    }
    Ok(())
}

fn check_lattice(p: &mut LatticeBuildParams) -> Result<(), HarnessError> {
    ensure((2..=10).contains(&p.g), "lattice_build.g", || format!("must be in 2..=10, got {}", p.g))?;
    ensure(p.scale_n >= 1, "lattice_build.scale_n", || format!("must be >= 1, got {}", p.scale_n))?;
    ensure(positive(p.f_scale), "lattice_build.f_scale", || format!("must be positive, got {}", p.f_scale))?;
    ensure(p.growth_s.iter().all(|&s| positive(s)), "lattice_build.growth_s", || "exponents must be positive".into())?;
    if let Some(s) = p.spread {
        ensure(positive(s), "lattice_build.spread", || format!("must be positive, got {s}"))?;
    }
    Ok(())
}

fn check_toy(p: &mut ToyTraversalParams) -> Result<(), HarnessError> {
    ensure((4..=12).contains(&p.g), "toy_traversal.g", || format!("must be in 4..=12, got {}", p.g))?;
    let mu_ok = |m: f64| m.is_finite() && m > 0.0 && m <= 0.1;
    ensure(mu_ok(p.mu), "toy_traversal.mu", || format!("must lie in (0, 0.1], got {}", p.mu))?;
    ensure(p.scaling_mus.iter().all(|&m| mu_ok(m)), "toy_traversal.scaling_mus", || "entries must lie in (0, 0.1]".into())?;
    ensure(in_unit(p.threshold_in), "toy_traversal.threshold_in", || format!("must lie in (0, 1], got {}", p.threshold_in))?;
    ensure(in_unit(p.threshold_out), "toy_traversal.threshold_out", || format!("must lie in (0, 1], got {}", p.threshold_out))?;
    ensure((1e-14..=1e-3).contains(&p.tol), "toy_traversal.tol", || format!("must lie in [1e-14, 1e-3], got {}", p.tol))?;
    ensure(p.phase_grid >= 1, "toy_traversal.phase_grid", || "must be >= 1".into())?;
    ensure(p.hysteresis >= 0.0 && p.hysteresis < 0.5, "toy_traversal.hysteresis", || format!("must lie in [0, 0.5), got {}", p.hysteresis))?;
    ensure(positive(p.max_step), "toy_traversal.max_step", || format!("must be positive, got {}", p.max_step))?;
    ensure(p.samples >= 1, "toy_traversal.samples", || "must be >= 1".into())?;
    Ok(())
}

fn check_cascade(p: &mut CascadeParams) -> Result<(), HarnessError> {
    ensure((4..=10).contains(&p.g), "cascade.g", || format!("must be in 4..=10, got {}", p.g))?;
    ensure(p.mu > 0.0 && p.mu <= 0.1, "cascade.mu", || format!("must lie in (0, 0.1], got {}", p.mu))?;
    ensure(p.nu.is_finite() && p.nu >= 1.0, "cascade.nu", || format!("must be >= 1, got {}", p.nu))?;
    ensure(p.sigma.is_finite() && (0.0..1.0).contains(&p.sigma), "cascade.sigma", || format!("must lie in [0, 1), got {}", p.sigma))?;
    ensure(p.j1_scale.is_finite() && p.j1_scale >= 0.0, "cascade.j1_scale", || format!("must be >= 0, got {}", p.j1_scale))?;
    ensure(positive(p.eps) && p.eps <= 1.0, "cascade.eps", || format!("must lie in (0, 1], got {}", p.eps))?;
    ensure(p.m0.is_finite() && p.m0 >= 0.0, "cascade.m0", || format!("must be >= 0, got {}", p.m0))?;
    ensure((1e-14..=1e-3).contains(&p.tol), "cascade.tol", || format!("must lie in [1e-14, 1e-3], got {}", p.tol))?;
    ensure(p.samples >= 1, "cascade.samples", || "must be >= 1".into())?;
    ensure(p.s_list.iter().all(|&s| positive(s)), "cascade.s_list", || "exponents must be positive".into())?;
    check_sites(&p.sites, Some(&p.lambda), "cascade")?;
    let m = p.model(0);
    let j2 = *p.j2_amplitude.get_or_insert(m.j2_amplitude);
    let r = *p.r_amplitude.get_or_insert(m.r_amplitude);
    ensure(j2.is_finite() && j2 >= 0.0, "cascade.j2_amplitude", || format!("must be >= 0, got {j2}"))?;
    ensure(r.is_finite() && r >= 0.0, "cascade.r_amplitude", || format!("must be >= 0, got {r}"))?;
    if p.lattice.is_none() {
        let n = *p.scale_n.get_or_insert(m.sublattice_scale());
        ensure(n >= 1, "cascade.scale_n", || format!("must be >= 1, got {n}"))?;
    } else {
        ensure(p.scale_n.is_none() && p.lattice_seed.is_none(), "cascade.lattice", || {
            "scale_n and lattice_seed describe a built set; drop them when loading one".into()
        })?;
    }
    Ok(())
}

fn check_melnikov(p: &mut MelnikovSweepParams) -> Result<(), HarnessError> {
    ensure(p.p == 2 || p.p == 4, "melnikov_sweep.p", || format!("must be 2 or 4, got {}", p.p))?;
    if let Some(t) = p.tau {
        ensure(positive(t), "melnikov_sweep.tau", || format!("must be positive, got {t}"))?;
    }
    ensure(p.ell_max >= 0, "melnikov_sweep.ell_max", || "must be >= 0".into())?;
    ensure(p.window >= 1, "melnikov_sweep.window", || "must be >= 1".into())?;
    ensure(p.samples >= 1, "melnikov_sweep.samples", || "must be >= 1".into())?;
    ensure(!p.gammas.is_empty() && p.gammas.iter().all(|&g| positive(g)), "melnikov_sweep.gammas", || "need positive γ values".into())?;
    check_sites(&p.sites, None, "melnikov_sweep")?;
    ensure(p.n_sub >= 1, "melnikov_sweep.n_sub", || "must be >= 1".into())?;
    ensure(positive(p.eps) && p.eps <= 1.0, "melnikov_sweep.eps", || format!("must lie in (0, 1], got {}", p.eps))?;
    ensure(p.gamma_js.len() >= 2 && p.gamma_js.iter().all(|&j| j >= 2), "melnikov_sweep.gamma_js", || "need two or more scales >= 2".into())?;
    ensure(p.gamma_samples >= 1, "melnikov_sweep.gamma_samples", || "must be >= 1".into())?;
    ensure(positive(p.m0), "melnikov_sweep.m0", || format!("must be positive, got {}", p.m0))?;
    Ok(())
}

fn check_nf(p: &mut NfAuditParams) -> Result<(), HarnessError> {
    check_sites(&p.sites, Some(&p.lambda), "nf_audit")?;
    ensure(p.n_sub >= 1, "nf_audit.n_sub", || "must be >= 1".into())?;
    ensure((0..=40).contains(&p.window), "nf_audit.window", || format!("must lie in 0..=40, got {}", p.window))?;
    ensure(p.lambda_samples >= 1, "nf_audit.lambda_samples", || "must be >= 1".into())?;
    ensure(positive(p.tol), "nf_audit.tol", || "must be positive".into())?;
    ensure(positive(p.eps) && p.eps <= 1.0, "nf_audit.eps", || format!("must lie in (0, 1], got {}", p.eps))?;
    ensure((1..=8).contains(&p.degree), "nf_audit.degree", || format!("must lie in 1..=8, got {}", p.degree))?;
    ensure(p.max_terms >= 1 && p.jacobi_terms >= 1, "nf_audit.max_terms", || "term counts must be >= 1".into())?;
    ensure(positive(p.floor), "nf_audit.floor", || "must be positive".into())?;
    ensure(p.sites.len() >= 2, "nf_audit.sites", || "the homological battery needs two or more sites".into())?;
    Ok(())
}

/// One measured quantity compared against its target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    /// Acceptance criterion this check evidences, if the run matches its setup.
    pub criterion: Option<u32>,
    pub name: String,
    pub measured: String,
    pub target: String,
    pub pass: bool,
}

impl Check {
    fn new(criterion: Option<u32>, name: &str, measured: impl Into<String>, target: &str, pass: bool) -> Self {
        Check { criterion, name: name.into(), measured: measured.into(), target: target.into(), pass }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadRef {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    /// Hash of the config without its output directory.
    pub config_sha256: String,
    pub payloads: Vec<PayloadRef>,
    /// Hash over the config hash and every payload name and hash.
    pub hash: String,
    pub wall_clock_s: f64,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub summary: String,
}

impl RunArtifact {
    pub fn payload(&self, name: &str) -> Option<&PayloadRef> {
        self.payloads.iter().find(|p| p.name == name)
    }

    pub fn csv_hashes(&self) -> BTreeMap<&str, &str> {
        self.payloads.iter().filter(|p| p.name.ends_with(".csv")).map(|p| (p.name.as_str(), p.sha256.as_str())).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn config_hash(c: &ExperimentConfig) -> String {
    let mut c = c.clone();
    c.out = None;
    sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
}

fn artifact_hash(config_sha: &str, payloads: &[PayloadRef]) -> String {
    let mut h = Sha256::new();
    h.update(config_sha.as_bytes());
    for p in payloads {
        h.update(b"\0");
        h.update(p.name.as_bytes());
        h.update(b"\0");
        h.update(p.sha256.as_bytes());
    }
    format!("{:x}", h.finalize())
}

/// Shortest round-trip float text; exponent form for very large or small values.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("payload serializes");
    s.push('\n');
    s.into_bytes()
}

struct Outcome {
    payloads: Vec<(String, Vec<u8>)>,
    checks: Vec<Check>,
    notes: Vec<String>,
}

/// Run one validated experiment and persist it under `config.out`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifact, HarnessError> {
    let config = normalize(config.clone())?;
    let out = config.out.clone().expect("normalized config has an output directory");
    let start = Instant::now();
    let o = match config.kind {
        ExperimentKind::LatticeBuild => run_lattice(config.lattice_build.as_ref().expect("section"), config.seed)?,
        ExperimentKind::ToyTraversal => run_toy(config.toy_traversal.as_ref().expect("section"))?,
        ExperimentKind::Cascade => run_cascade(config.cascade.as_ref().expect("section"), config.seed)?,
        ExperimentKind::MelnikovSweep => run_melnikov(config.melnikov_sweep.as_ref().expect("section"), config.seed)?,
        ExperimentKind::NfAudit => run_nf(config.nf_audit.as_ref().expect("section"), config.seed)?,
    };
    let wall_clock_s = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    let mut payloads = Vec::new();
    for (name, bytes) in &o.payloads {
        let path = out.join(name);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        payloads.push(PayloadRef { name: name.clone(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
    }
    let config_sha256 = config_hash(&config);
    let passed = o.checks.iter().all(|c| c.pass);
    let failed: Vec<String> = o.checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {} vs {}", c.name, c.measured, c.target)).collect();
    let mut summary = if passed {
        format!("{} passed {} checks", config.kind.name(), o.checks.len())
    } else {
        format!("{} failed: {}", config.kind.name(), failed.join("; "))
    };
    for n in &o.notes {
        summary.push_str("; ");
        summary.push_str(n);
    }
    let art = RunArtifact {
        schema_version: SCHEMA_VERSION,
        kind: config.kind,
        hash: artifact_hash(&config_sha256, &payloads),
        config,
        config_sha256,
        payloads,
        wall_clock_s,
        passed,
        checks: o.checks,
        summary,
    };
    let path = out.join(ARTIFACT_FILE);
    std::fs::write(&path, json_bytes(&art)).map_err(io_err(&path))?;
    Ok(art)
}

/// Read `artifact.json` from a run directory (or the file itself).
pub fn load_artifact(path: &Path) -> Result<RunArtifact, HarnessError> {
    let file = if path.is_dir() { path.join(ARTIFACT_FILE) } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(io_err(&file))?;
    let a: RunArtifact = serde_json::from_str(&text).map_err(|e| HarnessError::Artifact(format!("{}: {e}", file.display())))?;
    if a.schema_version != SCHEMA_VERSION {
        return Err(HarnessError::Artifact(format!("unsupported schema_version {}", a.schema_version)));
    }
    Ok(a)
}

/// Recompute every hash from the files next to `artifact.json`.
pub fn verify_artifact(dir: &Path) -> Result<(), HarnessError> {
    let a = load_artifact(dir)?;
    if config_hash(&a.config) != a.config_sha256 {
        return Err(HarnessError::Artifact("config hash mismatch".into()));
    }
    for p in &a.payloads {
        let path = dir.join(&p.name);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        if sha256_hex(&bytes) != p.sha256 {
            return Err(HarnessError::Artifact(format!("payload {} was modified", p.name)));
        }
    }
    if artifact_hash(&a.config_sha256, &a.payloads) != a.hash {
        return Err(HarnessError::Artifact("artifact hash mismatch".into()));
    }
    Ok(())
}

fn run_lattice(p: &LatticeBuildParams, seed: u64) -> Result<Outcome, HarnessError> {
    let mut opts = BuildOptions::for_generations(p.g);
    if let Some(s) = p.spread {
        opts.spread = s;
    }
    let t = Instant::now();
    let cand = build_prototype(p.g, seed, &opts)?;
    let lam = scale_and_certify(&cand, p.scale_n, p.f_scale)?;
    let build_s = t.elapsed().as_secs_f64();
    let mut checks = vec![Check::new(
        (4..=6).contains(&p.g).then_some(1),
        &format!("all set properties, g={}", p.g),
        lam.report.to_string(),
        "all pass",
        lam.report.all_pass(),
    )];
    let modes: Vec<_> = lam.generations.iter().flatten().copied().collect();
    if p.oracle && modes.len() <= 256 {
        let t = Instant::now();
        let fast = enumerate_rectangles(&modes);
        let fast_s = t.elapsed().as_secs_f64();
        let agree = fast == enumerate_rectangles_naive(&modes);
        let crit = (p.g == 6).then_some(1);
        checks.push(Check::new(crit, "rectangles match quartic scan", format!("{} rectangles, agree={agree}", fast.len()), "agree", agree));
        checks.push(Check::new(crit, "rectangle enumeration time", format!("{fast_s:.4} s"), "< 10 s", fast_s < 10.0));
    }
    let mut weight_rows = Vec::new();
    let t = Instant::now();
    let weights = p.growth_s.iter().map(|&s| generation_weights(&lam.generations, s)).collect::<Result<Vec<_>, _>>()?;
    let weights_s = t.elapsed().as_secs_f64();
    for w in &weights {
        for (k, sum) in w.sums.iter().enumerate() {
            weight_rows.push(vec![num(w.s), (k + 1).to_string(), num(*sum)]);
        }
        if let (Some(r), Some(th), Some(ok)) = (w.ratio, w.threshold, w.passes) {
            let crit = (p.g == 8).then_some(2);
            checks.push(Check::new(crit, &format!("growth ratio S_(g-1)/S_3, s={}", w.s), num(r), &format!(">= {}", num(th)), ok));
        }
    }
    if p.g == 8 {
        checks.push(Check::new(Some(2), "weight sums time", format!("{weights_s:.4} s"), "< 1 s", weights_s < 1.0));
    }
    let mut mode_rows = Vec::new();
    for (k, gen) in lam.generations.iter().enumerate() {
        for (i, j) in gen.iter().enumerate() {
            mode_rows.push(vec![(k + 1).to_string(), i.to_string(), j.m.to_string(), j.n.to_string()]);
        }
    }
    Ok(Outcome {
        payloads: vec![
            ("lambda.json".into(), lam.to_json().into_bytes()),
            ("modes.csv".into(), csv_bytes(&header(&["generation", "index", "m", "n"]), &mode_rows)),
            ("weights.csv".into(), csv_bytes(&header(&["s", "generation", "sum"]), &weight_rows)),
        ],
        checks,
        notes: vec![format!("{} modes, built in {build_s:.3} s", modes.len())],
    })
}

fn orbit_row(o: &ToyOrbitResult) -> Vec<String> {
    vec![
        num(o.mu),
        num(o.t0),
        num(o.t0 / (1.0 / o.mu).ln()),
        num(o.mass_in),
        num(o.mass_out),
        num(o.mass_drift),
        num(o.energy_drift),
    ]
}

fn run_toy(p: &ToyTraversalParams) -> Result<Outcome, HarnessError> {
    let opts = p.options();
    let t = Instant::now();
    let orbit = find_traversal_orbit(p.g, p.mu, &opts)?;
    let mut scaling = Vec::new();
    for &mu in &p.scaling_mus {
        scaling.push(if mu == p.mu { orbit.clone() } else { find_traversal_orbit(p.g, mu, &opts)? });
    }
    let elapsed = t.elapsed().as_secs_f64();

    let times: Vec<f64> = (1..=p.samples).map(|i| orbit.t0 * i as f64 / p.samples as f64).collect();
    let tr = integrate(&ToyModel { g: p.g }, 0.0, &orbit.initial, &times, &IntegratorOptions::with_tol(p.tol))?;
    let mut cols = vec!["t".to_string()];
    for k in 1..=p.g {
        cols.extend([format!("b{k}_re"), format!("b{k}_im"), format!("mass{k}")]);
    }
    let rows: Vec<Vec<String>> = tr
        .times
        .iter()
        .zip(&tr.states)
        .map(|(t, b)| {
            let mut r = vec![num(*t)];
            for z in b {
                r.extend([num(z.re), num(z.im), num(z.norm_sqr())]);
            }
            r
        })
        .collect();
    let scale_cols = header(&["mu", "t0", "t0_over_log_inv_mu", "mass_in", "mass_out", "mass_drift", "energy_drift"]);
    let mut scale_rows = vec![orbit_row(&orbit)];
    scale_rows.extend(scaling.iter().filter(|o| o.mu != p.mu).map(orbit_row));

    let mut checks = Vec::new();
    let drift = scaling.iter().chain([&orbit]).map(|o| o.mass_drift.max(o.energy_drift)).fold(0.0, f64::max);
    checks.push(Check::new((p.tol == 1e-10).then_some(3), "toy mass and energy drift", num(drift), "<= 1e-8", drift <= 1e-8));
    let crit4 = (p.g == 6 && p.mu == 1e-4).then_some(4);
    checks.push(Check::new(crit4, "|b_3(0)|^2", num(orbit.mass_in), ">= 0.99", orbit.mass_in >= 0.99));
    checks.push(Check::new(crit4, "max_t |b_(g-1)|^2", num(orbit.mass_out), ">= 0.9", orbit.mass_out >= 0.90));
    if scaling.len() >= 2 {
        let r: Vec<f64> = scaling.iter().map(|o| o.t0 / (1.0 / o.mu).ln()).collect();
        let (lo, hi) = r.iter().fold((f64::INFINITY, 0f64), |(a, b), &x| (a.min(x), b.max(x)));
        let canonical = p.g == 6 && p.scaling_mus == [1e-3, 1e-4, 1e-5];
        checks.push(Check::new(canonical.then_some(4), "T0/ln(1/mu) spread (max/min)", num(hi / lo), "<= 2", hi / lo <= 2.0));
    }
    checks.push(Check::new(crit4, "traversal search time", format!("{elapsed:.2} s"), "< 300 s", elapsed < 300.0));
    Ok(Outcome {
        payloads: vec![
            ("trajectory.csv".into(), csv_bytes(&cols, &rows)),
            ("scaling.csv".into(), csv_bytes(&scale_cols, &scale_rows)),
            ("orbit.json".into(), json_bytes(&orbit)),
        ],
        checks,
        notes: vec![],
    })
}

#[derive(Serialize)]
struct CascadeSummary<'a> {
    schema_version: u32,
    lattice_modes: usize,
    scale_n: i64,
    model: &'a PerturbationModel,
    t0_toy: f64,
    t_end: f64,
    certificate_bound: f64,
    sup_m: f64,
    sup_xi: f64,
    certificate_passes: bool,
    explanation: String,
    unperturbed_sup_xi: Option<f64>,
    mass_drift: f64,
    momentum_drift: f64,
    growth: crate::dynamics::GrowthReport,
    steps: usize,
}

fn run_cascade(p: &CascadeParams, seed: u64) -> Result<Outcome, HarnessError> {
    let start = Instant::now();
    let model = p.model(seed);
    let lam = match &p.lattice {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            CertifiedLambda::from_json(&text)?
        }
        None => {
            let cand = build_prototype(p.g, p.lattice_seed.unwrap_or(seed), &BuildOptions::for_generations(p.g))?;
            scale_and_certify(&cand, p.scale_n.unwrap_or(1), 1.0)?
        }
    };
    let lat = LatticeIndex::new(&lam)?;
    let g = lat.g;
    let orbit = find_traversal_orbit(g, p.mu, &TraversalOptions { tol: p.tol, ..Default::default() })?;
    let d = p.sites.len();
    let state0 = lift_state(&orbit.initial, 0.0, p.nu, &lat, d)?;
    let reference0: Vec<_> = orbit.initial.iter().map(|z| z / p.nu).collect();
    let t_end = p.nu * p.nu * orbit.t0;
    let opts = CascadeOptions { tol: p.tol, samples: p.samples, ..Default::default() };
    let run: CascadeRun = simulate_perturbed(&state0, &reference0, &lat, &model, t_end, &opts)?;
    let unperturbed = if p.check_unperturbed {
        let m0 = PerturbationModel { sites: p.sites.clone(), lambda: p.lambda.clone(), ..PerturbationModel::unperturbed(p.nu, p.sigma) };
        Some(simulate_perturbed(&state0, &reference0, &lat, &m0, t_end, &opts)?.certificate.sup_xi)
    } else {
        None
    };
    let elapsed = start.elapsed().as_secs_f64();
    let growth = growth_report(&lat.modes, &state0.beta, &run.final_state.beta, g, &p.s_list);
    let cert = &run.certificate;

    let mut checks = Vec::new();
    let canonical9 = g == 6 && p.nu == 50.0 && p.sigma == 0.05;
    checks.push(Check::new(
        (canonical9 && p.nu_scaled()).then_some(9),
        "sup_t M(t)",
        num(cert.sup_m),
        &format!("<= nu^(-1-sigma) = {}", num(cert.bound)),
        cert.passes,
    ));
    if let Some(x) = unperturbed {
        checks.push(Check::new(canonical9.then_some(9), "sup |xi|_1 with all knobs zero", num(x), "<= 1e-8", x <= 1e-8));
    }
    let crit10 = (g == 8).then_some(10);
    for e in &growth.entries {
        let c = if e.s == 0.5 { crit10 } else { None };
        checks.push(Check::new(c, &format!("H^{} growth ratio", e.s), num(e.ratio), &format!(">= {}", num(e.target)), e.passes));
    }
    checks.push(Check::new(crit10, "l2 drift", num(growth.l2_drift), "<= 1e-6", growth.l2_drift <= 1e-6));
    if g == 8 {
        checks.push(Check::new(crit10, "pipeline time", format!("{elapsed:.2} s"), "< 1800 s", elapsed < 1800.0));
    }

    let explanation = if cert.passes {
        format!("sup M = {:e} stays below the bound {:e}", cert.sup_m, cert.bound)
    } else {
        let i = cert.m.iter().position(|&m| m > cert.bound);
        let when = i.map(|i| format!(" (first sampled violation at t = {:e})", cert.times[i])).unwrap_or_default();
        format!("bound violated: sup M = {:e} exceeds nu^(-1-sigma) = {:e}{when}", cert.sup_m, cert.bound)
    };
    let summary = CascadeSummary {
        schema_version: SCHEMA_VERSION,
        lattice_modes: lat.len(),
        scale_n: lam.scale_n,
        model: &model,
        t0_toy: orbit.t0,
        t_end,
        certificate_bound: cert.bound,
        sup_m: cert.sup_m,
        sup_xi: cert.sup_xi,
        certificate_passes: cert.passes,
        explanation: explanation.clone(),
        unperturbed_sup_xi: unperturbed,
        mass_drift: run.mass_drift,
        momentum_drift: run.momentum_drift,
        growth: growth.clone(),
        steps: run.stats.accepted,
    };

    let mut mass_cols = vec!["t".to_string()];
    mass_cols.extend((1..=g).map(|k| format!("gen{k}")));
    mass_cols.extend((1..=g).map(|k| format!("ref{k}")));
    let mass_rows: Vec<Vec<String>> = run
        .times
        .iter()
        .zip(run.generation_mass.iter().zip(&run.reference_mass))
        .map(|(t, (a, b))| std::iter::once(num(*t)).chain(a.iter().map(|x| num(*x))).chain(b.iter().map(|x| num(*x))).collect())
        .collect();
    let cert_rows: Vec<Vec<String>> = (0..cert.times.len())
        .map(|i| vec![num(cert.times[i]), num(cert.xi_l1[i]), num(cert.y_abs[i]), num(cert.m[i])])
        .collect();
    let state_rows: Vec<Vec<String>> = lat
        .modes
        .iter()
        .enumerate()
        .map(|(i, j)| {
            let (a, b) = (state0.beta[i], run.final_state.beta[i]);
            vec![(lat.generation[i] + 1).to_string(), j.m.to_string(), j.n.to_string(), num(a.re), num(a.im), num(b.re), num(b.im)]
        })
        .collect();
    Ok(Outcome {
        payloads: vec![
            ("generation_mass.csv".into(), csv_bytes(&mass_cols, &mass_rows)),
            ("certificate.csv".into(), csv_bytes(&header(&["t", "xi_l1", "y_abs", "m"]), &cert_rows)),
            ("modes.csv".into(), csv_bytes(&header(&["generation", "m", "n", "re0", "im0", "re_final", "im_final"]), &state_rows)),
            ("certificate.json".into(), json_bytes(&summary)),
        ],
        checks,
        notes: vec![explanation],
    })
}

fn run_melnikov(p: &MelnikovSweepParams, seed: u64) -> Result<Outcome, HarnessError> {
    let sites = TangentialSites::unchecked(p.sites.clone());
    let d = sites.d();
    let lambda = vec![0.75; d];
    let off = FrequencyModel::new(sites.clone(), lambda.clone(), p.eps, p.n_sub, Corrections::Off)?;
    let opts = MelnikovOptions {
        p: p.p,
        tau: p.tau,
        ell_max: p.ell_max,
        window: p.window,
        samples: p.samples,
        seed,
        exclude_identical: p.exclude_identical,
        stratified: p.stratified,
        ..Default::default()
    };
    let mut gammas = p.gammas.clone();
    gammas.sort_by(f64::total_cmp);
    let points = melnikov_sweep(&off, &gammas, &opts)?;
    let exponent = fitted_decay_exponent(&points);
    let rows: Vec<Vec<String>> =
        points.iter().map(|q| vec![num(q.gamma), num(q.tau), num(q.fraction), q.samples.to_string(), q.seed.to_string()]).collect();

    let noisy = FrequencyModel::new(sites.clone(), lambda, p.eps, p.n_sub, Corrections::HashNoise { m0: p.m0, seed })?;
    let scaling = gamma_scaling(&noisy, &p.gamma_js, p.gamma_samples, seed)?;
    let mut off_max = 0f64;
    for (k, &j) in p.gamma_js.iter().enumerate() {
        let mut r = rng::stream(seed, 0x6f66_6600 + k as u64);
        for _ in 0..p.gamma_samples {
            off_max = off_max.max(off.gamma_defect(random_window_rectangle(&mut r, j, &sites))?.abs());
        }
    }
    let gamma_rows: Vec<Vec<String>> = scaling.points.iter().map(|(j, m)| vec![j.to_string(), num(*m)]).collect();

    let canonical8 = d == 2 && p.p == 4 && p.ell_max == 6 && p.window == 20 && p.samples == 500 && p.eps == 0.1 && p.tau.is_none_or(|t| t == 4.0);
    let crit8 = (canonical8 && !p.exclude_identical).then_some(8);
    let monotone = points.windows(2).all(|w| w[0].fraction <= w[1].fraction);
    let mut checks = vec![Check::new(crit8, "violation fraction nondecreasing in gamma", monotone.to_string(), "true", monotone)];
    if let Some(q) = points.iter().find(|q| q.gamma == 1e-4) {
        checks.push(Check::new(crit8, "violation fraction at gamma=1e-4", num(q.fraction), "<= 0.05", q.fraction <= 0.05));
    }
    checks.push(Check::new(
        None,
        "fitted decay exponent",
        exponent.map(num).unwrap_or_else(|| "n/a".into()),
        "reported",
        true,
    ));
    let crit6 = (p.m0 == 1.0 && p.eps == 0.1 && p.gamma_js == [100, 1000, 10000]).then_some(6);
    checks.push(Check::new(crit6, "log|Gamma| vs log J slope", num(scaling.slope), "-2 +- 0.2", (scaling.slope + 2.0).abs() <= 0.2));
    checks.push(Check::new(crit6, "max |Gamma| with corrections off", num(off_max), "== 0", off_max == 0.0));
    let summary = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "signatures_sampled": p.samples,
        "fitted_decay_exponent": exponent,
        "gamma_scaling": scaling,
        "corrections_off_max_gamma": off_max,
    });
    Ok(Outcome {
        payloads: vec![
            ("melnikov.csv".into(), csv_bytes(&header(&["gamma", "tau", "fraction", "samples", "seed"]), &rows)),
            ("gamma_scaling.csv".into(), csv_bytes(&header(&["J", "mean_abs_gamma"]), &gamma_rows)),
            ("melnikov.json".into(), json_bytes(&summary)),
        ],
        checks,
        notes: vec![],
    })
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

fn run_nf(p: &NfAuditParams, seed: u64) -> Result<Outcome, HarnessError> {
    let t = Instant::now();
    let audit = nonresonance_audit(&AuditOptions {
        sites: p.sites.clone(),
        n_sub: p.n_sub,
        window: p.window,
        ell_max: p.ell_max,
        lambda_samples: p.lambda_samples,
        seed,
        tol: p.tol,
        m0_cutoff: p.m0_cutoff,
        max_listed: p.max_listed,
        ..Default::default()
    })?;
    let audit_s = t.elapsed().as_secs_f64();
    let cx_rows: Vec<Vec<String>> = audit
        .counterexamples
        .iter()
        .map(|c| vec![join(&c.modes), join(&c.sigma), join(&c.ell), join(&c.c), c.is_trace_identity().to_string()])
        .collect();

    let sites = TangentialSites::unchecked(p.sites.clone());
    let model = FrequencyModel::new(sites, p.lambda.clone(), p.eps, p.n_sub, Corrections::Off)?;
    let mut hom_rows = Vec::new();
    let mut hom_max = 0f64;
    for case in 0..p.homological_cases {
        let k = random_admissible(&model, p.degree, p.max_terms, p.floor, rng::splitmix64(seed ^ case as u64))?;
        let chi = solve_homological(&k, &model, p.floor)?;
        let res = homological_residual(&chi, &k, &model)?;
        hom_max = hom_max.max(res);
        hom_rows.push(vec![case.to_string(), k.len().to_string(), num(res)]);
    }
    let mut jac_rows = Vec::new();
    let (mut jac_max, mut leib_max) = (0f64, 0f64);
    let mut r = rng::stream(seed, 0x6a61_636f);
    for case in 0..p.jacobi_cases {
        let mut draw = || {
            let deg = r.gen_range(1..=p.degree.max(1));
            random_admissible(&model, deg, p.jacobi_terms, p.floor, r.gen())
        };
        let (f, g, h) = (draw()?, draw()?, draw()?);
        let a = f.bracket(&g).bracket(&h);
        let b = g.bracket(&h).bracket(&f);
        let c = h.bracket(&f).bracket(&g);
        let jac = (&(&a + &b) + &c).max_abs();
        let lhs = (&f * &g).bracket(&h);
        let rhs = &(&f * &g.bracket(&h)) + &(&f.bracket(&h) * &g);
        let leib = (&lhs - &rhs).max_abs();
        jac_max = jac_max.max(jac);
        leib_max = leib_max.max(leib);
        jac_rows.push(vec![case.to_string(), num(jac), num(leib)]);
    }

    let canonical7 = p.sites.len() == 2 && p.window == 8 && p.lambda_samples == 20 && p.ell_max.is_none_or(|e| e == 8);
    let crit7 = canonical7.then_some(7);
    let mut checks = vec![
        Check::new(crit7, "unclassified vanishing tuples", audit.counterexample_count.to_string(), "== 0", audit.passed()),
        Check::new(crit7, "audit time", format!("{audit_s:.2} s"), "< 120 s", audit_s < 120.0),
    ];
    if !audit.passed() {
        checks.push(Check::new(
            None,
            "counterexamples are trace-identity tuples",
            format!("{} of {}", audit.trace_identity_count, audit.counterexample_count),
            "diagnostic",
            true,
        ));
    }
    let canonical5 = p.homological_cases >= 100 && p.degree == 3 && p.max_terms <= 100 && p.floor >= 0.1;
    let crit5 = canonical5.then_some(5);
    checks.push(Check::new(crit5, "homological residual", num(hom_max), "<= 1e-12", hom_max <= 1e-12));
    if p.jacobi_cases > 0 {
        checks.push(Check::new(crit5, "Jacobi residual", num(jac_max), "<= 1e-12", jac_max <= 1e-12));
        checks.push(Check::new(crit5, "Leibniz residual", num(leib_max), "<= 1e-12", leib_max <= 1e-12));
    }
    Ok(Outcome {
        payloads: vec![
            ("audit.json".into(), json_bytes(&audit)),
            ("counterexamples.csv".into(), csv_bytes(&header(&["modes", "sigma", "ell", "c", "trace_identity"]), &cx_rows)),
            ("homological.csv".into(), csv_bytes(&header(&["case", "terms", "residual"]), &hom_rows)),
            ("brackets.csv".into(), csv_bytes(&header(&["case", "jacobi", "leibniz"]), &jac_rows)),
        ],
        checks,
        notes: vec![],
    })
}

pub const CRITERIA: [(u32, &str); 11] = [
    (1, "lattice certification g=4,5,6 and rectangle oracle"),
    (2, "growth-ratio combinatorics g=8"),
    (3, "toy-model conservation"),
    (4, "traversal existence and T0 scaling"),
    (5, "homological, Jacobi and Leibniz identities"),
    (6, "rectangle defect scaling"),
    (7, "nonresonance audit d=2 window 8"),
    (8, "Melnikov measure curve"),
    (9, "shadowing certificate"),
    (10, "end-to-end norm growth g=8"),
    (11, "determinism of CSV payloads"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    NotRun,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NotRun => "not run",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub criterion: u32,
    pub title: String,
    pub measured: String,
    pub target: String,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub rows: Vec<ReportRow>,
    /// Fail if any row fails, pass if every row passes, otherwise not run.
    pub overall: Status,
}

impl Report {
    pub fn row(&self, criterion: u32) -> &ReportRow {
        &self.rows[criterion as usize - 1]
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(s, "{:>2}  {:<8} {:<52} {}  [target {}]", r.criterion, r.status.label(), r.title, r.measured, r.target);
        }
        let _ = writeln!(s, "overall: {}", self.overall.label());
        s
    }
}

/// Consolidate artifacts into one row per acceptance criterion.
pub fn report(artifacts: &[RunArtifact]) -> Report {
    let mut rows = Vec::new();
    for (id, title) in CRITERIA {
        let mut checks: Vec<&Check> = Vec::new();
        for c in artifacts.iter().flat_map(|a| &a.checks).filter(|c| c.criterion == Some(id)) {
            if !checks.iter().any(|k| k.name == c.name && k.measured == c.measured && k.pass == c.pass) {
                checks.push(c);
            }
        }
        let mut row = ReportRow { criterion: id, title: title.into(), measured: String::new(), target: String::new(), status: Status::NotRun };
        if id == 11 {
            determinism_row(artifacts, &mut row);
        } else if !checks.is_empty() {
            row.measured = checks.iter().map(|c| format!("{}={}", c.name, c.measured)).collect::<Vec<_>>().join("; ");
            row.target = checks.iter().map(|c| c.target.as_str()).collect::<Vec<_>>().join("; ");
            row.status = if checks.iter().all(|c| c.pass) { Status::Pass } else { Status::Fail };
            if id == 1 && row.status == Status::Pass {
                let missing: Vec<usize> = (4..=6)
                    .filter(|g| {
                        !artifacts.iter().any(|a| a.lattice_g() == Some(*g) && a.checks.iter().any(|c| c.criterion == Some(1)))
                    })
                    .collect();
                if !missing.is_empty() {
                    row.status = Status::NotRun;
                    row.measured.push_str(&format!("; missing g={missing:?}"));
                }
            }
        }
        rows.push(row);
    }
    let overall = if rows.iter().any(|r| r.status == Status::Fail) {
        Status::Fail
    } else if rows.iter().all(|r| r.status == Status::Pass) {
        Status::Pass
    } else {
        Status::NotRun
    };
    Report { schema_version: SCHEMA_VERSION, rows, overall }
}

impl RunArtifact {
    fn lattice_g(&self) -> Option<usize> {
        self.config.lattice_build.as_ref().map(|p| p.g)
    }
}

/// Artifacts sharing a config hash must carry identical CSV payloads.
fn determinism_row(artifacts: &[RunArtifact], row: &mut ReportRow) {
    let mut groups: BTreeMap<&str, Vec<&RunArtifact>> = BTreeMap::new();
    for a in artifacts {
        groups.entry(a.config_sha256.as_str()).or_default().push(a);
    }
    let repeated: Vec<&Vec<&RunArtifact>> = groups.values().filter(|v| v.len() >= 2).collect();
    row.target = "identical CSV hashes for repeated configs".into();
    if repeated.is_empty() {
        row.measured = "no repeated configs".into();
        return;
    }
    let mut bad = Vec::new();
    for v in &repeated {
        if v.iter().any(|a| a.csv_hashes() != v[0].csv_hashes()) {
            bad.push(v[0].kind.name());
        }
    }
    let kinds: Vec<&str> = repeated.iter().map(|v| v[0].kind.name()).collect();
    row.measured = format!("{} repeated configs ({}); mismatches: {}", repeated.len(), kinds.join(","), if bad.is_empty() { "none".into() } else { bad.join(",") });
    row.status = if bad.is_empty() { Status::Pass } else { Status::Fail };
}

/// Worker count from the flag, else the environment variable.
pub fn thread_count(flag: Option<usize>) -> Result<Option<usize>, HarnessError> {
    if let Some(n) = flag {
        return if n == 0 { Err(cfg_err("--threads", "must be >= 1")) } else { Ok(Some(n)) };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(cfg_err(THREADS_ENV, format!("expected a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Size the global worker pool; a no-op when it is already initialised.
pub fn init_threads(flag: Option<usize>) -> Result<(), HarnessError> {
    if let Some(n) = thread_count(flag)? {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toy_config_fills_defaults() {
        let c = validate_config("kind = \"toy-traversal\"\nseed = 3\n").unwrap();
        let t = c.toy_traversal.unwrap();
        assert_eq!((t.tol, t.threshold_in, t.threshold_out), (1e-10, 0.99, 0.90));
        assert_eq!(c.out, Some(PathBuf::from("runs/toy-traversal-3")));
    }

    #[test]
    fn unknown_key_is_named_with_path() {
        let e = validate_config("kind = \"melnikov-sweep\"\nseed = 1\n[melnikov_sweep]\ngamm = 0.1\n").unwrap_err().to_string();
        assert!(e.contains("gamm") && e.contains("melnikov_sweep"), "{e}");
    }

    #[test]
    fn missing_seed_and_range_errors() {
        let e = validate_config("kind = \"cascade\"\n").unwrap_err().to_string();
        assert!(e.contains("seed"), "{e}");
        let e = validate_config("{\"kind\": \"cascade\", \"seed\": 1, \"cascade\": {\"sigma\": 1.5}}").unwrap_err().to_string();
        assert!(e.contains("cascade.sigma"), "{e}");
        let e = validate_config("kind = \"cascade\"\nseed = 1\n[nf_audit]\n").unwrap_err().to_string();
        assert!(e.contains("nf_audit"), "{e}");
    }

    #[test]
    fn cascade_defaults_follow_nu() {
        let c = validate_config("kind = \"cascade\"\nseed = 0\n[cascade]\nnu = 50.0\n").unwrap().cascade.unwrap();
        let f = 50f64.powf(1.0 / 0.95);
        assert_eq!(c.scale_n, Some(f.powf(0.8).ceil() as i64));
        assert!((c.j2_amplitude.unwrap() - f.powf(-0.8)).abs() < 1e-15);
        assert!((c.r_amplitude.unwrap() - 0.1f64.powf(-0.5)).abs() < 1e-12);
    }

    #[test]
    fn csv_is_crlf_with_shortest_floats() {
        let b = csv_bytes(&header(&["a", "b"]), &[vec![num(0.1), num(1e-300)], vec![num(1.0), "x,y".into()]]);
        assert_eq!(String::from_utf8(b).unwrap(), "a,b\r\n0.1,1e-300\r\n1.0,\"x,y\"\r\n");
    }

    #[test]
    fn empty_report_is_not_run() {
        let r = report(&[]);
        assert_eq!(r.rows.len(), 11);
        assert!(r.rows.iter().all(|x| x.status == Status::NotRun));
        assert_eq!(r.overall, Status::NotRun);
    }

    #[test]
    fn thread_flag_rejects_zero() {
        assert!(thread_count(Some(0)).is_err());
        assert_eq!(thread_count(Some(3)).unwrap(), Some(3));
    }
}
