//! Exhaustive scan of admissible quartets with K = 0 and F vanishing on sampled λ.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lattice::Mode;
use crate::rng;
use crate::spectrum::{mu_real, TangentialSites};

use super::quartets::{Item, QuartetSpace, Signature, TupleVisitor, MAX_D};
use super::{tag_items, ResonanceError, ResonanceTag, DEFAULT_M0_CUTOFF};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditOptions {
    pub sites: Vec<i64>,
    pub n_sub: i64,
    pub window: i64,
    /// Defaults to `window`.
    pub ell_max: Option<i64>,
    pub lambda_samples: usize,
    pub seed: u64,
    pub tol: f64,
    pub m0_cutoff: i64,
    pub max_listed: usize,
    pub pair_budget: usize,
    /// Explicit mode list; overrides the window.
    pub modes: Option<Vec<Mode>>,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            sites: vec![1, 2],
            n_sub: 1,
            window: 8,
            ell_max: None,
            lambda_samples: 20,
            seed: 0,
            tol: 1e-8,
            m0_cutoff: DEFAULT_M0_CUTOFF,
            max_listed: 100,
            pair_budget: 40_000_000,
            modes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AuditTuple {
    pub modes: Vec<Mode>,
    pub sigma: Vec<i8>,
    pub ell: Vec<i64>,
    pub c: Vec<i64>,
}

impl AuditTuple {
    fn new(sig: &Signature, items: &[Item]) -> Self {
        let mut it = items.to_vec();
        it.sort();
        AuditTuple { modes: it.iter().map(|i| i.mode).collect(), sigma: it.iter().map(|i| i.sigma).collect(), ell: sig.ell(), c: sig.c() }
    }

    /// ℓ = c = ±(1,…,1): F vanishes identically because Σμ = Σλ.
    pub fn is_trace_identity(&self) -> bool {
        let s = self.ell.first().copied().unwrap_or(0);
        s.abs() == 1 && self.ell.iter().all(|&x| x == s) && self.c == self.ell
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub sites: Vec<i64>,
    pub n_sub: i64,
    pub window: i64,
    pub ell_max: i64,
    pub lambda_samples: usize,
    pub seed: u64,
    pub m0_cutoff: i64,
    /// Admissible tuples with K = 0 and F below tolerance at every sample.
    pub vanishing: u64,
    pub by_tag: BTreeMap<String, u64>,
    pub counterexample_count: u64,
    pub counterexamples: Vec<AuditTuple>,
    /// Counterexamples with ℓ = c = ±(1,…,1).
    pub trace_identity_count: u64,
    /// Vanishing tuples made only of column modes with ℓ ≠ 0.
    pub all_column_count: u64,
    pub all_column: Vec<AuditTuple>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.counterexample_count == 0
    }
}

struct Auditor<'a> {
    lambdas: Vec<Vec<f64>>,
    mus: Vec<Vec<f64>>,
    tol: f64,
    m0: i64,
    max_listed: usize,
    cache: HashMap<([i8; MAX_D], [i8; MAX_D]), bool>,
    report: &'a mut AuditReport,
}

impl TupleVisitor for Auditor<'_> {
    fn wants(&mut self, sig: &Signature) -> bool {
        if sig.k != 0 {
            return false;
        }
        let (lambdas, mus, tol) = (&self.lambdas, &self.mus, self.tol);
        *self.cache.entry((sig.ell, sig.c)).or_insert_with(|| {
            let f = sig.fterms();
            lambdas.iter().zip(mus).all(|(l, m)| f.eval(l, m).abs() <= tol)
        })
    }

    fn visit(&mut self, sig: &Signature, items: &[Item]) {
        let tag = tag_items(items, &sig.ell(), self.m0);
        let r = &mut *self.report;
        r.vanishing += 1;
        *r.by_tag.entry(tag_name(tag).to_string()).or_default() += 1;
        if !tag.is_r4() {
            r.counterexample_count += 1;
            let ell = sig.ell();
            let s0 = ell[0];
            if s0.abs() == 1 && ell.iter().all(|&x| x == s0) && sig.c() == ell {
                r.trace_identity_count += 1;
            }
            if r.counterexamples.len() < self.max_listed {
                r.counterexamples.push(AuditTuple::new(sig, items));
            }
        }
        if sig.ell_l1() != 0 && items.iter().all(|it| it.site.is_some()) {
            r.all_column_count += 1;
            if r.all_column.len() < self.max_listed {
                r.all_column.push(AuditTuple::new(sig, items));
            }
        }
    }
}

fn tag_name(t: ResonanceTag) -> &'static str {
    match t {
        ResonanceTag::R2 => "r2",
        ResonanceTag::R4Case1 => "r4-case1",
        ResonanceTag::R4Case2 => "r4-case2",
        ResonanceTag::R4Case3 => "r4-case3",
        ResonanceTag::R4Case4 => "r4-case4",
        ResonanceTag::Nonresonant => "nonresonant",
        ResonanceTag::Inadmissible => "inadmissible",
    }
}

/// λ drawn uniformly from (1/2, 1)^d.
pub(crate) fn sample_lambdas(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, 0x6175_6469);
    (0..count).map(|_| (0..d).map(|_| r.gen_range(0.5..1.0)).collect()).collect()
}

pub fn nonresonance_audit(opts: &AuditOptions) -> Result<AuditReport, ResonanceError> {
    let sites = TangentialSites::unchecked(opts.sites.clone());
    let d = sites.d();
    if d == 0 || opts.n_sub < 1 || opts.window < 0 || opts.lambda_samples == 0 {
        return Err(ResonanceError::Invalid("audit needs sites, N >= 1, window >= 0 and at least one λ sample".into()));
    }
    let ell_max = opts.ell_max.unwrap_or(opts.window);
    let space = match &opts.modes {
        Some(m) => QuartetSpace::from_modes(&sites, m, ell_max, 4, opts.pair_budget),
        None => QuartetSpace::window(&sites, opts.n_sub, opts.window, ell_max, 4, opts.pair_budget),
    }
    .map_err(|e| ResonanceError::Invalid(e.to_string()))?;
    let lambdas = sample_lambdas(d, opts.lambda_samples, opts.seed);
    let mus = lambdas.iter().map(|l| mu_real(l)).collect::<Result<Vec<_>, _>>().map_err(|e| ResonanceError::Invalid(e.to_string()))?;
    let mut report = AuditReport {
        sites: opts.sites.clone(),
        n_sub: opts.n_sub,
        window: opts.window,
        ell_max,
        lambda_samples: opts.lambda_samples,
        seed: opts.seed,
        m0_cutoff: opts.m0_cutoff,
        vanishing: 0,
        by_tag: BTreeMap::new(),
        counterexample_count: 0,
        counterexamples: vec![],
        trace_identity_count: 0,
        all_column_count: 0,
        all_column: vec![],
    };
    let mut a = Auditor { lambdas, mus, tol: opts.tol, m0: opts.m0_cutoff, max_listed: opts.max_listed, cache: HashMap::new(), report: &mut report };
    space.for_each(0, 0, &mut a);
    report.counterexamples.sort();
    report.all_column.sort();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mode_list_gives_empty_report() {
        let r = nonresonance_audit(&AuditOptions { modes: Some(vec![]), window: 4, ..Default::default() }).unwrap();
        assert_eq!(r.vanishing, 0);
        assert!(r.passed());
        assert!(r.by_tag.is_empty());
    }

    #[test]
    fn free_only_window_reduces_to_rectangles() {
        // No mode sits above a site, so every vanishing tuple has ℓ = 0 and is a rectangle.
        let modes: Vec<Mode> = (-4..=4).flat_map(|m| (-4..=4).map(move |n| Mode::new(m, n))).filter(|j| j.m > 2 || j.m < 0).collect();
        let r = nonresonance_audit(&AuditOptions { modes: Some(modes), window: 4, ..Default::default() }).unwrap();
        assert!(r.vanishing > 0);
        assert!(r.passed(), "{:?}", r.counterexamples.first());
        assert_eq!(r.by_tag.keys().collect::<Vec<_>>(), vec!["r4-case1"]);
    }

    #[test]
    fn small_window_failures_are_trace_identities() {
        let r = nonresonance_audit(&AuditOptions { window: 3, ..Default::default() }).unwrap();
        assert!(r.counterexample_count > 0);
        assert_eq!(r.counterexamples.len() as u64, r.counterexample_count);
        assert!(r.counterexamples.iter().all(AuditTuple::is_trace_identity));
    }
}
