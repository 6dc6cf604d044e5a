//! Browser bindings: build a certified set, tag a monomial, search a toy traversal.
//! Every function returns a JSON string so the page stays plain JavaScript.

use cascade_lab::dynamics::{find_traversal_orbit, integrate, IntegratorOptions, ToyModel, TraversalOptions};
use cascade_lab::lattice::{build_prototype, generation_weights, scale_and_certify, BuildOptions};
use cascade_lab::resonance::{classify, parse_modes, parse_sigma, DEFAULT_M0_CUTOFF};
use cascade_lab::spectrum::TangentialSites;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn parse_ints(s: &str) -> Result<Vec<i64>, JsValue> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| t.trim().parse().map_err(err)).collect()
}

/// Certified set for g generations: modes per generation, rectangle count and growth ratio at s=1/2.
#[wasm_bindgen]
pub fn build_lattice(g: u32, seed: u32) -> Result<String, JsValue> {
    let g = g as usize;
    if !(3..=7).contains(&g) {
        return Err(err("the demo builds g in 3..=7"));
    }
    let cand = build_prototype(g, seed as u64, &BuildOptions::for_generations(g)).map_err(err)?;
    let lam = scale_and_certify(&cand, 1, 1.0).map_err(err)?;
    let w = generation_weights(&lam.generations, 0.5).map_err(err)?;
    Ok(json!({
        "generations": lam.generations,
        "rectangles": lam.report.rectangle_count,
        "families": lam.report.nuclear_family_count,
        "certified": lam.report.all_pass(),
        "ratio": w.ratio,
        "threshold": w.threshold,
    })
    .to_string())
}

/// Resonance tag of a monomial, e.g. modes "(1,3);(2,3);(2,6);(1,6)", sigma "+-+-", ell "0", sites "1,2".
#[wasm_bindgen]
pub fn classify_monomial(modes: &str, sigma: &str, ell: &str, sites: &str) -> Result<String, JsValue> {
    let modes = parse_modes(modes).map_err(err)?;
    let sigma = parse_sigma(sigma).map_err(err)?;
    let sites = parse_ints(sites)?;
    let mut ell = parse_ints(ell)?;
    if ell.len() == 1 {
        ell = vec![ell[0]; sites.len()];
    }
    let c = classify(&modes, &ell, &sigma, &TangentialSites::unchecked(sites), 1, DEFAULT_M0_CUTOFF).map_err(err)?;
    serde_json::to_string(&c).map_err(err)
}

/// Traversal of the toy model with generation masses sampled over [0, T0].
#[wasm_bindgen]
pub fn toy_traversal(g: u32, mu: f64, samples: u32) -> Result<String, JsValue> {
    let g = g as usize;
    if !(4..=8).contains(&g) || !(mu > 0.0 && mu <= 1e-2) {
        return Err(err("the demo takes g in 4..=8 and mu in (0, 1e-2]"));
    }
    let opts = TraversalOptions { phase_grid: 24, ..Default::default() };
    let o = find_traversal_orbit(g, mu, &opts).map_err(err)?;
    let n = samples.clamp(10, 2000) as usize;
    let times: Vec<f64> = (1..=n).map(|i| o.t0 * i as f64 / n as f64).collect();
    let tr = integrate(&ToyModel { g }, 0.0, &o.initial, &times, &IntegratorOptions::with_tol(o.tol)).map_err(err)?;
    let masses: Vec<Vec<f64>> = tr.states.iter().map(|b| b.iter().map(|z| z.norm_sqr()).collect()).collect();
    Ok(json!({
        "t0": o.t0,
        "mass_in": o.mass_in,
        "mass_out": o.mass_out,
        "mass_drift": o.mass_drift,
        "energy_drift": o.energy_drift,
        "times": tr.times,
        "masses": masses,
    })
    .to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operations_return_json() {
        let v: serde_json::Value = serde_json::from_str(&build_lattice(4, 1).unwrap()).unwrap();
        assert_eq!(v["certified"], true);
        assert_eq!(v["generations"].as_array().unwrap().len(), 4);
        let c: serde_json::Value = serde_json::from_str(&classify_monomial("(3,1);(3,-1);(-3,1);(-3,-1)", "+-+-", "0", "1,2").unwrap()).unwrap();
        assert!(c["tag"].is_string());
        let t: serde_json::Value = serde_json::from_str(&toy_traversal(5, 1e-4, 50).unwrap()).unwrap();
        assert!(t["mass_out"].as_f64().unwrap() >= 0.9);
        assert_eq!(t["masses"].as_array().unwrap().len(), 50);
    }
}
