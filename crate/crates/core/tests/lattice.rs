use std::time::Instant;

use cascade_lab::lattice::*;
use proptest::prelude::*;

fn brute_rectangles(modes: &[Mode]) -> Vec<Rectangle> {
    let mut pts = modes.to_vec();
    pts.sort();
    pts.dedup();
    let n = pts.len();
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            for c in a + 1..n {
                if c == b {
                    continue;
                }
                for d in c + 1..n {
                    if d == b {
                        continue;
                    }
                    let (p, q, r, s) = (pts[a], pts[b], pts[c], pts[d]);
                    if p + q == r + s && p.norm2() + q.norm2() == r.norm2() + s.norm2() {
                        out.push(Rectangle::new([p, q], [r, s]));
                    }
                }
            }
        }
    }
    out.sort();
    out
}

fn certified(g: usize, seed: u64) -> Candidate {
    build_prototype(g, seed, &BuildOptions::for_generations(g)).expect("certified set")
}

#[test]
fn g4_seed7_spread_1e3_passes() {
    let c = build_prototype(4, 7, &BuildOptions { spread: 1e3, ..BuildOptions::for_generations(4) }).unwrap();
    assert!(c.generations.iter().all(|gen| gen.len() == 8));
    let r = verify_properties(&c);
    assert!(r.all_pass(), "{r}");
}

#[test]
fn certified_sets_for_g_4_to_6() {
    for g in 4..=6 {
        let c = certified(g, 1);
        let r = verify_properties(&c);
        assert!(r.all_pass(), "g={g}: {r}");
        let fam = (g - 1) << (g - 2);
        assert_eq!(r.rectangle_count, fam);
        assert_eq!(r.nuclear_family_count, fam);
        assert_eq!(c.families().len(), fam);
        let mut all: Vec<Mode> = c.modes().collect();
        assert_eq!(all.len(), g << (g - 1));
        all.sort();
        all.dedup();
        assert_eq!(all.len(), g << (g - 1));
    }
}

#[test]
fn g6_rectangles_match_oracle() {
    let c = certified(6, 2);
    let modes: Vec<Mode> = c.modes().collect();
    assert_eq!(modes.len(), 192);
    let t = Instant::now();
    let fast = enumerate_rectangles(&modes);
    assert!(t.elapsed().as_secs_f64() < 10.0);
    assert_eq!(fast, brute_rectangles(&modes));
}

#[test]
fn family_membership_counts() {
    let c = certified(5, 4);
    let fams = c.families();
    for (k, gen) in c.generations.iter().enumerate() {
        for &j in gen {
            let n = fams.iter().filter(|(_, f)| f.contains(&j)).count();
            let want = if k == 0 || k == 4 { 1 } else { 2 };
            assert_eq!(n, want, "{j} in generation {k}");
        }
    }
}

#[test]
fn scaling_preserves_verdicts() {
    let c = certified(4, 3);
    let base = verify_properties(&c).verdicts();
    for n in [1, 2, 7, 32] {
        assert_eq!(verify_properties(&c.scaled(n)).verdicts(), base);
    }
    // a failing candidate keeps failing the same way
    let mut bad = c.clone();
    bad.generations[2][0] = Mode::new(0, bad.generations[2][0].n);
    let b = verify_properties(&bad).verdicts();
    assert_eq!(verify_properties(&bad.scaled(5)).verdicts(), b);
}

#[test]
fn scale_one_is_identity() {
    let c = certified(4, 5);
    let l = scale_and_certify(&c, 1, 1.0).unwrap();
    assert_eq!(l.generations, c.generations);
    assert_eq!(l.report.verdicts(), verify_properties(&c).verdicts());
}

#[test]
fn margin_after_scaling() {
    let c = certified(4, 6);
    let base = right_angle_margin(&c.modes().collect::<Vec<_>>());
    let l = scale_and_certify(&c, 32, 1.0).unwrap();
    let scaled = l.report.right_angle_margin.clone();
    // both orthogonality conditions are homogeneous, so the axis solutions scale with N
    match (base, scaled) {
        (Some(b), Some(s)) => assert_eq!(s.m.abs(), 32 * b.m.abs()),
        (None, None) => {}
        (b, s) => panic!("{b:?} vs {s:?}"),
    }
    assert!(l.modes_divisible());
}

#[test]
fn margin_violation_reports_witness() {
    let c = certified(4, 6);
    let modes: Vec<Mode> = c.modes().collect();
    if let Some(mg) = right_angle_margin(&modes) {
        let too_big = ((mg.m.abs() + 1) as f64).powi(2);
        match scale_and_certify(&c, 1, too_big) {
            Err(LatticeError::MarginViolation { axis, pair, .. }) => {
                let right = (pair[0] - pair[1]).dot(axis - pair[1]) == 0
                    || (pair[1] - pair[0]).dot(axis - pair[0]) == 0
                    || (pair[0] - axis).dot(pair[1] - axis) == 0;
                assert!(right);
            }
            other => panic!("expected margin violation, got {other:?}"),
        }
    }
}

#[test]
fn bound_constant_brackets_all_modes() {
    let c = certified(5, 8);
    let l = scale_and_certify(&c, 4, 1000.0).unwrap();
    let cst = l.bound_constant;
    for j in l.candidate().modes() {
        assert!(j.norm() >= l.f_scale / cst * (1.0 - 1e-12));
        assert!(j.norm() <= cst * 3f64.powi(5) * l.f_scale * (1.0 + 1e-12));
    }
}

#[test]
fn json_round_trip() {
    let c = certified(4, 9);
    let l = scale_and_certify(&c, 3, 100.0).unwrap();
    let back = CertifiedLambda::from_json(&l.to_json()).unwrap();
    assert_eq!(back, l);
    assert!(CertifiedLambda::from_json("{\"schema_version\": 99}").is_err());
}

#[test]
fn generation_weights_match_direct_sum() {
    let c = certified(5, 10);
    for s in [0.3, 0.5, 0.7, 1.5] {
        let w = generation_weights(&c.generations, s).unwrap();
        for (k, gen) in c.generations.iter().enumerate() {
            let direct: f64 = gen.iter().map(|j| ((j.m as f64).hypot(j.n as f64)).powf(2.0 * s)).sum();
            assert!((w.sums[k] - direct).abs() <= 1e-12 * direct);
        }
    }
}

#[test]
fn g8_growth_ratios() {
    let c = certified(8, 1);
    let t = Instant::now();
    for s in [0.3, 0.5, 0.7] {
        let w = generation_weights(&c.generations, s).unwrap();
        assert!(w.passes.unwrap(), "s={s}: ratio {:?} < {:?}", w.ratio, w.threshold);
    }
    assert!(t.elapsed().as_secs_f64() < 1.0);
}

fn small_modes() -> impl Strategy<Value = Vec<Mode>> {
    prop::collection::vec((-6i64..=6, -6i64..=6).prop_map(|(m, n)| Mode::new(m, n)), 0..200)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rectangles_agree_with_oracle(modes in small_modes()) {
        prop_assert_eq!(enumerate_rectangles(&modes), brute_rectangles(&modes));
    }

    #[test]
    fn rectangle_invariant_under_permutation(modes in small_modes(), k in 1i64..5) {
        let mut rev = modes.clone();
        rev.reverse();
        prop_assert_eq!(enumerate_rectangles(&modes), enumerate_rectangles(&rev));
        let scaled: Vec<Mode> = modes.iter().map(|j| j.scaled(k)).collect();
        prop_assert_eq!(enumerate_rectangles(&modes).len(), enumerate_rectangles(&scaled).len());
    }
}
