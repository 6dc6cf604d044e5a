use std::process::Command;

use cascade_lab::harness::*;
use cascade_lab::lattice::CertifiedLambda;
use proptest::prelude::*;

fn with_out(toml: &str, dir: &std::path::Path) -> ExperimentConfig {
    let mut c = validate_config(toml).unwrap();
    c.out = Some(dir.to_path_buf());
    c
}

const MINIMAL: [&str; 5] = [
    "kind = \"lattice-build\"\nseed = 1\n",
    "kind = \"toy-traversal\"\nseed = 2\n",
    "kind = \"cascade\"\nseed = 3\n[cascade]\nnu = 20.0\n",
    "kind = \"melnikov-sweep\"\nseed = 4\n",
    "kind = \"nf-audit\"\nseed = 5\n",
];

#[test]
fn validated_configs_round_trip_through_toml_and_json() {
    for raw in MINIMAL {
        let c = validate_config(raw).unwrap();
        let t = toml::to_string(&c).unwrap();
        assert_eq!(validate_config(&t).unwrap(), c, "{t}");
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(validate_config(&j).unwrap(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn toy_config_round_trip(g in 4usize..=12, mu in 1e-9f64..0.1, tol in 1e-13f64..1e-4, seed in any::<u64>(), grid in 1usize..100) {
        let seed = if seed <= i64::MAX as u64 { seed.to_string() } else { format!("\"{seed}\"") };
        let raw = format!("kind = \"toy-traversal\"\nseed = {seed}\n[toy_traversal]\ng = {g}\nmu = {mu:?}\ntol = {tol:?}\nphase_grid = {grid}\n");
        let c = validate_config(&raw).unwrap();
        prop_assert_eq!(validate_config(&toml::to_string(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn cascade_config_round_trip(nu in 1.0f64..500.0, sigma in 0.0f64..0.9, j1 in any::<bool>(), seed in any::<u64>()) {
        let raw = format!("{{\"kind\":\"cascade\",\"seed\":{seed},\"cascade\":{{\"nu\":{nu:?},\"sigma\":{sigma:?},\"j1\":{j1}}}}}");
        let c = validate_config(&raw).unwrap();
        prop_assert_eq!(validate_config(&toml::to_string(&c).unwrap()).unwrap(), c.clone());
        prop_assert_eq!(config_hash(&c), config_hash(&validate_config(&serde_json::to_string(&c).unwrap()).unwrap()));
    }
}

#[test]
fn config_errors_name_the_field() {
    let e = validate_config("kind = \"melnikov-sweep\"\nseed = 1\n[melnikov_sweep]\ngamm = [0.1]\n").unwrap_err().to_string();
    assert!(e.contains("gamm"), "{e}");
    let e = validate_config("{\"kind\": \"nf-audit\", \"seed\": 1, \"nf_audit\": {\"gamm\": 1}}").unwrap_err().to_string();
    assert!(e.contains("gamm") && e.contains("nf_audit"), "{e}");
    let e = validate_config("kind = \"toy-traversal\"\n[toy_traversal]\ng = 6\n").unwrap_err().to_string();
    assert!(e.contains("seed"), "{e}");
    let e = validate_config("kind = \"toy-traversal\"\nseed = 1\n[toy_traversal]\nmu = 0.5\n").unwrap_err().to_string();
    assert!(e.contains("toy_traversal.mu"), "{e}");
    let e = validate_config("kind = \"lattice-build\"\nseed = 1\nextra = 2\n").unwrap_err().to_string();
    assert!(e.contains("extra"), "{e}");
    assert!(validate_config("kind = \"sweep\"\nseed = 1\n").is_err());
    assert_eq!(validate_config("kind = \"nf-audit\"\nseed = \"18446744073709551615\"\n").unwrap().seed, u64::MAX);
    assert!(validate_config("kind = \"nf-audit\"\nseed = -1\n").is_err());
}

#[test]
fn lattice_build_artifact_is_certified_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let raw = "kind = \"lattice-build\"\nseed = 2\n[lattice_build]\ng = 4\n";
    let x = run_experiment(&with_out(raw, &a)).unwrap();
    let y = run_experiment(&with_out(raw, &b)).unwrap();
    assert!(x.passed, "{}", x.summary);
    let lam = CertifiedLambda::from_json(&std::fs::read_to_string(a.join("lambda.json")).unwrap()).unwrap();
    assert!(lam.report.all_pass() && lam.modes_divisible());
    assert_eq!(lam.generations.iter().map(Vec::len).sum::<usize>(), 32);
    for p in &x.payloads {
        assert_eq!(std::fs::read(a.join(&p.name)).unwrap(), std::fs::read(b.join(&p.name)).unwrap(), "{}", p.name);
    }
    assert_eq!((x.hash.clone(), x.config_sha256.clone()), (y.hash.clone(), y.config_sha256.clone()));
    let csv = std::fs::read_to_string(a.join("modes.csv")).unwrap();
    assert!(csv.starts_with("generation,index,m,n\r\n") && csv.ends_with("\r\n"));
    assert_eq!(load_artifact(&a).unwrap(), x);
    let r = report(&[x, y]);
    assert_eq!(r.row(11).status, Status::Pass);
    assert_eq!(r.row(1).status, Status::NotRun, "only g=4 present");
}

#[test]
fn tampering_is_detected() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("run");
    run_experiment(&with_out("kind = \"lattice-build\"\nseed = 1\n", &d)).unwrap();
    verify_artifact(&d).unwrap();
    let f = d.join("weights.csv");
    let mut text = std::fs::read_to_string(&f).unwrap();
    text.push_str("9,9,9\r\n");
    std::fs::write(&f, text).unwrap();
    assert!(verify_artifact(&d).unwrap_err().to_string().contains("weights.csv"));
}

#[test]
fn failing_certificate_fails_the_run_with_explanation() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = "kind = \"cascade\"\nseed = 1\n[cascade]\nj2_amplitude = 10.0\ncheck_unperturbed = false\n";
    let a = run_experiment(&with_out(raw, tmp.path())).unwrap();
    assert!(!a.passed);
    assert!(a.checks.iter().all(|c| c.criterion != Some(9)), "custom amplitudes do not evidence criterion 9");
    let j: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("certificate.json")).unwrap()).unwrap();
    assert_eq!(j["certificate_passes"], false);
    assert!(j["explanation"].as_str().unwrap().contains("bound violated"));
    assert!(j["sup_m"].as_f64().unwrap() > j["certificate_bound"].as_f64().unwrap());
}

fn artifact(criterion: u32, pass: bool) -> RunArtifact {
    let config = validate_config("kind = \"lattice-build\"\nseed = 1\n").unwrap();
    RunArtifact {
        schema_version: 1,
        kind: ExperimentKind::LatticeBuild,
        config_sha256: config_hash(&config),
        config,
        payloads: vec![],
        hash: String::new(),
        wall_clock_s: 0.0,
        passed: pass,
        checks: vec![Check { criterion: Some(criterion), name: "x".into(), measured: "1".into(), target: "1".into(), pass }],
        summary: String::new(),
    }
}

#[test]
fn report_statuses() {
    let r = report(&[]);
    assert!(r.rows.iter().all(|x| x.status == Status::NotRun));
    let r = report(&[artifact(3, true), artifact(5, false)]);
    assert_eq!(r.row(3).status, Status::Pass);
    assert_eq!(r.row(5).status, Status::Fail);
    assert_eq!(r.row(9).status, Status::NotRun);
    assert_eq!(r.overall, Status::Fail);
    let mut b = artifact(3, true);
    b.payloads.push(PayloadRef { name: "x.csv".into(), sha256: "00".into(), bytes: 1 });
    assert_eq!(report(&[artifact(3, true), b]).row(11).status, Status::Fail);
}

#[test]
fn cli_exit_codes_follow_certificates() {
    let bin = env!("CARGO_BIN_EXE_cascade-lab");
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.toml");
    std::fs::write(&good, "kind = \"lattice-build\"\nseed = 1\n").unwrap();
    let out = Command::new(bin).args(["run", "--config"]).arg(&good).arg("--out").arg(tmp.path().join("g")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = Command::new(bin).arg("report").arg(tmp.path().join("g")).output().unwrap();
    assert!(rep.status.success());
    assert!(String::from_utf8_lossy(&rep.stdout).contains("not run"));

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "kind = \"cascade\"\nseed = 1\n[cascade]\nj2_amplitude = 10.0\ncheck_unperturbed = false\n").unwrap();
    let out = Command::new(bin).args(["run", "--config"]).arg(&bad).arg("--out").arg(tmp.path().join("b")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let typo = tmp.path().join("typo.toml");
    std::fs::write(&typo, "kind = \"melnikov-sweep\"\nseed = 1\n[melnikov_sweep]\ngamm = 1\n").unwrap();
    let out = Command::new(bin).args(["run", "--config"]).arg(&typo).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamm"));

    let out = Command::new(bin).args(["--threads", "1", "resonance", "classify", "--modes", "(3,1);(3,-1);(-3,1);(-3,-1)", "--sigma", "+-+-"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = Command::new(bin).args(["spectrum", "mu", "--lambda", "0.6,0.8"]).env("CASCADE_LAB_THREADS", "0").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
