use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cascade_lab::dynamics::{find_traversal_orbit, TraversalOptions};
use cascade_lab::harness::{self, ExperimentConfig, ExperimentKind};
use cascade_lab::lattice::{build_prototype, scale_and_certify, verify_properties, BuildOptions, CertifiedLambda};
use cascade_lab::resonance::{classify, nonresonance_audit, parse_modes, parse_sigma, AuditOptions, DEFAULT_M0_CUTOFF};
use cascade_lab::spectrum::{fitted_decay_exponent, melnikov_sweep, mu_real, Corrections, FrequencyModel, MelnikovOptions, TangentialSites};

#[derive(Parser)]
#[command(name = "cascade-lab", version, about = "Resonant lattices, normal forms and energy cascade experiments")]
struct Cli {
    /// Worker threads (overrides CASCADE_LAB_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    #[command(subcommand)]
    Lattice(LatticeCmd),
    #[command(subcommand)]
    Spectrum(SpectrumCmd),
    #[command(subcommand)]
    Resonance(ResonanceCmd),
    #[command(subcommand)]
    Dynamics(DynamicsCmd),
    /// Run one experiment from a TOML or JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Consolidate run directories (or artifact.json files) into the acceptance table.
    Report {
        artifacts: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum LatticeCmd {
    /// Build, scale and certify a resonant set.
    Build {
        #[arg(long, default_value_t = 5)]
        g: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        scale_n: i64,
        #[arg(long, default_value_t = 1000.0)]
        f_scale: f64,
        /// Write the certified set here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check every certification property of a saved set.
    Verify { file: PathBuf },
}

#[derive(Subcommand)]
enum SpectrumCmd {
    /// Tangential frequency shifts for given λ.
    Mu {
        #[arg(long, value_delimiter = ',', required = true)]
        lambda: Vec<f64>,
    },
    /// Violation fraction of the Melnikov bound over a γ sweep.
    Melnikov {
        #[arg(long, default_value_t = 4)]
        p: usize,
        /// Log-spaced range hi:lo.
        #[arg(long, default_value = "1e-1:1e-4")]
        gamma_sweep: String,
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long, default_value_t = 20)]
        window: i64,
        #[arg(long, default_value_t = 6)]
        ell_max: i64,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        sites: Vec<i64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        exclude_identical: bool,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        out: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum ResonanceCmd {
    /// Tag a monomial: modes "(m,n);(m,n);...", signs "+-+-", ℓ as comma list (a single value is broadcast).
    Classify {
        #[arg(long)]
        modes: String,
        #[arg(long)]
        sigma: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0")]
        ell: Vec<i64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        sites: Vec<i64>,
        #[arg(long, default_value_t = 1)]
        n: i64,
        #[arg(long, default_value_t = DEFAULT_M0_CUTOFF)]
        m0_cutoff: i64,
    },
    /// Exhaustive scan for vanishing divisors outside the resonant families.
    Audit {
        #[arg(long, default_value_t = 8)]
        window: i64,
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        sites: Vec<i64>,
        #[arg(long, default_value_t = 1)]
        n: i64,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum DynamicsCmd {
    /// Search a toy-model traversal.
    Toy {
        #[arg(long, default_value_t = 6)]
        g: usize,
        #[arg(long, default_value_t = 1e-4)]
        mu: f64,
    },
    /// Lift a traversal to a certified set and integrate the perturbed system.
    Cascade {
        #[arg(long)]
        lattice: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        g: usize,
        #[arg(long, default_value_t = 50.0)]
        nu: f64,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        #[arg(long = "J1", value_enum, default_value_t = Switch::On)]
        j1: Switch,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

fn gamma_grid(spec: &str, points: usize) -> Result<Vec<f64>, String> {
    let (a, b) = spec.split_once(':').ok_or("gamma sweep must look like hi:lo")?;
    let (a, b): (f64, f64) = (a.parse().map_err(|e| format!("{e}"))?, b.parse().map_err(|e| format!("{e}"))?);
    if !(a > 0.0 && b > 0.0) || points < 2 {
        return Err("gamma bounds must be positive and points >= 2".into());
    }
    let (la, lb) = (a.log10(), b.log10());
    Ok((0..points).map(|i| 10f64.powf(la + (lb - la) * i as f64 / (points - 1) as f64)).collect())
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn finish(art: &harness::RunArtifact) -> Result<bool, String> {
    for c in &art.checks {
        let tag = c.criterion.map(|k| format!("[{k}] ")).unwrap_or_default();
        println!("{} {tag}{}: {} (target {})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.measured, c.target);
    }
    println!("{}", art.summary);
    Ok(art.passed)
}

fn run(cli: Cli) -> Result<bool, String> {
    harness::init_threads(cli.threads).map_err(|e| e.to_string())?;
    match cli.cmd {
        Cmd::Lattice(LatticeCmd::Build { g, seed, scale_n, f_scale, out }) => {
            let cand = build_prototype(g, seed, &BuildOptions::for_generations(g)).map_err(|e| e.to_string())?;
            let lam = scale_and_certify(&cand, scale_n, f_scale).map_err(|e| e.to_string())?;
            match out {
                Some(p) => {
                    std::fs::write(&p, lam.to_json()).map_err(|e| format!("{}: {e}", p.display()))?;
                    eprintln!("{} modes, {}", lam.generations.iter().map(Vec::len).sum::<usize>(), lam.report);
                }
                None => println!("{}", lam.to_json()),
            }
            Ok(true)
        }
        Cmd::Lattice(LatticeCmd::Verify { file }) => {
            let text = std::fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
            let lam = CertifiedLambda::from_json(&text).map_err(|e| e.to_string())?;
            let r = verify_properties(&lam.candidate());
            let ok = r.all_pass() && lam.modes_divisible();
            println!("{r}");
            if !lam.modes_divisible() {
                println!("modes are not all divisible by scale N = {}", lam.scale_n);
            }
            Ok(ok)
        }
        Cmd::Spectrum(SpectrumCmd::Mu { lambda }) => {
            print_json(&mu_real(&lambda).map_err(|e| e.to_string())?);
            Ok(true)
        }
        Cmd::Spectrum(SpectrumCmd::Melnikov { p, gamma_sweep, points, samples, window, ell_max, eps, sites, seed, exclude_identical, out }) => {
            let gammas = gamma_grid(&gamma_sweep, points)?;
            let d = sites.len();
            let model = FrequencyModel::new(TangentialSites::unchecked(sites), vec![0.75; d], eps, 1, Corrections::Off).map_err(|e| e.to_string())?;
            let opts = MelnikovOptions { p, ell_max, window, samples, seed, exclude_identical, ..Default::default() };
            let mut pts = melnikov_sweep(&model, &gammas, &opts).map_err(|e| e.to_string())?;
            pts.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));
            match out {
                Format::Csv => {
                    print!("gamma,tau,fraction,samples,seed\r\n");
                    for q in &pts {
                        print!("{},{},{},{},{}\r\n", harness::num(q.gamma), harness::num(q.tau), harness::num(q.fraction), q.samples, q.seed);
                    }
                }
                Format::Json => print_json(&serde_json::json!({ "points": pts, "fitted_decay_exponent": fitted_decay_exponent(&pts) })),
            }
            Ok(true)
        }
        Cmd::Resonance(ResonanceCmd::Classify { modes, sigma, ell, sites, n, m0_cutoff }) => {
            let modes = parse_modes(&modes).map_err(|e| e.to_string())?;
            let sigma = parse_sigma(&sigma).map_err(|e| e.to_string())?;
            let ell = if ell.len() == 1 { vec![ell[0]; sites.len()] } else { ell };
            let class = classify(&modes, &ell, &sigma, &TangentialSites::unchecked(sites), n, m0_cutoff).map_err(|e| e.to_string())?;
            print_json(&class);
            Ok(true)
        }
        Cmd::Resonance(ResonanceCmd::Audit { window, sites, n, samples, seed }) => {
            let r = nonresonance_audit(&AuditOptions { sites, n_sub: n, window, lambda_samples: samples, seed, ..Default::default() })
                .map_err(|e| e.to_string())?;
            print_json(&r);
            Ok(r.passed())
        }
        Cmd::Dynamics(DynamicsCmd::Toy { g, mu }) => {
            let o = find_traversal_orbit(g, mu, &TraversalOptions::default()).map_err(|e| e.to_string())?;
            print_json(&o);
            Ok(o.mass_in >= 0.99 && o.mass_out >= 0.90)
        }
        Cmd::Dynamics(DynamicsCmd::Cascade { lattice, g, nu, sigma, j1, seed, out }) => {
            let cascade = harness::CascadeParams { lattice, g, nu, sigma, j1: j1 == Switch::On, ..Default::default() };
            let config = ExperimentConfig {
                kind: ExperimentKind::Cascade,
                seed,
                out,
                lattice_build: None,
                toy_traversal: None,
                cascade: Some(cascade),
                melnikov_sweep: None,
                nf_audit: None,
            };
            finish(&harness::run_experiment(&config).map_err(|e| e.to_string())?)
        }
        Cmd::Run { config, seed, out } => {
            let raw = std::fs::read_to_string(&config).map_err(|e| format!("{}: {e}", config.display()))?;
            let mut c = harness::validate_config(&raw).map_err(|e| e.to_string())?;
            if let Some(s) = seed {
                c.seed = s;
            }
            if out.is_some() {
                c.out = out;
            }
            finish(&harness::run_experiment(&c).map_err(|e| e.to_string())?)
        }
        Cmd::Report { artifacts, json } => {
            let arts = artifacts.iter().map(|p| harness::load_artifact(p)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
            let r = harness::report(&arts);
            if json {
                print_json(&r);
            } else {
                print!("{}", r.to_table());
            }
            Ok(r.overall != harness::Status::Fail)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
