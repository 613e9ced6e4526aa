use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use vrsq::commands::{self, Command};
use vrsq::config::DEFAULT_TOML;
use vrsq::{output, ReplayError};

const EXIT_CONFIG: u8 = 1;
const EXIT_PHYSICS: u8 = 3;
const EXIT_REPLAY_MISMATCH: u8 = 4;

/// Simulate cavity-aided QND measurements of a collective atomic spin.
///
/// Every run writes CSV tables, a summary and a `manifest.toml` into
/// `<output_dir>/<command>/`.
#[derive(Parser, Debug)]
#[command(name = "vrsq", version)]
struct Cli {
    /// TOML configuration file (defaults are used for anything it omits).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set sweep.photons=1e5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    svg: bool,
    #[command(subcommand)]
    cmd: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Mode spacings to Rayleigh range, waist, linewidth and dressed-mode width.
    CalibrateGeometry,
    /// Sample atom positions and moment-match to N_eff / N_tot and g_eff.
    CalibrateCoupling {
        /// Number of sampled atoms.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Var(J_z) against atom number with a perfect readout.
    ProjectionScan {
        /// Comma-separated atom numbers, e.g. `1e4,1e5,7e5`.
        #[arg(long, value_delimiter = ',')]
        n: Vec<f64>,
        /// Trials per atom number.
        #[arg(long)]
        trials: Option<usize>,
        /// Sequence whose first readout is used.
        #[arg(long)]
        sequence: Option<String>,
    },
    /// Two QND measurements, conditional variances and squeezing gains.
    Squeeze {
        #[arg(long)]
        trials: Option<usize>,
        /// Weight the first measurement by Cov/Var instead of the noise model.
        #[arg(long)]
        empirical_weight: bool,
    },
    /// Conditional variance against a rotation inserted between the measurements.
    BackactionScan {
        /// Angles evenly spaced over [0, pi].
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        /// Trials of the repeated-readout calibration.
        #[arg(long)]
        calibration_trials: Option<usize>,
    },
    /// Fringe contrast against probe photon number and its quadratic fit.
    ContrastScan {
        #[arg(long)]
        max_photons: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
        /// Phases per fringe.
        #[arg(long)]
        phases: Option<usize>,
    },
    /// Rotation-added noise (leading order and Monte Carlo) and pi-pulse leakage.
    RotationNoise {
        #[arg(long)]
        trials: Option<usize>,
        /// Relative pi-pulse length error for the leakage check.
        #[arg(long, allow_hyphen_values = true)]
        leakage_error: Option<f64>,
        #[arg(long)]
        leakage_trials: Option<usize>,
    },
    /// Readout and technical noise that close the measured variance ratios.
    SolveBudget {
        #[arg(long, allow_hyphen_values = true)]
        var_diff_db: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        var_cond_db: Option<f64>,
    },
    /// Rerun a recorded run from its manifest and compare output hashes.
    Replay { manifest: PathBuf },
    /// Print the default configuration file.
    DefaultConfig,
}

fn push<T: ToString>(sets: &mut Vec<String>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        sets.push(format!("{key}={}", v.to_string()));
    }
}

/// Command plus the overrides implied by its flags.
fn plan(sub: Sub) -> (Command, Vec<String>) {
    let mut s = Vec::new();
    let cmd = match sub {
        Sub::CalibrateGeometry => Command::CalibrateGeometry,
        Sub::CalibrateCoupling { samples } => {
            push(&mut s, "calibrate_coupling.samples", samples);
            Command::CalibrateCoupling
        }
        Sub::ProjectionScan { n, trials, sequence } => {
            if !n.is_empty() {
                let list: Vec<String> = n.iter().map(|x| format!("{x:?}")).collect();
                s.push(format!("projection_scan.n=[{}]", list.join(",")));
            }
            push(&mut s, "projection_scan.trials", trials);
            push(&mut s, "projection_scan.sequence", sequence.map(|q| format!("{q:?}")));
            Command::ProjectionScan
        }
        Sub::Squeeze { trials, empirical_weight } => {
            push(&mut s, "squeeze.trials", trials);
            if empirical_weight {
                s.push("budget.empirical_weight=true".into());
            }
            Command::Squeeze
        }
        Sub::BackactionScan { points, trials, calibration_trials } => {
            push(&mut s, "backaction_scan.points", points);
            push(&mut s, "backaction_scan.trials", trials);
            push(&mut s, "backaction_scan.calibration_trials", calibration_trials);
            Command::BackactionScan
        }
        Sub::ContrastScan { max_photons, points, phases } => {
            push(&mut s, "contrast_scan.max_photons", max_photons.map(|x| format!("{x:?}")));
            push(&mut s, "contrast_scan.points", points);
            push(&mut s, "contrast_scan.phases", phases);
            Command::ContrastScan
        }
        Sub::RotationNoise { trials, leakage_error, leakage_trials } => {
            push(&mut s, "rotation_noise_run.trials", trials);
            push(&mut s, "rotation_noise_run.leakage_error", leakage_error.map(|x| format!("{x:?}")));
            push(&mut s, "rotation_noise_run.leakage_trials", leakage_trials);
            Command::RotationNoise
        }
        Sub::SolveBudget { var_diff_db, var_cond_db } => {
            push(&mut s, "solve_budget.var_diff_db", var_diff_db.map(|x| format!("{x:?}")));
            push(&mut s, "solve_budget.var_cond_db", var_cond_db.map(|x| format!("{x:?}")));
            Command::SolveBudget
        }
        Sub::Replay { .. } | Sub::DefaultConfig => unreachable!("handled before planning"),
    };
    (cmd, s)
}

fn run_replay(path: &PathBuf) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match vrsq::replay(&text) {
        Ok((_, report)) => {
            let mut ok = true;
            for (name, want, got) in &report {
                let same = got.as_deref() == Some(want.as_str());
                ok &= same;
                println!("{} {name}", if same { "match   " } else { "MISMATCH" });
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_REPLAY_MISMATCH)
            }
        }
        Err(ReplayError::Manifest(e)) => {
            eprintln!("error: manifest {}: {e}", path.display());
            ExitCode::from(EXIT_CONFIG)
        }
        Err(ReplayError::UnknownCommand(c)) => {
            eprintln!("error: manifest names unknown command `{c}`");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(ReplayError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_PHYSICS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.cmd {
        Sub::Replay { manifest } => return run_replay(manifest),
        Sub::DefaultConfig => {
            print!("{DEFAULT_TOML}");
            return ExitCode::SUCCESS;
        }
        _ => {}
    }
    let (cmd, flag_sets) = plan(cli.cmd);
    let mut sets = cli.set.clone();
    sets.extend(flag_sets);
    push(&mut sets, "run.seed", cli.seed);
    push(&mut sets, "run.threads", cli.threads);
    push(&mut sets, "run.output_dir", cli.out.map(|o| format!("{o:?}")));
    if cli.svg {
        sets.push("run.svg=true".into());
    }
    let cfg = match vrsq::load_config(cli.config.as_deref(), &sets) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: config {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let out = match commands::execute(cmd, &cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {} failed: {e}", cmd.name());
            return ExitCode::from(EXIT_PHYSICS);
        }
    };
    let dir = vrsq::command_dir(&cfg, cmd);
    if let Err(e) = output::write_all(&dir, &out, &cfg) {
        eprintln!("error: writing {}: {e}", dir.display());
        return ExitCode::from(EXIT_CONFIG);
    }
    print!("{}", out.summary_text());
    println!("output = {}", dir.display());
    ExitCode::SUCCESS
}
