mod args;
mod output;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;
use dcl_core::bench::{
    run_anchor_ablation, run_attack_experiment, run_degeneracy_stats, run_localization_experiment, BenchError,
    ExperimentConfig,
};
use dcl_core::obfuscate::{ObfuscationError, Orientation};
use serde_json::{json, Value};

use args::{AblateArgs, Cli, Command, Common, DegeneracyArgs};
use output::{OutputDir, OutputError};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DEGENERATE: u8 = 4;

#[derive(Debug)]
enum RunError {
    Bench(BenchError),
    Output(OutputError),
}

impl From<BenchError> for RunError {
    fn from(e: BenchError) -> Self {
        RunError::Bench(e)
    }
}

impl From<OutputError> for RunError {
    fn from(e: OutputError) -> Self {
        RunError::Output(e)
    }
}

impl RunError {
    fn exit_code(&self) -> u8 {
        match self {
            RunError::Output(_) => EXIT_IO,
            RunError::Bench(BenchError::Obfuscation(ObfuscationError::DegenerateQuery(_))) => EXIT_DEGENERATE,
            RunError::Bench(BenchError::InvalidConfig(_)) => EXIT_USAGE,
            RunError::Bench(_) => 1,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Bench(e) => write!(f, "{e}"),
            RunError::Output(e) => write!(f, "{e}"),
        }
    }
}

fn orientation_str(o: Orientation) -> &'static str {
    match o {
        Orientation::Vertical => "vertical",
        Orientation::Horizontal => "horizontal",
    }
}

fn default_n(cmd: &Command) -> usize {
    match cmd {
        Command::Attack(_) | Command::Degeneracy(_) => 1500,
        Command::Localize(_) | Command::Ablate(_) => 100,
    }
}

fn default_trials(cmd: &Command) -> usize {
    match cmd {
        Command::Ablate(_) => 200,
        _ => 100,
    }
}

fn experiment_config(cmd: &Command) -> ExperimentConfig {
    let c = cmd.common();
    ExperimentConfig {
        n_points: c.n.unwrap_or_else(|| default_n(cmd)),
        width: c.width,
        height: c.height,
        mode: c.mode,
        separation: c.separation.resolve(c.height),
        orientation: c.orientation,
        k_neighbors: c.k as usize,
        noise_sigma: c.noise,
        outlier_fraction: c.outliers,
        trials: c.trials.unwrap_or_else(|| default_trials(cmd)),
        seed: c.seed,
        focal: c.focal,
        eps_pt: c.eps_pt,
        record_timing: c.record_timing,
        ..ExperimentConfig::default()
    }
}

/// Fully resolved flags as `--config` keys, so the run can be repeated.
fn resolved_flags(cmd: &Command, cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    let c: &Common = cmd.common();
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("seed", cfg.seed.to_string());
    put("width", cfg.width.to_string());
    put("height", cfg.height.to_string());
    put("mode", cfg.mode.as_str().to_string());
    put("separation", c.separation.to_string());
    put("orientation", orientation_str(cfg.orientation).to_string());
    put("k", cfg.k_neighbors.to_string());
    put("n", cfg.n_points.to_string());
    put("trials", cfg.trials.to_string());
    put("noise", cfg.noise_sigma.to_string());
    put("outliers", cfg.outlier_fraction.to_string());
    put("eps-pt", cfg.eps_pt.to_string());
    put("focal", cfg.focal.to_string());
    put("record-timing", cfg.record_timing.to_string());
    match cmd {
        Command::Degeneracy(DegeneracyArgs { samples, .. }) => put("samples", samples.to_string()),
        Command::Ablate(AblateArgs { separations, .. }) => {
            put("separations", separations.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","))
        }
        _ => {}
    }
    m
}

fn with_timing(mut v: Value, cfg: &ExperimentConfig, start: std::time::Instant) -> Value {
    if cfg.record_timing {
        v["wall_clock_ms"] = json!(start.elapsed().as_secs_f64() * 1e3);
    }
    v
}

fn run(cmd: &Command) -> Result<(), RunError> {
    let start = std::time::Instant::now();
    let cfg = experiment_config(cmd);
    cfg.validate()?;
    let flags = resolved_flags(cmd, &cfg);
    let mut out = OutputDir::create(&cmd.common().out)?;
    let echo = json!(flags);

    match cmd {
        Command::Attack(_) => {
            let exp = run_attack_experiment(&cfg)?;
            let s = exp.summary(&cfg)?;
            out.write("attack.csv", &exp.report.to_csv())?;
            out.write("error_map.pgm", &exp.error_map.to_pgm())?;
            out.write("error_map.txt", &exp.error_map.sidecar())?;
            out.write("instability_map.pgm", &exp.instability_map.to_pgm())?;
            out.write("instability_map.txt", &exp.instability_map.sidecar())?;
            let summary = json!({
                "subcommand": "attack",
                "config": echo,
                "seed": cfg.seed,
                "mode": cfg.mode.as_str(),
                "n": s.n,
                "k": s.k,
                "mean_err_px": s.mean_err_px,
                "median_err_px": s.median_err_px,
                "count_below_30": s.count_below_30,
                "n_failed": s.n_failed,
                "boundary_instability_px": s.boundary_instability,
                "interior_instability_px": s.interior_instability,
            });
            out.write_json("summary.json", &with_timing(summary, &cfg, start))?;
        }
        Command::Localize(_) => {
            let rep = run_localization_experiment(&cfg)?;
            out.write("localization.csv", &rep.to_csv())?;
            let summary = json!({
                "subcommand": "localize",
                "config": echo,
                "seed": cfg.seed,
                "trials": rep.rows.len(),
                "n_ok": rep.n_ok,
                "median_dR_deg": rep.median_dr_deg,
                "median_dT": rep.median_dt,
                "median_dT_rel": rep.median_dt_rel,
                "recall_5pct_5deg": rep.recall,
                "recall_dT": rep.recall_dt,
                "recall_dR_deg": rep.recall_dr_deg,
            });
            out.write_json("summary.json", &with_timing(summary, &cfg, start))?;
        }
        Command::Degeneracy(DegeneracyArgs { samples, .. }) => {
            let s = run_degeneracy_stats(&cfg, *samples as usize)?;
            let summary = json!({
                "subcommand": "degeneracy",
                "config": echo,
                "seed": cfg.seed,
                "mode": cfg.mode.as_str(),
                "samples": s.samples,
                "degenerate_triples": s.degenerate,
                "triple_degenerate_rate": s.triple_degenerate_rate,
                "ci95_low": s.ci_low,
                "ci95_high": s.ci_high,
                "six_sample_single_anchor_rate": s.six_sample_single_anchor_rate,
                "same_anchor_triples": s.same_anchor_triples,
                "same_anchor_singular_fraction": s.same_anchor_singular_fraction,
            });
            out.write_json("summary.json", &with_timing(summary, &cfg, start))?;
        }
        Command::Ablate(AblateArgs { separations, .. }) => {
            let px: Vec<f64> = separations.iter().map(|s| s.resolve(cfg.height)).collect();
            let rep = run_anchor_ablation(&cfg, &px)?;
            out.write("ablation.csv", &rep.to_csv())?;
            let summary = json!({
                "subcommand": "ablate",
                "config": echo,
                "seed": cfg.seed,
                "rows": rep.rows,
                "monotone_nonimproving": rep.monotone_nonimproving,
            });
            out.write_json("summary.json", &with_timing(summary, &cfg, start))?;
        }
    }
    out.write_manifest(cmd.name(), &flags, cfg.seed)?;
    Ok(())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status.
fn execute(argv: Vec<OsString>) -> u8 {
    let argv = match args::expand_config(argv) {
        Ok(a) => a,
        Err(e @ args::ConfigFileError::Io(..)) => {
            eprintln!("error: {e}");
            return EXIT_IO;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // usage errors exit with 2, --help and --version with 0
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(execute(std::env::args_os().collect()))
}
