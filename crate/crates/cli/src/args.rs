use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dcl_core::bench::LiftMode;
use dcl_core::obfuscate::Orientation;

#[derive(Debug, Parser)]
#[command(name = "dcl", version, about = "Dual convergent line obfuscation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Geometry-recovery attack on uniform keypoints.
    #[command(args_override_self = true)]
    Attack(AttackArgs),
    /// Localization accuracy over synthetic queries.
    #[command(args_override_self = true)]
    Localize(LocalizeArgs),
    /// Frequency of degenerate minimal samples.
    #[command(args_override_self = true)]
    Degeneracy(DegeneracyArgs),
    /// Localization accuracy as a function of anchor separation.
    #[command(args_override_self = true)]
    Ablate(AblateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Attack(_) => "attack",
            Command::Localize(_) => "localize",
            Command::Degeneracy(_) => "degeneracy",
            Command::Ablate(_) => "ablate",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Attack(a) => &a.common,
            Command::Localize(a) => &a.common,
            Command::Degeneracy(a) => &a.common,
            Command::Ablate(a) => &a.common,
        }
    }
}

pub const SUBCOMMANDS: [&str; 4] = ["attack", "localize", "degeneracy", "ablate"];

/// Anchor separation: a multiple of the image height or raw pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Separation {
    Heights(f64),
    Pixels(f64),
}

impl Separation {
    pub fn resolve(self, height: f64) -> f64 {
        match self {
            Separation::Heights(m) => m * height,
            Separation::Pixels(p) => p,
        }
    }
}

impl std::fmt::Display for Separation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Separation::Heights(m) if *m == 1.0 => write!(f, "H"),
            Separation::Heights(m) => write!(f, "{m}H"),
            Separation::Pixels(p) => write!(f, "{p}"),
        }
    }
}

pub fn parse_separation(s: &str) -> Result<Separation, String> {
    let t = s.trim();
    let positive = |x: f64| x.is_finite() && x > 0.0;
    if let Some(m) = t.strip_suffix(['H', 'h']) {
        let m = if m.is_empty() {
            1.0
        } else {
            m.parse::<f64>().map_err(|_| format!("bad separation token `{s}`"))?
        };
        return if positive(m) {
            Ok(Separation::Heights(m))
        } else {
            Err(format!("separation must be positive: `{s}`"))
        };
    }
    match t.parse::<f64>() {
        Ok(p) if positive(p) => Ok(Separation::Pixels(p)),
        _ => Err(format!("bad separation token `{s}` (expected H, 2H, 3H, <x>H or pixels)")),
    }
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("not a number: `{s}`"))?;
    if (0.0..1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("must lie in [0, 1): `{s}`"))
    }
}

fn parse_nonneg(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("not a number: `{s}`"))?;
    if x.is_finite() && x >= 0.0 {
        Ok(x)
    } else {
        Err(format!("must be non-negative: `{s}`"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("not a number: `{s}`"))?;
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(format!("must be positive: `{s}`"))
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Random seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Image width in pixels.
    #[arg(long, default_value_t = 640.0, value_parser = parse_positive)]
    pub width: f64,
    /// Image height in pixels.
    #[arg(long, default_value_t = 480.0, value_parser = parse_positive)]
    pub height: f64,
    /// Lifting mode: dcl or random.
    #[arg(long, default_value = "dcl")]
    pub mode: LiftMode,
    /// Anchor separation: H, 2H, 3H, <x>H (multiples of --height) or pixels.
    #[arg(long, default_value = "H", value_parser = parse_separation)]
    pub separation: Separation,
    /// Partition orientation: vertical or horizontal.
    #[arg(long, default_value = "vertical")]
    pub orientation: Orientation,
    /// Neighbors per target in the attack.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// Keypoints per image [default: 1500 for attack and degeneracy, 100 for localize and ablate].
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of queries [default: 100, 200 for ablate].
    #[arg(long)]
    pub trials: Option<usize>,
    /// Keypoint noise standard deviation in pixels.
    #[arg(long, default_value_t = 0.0, value_parser = parse_nonneg)]
    pub noise: f64,
    /// Fraction of correspondences re-paired with a wrong 3D point.
    #[arg(long, default_value_t = 0.0, value_parser = parse_fraction)]
    pub outliers: f64,
    /// RANSAC point threshold in pixels (lines use eps-pt / sqrt 2).
    #[arg(long = "eps-pt", default_value_t = 4.0, value_parser = parse_positive)]
    pub eps_pt: f64,
    /// Focal length in pixels; the principal point is the image center.
    #[arg(long, default_value_t = 500.0, value_parser = parse_positive)]
    pub focal: f64,
    /// Record wall-clock times in the CSV and JSON outputs (breaks byte-for-byte reproducibility).
    #[arg(long = "record-timing")]
    pub record_timing: bool,
    /// Flat key=value file with flag defaults; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct DegeneracyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of sampled triples (and six-samples).
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: u64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated anchor separations.
    #[arg(long, default_value = "H,2H,3H", value_delimiter = ',', value_parser = parse_separation)]
    pub separations: Vec<Separation>,
}

#[derive(Debug)]
pub enum ConfigFileError {
    Io(PathBuf, std::io::Error),
    Syntax(PathBuf, usize, String),
}

impl std::fmt::Display for ConfigFileError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigFileError::Io(p, e) => write!(f, "cannot read config {}: {e}", p.display()),
            ConfigFileError::Syntax(p, line, msg) => write!(f, "{}:{line}: {msg}", p.display()),
        }
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
/// Keys may use `-` or `_`.
pub fn parse_config(text: &str, path: &Path) -> Result<Vec<(String, String)>, ConfigFileError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigFileError::Syntax(path.to_path_buf(), i + 1, format!("expected key=value, got `{line}`")))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(ConfigFileError::Syntax(path.to_path_buf(), i + 1, format!("invalid key `{}`", k.trim())));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Inserts the config file's entries as flags right after the subcommand, so
/// that flags given on the command line (parsed later) override them.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, ConfigFileError> {
    let Some(path) = config_path(&args) else { return Ok(args) };
    let text = std::fs::read_to_string(&path).map_err(|e| ConfigFileError::Io(path.clone(), e))?;
    let entries = parse_config(&text, &path)?;
    let Some(pos) = args.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref())) else {
        return Ok(args);
    };
    let mut injected = Vec::new();
    for (k, v) in entries {
        if k == "record-timing" {
            match v.as_str() {
                "true" | "1" | "yes" => injected.push(OsString::from("--record-timing")),
                "false" | "0" | "no" => {}
                _ => return Err(ConfigFileError::Syntax(path, 0, format!("record-timing expects a boolean, got `{v}`"))),
            }
            continue;
        }
        injected.push(OsString::from(format!("--{k}")));
        injected.push(OsString::from(v));
    }
    let mut out = args[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separation_tokens() {
        assert_eq!(parse_separation("H"), Ok(Separation::Heights(1.0)));
        assert_eq!(parse_separation("3H"), Ok(Separation::Heights(3.0)));
        assert_eq!(parse_separation("1.5H"), Ok(Separation::Heights(1.5)));
        assert_eq!(parse_separation("300"), Ok(Separation::Pixels(300.0)));
        assert!(parse_separation("3X").is_err());
        assert!(parse_separation("-2H").is_err());
        assert!(parse_separation("0").is_err());
        assert_eq!(parse_separation("2H").unwrap().resolve(480.0), 960.0);
        assert_eq!(Separation::Heights(2.0).to_string(), "2H");
    }

    #[test]
    fn config_parsing() {
        let p = Path::new("c.cfg");
        let e = parse_config("# c\nseed = 7\n\neps_pt=2.5\n", p).unwrap();
        assert_eq!(e, vec![("seed".into(), "7".into()), ("eps-pt".into(), "2.5".into())]);
        assert!(parse_config("seed 7", p).is_err());
        assert!(parse_config("config=x", p).is_err());
    }

    #[test]
    fn explicit_flags_come_after_config_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "seed=7\nnoise=0.5\nrecord_timing=false\n").unwrap();
        let args: Vec<OsString> = ["dcl", "localize", "--config", path.to_str().unwrap(), "--seed", "9", "--out", "x"]
            .iter()
            .map(OsString::from)
            .collect();
        let expanded = expand_config(args).unwrap();
        let cli = Cli::try_parse_from(expanded).unwrap();
        let c = cli.command.common().clone();
        assert_eq!(c.seed, 9);
        assert_eq!(c.noise, 0.5);
        assert!(!c.record_timing);
    }
}
