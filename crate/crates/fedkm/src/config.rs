//! Command-line flags, `key=value` config files and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, ValueEnum};
use fedkm_core::clustering::{DEFAULT_MAX_ITERS, DEFAULT_TOL};
use fedkm_core::eval::GaussianMixtureSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Train,
    Unlearn,
    Bench,
    Experiment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenMode {
    Weighted,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    /// Retrain frequency of single removals, random and adversarial.
    Retrain,
    /// Retrain frequency for batch sizes 1, 10 and 30.
    Batch,
    /// Loss ratio across a decade of grid steps around the default.
    Gamma,
}

/// `K:d:count:var`, e.g. `10:10:3000:0.5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianArg {
    pub k: usize,
    pub dim: usize,
    pub count: usize,
    pub variance: f64,
}

impl FromStr for GaussianArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 4 {
            return Err(format!("expected K:d:count:var, got {s:?}"));
        }
        let int = |i: usize| parts[i].parse::<usize>().map_err(|e| format!("{}: {e}", parts[i]));
        let variance: f64 = parts[3].parse().map_err(|e| format!("{}: {e}", parts[3]))?;
        Ok(Self { k: int(0)?, dim: int(1)?, count: int(2)?, variance })
    }
}

impl std::fmt::Display for GaussianArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}:{}", self.k, self.dim, self.count, self.variance)
    }
}

impl GaussianArg {
    pub fn spec(&self, seed: u64) -> GaussianMixtureSpec {
        GaussianMixtureSpec { k: self.k, dim: self.dim, count: self.count, variance: self.variance, seed }
    }
}

/// Grid step: a number or `auto` for `1/√n`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GammaArg {
    #[default]
    Auto,
    Step(f64),
}

impl FromStr for GammaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        let v: f64 = s.parse().map_err(|e| format!("{s}: {e}"))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(format!("grid step must be positive, got {s}"));
        }
        Ok(Self::Step(v))
    }
}

impl std::fmt::Display for GammaArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GammaArg::Auto => write!(f, "auto"),
            GammaArg::Step(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Parser)]
#[command(name = "fedkm", version, about = "Federated K-means clustering with exact unlearning")]
#[command(args_override_self = true)]
pub struct RunConfig {
    /// key=value file read before the flags; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "train")]
    pub command: Command,

    /// CSV input; mutually exclusive with --gaussian.
    #[arg(long, conflicts_with = "gaussian")]
    pub data: Option<PathBuf>,

    /// Treat the last CSV column as integer labels.
    #[arg(long)]
    pub labeled: bool,

    /// Generated Gaussian mixture, `K:d:count:var`.
    #[arg(long)]
    pub gaussian: Option<GaussianArg>,

    #[arg(long, default_value_t = 10)]
    pub clients: usize,

    #[arg(long, default_value_t = 10)]
    pub k: usize,

    /// Most true clusters per client; defaults to K.
    #[arg(long)]
    pub kprime: Option<usize>,

    #[arg(long, default_value_t = GammaArg::Auto)]
    pub gamma: GammaArg,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, overrides_with = "plaintext")]
    pub secure: bool,

    #[arg(long, overrides_with = "secure")]
    pub plaintext: bool,

    /// With --plaintext, merge centroids by bin before the server clusters.
    #[arg(long)]
    pub prequantize: bool,

    #[arg(long, value_enum, default_value = "uniform")]
    pub gen_mode: GenMode,

    /// Decrement cached counts on non-retrain removals.
    #[arg(long)]
    pub decrement_counts: bool,

    /// Number of removal requests to serve.
    #[arg(long, default_value_t = 0)]
    pub removals: usize,

    #[arg(long)]
    pub adversarial: bool,

    /// Points per removal request.
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,

    /// Replay requests from a CSV written by an earlier run.
    #[arg(long)]
    pub requests: Option<PathBuf>,

    #[arg(long, default_value = "out")]
    pub out: PathBuf,

    /// Start from a saved checkpoint instead of training.
    #[arg(long)]
    pub model: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub experiment: Option<ExperimentKind>,

    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,

    #[arg(long, default_value_t = 10)]
    pub reference_runs: usize,

    /// Points in the synthetic retrain-experiment instance.
    #[arg(long, default_value_t = 100)]
    pub instance_size: usize,

    /// Planted outliers in the synthetic retrain-experiment instance.
    #[arg(long, default_value_t = 5)]
    pub outliers: usize,

    /// Outlier distance from its group center, in group radii.
    #[arg(long, default_value_t = 10.0)]
    pub outlier_factor: f64,

    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    pub max_iters: usize,

    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,

    /// Worker threads; 0 uses all cores. Does not affect results.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,

    /// Timed repetitions per measurement (bench).
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,

    /// Discarded warm-up repetitions per measurement (bench).
    #[arg(long, default_value_t = 3)]
    pub warmups: usize,
}

/// Keys written to the manifest that are derived, not settable.
pub const DERIVED_PREFIX: &str = "derived.";

impl RunConfig {
    /// Parses flags, folding in `--config` entries ahead of them.
    pub fn from_args<I, T>(args: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let args: Vec<String> = args.into_iter().map(Into::into).collect();
        let first = Self::try_parse_from(&args)?;
        let Some(path) = &first.config else {
            return Ok(first);
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut merged = vec![args[0].clone()];
        merged.extend(file_args(&text).with_context(|| format!("in {}", path.display()))?);
        merged.extend(args[1..].iter().cloned());
        Ok(Self::try_parse_from(merged)?)
    }

    pub fn secure(&self) -> bool {
        !self.plaintext
    }

    pub fn kprime(&self) -> usize {
        self.kprime.unwrap_or(self.k)
    }

    /// Fully resolved `key=value` lines, in a fixed order. The output
    /// directory and worker count are left out since they do not affect
    /// results.
    pub fn manifest(&self, derived: &[(&str, String)]) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        put("command", value_name(self.command));
        if let Some(d) = &self.data {
            put("data", d.display().to_string());
        }
        if self.labeled {
            put("labeled", "true".into());
        }
        if let Some(g) = &self.gaussian {
            put("gaussian", g.to_string());
        }
        put("clients", self.clients.to_string());
        put("k", self.k.to_string());
        put("kprime", self.kprime().to_string());
        put("gamma", self.gamma.to_string());
        put("seed", self.seed.to_string());
        put(if self.secure() { "secure" } else { "plaintext" }, "true".into());
        if self.prequantize {
            put("prequantize", "true".into());
        }
        put("gen-mode", value_name(self.gen_mode));
        put("decrement-counts", self.decrement_counts.to_string());
        put("removals", self.removals.to_string());
        put("adversarial", self.adversarial.to_string());
        put("batch-size", self.batch_size.to_string());
        if let Some(m) = &self.model {
            put("model", m.display().to_string());
        }
        if let Some(r) = &self.requests {
            put("requests", r.display().to_string());
        }
        if let Some(e) = self.experiment {
            put("experiment", value_name(e));
        }
        put("trials", self.trials.to_string());
        put("reference-runs", self.reference_runs.to_string());
        put("instance-size", self.instance_size.to_string());
        put("outliers", self.outliers.to_string());
        put("outlier-factor", self.outlier_factor.to_string());
        put("max-iters", self.max_iters.to_string());
        put("tol", self.tol.to_string());
        put("repeats", self.repeats.to_string());
        put("warmups", self.warmups.to_string());
        for (k, v) in derived {
            put(&format!("{DERIVED_PREFIX}{k}"), v.clone());
        }
        out
    }
}

fn value_name<T: ValueEnum>(v: T) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_owned()
}

/// Turns `key=value` lines into flags. Blank lines, `#` comments and
/// derived keys are skipped; boolean `false` drops the flag.
pub fn file_args(text: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key=value", i + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.starts_with(DERIVED_PREFIX) {
            continue;
        }
        if key.is_empty() {
            bail!("line {}: empty key", i + 1);
        }
        if key == "config" {
            bail!("line {}: config files cannot nest", i + 1);
        }
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => {
                out.push(format!("--{key}"));
                out.push(value.to_owned());
            }
        }
    }
    Ok(out)
}

pub fn manifest_path(out: &Path) -> PathBuf {
    out.join("manifest.txt")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> RunConfig {
        let mut v = vec!["fedkm"];
        v.extend_from_slice(args);
        RunConfig::from_args(v).unwrap()
    }

    #[test]
    fn gaussian_and_gamma_args() {
        let g: GaussianArg = "10:10:3000:0.5".parse().unwrap();
        assert_eq!(g, GaussianArg { k: 10, dim: 10, count: 3000, variance: 0.5 });
        assert_eq!(g.to_string(), "10:10:3000:0.5");
        assert!("1:2:3".parse::<GaussianArg>().is_err());
        assert_eq!("auto".parse::<GammaArg>().unwrap(), GammaArg::Auto);
        assert_eq!("0.01".parse::<GammaArg>().unwrap(), GammaArg::Step(0.01));
        assert!("-1".parse::<GammaArg>().is_err());
    }

    #[test]
    fn transport_flags_override() {
        assert!(parse(&[]).secure());
        assert!(!parse(&["--plaintext"]).secure());
        assert!(parse(&["--plaintext", "--secure"]).secure());
    }

    #[test]
    fn file_entries_lose_to_flags() {
        let args = file_args("# comment\nk = 4\nsecure=true\nadversarial=false\nderived.modulus=13\n").unwrap();
        assert_eq!(args, ["--k", "4", "--secure"]);
        let mut v = vec!["fedkm".to_string()];
        v.extend(args);
        v.extend(["--k".to_string(), "7".to_string()]);
        let cfg = RunConfig::try_parse_from(v).unwrap();
        assert_eq!(cfg.k, 7);
        assert!(file_args("novalue\n").is_err());
    }

    #[test]
    fn manifest_round_trips() {
        let cfg = parse(&["--gaussian", "3:2:50:0.1", "--k", "3", "--clients", "4", "--plaintext", "--gamma", "0.05"]);
        let text = cfg.manifest(&[("total_bins", "441".into())]);
        assert!(text.contains("derived.total_bins=441\n"));
        let mut v = vec!["fedkm".to_string()];
        v.extend(file_args(&text).unwrap());
        let again = RunConfig::try_parse_from(v).unwrap();
        assert_eq!(again.manifest(&[("total_bins", "441".into())]), text);
        assert_eq!(again.kprime, Some(3));
    }
}
