//! Run configuration: defaults, a flat `key=value` file and command-line
//! flags, applied in that order.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use hire_core::data::Scenario;
use hire_core::eval::EvalConfig;
use hire_core::sampler::SamplerKind;
use hire_core::train::{ConvergenceRule, OptimizerConfig, TrainConfig};
use hire_core::ModelConfig;

/// A problem with the configuration; the process exits with status 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Every setting, as flags. Unset flags fall back to the config file and
/// then to the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Settings {
    /// Flat `key=value` file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset: a MovieLens directory or a rating CSV file.
    #[arg(long, global = true)]
    pub data: Option<String>,
    /// Dataset format: movielens or csv.
    #[arg(long, global = true)]
    pub format: Option<String>,
    /// Cold-start scenario: uc, ic, uic or warm.
    #[arg(long, global = true)]
    pub scenario: Option<String>,
    /// Users per context.
    #[arg(long, global = true)]
    pub n: Option<String>,
    /// Items per context.
    #[arg(long, global = true)]
    pub m: Option<String>,
    /// Number of attention blocks.
    #[arg(long, global = true)]
    pub blocks: Option<String>,
    /// Heads of the user and item attention layers.
    #[arg(long, global = true)]
    pub heads: Option<String>,
    /// Width of each head.
    #[arg(long, global = true)]
    pub head_dim: Option<String>,
    /// Width of each attribute embedding.
    #[arg(long, global = true)]
    pub feat_dim: Option<String>,
    /// Add each layer's input to its output (true or false).
    #[arg(long, global = true)]
    pub residual: Option<String>,
    /// Probability that a known rating is revealed as support.
    #[arg(long, global = true)]
    pub support: Option<String>,
    /// Base learning rate.
    #[arg(long, global = true)]
    pub lr: Option<String>,
    /// Training step budget.
    #[arg(long, global = true)]
    pub steps: Option<String>,
    /// Contexts per step.
    #[arg(long, global = true)]
    pub batch: Option<String>,
    /// Stop early once the windowed loss stops changing (true or false).
    #[arg(long, global = true)]
    pub convergence: Option<String>,
    /// Seed for splitting, sampling and initialisation.
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub workers: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// Context sampler: neighborhood, random or featsim.
    #[arg(long, global = true)]
    pub sampler: Option<String>,
    /// Model checkpoint to evaluate or inspect.
    #[arg(long, global = true)]
    pub checkpoint: Option<String>,
    /// Also score the popularity baseline.
    #[arg(long, global = true)]
    pub with_baseline: bool,
    /// Number of test contexts.
    #[arg(long, global = true)]
    pub contexts: Option<String>,
    /// Comma-separated cutoffs for the ranking metrics.
    #[arg(long, global = true)]
    pub ks: Option<String>,
    /// Attention layers to dump, comma separated from mbu, mbi and mba.
    #[arg(long, global = true)]
    pub layers: Option<String>,
}

const DEFAULTS: [(&str, &str); 22] = [
    ("data", ""),
    ("format", "movielens"),
    ("scenario", "uc"),
    ("n", "32"),
    ("m", "32"),
    ("blocks", "3"),
    ("heads", "8"),
    ("head-dim", "16"),
    ("feat-dim", "16"),
    ("residual", "true"),
    ("support", "0.1"),
    ("lr", "0.001"),
    ("steps", "3000"),
    ("batch", "4"),
    ("convergence", "true"),
    ("seed", "0"),
    ("workers", "0"),
    ("out", "hire-out"),
    ("sampler", "neighborhood"),
    ("checkpoint", ""),
    ("with-baseline", "false"),
    ("contexts", "100"),
];

const EXTRA: [(&str, &str); 2] = [("ks", "5,7,10"), ("layers", "mbu,mbi,mba")];

impl Settings {
    fn given(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |k: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((k, v.clone()));
            }
        };
        put("data", &self.data);
        put("format", &self.format);
        put("scenario", &self.scenario);
        put("n", &self.n);
        put("m", &self.m);
        put("blocks", &self.blocks);
        put("heads", &self.heads);
        put("head-dim", &self.head_dim);
        put("feat-dim", &self.feat_dim);
        put("residual", &self.residual);
        put("support", &self.support);
        put("lr", &self.lr);
        put("steps", &self.steps);
        put("batch", &self.batch);
        put("convergence", &self.convergence);
        put("seed", &self.seed);
        put("workers", &self.workers);
        put("out", &self.out);
        put("sampler", &self.sampler);
        put("checkpoint", &self.checkpoint);
        put("contexts", &self.contexts);
        put("ks", &self.ks);
        put("layers", &self.layers);
        if self.with_baseline {
            out.push(("with-baseline", "true".into()));
        }
        out
    }
}

fn known_key(k: &str) -> Option<&'static str> {
    DEFAULTS.iter().chain(EXTRA.iter()).map(|(d, _)| *d).find(|d| *d == k.replace('_', "-"))
}

/// Reads a `key=value` file. Blank lines and lines starting with `#` are
/// skipped; keys may use `-` or `_`.
pub fn read_config_file(path: &Path) -> anyhow::Result<BTreeMap<&'static str, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("{}:{}: expected key=value", path.display(), k + 1)))?;
        let key = known_key(key.trim()).ok_or_else(|| bad(format!("{}:{}: unknown key `{}`", path.display(), k + 1, key.trim())))?;
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    MovieLens,
    Csv,
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub format: Format,
    pub scenario: Scenario,
    pub n: usize,
    pub m: usize,
    pub model: ModelConfig,
    pub support: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub convergence: bool,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub sampler: SamplerKind,
    pub checkpoint: Option<PathBuf>,
    pub with_baseline: bool,
    pub contexts: usize,
    pub ks: Vec<usize>,
    pub layers: Vec<String>,
    /// The resolved values, by key.
    pub values: BTreeMap<&'static str, String>,
}

fn parse<T: FromStr>(values: &BTreeMap<&'static str, String>, key: &str) -> anyhow::Result<T>
where
    T::Err: fmt::Display,
{
    let raw = &values[key];
    raw.parse().map_err(|e| bad(format!("invalid {key} `{raw}`: {e}")))
}

fn optional_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Defaults, overridden by the file named in `--config`, overridden by
    /// flags.
    pub fn resolve(s: &Settings) -> anyhow::Result<Self> {
        let mut values: BTreeMap<&'static str, String> =
            DEFAULTS.iter().chain(EXTRA.iter()).map(|(k, v)| (*k, v.to_string())).collect();
        if let Some(path) = &s.config {
            values.extend(read_config_file(path)?);
        }
        values.extend(s.given());
        Self::from_values(values)
    }

    pub fn from_values(values: BTreeMap<&'static str, String>) -> anyhow::Result<Self> {
        let format = match values["format"].to_ascii_lowercase().as_str() {
            "movielens" => Format::MovieLens,
            "csv" => Format::Csv,
            other => return Err(bad(format!("unknown format `{other}` (expected movielens or csv)"))),
        };
        let feat_dim: usize = parse(&values, "feat-dim")?;
        let (mba_heads, mba_head_dim) = ModelConfig::mba_geometry(feat_dim);
        let model = ModelConfig {
            feat_dim,
            blocks: parse(&values, "blocks")?,
            heads: parse(&values, "heads")?,
            head_dim: parse(&values, "head-dim")?,
            mba_heads,
            mba_head_dim,
            residual: parse(&values, "residual")?,
        };
        model.validate().map_err(|e| bad(e.to_string()))?;
        let ks = values["ks"]
            .split(',')
            .map(|k| k.trim().parse::<usize>().ok().filter(|&k| k > 0))
            .collect::<Option<Vec<_>>>()
            .filter(|ks| !ks.is_empty())
            .ok_or_else(|| bad(format!("invalid ks `{}`", values["ks"])))?;
        let layers: Vec<String> = values["layers"].split(',').map(|l| l.trim().to_ascii_lowercase()).collect();
        if let Some(l) = layers.iter().find(|l| !hire_core::model::LAYER_NAMES.contains(&l.as_str())) {
            return Err(bad(format!("unknown attention layer `{l}` (expected mbu, mbi or mba)")));
        }
        let cfg = RunConfig {
            data: optional_path(&values["data"]),
            format,
            scenario: parse(&values, "scenario")?,
            n: parse(&values, "n")?,
            m: parse(&values, "m")?,
            model,
            support: parse(&values, "support")?,
            lr: parse(&values, "lr")?,
            steps: parse(&values, "steps")?,
            batch: parse(&values, "batch")?,
            convergence: parse(&values, "convergence")?,
            seed: parse(&values, "seed")?,
            workers: parse(&values, "workers")?,
            out: PathBuf::from(&values["out"]),
            sampler: parse(&values, "sampler")?,
            checkpoint: optional_path(&values["checkpoint"]),
            with_baseline: parse(&values, "with-baseline")?,
            contexts: parse(&values, "contexts")?,
            ks,
            layers,
            values,
        };
        if cfg.n == 0 || cfg.m == 0 {
            return Err(bad("context budget n and m must be at least 1"));
        }
        if !(0.0..=1.0).contains(&cfg.support) {
            return Err(bad("support probability must lie in [0, 1]"));
        }
        if cfg.contexts == 0 {
            return Err(bad("contexts must be at least 1"));
        }
        cfg.train_config().validate().map_err(|e| bad(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            opt: OptimizerConfig {
                base_lr: self.lr,
                ..OptimizerConfig::default()
            },
            total_steps: self.steps,
            batch_size: self.batch,
            seed: self.seed,
            convergence: self.convergence.then(ConvergenceRule::default),
            ..TrainConfig::default()
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            ks: self.ks.clone(),
            n_contexts: self.contexts,
            seed: self.seed,
            n: self.n,
            m: self.m,
            p_support: self.support,
            threshold: None,
            sampler: self.sampler,
        }
    }

    /// The resolved settings as a config file that reproduces this run.
    pub fn snapshot(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        for (k, v) in &self.values {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}
