//! Run configuration: flat `key = value` files merged with command-line
//! flags (flag > file > default).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use raft_core::dataset::TaskHint;
use raft_core::forest::ForestConfig;
use raft_core::{AgentConfig, DistanceKind, EncoderKind, MetricKind, OperationSet, SearchConfig, SearchMode};

/// Every accepted key with its default, in echo order. `auto` and `none`
/// mark values resolved at run time or left unset.
pub const KEYS: &[(&str, &str)] = &[
    ("input", "none"),
    ("target", "none"),
    ("out", "none"),
    ("task", "auto"),
    ("impute_median", "false"),
    ("metric", "auto"),
    ("distance", "euclidean"),
    ("delta", "1"),
    ("bins", "auto"),
    ("encoder", "gae"),
    ("k", "8"),
    ("d", "4"),
    ("encoder_epochs", "20"),
    ("si_raw_count", "false"),
    ("gae_standardize", "true"),
    ("ops", "square,sqrt,log,+,-,*,/"),
    ("max_size", "auto"),
    ("cap", "64"),
    ("max_depth", "6"),
    ("episodes", "30"),
    ("steps", "15"),
    ("seed", "0"),
    ("gamma", "0.9"),
    ("beta", "0.01"),
    ("actor_lr", "0.001"),
    ("critic_lr", "0.001"),
    ("hidden", "64"),
    ("clip_norm", "5"),
    ("full_gradient_critic", "false"),
    ("n_trees", "10"),
    ("tree_depth", "8"),
    ("min_leaf", "2"),
    ("carry_features", "false"),
    ("skip_tail_on_unary", "false"),
    ("bench", "false"),
    ("checkpoint", "none"),
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    DuplicateKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Conflict(String),
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

/// Parse a flat config file. Blank lines and lines starting with `#` are
/// skipped.
pub fn parse_file(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        if !known(k) {
            return Err(ConfigError::UnknownKey(k.to_string()));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(ConfigError::DuplicateKey(k.to_string()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: PathBuf,
    pub target: String,
    pub out: PathBuf,
    pub task: TaskHint,
    pub impute_median: bool,
    pub checkpoint: Option<PathBuf>,
    pub search: SearchConfig,
    /// Effective settings in [`KEYS`] order.
    pub settings: Vec<(&'static str, String)>,
}

struct Lookup<'a> {
    merged: &'a BTreeMap<String, String>,
}

impl Lookup<'_> {
    fn raw(&self, key: &'static str) -> String {
        self.merged.get(key).cloned().unwrap_or_else(|| {
            KEYS.iter()
                .find(|(k, _)| *k == key)
                .map(|(_, d)| d.to_string())
                .expect("key listed in KEYS")
        })
    }

    fn parse<T: FromStr>(&self, key: &'static str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        v.parse().map_err(|e: T::Err| ConfigError::Value {
            key: key.to_string(),
            value: v.clone(),
            reason: e.to_string(),
        })
    }

    fn optional<T: FromStr>(&self, key: &'static str, sentinel: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        if self.raw(key) == sentinel {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    fn required(&self, key: &'static str) -> Result<String, ConfigError> {
        let v = self.raw(key);
        if v == "none" || v.is_empty() {
            Err(ConfigError::Missing(key))
        } else {
            Ok(v)
        }
    }
}

fn parse_task(v: &str) -> Result<TaskHint, ConfigError> {
    match v {
        "auto" => Ok(TaskHint::Auto),
        "clf" => Ok(TaskHint::Classification),
        "reg" => Ok(TaskHint::Regression),
        _ => Err(ConfigError::Value {
            key: "task".into(),
            value: v.into(),
            reason: "expected auto, clf or reg".into(),
        }),
    }
}

/// Overlay `flags` on `file` and build the run configuration.
pub fn resolve(
    file: &BTreeMap<String, String>,
    flags: &BTreeMap<String, String>,
) -> Result<RunConfig, ConfigError> {
    let mut merged = file.clone();
    for (k, v) in flags {
        if !known(k) {
            return Err(ConfigError::UnknownKey(k.clone()));
        }
        merged.insert(k.clone(), v.clone());
    }
    let l = Lookup { merged: &merged };

    let task = parse_task(&l.raw("task"))?;
    let metric: Option<MetricKind> = l.optional("metric", "auto")?;
    if let Some(m) = metric {
        let clash = matches!(
            (task, m.task()),
            (TaskHint::Classification, raft_core::TaskKind::Regression)
                | (TaskHint::Regression, raft_core::TaskKind::Classification)
        );
        if clash {
            return Err(ConfigError::Conflict(format!(
                "metric `{m}` does not fit task `{}`",
                l.raw("task")
            )));
        }
    }
    let ops_text = l.raw("ops");
    let ops = OperationSet::parse_list(&ops_text).map_err(|e| ConfigError::Value {
        key: "ops".into(),
        value: ops_text.clone(),
        reason: e.to_string(),
    })?;
    let bench: bool = l.parse("bench")?;
    let carry_features: bool = l.parse("carry_features")?;

    let search = SearchConfig {
        episodes: l.parse("episodes")?,
        steps: l.parse("steps")?,
        seed: l.parse("seed")?,
        mode: if bench { SearchMode::Random } else { SearchMode::Learned },
        distance: l.parse::<DistanceKind>("distance")?,
        delta: l.parse("delta")?,
        bins: l.optional("bins", "auto")?,
        encoder: l.parse::<EncoderKind>("encoder")?,
        k: l.parse("k")?,
        d: l.parse("d")?,
        encoder_epochs: l.parse("encoder_epochs")?,
        si_raw_count: l.parse("si_raw_count")?,
        gae_standardize: l.parse("gae_standardize")?,
        ops,
        max_size: l.optional("max_size", "auto")?,
        cap: l.parse("cap")?,
        max_depth: l.parse("max_depth")?,
        metric,
        forest: ForestConfig {
            n_trees: l.parse("n_trees")?,
            max_depth: l.parse("tree_depth")?,
            min_leaf: l.parse("min_leaf")?,
            ..ForestConfig::default()
        },
        agent: AgentConfig {
            gamma: l.parse("gamma")?,
            beta: l.parse("beta")?,
            actor_lr: l.parse("actor_lr")?,
            critic_lr: l.parse("critic_lr")?,
            hidden: l.parse("hidden")?,
            clip_norm: l.parse("clip_norm")?,
            full_gradient_critic: l.parse("full_gradient_critic")?,
        },
        carry_features,
        skip_tail_on_unary: l.parse("skip_tail_on_unary")?,
    };
    if search.forest.n_trees == 0 || search.forest.min_leaf == 0 {
        return Err(ConfigError::Conflict("n_trees and min_leaf must be at least 1".into()));
    }
    search
        .validate()
        .map_err(|e| ConfigError::Conflict(e.to_string()))?;

    let checkpoint = match l.raw("checkpoint").as_str() {
        "none" => None,
        p => Some(PathBuf::from(p)),
    };
    if bench && checkpoint.is_some() {
        return Err(ConfigError::Conflict("`bench` runs have no agents to checkpoint".into()));
    }
    let settings = KEYS.iter().map(|(k, _)| (*k, l.raw(k))).collect();
    Ok(RunConfig {
        input: PathBuf::from(l.required("input")?),
        target: l.required("target")?,
        out: PathBuf::from(l.required("out")?),
        task,
        impute_median: l.parse("impute_median")?,
        checkpoint,
        search,
        settings,
    })
}

impl RunConfig {
    /// Replace an `auto` setting with the value chosen at run time.
    pub fn record(&mut self, key: &str, value: impl ToString) {
        if let Some(s) = self.settings.iter_mut().find(|(k, _)| *k == key) {
            s.1 = value.to_string();
        }
    }

    /// The effective configuration as a loadable config file.
    pub fn echo(&self, seeds: &raft_core::SeedBlock) -> String {
        let mut out = String::new();
        for (k, v) in &self.settings {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = writeln!(
            out,
            "# derived seeds: split {} forest {} encoder {} head_agent {} op_agent {} tail_agent {} actions {}",
            seeds.split, seeds.forest, seeds.encoder, seeds.head_agent, seeds.op_agent, seeds.tail_agent, seeds.actions
        );
        out
    }
}
