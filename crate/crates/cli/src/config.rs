//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be one
//! of [`RunConfig::KEYS`]; unknown keys and bad values are collected and
//! reported together.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use proxyrec::combiner::ScoringMode;
use proxyrec::dataset::{ColumnSpec, FilterConfig, Overlong, Task};
use proxyrec::proxy_selector::AnnealSchedule;
use proxyrec::trainer::TrainConfig;
use proxyrec::{Error, Result};

pub const ENV_THREADS: &str = "PROXYREC_THREADS";
pub const ENV_SEED: &str = "PROXYREC_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub format: String,
    pub filter: FilterConfig,
    pub split_ratios: (u32, u32, u32),
    pub train: TrainConfig,
    pub threads: usize,
    pub ks: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format: "tsv:user=0,item=1,time=2".into(),
            filter: FilterConfig::default(),
            split_ratios: (8, 1, 1),
            train: TrainConfig::default(),
            threads: 1,
            ks: vec![5, 10, 20],
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse()
        .map_err(|_| format!("{key}: cannot parse {v:?}"))
}

fn parse_bool(key: &str, v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("{key}: expected true/false, got {v:?}")),
    }
}

fn parse_ratios(v: &str) -> std::result::Result<(u32, u32, u32), String> {
    let parts: Vec<&str> = v.split(':').collect();
    let nums: Vec<u32> = parts
        .iter()
        .map(|p| p.trim().parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format!("split_ratios: cannot parse {v:?}"))?;
    match nums[..] {
        [a, b, c] if a > 0 && b > 0 && c > 0 => Ok((a, b, c)),
        _ => Err(format!("split_ratios: need three positive parts like 8:1:1, got {v:?}")),
    }
}

pub fn parse_ks(v: &str) -> std::result::Result<Vec<usize>, String> {
    let ks: Vec<usize> = v
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format!("ks: cannot parse {v:?}"))?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(format!("ks: need positive cutoffs, got {v:?}"));
    }
    Ok(ks)
}

impl RunConfig {
    pub const KEYS: [&'static str; 29] = [
        "format",
        "min_item_count",
        "min_session_len",
        "max_session_len",
        "split_by_day",
        "overlong",
        "split_ratios",
        "learning_rate",
        "batch_size",
        "epochs",
        "negatives",
        "margin",
        "lambda_dist",
        "lambda_orthog",
        "num_proxies",
        "dim",
        "max_len",
        "anneal_initial",
        "anneal_final",
        "anneal_epochs",
        "anneal_enabled",
        "seed",
        "mode",
        "task",
        "patience",
        "known_user_ratio",
        "min_user_sessions",
        "threads",
        "ks",
    ];

    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let v = v.trim();
        let t = &mut self.train;
        match key {
            "format" => {
                ColumnSpec::from_str(v).map_err(|e| format!("format: {e}"))?;
                self.format = v.to_string();
            }
            "min_item_count" => self.filter.min_item_count = parse(key, v)?,
            "min_session_len" => self.filter.min_session_len = parse(key, v)?,
            "max_session_len" => self.filter.max_session_len = parse(key, v)?,
            "split_by_day" => self.filter.split_by_day = parse_bool(key, v)?,
            "overlong" => self.filter.overlong = Overlong::from_str(v)?,
            "split_ratios" => self.split_ratios = parse_ratios(v)?,
            "learning_rate" => t.learning_rate = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "negatives" => t.negatives = parse(key, v)?,
            "margin" => t.margin = parse(key, v)?,
            "lambda_dist" => t.lambda_dist = parse(key, v)?,
            "lambda_orthog" => t.lambda_orthog = parse(key, v)?,
            "num_proxies" => t.num_proxies = parse(key, v)?,
            "dim" => t.dim = parse(key, v)?,
            "max_len" => t.max_len = parse(key, v)?,
            "anneal_initial" => t.anneal.initial = parse(key, v)?,
            "anneal_final" => t.anneal.final_temp = parse(key, v)?,
            "anneal_epochs" => t.anneal.epochs = parse(key, v)?,
            "anneal_enabled" => t.anneal_enabled = parse_bool(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "mode" => t.mode = ScoringMode::from_str(v)?,
            "task" => t.task = Task::from_str(v)?,
            "patience" => t.patience = parse(key, v)?,
            "known_user_ratio" => t.known_user_ratio = parse(key, v)?,
            "min_user_sessions" => t.min_user_sessions = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "ks" => self.ks = parse_ks(v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Current value of every key, in [`RunConfig::KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let f = &self.filter;
        let AnnealSchedule {
            initial,
            final_temp,
            epochs: anneal_epochs,
        } = t.anneal;
        let (a, b, c) = self.split_ratios;
        let overlong = match f.overlong {
            Overlong::Truncate => "truncate",
            Overlong::Drop => "drop",
        };
        let values = [
            self.format.clone(),
            f.min_item_count.to_string(),
            f.min_session_len.to_string(),
            f.max_session_len.to_string(),
            f.split_by_day.to_string(),
            overlong.to_string(),
            format!("{a}:{b}:{c}"),
            t.learning_rate.to_string(),
            t.batch_size.to_string(),
            t.epochs.to_string(),
            t.negatives.to_string(),
            t.margin.to_string(),
            t.lambda_dist.to_string(),
            t.lambda_orthog.to_string(),
            t.num_proxies.to_string(),
            t.dim.to_string(),
            t.max_len.to_string(),
            initial.to_string(),
            final_temp.to_string(),
            anneal_epochs.to_string(),
            t.anneal_enabled.to_string(),
            t.seed.to_string(),
            t.mode.to_string(),
            t.task.to_string(),
            t.patience.to_string(),
            t.known_user_ratio.to_string(),
            t.min_user_sessions.to_string(),
            self.threads.to_string(),
            self.ks
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        ];
        Self::KEYS.into_iter().zip(values).collect()
    }

    /// Applies `key = value` lines; `origin` prefixes error messages.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut errs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = self.set(k.trim(), v) {
                        errs.push(format!("{origin}:{}: {e}", i + 1));
                    }
                }
                None => errs.push(format!("{origin}:{}: expected key = value", i + 1)),
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// `key=value` overrides from the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, pairs: &[S]) -> Result<()> {
        let mut errs = Vec::new();
        for p in pairs {
            let p = p.as_ref();
            match p.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = self.set(k.trim(), v) {
                        errs.push(format!("--set {p}: {e}"));
                    }
                }
                None => errs.push(format!("--set {p}: expected key=value")),
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Applies `PROXYREC_THREADS` and `PROXYREC_SEED` from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        let mut errs = Vec::new();
        for (var, key) in [(ENV_THREADS, "threads"), (ENV_SEED, "seed")] {
            if let Some(v) = lookup(var) {
                if let Err(e) = self.set(key, &v) {
                    errs.push(format!("{var}: {e}"));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn column_spec(&self) -> ColumnSpec {
        self.format.parse().expect("validated on set")
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = match self.train.validate() {
            Ok(()) => Vec::new(),
            Err(Error::Config(v)) => v,
            Err(e) => vec![e.to_string()],
        };
        if self.filter.min_session_len < 2 {
            errs.push("min_session_len must be >= 2".into());
        }
        if self.filter.max_session_len > self.train.max_len {
            errs.push(format!(
                "max_session_len {} exceeds the model's max_len {}",
                self.filter.max_session_len, self.train.max_len
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// The resolved configuration in the same format it is read in.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
