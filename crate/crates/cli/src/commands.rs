//! The work behind each subcommand, callable without going through argv.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use proxyrec::combiner::ScoringMode;
use proxyrec::dataset::{
    flag_known_users, load_interactions, prepare, PreparedData, Session, SplitManifest, Task,
};
use proxyrec::evaluator::{evaluate, MetricCell, MetricsReport, ProxyRecommender};
use proxyrec::parallel::Executor;
use proxyrec::synthetic::{self, SyntheticConfig};
use proxyrec::trainer::{
    early_stop_loop, task_instances, BestModel, Checkpoint, EpochRecord, TaskData, TrainConfig,
    TrainState,
};
use proxyrec::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const RESOLVED_CONFIG: &str = "resolved_config.txt";
pub const KNOWN_USERS: &str = "known_users.txt";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const LAST_CKPT: &str = "last.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";

/// Generator stream reserved for picking known users, apart from the
/// streams used for initialization and epochs.
const KNOWN_USER_STREAM: u64 = 1 << 40;

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// load -> sessions -> filter -> split, written as a manifest in `out_dir`.
pub fn prepare_dataset(input: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<PreparedData> {
    let log = load_interactions(input, &cfg.column_spec())?;
    let data = prepare(&log, &cfg.filter, cfg.split_ratios)?;
    SplitManifest::write(out_dir, &data)?;
    write_file(&out_dir.join(RESOLVED_CONFIG), &cfg.to_text())?;
    Ok(data)
}

/// Seeded choice of known users among the training sessions.
pub fn known_users(train: &[Session], cfg: &TrainConfig) -> BTreeSet<String> {
    if cfg.known_user_ratio <= 0.0 {
        return BTreeSet::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(KNOWN_USER_STREAM);
    flag_known_users(train, cfg.known_user_ratio, cfg.min_user_sessions, &mut rng)
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from `last.ckpt` in the output directory.
    pub resume: bool,
    /// Stop after this many epochs in this invocation, leaving a resumable
    /// checkpoint behind.
    pub stop_after: Option<usize>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub known_users: BTreeSet<String>,
    pub records: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn best(&self) -> Option<&BestModel> {
        self.state.best.as_ref()
    }
}

/// Trains on a prepared manifest. Writes the resolved config, the known
/// users, a JSON-lines log and the last and best checkpoints to `out_dir`,
/// the checkpoints after every epoch.
pub fn train(data_dir: &Path, out_dir: &Path, cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = SplitManifest::read(data_dir)?;
    train_on(&data, out_dir, cfg, opts)
}

pub fn train_on(data: &PreparedData, out_dir: &Path, cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let tc = &cfg.train;
    create_dir(out_dir)?;
    let num_items = data.items.len();
    let (state, known) = if opts.resume {
        resume_state(out_dir, tc, num_items)?
    } else {
        let known = known_users(&data.split.train, tc);
        let mut list = String::new();
        for u in &known {
            let _ = writeln!(list, "{u}");
        }
        write_file(&out_dir.join(KNOWN_USERS), &list)?;
        write_file(&out_dir.join(TRAIN_LOG), "")?;
        (TrainState::new(tc, num_items, &known), known)
    };
    write_file(&out_dir.join(RESOLVED_CONFIG), &cfg.to_text())?;

    let task_data = TaskData::new(&data.split.train, &data.split.valid, num_items, tc.task, &known);
    let exec = Executor::with_threads(cfg.threads);
    let log_path = out_dir.join(TRAIN_LOG);
    let mut log = OpenOptions::new()
        .append(true)
        .create(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut records = Vec::new();
    let budget = opts.stop_after.map(|n| state.next_epoch + n);
    let mut limited = tc.clone();
    if let Some(b) = budget {
        limited.epochs = limited.epochs.min(b);
    }
    let state = early_stop_loop(state, &limited, &task_data, &exec, |st, rec| {
        st.to_checkpoint(tc).save(&out_dir.join(LAST_CKPT))?;
        if rec.improved {
            if let Some(b) = &st.best {
                b.to_checkpoint(tc).save(&out_dir.join(BEST_CKPT))?;
            }
        }
        let line = serde_json::to_string(rec).expect("record serializes");
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        records.push(rec.clone());
        Ok(())
    })?;
    Ok(TrainOutcome {
        state,
        known_users: known,
        records,
    })
}

fn resume_state(out_dir: &Path, cfg: &TrainConfig, num_items: usize) -> Result<(TrainState, BTreeSet<String>)> {
    let last = Checkpoint::load(&out_dir.join(LAST_CKPT))?;
    let want = serde_json::to_string(cfg).expect("config serializes");
    if last.meta_str("config")? != want {
        return Err(Error::Compatibility(
            "configuration differs from the interrupted run".into(),
        ));
    }
    if last.params.dims.num_items != num_items {
        return Err(Error::Compatibility(format!(
            "checkpoint has {} items, dataset has {num_items}",
            last.params.dims.num_items
        )));
    }
    let best_path = out_dir.join(BEST_CKPT);
    let best = if best_path.exists() {
        Some(Checkpoint::load(&best_path)?)
    } else {
        None
    };
    let known = last.params.users.keys().cloned().collect();
    Ok((TrainState::from_checkpoints(last, best)?, known))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Valid,
    Test,
}

impl FromStr for EvalSplit {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "valid" => Ok(EvalSplit::Valid),
            "test" => Ok(EvalSplit::Test),
            _ => Err(format!("unknown split {s:?} (valid|test)")),
        }
    }
}

impl EvalSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalSplit::Valid => "valid",
            EvalSplit::Test => "test",
        }
    }

    fn sessions(self, data: &PreparedData) -> &[Session] {
        match self {
            EvalSplit::Valid => &data.split.valid,
            EvalSplit::Test => &data.split.test,
        }
    }
}

/// Scores a checkpoint on a split of `data`, one report per task.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    data: &PreparedData,
    tasks: &[Task],
    split: EvalSplit,
    ks: &[usize],
    exec: &Executor,
) -> Result<Vec<MetricsReport>> {
    let num_items = data.items.len();
    if ckpt.params.dims.num_items != num_items {
        return Err(Error::Compatibility(format!(
            "checkpoint has {} items, dataset has {num_items}",
            ckpt.params.dims.num_items
        )));
    }
    let mode: ScoringMode = ckpt.meta_parse("mode")?;
    let tau: f64 = ckpt.meta_parse("tau")?;
    let known: BTreeSet<String> = ckpt.params.users.keys().cloned().collect();
    let scorer = ProxyRecommender {
        params: &ckpt.params,
        tau,
        mode,
    };
    tasks
        .iter()
        .map(|&task| {
            let insts = task_instances(split.sessions(data), task, &known);
            if insts.is_empty() {
                return Err(Error::EmptyInput(format!(
                    "{} split has no {task} instances",
                    split.as_str()
                )));
            }
            evaluate(&scorer, &insts, task, ks, exec)
        })
        .collect()
}

/// Writes `metrics_<split>_<task>.{json,txt}` for each report into `out_dir`.
pub fn write_reports(out_dir: &Path, split: EvalSplit, reports: &[MetricsReport]) -> Result<Vec<PathBuf>> {
    create_dir(out_dir)?;
    let mut written = Vec::new();
    for r in reports {
        let stem = format!("metrics_{}_{}", split.as_str(), r.task);
        let json = out_dir.join(format!("{stem}.json"));
        write_file(&json, &(r.to_json() + "\n"))?;
        let txt = out_dir.join(format!("{stem}.txt"));
        write_file(&txt, &r.to_table())?;
        written.push(json);
        written.push(txt);
    }
    Ok(written)
}

/// Rows of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    ProxyOnly,
    ShortOnly,
    NoProjection,
    WeightedComb,
    DotProduct,
    NoRegDist,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::ProxyOnly,
        Variant::ShortOnly,
        Variant::NoProjection,
        Variant::WeightedComb,
        Variant::DotProduct,
        Variant::NoRegDist,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::ProxyOnly => "proxy_only",
            Variant::ShortOnly => "short_only",
            Variant::NoProjection => "no_projection",
            Variant::WeightedComb => "weighted_comb",
            Variant::DotProduct => "dot_product",
            Variant::NoRegDist => "no_reg_dist",
        }
    }

    /// The base config with this variant's change applied.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Variant::Full => c.mode = ScoringMode::Full,
            Variant::ProxyOnly => c.mode = ScoringMode::ProxyOnly,
            Variant::ShortOnly => c.mode = ScoringMode::ShortOnly,
            Variant::NoProjection => c.mode = ScoringMode::NoProjection,
            Variant::DotProduct => c.mode = ScoringMode::DotProduct,
            Variant::WeightedComb => {
                c.mode = ScoringMode::Full;
                c.anneal_enabled = false;
            }
            Variant::NoRegDist => {
                c.mode = ScoringMode::Full;
                c.lambda_dist = 0.0;
            }
        }
        c
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub best_epoch: usize,
    pub cells: Vec<MetricCell>,
}

/// Trains every variant into `out_dir/<variant>` and scores its best
/// checkpoint on the test split.
pub fn ablate(data_dir: &Path, out_dir: &Path, cfg: &RunConfig, variants: &[Variant]) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let data = SplitManifest::read(data_dir)?;
    let exec = Executor::with_threads(cfg.threads);
    let mut rows = Vec::new();
    for &v in variants {
        let mut run = cfg.clone();
        run.train = v.apply(&cfg.train);
        let dir = out_dir.join(v.as_str());
        let out = train_on(&data, &dir, &run, &TrainOptions::default())?;
        let best = out
            .best()
            .ok_or_else(|| Error::EmptyInput("training ran no epochs".into()))?;
        let ckpt = best.to_checkpoint(&run.train);
        let report = evaluate_checkpoint(&ckpt, &data, &[run.train.task], EvalSplit::Test, &cfg.ks, &exec)?;
        rows.push(AblationRow {
            variant: v,
            best_epoch: best.epoch,
            cells: report.into_iter().next().expect("one task").cells,
        });
    }
    write_file(&out_dir.join("ablation.txt"), &ablation_table(&rows))?;
    let json = serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n";
    write_file(&out_dir.join("ablation.json"), &json)?;
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!("{:<15}", "variant");
    if let Some(r) = rows.first() {
        for c in &r.cells {
            let _ = write!(s, "{:>9}{:>9}", format!("R@{}", c.k), format!("M@{}", c.k));
        }
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{:<15}", r.variant.as_str());
        for c in &r.cells {
            let _ = write!(s, "{:>9.4}{:>9.4}", c.recall, c.mrr);
        }
        s.push('\n');
    }
    s
}

/// Writes a synthetic interaction log as `user \t item \t time` lines.
pub fn write_synthetic(path: &Path, cfg: &SyntheticConfig) -> Result<usize> {
    let sessions = synthetic::generate(cfg)?;
    let log = synthetic::interaction_log(cfg, &sessions);
    let mut out = String::new();
    for r in &log.records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            r.user_tag.as_deref().unwrap_or("-"),
            log.items.raw(r.item),
            r.timestamp
        );
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_file(path, &out)?;
    Ok(log.records.len())
}
