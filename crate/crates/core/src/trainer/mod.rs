//! Optimization of the hinge objective with Adam, annealed selection and
//! early stopping on validation recall.

mod adam;
mod checkpoint;
mod config;
mod objective;

use std::collections::BTreeSet;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{AdamState, BETA1, BETA2, EPS};
pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use config::{TrainConfig, GRAD_CHUNK};
pub use objective::{
    batch_gradients, build_loss, epoch_examples, epoch_rng, hinge_term, objective,
    objective_with_kinks, train_epoch, EpochStats, Example, LossSums, LossVars,
};

use crate::dataset::{expand_instances, PredictionInstance, Session, Task};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, ProxyRecommender};
use crate::parallel::Executor;
use crate::params::{ModelDims, ModelParams};

/// Prediction instances of `sessions` for `task`, flagging sessions of known
/// users.
pub fn task_instances(sessions: &[Session], task: Task, known: &BTreeSet<String>) -> Vec<PredictionInstance> {
    sessions
        .iter()
        .flat_map(|s| {
            let known_user = s.user_tag.as_ref().is_some_and(|u| known.contains(u));
            expand_instances(s, task).into_iter().map(move |mut i| {
                i.known_user = known_user;
                i
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TaskData {
    pub num_items: usize,
    pub train: Vec<PredictionInstance>,
    pub valid: Vec<PredictionInstance>,
}

impl TaskData {
    pub fn new(
        train: &[Session],
        valid: &[Session],
        num_items: usize,
        task: Task,
        known: &BTreeSet<String>,
    ) -> Self {
        TaskData {
            num_items,
            train: task_instances(train, task, known),
            valid: task_instances(valid, task, known),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestModel {
    pub params: ModelParams,
    pub epoch: usize,
    pub tau: f64,
    pub val_recall: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    pub next_epoch: usize,
    pub since_best: usize,
    pub best: Option<BestModel>,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub tau: f64,
    pub mean_loss: f64,
    pub mean_hinge: f64,
    pub reg_dist: f64,
    pub reg_orthog: f64,
    pub grad_norm: f64,
    pub val_recall_20: f64,
    pub improved: bool,
    pub wall_secs: f64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, num_items: usize, known_users: &BTreeSet<String>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dims = ModelDims {
            num_items,
            dim: cfg.dim,
            num_proxies: cfg.num_proxies,
            max_len: cfg.max_len,
        };
        let params = ModelParams::init(dims, known_users.iter().cloned(), &mut rng);
        let adam = AdamState::new(&params.set);
        TrainState {
            params,
            adam,
            next_epoch: 0,
            since_best: 0,
            best: None,
        }
    }

    pub fn finished(&self, cfg: &TrainConfig) -> bool {
        self.next_epoch >= cfg.epochs || self.since_best >= cfg.patience
    }

    /// Resumable snapshot: parameters, optimizer and loop counters.
    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let mut c = Checkpoint {
            meta: common_meta(cfg, "last"),
            params: self.params.clone(),
            adam: Some(self.adam.clone()),
        };
        c.meta.insert("next_epoch".into(), self.next_epoch.to_string());
        c.meta.insert("since_best".into(), self.since_best.to_string());
        c.meta.insert("tau".into(), cfg.temperature(self.next_epoch.saturating_sub(1)).to_string());
        c
    }

    pub fn from_checkpoints(last: Checkpoint, best: Option<Checkpoint>) -> Result<Self> {
        let adam = last
            .adam
            .clone()
            .ok_or_else(|| Error::Checkpoint("no optimizer state; cannot resume".into()))?;
        if !adam.matches(&last.params.set) {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        let best = best
            .map(|b| -> Result<BestModel> {
                Ok(BestModel {
                    epoch: b.meta_parse("epoch")?,
                    tau: b.meta_parse("tau")?,
                    val_recall: b.meta_parse("val_recall_20")?,
                    params: b.params,
                })
            })
            .transpose()?;
        Ok(TrainState {
            next_epoch: last.meta_parse("next_epoch")?,
            since_best: last.meta_parse("since_best")?,
            params: last.params,
            adam,
            best,
        })
    }
}

fn common_meta(cfg: &TrainConfig, kind: &str) -> std::collections::BTreeMap<String, String> {
    let mut m = std::collections::BTreeMap::new();
    m.insert("kind".into(), kind.into());
    m.insert("mode".into(), cfg.mode.to_string());
    m.insert("task".into(), cfg.task.to_string());
    m.insert(
        "config".into(),
        serde_json::to_string(cfg).expect("config serializes"),
    );
    m
}

impl BestModel {
    /// Inference checkpoint: parameters plus the temperature they were
    /// validated at, no optimizer state.
    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let mut meta = common_meta(cfg, "best");
        meta.insert("epoch".into(), self.epoch.to_string());
        meta.insert("tau".into(), self.tau.to_string());
        meta.insert("val_recall_20".into(), self.val_recall.to_string());
        Checkpoint {
            meta,
            params: self.params.clone(),
            adam: None,
        }
    }
}

/// Trains one epoch, scores R@20 on validation and updates the best model.
pub fn run_epoch(
    state: &mut TrainState,
    cfg: &TrainConfig,
    data: &TaskData,
    exec: &Executor,
) -> Result<EpochRecord> {
    if data.valid.is_empty() {
        return Err(Error::EmptyInput("validation split has no instances".into()));
    }
    let start = Instant::now();
    let epoch = state.next_epoch;
    let stats = train_epoch(&mut state.params, &mut state.adam, &data.train, cfg, epoch, exec)?;
    let scorer = ProxyRecommender {
        params: &state.params,
        tau: stats.tau,
        mode: cfg.mode,
    };
    let report = evaluate(&scorer, &data.valid, cfg.task, &[20], exec)?;
    let val = report.cells[0].recall;
    let improved = state.best.as_ref().is_none_or(|b| val > b.val_recall);
    if improved {
        state.best = Some(BestModel {
            params: state.params.clone(),
            epoch,
            tau: stats.tau,
            val_recall: val,
        });
        state.since_best = 0;
    } else {
        state.since_best += 1;
    }
    state.next_epoch += 1;
    Ok(EpochRecord {
        epoch,
        tau: stats.tau,
        mean_loss: stats.mean_loss,
        mean_hinge: stats.mean_hinge,
        reg_dist: stats.mean_reg_dist,
        reg_orthog: stats.mean_reg_orthog,
        grad_norm: stats.grad_norm,
        val_recall_20: val,
        improved,
        wall_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs epochs until the epoch budget or the patience runs out. `on_epoch`
/// sees the state after every epoch (for logging and checkpoints).
pub fn early_stop_loop<F>(
    mut state: TrainState,
    cfg: &TrainConfig,
    data: &TaskData,
    exec: &Executor,
    mut on_epoch: F,
) -> Result<TrainState>
where
    F: FnMut(&TrainState, &EpochRecord) -> Result<()>,
{
    cfg.validate()?;
    while !state.finished(cfg) {
        let rec = run_epoch(&mut state, cfg, data, exec)?;
        on_epoch(&state, &rec)?;
    }
    Ok(state)
}
