use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::config::{TrainConfig, GRAD_CHUNK};
use crate::autodiff::{Graph, Gradients, Tensor, Var};
use crate::combiner::{build_normal, build_scores, ScoringMode, SessionVars};
use crate::dataset::{sample_negatives, ItemId, PredictionInstance};
use crate::error::{Error, Result};
use crate::parallel::Executor;
use crate::params::ModelParams;
use crate::proxy_selector::{build_proxy, selection_items, user_row, Phase, TRAIN_EPS};
use crate::short_term_encoder::build_encoder;

/// `max(m + d_pos - d_neg, 0)`.
pub fn hinge_term(dist_pos: f64, dist_neg: f64, margin: f64) -> f64 {
    (margin + dist_pos - dist_neg).max(0.0)
}

/// A training instance with its negatives already drawn.
#[derive(Clone, Debug)]
pub struct Example {
    pub inst: PredictionInstance,
    pub negatives: Vec<ItemId>,
}

/// Loss nodes for one instance. The regularizer nodes are unweighted.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub hinge: Var,
    pub reg_dist: Var,
    pub reg_orthog: Var,
}

/// Summed loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSums {
    pub total: f64,
    pub hinge: f64,
    pub reg_dist: f64,
    pub reg_orthog: f64,
}

impl LossSums {
    fn add(&mut self, o: &LossSums) {
        self.total += o.total;
        self.hinge += o.hinge;
        self.reg_dist += o.reg_dist;
        self.reg_orthog += o.reg_orthog;
    }
}

/// Hinge over the negatives, the distance to the positive, and
/// `|v . p| / |p|`, with selection over the whole parent session.
pub fn build_loss(
    g: &mut Graph,
    params: &ModelParams,
    ex: &Example,
    tau: f64,
    cfg: &TrainConfig,
) -> Result<LossVars> {
    let mode = cfg.mode;
    let inst = &ex.inst;
    let mut rep = SessionVars {
        p: None,
        s: None,
        v: None,
    };
    if mode.uses_proxy() {
        let items = selection_items(inst, Phase::Train);
        let pv = build_proxy(g, params, items, user_row(params, inst), tau, Phase::Train)?;
        rep.p = Some(pv.p);
        if mode.projects() {
            rep.v = Some(build_normal(g, params, pv.pi, Phase::Train)?);
        }
    }
    if mode.uses_short_term() {
        rep.s = Some(build_encoder(g, params, inst.prefix())?.output);
    }

    let mut rows = Vec::with_capacity(1 + ex.negatives.len());
    rows.push(inst.target().index());
    rows.extend(ex.negatives.iter().map(|n| n.index()));
    let n_neg = ex.negatives.len();
    let candidates = g.gather(params.ids.items, rows)?;
    let scores = build_scores(g, rep, candidates, mode)?;
    let pos = g.select_row(scores, 0)?;
    let negs = g.slice_rows(scores, 1, 1 + n_neg)?;
    let neg = g.scale(negs, -1.0);
    let gap = g.add_scalar(neg, pos)?;
    let gap = g.add_const(gap, cfg.margin);
    let hinge = g.relu(gap);
    let hinge = g.sum(hinge);

    let reg_dist = if mode == ScoringMode::DotProduct {
        let positive = g.slice_rows(candidates, 0, 1)?;
        build_scores(g, rep, positive, ScoringMode::Full)?
    } else {
        pos
    };
    let reg_orthog = match (rep.p, rep.v) {
        (Some(p), Some(v)) => {
            let c = g.inner(v, p)?;
            let c = g.abs(c);
            let n = g.l2_norm(p);
            let n = g.add_const(n, TRAIN_EPS);
            g.div_scalar(c, n)?
        }
        _ => g.input(Tensor::scalar(0.0)),
    };
    let wd = g.scale(reg_dist, cfg.lambda_dist);
    let wo = g.scale(reg_orthog, cfg.lambda_orthog);
    let total = g.add(hinge, wd)?;
    let total = g.add(total, wo)?;
    Ok(LossVars {
        total,
        hinge,
        reg_dist,
        reg_orthog,
    })
}

fn sums_of(g: &Graph, l: &LossVars) -> LossSums {
    LossSums {
        total: g.scalar(l.total),
        hinge: g.scalar(l.hinge),
        reg_dist: g.scalar(l.reg_dist),
        reg_orthog: g.scalar(l.reg_orthog),
    }
}

/// `J` summed over `examples`, without gradients.
pub fn objective(params: &ModelParams, examples: &[Example], tau: f64, cfg: &TrainConfig) -> Result<LossSums> {
    let mut sums = LossSums::default();
    for ex in examples {
        let mut g = Graph::new(&params.set);
        let l = build_loss(&mut g, params, ex, tau, cfg)?;
        sums.add(&sums_of(&g, &l));
    }
    Ok(sums)
}

/// `J` plus the input of every relu/abs it passed through, for
/// finite-difference checks.
pub fn objective_with_kinks(
    params: &ModelParams,
    examples: &[Example],
    tau: f64,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let mut total = 0.0;
    let mut kinks = Vec::new();
    for ex in examples {
        let mut g = Graph::new(&params.set).with_kink_tracking();
        let l = build_loss(&mut g, params, ex, tau, cfg)?;
        total += g.scalar(l.total);
        kinks.extend_from_slice(g.kink_inputs());
    }
    Ok((total, kinks))
}

/// Loss and gradient of `J` over `examples`. Work is split into fixed chunks
/// whose results are reduced in input order.
pub fn batch_gradients(
    params: &ModelParams,
    examples: &[Example],
    tau: f64,
    cfg: &TrainConfig,
    exec: &Executor,
) -> Result<(LossSums, Gradients)> {
    let n_params = params.set.len();
    let parts = exec.map_chunks(examples, GRAD_CHUNK, |chunk| -> Result<(LossSums, Gradients)> {
        let mut sums = LossSums::default();
        let mut grads = Gradients::new(n_params);
        for ex in chunk {
            let mut g = Graph::new(&params.set);
            let l = build_loss(&mut g, params, ex, tau, cfg)?;
            sums.add(&sums_of(&g, &l));
            grads.merge(&g.backward(l.total)?);
        }
        Ok((sums, grads))
    });
    let mut sums = LossSums::default();
    let mut grads = Gradients::new(n_params);
    for part in parts {
        let (s, g) = part?;
        sums.add(&s);
        grads.merge(&g);
    }
    Ok((sums, grads))
}

/// Generator for one epoch: depends only on the seed and the epoch index.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Shuffles instances and draws their negatives.
pub fn epoch_examples(
    instances: &[PredictionInstance],
    num_items: usize,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Vec<Example>> {
    let mut rng = epoch_rng(cfg.seed, epoch);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.shuffle(&mut rng);
    order
        .into_iter()
        .map(|i| {
            let inst = &instances[i];
            Ok(Example {
                negatives: sample_negatives(inst.target(), num_items, cfg.negatives, &mut rng)?,
                inst: inst.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub tau: f64,
    pub instances: usize,
    pub batches: usize,
    /// Per-instance means.
    pub mean_loss: f64,
    pub mean_hinge: f64,
    pub mean_reg_dist: f64,
    pub mean_reg_orthog: f64,
    /// Mean over batches of the full gradient norm.
    pub grad_norm: f64,
}

/// One pass over the training instances: shuffled mini-batches, an Adam step
/// per batch, then the norm constraints.
pub fn train_epoch(
    params: &mut ModelParams,
    adam: &mut AdamState,
    instances: &[PredictionInstance],
    cfg: &TrainConfig,
    epoch: usize,
    exec: &Executor,
) -> Result<EpochStats> {
    if instances.is_empty() {
        return Err(Error::EmptyInput("no training instances".into()));
    }
    let tau = cfg.temperature(epoch);
    let examples = epoch_examples(instances, params.dims.num_items, cfg, epoch)?;
    let mut sums = LossSums::default();
    let mut grad_norm = 0.0;
    let mut batches = 0;
    for (b, batch) in examples.chunks(cfg.batch_size).enumerate() {
        let (s, grads) = batch_gradients(params, batch, tau, cfg, exec)?;
        let gn = grads.total_norm();
        if !s.total.is_finite() || !gn.is_finite() {
            return Err(Error::NonFinite(format!(
                "epoch {epoch}, batch {b}: loss {} gradient norm {gn}",
                s.total
            )));
        }
        adam.step(&mut params.set, &grads, cfg.learning_rate);
        params.project_constraints();
        sums.add(&s);
        grad_norm += gn;
        batches += 1;
    }
    let n = examples.len() as f64;
    Ok(EpochStats {
        epoch,
        tau,
        instances: examples.len(),
        batches,
        mean_loss: sums.total / n,
        mean_hinge: sums.hinge / n,
        mean_reg_dist: sums.reg_dist / n,
        mean_reg_orthog: sums.reg_orthog / n,
        grad_norm: grad_norm / batches as f64,
    })
}
