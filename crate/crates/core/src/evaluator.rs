//! Full-catalog ranking metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::combiner::{build_normal, score_catalog, ScoringMode};
use crate::dataset::{ItemId, PredictionInstance, Task};
use crate::error::{Error, Result};
use crate::parallel::Executor;
use crate::params::ModelParams;
use crate::proxy_selector::{build_proxy, user_row, Phase};
use crate::short_term_encoder::build_encoder;

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];

/// Anything that can score the whole catalog for an instance. Lower scores
/// rank higher. Masking is applied by the evaluator, not the scorer.
pub trait CatalogScorer: Sync {
    fn num_items(&self) -> usize;
    fn score(&self, inst: &PredictionInstance) -> Result<Vec<f64>>;
}

/// Scores with trained parameters under the inference rule: selection,
/// encoding and the hyperplane all come from the observed prefix.
pub struct ProxyRecommender<'a> {
    pub params: &'a ModelParams,
    pub tau: f64,
    pub mode: ScoringMode,
}

impl CatalogScorer for ProxyRecommender<'_> {
    fn num_items(&self) -> usize {
        self.params.dims.num_items
    }

    fn score(&self, inst: &PredictionInstance) -> Result<Vec<f64>> {
        let params = self.params;
        let d = params.dims.dim;
        let mut g = Graph::new(&params.set);
        let (mut p, mut v) = (vec![0.0; d], vec![0.0; d]);
        if self.mode.uses_proxy() {
            let pv = build_proxy(&mut g, params, inst.prefix(), user_row(params, inst), self.tau, Phase::Infer)?;
            p = g.value(pv.p).data().to_vec();
            if self.mode.projects() {
                let nv = build_normal(&mut g, params, pv.pi, Phase::Infer)?;
                v = g.value(nv).data().to_vec();
            }
        }
        let s = if self.mode.uses_short_term() {
            let ev = build_encoder(&mut g, params, inst.prefix())?;
            g.value(ev.output).data().to_vec()
        } else {
            vec![0.0; d]
        };
        Ok(score_catalog(&p, &s, &v, params.get(params.ids.items), &[], self.mode))
    }
}

/// Prefix items are barred from the unseen task.
pub fn task_mask(inst: &PredictionInstance, task: Task) -> &[ItemId] {
    match task {
        Task::Unseen => inst.prefix(),
        Task::Repeat => &[],
    }
}

pub fn apply_mask(scores: &mut [f64], mask: &[ItemId]) {
    for m in mask {
        scores[m.index()] = f64::INFINITY;
    }
}

/// `1 + #{strictly smaller} + #{equal with a smaller id}`.
pub fn rank_of_target(scores: &[f64], target: ItemId) -> Result<usize> {
    let t = target.index();
    let st = *scores
        .get(t)
        .ok_or_else(|| Error::Protocol(format!("target {target} outside catalog of {}", scores.len())))?;
    if !st.is_finite() {
        return Err(Error::Protocol(format!("target {target} is masked")));
    }
    let mut rank = 1;
    for (i, &s) in scores.iter().enumerate() {
        if s < st || (s == st && i < t) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// The `k` best items under the same ordering as [`rank_of_target`]; masked
/// items are never returned.
pub fn top_k(scores: &[f64], k: usize) -> Vec<ItemId> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| scores[i].is_finite()).collect();
    let cmp = |a: &usize, b: &usize| scores[*a].total_cmp(&scores[*b]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx.into_iter().map(ItemId::from_index).collect()
}

pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::UndefinedMetric);
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

pub fn mrr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::UndefinedMetric);
    }
    let total: f64 = ranks
        .iter()
        .map(|&r| if r <= k { 1.0 / r as f64 } else { 0.0 })
        .sum();
    Ok(total / ranks.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub k: usize,
    pub recall: f64,
    pub mrr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub checkpoint: Option<String>,
    pub instances: usize,
    pub cells: Vec<MetricCell>,
}

impl MetricsReport {
    pub fn from_ranks(task: Task, ranks: &[usize], ks: &[usize]) -> Result<Self> {
        let cells = ks
            .iter()
            .map(|&k| {
                Ok(MetricCell {
                    k,
                    recall: recall_at_k(ranks, k)?,
                    mrr: mrr_at_k(ranks, k)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricsReport {
            task,
            checkpoint: None,
            instances: ranks.len(),
            cells,
        })
    }

    pub fn cell(&self, k: usize) -> Option<&MetricCell> {
        self.cells.iter().find(|c| c.k == k)
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.cell(k).map(|c| c.recall)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Header row `R@5 M@5 R@10 ...` and one row of values.
    pub fn to_table(&self) -> String {
        let mut head = format!("{:<10}", "task");
        let mut row = format!("{:<10}", self.task.as_str());
        for c in &self.cells {
            let _ = write!(head, "{:>9}{:>9}", format!("R@{}", c.k), format!("M@{}", c.k));
            let _ = write!(row, "{:>9.4}{:>9.4}", c.recall, c.mrr);
        }
        format!("{head}\n{row}\n")
    }
}

/// Rank of every instance's target, in input order.
pub fn rank_instances<S: CatalogScorer + ?Sized>(
    scorer: &S,
    instances: &[PredictionInstance],
    task: Task,
    exec: &Executor,
) -> Result<Vec<usize>> {
    exec.map(instances, |inst| {
        let mut scores = scorer.score(inst)?;
        if scores.len() != scorer.num_items() {
            return Err(Error::Contract(format!(
                "scorer returned {} scores for {} items",
                scores.len(),
                scorer.num_items()
            )));
        }
        apply_mask(&mut scores, task_mask(inst, task));
        rank_of_target(&scores, inst.target())
    })
    .into_iter()
    .collect()
}

pub fn evaluate<S: CatalogScorer + ?Sized>(
    scorer: &S,
    instances: &[PredictionInstance],
    task: Task,
    ks: &[usize],
    exec: &Executor,
) -> Result<MetricsReport> {
    let ranks = rank_instances(scorer, instances, task, exec)?;
    MetricsReport::from_ranks(task, &ranks, ks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_of_target(&[0.3, 0.1, 0.9], ItemId(2)).unwrap(), 1);
        let s = [0.5, 0.1, 0.9, f64::INFINITY];
        assert_eq!(rank_of_target(&s, ItemId(1)).unwrap(), 2);
        // tie at the minimum, target has the larger id
        assert_eq!(rank_of_target(&[0.1, 0.1, 0.5], ItemId(2)).unwrap(), 2);
        assert_eq!(rank_of_target(&[0.1, 0.1, 0.5], ItemId(1)).unwrap(), 1);
        assert!(matches!(
            rank_of_target(&[f64::INFINITY, 0.0], ItemId(1)),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn metric_examples() {
        assert_eq!(recall_at_k(&[1, 1], 5).unwrap(), 1.0);
        assert_eq!(mrr_at_k(&[1, 1], 5).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[4], 20).unwrap(), 1.0);
        assert_eq!(mrr_at_k(&[4], 20).unwrap(), 0.25);
        let r = [1, 3, 25];
        assert!((recall_at_k(&r, 20).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((mrr_at_k(&r, 20).unwrap() - 0.4444).abs() < 1e-4);
        assert!(matches!(recall_at_k(&[], 5), Err(Error::UndefinedMetric)));
    }

    #[test]
    fn top_k_matches_ranks() {
        let s = [0.4, 0.1, 0.4, f64::INFINITY, 0.2, 0.1];
        let top = top_k(&s, 4);
        assert_eq!(top, vec![ItemId(2), ItemId(6), ItemId(5), ItemId(1)]);
        for (pos, id) in top.iter().enumerate() {
            assert_eq!(rank_of_target(&s, *id).unwrap(), pos + 1);
        }
        assert_eq!(top_k(&s, 10).len(), 5);
    }

    /// Ranks items by a fixed score table.
    struct Fixed(Vec<f64>);

    impl CatalogScorer for Fixed {
        fn num_items(&self) -> usize {
            self.0.len()
        }
        fn score(&self, _: &PredictionInstance) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn report_shape_and_table() {
        let parent: Arc<[ItemId]> = vec![ItemId(1), ItemId(2), ItemId(3)].into();
        let insts = vec![
            PredictionInstance::new(parent.clone(), 1, None),
            PredictionInstance::new(parent, 2, None),
        ];
        let scorer = Fixed(vec![0.0, 0.2, 0.1]);
        let exec = Executor::sequential();
        let rep = evaluate(&scorer, &insts, Task::Unseen, &DEFAULT_KS, &exec).unwrap();
        assert_eq!(rep.cells.len(), 3);
        // item 1 masked: target 2 sits behind item 3; target 3 ranks first
        assert_eq!(rank_instances(&scorer, &insts, Task::Unseen, &exec).unwrap(), vec![2, 1]);
        assert_eq!(rep.recall(5), Some(1.0));
        assert!((rep.cell(5).unwrap().mrr - 0.75).abs() < 1e-15);
        let table = rep.to_table();
        let mut lines = table.lines();
        assert_eq!(
            lines.next().unwrap(),
            "task            R@5      M@5     R@10     M@10     R@20     M@20"
        );
        assert_eq!(
            lines.next().unwrap(),
            "unseen       1.0000   0.7500   1.0000   0.7500   1.0000   0.7500"
        );
        let back: MetricsReport = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(back, rep);
    }
}
