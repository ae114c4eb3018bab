use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{ItemId, Session, Task};
use crate::error::{Error, Result};

/// A session prefix and the item that followed it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionInstance {
    parent: Arc<[ItemId]>,
    prefix_len: usize,
    pub user_tag: Option<Arc<str>>,
    pub known_user: bool,
}

impl PredictionInstance {
    pub fn new(parent: Arc<[ItemId]>, prefix_len: usize, user_tag: Option<Arc<str>>) -> Self {
        assert!(prefix_len >= 1 && prefix_len < parent.len());
        PredictionInstance {
            parent,
            prefix_len,
            user_tag,
            known_user: false,
        }
    }

    pub fn prefix(&self) -> &[ItemId] {
        &self.parent[..self.prefix_len]
    }

    pub fn target(&self) -> ItemId {
        self.parent[self.prefix_len]
    }

    /// The full originating session.
    pub fn parent_session_items(&self) -> &[ItemId] {
        &self.parent
    }

    pub fn shares_parent(&self, other: &PredictionInstance) -> bool {
        Arc::ptr_eq(&self.parent, &other.parent)
    }
}

/// One instance per position `t = 2..n`; the unseen task drops instances whose
/// target already occurs in the prefix.
pub fn expand_instances(session: &Session, task: Task) -> Vec<PredictionInstance> {
    if session.len() < 2 {
        return Vec::new();
    }
    let parent: Arc<[ItemId]> = session.items.clone().into();
    let user: Option<Arc<str>> = session.user_tag.as_deref().map(Arc::from);
    (1..session.len())
        .filter(|&t| task == Task::Repeat || !session.items[..t].contains(&session.items[t]))
        .map(|t| PredictionInstance::new(parent.clone(), t, user.clone()))
        .collect()
}

/// `count` distinct items drawn uniformly from `{1..vocab} \ {target}`.
pub fn sample_negatives<R: Rng + ?Sized>(
    target: ItemId,
    vocab: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<ItemId>> {
    if count >= vocab {
        return Err(Error::Sampling { count, vocab });
    }
    let skip = target.index();
    Ok(sample(rng, vocab - 1, count)
        .into_iter()
        .map(|i| ItemId::from_index(if i >= skip { i + 1 } else { i }))
        .collect())
}

/// Picks `round(ratio * eligible)` users among those with at least
/// `min_sessions` training sessions. Eligible users are visited in sorted
/// order before the seeded shuffle, so the choice depends only on the data
/// and the generator state.
pub fn flag_known_users<R: Rng + ?Sized>(
    train: &[Session],
    ratio: f64,
    min_sessions: usize,
    rng: &mut R,
) -> BTreeSet<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in train {
        if let Some(u) = &s.user_tag {
            *counts.entry(u.as_str()).or_default() += 1;
        }
    }
    let mut eligible: Vec<&str> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_sessions)
        .map(|(u, _)| u)
        .collect();
    let take = (ratio.clamp(0.0, 1.0) * eligible.len() as f64).round() as usize;
    eligible.shuffle(rng);
    eligible.into_iter().take(take).map(str::to_string).collect()
}
