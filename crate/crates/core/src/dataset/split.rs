use std::collections::BTreeSet;

use super::{ItemId, Session};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionSplit {
    pub train: Vec<Session>,
    pub valid: Vec<Session>,
    pub test: Vec<Session>,
    pub item_vocab: BTreeSet<ItemId>,
    pub user_vocab: BTreeSet<String>,
}

impl SessionSplit {
    pub fn all(&self) -> impl Iterator<Item = &Session> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    /// Re-indexes items densely over the training vocabulary (in old-id
    /// order). Returns the old id of every new id.
    pub fn densify(&mut self) -> Vec<ItemId> {
        let old: Vec<ItemId> = self.item_vocab.iter().copied().collect();
        let lookup: std::collections::HashMap<ItemId, ItemId> = old
            .iter()
            .enumerate()
            .map(|(i, &o)| (o, ItemId::from_index(i)))
            .collect();
        for s in self
            .train
            .iter_mut()
            .chain(self.valid.iter_mut())
            .chain(self.test.iter_mut())
        {
            for i in &mut s.items {
                *i = lookup[i];
            }
        }
        self.item_vocab = (0..old.len()).map(ItemId::from_index).collect();
        old
    }
}

/// Orders sessions by start time and cuts them `ratios.0 : ratios.1 :
/// ratios.2` (floor for train and valid, remainder to test). Valid and test
/// lose items unseen in train and are re-checked against `min_session_len`.
pub fn chronological_split(
    mut sessions: Vec<Session>,
    ratios: (u32, u32, u32),
    min_session_len: usize,
) -> Result<SessionSplit> {
    let n = sessions.len();
    if n < 3 {
        return Err(Error::Split(n));
    }
    sessions.sort_by_key(|s| s.start_time);
    let total = (ratios.0 + ratios.1 + ratios.2) as usize;
    let n_train = n * ratios.0 as usize / total;
    let n_valid = n * ratios.1 as usize / total;

    let mut rest = sessions.split_off(n_train);
    let train = sessions;
    let test = rest.split_off(n_valid);
    let valid = rest;

    let item_vocab: BTreeSet<ItemId> = train.iter().flat_map(|s| s.items.iter().copied()).collect();
    let user_vocab: BTreeSet<String> = train.iter().filter_map(|s| s.user_tag.clone()).collect();
    let prune = |sessions: Vec<Session>| -> Vec<Session> {
        sessions
            .into_iter()
            .filter_map(|mut s| {
                s.items.retain(|i| item_vocab.contains(i));
                (s.len() >= min_session_len.max(1)).then_some(s)
            })
            .collect()
    };
    let valid = prune(valid);
    let test = prune(test);
    Ok(SessionSplit {
        train,
        valid,
        test,
        item_vocab,
        user_vocab,
    })
}
