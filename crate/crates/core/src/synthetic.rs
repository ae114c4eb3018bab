//! Seeded generator of sessions with planted users.
//!
//! The catalog is a grid of `topics x slots`; item `t * slots + s + 1` sits
//! in topic `t` and slot `s`. Each user owns a fixed set of favourite slots,
//! which is their general interest: spread over the catalog it is the vector
//! returned by [`general_interest`]. A session starts in a random topic and
//! moves to a neighbouring topic (on a ring) with probability `drift` at
//! every step; that is the short-term interest. Each item takes its slot from
//! the user's favourites with probability `loyalty`, and a uniformly random
//! slot otherwise.
//!
//! Favourite sets overlap between users and a session prefix shows only a
//! few of them, so guessing which slots come next means recognising the
//! user, while the topic comes from the recent items.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    prepare, FilterConfig, InteractionRecord, ItemId, ItemMapping, LoadedLog, PreparedData, Session,
    SECONDS_PER_DAY,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub topics: usize,
    pub slots: usize,
    pub users: usize,
    pub sessions: usize,
    pub favourites: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub drift: f64,
    pub loyalty: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            topics: 10,
            slots: 50,
            users: 20,
            sessions: 2000,
            favourites: 12,
            min_len: 8,
            max_len: 16,
            drift: 0.5,
            loyalty: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn num_items(&self) -> usize {
        self.topics * self.slots
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.topics == 0 || self.slots == 0 || self.users == 0 || self.sessions == 0 {
            errs.push("topics, slots, users and sessions must all be >= 1".to_string());
        }
        if self.favourites == 0 || self.favourites > self.slots {
            errs.push(format!("favourites must lie in 1..={}", self.slots));
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            errs.push("need 2 <= min_len <= max_len".to_string());
        }
        for (name, p) in [("drift", self.drift), ("loyalty", self.loyalty)] {
            if !(0.0..=1.0).contains(&p) {
                errs.push(format!("{name} must lie in [0, 1]"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Per-user favourite slots, sorted.
pub fn user_tastes(cfg: &SyntheticConfig) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.users)
        .map(|_| {
            let mut v = sample(&mut rng, cfg.slots, cfg.favourites).into_vec();
            v.sort_unstable();
            v
        })
        .collect()
}

/// Per-user probability of each item (dense index) under a uniformly
/// random topic: the planted general interest.
pub fn general_interest(cfg: &SyntheticConfig) -> Vec<Vec<f64>> {
    let base = (1.0 - cfg.loyalty) / cfg.slots as f64;
    let fav = cfg.loyalty / cfg.favourites as f64;
    user_tastes(cfg)
        .into_iter()
        .map(|taste| {
            let mut by_slot = vec![base; cfg.slots];
            for s in taste {
                by_slot[s] += fav;
            }
            (0..cfg.num_items())
                .map(|i| by_slot[i % cfg.slots] / cfg.topics as f64)
                .collect()
        })
        .collect()
}

pub fn user_tag(u: usize) -> String {
    format!("u{u:03}")
}

/// Sessions in chronological order, one per day, users interleaved at random.
pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<Session>> {
    cfg.validate()?;
    let tastes = user_tastes(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut out = Vec::with_capacity(cfg.sessions);
    for day in 0..cfg.sessions {
        let u = rng.gen_range(0..cfg.users);
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let mut topic = rng.gen_range(0..cfg.topics);
        let mut items = Vec::with_capacity(len);
        for step in 0..len {
            if step > 0 && rng.gen_bool(cfg.drift) {
                topic = if rng.gen_bool(0.5) {
                    (topic + 1) % cfg.topics
                } else {
                    (topic + cfg.topics - 1) % cfg.topics
                };
            }
            let slot = if rng.gen_bool(cfg.loyalty) {
                tastes[u][rng.gen_range(0..cfg.favourites)]
            } else {
                rng.gen_range(0..cfg.slots)
            };
            items.push(ItemId::from_index(topic * cfg.slots + slot));
        }
        let start = day as i64 * SECONDS_PER_DAY;
        out.push(Session {
            items,
            user_tag: Some(user_tag(u)),
            start_day: day as i64,
            start_time: start,
        });
    }
    Ok(out)
}

/// The sessions flattened back into a timestamped interaction log, items
/// named by their grid position.
pub fn interaction_log(cfg: &SyntheticConfig, sessions: &[Session]) -> LoadedLog {
    let mut items = ItemMapping::new();
    for i in 0..cfg.num_items() {
        items.intern(&format!("t{}s{}", i / cfg.slots, i % cfg.slots));
    }
    let records = sessions
        .iter()
        .flat_map(|s| {
            s.items.iter().enumerate().map(move |(k, &item)| InteractionRecord {
                user_tag: s.user_tag.clone(),
                session_key: None,
                item,
                timestamp: s.start_time + 60 * k as i64,
            })
        })
        .collect();
    LoadedLog { records, items }
}

/// Generated, filtered, split 8:1:1 and densified.
pub fn prepared(cfg: &SyntheticConfig) -> Result<PreparedData> {
    let sessions = generate(cfg)?;
    let log = interaction_log(cfg, &sessions);
    prepare(&log, &FilterConfig::default(), (8, 1, 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let cfg = SyntheticConfig {
            sessions: 300,
            ..SyntheticConfig::default()
        };
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        assert_eq!(a.len(), 300);
        let tastes = user_tastes(&cfg);
        let mut loyal = 0usize;
        let mut total = 0usize;
        for s in &a {
            assert!((cfg.min_len..=cfg.max_len).contains(&s.len()));
            let u: usize = s.user_tag.as_ref().unwrap()[1..].parse().unwrap();
            for i in &s.items {
                assert!(i.index() < cfg.num_items());
                total += 1;
                loyal += tastes[u].contains(&(i.index() % cfg.slots)) as usize;
            }
        }
        assert_eq!(loyal, total);
        assert_ne!(a, generate(&SyntheticConfig { seed: 1, ..cfg }).unwrap());
    }

    #[test]
    fn interest_vectors_are_distributions() {
        let cfg = SyntheticConfig {
            loyalty: 0.8,
            ..SyntheticConfig::default()
        };
        let g = general_interest(&cfg);
        let tastes = user_tastes(&cfg);
        assert_eq!(g.len(), cfg.users);
        for (u, v) in g.iter().enumerate() {
            assert_eq!(v.len(), 500);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let hot = v.iter().filter(|&&p| p > 0.001).count();
            assert_eq!(hot, cfg.topics * tastes[u].len());
        }
    }

    #[test]
    fn prepared_split_shape() {
        let cfg = SyntheticConfig {
            sessions: 200,
            ..SyntheticConfig::default()
        };
        let d = prepared(&cfg).unwrap();
        assert_eq!(d.split.train.len(), 160);
        assert_eq!(d.stats.sessions, d.split.train.len() + d.split.valid.len() + d.split.test.len());
        assert_eq!(d.items.len(), d.split.item_vocab.len());
    }

    #[test]
    fn invalid_config_lists_problems() {
        let cfg = SyntheticConfig {
            favourites: 0,
            min_len: 1,
            ..SyntheticConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config(v)) => assert_eq!(v.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
