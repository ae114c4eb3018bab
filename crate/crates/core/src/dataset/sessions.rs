use std::collections::{BTreeMap, HashMap};

use super::{FilterConfig, InteractionRecord, ItemId, Overlong, Session, SECONDS_PER_DAY};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum GroupKey {
    Session(String),
    UserDay(Option<String>, i64),
    User(Option<String>),
}

/// Groups records into sessions: by explicit session id when present,
/// otherwise per user and UTC day (or per user when day splitting is off).
pub fn build_sessions(records: &[InteractionRecord], cfg: &FilterConfig) -> Vec<Session> {
    let mut groups: BTreeMap<GroupKey, Vec<(i64, usize, &InteractionRecord)>> = BTreeMap::new();
    for (order, r) in records.iter().enumerate() {
        let key = match (&r.session_key, cfg.split_by_day) {
            (Some(s), _) => GroupKey::Session(s.clone()),
            (None, true) => {
                GroupKey::UserDay(r.user_tag.clone(), r.timestamp.div_euclid(SECONDS_PER_DAY))
            }
            (None, false) => GroupKey::User(r.user_tag.clone()),
        };
        groups.entry(key).or_default().push((r.timestamp, order, r));
    }

    let mut sessions: Vec<(GroupKey, Session)> = groups
        .into_iter()
        .map(|(key, mut rows)| {
            rows.sort_by_key(|&(ts, order, _)| (ts, order));
            let mut items: Vec<ItemId> = rows.iter().map(|(_, _, r)| r.item).collect();
            let cap = cfg.max_session_len;
            if cap > 0 && items.len() > cap && cfg.overlong == Overlong::Truncate {
                items.drain(..items.len() - cap);
            }
            let start_time = rows[0].0;
            let user_tag = rows[0].2.user_tag.clone();
            let session = Session {
                items,
                user_tag,
                start_day: start_time.div_euclid(SECONDS_PER_DAY),
                start_time,
            };
            (key, session)
        })
        .collect();
    sessions.sort_by(|a, b| (a.1.start_time, &a.0).cmp(&(b.1.start_time, &b.0)));
    sessions.into_iter().map(|(_, s)| s).collect()
}

/// Drops rare items and short (or, under [`Overlong::Drop`], long) sessions
/// until nothing changes.
pub fn apply_filters(sessions: Vec<Session>, cfg: &FilterConfig) -> Result<Vec<Session>> {
    let mut sessions = sessions;
    let too_long = |s: &Session| {
        cfg.overlong == Overlong::Drop && cfg.max_session_len > 0 && s.len() > cfg.max_session_len
    };
    loop {
        let mut changed = false;
        if cfg.min_item_count > 1 {
            let mut counts: HashMap<ItemId, usize> = HashMap::new();
            for s in &sessions {
                for &i in &s.items {
                    *counts.entry(i).or_default() += 1;
                }
            }
            for s in &mut sessions {
                let before = s.items.len();
                s.items.retain(|i| counts[i] >= cfg.min_item_count);
                changed |= s.items.len() != before;
            }
        }
        let before = sessions.len();
        sessions.retain(|s| s.len() >= cfg.min_session_len.max(1) && !too_long(s));
        changed |= sessions.len() != before;
        if !changed {
            break;
        }
    }
    if sessions.is_empty() {
        return Err(Error::EmptyResult);
    }
    Ok(sessions)
}
