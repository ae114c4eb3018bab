//! Interaction logs to sessions, chronological splits, and prediction
//! instances.

mod instances;
mod load;
mod manifest;
mod sessions;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use instances::{expand_instances, flag_known_users, sample_negatives, PredictionInstance};
pub use load::{load_interactions, ColumnSpec, ItemMapping, LoadedLog};
pub use manifest::{prepare, DatasetStats, PreparedData, SplitManifest};
pub use sessions::{apply_filters, build_sessions};
pub use split::{chronological_split, SessionSplit};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Dense 1-based catalog index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemId(pub u32);

impl ItemId {
    /// Zero-based row in an item table.
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    #[inline]
    pub fn from_index(i: usize) -> Self {
        ItemId(i as u32 + 1)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user_tag: Option<String>,
    /// Present only in pre-grouped inputs that carry their own session ids.
    pub session_key: Option<String>,
    pub item: ItemId,
    pub timestamp: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    pub items: Vec<ItemId>,
    pub user_tag: Option<String>,
    pub start_day: i64,
    pub start_time: i64,
}

impl Session {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// What to do with sessions longer than `max_session_len`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlong {
    /// Keep the most recent `max_session_len` items.
    Truncate,
    Drop,
}

impl FromStr for Overlong {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "truncate" => Ok(Overlong::Truncate),
            "drop" => Ok(Overlong::Drop),
            _ => Err(format!("unknown overlong policy {s:?} (truncate|drop)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_item_count: usize,
    pub min_session_len: usize,
    /// 0 disables the cap.
    pub max_session_len: usize,
    pub split_by_day: bool,
    pub overlong: Overlong,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_item_count: 1,
            min_session_len: 2,
            max_session_len: 50,
            split_by_day: true,
            overlong: Overlong::Drop,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Targets never repeat a prefix item; prefix items are never ranked.
    Unseen,
    /// Plain next-item prediction, repeats allowed.
    Repeat,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Unseen => "unseen",
            Task::Repeat => "repeat",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unseen" => Ok(Task::Unseen),
            "repeat" => Ok(Task::Repeat),
            _ => Err(format!("unknown task {s:?} (unseen|repeat)")),
        }
    }
}
