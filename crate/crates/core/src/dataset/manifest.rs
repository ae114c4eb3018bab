use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    apply_filters, build_sessions, chronological_split, FilterConfig, ItemId, ItemMapping,
    LoadedLog, Session, SessionSplit, SECONDS_PER_DAY,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub interactions: usize,
    pub items: usize,
    pub sessions: usize,
    pub avg_length: f64,
    pub train_sessions: usize,
    pub valid_sessions: usize,
    pub test_sessions: usize,
}

impl DatasetStats {
    pub fn of(split: &SessionSplit) -> Self {
        let interactions: usize = split.all().map(Session::len).sum();
        let sessions = split.train.len() + split.valid.len() + split.test.len();
        DatasetStats {
            interactions,
            items: split.item_vocab.len(),
            sessions,
            avg_length: if sessions == 0 {
                0.0
            } else {
                interactions as f64 / sessions as f64
            },
            train_sessions: split.train.len(),
            valid_sessions: split.valid.len(),
            test_sessions: split.test.len(),
        }
    }

    /// Four-row summary: interactions, items, sessions, average length.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let rows = [
            ("# interactions", thousands(self.interactions)),
            ("# items", thousands(self.items)),
            ("# sessions", thousands(self.sessions)),
            ("avg. length", format!("{:.2}", self.avg_length)),
        ];
        for (label, value) in rows {
            let _ = writeln!(s, "{label:<16}{value}");
        }
        s
    }
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

#[derive(Clone, Debug)]
pub struct PreparedData {
    pub split: SessionSplit,
    pub items: ItemMapping,
    pub stats: DatasetStats,
}

/// build -> filter -> split -> densify over the training vocabulary.
pub fn prepare(log: &LoadedLog, cfg: &FilterConfig, ratios: (u32, u32, u32)) -> Result<PreparedData> {
    if log.records.is_empty() {
        return Err(Error::EmptyInput("no interaction records".into()));
    }
    let sessions = build_sessions(&log.records, cfg);
    let sessions = apply_filters(sessions, cfg)?;
    let mut split = chronological_split(sessions, ratios, cfg.min_session_len)?;
    let old = split.densify();
    let items = ItemMapping::from_raw(old.iter().map(|&o| log.items.raw(o).to_string()).collect());
    let stats = DatasetStats::of(&split);
    Ok(PreparedData {
        split,
        items,
        stats,
    })
}

/// On-disk form of a prepared dataset.
pub struct SplitManifest;

impl SplitManifest {
    pub const FILES: [&'static str; 3] = ["train.sessions", "valid.sessions", "test.sessions"];

    pub fn write(dir: &Path, data: &PreparedData) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let parts = [&data.split.train, &data.split.valid, &data.split.test];
        for (name, sessions) in Self::FILES.iter().zip(parts) {
            write_file(&dir.join(name), &encode_sessions(sessions))?;
        }
        let mut items = String::new();
        for i in 0..data.items.len() {
            let id = ItemId::from_index(i);
            let _ = writeln!(items, "{id}\t{}", data.items.raw(id));
        }
        write_file(&dir.join("items.tsv"), &items)?;
        write_file(&dir.join("stats.txt"), &data.stats.to_table())?;
        let json = serde_json::to_string_pretty(&data.stats).expect("stats serialize") + "\n";
        write_file(&dir.join("stats.json"), &json)
    }

    pub fn read(dir: &Path) -> Result<PreparedData> {
        let mut parts = Vec::new();
        for name in Self::FILES {
            let path = dir.join(name);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            parts.push(decode_sessions(&path, &text)?);
        }
        let path = dir.join("items.tsv");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut raw = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (id, r) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.clone(),
                line: i + 1,
                message: "expected <id>\\t<raw>".into(),
            })?;
            if id.parse::<usize>().ok() != Some(i + 1) {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: i + 1,
                    message: format!("ids must be dense and ordered, got {id:?}"),
                });
            }
            raw.push(r.to_string());
        }
        let items = ItemMapping::from_raw(raw);
        let test = parts.pop().unwrap();
        let valid = parts.pop().unwrap();
        let train = parts.pop().unwrap();
        let item_vocab = train.iter().flat_map(|s| s.items.iter().copied()).collect();
        let user_vocab = train.iter().filter_map(|s| s.user_tag.clone()).collect();
        let split = SessionSplit {
            train,
            valid,
            test,
            item_vocab,
            user_vocab,
        };
        let stats = DatasetStats::of(&split);
        Ok(PreparedData {
            split,
            items,
            stats,
        })
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// One session per line: `start_time \t user_tag-or-'-' \t space-separated items`.
fn encode_sessions(sessions: &[Session]) -> String {
    let mut out = String::new();
    for s in sessions {
        let _ = write!(out, "{}\t{}\t", s.start_time, s.user_tag.as_deref().unwrap_or("-"));
        for (i, item) in s.items.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{item}");
        }
        out.push('\n');
    }
    out
}

fn decode_sessions(path: &Path, text: &str) -> Result<Vec<Session>> {
    let err = |line: usize, message: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    };
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let mut cols = line.splitn(3, '\t');
            let (Some(ts), Some(user), Some(items)) = (cols.next(), cols.next(), cols.next()) else {
                return Err(err(i + 1, "expected three tab-separated columns"));
            };
            let start_time: i64 = ts.parse().map_err(|_| err(i + 1, "bad start time"))?;
            let items = items
                .split(' ')
                .map(|x| x.parse::<u32>().ok().filter(|&v| v >= 1).map(ItemId))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| err(i + 1, "bad item id"))?;
            Ok(Session {
                items,
                user_tag: (user != "-").then(|| user.to_string()),
                start_day: start_time.div_euclid(SECONDS_PER_DAY),
                start_time,
            })
        })
        .collect()
}
