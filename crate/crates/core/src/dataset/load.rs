use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use flate2::read::MultiGzDecoder;

use super::{InteractionRecord, ItemId};
use crate::error::{Error, Result};

/// Column layout of an interaction file.
///
/// Textual form: `tsv:user=0,item=1,time=2` with optional `session=<col>` and
/// a trailing `header` flag, e.g. `csv:session=0,item=2,time=3,header`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnSpec {
    pub delimiter: char,
    pub header: bool,
    pub user: Option<usize>,
    pub session: Option<usize>,
    pub item: usize,
    pub time: usize,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            delimiter: '\t',
            header: false,
            user: Some(0),
            session: None,
            item: 1,
            time: 2,
        }
    }
}

impl FromStr for ColumnSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let delimiter = match kind {
            "tsv" => '\t',
            "csv" => ',',
            other => return Err(format!("unknown format {other:?} (tsv|csv)")),
        };
        let mut spec = ColumnSpec {
            delimiter,
            header: false,
            user: None,
            session: None,
            item: usize::MAX,
            time: usize::MAX,
        };
        if rest.is_empty() {
            let d = ColumnSpec::default();
            return Ok(ColumnSpec { delimiter, ..d });
        }
        for part in rest.split(',') {
            if part == "header" {
                spec.header = true;
                continue;
            }
            let (key, col) = part
                .split_once('=')
                .ok_or_else(|| format!("bad column entry {part:?}"))?;
            let col: usize = col
                .parse()
                .map_err(|_| format!("bad column index in {part:?}"))?;
            match key {
                "user" => spec.user = Some(col),
                "session" => spec.session = Some(col),
                "item" => spec.item = col,
                "time" => spec.time = col,
                _ => return Err(format!("unknown column {key:?}")),
            }
        }
        if spec.item == usize::MAX || spec.time == usize::MAX {
            return Err("format needs both item= and time= columns".into());
        }
        Ok(spec)
    }
}

/// Raw item identifiers in dense order; position `i` holds `ItemId(i + 1)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ItemMapping {
    raw: Vec<String>,
    index: HashMap<String, ItemId>,
}

impl ItemMapping {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_raw(raw: Vec<String>) -> Self {
        let index = raw
            .iter()
            .enumerate()
            .map(|(i, r)| (r.clone(), ItemId::from_index(i)))
            .collect();
        ItemMapping { raw, index }
    }

    pub fn intern(&mut self, raw: &str) -> ItemId {
        if let Some(&id) = self.index.get(raw) {
            return id;
        }
        let id = ItemId::from_index(self.raw.len());
        self.raw.push(raw.to_string());
        self.index.insert(raw.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn raw(&self, id: ItemId) -> &str {
        &self.raw[id.index()]
    }

    pub fn get(&self, raw: &str) -> Option<ItemId> {
        self.index.get(raw).copied()
    }
}

#[derive(Clone, Debug)]
pub struct LoadedLog {
    pub records: Vec<InteractionRecord>,
    pub items: ItemMapping,
}

fn open(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let inner: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(MultiGzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(inner)))
}

/// Reads records in file order, remapping item ids densely by first
/// appearance.
pub fn load_interactions(path: &Path, spec: &ColumnSpec) -> Result<LoadedLog> {
    let reader = open(path)?;
    let mut items = ItemMapping::new();
    let mut records = Vec::new();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if (spec.header && i == 0) || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end_matches('\r').split(spec.delimiter).collect();
        let field = |col: usize, what: &str| {
            fields
                .get(col)
                .map(|f| f.trim())
                .filter(|f| !f.is_empty())
                .ok_or_else(|| parse_err(lineno, format!("missing {what} (column {col})")))
        };
        let item_raw = field(spec.item, "item")?;
        let ts_raw = field(spec.time, "timestamp")?;
        let timestamp = parse_timestamp(ts_raw)
            .ok_or_else(|| parse_err(lineno, format!("bad timestamp {ts_raw:?}")))?;
        let user_tag = spec
            .user
            .map(|c| field(c, "user").map(str::to_string))
            .transpose()?;
        let session_key = spec
            .session
            .map(|c| field(c, "session").map(str::to_string))
            .transpose()?;
        records.push(InteractionRecord {
            user_tag,
            session_key,
            item: items.intern(item_raw),
            timestamp,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput(path.display().to_string()));
    }
    Ok(LoadedLog { records, items })
}

fn parse_timestamp(s: &str) -> Option<i64> {
    let ts = match s.parse::<i64>() {
        Ok(v) => v,
        Err(_) => {
            let f = s.parse::<f64>().ok()?;
            if !f.is_finite() {
                return None;
            }
            f.floor() as i64
        }
    };
    (ts >= 0).then_some(ts)
}
