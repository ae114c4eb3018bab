//! Binary checkpoint container.
//!
//! ```text
//! "PXRC" | u32 version
//! u32 n_meta   { str key, str value }*
//! u32 n_users  { str tag }*            (in bias-table row order)
//! u32 n_tensor { str name, u64 rows, u64 cols, f64 data[rows*cols] }*
//! u8 has_adam  [ u64 step, { f64 m[..], f64 v[..] }* ]
//! u64 fnv1a(all preceding bytes) | "END\0"
//! ```
//! Integers and floats are little-endian; `str` is a u32 length and UTF-8.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::adam::AdamState;
use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::params::ModelParams;

const MAGIC: &[u8; 4] = b"PXRC";
const END: &[u8; 4] = b"END\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ModelParams,
    pub adam: Option<AdamState>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} out of range")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8 in string".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        let mut users: Vec<(&String, &usize)> = self.params.users.iter().collect();
        users.sort_by_key(|(_, &r)| r);
        out.extend_from_slice(&(users.len() as u32).to_le_bytes());
        for (u, _) in users {
            put_str(&mut out, u);
        }
        let set = &self.params.set;
        out.extend_from_slice(&(set.len() as u32).to_le_bytes());
        for (_, name, t) in set.iter() {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            put_f64s(&mut out, t.data());
        }
        match &self.adam {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&a.step.to_le_bytes());
                for (m, v) in a.m.iter().zip(&a.v) {
                    put_f64s(&mut out, m.data());
                    put_f64s(&mut out, v.data());
                }
            }
        }
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out.extend_from_slice(END);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 20 {
            return Err(Error::Checkpoint(format!("file too short ({} bytes)", buf.len())));
        }
        if &buf[..4] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let (body, tail) = buf.split_at(buf.len() - 12);
        if &tail[8..] != END {
            return Err(Error::Checkpoint("missing end marker (truncated?)".into()));
        }
        let stored = u64::from_le_bytes(tail[..8].try_into().unwrap());
        if stored != fnv1a(body) {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.str()?;
            meta.insert(k, r.str()?);
        }
        let n_users = r.u32()? as usize;
        let mut users = BTreeMap::new();
        for row in 0..n_users {
            users.insert(r.str()?, row);
        }
        let mut set = ParamSet::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let rows = r.len()?;
            let cols = r.len()?;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
            set.add(name, Tensor::from_vec(rows, cols, r.f64s(n)?)?);
        }
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let (mut m, mut v) = (Vec::new(), Vec::new());
                for (_, _, t) in set.iter() {
                    let n = t.data().len();
                    m.push(Tensor::from_vec(t.rows(), t.cols(), r.f64s(n)?)?);
                    v.push(Tensor::from_vec(t.rows(), t.cols(), r.f64s(n)?)?);
                }
                Some(AdamState { step, m, v })
            }
            x => return Err(Error::Checkpoint(format!("bad optimizer flag {x}"))),
        };
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes before checksum",
                body.len() - r.pos
            )));
        }
        let params = ModelParams::from_set(set, users)?;
        Ok(Checkpoint { meta, params, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata {key:?}")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let s = self.meta_str(key)?;
        s.parse()
            .map_err(|_| Error::Checkpoint(format!("metadata {key:?} has bad value {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelDims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = ModelParams::init(
            ModelDims {
                num_items: 9,
                dim: 4,
                num_proxies: 3,
                max_len: 5,
            },
            ["zoe".to_string(), "al".to_string()],
            &mut rng,
        );
        let mut adam = AdamState::new(&params.set);
        adam.step = 17;
        adam.m[0].data_mut()[3] = -1.5e-300;
        adam.v[2].data_mut()[0] = f64::MIN_POSITIVE;
        let mut meta = BTreeMap::new();
        meta.insert("epoch".into(), "4".into());
        meta.insert("tau".into(), format!("{}", 0.1f64 / 3.0));
        Checkpoint {
            meta,
            params,
            adam: Some(adam),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.meta_parse::<f64>("tau").unwrap(), 0.1 / 3.0);
        assert_eq!(back.params.user_row("al"), Some(0));
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = sample().to_bytes();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::Checkpoint(_))
            ));
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        let body = bytes.len() - 12;
        let sum = fnv1a(&bytes[..body]).to_le_bytes();
        bytes[body..body + 8].copy_from_slice(&sum);
        match Checkpoint::from_bytes(&bytes) {
            Err(Error::Checkpoint(m)) => assert!(m.contains("version 9"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }
}
