//! Checkpoint container: 4-byte magic, a length-prefixed block of
//! `key=value` lines, then named little-endian f32 tensors.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub config: BTreeMap<String, String>,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Container {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .config
            .get(key)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::Config(format!("checkpoint value `{key}={raw}` does not parse")))
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) {
        self.tensors.push((name.into(), shape.to_vec(), data));
    }

    pub fn tensor(&self, name: &str) -> Result<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
            .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor `{name}`")))
    }

    pub fn to_bytes(&self, magic: &[u8; 4]) -> Vec<u8> {
        let mut out = magic.to_vec();
        let cfg: String = self.config.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, shape, data) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(path, m.to_string());
        if bytes.len() < 4 || &bytes[..4] != magic {
            return Err(bad(&format!("missing {} header", String::from_utf8_lossy(magic))));
        }
        let mut pos = 4;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated file"))?;
            pos += n;
            Ok(s)
        };
        let u32_of = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap()) as usize;
        let cfg_len = u32_of(take(4)?);
        let cfg = std::str::from_utf8(take(cfg_len)?).map_err(|_| bad("config block is not UTF-8"))?;
        let mut config = BTreeMap::new();
        for line in cfg.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad("config line without `=`"))?;
            config.insert(k.to_string(), v.to_string());
        }
        let n = u32_of(take(4)?);
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let nl = u32_of(take(4)?);
            let name = String::from_utf8(take(nl)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
            let rank = u32_of(take(4)?);
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32_of(take(4)?));
            }
            let count: usize = shape.iter().product();
            let data = take(4 * count)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, shape, data));
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok(Container { config, tensors })
    }

    pub fn save(&self, path: &Path, magic: &[u8; 4]) -> Result<()> {
        std::fs::write(path, self.to_bytes(magic)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, magic: &[u8; 4]) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, magic, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_magic_check() {
        let mut c = Container::default();
        c.set("m", 256);
        c.set("name", "toy");
        c.push("enc.w", &[2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-7, f32::MAX]);
        c.push("s", &[1], vec![0.25]);
        let b = c.to_bytes(b"KVQ1");
        let p = Path::new("mem");
        let back = Container::from_bytes(&b, b"KVQ1", p).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.get::<usize>("m").unwrap(), 256);
        assert!(Container::from_bytes(&b, b"KLM1", p).is_err());
        assert!(Container::from_bytes(&b[..b.len() - 1], b"KVQ1", p).is_err());
        assert!(back.get::<usize>("name").is_err());
        assert!(back.tensor("missing").is_err());
    }
}
