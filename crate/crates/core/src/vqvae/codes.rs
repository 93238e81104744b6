use std::path::Path;

use crate::error::{Error, Result};

/// Aligned code sequences of lengths L, 2L and 4L.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CodeTriple {
    pub top: Vec<usize>,
    pub mid: Vec<usize>,
    pub bot: Vec<usize>,
}

impl CodeTriple {
    pub fn new(top: Vec<usize>, mid: Vec<usize>, bot: Vec<usize>) -> Result<Self> {
        let l = top.len();
        if l == 0 || mid.len() != 2 * l || bot.len() != 4 * l {
            return Err(Error::Input(format!(
                "code lengths {}/{}/{} violate the 1:2:4 ratio",
                l,
                mid.len(),
                bot.len()
            )));
        }
        Ok(CodeTriple { top, mid, bot })
    }

    pub fn len(&self) -> usize {
        self.top.len()
    }

    pub fn is_empty(&self) -> bool {
        self.top.is_empty()
    }

    /// Top positions `start..start+len` with their aligned finer codes.
    pub fn slice(&self, start: usize, len: usize) -> CodeTriple {
        CodeTriple {
            top: self.top[start..start + len].to_vec(),
            mid: self.mid[2 * start..2 * (start + len)].to_vec(),
            bot: self.bot[4 * start..4 * (start + len)].to_vec(),
        }
    }

    pub fn extend(&mut self, other: &CodeTriple) {
        self.top.extend_from_slice(&other.top);
        self.mid.extend_from_slice(&other.mid);
        self.bot.extend_from_slice(&other.bot);
    }

    pub fn check_range(&self, m: usize) -> Result<()> {
        match self.top.iter().chain(&self.mid).chain(&self.bot).find(|&&c| c >= m) {
            Some(c) => Err(Error::Input(format!("code {c} outside codebook of size {m}"))),
            None => Ok(()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = b"COD1".to_vec();
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for &c in self.top.iter().chain(&self.mid).chain(&self.bot) {
            out.extend_from_slice(&(c as u16).to_le_bytes());
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(&c) = self
            .top
            .iter()
            .chain(&self.mid)
            .chain(&self.bot)
            .find(|&&c| c > u16::MAX as usize)
        {
            return Err(Error::Input(format!("code {c} does not fit in 16 bits")));
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let b = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if b.len() < 8 || &b[..4] != b"COD1" {
            return Err(Error::format(path, "missing COD1 header"));
        }
        let l = u32::from_le_bytes(b[4..8].try_into().unwrap()) as usize;
        if b.len() != 8 + 2 * 7 * l {
            return Err(Error::format(path, format!("expected {} codes", 7 * l)));
        }
        let codes: Vec<usize> = b[8..]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as usize)
            .collect();
        CodeTriple::new(codes[..l].to_vec(), codes[l..3 * l].to_vec(), codes[3 * l..].to_vec())
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_is_enforced() {
        assert!(CodeTriple::new(vec![1], vec![1, 2], vec![1, 2, 3, 4]).is_ok());
        assert!(CodeTriple::new(vec![1], vec![1], vec![1, 2, 3, 4]).is_err());
        assert!(CodeTriple::new(vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cod");
        let c = CodeTriple::new(vec![255, 0], vec![1, 2, 3, 4], (10..18).collect()).unwrap();
        c.save(&p).unwrap();
        assert_eq!(CodeTriple::load(&p).unwrap(), c);
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 8 + 2 * 14);
    }

    #[test]
    fn slicing_keeps_alignment() {
        let c = CodeTriple::new((0..3).collect(), (0..6).collect(), (0..12).collect()).unwrap();
        let s = c.slice(1, 2);
        assert_eq!(s.top, vec![1, 2]);
        assert_eq!(s.mid, vec![2, 3, 4, 5]);
        assert_eq!(s.bot, (4..12).collect::<Vec<_>>());
    }
}
