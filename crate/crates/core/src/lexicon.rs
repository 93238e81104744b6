//! Pronunciation dictionary in CMUdict text format and the CTC phoneme
//! alphabet derived from it.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub const BLANK_ID: usize = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    entries: HashMap<String, Vec<usize>>,
    /// Sorted phoneme symbols; symbol `alphabet[i]` has id `i + 1`.
    alphabet: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeSequence {
    pub ids: Vec<usize>,
    pub text: String,
}

impl PhonemeSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn strip_stress(ph: &str) -> &str {
    ph.trim_end_matches(|c: char| c.is_ascii_digit())
}

impl Lexicon {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses `WORD  PH1 PH2 ...` lines. `;;;` lines are comments, `WORD(n)`
    /// marks an alternate pronunciation and the first one seen wins.
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw: Vec<(String, Vec<String>)> = Vec::new();
        let mut seen: HashMap<String, ()> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with(";;;") {
                continue;
            }
            let mut toks = line.split_whitespace();
            let head = toks.next().unwrap_or_default();
            let word = match head.find('(') {
                Some(open) => {
                    let alt = &head[open..];
                    let ok = alt.len() > 2
                        && alt.ends_with(')')
                        && alt[1..alt.len() - 1].chars().all(|c| c.is_ascii_digit());
                    if !ok || open == 0 {
                        return Err(Error::LexiconLine {
                            line: lineno,
                            msg: format!("malformed alternate marker in `{head}`"),
                        });
                    }
                    &head[..open]
                }
                None => head,
            };
            let phones: Vec<String> = toks.map(|p| strip_stress(p).to_string()).collect();
            if phones.is_empty() {
                return Err(Error::LexiconLine {
                    line: lineno,
                    msg: format!("`{word}` has no phonemes"),
                });
            }
            if let Some(bad) = phones
                .iter()
                .find(|p| p.is_empty() || !p.chars().all(|c| c.is_ascii_alphabetic()))
            {
                return Err(Error::LexiconLine {
                    line: lineno,
                    msg: format!("invalid phoneme `{bad}`"),
                });
            }
            let key = word.to_uppercase();
            if seen.insert(key.clone(), ()).is_none() {
                raw.push((key, phones));
            }
        }
        if raw.is_empty() {
            return Err(Error::Config("lexicon contains no entries".into()));
        }
        let alphabet: Vec<String> = raw
            .iter()
            .flat_map(|(_, p)| p.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: HashMap<&str, usize> = alphabet.iter().enumerate().map(|(i, s)| (s.as_str(), i + 1)).collect();
        let entries = raw
            .iter()
            .map(|(w, p)| (w.clone(), p.iter().map(|s| index[s.as_str()]).collect()))
            .collect();
        Ok(Lexicon { entries, alphabet })
    }

    /// Number of phonemes P; the CTC alphabet has P + 1 symbols.
    pub fn num_phonemes(&self) -> usize {
        self.alphabet.len()
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        id.checked_sub(1).and_then(|i| self.alphabet.get(i)).map(String::as_str)
    }

    pub fn phoneme_id(&self, symbol: &str) -> Option<usize> {
        self.alphabet
            .binary_search_by(|s| s.as_str().cmp(symbol))
            .ok()
            .map(|i| i + 1)
    }

    pub fn lookup(&self, word: &str) -> Option<&[usize]> {
        self.entries.get(&word.to_uppercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lyric text to phoneme ids. Words missing from the dictionary are
    /// spelled out letter by letter when every letter has an entry.
    pub fn to_phonemes(&self, text: &str) -> Result<PhonemeSequence> {
        let cleaned: String = text
            .chars()
            .map(|c| if c.is_alphanumeric() || c == '\'' { c } else { ' ' })
            .collect();
        let mut ids = Vec::new();
        for word in cleaned.split_whitespace() {
            let word = word.trim_matches('\'');
            if word.is_empty() {
                continue;
            }
            if let Some(p) = self.lookup(word) {
                ids.extend_from_slice(p);
                continue;
            }
            let mut spelled = Vec::new();
            for ch in word.chars().filter(|c| c.is_alphanumeric()) {
                match self.lookup(&ch.to_string()) {
                    Some(p) => spelled.extend_from_slice(p),
                    None => return Err(Error::UnknownWord(word.to_string())),
                }
            }
            if spelled.is_empty() {
                return Err(Error::UnknownWord(word.to_string()));
            }
            ids.extend(spelled);
        }
        if ids.is_empty() {
            return Err(Error::EmptyLyric);
        }
        Ok(PhonemeSequence {
            ids,
            text: text.to_string(),
        })
    }

    /// Writes the dictionary back in CMUdict format, words sorted.
    pub fn to_cmudict(&self) -> String {
        let mut words: Vec<_> = self.entries.iter().collect();
        words.sort();
        let mut out = String::from(";;; generated pronunciation dictionary\n");
        for (w, p) in words {
            let syms: Vec<&str> = p.iter().filter_map(|&i| self.symbol(i)).collect();
            out.push_str(&format!("{w}  {}\n", syms.join(" ")));
        }
        out
    }
}
