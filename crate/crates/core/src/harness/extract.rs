//! Frozen-autoencoder code export paired with per-sentence phoneme targets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use crate::error::{Error, Result};
use crate::vqvae::{CodeTriple, VqVae};

/// One sentence of a clip: its phoneme ids and the top-level code range
/// covering its frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceCodes {
    pub phonemes: Vec<usize>,
    pub top_start: usize,
    pub top_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeEntry {
    pub id: String,
    pub file: String,
    pub sentences: Vec<SentenceCodes>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeIndex {
    pub audio_fingerprint: String,
    pub codebook_size: usize,
    pub n_phonemes: usize,
    pub entries: Vec<CodeEntry>,
}

impl CodeIndex {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join("codes.json")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = Self::path(dir);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))
    }
}

/// A training example for the language model.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub phonemes: Vec<usize>,
    pub codes: CodeTriple,
}

/// The index plus every clip's codes, cut into sentence examples.
#[derive(Clone, Debug)]
pub struct CodeDataset {
    pub index: CodeIndex,
    pub clips: Vec<CodeTriple>,
    pub examples: Vec<Example>,
}

impl CodeDataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let index = CodeIndex::load(dir)?;
        let mut clips = Vec::new();
        let mut examples = Vec::new();
        for e in &index.entries {
            let codes = CodeTriple::load(&dir.join(&e.file))?;
            codes.check_range(index.codebook_size)?;
            for s in &e.sentences {
                if s.top_len == 0 || s.top_start + s.top_len > codes.len() {
                    return Err(Error::Mismatch(format!(
                        "{}: sentence codes {}..{} exceed {} top frames",
                        e.id,
                        s.top_start,
                        s.top_start + s.top_len,
                        codes.len()
                    )));
                }
                examples.push(Example {
                    phonemes: s.phonemes.clone(),
                    codes: codes.slice(s.top_start, s.top_len),
                });
            }
            clips.push(codes);
        }
        if examples.is_empty() {
            return Err(Error::Input(format!("code dataset at {} is empty", dir.display())));
        }
        Ok(CodeDataset { index, clips, examples })
    }
}

/// Encodes every clip with the frozen autoencoder and writes `<id>.cod`
/// files and `codes.json` into `out_dir`.
pub fn extract_codes<R: numkit::Real>(corpus: &Corpus, vq: &VqVae<R>, out_dir: &Path) -> Result<CodeIndex> {
    if vq.cfg.audio_fingerprint != corpus.manifest.audio_fingerprint {
        return Err(Error::Mismatch(format!(
            "autoencoder trained on audio config `{}`, corpus mels use `{}`",
            vq.cfg.audio_fingerprint, corpus.manifest.audio_fingerprint
        )));
    }
    if vq.cfg.n_phonemes != corpus.lexicon.num_phonemes() {
        return Err(Error::Mismatch(format!(
            "autoencoder has {} phonemes, lexicon has {}",
            vq.cfg.n_phonemes,
            corpus.lexicon.num_phonemes()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::new();
    for (info, mel) in corpus.manifest.clips.iter().zip(&corpus.mels) {
        let codes = vq.encode_codes(mel)?;
        let file = format!("{}.cod", info.id);
        codes.save(&out_dir.join(&file))?;
        let l = codes.len();
        let mut sentences = Vec::new();
        for s in &info.sentences {
            let start = (s.start / 4).min(l);
            let end = s.end.div_ceil(4).min(l);
            if end > start && !s.phonemes.is_empty() {
                sentences.push(SentenceCodes {
                    phonemes: corpus.phoneme_ids(&s.phonemes)?,
                    top_start: start,
                    top_len: end - start,
                });
            }
        }
        entries.push(CodeEntry {
            id: info.id.clone(),
            file,
            sentences,
        });
    }
    let index = CodeIndex {
        audio_fingerprint: corpus.manifest.audio_fingerprint.clone(),
        codebook_size: vq.cfg.codebook_size,
        n_phonemes: vq.cfg.n_phonemes,
        entries,
    };
    let p = CodeIndex::path(out_dir);
    let json = serde_json::to_string_pretty(&index).map_err(|e| Error::format(&p, e.to_string()))?;
    std::fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
    Ok(index)
}
