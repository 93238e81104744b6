//! Lyrics to waveform: phonemes, sampled codes, decoded mel, Griffin-Lim.

use std::path::{Path, PathBuf};

use numkit::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::Settings;
use crate::audiofront::{griffin_lim, write_wav, AudioConfig};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::lm::{LanguageModel, SamplerConfig};
use crate::vqvae::{CodeTriple, VqVae};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub sampler: SamplerConfig,
    /// Windowed sampling over lyric lines, in top-level codes.
    pub window: usize,
    pub hop: usize,
    pub griffin_lim_iters: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sampler: SamplerConfig::default(),
            window: 64,
            hop: 32,
            griffin_lim_iters: 32,
        }
    }
}

const KEYS: [&str; 7] = [
    "nucleus_p",
    "temperature",
    "seed",
    "max_top_len",
    "window",
    "hop",
    "griffin_lim_iters",
];

impl SynthConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        s.check_known(&KEYS)?;
        let d = SynthConfig::default();
        let cfg = SynthConfig {
            sampler: SamplerConfig {
                nucleus_p: s.get_or("nucleus_p", d.sampler.nucleus_p)?,
                temperature: s.get_or("temperature", d.sampler.temperature)?,
                seed: s.get_or("seed", d.sampler.seed)?,
                max_top_len: s.get_or("max_top_len", d.sampler.max_top_len)?,
            },
            window: s.get_or("window", d.window)?,
            hop: s.get_or("hop", d.hop)?,
            griffin_lim_iters: s.get_or("griffin_lim_iters", d.griffin_lim_iters)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if self.hop == 0 || self.hop > self.window || self.window > self.sampler.max_top_len {
            return Err(Error::Config(format!(
                "need 0 < hop ≤ window ≤ max_top_len, got hop={} window={} max_top_len={}",
                self.hop, self.window, self.sampler.max_top_len
            )));
        }
        if self.griffin_lim_iters == 0 {
            return Err(Error::Config("griffin_lim_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub codes: CodeTriple,
    pub truncated: bool,
    pub n_samples: usize,
    pub sample_rate: u32,
    pub wav: PathBuf,
    pub mel: PathBuf,
    pub code_file: PathBuf,
}

impl SynthOutput {
    pub fn seconds(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate as f64
    }
}

/// Fails unless the two checkpoints and the lexicon agree on sizes.
pub fn check_compatible<A: Real, B: Real>(vq: &VqVae<A>, lm: &LanguageModel<B>, lexicon: &Lexicon) -> Result<()> {
    if vq.cfg.codebook_size != lm.cfg.codebook_size {
        return Err(Error::Mismatch(format!(
            "autoencoder codebook size {} differs from language model {}",
            vq.cfg.codebook_size, lm.cfg.codebook_size
        )));
    }
    if lm.cfg.n_phonemes != lexicon.num_phonemes() || vq.cfg.n_phonemes != lexicon.num_phonemes() {
        return Err(Error::Mismatch(format!(
            "phoneme alphabets differ: lexicon {}, autoencoder {}, language model {}",
            lexicon.num_phonemes(),
            vq.cfg.n_phonemes,
            lm.cfg.n_phonemes
        )));
    }
    Ok(())
}

/// Synthesizes `lyrics` (one section per non-empty line) and writes
/// `<stem>.wav`, `<stem>.mel` and `<stem>.cod` into `out_dir`.
pub fn synthesize<A: Real, B: Real>(
    lyrics: &str,
    lexicon: &Lexicon,
    vq: &VqVae<A>,
    lm: &LanguageModel<B>,
    cfg: &SynthConfig,
    out_dir: &Path,
    stem: &str,
) -> Result<SynthOutput> {
    cfg.validate()?;
    check_compatible(vq, lm, lexicon)?;
    let sections = lyrics
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| lexicon.to_phonemes(l).map(|p| p.ids))
        .collect::<Result<Vec<_>>>()?;
    if sections.is_empty() {
        return Err(Error::EmptyLyric);
    }
    let audio = AudioConfig::from_fingerprint(&vq.cfg.audio_fingerprint)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sampler.seed);
    let generated = if sections.len() == 1 {
        lm.generate(&sections[0], &cfg.sampler, &mut rng)?
    } else {
        lm.windowed_generate(&sections, cfg.window, cfg.hop, &cfg.sampler, &mut rng)?
            .0
    };
    let mel = vq.decode_codes(&generated.codes, &vq.cfg.audio_fingerprint)?;
    let wave = griffin_lim(&mel, &audio, cfg.griffin_lim_iters)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let wav = out_dir.join(format!("{stem}.wav"));
    let mel_path = out_dir.join(format!("{stem}.mel"));
    let code_file = out_dir.join(format!("{stem}.cod"));
    write_wav(&wav, &wave, audio.sample_rate)?;
    mel.save(&mel_path)?;
    generated.codes.save(&code_file)?;
    Ok(SynthOutput {
        codes: generated.codes,
        truncated: generated.truncated,
        n_samples: wave.len(),
        sample_rate: audio.sample_rate,
        wav,
        mel: mel_path,
        code_file,
    })
}
