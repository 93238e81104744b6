//! Synthetic sung-phoneme corpus with exact alignments.
//!
//! Every phoneme is one note of one or two beats. A note is a harmonic tone
//! at a scale pitch with sinusoidal vibrato; the harmonic amplitudes follow a
//! formant envelope specific to the phoneme, and the fundamental is always the
//! strongest partial. A beat spans a whole number of top-level frames, so all
//! boundaries land on frame positions that are multiples of 4.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[cfg(test)]
use crate::audiofront::mel_centers;
use crate::audiofront::{stft_mel, write_wav, AudioConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;

/// Phoneme symbol and formant centres/bandwidths in Hz.
const INVENTORY: [(&str, [(f64, f64); 3]); 10] = [
    ("AA", [(730.0, 90.0), (1090.0, 110.0), (2440.0, 170.0)]),
    ("AE", [(660.0, 80.0), (1720.0, 120.0), (2410.0, 170.0)]),
    ("EH", [(530.0, 70.0), (1840.0, 120.0), (2480.0, 170.0)]),
    ("IY", [(270.0, 50.0), (2290.0, 130.0), (3010.0, 200.0)]),
    ("L", [(360.0, 60.0), (1300.0, 150.0), (2900.0, 250.0)]),
    ("M", [(250.0, 50.0), (1100.0, 200.0), (2200.0, 300.0)]),
    ("N", [(250.0, 50.0), (1650.0, 200.0), (2700.0, 300.0)]),
    ("OW", [(570.0, 80.0), (840.0, 90.0), (2410.0, 170.0)]),
    ("R", [(420.0, 60.0), (1300.0, 120.0), (1650.0, 130.0)]),
    ("UW", [(300.0, 50.0), (870.0, 90.0), (2240.0, 170.0)]),
];

const VOWELS: [&str; 6] = ["AA", "AE", "EH", "IY", "OW", "UW"];

/// Mini dictionary over the inventory; no word repeats a phoneme back to back.
const WORDS: [(&str, &[&str]); 16] = [
    ("MOON", &["M", "UW", "N"]),
    ("LOW", &["L", "OW"]),
    ("ME", &["M", "IY"]),
    ("NO", &["N", "OW"]),
    ("ROW", &["R", "OW"]),
    ("MEAN", &["M", "IY", "N"]),
    ("LANE", &["L", "EH", "N"]),
    ("MORE", &["M", "OW", "R"]),
    ("ALL", &["AA", "L"]),
    ("NAME", &["N", "EH", "M"]),
    ("REAL", &["R", "IY", "L"]),
    ("LOOM", &["L", "UW", "M"]),
    ("MELLOW", &["M", "EH", "L", "OW"]),
    ("LEMON", &["L", "EH", "M", "AA", "N"]),
    ("ALAMO", &["AE", "L", "AA", "M", "OW"]),
    ("ROAM", &["R", "OW", "M"]),
];

/// Scale degrees (semitones above A2 = 110 Hz) of a major pentatonic.
const SCALE: [i32; 5] = [0, 2, 4, 7, 9];

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub n_clips: usize,
    pub min_secs: f64,
    pub max_secs: f64,
    pub pitch_lo: f64,
    pub pitch_hi: f64,
    pub vibrato_rate: f64,
    /// Peak deviation in semitones.
    pub vibrato_depth: f64,
    /// Mel frames per beat; a multiple of 4.
    pub beat_frames: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_clips: 8,
            min_secs: 5.0,
            max_secs: 15.0,
            pitch_lo: 150.0,
            pitch_hi: 400.0,
            vibrato_rate: 5.5,
            vibrato_depth: 0.2,
            beat_frames: 24,
            seed: 7,
        }
    }
}

impl CorpusSpec {
    pub fn from_settings(s: &super::config::Settings) -> Result<Self> {
        s.check_known(&[
            "n_clips",
            "min_secs",
            "max_secs",
            "pitch_lo",
            "pitch_hi",
            "vibrato_rate",
            "vibrato_depth",
            "beat_frames",
            "seed",
        ])?;
        let d = CorpusSpec::default();
        Ok(CorpusSpec {
            n_clips: s.get_or("n_clips", d.n_clips)?,
            min_secs: s.get_or("min_secs", d.min_secs)?,
            max_secs: s.get_or("max_secs", d.max_secs)?,
            pitch_lo: s.get_or("pitch_lo", d.pitch_lo)?,
            pitch_hi: s.get_or("pitch_hi", d.pitch_hi)?,
            vibrato_rate: s.get_or("vibrato_rate", d.vibrato_rate)?,
            vibrato_depth: s.get_or("vibrato_depth", d.vibrato_depth)?,
            beat_frames: s.get_or("beat_frames", d.beat_frames)?,
            seed: s.get_or("seed", d.seed)?,
        })
    }

    pub fn validate(&self, audio: &AudioConfig) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_clips == 0 {
            return err("n_clips must be positive".into());
        }
        if !(self.min_secs > 0.0 && self.min_secs < self.max_secs) {
            return err(format!("clip range [{}, {}] s is empty", self.min_secs, self.max_secs));
        }
        if !(self.pitch_lo > 0.0 && self.pitch_lo < self.pitch_hi && self.pitch_hi < audio.sample_rate as f64 / 8.0) {
            return err(format!(
                "pitch range [{}, {}] Hz is invalid",
                self.pitch_lo, self.pitch_hi
            ));
        }
        if self.beat_frames == 0 || !self.beat_frames.is_multiple_of(4) {
            return err(format!(
                "beat_frames {} must be a positive multiple of 4",
                self.beat_frames
            ));
        }
        if self.vibrato_rate < 0.0 || self.vibrato_depth < 0.0 {
            return err("vibrato parameters must be non-negative".into());
        }
        let beat = self.beat_frames as f64 * audio.hop as f64 / audio.sample_rate as f64;
        // the longest sentence plus lead, gap and tail silence has to fit
        if 3.0 * 5.0 * 2.0 * beat + 3.0 * beat > self.max_secs {
            return err(format!("beat of {beat:.3} s is too long for {} s clips", self.max_secs));
        }
        Ok(())
    }

    fn scale_pitches(&self) -> Vec<f64> {
        (-24..48)
            .filter(|s: &i32| SCALE.contains(&s.rem_euclid(12)))
            .map(|s| 110.0 * 2f64.powf(s as f64 / 12.0))
            .filter(|&f| f >= self.pitch_lo && f <= self.pitch_hi)
            .collect()
    }
}

/// One phoneme note or one silent stretch, in mel frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Phoneme symbol, or `None` for silence.
    pub phoneme: Option<String>,
    pub start: usize,
    pub end: usize,
    /// Note pitch in Hz (0 for silence).
    pub f0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub phonemes: Vec<String>,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipInfo {
    pub id: String,
    pub text: String,
    pub n_samples: usize,
    pub n_frames: usize,
    pub sentences: Vec<Sentence>,
    pub segments: Vec<Segment>,
}

impl ClipInfo {
    pub fn phonemes(&self) -> Vec<String> {
        self.sentences.iter().flat_map(|s| s.phonemes.iter().cloned()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub audio_fingerprint: String,
    pub sample_rate: u32,
    pub hop: usize,
    pub beat_frames: usize,
    pub seed: u64,
    pub clips: Vec<ClipInfo>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("manifest.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))
    }

    pub fn mel_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.mel"))
    }

    pub fn wav_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.wav"))
    }
}

pub fn mini_lexicon_text() -> String {
    let mut out = String::from(";;; miniature pronunciation dictionary\n");
    for (w, ph) in WORDS {
        let marked: Vec<String> = ph
            .iter()
            .map(|p| {
                if VOWELS.contains(p) {
                    format!("{p}1")
                } else {
                    p.to_string()
                }
            })
            .collect();
        out.push_str(&format!("{w}  {}\n", marked.join(" ")));
    }
    out
}

pub fn mini_lexicon() -> Lexicon {
    Lexicon::parse(&mini_lexicon_text()).expect("built-in lexicon parses")
}

fn formants(symbol: &str) -> &'static [(f64, f64); 3] {
    &INVENTORY
        .iter()
        .find(|(s, _)| *s == symbol)
        .expect("symbol from the inventory")
        .1
}

/// Relative amplitude of a harmonic at `f` Hz, at most 0.45.
fn envelope(symbol: &str, f: f64) -> f64 {
    let bumps: f64 = formants(symbol)
        .iter()
        .enumerate()
        .map(|(i, &(c, bw))| (0.9f64).powi(i as i32) * (-0.5 * ((f - c) / bw).powi(2)).exp())
        .sum();
    0.45 * (0.03 + bumps).min(1.0) / 1.03
}

struct Note<'a> {
    symbol: &'a str,
    f0: f64,
    start: usize,
    len: usize,
}

fn render_note(out: &mut [f64], n: &Note<'_>, spec: &CorpusSpec, sr: f64) {
    let ramp = (0.02 * sr) as usize;
    let mut phase = 0.0f64;
    let n_harm = ((sr / 2.0 * 0.9) / (n.f0 * 2f64.powf(spec.vibrato_depth / 12.0))).floor() as usize;
    let amps: Vec<f64> = (1..=n_harm.min(40))
        .map(|k| {
            if k == 1 {
                1.0
            } else {
                envelope(n.symbol, k as f64 * n.f0)
            }
        })
        .collect();
    for i in 0..n.len {
        let t = i as f64 / sr;
        let f = n.f0 * 2f64.powf(spec.vibrato_depth / 12.0 * (2.0 * PI * spec.vibrato_rate * t).sin());
        phase += 2.0 * PI * f / sr;
        let mut v = 0.0;
        for (k, a) in amps.iter().enumerate() {
            v += a * ((k + 1) as f64 * phase).sin();
        }
        let gain = (i.min(n.len - 1 - i) as f64 / ramp as f64).min(1.0);
        out[n.start + i] += 0.12 * gain * v;
    }
}

pub struct Clip {
    pub info: ClipInfo,
    pub wave: Vec<f32>,
}

/// Draws one clip from `rng`.
fn make_clip(idx: usize, spec: &CorpusSpec, audio: &AudioConfig, rng: &mut ChaCha8Rng) -> Clip {
    let sr = audio.sample_rate as f64;
    let beat_samples = spec.beat_frames * audio.hop;
    let beat_secs = beat_samples as f64 / sr;
    let max_beats = (spec.max_secs / beat_secs).floor() as usize;
    let min_beats = (spec.min_secs / beat_secs).ceil() as usize;
    let target = rng.gen_range(min_beats..=max_beats);
    let pitches = spec.scale_pitches();

    let mut segments = Vec::new();
    let mut sentences = Vec::new();
    let mut notes = Vec::new();
    let mut beat = 1usize;
    segments.push(Segment {
        phoneme: None,
        start: 0,
        end: spec.beat_frames,
        f0: 0.0,
    });
    let mut last_phone: Option<&str> = None;
    loop {
        let n_words = rng.gen_range(2..=3);
        let mut words: Vec<(&str, &[&str])> = Vec::new();
        while words.len() < n_words {
            let w = *WORDS.choose(rng).expect("non-empty word list");
            let prev = words.last().map(|(_, p)| *p.last().unwrap()).or(last_phone);
            if prev != Some(w.1[0]) {
                words.push(w);
            }
        }
        let phones: Vec<&str> = words.iter().flat_map(|(_, p)| p.iter().copied()).collect();
        let lens: Vec<usize> = phones.iter().map(|_| rng.gen_range(1..=2)).collect();
        let need: usize = lens.iter().sum::<usize>() + 1;
        if beat + need > target && !sentences.is_empty() {
            break;
        }
        if beat + need > max_beats {
            break;
        }
        let s_start = beat * spec.beat_frames;
        let mut pi = rng.gen_range(0..pitches.len());
        for (&ph, &nb) in phones.iter().zip(&lens) {
            // stepwise melody within the scale
            let step: i32 = rng.gen_range(-2..=2);
            pi = (pi as i32 + step).clamp(0, pitches.len() as i32 - 1) as usize;
            let f0 = pitches[pi];
            segments.push(Segment {
                phoneme: Some(ph.to_string()),
                start: beat * spec.beat_frames,
                end: (beat + nb) * spec.beat_frames,
                f0,
            });
            notes.push(Note {
                symbol: ph,
                f0,
                start: beat * beat_samples,
                len: nb * beat_samples,
            });
            beat += nb;
        }
        sentences.push(Sentence {
            text: words
                .iter()
                .map(|(w, _)| w.to_lowercase())
                .collect::<Vec<_>>()
                .join(" "),
            phonemes: phones.iter().map(|s| s.to_string()).collect(),
            start: s_start,
            end: beat * spec.beat_frames,
        });
        last_phone = phones.last().copied();
        segments.push(Segment {
            phoneme: None,
            start: beat * spec.beat_frames,
            end: (beat + 1) * spec.beat_frames,
            f0: 0.0,
        });
        beat += 1;
    }
    let total_beats = beat.max(min_beats);
    if total_beats > beat {
        segments.push(Segment {
            phoneme: None,
            start: beat * spec.beat_frames,
            end: total_beats * spec.beat_frames,
            f0: 0.0,
        });
    }
    let n_samples = total_beats * beat_samples;
    let mut wave = vec![0.0f64; n_samples];
    for n in &notes {
        render_note(&mut wave, n, spec, sr);
    }
    let text = sentences.iter().map(|s| s.text.clone()).collect::<Vec<_>>().join(". ");
    Clip {
        info: ClipInfo {
            id: format!("clip{idx:03}"),
            text,
            n_samples,
            n_frames: total_beats * spec.beat_frames,
            sentences,
            segments,
        },
        wave: wave.into_iter().map(|v| v as f32).collect(),
    }
}

/// Generates the clips without touching the filesystem.
pub fn generate(spec: &CorpusSpec, audio: &AudioConfig) -> Result<Vec<Clip>> {
    spec.validate(audio)?;
    audio.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.n_clips).map(|i| make_clip(i, spec, audio, &mut rng)).collect())
}

/// Writes WAV and MEL1 files, `manifest.json` and `lexicon.dict` into `dir`.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec, audio: &AudioConfig) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let clips = generate(spec, audio)?;
    let mut infos = Vec::new();
    for c in clips {
        write_wav(&Manifest::wav_path(dir, &c.info.id), &c.wave, audio.sample_rate)?;
        let mel = stft_mel(&c.wave, audio)?;
        debug_assert_eq!(mel.n_frames, c.info.n_frames);
        mel.save(&Manifest::mel_path(dir, &c.info.id))?;
        infos.push(c.info);
    }
    let manifest = Manifest {
        audio_fingerprint: audio.fingerprint(),
        sample_rate: audio.sample_rate,
        hop: audio.hop,
        beat_frames: spec.beat_frames,
        seed: spec.seed,
        clips: infos,
    };
    let p = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(&p, e.to_string()))?;
    std::fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
    let lp = dir.join("lexicon.dict");
    std::fs::write(&lp, mini_lexicon_text()).map_err(|e| Error::io(&lp, e))?;
    Ok(manifest)
}

/// A corpus loaded from disk: manifest, mel spectrograms and lexicon.
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub mels: Vec<MelSpectrogram>,
    pub lexicon: Lexicon,
}

impl Corpus {
    pub fn load(dir: &Path, lexicon: Option<&Path>) -> Result<Self> {
        let manifest = Manifest::load(dir)?;
        let lexicon = Lexicon::load(
            &lexicon
                .map(Path::to_path_buf)
                .unwrap_or_else(|| dir.join("lexicon.dict")),
        )?;
        let mut mels = Vec::new();
        for c in &manifest.clips {
            let mel = MelSpectrogram::load(&Manifest::mel_path(dir, &c.id), &manifest.audio_fingerprint)?;
            if mel.n_frames != c.n_frames {
                return Err(Error::Mismatch(format!(
                    "{}: mel has {} frames, manifest says {}",
                    c.id, mel.n_frames, c.n_frames
                )));
            }
            mels.push(mel);
        }
        if mels.is_empty() {
            return Err(Error::Input(format!("corpus at {} has no clips", dir.display())));
        }
        Ok(Corpus {
            dir: dir.to_path_buf(),
            manifest,
            mels,
            lexicon,
        })
    }

    pub fn phoneme_ids(&self, symbols: &[String]) -> Result<Vec<usize>> {
        symbols
            .iter()
            .map(|s| {
                self.lexicon
                    .phoneme_id(s)
                    .ok_or_else(|| Error::Mismatch(format!("phoneme {s} is not in the lexicon alphabet")))
            })
            .collect()
    }

    /// Mean and standard deviation over every mel value of the corpus.
    pub fn mel_stats(&self) -> (f64, f64) {
        let n: usize = self.mels.iter().map(|m| m.data.len()).sum();
        let mean = self.mels.iter().flat_map(|m| &m.data).map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = self
            .mels
            .iter()
            .flat_map(|m| &m.data)
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        (mean, var.sqrt().max(1e-6))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_covers_inventory_without_adjacent_repeats() {
        let lex = mini_lexicon();
        assert_eq!(lex.num_phonemes(), INVENTORY.len());
        for (_, ph) in WORDS {
            assert!(ph.windows(2).all(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn envelope_stays_below_fundamental() {
        for (s, _) in INVENTORY {
            for k in 2..40 {
                assert!(envelope(s, k as f64 * 150.0) <= 0.45);
            }
        }
    }

    #[test]
    fn clips_respect_duration_and_alignment() {
        let spec = CorpusSpec {
            n_clips: 4,
            ..CorpusSpec::default()
        };
        let audio = AudioConfig::default();
        for c in generate(&spec, &audio).unwrap() {
            let secs = c.wave.len() as f64 / audio.sample_rate as f64;
            assert!((5.0..=15.0).contains(&secs), "{secs}");
            let segs = &c.info.segments;
            assert_eq!(segs[0].start, 0);
            assert_eq!(segs.last().unwrap().end, c.info.n_frames);
            assert!(segs.windows(2).all(|w| w[0].end == w[1].start));
            assert!(segs.iter().all(|s| s.start % 4 == 0 && s.end > s.start));
            let phones: Vec<&str> = segs.iter().filter_map(|s| s.phoneme.as_deref()).collect();
            assert!(phones.windows(2).all(|w| w[0] != w[1]));
            assert_eq!(phones.len(), c.info.phonemes().len());
            assert!(c.wave.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = CorpusSpec {
            n_clips: 2,
            ..CorpusSpec::default()
        };
        let audio = AudioConfig::default();
        let a = generate(&spec, &audio).unwrap();
        let b = generate(&spec, &audio).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.info, y.info);
            assert_eq!(x.wave, y.wave);
        }
    }

    #[test]
    fn sentence_text_maps_back_to_phonemes() {
        let lex = mini_lexicon();
        let spec = CorpusSpec {
            n_clips: 2,
            ..CorpusSpec::default()
        };
        for c in generate(&spec, &AudioConfig::default()).unwrap() {
            for s in &c.info.sentences {
                let ids = lex.to_phonemes(&s.text).unwrap().ids;
                let syms: Vec<String> = ids.iter().map(|&i| lex.symbol(i).unwrap().to_string()).collect();
                assert_eq!(syms, s.phonemes);
            }
        }
    }

    #[test]
    fn mel_peaks_track_the_pitch_contour() {
        let spec = CorpusSpec {
            n_clips: 1,
            ..CorpusSpec::default()
        };
        let audio = AudioConfig::default();
        let centers = mel_centers(&audio);
        let clip = generate(&spec, &audio).unwrap().remove(0);
        let mel = stft_mel(&clip.wave, &audio).unwrap();
        let mut checked = 0;
        for seg in clip.info.segments.iter().filter(|s| s.phoneme.is_some()) {
            let nearest = |f: f64| {
                (0..centers.len())
                    .min_by(|&a, &b| (centers[a] - f).abs().total_cmp(&(centers[b] - f).abs()))
                    .unwrap()
            };
            let lo = nearest(seg.f0 * 2f64.powf(-spec.vibrato_depth / 12.0));
            let hi = nearest(seg.f0 * 2f64.powf(spec.vibrato_depth / 12.0));
            for t in seg.start + 3..seg.end - 3 {
                let row = mel.frame(t);
                let peak = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                assert!(
                    peak + 1 >= lo && peak <= hi + 1,
                    "frame {t}: peak bin {peak}, pitch bins {lo}..={hi}"
                );
                checked += 1;
            }
        }
        assert!(checked > 100);
    }
}
