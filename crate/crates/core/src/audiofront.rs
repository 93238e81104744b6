//! Waveform to log-mel analysis, Griffin-Lim reconstruction and the WAV and
//! mel file formats.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        AudioConfig {
            sample_rate: 44_100,
            n_fft: 2048,
            hop: 512,
            n_mels: 80,
            fmin: 0.0,
            fmax: 22_050.0,
            log_floor: 1e-5,
        }
    }
}

impl AudioConfig {
    pub fn validate(&self) -> Result<()> {
        let bins = self.n_fft / 2 + 1;
        let fail = |m: String| Err(Error::Config(m));
        if self.n_fft < 4 || self.hop == 0 || self.hop > self.n_fft {
            return fail(format!(
                "need 0 < hop ≤ n_fft, got hop={} n_fft={}",
                self.hop, self.n_fft
            ));
        }
        if self.n_mels == 0 || self.n_mels >= bins {
            return fail(format!("n_mels={} must be in 1..{}", self.n_mels, bins));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return fail(format!(
                "need 0 ≤ fmin < fmax ≤ sample_rate/2, got fmin={} fmax={}",
                self.fmin, self.fmax
            ));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return fail(format!("log_floor must be positive, got {}", self.log_floor));
        }
        Ok(())
    }

    /// Identifies every analysis parameter that affects mel values.
    pub fn fingerprint(&self) -> String {
        format!(
            "sr={};n_fft={};hop={};n_mels={};fmin={};fmax={};floor={:e}",
            self.sample_rate, self.n_fft, self.hop, self.n_mels, self.fmin, self.fmax, self.log_floor
        )
    }

    /// Inverse of `fingerprint`.
    pub fn from_fingerprint(fp: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed audio fingerprint `{fp}`"));
        let mut fields = std::collections::HashMap::new();
        for kv in fp.split(';') {
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            fields.insert(k, v);
        }
        fn get<T: std::str::FromStr>(f: &std::collections::HashMap<&str, &str>, k: &str) -> Option<T> {
            f.get(k)?.parse().ok()
        }
        let cfg = AudioConfig {
            sample_rate: get(&fields, "sr").ok_or_else(bad)?,
            n_fft: get(&fields, "n_fft").ok_or_else(bad)?,
            hop: get(&fields, "hop").ok_or_else(bad)?,
            n_mels: get(&fields, "n_mels").ok_or_else(bad)?,
            fmin: get(&fields, "fmin").ok_or_else(bad)?,
            fmax: get(&fields, "fmax").ok_or_else(bad)?,
            log_floor: get(&fields, "floor").ok_or_else(bad)?,
        };
        cfg.validate()?;
        if cfg.fingerprint() != fp {
            return Err(bad());
        }
        Ok(cfg)
    }

    pub fn floor_value(&self) -> f32 {
        self.log_floor.ln() as f32
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// Frames × mel bins of natural-log magnitudes, row-major by frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub n_frames: usize,
    pub n_mels: usize,
    pub data: Vec<f32>,
    pub fingerprint: String,
}

impl MelSpectrogram {
    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    /// Copy of frames `start..start+len`.
    pub fn slice(&self, start: usize, len: usize) -> MelSpectrogram {
        MelSpectrogram {
            n_frames: len,
            n_mels: self.n_mels,
            data: self.data[start * self.n_mels..(start + len) * self.n_mels].to_vec(),
            fingerprint: self.fingerprint.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + 4 * self.data.len());
        buf.extend_from_slice(b"MEL1");
        buf.extend_from_slice(&(self.n_frames as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n_mels as u32).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Reads a MEL1 file. The format carries no analysis fingerprint, so the
    /// caller supplies the one recorded alongside it.
    pub fn load(path: &Path, fingerprint: &str) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        if buf.len() < 12 || &buf[..4] != b"MEL1" {
            return Err(Error::format(path, "missing MEL1 header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
        let (t, m) = (u32_at(4), u32_at(8));
        if buf.len() != 12 + 4 * t * m {
            return Err(Error::format(path, format!("expected {t}×{m} floats")));
        }
        let data = buf[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(MelSpectrogram {
            n_frames: t,
            n_mels: m,
            data,
            fingerprint: fingerprint.to_string(),
        })
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Centre frequencies of the mel filters in Hz.
pub fn mel_centers(cfg: &AudioConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Triangular filters on the HTK mel scale with unit peaks, `n_mels × bins`.
pub fn mel_filterbank(cfg: &AudioConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let pts: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mut fb = vec![vec![0.0; cfg.n_bins()]; cfg.n_mels];
    for (m, row) in fb.iter_mut().enumerate() {
        let (l, c, r) = (pts[m], pts[m + 1], pts[m + 2]);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let v = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            *w = v;
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(Error::Config(format!(
                "mel filter {m} ({l:.1}–{r:.1} Hz) covers no FFT bin; lower n_mels or raise n_fft"
            )));
        }
    }
    Ok(fb)
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of analysis frames before padding.
pub fn raw_frames(n_samples: usize, hop: usize) -> usize {
    n_samples.div_ceil(hop)
}

/// Frame count after padding to a multiple of 4.
pub fn padded_frames(n_samples: usize, hop: usize) -> usize {
    raw_frames(n_samples, hop).div_ceil(4) * 4
}

struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Stft {
    fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Stft {
            n_fft,
            hop,
            window: hann(n_fft),
            fwd: planner.plan_fft_forward(n_fft),
            inv: planner.plan_fft_inverse(n_fft),
        }
    }

    /// Frame `t` is centred on sample `t·hop`; samples outside the signal
    /// are zero.
    fn analyze(&self, x: &[f64], n_frames: usize) -> Vec<Vec<Complex<f64>>> {
        let half = self.n_fft / 2;
        let bins = half + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        (0..n_frames)
            .map(|t| {
                let start = (t * self.hop) as isize - half as isize;
                for (i, b) in buf.iter_mut().enumerate() {
                    let s = start + i as isize;
                    let v = if s >= 0 && (s as usize) < x.len() {
                        x[s as usize]
                    } else {
                        0.0
                    };
                    *b = Complex::new(v * self.window[i], 0.0);
                }
                self.fwd.process(&mut buf);
                buf[..bins].to_vec()
            })
            .collect()
    }

    /// Weighted overlap-add inverse of `analyze`, returning `len` samples.
    fn synthesize(&self, spec: &[Vec<Complex<f64>>], len: usize) -> Vec<f64> {
        let half = self.n_fft / 2;
        let mut out = vec![0.0; len];
        let mut wsum = vec![0.0; len];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let scale = 1.0 / self.n_fft as f64;
        for (t, frame) in spec.iter().enumerate() {
            buf[..=half].copy_from_slice(frame);
            for k in 1..half {
                buf[self.n_fft - k] = frame[k].conj();
            }
            self.inv.process(&mut buf);
            let start = (t * self.hop) as isize - half as isize;
            for i in 0..self.n_fft {
                let s = start + i as isize;
                if s >= 0 && (s as usize) < len {
                    let w = self.window[i];
                    out[s as usize] += buf[i].re * scale * w;
                    wsum[s as usize] += w * w;
                }
            }
        }
        for (o, w) in out.iter_mut().zip(&wsum) {
            if *w > 1e-8 {
                *o /= w;
            }
        }
        out
    }
}

/// Log-mel spectrogram with `ceil(len/hop)` frames, right-padded with the
/// floor value to a multiple of 4 frames.
pub fn stft_mel(wave: &[f32], cfg: &AudioConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if wave.is_empty() {
        return Err(Error::Input("empty waveform".into()));
    }
    if wave.len() < cfg.n_fft {
        return Err(Error::Input(format!(
            "waveform has {} samples, fewer than n_fft={}",
            wave.len(),
            cfg.n_fft
        )));
    }
    let fb = mel_filterbank(cfg)?;
    let x: Vec<f64> = wave.iter().map(|&v| v as f64).collect();
    let raw = raw_frames(x.len(), cfg.hop);
    let total = padded_frames(x.len(), cfg.hop);
    let stft = Stft::new(cfg.n_fft, cfg.hop);
    let spec = stft.analyze(&x, raw);
    let floor = cfg.floor_value();
    let mut data = vec![floor; total * cfg.n_mels];
    for (t, frame) in spec.iter().enumerate() {
        let mag: Vec<f64> = frame.iter().map(|c| c.norm()).collect();
        for (m, row) in fb.iter().enumerate() {
            let e: f64 = row.iter().zip(&mag).map(|(w, a)| w * a).sum();
            data[t * cfg.n_mels + m] = e.max(cfg.log_floor).ln() as f32;
        }
    }
    Ok(MelSpectrogram {
        n_frames: total,
        n_mels: cfg.n_mels,
        data,
        fingerprint: cfg.fingerprint(),
    })
}

/// Phase reconstruction from a log-mel spectrogram. The filterbank
/// pseudo-inverse lifts mel energies to linear magnitudes; the output has
/// `n_frames · hop` samples.
pub fn griffin_lim(mel: &MelSpectrogram, cfg: &AudioConfig, n_iters: usize) -> Result<Vec<f32>> {
    cfg.validate()?;
    if n_iters == 0 {
        return Err(Error::Config("griffin_lim needs at least one iteration".into()));
    }
    if mel.n_mels != cfg.n_mels {
        return Err(Error::Mismatch(format!(
            "mel has {} bins, audio config expects {}",
            mel.n_mels, cfg.n_mels
        )));
    }
    let fb = mel_filterbank(cfg)?;
    let bins = cfg.n_bins();
    let fbm = DMatrix::from_fn(cfg.n_mels, bins, |i, j| fb[i][j]);
    let pinv = fbm
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::Config(format!("filterbank pseudo-inverse: {e}")))?;
    let t = mel.n_frames;
    let melm = DMatrix::from_fn(cfg.n_mels, t, |i, j| (mel.frame(j)[i] as f64).exp());
    let lin = (pinv * melm).map(|v| v.max(0.0));

    let len = t * cfg.hop;
    let stft = Stft::new(cfg.n_fft, cfg.hop);
    let mut rng = ChaCha8Rng::seed_from_u64(0x6c_696d);
    let mut spec: Vec<Vec<Complex<f64>>> = (0..t)
        .map(|j| {
            (0..bins)
                .map(|k| Complex::from_polar(lin[(k, j)], rng.gen_range(0.0..2.0 * PI)))
                .collect()
        })
        .collect();
    let mut wave = stft.synthesize(&spec, len);
    for _ in 1..n_iters {
        let est = stft.analyze(&wave, t);
        for (j, (frame, e)) in spec.iter_mut().zip(&est).enumerate() {
            for (k, (c, ek)) in frame.iter_mut().zip(e).enumerate() {
                let n = ek.norm();
                let phase = if n > 1e-12 { ek / n } else { Complex::new(1.0, 0.0) };
                *c = phase * lin[(k, j)];
            }
        }
        wave = stft.synthesize(&spec, len);
    }
    Ok(wave.into_iter().map(|v| v as f32).collect())
}

pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Mono samples in [−1, 1] and the sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    if spec.channels != 1 {
        return Err(Error::format(
            path,
            format!("expected mono, found {} channels", spec.channels),
        ));
    }
    let samples = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<Vec<_>, _>>()?
        }
        hound::SampleFormat::Float => r.samples::<f32>().collect::<std::result::Result<Vec<_>, _>>()?,
    };
    Ok((samples, spec.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_round_trip() {
        let cfg = AudioConfig {
            sample_rate: 16_000,
            n_fft: 512,
            hop: 128,
            n_mels: 40,
            fmin: 30.0,
            fmax: 7600.0,
            log_floor: 1e-4,
        };
        assert_eq!(AudioConfig::from_fingerprint(&cfg.fingerprint()).unwrap(), cfg);
        assert_eq!(
            AudioConfig::from_fingerprint(&AudioConfig::default().fingerprint()).unwrap(),
            AudioConfig::default()
        );
        assert!(AudioConfig::from_fingerprint("sr=1;hop=2").is_err());
    }

    fn sine(freq: f64, secs: f64, sr: u32) -> Vec<f32> {
        let n = (secs * sr as f64) as usize;
        (0..n)
            .map(|i| (0.5 * (2.0 * PI * freq * i as f64 / sr as f64).sin()) as f32)
            .collect()
    }

    #[test]
    fn default_config_is_valid() {
        AudioConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = AudioConfig::default();
        c.hop = 4096;
        assert!(c.validate().is_err());
        let mut c = AudioConfig::default();
        c.fmax = 30_000.0;
        assert!(c.validate().is_err());
        let mut c = AudioConfig::default();
        c.n_mels = 1025;
        assert!(c.validate().is_err());
    }

    #[test]
    fn frame_count_for_two_seconds() {
        assert_eq!(raw_frames(88_200, 512), 173);
        assert_eq!(padded_frames(88_200, 512), 176);
        let mel = stft_mel(&vec![0.0; 88_200], &AudioConfig::default()).unwrap();
        assert_eq!(mel.n_frames, 176);
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let cfg = AudioConfig::default();
        let mel = stft_mel(&vec![0.0; 5000], &cfg).unwrap();
        assert!(mel.data.iter().all(|&v| v == cfg.floor_value()));
        assert_eq!(mel.n_frames % 4, 0);
    }

    #[test]
    fn short_or_empty_input_is_an_error() {
        let cfg = AudioConfig::default();
        assert!(matches!(stft_mel(&[], &cfg), Err(Error::Input(_))));
        assert!(matches!(stft_mel(&[0.0; 100], &cfg), Err(Error::Input(_))));
    }

    #[test]
    fn sine_peaks_at_nearest_filter() {
        let cfg = AudioConfig::default();
        let mel = stft_mel(&sine(440.0, 0.5, cfg.sample_rate), &cfg).unwrap();
        let centers = mel_centers(&cfg);
        let nearest = (0..cfg.n_mels)
            .min_by(|&a, &b| (centers[a] - 440.0).abs().total_cmp(&(centers[b] - 440.0).abs()))
            .unwrap();
        let row = mel.frame(10);
        let arg = (0..cfg.n_mels).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(arg, nearest);
    }

    #[test]
    fn filterbank_shape_and_coverage() {
        let cfg = AudioConfig::default();
        let fb = mel_filterbank(&cfg).unwrap();
        assert_eq!(fb.len(), 80);
        assert!(fb.iter().all(|r| r.len() == 1025 && r.iter().sum::<f64>() > 0.0));
        let peaks: Vec<usize> = fb
            .iter()
            .map(|r| (0..r.len()).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap())
            .collect();
        assert!(peaks.windows(2).all(|w| w[0] <= w[1]));
        assert!(peaks.first() < peaks.last());
        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
        for k in 0..cfg.n_bins() {
            let f = k as f64 * bin_hz;
            if f > cfg.fmin && f < cfg.fmax {
                assert!(fb.iter().map(|r| r[k]).sum::<f64>() > 0.0, "bin {k}");
            }
        }
    }

    #[test]
    fn filterbank_on_delta_reads_one_column() {
        let cfg = AudioConfig::default();
        let fb = mel_filterbank(&cfg).unwrap();
        let k = 37;
        let mut spec = vec![0.0; cfg.n_bins()];
        spec[k] = 1.0;
        let out: Vec<f64> = fb
            .iter()
            .map(|r| r.iter().zip(&spec).map(|(a, b)| a * b).sum())
            .collect();
        // direct evaluation of each triangle at the bin frequency
        let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
        let f = k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
        for (m, &o) in out.iter().enumerate() {
            let p = |i: usize| mel_to_hz(lo + (hi - lo) * i as f64 / 81.0);
            let (l, c, r) = (p(m), p(m + 1), p(m + 2));
            let tri = ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0);
            assert!((o - tri).abs() < 1e-12);
        }
    }

    #[test]
    fn griffin_lim_single_iteration_has_expected_length() {
        let cfg = AudioConfig::default();
        let mel = stft_mel(&sine(300.0, 0.3, cfg.sample_rate), &cfg).unwrap();
        let w = griffin_lim(&mel, &cfg, 1).unwrap();
        assert_eq!(w.len(), mel.n_frames * cfg.hop);
        assert!(w.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn griffin_lim_of_silence_is_quiet() {
        let cfg = AudioConfig::default();
        let mel = stft_mel(&vec![0.0; 20_000], &cfg).unwrap();
        let w = griffin_lim(&mel, &cfg, 10).unwrap();
        let rms = (w.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        assert!(rms < 1e-3, "rms {rms}");
    }

    #[test]
    fn mel_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.mel");
        let cfg = AudioConfig::default();
        let mel = stft_mel(&sine(500.0, 0.2, cfg.sample_rate), &cfg).unwrap();
        mel.save(&p).unwrap();
        assert_eq!(MelSpectrogram::load(&p, &cfg.fingerprint()).unwrap(), mel);
        std::fs::write(&p, b"MEL0").unwrap();
        assert!(matches!(MelSpectrogram::load(&p, ""), Err(Error::Format { .. })));
    }

    #[test]
    fn wav_round_trip_is_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let s = sine(220.0, 0.05, 44_100);
        write_wav(&p, &s, 44_100).unwrap();
        let (back, sr) = read_wav(&p).unwrap();
        assert_eq!(sr, 44_100);
        assert_eq!(back.len(), s.len());
        assert!(back.iter().zip(&s).all(|(a, b)| (a - b).abs() < 1e-4));
    }
}
