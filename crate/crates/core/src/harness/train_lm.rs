//! Joint teacher-forced training of the top and mixed decoders.

use std::io::Write;
use std::path::{Path, PathBuf};

use numkit::{Adam, Graph, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::Settings;
use super::extract::CodeDataset;
use super::train_vq::csv;
use crate::error::{Error, Result};
use crate::lm::{monotonicity_violations, LanguageModel, LmConfig};

/// Backward moves of the expected attended position up to this many phonemes
/// are not counted as violations.
pub const MONOTONIC_TOL: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct LmTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub eval_every: usize,
    /// Weight of the diagonal attention prior; 0 turns it off.
    pub guided_attention: f64,
    pub model: LmConfig,
}

const KEYS: [&str; 25] = [
    "preset",
    "iterations",
    "batch_size",
    "lr",
    "grad_clip",
    "seed",
    "checkpoint_every",
    "eval_every",
    "guided_attention",
    "phone_dim",
    "enc_convs",
    "enc_kernel",
    "norm_groups",
    "code_dim",
    "prenet_dim",
    "prenet_dropout",
    "att_rnn",
    "dec_rnn",
    "attn_dim",
    "loc_filters",
    "loc_kernel",
    "d_model",
    "n_layers",
    "n_heads",
    "ffn_dim",
];

impl LmTrainConfig {
    /// `toy` or `small`; codebook and alphabet sizes come from the data.
    pub fn preset(name: &str) -> Result<Self> {
        let toy = LmTrainConfig {
            iterations: 5000,
            batch_size: 2,
            lr: 1e-3,
            grad_clip: 1.0,
            seed: 2,
            checkpoint_every: 1000,
            eval_every: 500,
            guided_attention: 1.0,
            model: LmConfig {
                phone_dim: 32,
                enc_kernel: 5,
                code_dim: 32,
                prenet_dim: 32,
                att_rnn: 64,
                dec_rnn: 64,
                attn_dim: 32,
                loc_filters: 8,
                loc_kernel: 15,
                d_model: 64,
                n_layers: 2,
                n_heads: 2,
                ffn_dim: 128,
                ..LmConfig::default()
            },
        };
        match name {
            "toy" => Ok(toy),
            "small" => Ok(LmTrainConfig {
                iterations: 50_000,
                batch_size: 6,
                lr: 3e-4,
                model: LmConfig::default(),
                ..toy
            }),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected toy or small)"
            ))),
        }
    }

    pub fn from_settings(s: &Settings) -> Result<Self> {
        s.check_known(&KEYS)?;
        let base = Self::preset(&s.get_or("preset", "toy".to_string())?)?;
        let m = &base.model;
        let cfg = LmTrainConfig {
            iterations: s.get_or("iterations", base.iterations)?,
            batch_size: s.get_or("batch_size", base.batch_size)?,
            lr: s.get_or("lr", base.lr)?,
            grad_clip: s.get_or("grad_clip", base.grad_clip)?,
            seed: s.get_or("seed", base.seed)?,
            checkpoint_every: s.get_or("checkpoint_every", base.checkpoint_every)?,
            eval_every: s.get_or("eval_every", base.eval_every)?,
            guided_attention: s.get_or("guided_attention", base.guided_attention)?,
            model: LmConfig {
                phone_dim: s.get_or("phone_dim", m.phone_dim)?,
                enc_convs: s.get_or("enc_convs", m.enc_convs)?,
                enc_kernel: s.get_or("enc_kernel", m.enc_kernel)?,
                norm_groups: s.get_or("norm_groups", m.norm_groups)?,
                code_dim: s.get_or("code_dim", m.code_dim)?,
                prenet_dim: s.get_or("prenet_dim", m.prenet_dim)?,
                prenet_dropout: s.get_or("prenet_dropout", m.prenet_dropout)?,
                att_rnn: s.get_or("att_rnn", m.att_rnn)?,
                dec_rnn: s.get_or("dec_rnn", m.dec_rnn)?,
                attn_dim: s.get_or("attn_dim", m.attn_dim)?,
                loc_filters: s.get_or("loc_filters", m.loc_filters)?,
                loc_kernel: s.get_or("loc_kernel", m.loc_kernel)?,
                d_model: s.get_or("d_model", m.d_model)?,
                n_layers: s.get_or("n_layers", m.n_layers)?,
                n_heads: s.get_or("n_heads", m.n_heads)?,
                ffn_dim: s.get_or("ffn_dim", m.ffn_dim)?,
                ..m.clone()
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 || self.checkpoint_every == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "iteration, batch and cadence counts must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config("lr and grad_clip must be positive".into()));
        }
        if !(self.guided_attention >= 0.0) {
            return Err(Error::Config("guided_attention must be non-negative".into()));
        }
        self.model.validate()
    }
}

/// Teacher-forced metrics over every training sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct LmEval {
    pub top_loss: f64,
    pub mixed_loss: f64,
    pub top_accuracy: f64,
    pub mixed_accuracy: f64,
    pub monotonic_violation_rate: f64,
}

pub fn evaluate_lm<R: Real>(model: &LanguageModel<R>, data: &CodeDataset) -> Result<LmEval> {
    let (mut tl, mut ml) = (0.0, 0.0);
    let (mut tc, mut tn, mut mc, mut mn) = (0, 0, 0, 0);
    let (mut bad, mut steps) = (0, 0);
    for ex in &data.examples {
        let mut g = Graph::inference();
        let f = model.forward(&mut g, &model.store, &ex.phonemes, &ex.codes, None)?;
        tl += g.value(f.top_loss).data()[0].as_f64() * f.top_count as f64;
        ml += g.value(f.mixed_loss).data()[0].as_f64() * f.mixed_count as f64;
        tc += f.top_correct;
        tn += f.top_count;
        mc += f.mixed_correct;
        mn += f.mixed_count;
        let (b, s) = monotonicity_violations(&f.alignment, MONOTONIC_TOL);
        bad += b;
        steps += s;
    }
    Ok(LmEval {
        top_loss: tl / tn as f64,
        mixed_loss: ml / mn as f64,
        top_accuracy: tc as f64 / tn as f64,
        mixed_accuracy: mc as f64 / mn as f64,
        monotonic_violation_rate: bad as f64 / steps.max(1) as f64,
    })
}

pub struct LmTrainOutcome {
    pub model: LanguageModel<f32>,
    pub initial: LmEval,
    pub last: LmEval,
    pub checkpoint: PathBuf,
}

fn eval_row(it: usize, e: &LmEval) -> String {
    format!(
        "{it},{:.6},{:.6},{:.4},{:.4},{:.4}",
        e.top_loss, e.mixed_loss, e.top_accuracy, e.mixed_accuracy, e.monotonic_violation_rate
    )
}

/// Trains on sentence examples and writes `lm.klm`, `lm_curve.csv` and
/// `lm_eval.csv` into `out_dir`.
pub fn train_lm(data: &CodeDataset, cfg: &LmTrainConfig, out_dir: &Path) -> Result<LmTrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mcfg = LmConfig {
        codebook_size: data.index.codebook_size,
        n_phonemes: data.index.n_phonemes,
        ..cfg.model.clone()
    };
    let mut model: LanguageModel<f32> = LanguageModel::new(mcfg, &mut rng)?;
    let ckpt = out_dir.join("lm.klm");
    let curve_path = out_dir.join("lm_curve.csv");
    let eval_path = out_dir.join("lm_eval.csv");
    let mut curve = csv(&curve_path, "iter,total,top,mixed,grad_norm")?;
    let mut evals = csv(
        &eval_path,
        "iter,top_loss,mixed_loss,top_accuracy,mixed_accuracy,violation_rate",
    )?;
    let initial = evaluate_lm(&model, data)?;
    writeln!(evals, "{}", eval_row(0, &initial)).map_err(|e| Error::io(&eval_path, e))?;
    log::info!("lm iter 0: {:?}", initial);

    let mut adam = Adam::new(cfg.lr);
    let inv_b = 1.0 / cfg.batch_size as f32;
    let mut last = initial.clone();
    for it in 1..=cfg.iterations {
        let mut acc = [0.0f64; 3];
        model.store.zero_grads();
        for _ in 0..cfg.batch_size {
            let ex = &data.examples[rng.gen_range(0..data.examples.len())];
            let mut g = Graph::new();
            let f = model.forward(&mut g, &model.store, &ex.phonemes, &ex.codes, Some(&mut rng))?;
            let vals = [f.total, f.top_loss, f.mixed_loss].map(|v| g.value(v).data()[0].as_f64());
            if !vals[0].is_finite() {
                model.save(&out_dir.join("lm.last_good.klm"))?;
                return Err(Error::Divergence(format!("non-finite loss at iteration {it}")));
            }
            for (a, v) in acc.iter_mut().zip(vals) {
                *a += v / cfg.batch_size as f64;
            }
            let guide = g.scale(f.guide_loss, cfg.guided_attention as f32);
            let total = g.add(f.total, guide)?;
            let loss = g.scale(total, inv_b);
            g.backward(loss)?;
            g.accumulate_param_grads(&mut model.store);
        }
        let norm = model.store.clip_grad_norm(cfg.grad_clip);
        if !norm.is_finite() {
            model.save(&out_dir.join("lm.last_good.klm"))?;
            return Err(Error::Divergence(format!("non-finite gradient at iteration {it}")));
        }
        adam.step(&mut model.store)?;
        writeln!(curve, "{it},{:.6},{:.6},{:.6},{norm:.4}", acc[0], acc[1], acc[2])
            .map_err(|e| Error::io(&curve_path, e))?;
        if it % cfg.eval_every == 0 || it == cfg.iterations {
            last = evaluate_lm(&model, data)?;
            writeln!(evals, "{}", eval_row(it, &last)).map_err(|e| Error::io(&eval_path, e))?;
            log::info!("lm iter {it}: {:?}", last);
        }
        if it % cfg.checkpoint_every == 0 || it == cfg.iterations {
            model.save(&ckpt)?;
        }
    }
    Ok(LmTrainOutcome {
        model,
        initial,
        last,
        checkpoint: ckpt,
    })
}
