//! Numerical self-checks exposed on the command line: finite-difference
//! gradient checks and a brute-force CTC comparison.

use numkit::nn::{uniform, BiGru, Conv1d, Embedding, GroupNorm, LayerNorm, Linear};
use numkit::{grad_check, ConvSpec, GradCheckOptions, GradCheckReport, Graph, NumError, ParamStore, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::lm::{interleave, AttentionState, LanguageModel, LmConfig, LocationAttention};
use crate::vqvae::ctc::ctc_loss_and_grad;
use crate::vqvae::{CodeTriple, VqConfig, VqVae};

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
/// Relative-error denominator floor. At `eps = 1e-5` a central difference of
/// an O(1) loss carries about 1e-11 of roundoff, so gradients below this are
/// compared by absolute error instead.
pub const GRAD_FLOOR: f64 = 1e-6;

fn contract(e: crate::Error) -> NumError {
    NumError::Contract(e.to_string())
}

/// Scalar `Σ y ⊙ r` with a fixed random `r`, so no gradient cancels by symmetry.
fn project(g: &mut Graph<f64>, y: Var, rng: &mut ChaCha8Rng) -> numkit::Result<Var> {
    let r = uniform(g.shape(y), 1.0, rng);
    let rv = g.constant(r);
    let p = g.mul(y, rv)?;
    Ok(g.sum(p))
}

type Builder = Box<dyn Fn(&mut Graph<f64>, &ParamStore<f64>) -> numkit::Result<Var>>;

fn check(name: &str, store: &mut ParamStore<f64>, eps: f64, f: Builder) -> Result<(String, GradCheckReport)> {
    let opts = GradCheckOptions {
        eps,
        max_per_tensor: Some(24),
        floor: GRAD_FLOOR,
    };
    Ok((name.to_string(), grad_check(store, |g, s| f(g, s), opts)?))
}

/// Gradient checks of every layer type and of both full training objectives
/// on tiny models, in 64-bit arithmetic, with central-difference step `eps`.
pub fn gradcheck_suite(seed: u64, eps: f64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    macro_rules! layer {
        ($name:expr, $in_shape:expr, |$s:ident, $rng:ident| $make:expr, |$g:ident, $st:ident, $x:ident, $m:ident| $fwd:expr) => {{
            let mut $s = ParamStore::<f64>::new();
            let $rng = &mut rng;
            let $m = $make;
            let xid = $s.add("input", uniform(&$in_shape, 1.0, $rng), true);
            let pseed: u64 = $rng.gen();
            let f: Builder = Box::new(move |$g, $st| {
                let $x = $g.param($st, xid);
                let y = $fwd?;
                project($g, y, &mut ChaCha8Rng::seed_from_u64(pseed))
            });
            out.push(check($name, &mut $s, eps, f)?);
        }};
    }

    layer!(
        "linear",
        [3, 5],
        |s, r| Linear::new(&mut s, "l", 5, 4, r),
        |g, st, x, m| m.forward(g, st, x)
    );
    layer!(
        "conv1d_dilated_grouped",
        [4, 9],
        |s, r| Conv1d::new(
            &mut s,
            "c",
            4,
            6,
            3,
            ConvSpec {
                stride: 1,
                dilation: 2,
                groups: 2
            },
            r
        ),
        |g, st, x, m| m.forward(g, st, x)
    );
    layer!(
        "conv1d_strided",
        [3, 8],
        |s, r| Conv1d::new(
            &mut s,
            "c",
            3,
            4,
            4,
            ConvSpec {
                stride: 2,
                dilation: 1,
                groups: 1
            },
            r
        ),
        |g, st, x, m| m.forward(g, st, x)
    );
    layer!(
        "group_norm",
        [6, 7],
        |s, _r| GroupNorm::new(&mut s, "n", 6, 3),
        |g, st, x, m| m.forward(g, st, x)
    );
    layer!(
        "layer_norm",
        [4, 6],
        |s, _r| LayerNorm::new(&mut s, "n", 6),
        |g, st, x, m| m.forward(g, st, x)
    );
    layer!(
        "bigru",
        [5, 3],
        |s, r| BiGru::new(&mut s, "gru", 3, 4, r),
        |g, st, x, m| m.forward(g, st, x)
    );
    layer!(
        "embedding",
        [1, 1],
        |s, r| Embedding::new(&mut s, "e", 5, 4, 0.5, r),
        |g, st, _x, m| m.forward(g, st, &[3, 0, 3, 4])
    );
    {
        let mut s = ParamStore::<f64>::new();
        let q = s.add("q", uniform(&[7, 4], 1.0, &mut rng), true);
        let k = s.add("k", uniform(&[7, 4], 1.0, &mut rng), true);
        let v = s.add("v", uniform(&[7, 3], 1.0, &mut rng), true);
        let pseed: u64 = rng.gen();
        let f: Builder = Box::new(move |g, st| {
            let (q, k, v) = (g.param(st, q), g.param(st, k), g.param(st, v));
            let pq = g.elu_plus_one(q);
            let pk = g.elu_plus_one(k);
            let y = g.causal_linear_attention(pq, pk, v)?;
            // row 0 is v_0 up to the denominator guard; its query gradient
            // is roundoff-sized, so only later rows are read
            let y = g.slice_rows(y, 1, 6)?;
            project(g, y, &mut ChaCha8Rng::seed_from_u64(pseed))
        });
        out.push(check("causal_linear_attention", &mut s, eps, f)?);
    }
    {
        let mut s = ParamStore::<f64>::new();
        let att = LocationAttention::new(&mut s, "att", 5, 4, 6, 3, 5, &mut rng);
        let q = s.add("query", uniform(&[1, 5], 1.0, &mut rng), true);
        let mem = s.add("memory", uniform(&[6, 4], 1.0, &mut rng), true);
        let pseed: u64 = rng.gen();
        let f: Builder = Box::new(move |g, st| {
            let qv = g.param(st, q);
            let m = g.param(st, mem);
            let k = att.keys(g, st, m).map_err(contract)?;
            let mut a = AttentionState::initial(g, 6);
            let mut ctx = Vec::new();
            for _ in 0..3 {
                let (c, next) = att.attend(g, st, qv, m, k, &[true; 6], &a).map_err(contract)?;
                ctx.push(c);
                a = next;
            }
            let all = g.concat_rows(&ctx)?;
            project(g, all, &mut ChaCha8Rng::seed_from_u64(pseed))
        });
        out.push(check("location_attention", &mut s, eps, f)?);
    }

    out.push(vq_full_loss(&mut rng, eps)?);
    out.push(lm_full_loss(&mut rng, eps)?);
    Ok(out)
}

/// Tiny autoencoder (D=8, M=8, T=16) with quantization frozen at its base
/// assignment, so the objective is smooth around the checked point.
fn vq_full_loss(rng: &mut ChaCha8Rng, eps: f64) -> Result<(String, GradCheckReport)> {
    let cfg = VqConfig {
        n_mels: 6,
        channels: 8,
        latent_dim: 8,
        codebook_size: 8,
        n_phonemes: 3,
        g3_blocks: 1,
        conv_groups: 2,
        norm_groups: 2,
        ..VqConfig::default()
    };
    let mut model: VqVae<f64> = VqVae::new(cfg, rng)?;
    let x = uniform(&[16, 6], 1.0, rng);
    let mode = model.freeze_quantization(&x)?;
    let phonemes = vec![1, 2];
    let mut store = std::mem::take(&mut model.store);
    let opts = GradCheckOptions {
        eps,
        max_per_tensor: Some(8),
        floor: GRAD_FLOOR,
    };
    let rep = grad_check(
        &mut store,
        |g, s| {
            model.store = s.clone();
            Ok(model.forward(g, &x, Some(&phonemes), &mode).map_err(contract)?.total)
        },
        opts,
    )?;
    Ok(("vqvae_full_loss".into(), rep))
}

fn lm_full_loss(rng: &mut ChaCha8Rng, eps: f64) -> Result<(String, GradCheckReport)> {
    let cfg = LmConfig {
        codebook_size: 8,
        n_phonemes: 5,
        phone_dim: 8,
        enc_convs: 1,
        enc_kernel: 3,
        norm_groups: 2,
        code_dim: 6,
        prenet_dim: 6,
        att_rnn: 8,
        dec_rnn: 8,
        attn_dim: 6,
        loc_filters: 3,
        loc_kernel: 3,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        ffn_dim: 12,
        up_dilations: vec![1, 2],
        ..LmConfig::default()
    };
    let mut model: LanguageModel<f64> = LanguageModel::new(cfg, rng)?;
    let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(0..8)).collect::<Vec<_>>();
    let codes = CodeTriple::new(draw(3), draw(6), draw(12))?;
    debug_assert!(interleave(&codes.mid, &codes.bot).is_ok());
    let mut store = std::mem::take(&mut model.store);
    let opts = GradCheckOptions {
        eps,
        max_per_tensor: Some(8),
        floor: GRAD_FLOOR,
    };
    let rep = grad_check(
        &mut store,
        |g, s| {
            Ok(model
                .forward(g, s, &[2, 4, 1, 5], &codes, None)
                .map_err(contract)?
                .total)
        },
        opts,
    )?;
    Ok(("language_model_full_loss".into(), rep))
}

/// `−ln Σ p(path)` over every frame-level path that collapses to `target`,
/// by direct enumeration of all `k^T` paths in linear space.
pub fn brute_force_ctc(logits: &[f64], k: usize, target: &[usize]) -> f64 {
    let t = logits.len() / k;
    let probs: Vec<Vec<f64>> = logits
        .chunks(k)
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            row.iter().map(|v| (v - m).exp() / z).collect()
        })
        .collect();
    let mut total = 0.0;
    let mut path = vec![0usize; t];
    loop {
        let mut collapsed = Vec::new();
        let mut prev = usize::MAX;
        for &s in &path {
            if s != prev && s != 0 {
                collapsed.push(s);
            }
            prev = s;
        }
        if collapsed == target {
            total += path.iter().enumerate().map(|(i, &s)| probs[i][s]).product::<f64>();
        }
        let mut i = 0;
        loop {
            if i == t {
                return -total.ln();
            }
            path[i] += 1;
            if path[i] < k {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

#[derive(Clone, Debug)]
pub struct CtcSelftest {
    pub cases: usize,
    pub max_abs_err: f64,
}

/// Random instances with `(P+1)^T ≤ 4096` compared against enumeration.
pub fn ctc_selftest(cases: usize, seed: u64) -> Result<CtcSelftest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < cases {
        let p = rng.gen_range(1..=4usize);
        let k = p + 1;
        let max_t = (1..=12).take_while(|&t| k.pow(t as u32) <= 4096).last().unwrap_or(1);
        let t = rng.gen_range(1..=max_t);
        let len = rng.gen_range(1..=t.min(4));
        let target: Vec<usize> = (0..len).map(|_| rng.gen_range(1..=p)).collect();
        if crate::vqvae::ctc::min_frames(&target) > t {
            continue;
        }
        let logits: Vec<f64> = (0..t * k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (loss, _) = ctc_loss_and_grad(&logits, k, &target)?;
        worst = worst.max((loss - brute_force_ctc(&logits, k, &target)).abs());
        done += 1;
    }
    Ok(CtcSelftest {
        cases,
        max_abs_err: worst,
    })
}

/// Finite-difference derivative of the CTC loss against its analytic
/// gradient, for one random instance.
pub fn ctc_gradient_error(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, t) = (4, 7);
    let target = vec![1, 3, 1];
    let logits: Vec<f64> = (0..t * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let (_, grad) = ctc_loss_and_grad(&logits, k, &target)?;
    let mut worst = 0.0f64;
    for i in 0..logits.len() {
        let mut up = logits.clone();
        up[i] += GRAD_EPS;
        let mut dn = logits.clone();
        dn[i] -= GRAD_EPS;
        let num = (ctc_loss_and_grad(&up, k, &target)?.0 - ctc_loss_and_grad(&dn, k, &target)?.0) / (2.0 * GRAD_EPS);
        worst = worst.max(numkit::gradcheck::rel_err(grad[i], num));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_reference_values() {
        let k = 2;
        let uniform = vec![0.0; 4];
        assert!((brute_force_ctc(&uniform, k, &[1]) - -(0.75f64).ln()).abs() < 1e-15);
        let q = 0.3f64;
        let one = vec![(1.0 - q).ln(), q.ln()];
        assert!((brute_force_ctc(&one, k, &[1]) + q.ln()).abs() < 1e-12);
        assert!(brute_force_ctc(&one, k, &[1, 1]).is_infinite());
    }

    #[test]
    fn ctc_agrees_with_enumeration() {
        let r = ctc_selftest(50, 3).unwrap();
        assert!(r.max_abs_err < 1e-10, "{r:?}");
        assert!(ctc_gradient_error(4).unwrap() < 1e-6);
    }
}
