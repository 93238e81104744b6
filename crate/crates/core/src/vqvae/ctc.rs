//! Connectionist temporal classification in log space.

use numkit::{Graph, Real, Tensor, Var};

use crate::error::{Error, Result};
use crate::lexicon::BLANK_ID;

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn lse3(a: f64, b: f64, c: f64) -> f64 {
    lse2(lse2(a, b), c)
}

/// Fewest frames that can emit `target`: one per label plus a separating
/// blank between equal neighbours.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn log_softmax(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (row, o) in logits.chunks(k).zip(out.chunks_mut(k)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for (oi, v) in o.iter_mut().zip(row) {
            *oi = v - lse;
        }
    }
    out
}

fn check(t: usize, k: usize, target: &[usize]) -> Result<()> {
    if k < 2 {
        return Err(Error::Input(format!(
            "CTC needs a blank plus at least one label, got {k} classes"
        )));
    }
    if let Some(&bad) = target.iter().find(|&&y| y == BLANK_ID || y >= k) {
        return Err(Error::Input(format!("CTC target id {bad} outside 1..{}", k - 1)));
    }
    let needed = min_frames(target);
    if t < needed.max(1) {
        return Err(Error::Infeasible { needed, frames: t });
    }
    Ok(())
}

/// `−ln p(target | logits)` for `logits[T×K]` (row-major) and its gradient
/// with respect to the logits.
pub fn ctc_loss_and_grad(logits: &[f64], k: usize, target: &[usize]) -> Result<(f64, Vec<f64>)> {
    let t = logits.len() / k;
    check(t, k, target)?;
    let lp = log_softmax(logits, k);
    let s_len = 2 * target.len() + 1;
    let lab = |s: usize| if s.is_multiple_of(2) { BLANK_ID } else { target[s / 2] };
    let skip = |s: usize| s >= 2 && s % 2 == 1 && lab(s) != lab(s - 2);
    let ninf = f64::NEG_INFINITY;

    let mut alpha = vec![ninf; t * s_len];
    alpha[0] = lp[BLANK_ID];
    if s_len > 1 {
        alpha[1] = lp[lab(1)];
    }
    for ti in 1..t {
        for s in 0..s_len {
            let prev = &alpha[(ti - 1) * s_len..ti * s_len];
            let a = prev[s];
            let b = if s >= 1 { prev[s - 1] } else { ninf };
            let c = if skip(s) { prev[s - 2] } else { ninf };
            let v = lse3(a, b, c);
            alpha[ti * s_len + s] = if v == ninf { ninf } else { v + lp[ti * k + lab(s)] };
        }
    }
    let last = &alpha[(t - 1) * s_len..];
    let log_z = if s_len > 1 {
        lse2(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    };
    if !log_z.is_finite() {
        return Err(Error::Infeasible {
            needed: min_frames(target),
            frames: t,
        });
    }

    let mut beta = vec![ninf; t * s_len];
    beta[(t - 1) * s_len + s_len - 1] = lp[(t - 1) * k + lab(s_len - 1)];
    if s_len > 1 {
        beta[(t - 1) * s_len + s_len - 2] = lp[(t - 1) * k + lab(s_len - 2)];
    }
    for ti in (0..t - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(ti + 1) * s_len..(ti + 2) * s_len];
            let a = next[s];
            let b = if s + 1 < s_len { next[s + 1] } else { ninf };
            let c = if s + 2 < s_len && skip(s + 2) {
                next[s + 2]
            } else {
                ninf
            };
            let v = lse3(a, b, c);
            beta[ti * s_len + s] = if v == ninf { ninf } else { v + lp[ti * k + lab(s)] };
        }
    }

    // d(−ln p)/d logit = softmax − posterior label occupancy
    let mut grad: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
    for ti in 0..t {
        for s in 0..s_len {
            let a = alpha[ti * s_len + s];
            let b = beta[ti * s_len + s];
            if a == ninf || b == ninf {
                continue;
            }
            let l = lab(s);
            let occ = (a + b - lp[ti * k + l] - log_z).exp();
            grad[ti * k + l] -= occ;
        }
    }
    Ok((-log_z, grad))
}

/// CTC loss as a graph op on `logits[T×K]`.
pub fn ctc_loss<R: Real>(g: &mut Graph<R>, logits: Var, target: &[usize]) -> Result<Var> {
    let (_, k) = g.value(logits).dims2("ctc_loss")?;
    let x: Vec<f64> = g.value(logits).data().iter().map(|v| v.as_f64()).collect();
    let (loss, grad) = ctc_loss_and_grad(&x, k, target)?;
    let grad: Vec<R> = grad.into_iter().map(R::lit).collect();
    Ok(g.custom(&[logits], Tensor::scalar(R::lit(loss)), move |c| {
        let s = c.grad[0];
        vec![Some(grad.iter().map(|&v| v * s).collect())]
    }))
}

/// Per-frame argmax, repeats collapsed, blanks dropped.
pub fn ctc_greedy_decode(logits: &[f32], k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = BLANK_ID;
    for row in logits.chunks(k) {
        let best = (0..k).fold(0, |b, i| if row[i] > row[b] { i } else { b });
        if best != BLANK_ID && best != prev {
            out.push(best);
        }
        prev = best;
    }
    out
}

/// Levenshtein distance between two label sequences.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
