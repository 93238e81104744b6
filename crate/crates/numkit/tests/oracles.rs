//! Forward values of the graph ops checked against independent reference
//! computations.

use numkit::kernels;
use numkit::{adam_step, AdamState, ConvSpec, Graph, GruVars, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct summation over an explicitly zero-padded input.
fn naive_conv(x: &[Vec<f64>], w: &[Vec<Vec<f64>>], stride: usize, dilation: usize, groups: usize) -> Vec<Vec<f64>> {
    let c_in = x.len();
    let t = x[0].len();
    let c_out = w.len();
    let k = w[0][0].len();
    let left = dilation * (k - 1) / 2;
    let t_out = t.div_ceil(stride);
    let padded_len = left + t_out * stride + dilation * (k - 1) + 1;
    let xp: Vec<Vec<f64>> = x
        .iter()
        .map(|row| {
            let mut p = vec![0.0; padded_len];
            p[left..left + t].copy_from_slice(row);
            p
        })
        .collect();
    let cin_g = c_in / groups;
    let cout_g = c_out / groups;
    let mut out = vec![vec![0.0; t_out]; c_out];
    for co in 0..c_out {
        let g = co / cout_g;
        for (to, o) in out[co].iter_mut().enumerate() {
            for cl in 0..cin_g {
                for kk in 0..k {
                    *o += w[co][cl][kk] * xp[g * cin_g + cl][to * stride + kk * dilation];
                }
            }
        }
    }
    out
}

fn run_conv(x: &Tensor<f64>, w: &Tensor<f64>, spec: ConvSpec) -> Tensor<f64> {
    let mut g = Graph::inference();
    let xv = g.constant(x.clone());
    let wv = g.constant(w.clone());
    let y = g.conv1d(xv, wv, None, spec).unwrap();
    g.value(y).clone()
}

fn to_rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (r, _) = t.dims2("rows").unwrap();
    (0..r).map(|i| t.row(i).to_vec()).collect()
}

fn to_kernel(w: &Tensor<f64>) -> Vec<Vec<Vec<f64>>> {
    let s = w.shape();
    (0..s[0])
        .map(|o| {
            (0..s[1])
                .map(|i| (0..s[2]).map(|k| w.data()[(o * s[1] + i) * s[2] + k]).collect())
                .collect()
        })
        .collect()
}

#[test]
fn conv_identity_kernel() {
    let x = Tensor::from_f64(&[1, 3], &[1.0, 2.0, 3.0]).unwrap();
    let w = Tensor::from_f64(&[1, 1, 1], &[1.0]).unwrap();
    let y = run_conv(&x, &w, ConvSpec::default());
    assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn conv_dilated_shift_matches_direct_sum() {
    let x = Tensor::from_f64(&[1, 4], &[1.0, 0.0, 0.0, 0.0]).unwrap();
    let w = Tensor::from_f64(&[1, 1, 3], &[0.0, 1.0, 0.0]).unwrap();
    let spec = ConvSpec::dilated(2, 1);
    let y = run_conv(&x, &w, spec);
    let expect = naive_conv(&to_rows(&x), &to_kernel(&w), 1, 2, 1);
    assert_eq!(y.data(), expect[0].as_slice());
    // centre tap with symmetric padding leaves the signal in place
    assert_eq!(y.data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn grouped_conv_isolates_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[4, 9]);
    let w = rand_tensor(&mut rng, &[4, 2, 3]);
    let spec = ConvSpec::dilated(1, 2);
    let y = run_conv(&x, &w, spec);
    // perturbing channels of group 0 leaves outputs of group 1 unchanged
    let mut x2 = x.clone();
    for v in &mut x2.data_mut()[..2 * 9] {
        *v += 5.0;
    }
    let y2 = run_conv(&x2, &w, spec);
    assert_eq!(&y.data()[2 * 9..], &y2.data()[2 * 9..]);
    assert_ne!(&y.data()[..2 * 9], &y2.data()[..2 * 9]);

    // same result as an ungrouped conv whose cross-group weights are zero
    let mut wfull = Tensor::zeros(&[4, 4, 3]);
    for co in 0..4 {
        let grp = co / 2;
        for cl in 0..2 {
            for k in 0..3 {
                wfull.data_mut()[(co * 4 + grp * 2 + cl) * 3 + k] = w.data()[(co * 2 + cl) * 3 + k];
            }
        }
    }
    let yf = run_conv(&x, &wfull, ConvSpec::default());
    assert!(y.max_abs_diff(&yf) < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn conv_matches_naive_reference(
        seed in 0u64..10_000,
        c_in_g in 1usize..4,
        c_out_g in 1usize..4,
        groups in 1usize..3,
        t in 1usize..20,
        k in 1usize..6,
        stride in 1usize..4,
        dilation in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c_in = c_in_g * groups;
        let c_out = c_out_g * groups;
        let x = rand_tensor(&mut rng, &[c_in, t]);
        let w = rand_tensor(&mut rng, &[c_out, c_in_g, k]);
        let spec = ConvSpec { stride, dilation, groups };
        let y = run_conv(&x, &w, spec);
        let expect = naive_conv(&to_rows(&x), &to_kernel(&w), stride, dilation, groups);
        prop_assert_eq!(y.shape(), &[c_out, t.div_ceil(stride)]);
        for (co, row) in expect.iter().enumerate() {
            for (to, &e) in row.iter().enumerate() {
                prop_assert!((y.at2(co, to) - e).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn conv_reports_offending_axis() {
    let mut g = Graph::<f64>::inference();
    let x = g.constant(Tensor::zeros(&[3, 5]));
    let w = g.constant(Tensor::zeros(&[2, 2, 3]));
    let err = g.conv1d(x, w, None, ConvSpec::default()).unwrap_err();
    assert!(err.to_string().contains("input channels per group"), "{err}");
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar loop GRU with the (1 − z)·h + z·ĥ convention.
#[allow(clippy::too_many_arguments)]
fn scalar_gru_step(x: &[f64], h: &[f64], w_ih: &[f64], w_hh: &[f64], b_ih: &[f64], b_hh: &[f64]) -> Vec<f64> {
    let hd = h.len();
    let col =
        |w: &[f64], inp: &[f64], j: usize| -> f64 { inp.iter().enumerate().map(|(i, &v)| v * w[i * 3 * hd + j]).sum() };
    (0..hd)
        .map(|i| {
            let r = sig(col(w_ih, x, i) + b_ih[i] + col(w_hh, h, i) + b_hh[i]);
            let z = sig(col(w_ih, x, hd + i) + b_ih[hd + i] + col(w_hh, h, hd + i) + b_hh[hd + i]);
            let n = (col(w_ih, x, 2 * hd + i) + b_ih[2 * hd + i] + r * (col(w_hh, h, 2 * hd + i) + b_hh[2 * hd + i]))
                .tanh();
            (1.0 - z) * h[i] + z * n
        })
        .collect()
}

#[test]
fn gru_zero_parameters_halve_state() {
    let h: Vec<f64> = vec![0.4, -1.0, 2.0];
    let out = kernels::gru_cell(&[1.0, 2.0], &h, &[0.0; 18], &[0.0; 27], &[0.0; 9], &[0.0; 9]);
    for (o, hp) in out.iter().zip(&h) {
        assert!((o - 0.5 * hp).abs() < 1e-15);
    }
}

#[test]
fn gru_sequence_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (t, d_in, hd) = (7, 3, 4);
    let x = rand_tensor(&mut rng, &[t, d_in]);
    let h0 = rand_tensor(&mut rng, &[1, hd]);
    let w_ih = rand_tensor(&mut rng, &[d_in, 3 * hd]);
    let w_hh = rand_tensor(&mut rng, &[hd, 3 * hd]);
    let b_ih = rand_tensor(&mut rng, &[3 * hd]);
    let b_hh = rand_tensor(&mut rng, &[3 * hd]);
    let mut g = Graph::inference();
    let xv = g.constant(x.clone());
    let hv = g.constant(h0.clone());
    let p = GruVars {
        w_ih: g.constant(w_ih.clone()),
        w_hh: g.constant(w_hh.clone()),
        b_ih: g.constant(b_ih.clone()),
        b_hh: g.constant(b_hh.clone()),
    };
    let y = g.gru_sequence(xv, hv, p).unwrap();
    let mut h = h0.data().to_vec();
    for step in 0..t {
        h = scalar_gru_step(x.row(step), &h, w_ih.data(), w_hh.data(), b_ih.data(), b_hh.data());
        for (a, b) in g.value(y).row(step).iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    // a length-one sequence is one cell application
    let x1 = g.slice_rows(xv, 0, 1).unwrap();
    let y1 = g.gru_sequence(x1, hv, p).unwrap();
    let cell = g.gru_cell(x1, hv, p).unwrap();
    assert_eq!(g.value(y1), g.value(cell));
    assert_eq!(g.value(y1).row(0), g.value(y).row(0));
}

#[test]
fn gru_rejects_nan_input_by_name() {
    let mut g = Graph::<f64>::inference();
    let x = g.constant(Tensor::from_f64(&[1, 1], &[f64::NAN]).unwrap());
    g.set_name(x, "frames");
    let h = g.constant(Tensor::zeros(&[1, 1]));
    let p = GruVars {
        w_ih: g.constant(Tensor::zeros(&[1, 3])),
        w_hh: g.constant(Tensor::zeros(&[1, 3])),
        b_ih: g.constant(Tensor::zeros(&[3])),
        b_hh: g.constant(Tensor::zeros(&[3])),
    };
    let err = g.gru_sequence(x, h, p).unwrap_err();
    assert!(err.to_string().contains("frames"), "{err}");
}

fn gn(x: &Tensor<f64>, groups: usize) -> Tensor<f64> {
    let (c, _) = x.dims2("gn").unwrap();
    let mut g = Graph::inference();
    let xv = g.constant(x.clone());
    let gamma = g.constant(Tensor::full(&[c], 1.0));
    let beta = g.constant(Tensor::zeros(&[c]));
    let y = g.group_norm(xv, groups, gamma, beta).unwrap();
    g.value(y).clone()
}

#[test]
fn group_norm_constant_input_is_zero() {
    let x = Tensor::full(&[4, 6], 3.5);
    assert!(gn(&x, 2).data().iter().all(|&v| v == 0.0));
}

#[test]
fn group_norm_statistics_match_direct_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (c, t, groups) = (6, 5, 3);
    let x = rand_tensor(&mut rng, &[c, t]);
    let y = gn(&x, groups);
    let per = c / groups;
    for grp in 0..groups {
        let vals: Vec<f64> = (grp * per..(grp + 1) * per).flat_map(|ch| x.row(ch).to_vec()).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        for ch in grp * per..(grp + 1) * per {
            for tt in 0..t {
                let e = (x.at2(ch, tt) - mean) / (var + 1e-5).sqrt();
                assert!((y.at2(ch, tt) - e).abs() < 1e-12);
            }
        }
    }
    // one group normalizes the whole (C, T) block like a layer norm over it
    let y1 = gn(&x, 1);
    let flat = Tensor::new(&[1, c * t], x.data().to_vec()).unwrap();
    let mut g = Graph::inference();
    let fv = g.constant(flat);
    let gamma = g.constant(Tensor::full(&[c * t], 1.0));
    let beta = g.constant(Tensor::zeros(&[c * t]));
    let ln = g.layer_norm(fv, gamma, beta).unwrap();
    assert!(g
        .value(ln)
        .data()
        .iter()
        .zip(y1.data())
        .all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn group_norm_rejects_indivisible_channels() {
    let mut g = Graph::<f64>::inference();
    let x = g.constant(Tensor::zeros(&[5, 2]));
    let gamma = g.constant(Tensor::zeros(&[5]));
    let beta = g.constant(Tensor::zeros(&[5]));
    assert!(matches!(
        g.group_norm(x, 2, gamma, beta),
        Err(numkit::NumError::Config(_))
    ));
}

fn xent(logits: &[f64], target: usize) -> numkit::Result<f64> {
    let mut g = Graph::inference();
    let l = g.constant(Tensor::from_f64(&[logits.len()], logits).unwrap());
    let loss = g.softmax_xent(l, target)?;
    Ok(g.value(loss).data()[0])
}

#[test]
fn softmax_xent_closed_forms() {
    assert!((xent(&[0.3; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-15);
    let expect = (1.0 + 2.0 * (-10f64).exp()).ln();
    assert!((xent(&[10.0, 0.0, 0.0], 0).unwrap() - expect).abs() < 1e-15);
    assert!(matches!(xent(&[1.0, 2.0], 2), Err(numkit::NumError::Index { .. })));
}

#[test]
fn softmax_xent_f32_tracks_f64_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let logits: Vec<f64> = (0..9).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let t = rng.gen_range(0..9);
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        let reference = lse - logits[t];
        let mut g = Graph::<f32>::inference();
        let l = g.constant(Tensor::from_f64(&[9], &logits).unwrap());
        let loss = g.softmax_xent(l, t).unwrap();
        let v = g.value(loss).data()[0] as f64;
        assert!((v - reference).abs() <= 1e-4 * reference.abs().max(1.0));
    }
}

#[test]
fn adam_zero_gradient_is_noop() {
    let mut p = vec![1.0, -2.0, 3.0];
    let mut st = AdamState::new(3, 1e-4);
    adam_step(&mut p, &[0.0; 3], &mut st).unwrap();
    assert_eq!(p, vec![1.0, -2.0, 3.0]);
    assert_eq!(st.step, 1);
}

#[test]
fn adam_first_step_is_normalized_gradient() {
    let g = [0.5, -3.0, 1e-3];
    let mut p = vec![0.0; 3];
    let mut st = AdamState::<f64>::new(3, 1e-4);
    adam_step(&mut p, &g, &mut st).unwrap();
    for (pi, gi) in p.iter().zip(g) {
        let expect = -1e-4 * gi / (gi.abs() + 1e-8);
        assert!((pi - expect).abs() < 1e-16);
    }
}

#[test]
fn adam_two_scalar_steps_match_hand_rolled() {
    let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
    let grads = [0.7, -0.2];
    let (mut m, mut v, mut x) = (0.0, 0.0, 1.5);
    for (t, g) in grads.iter().enumerate() {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1f(b1, t + 1));
        let vh = v / (1.0 - b1f(b2, t + 1));
        x -= lr * mh / (vh.sqrt() + eps);
    }
    let mut p = vec![1.5];
    let mut st = AdamState::<f64>::new(1, lr);
    for g in grads {
        adam_step(&mut p, &[g], &mut st).unwrap();
    }
    assert!((p[0] - x).abs() < 1e-15);
    assert_eq!(st.step, 2);
}

fn b1f(b: f64, t: usize) -> f64 {
    b.powi(t as i32)
}

#[test]
fn adam_rejects_shape_mismatch() {
    let mut st = AdamState::<f64>::new(2, 1e-3);
    assert!(adam_step(&mut [0.0, 0.0], &[1.0], &mut st).is_err());
}

#[test]
fn linear_attention_single_position_returns_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q: Vec<f64> = (0..4).map(|_| rng.gen_range(0.1..2.0)).collect();
    let k: Vec<f64> = (0..4).map(|_| rng.gen_range(0.1..2.0)).collect();
    let v = vec![0.3, -1.2, 5.0];
    let y = kernels::causal_linear_attention(&q, &k, &v, 1, 4, 3);
    let den = kernels::dot(&q, &k);
    for (a, b) in y.iter().zip(&v) {
        // exact up to the denominator guard
        assert!((a - b * den / (den + 1e-6)).abs() < 1e-12);
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn ops_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let x = rand_tensor(&mut rng, &[4, 16]);
    let w = rand_tensor(&mut rng, &[4, 2, 3]);
    let spec = ConvSpec {
        stride: 2,
        dilation: 2,
        groups: 2,
    };
    assert_eq!(run_conv(&x, &w, spec), run_conv(&x, &w, spec));
}

/// Quadratic form: y_t = Σ_{s≤t} (φq_t·φk_s) v_s / (Σ_{s≤t} φq_t·φk_s + ε).
fn quadratic_attention(pq: &[f64], pk: &[f64], v: &[f64], t: usize, dk: usize, dv: usize) -> Vec<f64> {
    let mut y = vec![0.0; t * dv];
    for i in 0..t {
        let q = &pq[i * dk..(i + 1) * dk];
        let w: Vec<f64> = (0..=i)
            .map(|s| q.iter().zip(&pk[s * dk..(s + 1) * dk]).map(|(a, b)| a * b).sum())
            .collect();
        let den: f64 = w.iter().sum::<f64>() + kernels::LINEAR_ATTN_EPS;
        for (s, ws) in w.iter().enumerate() {
            for c in 0..dv {
                y[i * dv + c] += ws * v[s * dv + c] / den;
            }
        }
    }
    y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn recurrent_attention_matches_quadratic_form(
        t in 1usize..=32,
        dk in 1usize..=8,
        dv in 1usize..=8,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Positive features, as produced by elu + 1.
        let pq: Vec<f64> = (0..t * dk).map(|_| rng.gen_range(0.01..3.0)).collect();
        let pk: Vec<f64> = (0..t * dk).map(|_| rng.gen_range(0.01..3.0)).collect();
        let v: Vec<f64> = (0..t * dv).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let want = quadratic_attention(&pq, &pk, &v, t, dk, dv);
        let mut g = Graph::new();
        let (a, b, c) = (
            g.constant(Tensor::new(&[t, dk], pq).unwrap()),
            g.constant(Tensor::new(&[t, dk], pk).unwrap()),
            g.constant(Tensor::new(&[t, dv], v).unwrap()),
        );
        let y = g.causal_linear_attention(a, b, c).unwrap();
        for (got, w) in g.value(y).data().iter().zip(&want) {
            prop_assert!((got - w).abs() < 1e-6, "{} vs {}", got, w);
        }
    }
}
