use lyricsinger::lm::interleave::level_at;
use lyricsinger::lm::{deinterleave, interleave, tick, Level, MixedSequence};
use lyricsinger::vqvae::ctc::{ctc_greedy_decode, ctc_loss_and_grad, min_frames};
use lyricsinger::vqvae::{perplexity, Codebook, Quantize, VqConfig, VqVae};
use numkit::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Sums the probability of every frame labelling whose collapse is `target`,
/// walking the labellings depth first and pruning impossible prefixes.
fn enumerate(probs: &[Vec<f64>], target: &[usize]) -> f64 {
    fn walk(probs: &[Vec<f64>], target: &[usize], t: usize, emitted: usize, prev: usize, acc: f64) -> f64 {
        if t == probs.len() {
            return if emitted == target.len() { acc } else { 0.0 };
        }
        let mut total = 0.0;
        for (s, &p) in probs[t].iter().enumerate() {
            let next = if s == 0 || s == prev {
                emitted
            } else if emitted < target.len() && target[emitted] == s {
                emitted + 1
            } else {
                continue;
            };
            total += walk(probs, target, t + 1, next, s, acc * p);
        }
        total
    }
    walk(probs, target, 0, 0, 0, 1.0)
}

#[test]
fn ctc_forward_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cases = 0;
    while cases < 250 {
        let k = rng.gen_range(2..=4);
        let t = rng.gen_range(1..=8);
        if (k as f64).powi(t as i32) > 4096.0 {
            continue;
        }
        let n = rng.gen_range(0..=t);
        let target: Vec<usize> = (0..n).map(|_| rng.gen_range(1..k)).collect();
        if min_frames(&target) > t {
            assert!(ctc_loss_and_grad(&vec![0.0; t * k], k, &target).is_err());
            continue;
        }
        let logits: Vec<f64> = (0..t * k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let probs: Vec<Vec<f64>> = logits.chunks(k).map(softmax).collect();
        let (loss, _) = ctc_loss_and_grad(&logits, k, &target).unwrap();
        let want = -enumerate(&probs, &target).ln();
        assert!(
            (loss - want).abs() < 1e-10,
            "T={t} K={k} y={target:?}: {loss} vs {want}"
        );
        cases += 1;
    }
}

#[test]
fn ctc_gradient_rows_sum_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (t, k) = (7, 4);
    let logits: Vec<f64> = (0..t * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let (_, grad) = ctc_loss_and_grad(&logits, k, &[1, 3, 3]).unwrap();
    for row in grad.chunks(k) {
        assert!(row.iter().sum::<f64>().abs() < 1e-12);
    }
}

#[test]
fn greedy_decode_of_confident_path() {
    // Frames argmax: 1 1 0 2 2 0 2
    let path = [1, 1, 0, 2, 2, 0, 2];
    let logits: Vec<f32> = path
        .iter()
        .flat_map(|&s| (0..3).map(move |j| if j == s { 5.0 } else { 0.0 }))
        .collect();
    assert_eq!(ctc_greedy_decode(&logits, 3), vec![1, 2, 2]);
}

fn scan(protos: &[f64], d: usize, h: &[f64]) -> usize {
    let dists: Vec<f64> = protos
        .chunks(d)
        .map(|e| e.iter().zip(h).map(|(a, b)| (a - b).powi(2)).sum())
        .collect();
    let best = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    dists.iter().position(|&x| x == best).unwrap()
}

#[test]
fn quantizer_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ties = 0;
    for case in 0..1200 {
        let m = rng.gen_range(2..=16);
        let d = rng.gen_range(1..=6);
        let mut cb: Codebook<f64> = Codebook::new(m, d, 1.0, 0.99, 1e-5, &mut rng).unwrap();
        // Small integer grids make exact distance ties common.
        if case % 2 == 0 {
            cb.prototypes.iter_mut().for_each(|v| *v = rng.gen_range(-2..=2) as f64);
        }
        let h: Vec<f64> = if case % 2 == 0 {
            (0..d).map(|_| rng.gen_range(-2..=2) as f64).collect()
        } else {
            (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        if case % 3 == 0 {
            // Duplicate a prototype so two indices are equidistant from every input.
            let (a, b) = (rng.gen_range(0..m), rng.gen_range(0..m));
            let row = cb.prototype(a).to_vec();
            cb.prototypes[b * d..(b + 1) * d].copy_from_slice(&row);
        }
        let want = scan(&cb.prototypes, d, &h);
        let dw: f64 = cb.prototype(want).iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum();
        if (0..m)
            .filter(|&j| {
                cb.prototype(j)
                    .iter()
                    .zip(&h)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    == dw
            })
            .count()
            > 1
        {
            ties += 1;
        }
        assert_eq!(cb.nearest(&h), want, "case {case}");
    }
    assert!(ties > 100, "only {ties} tie cases generated");
}

#[test]
fn engineered_ties_take_lowest_index() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut cb: Codebook<f64> = Codebook::new(4, 2, 1.0, 0.99, 1e-5, &mut rng).unwrap();
    cb.prototypes = vec![3.0, 3.0, 1.0, 0.0, -1.0, 0.0, 0.0, 1.0];
    assert_eq!(cb.nearest(&[0.0, 0.0]), 1);
    cb.prototypes = vec![3.0, 3.0, 0.0, 1.0, -1.0, 0.0, 1.0, 0.0];
    assert_eq!(cb.nearest(&[0.0, 0.0]), 1);
    assert_eq!(cb.assign(&[0.0, 0.0, 3.0, 3.0]).unwrap(), vec![1, 0]);
}

#[test]
fn perplexity_reference_values() {
    assert!((perplexity(&[0, 0, 0], 8) - 1.0).abs() < 1e-12);
    assert!((perplexity(&[0, 1, 2, 3], 8) - 4.0).abs() < 1e-12);
    // Probabilities (1/2, 1/4, 1/4): exp(1.5 ln 2) = 2^1.5.
    assert!((perplexity(&[5, 5, 1, 2], 8) - 2f64.powf(1.5)).abs() < 1e-12);
}

fn tiny_vq() -> VqVae<f64> {
    let cfg = VqConfig {
        n_mels: 8,
        channels: 8,
        latent_dim: 4,
        codebook_size: 8,
        n_phonemes: 3,
        g3_blocks: 1,
        conv_groups: 2,
        norm_groups: 2,
        ..VqConfig::default()
    };
    VqVae::new(cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
}

#[test]
fn straight_through_passes_gradient_unchanged() {
    let vq = tiny_vq();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (d, l) = (4, 6);
    let h = Tensor::new(&[d, l], (0..d * l).map(|_| rng.gen_range(-0.1..0.1)).collect()).unwrap();
    let w = Tensor::new(&[d, l], (0..d * l).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let mut g = Graph::new();
    let hv = g.leaf(h.clone());
    let (codes, hq, _) = vq.quantize(&mut g, 2, hv, &Quantize::Nearest).unwrap();
    for (i, &c) in codes.iter().enumerate() {
        for r in 0..d {
            assert_eq!(g.value(hq).at2(r, i), vq.codebooks[2].prototype(c)[r]);
        }
    }
    let wv = g.constant(w.clone());
    let prod = g.mul(hq, wv).unwrap();
    let loss = g.sum(prod);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(hv).unwrap(), w.data());
}

#[test]
fn commitment_loss_is_mean_squared_distance() {
    let vq = tiny_vq();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (d, l) = (4, 5);
    let h = Tensor::new(&[d, l], (0..d * l).map(|_| rng.gen_range(-0.1..0.1)).collect()).unwrap();
    let mut g = Graph::new();
    let hv = g.leaf(h.clone());
    let (codes, _, commit) = vq.quantize(&mut g, 0, hv, &Quantize::Nearest).unwrap();
    let mut want = 0.0;
    for (i, &c) in codes.iter().enumerate() {
        for r in 0..d {
            want += (h.at2(r, i) - vq.codebooks[0].prototype(c)[r]).powi(2);
        }
    }
    want /= l as f64;
    assert!((g.value(commit).data()[0] - want).abs() < 1e-14);
    g.backward(commit).unwrap();
    let grad = g.grad(hv).unwrap();
    for (i, &c) in codes.iter().enumerate() {
        for r in 0..d {
            let expect = 2.0 * (h.at2(r, i) - vq.codebooks[0].prototype(c)[r]) / l as f64;
            assert!((grad[r * l + i] - expect).abs() < 1e-14);
        }
    }
}

#[test]
fn two_group_layout() {
    let mid = [10, 11, 12, 13];
    let bot = [20, 21, 22, 23, 24, 25, 26, 27];
    let mix = interleave(&mid, &bot).unwrap();
    assert_eq!(mix.tokens, vec![10, 11, 20, 21, 22, 23, 12, 13, 24, 25, 26, 27]);
    let ticks: Vec<usize> = mix.ticks().collect();
    assert_eq!(ticks, vec![1, 2, 3, 4, 5, 6, 1, 2, 3, 4, 5, 6]);
    assert_eq!(level_at(7), Level::Mid);
    assert_eq!(level_at(9), Level::Bot);
    assert_eq!(tick(13), 1);
}

#[test]
fn interleave_round_trips_every_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for l in 1..=256 {
        let mid: Vec<usize> = (0..2 * l).map(|_| rng.gen_range(0..256)).collect();
        let bot: Vec<usize> = (0..4 * l).map(|_| rng.gen_range(0..256)).collect();
        let mix = interleave(&mid, &bot).unwrap();
        assert_eq!(mix.len(), 6 * l);
        assert_eq!(deinterleave(&mix).unwrap(), (mid, bot));
    }
}

proptest! {
    #[test]
    fn interleave_inverse(l in 1usize..=256, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mid: Vec<usize> = (0..2 * l).map(|_| rng.gen_range(0..1024)).collect();
        let bot: Vec<usize> = (0..4 * l).map(|_| rng.gen_range(0..1024)).collect();
        let mix = interleave(&mid, &bot).unwrap();
        let levels: Vec<Level> = mix.levels().collect();
        for (i, lv) in levels.iter().enumerate() {
            prop_assert_eq!(*lv == Level::Mid, i % 6 < 2);
        }
        prop_assert_eq!(deinterleave(&mix).unwrap(), (mid, bot));
    }

    #[test]
    fn deinterleave_inverse(groups in 1usize..=64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix = MixedSequence { tokens: (0..6 * groups).map(|_| rng.gen_range(0..256)).collect() };
        let (mid, bot) = deinterleave(&mix).unwrap();
        prop_assert_eq!(interleave(&mid, &bot).unwrap(), mix);
    }

    #[test]
    fn ragged_lengths_are_rejected(extra in 1usize..6, groups in 0usize..8) {
        let mix = MixedSequence { tokens: vec![0; 6 * groups + extra] };
        prop_assert!(deinterleave(&mix).is_err());
    }
}

fn ln(p: &[f64]) -> Vec<f64> {
    p.iter().map(|v| v.ln()).collect()
}

#[test]
fn nucleus_with_insufficient_head_keeps_next_token() {
    // 0.6 < 0.9, so the smallest prefix reaching 0.9 is {0, 1}.
    let kept = lyricsinger::lm::sampling::nucleus(&ln(&[0.6, 0.4]), 0.9, 1.0);
    assert_eq!(kept.len(), 2);
    let kept = lyricsinger::lm::sampling::nucleus(&ln(&[0.6, 0.4]), 0.6, 1.0);
    assert_eq!(kept, vec![(0, 1.0)]);
}

#[test]
fn seeded_sampling_is_reproducible() {
    let cfg = lyricsinger::lm::SamplerConfig::default();
    let l = ln(&[0.1, 0.2, 0.3, 0.4]);
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..200)
            .map(|_| lyricsinger::lm::nucleus_sample(&l, &cfg, &mut rng))
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(7), draw(7));
    assert_ne!(draw(7), draw(8));
}
