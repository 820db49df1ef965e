use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tta_core::attention::{
    feature_swap, reference, relevance_embedding, synthesize, weighted_sum_attention, AttentionConfig, Fallback,
    INVALID_SCORE,
};
use tta_core::gradcheck::GradCheck;
use tta_core::tensor::conv::{conv2d, ConvParams};
use tta_core::tensor::kernels;
use tta_core::{Tape, Tensor};

mod common;
use common::attention::{at, oracle, random_mask};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut rng(seed)).unwrap()
}

#[test]
fn similarity_matches_pairwise_oracle() {
    let (q, p) = (randn(&[1, 2, 8, 8], 1), randn(&[1, 2, 8, 8], 2));
    let mask = Tensor::ones(&[1, 1, 8, 8]).unwrap();
    let cfg = AttentionConfig::default();
    let tape = Tape::new();
    let s = relevance_embedding(&tape.constant(q.clone()), &tape.constant(p.clone()), &mask, &cfg).unwrap();
    let o = oracle(&q, &p, &mask, &cfg);
    let l = o.scores[0].len();
    assert_eq!(s.scores.shape(), &[1, l, l]);
    for i in 0..l {
        for j in 0..l {
            let got = s.scores.data()[i * l + j] as f64;
            assert!((got - o.scores[0][i][j]).abs() < 1e-5, "s[{i},{j}] = {got} vs {}", o.scores[0][i][j]);
        }
    }
}

#[test]
fn masked_candidates_carry_sentinel() {
    let (q, p) = (randn(&[1, 2, 8, 8], 3), randn(&[1, 2, 8, 8], 4));
    let mask = random_mask(1, 8, 8, 5);
    let cfg = AttentionConfig { downsample: 1, ..Default::default() };
    let tape = Tape::new();
    let s = relevance_embedding(&tape.constant(q.clone()), &tape.constant(p.clone()), &mask, &cfg).unwrap();
    let o = oracle(&q, &p, &mask, &cfg);
    assert_eq!(s.admitted, o.admitted[0]);
    for (i, row) in s.scores.data().chunks(64).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if o.admitted[0][j] {
                assert!((v as f64 - o.scores[0][i][j]).abs() < 1e-5);
            } else {
                assert_eq!(v, INVALID_SCORE);
            }
        }
    }
}

fn check_against_oracle(n: usize, c: usize, size: usize, cfg: AttentionConfig, seed: u64) {
    let q = randn(&[n, c, size, size], seed);
    let p = randn(&[n, c, size, size], seed + 1);
    let mask = random_mask(n, size, size, seed + 2);
    let tape = Tape::new();
    let (qv, pv) = (tape.constant(q.clone()), tape.constant(p.clone()));
    let s = relevance_embedding(&qv, &pv, &mask, &cfg).unwrap();
    let res = feature_swap(&pv, &s, &cfg).unwrap();
    let o = oracle(&q, &p, &mask, &cfg);
    let l = o.winners[0].len();
    for b in 0..n {
        assert_eq!(&res.candidate_index[b * l..(b + 1) * l], &o.winners[b][..], "sample {b} index map");
        for i in 0..l {
            let r = res.ratio_grid.value().data()[b * l + i] as f64;
            assert!((r - o.ratio[b][i]).abs() < 1e-5);
        }
    }
    let t = res.texture_map.value().data();
    for (i, &e) in o.texture.iter().enumerate() {
        assert!((t[i] as f64 - e).abs() < 1e-5, "T[{i}] = {} vs {e}", t[i]);
    }
    // the full-resolution ratio map repeats each grid value over its cell
    let cell = cfg.cell();
    let rm = res.ratio_map.value();
    for b in 0..n {
        for y in 0..size {
            for x in 0..size {
                let i = (y / cell) * o.cols + x / cell;
                assert_eq!(rm.data()[(b * size + y) * size + x], res.ratio_grid.value().data()[b * l + i]);
            }
        }
    }
}

#[test]
fn swap_matches_exhaustive_oracle_default() {
    check_against_oracle(2, 4, 16, AttentionConfig::default(), 10);
}

#[test]
fn library_reference_agrees_with_test_oracle() {
    let cfg = AttentionConfig::default();
    let (q, p) = (randn(&[2, 3, 12, 12], 40), randn(&[2, 3, 12, 12], 41));
    let mask = random_mask(2, 12, 12, 42);
    let r = reference::feature_swap(&q, &p, &mask, &cfg).unwrap();
    let o = oracle(&q, &p, &mask, &cfg);
    assert_eq!(r.candidate_index, o.winners.concat());
    assert!(r.texture.data().iter().zip(&o.texture).all(|(a, b)| (*a as f64 - b).abs() < 1e-5));
}

#[test]
fn single_valid_candidate_wins_everywhere() {
    let cfg = AttentionConfig { downsample: 1, ..Default::default() };
    let mut m = vec![0.0; 64];
    for y in 3..6 {
        for x in 3..6 {
            m[y * 8 + x] = 1.0;
        }
    }
    let mask = Tensor::new(&[1, 1, 8, 8], m).unwrap();
    let (q, p) = (randn(&[1, 2, 8, 8], 50), randn(&[1, 2, 8, 8], 51));
    let tape = Tape::new();
    let pv = tape.constant(p.clone());
    let s = relevance_embedding(&tape.constant(q.clone()), &pv, &mask, &cfg).unwrap();
    assert_eq!(s.admitted.iter().filter(|&&a| a).count(), 1);
    let res = feature_swap(&pv, &s, &cfg).unwrap();
    assert!(res.candidate_index.iter().all(|&h| h == 4 * 8 + 4));
    let o = oracle(&q, &p, &mask, &cfg);
    assert!(res.texture_map.value().data().iter().zip(&o.texture).all(|(a, b)| (*a as f64 - b).abs() < 1e-5));
}

#[test]
fn nearest_valid_fallback_admits_best_fraction() {
    let cfg = AttentionConfig { downsample: 1, fallback: Fallback::NearestValid, ..Default::default() };
    let mut m = vec![0.0; 64];
    m[0] = 1.0;
    let mask = Tensor::new(&[1, 1, 8, 8], m).unwrap();
    let p = randn(&[1, 1, 8, 8], 52);
    let tape = Tape::new();
    let pv = tape.constant(p);
    let s = relevance_embedding(&pv, &pv, &mask, &cfg).unwrap();
    assert_eq!(s.fallback, vec![true]);
    // the corner patch sees 1 known pixel out of 4 in-image pixels
    let admitted: Vec<usize> = (0..64).filter(|&j| s.admitted[j]).collect();
    assert_eq!(admitted, vec![0]);
}

#[test]
fn weighted_sum_approaches_argmax_at_low_temperature() {
    let cfg = AttentionConfig::default();
    let p = randn(&[1, 3, 16, 16], 60);
    let noise = randn(&[1, 3, 16, 16], 61);
    let q = kernels::binary("add", &p, &noise, |a, b| a + 0.1 * b).unwrap();
    let mask = Tensor::ones(&[1, 1, 16, 16]).unwrap();
    let o = oracle(&q, &p, &mask, &cfg);
    for row in &o.scores[0] {
        let mut sorted = row.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(sorted[0] - sorted[1] > 0.02, "input has a near tie");
    }
    let tape = Tape::new();
    let (qv, pv) = (tape.constant(q), tape.constant(p));
    let soft = weighted_sum_attention(&qv, &pv, &mask, &cfg, 1e-3).unwrap();
    let s = relevance_embedding(&qv, &pv, &mask, &cfg).unwrap();
    let hard = feature_swap(&pv, &s, &cfg).unwrap();
    assert!(soft.value().max_abs_diff(hard.texture_map.value()) < 1e-3);
}

#[test]
fn weighted_sum_with_one_candidate_equals_swap() {
    let cfg = AttentionConfig { downsample: 1, ..Default::default() };
    let mut m = vec![0.0; 64];
    for y in 2..5 {
        for x in 4..7 {
            m[y * 8 + x] = 1.0;
        }
    }
    let mask = Tensor::new(&[1, 1, 8, 8], m).unwrap();
    let tape = Tape::new();
    let (qv, pv) = (tape.constant(randn(&[1, 2, 8, 8], 62)), tape.constant(randn(&[1, 2, 8, 8], 63)));
    let soft = weighted_sum_attention(&qv, &pv, &mask, &cfg, 1.0).unwrap();
    let s = relevance_embedding(&qv, &pv, &mask, &cfg).unwrap();
    assert_eq!(s.admitted.iter().filter(|&&a| a).count(), 1);
    let hard = feature_swap(&pv, &s, &cfg).unwrap();
    assert!(soft.value().max_abs_diff(hard.texture_map.value()) < 1e-5);
}

#[test]
fn uniform_similarity_averages_all_candidates() {
    let cfg = AttentionConfig { downsample: 1, swap_patch: 3, ..Default::default() };
    let (h, w, c) = (6usize, 6usize, 2usize);
    let p = randn(&[1, c, h, w], 64);
    let tape = Tape::new();
    let soft = weighted_sum_attention(
        &tape.constant(Tensor::zeros(&[1, c, h, w]).unwrap()),
        &tape.constant(p.clone()),
        &Tensor::ones(&[1, 1, h, w]).unwrap(),
        &cfg,
        1.0,
    )
    .unwrap();
    // every query receives the mean candidate patch m[c, dy, dx]
    let mean = |ch: usize, dy: isize, dx: isize| {
        let mut acc = 0.0;
        for y in 0..h as isize {
            for x in 0..w as isize {
                acc += at(&p, 0, ch, y + dy, x + dx);
            }
        }
        acc / (h * w) as f64
    };
    for ch in 0..c {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (mut acc, mut count) = (0.0, 0.0);
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let (ty, tx) = (y - dy, x - dx);
                        if ty >= 0 && tx >= 0 && ty < h as isize && tx < w as isize {
                            acc += mean(ch, dy, dx);
                            count += 1.0;
                        }
                    }
                }
                let got = soft.value().data()[(ch * h + y as usize) * w + x as usize] as f64;
                assert!((got - acc / count).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn unit_ratio_with_zero_fusion_halves_feature() {
    let tape = Tape::new();
    let f = randn(&[1, 3, 5, 5], 70);
    let out = synthesize(
        &tape.constant(f.clone()),
        &tape.constant(randn(&[1, 3, 5, 5], 71)),
        &tape.constant(Tensor::ones(&[1, 1, 5, 5]).unwrap()),
        &tape.constant(Tensor::zeros(&[3, 6, 3, 3]).unwrap()),
        &tape.constant(Tensor::zeros(&[3]).unwrap()),
    )
    .unwrap();
    assert!(out.value().max_abs_diff(&f.map(|v| v / 2.0)) < 1e-7);
}

#[test]
fn synthesize_matches_hand_composition() {
    let mut r = rng(72);
    let f = randn(&[2, 3, 6, 6], 73);
    let t = randn(&[2, 3, 6, 6], 74);
    let ratio = Tensor::uniform(&[2, 1, 6, 6], 0.0, 0.999, &mut r).unwrap();
    let w = Tensor::randn(&[3, 6, 3, 3], 0.3, &mut r).unwrap();
    let b = Tensor::randn(&[3], 0.3, &mut r).unwrap();
    let tape = Tape::new();
    let [fv, tv, rv, wv, bv] = [&f, &t, &ratio, &w, &b].map(|x| tape.constant(x.clone()));
    let got = synthesize(&fv, &tv, &rv, &wv, &bv).unwrap();

    let conv = conv2d(&kernels::concat(&[&f, &t], 1).unwrap(), &w, Some(&b), ConvParams::new(1, 1, 1)).unwrap();
    let mut expect = vec![0.0f32; f.numel()];
    for (i, e) in expect.iter_mut().enumerate() {
        let (n, pix) = (i / (3 * 36), i % 36);
        let rr = ratio.data()[n * 36 + pix];
        *e = (f.data()[i] + conv.data()[i] * rr) / (1.0 + rr);
    }
    let expect = Tensor::new(f.shape(), expect).unwrap();
    assert!(got.value().max_abs_diff(&expect) < 1e-5);
}

#[test]
fn synthesize_gradients_match_finite_differences() {
    let mut r = rng(75);
    let inputs = vec![
        randn(&[1, 2, 4, 4], 76),
        randn(&[1, 2, 4, 4], 77),
        Tensor::uniform(&[1, 1, 4, 4], 0.0, 0.9, &mut r).unwrap(),
        Tensor::randn(&[2, 4, 3, 3], 0.3, &mut r).unwrap(),
        Tensor::randn(&[2], 0.3, &mut r).unwrap(),
    ];
    let report = GradCheck::default()
        .run(&inputs, |v| synthesize(&v[0], &v[1], &v[2], &v[3], &v[4]))
        .unwrap();
    assert!(report.passes(1e-2), "{report:?}");
}

#[test]
fn swap_gradients_match_finite_differences() {
    // Q close to P keeps every argmax well separated under perturbation
    let cfg = AttentionConfig { swap_patch: 3, ..Default::default() };
    let p = randn(&[1, 2, 8, 8], 78);
    let noise = randn(&[1, 2, 8, 8], 79);
    let q = kernels::binary("add", &p, &noise, |a, b| a + 0.2 * b).unwrap();
    let mask = Tensor::ones(&[1, 1, 8, 8]).unwrap();
    let report = GradCheck::default()
        .run(&[q, p], |v| {
            let s = relevance_embedding(&v[0], &v[1], &mask, &cfg)?;
            let res = feature_swap(&v[1], &s, &cfg)?;
            res.texture_map.mul(&res.ratio_map)
        })
        .unwrap();
    assert!(report.passes(1e-2), "{report:?}");
}

#[test]
fn weighted_sum_gradients_match_finite_differences() {
    let cfg = AttentionConfig { swap_patch: 3, ..Default::default() };
    let mask = Tensor::ones(&[1, 1, 8, 8]).unwrap();
    let report = GradCheck::default()
        .run(&[randn(&[1, 2, 8, 8], 80), randn(&[1, 2, 8, 8], 81)], |v| {
            weighted_sum_attention(&v[0], &v[1], &mask, &cfg, 0.5)
        })
        .unwrap();
    assert!(report.passes(1e-2), "{report:?}");
}

fn config_strategy() -> impl Strategy<Value = AttentionConfig> {
    (prop_oneof![Just(1usize), Just(3), Just(5)], prop_oneof![Just(1usize), Just(3)], 1usize..=2, 1usize..=2).prop_map(
        |(swap_patch, sim_patch, stride, downsample)| AttentionConfig {
            swap_patch,
            sim_patch,
            stride,
            downsample,
            ..Default::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn self_attention_reconstructs_input(seed in 0u64..100_000, cfg in config_strategy()) {
        let p = randn(&[1, 3, 8, 8], seed);
        let mask = Tensor::ones(&[1, 1, 8, 8]).unwrap();
        let tape = Tape::new();
        let pv = tape.constant(p.clone());
        let s = relevance_embedding(&pv, &pv, &mask, &cfg).unwrap();
        let res = feature_swap(&pv, &s, &cfg).unwrap();
        let l = s.grid.positions();
        prop_assert_eq!(&res.candidate_index, &(0..l).collect::<Vec<_>>());
        prop_assert!(res.texture_map.value().max_abs_diff(&p) <= 1e-5);
        prop_assert!(res.ratio_map.value().data().iter().all(|r| (r - 1.0).abs() <= 1e-5));
    }

    #[test]
    fn swap_matches_oracle_on_random_shapes(
        seed in 0u64..100_000,
        n in 1usize..=2,
        c in 1usize..=4,
        half in 2usize..=8,
        cfg in config_strategy(),
    ) {
        check_against_oracle(n, c, 2 * half, cfg, seed);
    }

    #[test]
    fn winners_avoid_the_hole(seed in 0u64..100_000, cfg in config_strategy()) {
        let q = randn(&[2, 2, 16, 16], seed);
        let p = randn(&[2, 2, 16, 16], seed + 7);
        let mask = random_mask(2, 16, 16, seed + 13);
        let tape = Tape::new();
        let pv = tape.constant(p);
        let s = relevance_embedding(&tape.constant(q), &pv, &mask, &cfg).unwrap();
        let res = feature_swap(&pv, &s, &cfg).unwrap();
        let l = s.grid.positions();
        for b in 0..2 {
            if s.fallback[b] {
                continue;
            }
            for &h in &res.candidate_index[b * l..(b + 1) * l] {
                prop_assert!(s.admitted[b * l + h]);
            }
        }
    }

    #[test]
    fn argmax_ignores_candidate_scale(seed in 0u64..100_000, scale in 0.01f32..100.0) {
        let cfg = AttentionConfig::default();
        let q = randn(&[1, 2, 12, 12], seed);
        let p = randn(&[1, 2, 12, 12], seed + 3);
        let mask = random_mask(1, 12, 12, seed + 5);
        let tape = Tape::new();
        let pick = |p: Tensor| {
            let pv = tape.constant(p);
            let s = relevance_embedding(&tape.constant(q.clone()), &pv, &mask, &cfg).unwrap();
            feature_swap(&pv, &s, &cfg).unwrap().candidate_index
        };
        prop_assert_eq!(pick(p.clone()), pick(p.map(|v| v * scale)));
    }

    #[test]
    fn normalization_scales_by_inverse_one_plus_ratio(seed in 0u64..100_000, c in 0.0f32..0.99) {
        let f = randn(&[1, 2, 5, 5], seed);
        let tape = Tape::new();
        let out = synthesize(
            &tape.constant(f.clone()),
            &tape.constant(randn(&[1, 2, 5, 5], seed + 1)),
            &tape.constant(Tensor::full(&[1, 1, 5, 5], c).unwrap()),
            &tape.constant(Tensor::zeros(&[2, 4, 3, 3]).unwrap()),
            &tape.constant(Tensor::zeros(&[2]).unwrap()),
        )
        .unwrap();
        let mean_abs = |t: &Tensor| t.data().iter().map(|v| v.abs() as f64).sum::<f64>() / t.numel() as f64;
        let ratio = mean_abs(out.value()) / mean_abs(&f);
        prop_assert!((ratio - 1.0 / (1.0 + c as f64)).abs() < 1e-5);
    }
}
