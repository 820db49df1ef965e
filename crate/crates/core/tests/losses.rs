use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tta_core::gradcheck::GradCheck;
use tta_core::losses::{
    adv_d_loss, adv_g_loss, gram, perceptual_loss, rec_loss, style_loss, total_loss, LossParts, LossWeights,
    PerceptualExtractor, Stage,
};
use tta_core::tensor::conv::ConvParams;
use tta_core::{Tape, Tensor};

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng).unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    t.item() as f64
}

#[test]
fn rec_loss_values() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_t(&mut rng, &[2, 3, 4, 4]);
    let gt = tape.constant(x.clone());
    assert_eq!(rec_loss(&gt, &gt).unwrap().value().item(), 0.0);
    let shifted = tape.constant(x.map(|v| v + 0.5));
    assert!((rec_loss(&gt, &shifted).unwrap().value().item() - 0.5).abs() < 1e-6);
    let y = rand_t(&mut rng, &[2, 3, 4, 4]);
    let want: f64 = x.data().iter().zip(y.data()).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / 96.0;
    let got = scalar(rec_loss(&gt, &tape.constant(y)).unwrap().value());
    assert!((got - want).abs() < 1e-6);
    assert!(rec_loss(&gt, &tape.constant(Tensor::zeros(&[1, 3, 4, 4]).unwrap())).is_err());
}

#[test]
fn hinge_values() {
    let tape = Tape::new();
    let ones = tape.constant(Tensor::full(&[2, 1, 2, 2], 1.0).unwrap());
    let minus = tape.constant(Tensor::full(&[2, 1, 2, 2], -1.0).unwrap());
    let zeros = tape.constant(Tensor::zeros(&[2, 1, 2, 2]).unwrap());
    assert_eq!(adv_d_loss(&ones, &minus).unwrap().value().item(), 0.0);
    assert_eq!(adv_d_loss(&zeros, &zeros).unwrap().value().item(), 2.0);
    assert_eq!(adv_g_loss(&zeros).value().item(), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (r, f) = (rand_t(&mut rng, &[3, 2, 2, 2]).map(|v| 2.0 * v), rand_t(&mut rng, &[3, 2, 2, 2]).map(|v| 2.0 * v));
    let n = r.numel() as f64;
    let want_d = r.data().iter().map(|&v| (1.0 - v as f64).max(0.0)).sum::<f64>() / n
        + f.data().iter().map(|&v| (1.0 + v as f64).max(0.0)).sum::<f64>() / n;
    let want_g = -f.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let (rv, fv) = (tape.constant(r), tape.constant(f));
    assert!((scalar(adv_d_loss(&rv, &fv).unwrap().value()) - want_d).abs() < 1e-6);
    assert!((scalar(adv_g_loss(&fv).value()) - want_g).abs() < 1e-6);
}

#[test]
fn total_loss_with_standard_weights_on_unit_parts() {
    let tape = Tape::new();
    let one = || tape.constant(Tensor::scalar(1.0));
    let parts = LossParts {
        rec: one(),
        adv: one(),
        per: one(),
        style: one(),
    };
    let total = total_loss(&LossWeights::default(), &parts).unwrap().value().item();
    assert!((total - 102.1).abs() < 1e-4, "{total}");
    let zero = LossWeights {
        rec: 0.0,
        adv: 0.0,
        per: 0.0,
        style: 0.0,
    };
    assert_eq!(total_loss(&zero, &parts).unwrap().value().item(), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = LossWeights {
        rec: rng.gen(),
        adv: rng.gen(),
        per: rng.gen(),
        style: rng.gen(),
    };
    let v: [f32; 4] = [rng.gen(), rng.gen(), rng.gen(), rng.gen()];
    let parts = LossParts {
        rec: tape.constant(Tensor::scalar(v[0])),
        adv: tape.constant(Tensor::scalar(v[1])),
        per: tape.constant(Tensor::scalar(v[2])),
        style: tape.constant(Tensor::scalar(v[3])),
    };
    let want = w.rec as f64 * v[0] as f64 + w.adv as f64 * v[1] as f64 + w.per as f64 * v[2] as f64 + w.style as f64 * v[3] as f64;
    assert!((scalar(total_loss(&w, &parts).unwrap().value()) - want).abs() < 1e-5);
}

fn gram_oracle(phi: &Tensor) -> Vec<f64> {
    let [n, c, h, w] = phi.dims4("gram").unwrap();
    let mut out = vec![0.0; n * c * c];
    for b in 0..n {
        for i in 0..c {
            for j in 0..c {
                let mut acc = 0.0;
                for y in 0..h {
                    for x in 0..w {
                        acc += phi.at(&[b, i, y, x]) as f64 * phi.at(&[b, j, y, x]) as f64;
                    }
                }
                out[(b * c + i) * c + j] = acc / (c * h * w) as f64;
            }
        }
    }
    out
}

#[test]
fn gram_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let phi = rand_t(&mut rng, &[2, 5, 3, 4]);
    let tape = Tape::new();
    let g = gram(&tape.constant(phi.clone())).unwrap();
    assert_eq!(g.shape(), [2, 5, 5]);
    for (a, b) in g.value().data().iter().zip(gram_oracle(&phi)) {
        assert!((*a as f64 - b).abs() < 1e-5);
    }
    let zero = gram(&tape.constant(Tensor::zeros(&[1, 3, 2, 2]).unwrap())).unwrap();
    assert!(zero.value().data().iter().all(|&v| v == 0.0));
    let single = rand_t(&mut rng, &[1, 1, 3, 3]);
    let mean_sq = single.data().iter().map(|&v| v * v).sum::<f32>() / 9.0;
    let g1 = gram(&tape.constant(single)).unwrap();
    assert!((g1.value().item() - mean_sq).abs() < 1e-6);
}

/// Smallest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
fn min_eigenvalue(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    for _ in 0..100 {
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-15 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let (c, s) = (1.0 / (t * t + 1.0).sqrt(), t / (t * t + 1.0).sqrt());
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).fold(f64::INFINITY, f64::min)
}

fn identity_extractor(channels: usize) -> PerceptualExtractor {
    let mut w = Tensor::zeros(&[channels, channels, 1, 1]).unwrap();
    for c in 0..channels {
        w.data_mut()[c * channels + c] = 1.0;
    }
    PerceptualExtractor::from_stages(vec![Stage {
        weight: w,
        bias: Tensor::zeros(&[channels]).unwrap(),
        conv: ConvParams::new(1, 0, 1),
        relu: false,
    }])
    .unwrap()
}

#[test]
fn identity_stage_reduces_perceptual_to_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tape = Tape::new();
    let (a, b) = (tape.constant(rand_t(&mut rng, &[2, 3, 6, 6])), tape.constant(rand_t(&mut rng, &[2, 3, 6, 6])));
    let ext = identity_extractor(3);
    let per = perceptual_loss(&ext, &a, &b).unwrap().value().item();
    let rec = rec_loss(&a, &b).unwrap().value().item();
    assert!((per - rec).abs() < 1e-6);
}

#[test]
fn perceptual_and_style_match_per_stage_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tape = Tape::new();
    let (x, y) = (rand_t(&mut rng, &[2, 3, 16, 16]), rand_t(&mut rng, &[2, 3, 16, 16]));
    let ext = PerceptualExtractor::new(9);
    let (fx, fy) = (ext.features(&tape.constant(x.clone())).unwrap(), ext.features(&tape.constant(y.clone())).unwrap());
    assert_eq!(fx.len(), 5);
    let (mut per, mut style) = (0.0f64, 0.0f64);
    for (a, b) in fx.iter().zip(&fy) {
        let (a, b) = (a.value(), b.value());
        per += a.data().iter().zip(b.data()).map(|(&u, &v)| (u as f64 - v as f64).abs()).sum::<f64>() / a.numel() as f64;
        style += gram_oracle(a).iter().zip(gram_oracle(b)).map(|(u, v)| (u - v).abs()).sum::<f64>() / 2.0;
    }
    let (xv, yv) = (tape.constant(x), tape.constant(y));
    let got_per = scalar(perceptual_loss(&ext, &xv, &yv).unwrap().value());
    let got_style = scalar(style_loss(&ext, &xv, &yv).unwrap().value());
    assert!((got_per - per).abs() <= 1e-5 * per.max(1.0), "{got_per} vs {per}");
    assert!((got_style - style).abs() <= 1e-4 * style.max(1e-3), "{got_style} vs {style}");
    assert_eq!(perceptual_loss(&ext, &xv, &xv).unwrap().value().item(), 0.0);
    assert_eq!(style_loss(&ext, &xv, &xv).unwrap().value().item(), 0.0);
}

#[test]
fn style_loss_vanishes_when_composite_equals_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tape = Tape::new();
    let pred = tape.constant(rand_t(&mut rng, &[1, 3, 8, 8]));
    let gt = tape.constant(rand_t(&mut rng, &[1, 3, 8, 8]));
    let all_hole = Tensor::full(&[1, 1, 8, 8], 1.0).unwrap();
    let comp = tta_core::model::composite(&pred, &gt, &all_hole).unwrap();
    let ext = PerceptualExtractor::new(1);
    assert_eq!(style_loss(&ext, &comp, &pred).unwrap().value().item(), 0.0);
}

#[test]
fn extractor_is_deterministic_from_seed() {
    let (a, b, c) = (PerceptualExtractor::new(3), PerceptualExtractor::new(3), PerceptualExtractor::new(4));
    for (s, t) in a.stages.iter().zip(&b.stages) {
        assert_eq!(s.weight.data(), t.weight.data());
    }
    assert_ne!(a.stages[0].weight.data(), c.stages[0].weight.data());
    let channels: Vec<usize> = a.stages.iter().map(|s| s.weight.dim(0)).collect();
    assert_eq!(channels, PerceptualExtractor::CHANNELS);
}

#[test]
fn losses_pass_finite_difference_checks() {
    let check = GradCheck::default();
    let ext = PerceptualExtractor::new(11);
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let gt = rand_t(&mut rng, &[1, 3, 8, 8]);
        let pred = rand_t(&mut rng, &[1, 3, 8, 8]).map(|v| 0.9 * v);
        let fixed = |t: &Tensor, v: &tta_core::Var| v.constant_like(t.clone());

        let r = check.run(&[pred.clone()], |v| rec_loss(&fixed(&gt, &v[0]), &v[0])).unwrap();
        assert!(r.passes(1e-2), "rec seed {seed}: {r:?}");

        let scores = rand_t(&mut rng, &[2, 1, 2, 2]).map(|v| 1.7 * v);
        let real = rand_t(&mut rng, &[2, 1, 2, 2]).map(|v| 1.7 * v);
        let r = check.run(&[scores.clone()], |v| Ok(adv_g_loss(&v[0]))).unwrap();
        assert!(r.passes(1e-2), "adv_g seed {seed}: {r:?}");
        let r = check.run(&[real, scores], |v| adv_d_loss(&v[0], &v[1])).unwrap();
        assert!(r.passes(1e-2), "adv_d seed {seed}: {r:?}");

        let r = check.run(&[pred.clone()], |v| perceptual_loss(&ext, &fixed(&gt, &v[0]), &v[0])).unwrap();
        assert!(r.passes(1e-2), "per seed {seed}: {r:?}");

        let r = check.run(&[pred.clone()], |v| style_loss(&ext, &fixed(&gt, &v[0]), &v[0])).unwrap();
        assert!(r.passes(1e-2), "style seed {seed}: {r:?}");

        let phi = rand_t(&mut rng, &[2, 3, 3, 3]);
        let r = check.run(&[phi], |v| gram(&v[0])).unwrap();
        assert!(r.passes(1e-2), "gram seed {seed}: {r:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gram_is_symmetric_psd(seed in any::<u64>(), c in 1usize..6, hw in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = rand_t(&mut rng, &[1, c, hw, hw + 1]);
        let g = gram(&Tape::new().constant(phi)).unwrap().value().clone();
        let m: Vec<Vec<f64>> = (0..c).map(|i| (0..c).map(|j| g.data()[i * c + j] as f64).collect()).collect();
        for i in 0..c {
            for j in 0..c {
                prop_assert!((m[i][j] - m[j][i]).abs() <= 1e-6);
            }
        }
        prop_assert!(min_eigenvalue(m) >= -1e-6);
    }

    #[test]
    fn style_loss_ignores_shared_spatial_permutations(seed in any::<u64>()) {
        // a pixel permutation applied to both inputs of an identity extractor
        // permutes both feature maps identically
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (rand_t(&mut rng, &[1, 3, 4, 4]), rand_t(&mut rng, &[1, 3, 4, 4]));
        let mut perm: Vec<usize> = (0..16).collect();
        for i in (1..16).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let permute = |t: &Tensor| {
            let mut out = t.clone();
            for c in 0..3 {
                for (dst, &src) in perm.iter().enumerate() {
                    out.data_mut()[c * 16 + dst] = t.data()[c * 16 + src];
                }
            }
            out
        };
        let ext = identity_extractor(3);
        let tape = Tape::new();
        let base = style_loss(&ext, &tape.constant(a.clone()), &tape.constant(b.clone())).unwrap().value().item();
        let moved = style_loss(&ext, &tape.constant(permute(&a)), &tape.constant(permute(&b))).unwrap().value().item();
        prop_assert!((base - moved).abs() <= 1e-6 * base.abs().max(1.0));
    }

    #[test]
    fn losses_are_nonnegative_and_zero_on_identical_inputs(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::new();
        let (a, b) = (tape.constant(rand_t(&mut rng, &[1, 3, 8, 8])), tape.constant(rand_t(&mut rng, &[1, 3, 8, 8])));
        let ext = PerceptualExtractor::new(seed);
        for v in [
            rec_loss(&a, &b).unwrap(),
            perceptual_loss(&ext, &a, &b).unwrap(),
            style_loss(&ext, &a, &b).unwrap(),
            adv_d_loss(&a, &b).unwrap(),
        ] {
            prop_assert!(v.value().item() >= 0.0);
        }
        prop_assert_eq!(rec_loss(&a, &a).unwrap().value().item(), 0.0);
        prop_assert_eq!(perceptual_loss(&ext, &a, &a).unwrap().value().item(), 0.0);
        prop_assert_eq!(style_loss(&ext, &a, &a).unwrap().value().item(), 0.0);
    }
}
