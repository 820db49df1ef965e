use tta_demo::{FillMode, Scene};
use tta_core::Tensor;

fn hole_l1(gt: &Tensor, out: &Tensor, mask: &Tensor) -> f64 {
    let hw = mask.numel();
    let (mut acc, mut n) = (0.0, 0);
    for i in 0..gt.numel() {
        if mask.data()[i % hw] > 0.5 {
            acc += (out.data()[i] - gt.data()[i]).abs() as f64;
            n += 1;
        }
    }
    acc / n as f64
}

#[test]
fn new_scene_has_mask_in_band() {
    let s = Scene::try_new(64).unwrap();
    assert!((0.10..=0.40).contains(&s.hole_ratio()));
    assert_eq!(s.texture_rgba().len(), 64 * 64 * 4);
    assert!(Scene::try_new(63).is_err() && Scene::try_new(4).is_err());
}

#[test]
fn fill_keeps_known_pixels_and_is_deterministic() {
    for mode in [FillMode::Swap, FillMode::Weighted] {
        let mut a = Scene::try_new(64).unwrap();
        a.try_set_texture("stripes", 3).unwrap();
        a.try_random_mask(3, 0.1, 0.4).unwrap();
        a.try_fill(mode, 2).unwrap();
        let f = a.filled().unwrap().clone();
        let hw = 64 * 64;
        for i in 0..f.numel() {
            if a.mask().data()[i % hw] < 0.5 {
                assert_eq!(f.data()[i], a.texture().data()[i]);
            }
        }
        assert!(f.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0 + 1e-5));
        let mut b = Scene::try_new(64).unwrap();
        b.try_set_texture("stripes", 3).unwrap();
        b.try_random_mask(3, 0.1, 0.4).unwrap();
        b.try_fill(mode, 2).unwrap();
        assert_eq!(b.filled().unwrap(), &f);
        assert_eq!(a.fill_rgba(), b.fill_rgba());
    }
}

#[test]
fn swap_fill_beats_mean_color_on_textures() {
    for family in ["stripes", "checker"] {
        for seed in 0..5 {
            let mut s = Scene::try_new(64).unwrap();
            s.try_set_texture(family, seed).unwrap();
            s.try_random_mask(seed, 0.1, 0.4).unwrap();
            let (gt, mask) = (s.texture().clone(), s.mask().clone());
            s.try_fill(FillMode::Swap, 0).unwrap();
            let mean_fill = hole_l1(&gt, s.filled().unwrap(), &mask);
            s.try_fill(FillMode::Swap, 3).unwrap();
            let swap = hole_l1(&gt, s.filled().unwrap(), &mask);
            assert!(swap < mean_fill, "{family} {seed}: swap {swap} vs mean {mean_fill}");
        }
    }
}

#[test]
fn painting_and_clearing_edit_the_mask() {
    let mut s = Scene::try_new(32).unwrap();
    s.clear_mask();
    assert_eq!(s.hole_ratio(), 0.0);
    s.paint(16.0, 16.0, 4.0, false);
    let r = s.hole_ratio();
    // disc area pi r^2 = 50.3 of 1024 pixels, up to pixel-center rounding
    assert!((r * 1024.0 - 50.3).abs() < 8.0, "{r}");
    s.paint(16.0, 16.0, 4.0, true);
    assert_eq!(s.hole_ratio(), 0.0);
    let masked = s.masked_rgba();
    assert_eq!(masked, s.texture_rgba());
    assert!(s.try_set_texture("plaid", 0).is_err());
}
