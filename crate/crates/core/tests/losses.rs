mod common;

use common::{fd_check, fd_check_step, rng, sample_indices, uniform};
use tgfield::geometry::{DetectorFrame, Volume, VolumeGrid};
use tgfield::train::descriptor::{FeatureExtractor, GradientHistogram};
use tgfield::train::losses::{self, Image, PSNR_CAP};
use tgfield::train::semantic;
use tgfield::train::{total_loss, LossTerms, LossWeights};
use tgfield::tv::TV_EPS;

fn random_image(seed: u64, w: usize, h: usize) -> Vec<f64> {
    let mut r = rng(seed);
    (0..w * h).map(|_| uniform(&mut r, 0.0, 2.0)).collect()
}

/// Textbook SSIM: separable 1D Gaussian weights recomputed here, window
/// statistics gathered per position from the weighted sums.
fn ssim_oracle(x: &[f64], y: &[f64], w: usize, h: usize, range: f64) -> f64 {
    let g: Vec<f64> = (-5..=5).map(|i: i32| (-(i * i) as f64 / 4.5).exp()).collect();
    let gs: f64 = g.iter().sum();
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for oy in 0..=h - 11 {
        for ox in 0..=w - 11 {
            let mut s = [0.0; 5];
            for a in 0..11 {
                for b in 0..11 {
                    let k = g[a] * g[b] / (gs * gs);
                    let (p, q) = (x[(oy + a) * w + ox + b], y[(oy + a) * w + ox + b]);
                    s[0] += k * p;
                    s[1] += k * q;
                    s[2] += k * p * p;
                    s[3] += k * q * q;
                    s[4] += k * p * q;
                }
            }
            let (mx, my) = (s[0], s[1]);
            let (vx, vy, cxy) = (s[2] - mx * mx, s[3] - my * my, s[4] - mx * my);
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_sliding_window_oracle() {
    for seed in 0..4 {
        let (w, h) = (17 + seed as usize, 13 + 2 * seed as usize);
        let x = random_image(seed, w, h);
        let y: Vec<f64> = random_image(seed + 100, w, h).iter().zip(&x).map(|(n, v)| v + 0.3 * n).collect();
        let got = losses::ssim(&Image::new(&x, w, h).unwrap(), &Image::new(&y, w, h).unwrap(), 2.0).unwrap();
        let want = ssim_oracle(&x, &y, w, h, 2.0);
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn dssim_gradient_matches_finite_differences() {
    let (w, h) = (16, 14);
    let t = random_image(3, w, h);
    let x0: Vec<f64> = random_image(4, w, h).iter().zip(&t).map(|(n, v)| v + 0.5 * (n - 1.0)).collect();
    let f = |x: &[f64]| losses::loss_dssim(&Image::new(x, w, h).unwrap(), &Image::new(&t, w, h).unwrap()).unwrap();
    let (_, grad) = losses::loss_dssim_grad(&Image::new(&x0, w, h).unwrap(), &Image::new(&t, w, h).unwrap()).unwrap();
    let idx = sample_indices(&mut rng(5), x0.len(), 80);
    let stats = fd_check_step(&mut |x| f(x), &x0, &grad, &idx, 1e-4);
    assert_eq!(stats.passed, stats.total, "worst {:?}", stats.worst);
}

#[test]
fn tv_gradient_matches_finite_differences() {
    let dims = [5, 4, 6];
    let mut r = rng(8);
    let x0: Vec<f64> = (0..120).map(|_| uniform(&mut r, 0.0, 1.0)).collect();
    let (_, grad) = losses::loss_tv3d_grad(&x0, dims).unwrap();
    let idx: Vec<usize> = (0..120).collect();
    let stats = fd_check(&mut |x| losses::loss_tv3d(x, dims).unwrap(), &x0, &grad, &idx);
    assert_eq!(stats.passed, stats.total, "worst {:?}", stats.worst);
}

#[test]
fn loss_identities() {
    let (w, h) = (20, 16);
    let x = random_image(1, w, h);
    let img = Image::new(&x, w, h).unwrap();
    assert_eq!(losses::loss_dssim(&img, &img).unwrap(), 0.0);
    assert_eq!(losses::loss_l1(&img, &img).unwrap(), 0.0);

    let tv = losses::loss_tv3d(&vec![0.37; 8 * 8 * 8], [8, 8, 8]).unwrap();
    assert!((tv - TV_EPS.sqrt()).abs() <= 1e-15, "{tv}");

    let geom = common::small_geometry(4, 24);
    let frame = DetectorFrame::new(&geom, 0.3);
    let centers = vec![[0.0, 0.0, 0.0], [0.1, -0.05, 0.08], [-0.1, 0.1, 0.0]];
    let image = random_image(2, 24, 24);
    let res = semantic::semantic_loss(&image, &frame, &image, &frame, &centers, 8, &GradientHistogram::default());
    assert_eq!(res.retained, 3);
    assert_eq!(res.value, 0.0);
    assert!(res.grad_a.iter().chain(&res.grad_b).all(|g| *g == 0.0));

    let terms = LossTerms { l1: 0.123, dssim: 0.456, tv: 0.789, sem: 1.234 };
    let w = LossWeights { lambda_ssim: 0.25, lambda_tv: 0.05, lambda_sem: 0.1 };
    assert_eq!(w, LossWeights::default());
    let hand = 0.123 + 0.25 * 0.456 + 0.05 * 0.789 + 0.1 * 1.234;
    assert!((total_loss(&terms, &w) - hand).abs() <= 1e-9);
}

#[test]
fn semantic_gradient_matches_finite_differences() {
    let geom = common::small_geometry(4, 24);
    let fa = DetectorFrame::new(&geom, 0.0);
    let fb = DetectorFrame::new(&geom, 0.7);
    let centers = vec![[0.0, 0.0, 0.0], [0.1, -0.05, 0.08], [-0.1, 0.1, 0.0], [0.05, 0.05, -0.1]];
    let a0 = random_image(11, 24, 24);
    let b0 = random_image(12, 24, 24);
    let ext = GradientHistogram::default();
    let res = semantic::semantic_loss(&a0, &fa, &b0, &fb, &centers, 8, &ext);
    assert!(res.retained >= 3 && res.value > 0.0);
    let idx = sample_indices(&mut rng(13), a0.len(), 120);
    let sa = fd_check(&mut |a| semantic::semantic_loss(a, &fa, &b0, &fb, &centers, 8, &ext).value, &a0, &res.grad_a, &idx);
    let sb = fd_check(&mut |b| semantic::semantic_loss(&a0, &fa, b, &fb, &centers, 8, &ext).value, &b0, &res.grad_b, &idx);
    assert!(sa.fraction() >= 0.99 && sb.fraction() >= 0.99, "{sa:?} {sb:?}");
}

#[test]
fn descriptor_width_and_normalization() {
    let ext = GradientHistogram::default();
    let crop = random_image(21, 8, 8);
    let f = ext.extract(&crop, 8);
    assert_eq!(f.len(), ext.width(8));
    for hist in f.chunks(ext.bins) {
        let n: f64 = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6, "{n}");
    }
    let scaled: Vec<f64> = crop.iter().map(|v| 3.0 * v + 1.0).collect();
    let g = ext.extract(&scaled, 8);
    assert!(f.iter().zip(&g).all(|(a, b)| (a - b).abs() < 1e-9));
}

#[test]
fn psnr_and_ssim3d_on_volumes() {
    let grid = VolumeGrid::cube(12, 1.0);
    let mut r = rng(30);
    let a = Volume::from_data(grid, (0..grid.len()).map(|_| uniform(&mut r, 0.0, 1.0)).collect()).unwrap();
    assert_eq!(losses::psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
    assert!((losses::ssim3d(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let b = Volume::from_data(grid, a.data.iter().map(|v| v + 0.1).collect()).unwrap();
    assert!((losses::psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    let other = Volume::zeros(VolumeGrid::cube(10, 1.0));
    assert!(losses::psnr(&a, &other, 1.0).is_err());
}
