use lrperc::rng::{domain, stream};
use lrperc::{KernelSpec, KernelTable, Profile, StepKernel, WaveVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn h(x: f64, l: f64, beta: f64) -> f64 {
    (x.abs() / l).max(1.0).powf(-beta)
}

/// `sum_{x >= r} f(x)` for `f = (x/l)^{-beta}` by the midpoint integral plus the
/// first Euler-Maclaurin correction.
fn power_tail(r: f64, l: f64, beta: f64) -> f64 {
    let a = r - 0.5;
    let integral = l.powf(beta) * a.powf(1.0 - beta) / (beta - 1.0);
    let fprime = -beta * l.powf(beta) * a.powf(-beta - 1.0);
    integral + fprime / 24.0
}

#[test]
fn d1_normalization_matches_brute_force() {
    for (alpha, l) in [(0.5, 4.0), (1.5, 2.0), (3.0, 1.0)] {
        let beta = 1.0 + alpha;
        let r = 2_000_000i64;
        let mut w = 0.0;
        for x in (0..=r).rev() {
            let v = h(x as f64, l, beta);
            w += if x == 0 { v } else { 2.0 * v };
        }
        w += 2.0 * power_tail((r + 1) as f64, l, beta);
        let t = KernelTable::build(&KernelSpec::new(1, alpha, l, Profile::Linfty)).unwrap();
        let rel = (t.normalization() - w).abs() / w;
        assert!(rel < 1e-9, "alpha {alpha}: W {} vs {w}, rel {rel:e}", t.normalization());
    }
}

#[test]
fn d1_dhat_matches_brute_force() {
    let (alpha, l) = (0.5, 4.0);
    let beta = 1.0 + alpha;
    let t = KernelTable::build(&KernelSpec::new(1, alpha, l, Profile::Linfty)).unwrap();
    let k = std::f64::consts::FRAC_PI_4;
    // full periods of cos(k x) so the truncated oscillating tail is O(r^{-beta})
    let r = 8 * 1_000_000i64;
    let mut s = 0.0;
    for x in (0..=r).rev() {
        let v = h(x as f64, l, beta) * (k * x as f64).cos();
        s += if x == 0 { v } else { 2.0 * v };
    }
    let exact = s / t.normalization();
    let got = t.eval_dhat(&WaveVector::new(vec![k]).unwrap());
    assert!(((got.value - exact) / exact).abs() < 1e-8, "{} vs {exact}", got.value);
}

#[test]
fn gaussian_regime_constant_is_half_the_variance() {
    let (alpha, l) = (3.0, 2.0);
    let beta = 1.0 + alpha;
    let t = KernelTable::build(&KernelSpec::new(1, alpha, l, Profile::Linfty)).unwrap();
    let r = 1_000_000i64;
    let mut m2 = 0.0;
    for x in (1..=r).rev() {
        let xf = x as f64;
        m2 += 2.0 * xf * xf * h(xf, l, beta);
    }
    // sum_{x > r} x^2 (x/l)^{-beta} ~ l^beta (r+1/2)^{3-beta} / (beta-3)
    m2 += 2.0 * l.powf(beta) * (r as f64 + 0.5).powf(3.0 - beta) / (beta - 3.0);
    let sigma2 = m2 / t.normalization();
    let grid: Vec<f64> = (0..8).map(|i| 10f64.powf(-3.0 - 0.5 * i as f64)).collect();
    let v = t.estimate_valpha(&[1.0], &grid).unwrap();
    assert!((v.v_alpha / (sigma2 / 2.0) - 1.0).abs() < 2e-3, "{} vs {}", v.v_alpha, sigma2 / 2.0);
}

#[test]
fn valpha_ratios_settle_as_t_shrinks() {
    let t = KernelTable::build(&KernelSpec::new(2, 0.5, 4.0, Profile::Linfty)).unwrap();
    let exact = t.axis_valpha().unwrap().v_alpha;
    let grid = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    let dev: Vec<f64> = t.valpha_ratios(&[1.0, 0.0], &grid).unwrap().iter().map(|r| (r / exact - 1.0).abs()).collect();
    assert!(dev.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{dev:?}");
    assert!(dev[4] < 1e-2);
}

#[test]
fn sampler_matches_kernel_by_shell() {
    for profile in [Profile::Linfty, Profile::Euclidean] {
        let t = KernelTable::build(&KernelSpec::new(2, 0.5, 2.0, profile)).unwrap();
        let shells = 12i128;
        let mut expected = vec![0.0; shells as usize + 2];
        for x in -shells..=shells {
            for y in -shells..=shells {
                let s = x.abs().max(y.abs()) as usize;
                expected[s] += t.prob(&[x, y, 0, 0]);
            }
        }
        let last = shells as usize + 1;
        expected[last] = 1.0 - expected[..last].iter().sum::<f64>();
        let n = 400_000usize;
        let mut rng = stream(5, domain::TEST, profile as u64);
        let mut counts = vec![0usize; last + 1];
        for _ in 0..n {
            let x = t.sample_step(&mut rng);
            let s = x[0].abs().max(x[1].abs());
            counts[(s as usize).min(last)] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&expected)
            .map(|(c, e)| {
                let m = e * n as f64;
                (*c as f64 - m).powi(2) / m
            })
            .sum();
        let p = 1.0 - ChiSquared::new(last as f64).unwrap().cdf(chi2);
        assert!(p > 1e-4, "{profile:?}: chi2 {chi2}, p {p}");
    }
}

#[test]
fn sampled_tail_follows_the_power_law() {
    let t = KernelTable::build(&KernelSpec::new(1, 0.5, 2.0, Profile::Linfty)).unwrap();
    let mut rng = stream(8, domain::TEST, 0);
    let n = 400_000usize;
    let big = [100i128, 10_000, 1_000_000];
    let mut hits = [0usize; 3];
    for _ in 0..n {
        let x = t.sample_step(&mut rng)[0].abs();
        for (j, b) in big.iter().enumerate() {
            if x >= *b {
                hits[j] += 1;
            }
        }
    }
    // P(|X| >= b) = 2 sum_{x >= b} D(x)
    for (j, b) in big.iter().enumerate() {
        let p = 2.0 * power_tail(*b as f64, 2.0, 1.5) / t.normalization();
        let m = p * n as f64;
        assert!((hits[j] as f64 - m).abs() < 5.0 * m.sqrt() + 1.0, "b {b}: {} vs {m}", hits[j]);
    }
}
