//! Shared numerical building blocks: Gauss-Kronrod quadrature, Hurwitz zeta
//! sums and cancellation-free sinc helpers.

/// Kronrod abscissae for the 15-point rule (nonnegative half, descending).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
/// Weights of the embedded 7-point Gauss rule (at XGK[1], XGK[3], XGK[5], XGK[7]).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Gauss-Kronrod 7/15 panel. Returns (kronrod value, |kronrod - gauss|).
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// The 15 Kronrod (node, weight) pairs on `[-1, 1]`.
pub fn gk15_nodes() -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(15);
    for i in 0..7 {
        out.push((-XGK[i], WGK[i]));
        out.push((XGK[i], WGK[i]));
    }
    out.push((0.0, WGK[7]));
    out
}

/// Globally adaptive Gauss-Kronrod integration on a finite interval.
///
/// Bisects the panel with the largest error estimate until the summed
/// estimate drops below `max(abs_tol, rel_tol*|I|)` or `max_panels` is hit.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> (f64, f64) {
    let (v, e) = gk15(&mut f, a, b);
    let mut panels = vec![(a, b, v, e)];
    loop {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) || panels.len() >= max_panels {
            return (total, err);
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (pa, pb, _, _) = panels.swap_remove(idx);
        let mid = 0.5 * (pa + pb);
        let (v1, e1) = gk15(&mut f, pa, mid);
        let (v2, e2) = gk15(&mut f, mid, pb);
        panels.push((pa, mid, v1, e1));
        panels.push((mid, pb, v2, e2));
    }
}

/// Fixed composite GK15 over `n` equal panels. Returns (value, error estimate).
pub fn composite_gk15<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> (f64, f64) {
    let n = n.max(1);
    let h = (b - a) / n as f64;
    let mut v = 0.0;
    let mut e = 0.0;
    for i in 0..n {
        let lo = a + h * i as f64;
        let hi = if i + 1 == n { b } else { lo + h };
        let (pv, pe) = gk15(&mut f, lo, hi);
        v += pv;
        e += pe;
    }
    (v, e)
}

const BERNOULLI_EVEN: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

/// Hurwitz zeta `sum_{n>=0} (a+n)^{-s}` for `s > 1`, `a > 0`, with an error bound.
///
/// Direct summation until the shifted argument reaches 20, then
/// Euler-Maclaurin with seven Bernoulli corrections; the bound is the size of
/// the first omitted correction.
pub fn hurwitz_zeta(s: f64, a: f64) -> (f64, f64) {
    assert!(s > 1.0 && a > 0.0, "hurwitz_zeta requires s > 1, a > 0");
    let mut sum = 0.0;
    let mut b = a;
    while b < 20.0 {
        sum += b.powf(-s);
        b += 1.0;
    }
    let bs = b.powf(-s);
    sum += b * bs / (s - 1.0) + 0.5 * bs;
    // term_j = B_{2j}/(2j)! * s(s+1)...(s+2j-2) * b^{-s-2j+1}
    let mut rising = s; // s(s+1)...(s+2j-2)
    let mut fact = 2.0; // (2j)!
    let mut pow = bs / b; // b^{-s-2j+1}
    let mut last = 0.0;
    for (j, bern) in BERNOULLI_EVEN.iter().enumerate() {
        let term = bern / fact * rising * pow;
        if j + 1 == BERNOULLI_EVEN.len() {
            last = term.abs();
            break;
        }
        sum += term;
        let jj = (j + 1) as f64;
        rising *= (s + 2.0 * jj - 1.0) * (s + 2.0 * jj);
        fact *= (2.0 * jj + 1.0) * (2.0 * jj + 2.0);
        pow /= b * b;
    }
    (sum, last + sum.abs() * 4.0 * f64::EPSILON)
}

/// `sin(x)/x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `1 - sin(x)/x` without cancellation for small `x`.
pub fn one_minus_sinc(x: f64) -> f64 {
    let x2 = x * x;
    if x == 0.0 {
        0.0
    } else if x.abs() < 0.5 {
        // alternating series, terms fall by >= x^2/42 after the third
        let mut term = x2 / 6.0;
        let mut sum = term;
        let mut k = 1.0;
        loop {
            term *= -x2 / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                return sum;
            }
            k += 1.0;
        }
    } else {
        1.0 - x.sin() / x
    }
}

/// `1 - cos(x)` without cancellation.
pub fn one_minus_cos(x: f64) -> f64 {
    let h = (0.5 * x).sin();
    2.0 * h * h
}

/// Weighted least squares of `y = a + b x`. Returns (a, b, se_a, se_b, residuals).
///
/// When `sigma` is `None` the fit is unweighted and the standard errors come
/// from the residual variance.
pub fn linear_fit(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> LinearFit {
    let n = x.len();
    assert_eq!(n, y.len());
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|v| 1.0 / (v * v)).collect(),
        None => vec![1.0; n],
    };
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - xm) * (a - xm)).sum();
    let sxy: f64 = x.iter().zip(y).zip(&w).map(|((a, c), b)| b * (a - xm) * (c - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let residuals: Vec<f64> = x.iter().zip(y).map(|(a, c)| c - intercept - slope * a).collect();
    let scale = match sigma {
        Some(_) => 1.0,
        None => {
            let dof = n.saturating_sub(2).max(1) as f64;
            residuals.iter().map(|r| r * r).sum::<f64>() / dof
        }
    };
    let se_slope = (scale / sxx).sqrt();
    let se_intercept = (scale * (1.0 / sw + xm * xm / sxx)).sqrt();
    LinearFit { intercept, slope, se_intercept, se_slope, residuals }
}

#[derive(Clone, Debug)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub se_intercept: f64,
    pub se_slope: f64,
    pub residuals: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk15_integrates_polynomials_exactly() {
        let (v, _) = gk15(&mut |x: f64| x.powi(20), 0.0, 1.0);
        assert!((v - 1.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let (v, e) = integrate(|x: f64| x.powf(-0.5), 0.0, 1.0, 1e-12, 0.0, 2000);
        assert!((v - 2.0).abs() < 1e-9, "{v} {e}");
    }

    #[test]
    fn hurwitz_matches_riemann_zeta_values() {
        let (z2, e2) = hurwitz_zeta(2.0, 1.0);
        assert!((z2 - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-14, "{z2} {e2}");
        let (z4, _) = hurwitz_zeta(4.0, 1.0);
        assert!((z4 - std::f64::consts::PI.powi(4) / 90.0).abs() < 1e-14);
        // zeta(1.5) = 2.612375348685488...
        let (z15, _) = hurwitz_zeta(1.5, 1.0);
        assert!((z15 - 2.612_375_348_685_488).abs() < 1e-13);
    }

    #[test]
    fn hurwitz_shift_identity() {
        // zeta(s, a) = a^{-s} + zeta(s, a+1)
        for &(s, a) in &[(1.3, 7.5), (2.5, 1e6), (3.0, 123.0)] {
            let (l, _) = hurwitz_zeta(s, a);
            let (r, _) = hurwitz_zeta(s, a + 1.0);
            assert!(((l - r - a.powf(-s)) / l).abs() < 1e-13);
        }
    }

    #[test]
    fn one_minus_sinc_is_continuous_across_branch() {
        let a = one_minus_sinc(0.499_999_999);
        let b = one_minus_sinc(0.500_000_001);
        assert!((a - b).abs() < 1e-9);
        assert!((one_minus_sinc(1e-8) - 1e-16 / 6.0).abs() < 1e-30);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 + 2.0 * v).collect();
        let f = linear_fit(&x, &y, None);
        assert!((f.slope - 2.0).abs() < 1e-14);
        assert!((f.intercept - 0.5).abs() < 1e-14);
    }
}
