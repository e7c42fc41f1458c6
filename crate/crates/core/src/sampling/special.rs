//! Incomplete beta function, the stable-process constants `A₁`, `A₂`, and
//! adaptive Gauss–Legendre quadrature.

use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};

const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 10_000;

/// Absolute tolerance used for `A₂`.
pub const A2_TOLERANCE: f64 = 1e-10;

/// Regularized incomplete beta function `I_t(a, b)` with a precomputed
/// `ln B(a, b)`.
#[derive(Clone, Copy, Debug)]
pub struct IncompleteBeta {
    a: f64,
    b: f64,
    ln_beta: f64,
}

impl IncompleteBeta {
    pub fn new(a: f64, b: f64) -> Self {
        Self {
            a,
            b,
            ln_beta: ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if !(t > 0.0) {
            return 0.0;
        }
        if t >= 1.0 {
            return 1.0;
        }
        let (a, b) = (self.a, self.b);
        let front = (a * t.ln() + b * (-t).ln_1p() - self.ln_beta).exp();
        if t < (a + 1.0) / (a + b + 2.0) {
            (front * continued_fraction(a, b, t) / a).clamp(0.0, 1.0)
        } else {
            (1.0 - front * continued_fraction(b, a, 1.0 - t) / b).clamp(0.0, 1.0)
        }
    }
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let tiny = |v: f64| if v.abs() < CF_TINY { CF_TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / tiny(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / tiny(1.0 + aa * d);
        c = tiny(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / tiny(1.0 + aa * d);
        c = tiny(1.0 + aa / c);
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// `P(β < t)` for `β ~ Beta(α/2, (2−α)/2)`.
pub fn reg_inc_beta(t: f64, alpha: f64) -> f64 {
    IncompleteBeta::new(0.5 * alpha, 1.0 - 0.5 * alpha).eval(t)
}

/// Constants of the stable-process step for one `α`.
#[derive(Clone, Copy, Debug)]
pub struct StableParams {
    pub alpha: f64,
    pub a1: f64,
    pub a2: f64,
    cdf: IncompleteBeta,
}

impl StableParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::AlphaOutOfRange(alpha));
        }
        let cdf = IncompleteBeta::new(0.5 * alpha, 1.0 - 0.5 * alpha);
        let half = 0.5 * alpha;
        let beta_fn = (ln_gamma(1.0 - half) + ln_gamma(half) - ln_gamma(1.0)).exp();
        let a1 = 2f64.powf(1.0 - alpha) / (alpha * gamma(half).powi(2)) * beta_fn;
        let exponent = 2.0 / alpha;
        let a2 = integrate(
            |z| cdf.eval(1.0 - z.powf(exponent)),
            0.0,
            1.0,
            A2_TOLERANCE,
        );
        Ok(Self { alpha, a1, a2, cdf })
    }

    /// `P(β < t)` for this `α`.
    #[inline]
    pub fn beta_cdf(&self, t: f64) -> f64 {
        self.cdf.eval(t)
    }

    /// Shape parameters `(α/2, (2−α)/2)` of the exit-radius law.
    pub fn beta_shapes(&self) -> (f64, f64) {
        (self.cdf.a, self.cdf.b)
    }
}

/// Validated constructor, `StableParams::new` under its operational name.
pub fn make_params(alpha: f64) -> Result<StableParams> {
    StableParams::new(alpha)
}

const GL_NODES: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_WEIGHTS: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_4,
    0.219_086_362_515_982,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

fn gauss_legendre(f: &impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let sum: f64 = GL_NODES
        .iter()
        .zip(GL_WEIGHTS)
        .map(|(x, w)| w * (f(mid - half * x) + f(mid + half * x)))
        .sum();
    half * sum
}

/// Adaptive 10-point Gauss–Legendre quadrature to absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    fn recurse(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let mid = 0.5 * (lo + hi);
        let left = gauss_legendre(f, lo, mid);
        let right = gauss_legendre(f, mid, hi);
        if depth == 0 || (left + right - whole).abs() <= tol {
            return left + right;
        }
        recurse(f, lo, mid, left, 0.5 * tol, depth - 1)
            + recurse(f, mid, hi, right, 0.5 * tol, depth - 1)
    }
    let whole = gauss_legendre(&f, lo, hi);
    recurse(&f, lo, hi, whole, tol, 48)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn arcsine_cdf(t: f64) -> f64 {
        if t <= 0.5 {
            2.0 / PI * t.sqrt().asin()
        } else {
            1.0 - 2.0 / PI * (1.0 - t).sqrt().asin()
        }
    }

    #[test]
    fn incomplete_beta_examples() {
        assert_eq!(reg_inc_beta(0.0, 1.0), 0.0);
        assert_eq!(reg_inc_beta(1.0, 1.0), 1.0);
        assert!((reg_inc_beta(0.5, 1.0) - 0.5).abs() < 1e-12);
        assert!((reg_inc_beta(0.75, 1.0) - 2.0 / 3.0).abs() < 1e-12);
        for t in [1e-9, 0.01, 0.3, 0.61, 0.999, 1.0 - 1e-9] {
            assert!((reg_inc_beta(t, 1.0) - arcsine_cdf(t)).abs() < 1e-12, "t={t}");
        }
    }

    proptest! {
        #[test]
        fn incomplete_beta_matches_statrs(t in 0.0..1.0f64, alpha in 0.05..1.95f64) {
            let oracle = statrs::function::beta::beta_reg(0.5 * alpha, 1.0 - 0.5 * alpha, t);
            prop_assert!((reg_inc_beta(t, alpha) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn constants() {
        let p = StableParams::new(1.0).unwrap();
        assert!((p.a1 - 1.0).abs() < 1e-13);
        assert!((p.a2 - 2.0 / PI).abs() < 1e-10);
        for alpha in [0.1, 0.5, 0.9, 1.3, 1.5, 1.8, 1.99] {
            let p = StableParams::new(alpha).unwrap();
            let closed = 2.0 * (PI * alpha / 2.0).sin() / (PI * alpha);
            assert!(p.a2 > 0.0 && p.a2 < 1.0);
            assert!((p.a2 - closed).abs() < 1e-9, "alpha={alpha}: {} vs {closed}", p.a2);
        }
        assert!(matches!(StableParams::new(0.0), Err(Error::AlphaOutOfRange(_))));
        assert!(matches!(StableParams::new(2.0), Err(Error::AlphaOutOfRange(_))));
    }

    #[test]
    fn a2_matches_monte_carlo() {
        let p = StableParams::new(1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 10_000_000;
        let mean = (0..n)
            .map(|_| p.beta_cdf(1.0 - rng.gen::<f64>().powi(2)))
            .sum::<f64>()
            / n as f64;
        assert!((mean - p.a2).abs() < 5e-4, "{mean} vs {}", p.a2);
    }

    #[test]
    fn quadrature_on_smooth_and_singular() {
        assert!((integrate(|x| x.exp(), 0.0, 1.0, 1e-12) - (1f64.exp() - 1.0)).abs() < 1e-12);
        assert!((integrate(|x| x.sqrt(), 0.0, 1.0, 1e-11) - 2.0 / 3.0).abs() < 1e-10);
    }
}
