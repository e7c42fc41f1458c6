//! Benchmark problems on the unit disc and a general constructor.

use std::fmt;
use std::sync::Arc;

use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::Result;
use crate::geometry::{Domain, Point};
use crate::sampling::StableParams;

/// A real function of position. Constants are kept apart so the samplers can
/// skip evaluations whose result is known.
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    Function(Arc<dyn Fn(Point) -> f64 + Send + Sync>),
}

impl ScalarField {
    pub fn from_fn(f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        Self::Function(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, p: Point) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Function(f) => f(p),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Self::Constant(c) => Some(*c),
            Self::Function(_) => None,
        }
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// `(−Δ)^{α/2} u = f` on the domain, `u = g` outside it.
#[derive(Clone, Debug)]
pub struct Problem {
    pub name: String,
    pub domain: Domain,
    pub f: ScalarField,
    pub g: ScalarField,
    pub exact: Option<ScalarField>,
    params: StableParams,
}

impl Problem {
    pub fn new(
        name: impl Into<String>,
        alpha: f64,
        domain: Domain,
        f: ScalarField,
        g: ScalarField,
        exact: Option<ScalarField>,
    ) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            domain,
            f,
            g,
            exact,
            params: StableParams::new(alpha)?,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.params.alpha
    }

    pub fn params(&self) -> &StableParams {
        &self.params
    }

    /// Same problem with a different source term and no known solution.
    pub fn with_source(&self, f: ScalarField) -> Self {
        Self {
            f,
            exact: None,
            ..self.clone()
        }
    }
}

fn radial(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ScalarField {
    ScalarField::from_fn(move |p| f(p.norm_squared()))
}

/// Mean first-exit time from the unit disc: `f ≡ 1`, `g ≡ 0`.
pub fn example1(alpha: f64) -> Result<Problem> {
    let half = 0.5 * alpha;
    let ln_b = ln_gamma(half) + ln_gamma(1.0 - half) - ln_gamma(1.0);
    let scale = gamma(1.0 - half) / (2f64.powf(alpha) * gamma(1.0 + half) * half * ln_b.exp());
    let exact = radial(move |r2| if r2 < 1.0 { scale * (1.0 - r2).powf(half) } else { 0.0 });
    Problem::new(
        "example1",
        alpha,
        Domain::unit_ball(),
        ScalarField::Constant(1.0),
        ScalarField::Constant(0.0),
        Some(exact),
    )
}

/// Source with exact solution `(1 − ‖x‖²)^{1+α/2}` on the unit disc.
pub fn example2(alpha: f64) -> Result<Problem> {
    let half = 0.5 * alpha;
    let scale = 2f64.powf(alpha) * gamma(2.0 + half) * gamma(1.0 + half);
    let f = radial(move |r2| (1.0 - (1.0 + half) * r2) * scale);
    let exact = radial(move |r2| if r2 < 1.0 { (1.0 - r2).powf(1.0 + half) } else { 0.0 });
    Problem::new(
        "example2",
        alpha,
        Domain::unit_ball(),
        f,
        ScalarField::Constant(0.0),
        Some(exact),
    )
}

/// `g = sin ‖x‖²`, `f = 2 + ‖x‖²` on the unit disc; no closed form.
pub fn example3(alpha: f64) -> Result<Problem> {
    Problem::new(
        "example3",
        alpha,
        Domain::unit_ball(),
        radial(|r2| 2.0 + r2),
        radial(f64::sin),
        None,
    )
}

/// Looks up `example1`, `example2` or `example3` by name.
pub fn by_name(name: &str, alpha: f64) -> Option<Result<Problem>> {
    match name {
        "example1" => Some(example1(alpha)),
        "example2" => Some(example2(alpha)),
        "example3" => Some(example3(alpha)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn example1_values() {
        let p = example1(1.0).unwrap();
        let u = p.exact.as_ref().unwrap();
        assert!((u.eval(Point::new(0.0, 0.0)) - 2.0 / PI).abs() < 1e-14);
        assert_eq!(u.eval(Point::new(1.0, 0.0)), 0.0);
        let x = Point::new(0.3, 0.4);
        let r = Point::from_angle(1.234) * 0.5;
        assert!((u.eval(x) - u.eval(r)).abs() < 1e-14);
        assert_eq!(p.f.as_constant(), Some(1.0));
    }

    #[test]
    fn example2_values() {
        let p = example2(1.0).unwrap();
        let u = p.exact.as_ref().unwrap();
        assert_eq!(u.eval(Point::new(0.0, 0.0)), 1.0);
        assert_eq!(u.eval(Point::new(0.0, -1.0)), 0.0);
        assert!((p.f.eval(Point::new(0.0, 0.0)) - 3.0 * PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn example3_values() {
        let p = example3(1.0).unwrap();
        assert!(p.exact.is_none());
        let x = Point::new(PI.sqrt(), 0.0);
        assert!(p.g.eval(x).abs() < 1e-15);
        assert_eq!(p.f.eval(Point::new(0.0, 0.0)), 2.0);
        for k in 0..100 {
            let q = Point::from_angle(k as f64) * (0.1 * k as f64);
            assert!(p.g.eval(q).abs() <= 1.0 && p.f.eval(q).is_finite());
        }
    }
}
