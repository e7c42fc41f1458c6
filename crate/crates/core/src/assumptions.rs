//! One-step Monte Carlo checks of the contraction functional `I₂` and the
//! boundary functional `I₁` at random start points.

use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::{Domain, Point};
use crate::sampling::{Purpose, RandomSequence, StableParams, StreamKey};
use crate::stats::{reduce_chunks, Moments};

const SAMPLE_CHUNK: u64 = 1 << 14;

#[derive(Clone, Debug)]
pub struct AssumptionConfig {
    pub alpha: f64,
    pub mu: f64,
    pub t: f64,
    /// Floor `A` of `Φ(x) = max{A, d(x)^{−t}}`.
    pub a: f64,
    pub samples: u64,
    pub starts: usize,
    pub domain: Domain,
    pub seed: u64,
}

impl AssumptionConfig {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            mu: 1.0,
            t: 1.0,
            a: 1e4,
            samples: 1_000_000,
            starts: 20,
            domain: Domain::unit_square(),
            seed: 0,
        }
    }

    fn validate(&self) -> Result<StableParams> {
        let params = StableParams::new(self.alpha)?;
        if !(self.mu > 0.0 && self.mu <= 1.0) || !(self.t > 0.0 && self.t <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mu and t must lie in (0, 1], got mu={}, t={}",
                self.mu, self.t
            )));
        }
        if !(self.a > 0.0) {
            return Err(Error::InvalidArgument(format!("A must be positive, got {}", self.a)));
        }
        if self.samples < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: self.samples as usize,
            });
        }
        Ok(params)
    }

    /// `J` start points, or start pairs interleaved, drawn uniformly.
    fn start_points(&self, count: usize) -> Vec<Point> {
        let mut u = StreamKey::new(self.seed, 0, 0, Purpose::StartPoints).uniforms();
        (0..count).map(|_| self.domain.sample_uniform(|| u.next())).collect()
    }
}

/// Estimate at one start point or pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StartEstimate {
    pub x0: Point,
    pub y0: Option<Point>,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub max: f64,
    /// Standard error of the maximizing estimate.
    pub std_error: f64,
    pub per_start: Vec<StartEstimate>,
}

impl CheckResult {
    fn from_estimates(per_start: Vec<StartEstimate>) -> Self {
        let best = per_start
            .iter()
            .copied()
            .max_by(|a, b| a.value.total_cmp(&b.value));
        Self {
            max: best.map_or(f64::NAN, |b| b.value),
            std_error: best.map_or(f64::NAN, |b| b.std_error),
            per_start,
        }
    }
}

fn one_step_mean(
    params: &StableParams,
    key: StreamKey,
    samples: u64,
    value: impl Fn(f64, Point) -> f64 + Sync,
) -> Result<Moments> {
    reduce_chunks(
        0..samples,
        SAMPLE_CHUNK,
        Moments::new(),
        |range| {
            let mut seq = RandomSequence::new(key, params);
            let mut m = Moments::new();
            for n in range {
                let (beta, theta) = seq.step(n as usize);
                m.push(value(beta, theta));
            }
            Ok(m)
        },
        |acc, part| acc.merge(&part),
    )
}

/// `E[(‖x₁ − y₁‖/‖x₀ − y₀‖)^{μα} 1{x₁, y₁ ∈ D}]` with one shared `(β, Θ)`.
pub fn contraction_at(cfg: &AssumptionConfig, x0: Point, y0: Point, index: usize) -> Result<StartEstimate> {
    let params = cfg.validate()?;
    let r0 = (x0 - y0).norm();
    if r0 == 0.0 {
        return Err(Error::CoincidentPoints(x0));
    }
    let domain = &cfg.domain;
    let (dx, dy) = (domain.distance(x0), domain.distance(y0));
    let power = cfg.mu * cfg.alpha;
    let key = StreamKey::new(cfg.seed, index, 0, Purpose::Contraction);
    let m = one_step_mean(&params, key, cfg.samples, |beta, theta| {
        let s = 1.0 / beta.sqrt();
        let x1 = x0 + theta * (dx * s);
        let y1 = y0 + theta * (dy * s);
        if domain.contains(x1) && domain.contains(y1) {
            ((x1 - y1).norm() / r0).powf(power)
        } else {
            0.0
        }
    })?;
    Ok(StartEstimate {
        x0,
        y0: Some(y0),
        value: m.mean(),
        std_error: m.std_error(),
    })
}

/// `E[Φ(x₁)/Φ(x₀) 1{x₁ ∈ D}]` with `Φ(x) = max{A, d(x)^{−t}}`.
pub fn barrier_at(cfg: &AssumptionConfig, x0: Point, index: usize) -> Result<StartEstimate> {
    let params = cfg.validate()?;
    let domain = &cfg.domain;
    let d0 = domain.distance(x0);
    if !(d0 > 0.0) {
        return Err(Error::DegenerateDistance(x0));
    }
    let phi = |d: f64| cfg.a.max(d.powf(-cfg.t));
    let phi0 = phi(d0);
    let key = StreamKey::new(cfg.seed, index, 0, Purpose::Barrier);
    let m = one_step_mean(&params, key, cfg.samples, |beta, theta| {
        let x1 = x0 + theta * (d0 / beta.sqrt());
        let d1 = domain.distance(x1);
        if d1 > 0.0 {
            phi(d1) / phi0
        } else {
            0.0
        }
    })?;
    Ok(StartEstimate {
        x0,
        y0: None,
        value: m.mean(),
        std_error: m.std_error(),
    })
}

/// `max_j I₂(x₀ʲ, y₀ʲ)` over `J` independent uniform start pairs.
pub fn check_i2(cfg: &AssumptionConfig) -> Result<CheckResult> {
    cfg.validate()?;
    let points = cfg.start_points(2 * cfg.starts);
    let estimates = points
        .chunks_exact(2)
        .enumerate()
        .map(|(j, pair)| contraction_at(cfg, pair[0], pair[1], j))
        .collect::<Result<_>>()?;
    Ok(CheckResult::from_estimates(estimates))
}

/// `max_j I₁(x₀ʲ)` over `J` uniform start points.
pub fn check_i1(cfg: &AssumptionConfig) -> Result<CheckResult> {
    cfg.validate()?;
    let estimates = cfg
        .start_points(cfg.starts)
        .into_iter()
        .enumerate()
        .map(|(j, x0)| barrier_at(cfg, x0, j))
        .collect::<Result<_>>()?;
    Ok(CheckResult::from_estimates(estimates))
}

/// Which functional a sweep evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Functional {
    Contraction,
    Barrier,
}

/// One grid point: `α` and either `μ` (contraction) or `(A, t)` (barrier).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub alpha: f64,
    pub mu_or_t: f64,
    pub a: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub max: f64,
    pub std_error: f64,
}

pub fn sweep(
    functional: Functional,
    grid: &[SweepPoint],
    template: &AssumptionConfig,
) -> Result<Vec<SweepRow>> {
    grid.iter()
        .map(|&point| {
            let mut cfg = template.clone();
            cfg.alpha = point.alpha;
            cfg.a = point.a;
            let result = match functional {
                Functional::Contraction => {
                    cfg.mu = point.mu_or_t;
                    check_i2(&cfg)?
                }
                Functional::Barrier => {
                    cfg.t = point.mu_or_t;
                    check_i1(&cfg)?
                }
            };
            Ok(SweepRow {
                point,
                max: result.max,
                std_error: result.std_error,
            })
        })
        .collect()
}

/// Sweep table as `alpha,mu_or_t,A,max_I,stderr`.
pub fn write_sweep<W: Write>(out: &mut W, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "alpha,mu_or_t,A,max_I,stderr")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.point.alpha, r.point.mu_or_t, r.point.a, r.max, r.std_error
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(alpha: f64) -> AssumptionConfig {
        AssumptionConfig {
            samples: 20_000,
            starts: 5,
            seed: 3,
            ..AssumptionConfig::new(alpha)
        }
    }

    #[test]
    fn coincident_pair_is_rejected() {
        let cfg = quick(1.0);
        let p = Point::new(0.3, 0.3);
        assert!(matches!(contraction_at(&cfg, p, p, 0), Err(Error::CoincidentPoints(_))));
    }

    #[test]
    fn vanishing_power_gives_survival_probability() {
        let mut cfg = quick(1.0);
        cfg.mu = 1e-9;
        for est in check_i2(&cfg).unwrap().per_start {
            assert!(est.value <= 1.0 + 1e-6 && est.value > 0.0);
        }
    }

    #[test]
    fn contraction_is_scale_invariant() {
        let small = quick(0.8);
        let big = AssumptionConfig {
            domain: Domain::rect(0.0, 0.0, 2.0, 2.0).unwrap(),
            ..small.clone()
        };
        let a = check_i2(&small).unwrap();
        let b = check_i2(&big).unwrap();
        for (x, y) in a.per_start.iter().zip(&b.per_start) {
            assert!((x.x0 * 2.0 - y.x0).norm() < 1e-12);
            let se = x.std_error.hypot(y.std_error);
            assert!((x.value - y.value).abs() <= 3.0 * se + 1e-12);
        }
    }

    #[test]
    fn barrier_is_scale_invariant_with_rescaled_floor() {
        let mut small = quick(1.2);
        small.t = 0.7;
        small.a = 50.0;
        let big = AssumptionConfig {
            domain: Domain::rect(0.0, 0.0, 2.0, 2.0).unwrap(),
            a: small.a / 2f64.powf(small.t),
            ..small.clone()
        };
        let a = check_i1(&small).unwrap();
        let b = check_i1(&big).unwrap();
        for (x, y) in a.per_start.iter().zip(&b.per_start) {
            let se = x.std_error.hypot(y.std_error);
            assert!((x.value - y.value).abs() <= 3.0 * se + 1e-9);
        }
    }

    #[test]
    fn standard_error_shrinks_with_samples() {
        let cfg = quick(1.0);
        let mut big = cfg.clone();
        big.samples *= 4;
        let x0 = Point::new(0.2, 0.7);
        let y0 = Point::new(0.6, 0.4);
        let a = contraction_at(&cfg, x0, y0, 0).unwrap();
        let b = contraction_at(&big, x0, y0, 0).unwrap();
        let ratio = a.std_error / b.std_error;
        assert!(ratio > 1.7 && ratio < 2.3, "{ratio}");
    }

    #[test]
    fn sweep_table() {
        assert!(sweep(Functional::Contraction, &[], &quick(1.0)).unwrap().is_empty());
        let grid = [
            SweepPoint { alpha: 0.5, mu_or_t: 1.0, a: 1e4 },
            SweepPoint { alpha: 1.0, mu_or_t: 0.5, a: 1e4 },
        ];
        let rows = sweep(Functional::Contraction, &grid, &quick(1.0)).unwrap();
        let mut buf = Vec::new();
        write_sweep(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("alpha,mu_or_t,A,max_I,stderr\n0.5,1,10000,"));
        assert_eq!(text.lines().count(), 3);
    }
}
