use crate::error::{Error, Result};
use crate::geometry::{Domain, Point};
use crate::problems::{Problem, ScalarField};
use crate::stats::{reduce_chunks, Moments};

use super::rng::{Purpose, RandomSequence, StepDraw, StreamKey};
use super::special::StableParams;

/// Steps after which a path is reported as stuck.
pub const DEFAULT_MAX_STEPS: usize = 1_000_000;

const POINT_CHUNK: u64 = 1024;

/// `x + Θ·d(x)/√β`.
pub fn wos_step(x: Point, domain: &Domain, beta: f64, theta: Point) -> Result<Point> {
    let d = domain.distance(x);
    if !(d > 0.0) {
        return Err(Error::DegenerateDistance(x));
    }
    Ok(x + theta * (d / beta.sqrt()))
}

/// Source contribution of one step taken from `x` at distance `d`.
#[inline]
pub(crate) fn source_term(
    x: Point,
    d: f64,
    draw: &StepDraw,
    params: &StableParams,
    f: &ScalarField,
) -> f64 {
    let scale = params.a1 * d.powf(params.alpha);
    match f {
        ScalarField::Constant(c) => scale * params.a2 * c,
        ScalarField::Function(func) => {
            let fx = func(x);
            let inner = func(x + draw.phi * (d * draw.s_root));
            scale * ((inner - fx) * draw.inner_weight + params.a2 * fx)
        }
    }
}

/// The source term `F(x; S, Φ)` of one walk step.
pub fn f_term(
    x: Point,
    s: f64,
    phi: Point,
    params: &StableParams,
    f: &ScalarField,
    domain: &Domain,
) -> Result<f64> {
    let d = domain.distance(x);
    if !(d > 0.0) {
        return Err(Error::DegenerateDistance(x));
    }
    let s_root = s.powf(1.0 / params.alpha);
    let draw = StepDraw {
        beta: 0.5,
        inv_sqrt_beta: 2f64.sqrt(),
        theta: phi,
        s,
        s_root,
        phi,
        inner_weight: params.beta_cdf(1.0 - s_root * s_root),
    };
    Ok(source_term(x, d, &draw, params, f))
}

/// Positions `x₀ … x_N` of one walk; `x_N` is the first point outside the
/// domain.
#[derive(Clone, Debug, PartialEq)]
pub struct WosPath {
    pub positions: Vec<Point>,
    pub exit_index: usize,
    pub steps_consumed: usize,
}

impl WosPath {
    pub fn exit_point(&self) -> Point {
        self.positions[self.exit_index]
    }
}

/// Walks from `x0` using entries `offset, offset + 1, …` of `seq`.
pub fn run_path(
    x0: Point,
    domain: &Domain,
    seq: &mut RandomSequence,
    offset: usize,
    max_steps: usize,
) -> Result<WosPath> {
    let mut positions = vec![x0];
    let mut x = x0;
    loop {
        let d = domain.distance(x);
        if !(d > 0.0) {
            break;
        }
        let n = positions.len() - 1;
        if n >= max_steps {
            return Err(Error::MaxStepsExceeded { start: x0, max_steps });
        }
        let draw = seq.get(offset + n);
        x = x + draw.theta * (d * draw.inv_sqrt_beta);
        positions.push(x);
    }
    let exit_index = positions.len() - 1;
    Ok(WosPath {
        positions,
        exit_index,
        steps_consumed: exit_index,
    })
}

/// One realization of `g(x_N) + Σ_k F(x_k; S_k, Φ_k)` and its step count.
#[inline]
pub fn path_value(
    x0: Point,
    problem: &Problem,
    seq: &mut RandomSequence,
    max_steps: usize,
) -> Result<(f64, usize)> {
    let domain = &problem.domain;
    let params = problem.params();
    let mut x = x0;
    let mut total = 0.0;
    let mut n = 0;
    loop {
        let d = domain.distance(x);
        if !(d > 0.0) {
            break;
        }
        if n >= max_steps {
            return Err(Error::MaxStepsExceeded { start: x0, max_steps });
        }
        let draw = seq.get(n);
        total += source_term(x, d, draw, params, &problem.f);
        x = x + draw.theta * (d * draw.inv_sqrt_beta);
        n += 1;
    }
    Ok((total + problem.g.eval(x), n))
}

/// Sample mean and variance of the walk estimator at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointEstimate {
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub samples: u64,
    pub total_steps: u64,
}

/// `M` independent walks from `x`, each with its own sequence keyed by
/// `(seed, sample index)`.
pub fn point_estimate(x: Point, problem: &Problem, m: u64, seed: u64) -> Result<PointEstimate> {
    if m < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: m as usize,
        });
    }
    let (moments, steps) = reduce_chunks(
        0..m,
        POINT_CHUNK,
        (Moments::new(), 0u64),
        |range| {
            let mut acc = (Moments::new(), 0u64);
            for i in range {
                let key = StreamKey::new(seed, 0, i, Purpose::Point);
                let mut seq = RandomSequence::new(key, problem.params());
                let (v, n) = path_value(x, problem, &mut seq, DEFAULT_MAX_STEPS)?;
                acc.0.push(v);
                acc.1 += n as u64;
            }
            Ok(acc)
        },
        |acc, part| {
            acc.0.merge(&part.0);
            acc.1 += part.1;
        },
    )?;
    Ok(PointEstimate {
        mean: moments.mean(),
        variance: moments.variance(),
        std_error: moments.std_error(),
        samples: moments.count(),
        total_steps: steps,
    })
}
