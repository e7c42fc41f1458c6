//! Counter-based random tuples shared by every path of one field sample.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::special::StableParams;
use crate::geometry::Point;

/// Tags separating independent uses of the same `(seed, level, index)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Point = 1,
    Plain = 2,
    Pair = 3,
    Contraction = 4,
    Barrier = 5,
    StartPoints = 6,
}

/// Identifies one independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub level: u64,
    pub index: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(seed: u64, level: usize, index: u64, purpose: Purpose) -> Self {
        Self {
            seed,
            level: level as u64,
            index,
            purpose,
        }
    }

    fn generator(&self) -> ChaCha8Rng {
        let mut bytes = [0u8; 32];
        for (chunk, word) in bytes
            .chunks_exact_mut(8)
            .zip([self.seed, self.level, self.index, self.purpose as u64])
        {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(bytes)
    }

    /// Plain stream of open-interval uniforms, for draws outside the tuple
    /// layout (start points and the like).
    pub fn uniforms(&self) -> Uniforms {
        Uniforms(self.generator())
    }
}

/// Uniform variates on the open interval `(0, 1)`.
pub struct Uniforms(ChaCha8Rng);

impl Uniforms {
    #[inline]
    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> f64 {
        open_uniform(self.0.next_u64())
    }
}

#[inline]
fn open_uniform(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

const WORDS_PER_ENTRY: u128 = 16;
const RETRY_SHIFT: u32 = 20;

/// One Beta variate by Johnk's method, evaluated in log space so that tiny
/// shape parameters do not underflow. `retry` supplies fresh uniform pairs
/// after a rejection.
pub fn sample_beta(alpha: f64, u1: f64, u2: f64, mut retry: impl FnMut() -> (f64, f64)) -> f64 {
    let (a, b) = (0.5 * alpha, 1.0 - 0.5 * alpha);
    let (mut u1, mut u2) = (u1, u2);
    loop {
        let lx = u1.ln() / a;
        let ly = u2.ln() / b;
        let lm = lx.max(ly);
        let ls = lm + ((lx - lm).exp() + (ly - lm).exp()).ln();
        if ls <= 0.0 && ls.is_finite() {
            return (lx - ls).exp().clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
        }
        (u1, u2) = retry();
    }
}

/// Everything one WOS step needs from entry `n` of a sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDraw {
    pub beta: f64,
    pub inv_sqrt_beta: f64,
    pub theta: Point,
    pub s: f64,
    /// `S^{1/α}`.
    pub s_root: f64,
    pub phi: Point,
    /// `P(β < 1 − S^{2/α})`.
    pub inner_weight: f64,
}

/// The shared stream `(β_n, Θ_n, S_n, Φ_n)` of one field realization.
///
/// Entry `n` is a pure function of the key and `n`; materialized entries are
/// cached so that every path of the realization reads the same tuple.
pub struct RandomSequence {
    key: StreamKey,
    params: StableParams,
    rng: ChaCha8Rng,
    entries: Vec<StepDraw>,
}

impl RandomSequence {
    pub fn new(key: StreamKey, params: &StableParams) -> Self {
        Self {
            key,
            params: *params,
            rng: key.generator(),
            entries: Vec::new(),
        }
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    pub fn alpha(&self) -> f64 {
        self.params.alpha
    }

    /// Entry `n`, materializing it and all predecessors on first access.
    #[inline]
    pub fn get(&mut self, n: usize) -> &StepDraw {
        while self.entries.len() <= n {
            let next = self.entries.len();
            let draw = self.compute(next);
            self.entries.push(draw);
        }
        &self.entries[n]
    }

    /// Just `(β_n, Θ_n)`, skipping the source-term quantities.
    pub fn step(&mut self, n: usize) -> (f64, Point) {
        let u = self.raw(n);
        let beta = self.beta(n, u[0], u[1]);
        (beta, Point::from_angle(std::f64::consts::TAU * u[2]))
    }

    fn raw(&mut self, n: usize) -> [f64; 5] {
        self.rng.set_stream(0);
        self.rng.set_word_pos(WORDS_PER_ENTRY * n as u128);
        std::array::from_fn(|_| open_uniform(self.rng.next_u64()))
    }

    fn beta(&mut self, n: usize, u1: f64, u2: f64) -> f64 {
        let alpha = self.params.alpha;
        let rng = &mut self.rng;
        let mut first_retry = true;
        sample_beta(alpha, u1, u2, || {
            if first_retry {
                rng.set_stream(1);
                rng.set_word_pos((n as u128) << RETRY_SHIFT);
                first_retry = false;
            }
            (open_uniform(rng.next_u64()), open_uniform(rng.next_u64()))
        })
    }

    /// Entry `n` computed from scratch.
    pub fn compute(&mut self, n: usize) -> StepDraw {
        let u = self.raw(n);
        let beta = self.beta(n, u[0], u[1]);
        let alpha = self.params.alpha;
        let s = u[3];
        let s_root = s.powf(1.0 / alpha);
        StepDraw {
            beta,
            inv_sqrt_beta: 1.0 / beta.sqrt(),
            theta: Point::from_angle(std::f64::consts::TAU * u[2]),
            s,
            s_root,
            phi: Point::from_angle(std::f64::consts::TAU * u[4]),
            inner_weight: self.params.beta_cdf(1.0 - s_root * s_root),
        }
    }
}
