//! Streaming moments and small regressions.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Number of chunks evaluated concurrently before merging.
const CHUNKS_PER_BATCH: u64 = 256;

/// Splits `range` into fixed-size chunks, evaluates them in parallel and
/// merges the partial results in chunk order, so the outcome does not depend
/// on the number of worker threads.
pub(crate) fn reduce_chunks<T: Send>(
    range: Range<u64>,
    chunk: u64,
    init: T,
    work: impl Fn(Range<u64>) -> Result<T> + Sync,
    mut merge: impl FnMut(&mut T, T),
) -> Result<T> {
    let chunk = chunk.max(1);
    let mut acc = init;
    let mut start = range.start;
    while start < range.end {
        let batch_end = (start + chunk * CHUNKS_PER_BATCH).min(range.end);
        let bounds: Vec<Range<u64>> = (start..batch_end)
            .step_by(chunk as usize)
            .map(|s| s..(s + chunk).min(batch_end))
            .collect();
        let parts: Vec<T> = bounds
            .into_par_iter()
            .map(&work)
            .collect::<Result<_>>()?;
        parts.into_iter().for_each(|p| merge(&mut acc, p));
        start = batch_end;
    }
    Ok(acc)
}

/// Running mean and sum of squared deviations (Welford), mergeable with
/// Chan's pairwise update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.count as f64 * other.count as f64) / n as f64;
        self.count = n;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::new();
        iter.into_iter().for_each(|x| m.push(x));
        m
    }
}

/// Ordinary least-squares fit `y ≈ intercept + slope·x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: xs.len().min(ys.len()),
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("regression abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    Ok((my - slope * mx, slope))
}

/// Least-squares slope of `log₂ V` against `log₂ h`.
pub fn fit_slope(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            got: pairs.len(),
        });
    }
    if let Some(&(h, v)) = pairs.iter().find(|(h, v)| !(*h > 0.0 && *v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "slope fit needs positive values, got h={h}, V={v}"
        )));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.log2()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.log2()).collect();
    Ok(linear_fit(&xs, &ys)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn slopes_of_power_laws() {
        let hs = [0.5, 0.25, 0.125, 0.0625];
        let exact: Vec<_> = hs.iter().map(|&h| (h, h)).collect();
        assert!((fit_slope(&exact).unwrap() - 1.0).abs() < 1e-12);
        let root: Vec<_> = hs.iter().map(|&h: &f64| (h, h.sqrt())).collect();
        assert!((fit_slope(&root).unwrap() - 0.5).abs() < 1e-12);
        assert!(fit_slope(&exact[..2]).is_err());
        assert!(fit_slope(&[(1.0, 1.0), (0.5, 0.0), (0.25, 1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn merge_matches_single_pass(xs in proptest::collection::vec(-1e3..1e3f64, 2..200), split in 0usize..200) {
            let split = split.min(xs.len());
            let whole: Moments = xs.iter().copied().collect();
            let mut a: Moments = xs[..split].iter().copied().collect();
            let b: Moments = xs[split..].iter().copied().collect();
            a.merge(&b);
            prop_assert_eq!(a.count(), whole.count());
            prop_assert!((a.mean() - whole.mean()).abs() <= 1e-9 * (1.0 + whole.mean().abs()));
            prop_assert!((a.variance() - whole.variance()).abs() <= 1e-8 * (1.0 + whole.variance()));
        }
    }
}
