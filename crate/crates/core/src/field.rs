//! Coupled field realizations: one shared random sequence drives the walks
//! from every vertex of a mesh level.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::mesh::{FieldVector, MeshHierarchy, MeshLevel, NormMask};
use crate::problems::Problem;
use crate::sampling::{path_value, Purpose, RandomSequence, StreamKey, DEFAULT_MAX_STEPS};
use crate::stats::reduce_chunks;

const FIELD_CHUNK: u64 = 8;

/// Walks from every interior vertex with the same sequence; exterior vertices
/// take the exterior data. Returns the field and the total step count.
pub fn sample_field(
    level: &MeshLevel,
    problem: &Problem,
    seq: &mut RandomSequence,
) -> Result<(FieldVector, u64)> {
    let mut values = Vec::with_capacity(level.vertex_count());
    let mut cost = 0u64;
    for (z, inside) in level.vertices().iter().zip(level.interior_mask()) {
        if *inside {
            let (v, steps) = path_value(*z, problem, seq, DEFAULT_MAX_STEPS)?;
            values.push(v);
            cost += steps as u64;
        } else {
            values.push(problem.g.eval(*z));
        }
    }
    Ok((FieldVector::new(level.level(), values), cost))
}

/// Fine field at level `ℓ + 1` and its restriction to level `ℓ`, both from
/// one realization.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub fine: FieldVector,
    pub coarse: FieldVector,
    pub cost: u64,
}

pub fn sample_pair(
    hier: &MeshHierarchy,
    level: usize,
    problem: &Problem,
    seq: &mut RandomSequence,
) -> Result<FieldSample> {
    let (fine, cost) = sample_field(hier.level(level + 1)?, problem, seq)?;
    let coarse = hier.restrict(&fine)?;
    Ok(FieldSample { fine, coarse, cost })
}

/// One term of the multilevel telescoping sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LevelTerm {
    /// Plain field samples on a level.
    Plain(usize),
    /// Midpoint defects between coarse level `ℓ` and fine level `ℓ + 1`.
    Transition(usize),
}

impl LevelTerm {
    /// Level on which the term's fields live.
    pub fn field_level(self) -> usize {
        match self {
            Self::Plain(l) => l,
            Self::Transition(l) => l + 1,
        }
    }

    /// Stream key for sample `index` of this term.
    pub fn key(self, seed: u64, index: u64) -> StreamKey {
        match self {
            Self::Plain(l) => StreamKey::new(seed, l, index, Purpose::Plain),
            Self::Transition(l) => StreamKey::new(seed, l, index, Purpose::Pair),
        }
    }
}

/// Streaming vector mean and scalar sum of squared L²(D) deviations.
#[derive(Clone, Debug)]
pub struct FieldAccumulator {
    level: usize,
    count: u64,
    mean: Vec<f64>,
    m2: f64,
    cost: u64,
}

impl FieldAccumulator {
    pub fn new(level: &MeshLevel) -> Self {
        Self {
            level: level.level(),
            count: 0,
            mean: vec![0.0; level.vertex_count()],
            m2: 0.0,
            cost: 0,
        }
    }

    pub fn push(&mut self, mesh: &MeshLevel, values: &[f64], cost: u64) {
        self.count += 1;
        let n = self.count as f64;
        let mut before = vec![0.0; values.len()];
        for ((m, d), x) in self.mean.iter_mut().zip(before.iter_mut()).zip(values) {
            *d = x - *m;
            *m += *d / n;
        }
        let after: Vec<f64> = values.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        self.m2 += mesh.l2_inner_values(&before, &after, NormMask::Domain);
        self.cost += cost;
    }

    pub fn merge(&mut self, mesh: &MeshLevel, other: FieldAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let norm2 = mesh.l2_inner_values(&delta, &delta, NormMask::Domain);
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d * nb / n;
        }
        self.m2 += other.m2 + norm2 * na * nb / n;
        self.count += other.count;
        self.cost += other.cost;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn total_cost(&self) -> u64 {
        self.cost
    }

    pub fn mean_field(&self) -> FieldVector {
        FieldVector::new(self.level, self.mean.clone())
    }

    /// `(Σ‖d_i‖² − M‖d̄‖²)/(M − 1)` in the masked L² norm.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.m2 / (self.count - 1) as f64).max(0.0)
    }

    pub fn mean_cost(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.cost as f64 / self.count as f64
        }
    }

    pub fn statistics(&self) -> Result<DefectStatistics> {
        if self.count < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: self.count as usize,
            });
        }
        Ok(DefectStatistics {
            variance: self.variance(),
            mean_cost: self.mean_cost(),
            samples: self.count,
        })
    }
}

/// Level variance `V̂`, mean cost `Ĉ` and the number of samples behind them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DefectStatistics {
    pub variance: f64,
    pub mean_cost: f64,
    pub samples: u64,
}

/// Variance of the midpoint defects and mean cost of a batch of pairs.
pub fn defect_statistics<'a>(
    samples: impl IntoIterator<Item = &'a FieldSample>,
    hier: &MeshHierarchy,
) -> Result<DefectStatistics> {
    let mut acc: Option<(FieldAccumulator, &MeshLevel)> = None;
    for s in samples {
        let defect = hier.midpoint_defect(&s.fine)?;
        let (acc, mesh) = match &mut acc {
            Some(a) => a,
            None => {
                let mesh = hier.level(s.fine.level)?;
                acc.insert((FieldAccumulator::new(mesh), mesh))
            }
        };
        if defect.level != acc.level {
            return Err(Error::LevelMismatch {
                expected: acc.level,
                found: defect.level,
            });
        }
        acc.push(mesh, &defect.values, s.cost);
    }
    match acc {
        Some((a, _)) => a.statistics(),
        None => Err(Error::InsufficientSamples { needed: 2, got: 0 }),
    }
}

/// Samples `indices` of one telescoping term in parallel and accumulates the
/// plain fields or midpoint defects.
pub fn accumulate(
    hier: &MeshHierarchy,
    problem: &Problem,
    term: LevelTerm,
    seed: u64,
    indices: Range<u64>,
) -> Result<FieldAccumulator> {
    let mesh = hier.level(term.field_level())?;
    let links = match term {
        LevelTerm::Transition(l) => Some(hier.parent_links(l + 1)?),
        LevelTerm::Plain(_) => None,
    };
    reduce_chunks(
        indices,
        FIELD_CHUNK,
        FieldAccumulator::new(mesh),
        |range| {
            let mut acc = FieldAccumulator::new(mesh);
            let mut defect = vec![0.0; mesh.vertex_count()];
            for i in range {
                let mut seq = RandomSequence::new(term.key(seed, i), problem.params());
                let (field, cost) = sample_field(mesh, problem, &mut seq)?;
                match links {
                    Some(links) => {
                        hier.midpoint_defect_into(links, &field.values, &mut defect);
                        acc.push(mesh, &defect, cost);
                    }
                    None => acc.push(mesh, &field.values, cost),
                }
            }
            Ok(acc)
        },
        |acc, part| acc.merge(mesh, part),
    )
}
