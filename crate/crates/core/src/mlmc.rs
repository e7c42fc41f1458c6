//! Multilevel Monte Carlo assembly of whole-field solutions.

use log::warn;

use crate::error::{Error, Result};
use crate::field::{accumulate, FieldAccumulator, LevelTerm};
use crate::mesh::{FieldVector, MeshHierarchy, MeshLevel, NormMask};
use crate::problems::{Problem, ScalarField};
use crate::stats::fit_slope;

/// Bias decay rate in powers of two per level.
pub const BIAS_RATE: f64 = 2.0;
/// Cost growth rate in powers of two per level.
pub const COST_RATE: f64 = 2.0;
/// Variances below this are clamped before allocation.
pub const VARIANCE_FLOOR: f64 = 1e-12;
pub const MIN_PILOT_SAMPLES: u64 = 8;

/// How the finest level is picked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LevelSelection {
    /// Smallest level whose extrapolated bias is below `ε/2`.
    Adaptive,
    /// Always the configured finest level.
    Fixed,
}

#[derive(Clone, Debug)]
pub struct MlmcConfig {
    pub eps: f64,
    pub coarsest: usize,
    pub finest: usize,
    pub pilot_samples: u64,
    pub seed: u64,
    /// Cap on the projected number of walk steps.
    pub budget: Option<f64>,
    pub selection: LevelSelection,
}

impl MlmcConfig {
    pub fn new(eps: f64, coarsest: usize, finest: usize, seed: u64) -> Self {
        Self {
            eps,
            coarsest,
            finest,
            pilot_samples: 32,
            seed,
            budget: None,
            selection: LevelSelection::Adaptive,
        }
    }

    pub fn fixed(mut self) -> Self {
        self.selection = LevelSelection::Fixed;
        self
    }
}

/// Statistics of one telescoping term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermReport {
    pub term: LevelTerm,
    pub variance: f64,
    pub mean_cost: f64,
    pub planned: u64,
    pub used: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlmcPlan {
    pub eps: f64,
    pub coarsest: usize,
    pub finest: usize,
    pub bias_rate: f64,
    pub cost_rate: f64,
    pub bias_coefficient: f64,
    /// `false` when pilot bias estimates did not decay.
    pub bias_decays: bool,
    pub terms: Vec<TermReport>,
}

#[derive(Clone, Debug)]
pub struct MlmcResult {
    pub solution: FieldVector,
    pub plan: MlmcPlan,
    /// Walk steps over every sample drawn, pilots included.
    pub total_cost: u64,
    /// `√(Σ V_ℓ/M_ℓ)`.
    pub statistical_error: f64,
}

/// Pilot accumulators for the plain term at `coarsest` and every transition
/// up to `finest`.
pub fn pilot(
    hier: &MeshHierarchy,
    problem: &Problem,
    coarsest: usize,
    finest: usize,
    pilot_samples: u64,
    seed: u64,
) -> Result<Vec<(LevelTerm, FieldAccumulator)>> {
    if pilot_samples < MIN_PILOT_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_PILOT_SAMPLES as usize,
            got: pilot_samples as usize,
        });
    }
    std::iter::once(LevelTerm::Plain(coarsest))
        .chain((coarsest..finest).map(LevelTerm::Transition))
        .map(|term| Ok((term, accumulate(hier, problem, term, seed, 0..pilot_samples)?)))
        .collect()
}

/// Finest level chosen from bias estimates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelChoice {
    pub finest: usize,
    pub bias_coefficient: f64,
    pub decays: bool,
}

/// Fits `‖E d_ℓ‖ ≈ k·2^{−aℓ}` for transitions with coarse level `ℓ` and
/// returns the smallest `L` with `c₁·2^{−aL} ≤ ε/2`, where
/// `c₁ = k/(1 − 2^{−a})` bounds the tail sum.
pub fn choose_levels(
    eps: f64,
    bias: &[(usize, f64)],
    coarsest: usize,
    max_level: usize,
) -> Result<LevelChoice> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let positive: Vec<(f64, f64)> = bias
        .iter()
        .filter(|(_, b)| *b > 0.0)
        .map(|&(l, b)| (l as f64, b.log2()))
        .collect();
    if positive.is_empty() {
        return Ok(LevelChoice {
            finest: coarsest,
            bias_coefficient: 0.0,
            decays: true,
        });
    }
    if positive.len() >= 2 {
        let xs: Vec<f64> = positive.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = positive.iter().map(|p| p.1).collect();
        let (_, slope) = crate::stats::linear_fit(&xs, &ys)?;
        if slope >= 0.0 {
            warn!("bias estimates do not decay (fitted rate {slope:.3}); using level {max_level}");
            return Ok(LevelChoice {
                finest: max_level,
                bias_coefficient: f64::NAN,
                decays: false,
            });
        }
    }
    let log_k = positive.iter().map(|(l, lb)| lb + BIAS_RATE * l).sum::<f64>() / positive.len() as f64;
    let c1 = log_k.exp2() / (1.0 - (-BIAS_RATE).exp2());
    let finest = (coarsest..=max_level)
        .find(|&l| c1 * (-BIAS_RATE * l as f64).exp2() <= 0.5 * eps)
        .unwrap_or_else(|| {
            warn!("tolerance {eps} needs more than level {max_level}; bias may dominate");
            max_level
        });
    Ok(LevelChoice {
        finest,
        bias_coefficient: c1,
        decays: true,
    })
}

/// `M_ℓ = ⌈2ε^{−2} √(V_ℓ/C_ℓ) Σ_k √(V_k C_k)⌉`, at least one sample per term.
pub fn allocate(eps: f64, variances: &[f64], costs: &[f64]) -> Result<Vec<u64>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if variances.len() != costs.len() {
        return Err(Error::InvalidArgument("variance and cost lists differ in length".into()));
    }
    if let Some(c) = costs.iter().find(|c| !(**c > 0.0)) {
        return Err(Error::InvalidArgument(format!("costs must be positive, got {c}")));
    }
    let vs: Vec<f64> = variances
        .iter()
        .map(|&v| {
            if v < VARIANCE_FLOOR {
                warn!("level variance {v:e} below floor; clamped to {VARIANCE_FLOOR:e}");
            }
            v.max(VARIANCE_FLOOR)
        })
        .collect();
    let total: f64 = vs.iter().zip(costs).map(|(v, c)| (v * c).sqrt()).sum();
    Ok(vs
        .iter()
        .zip(costs)
        .map(|(v, c)| ((2.0 / (eps * eps) * (v / c).sqrt() * total).ceil() as u64).max(1))
        .collect())
}

/// Pilot, level choice, allocation, sampling and assembly of the multilevel
/// estimator on level `L`.
pub fn run(hier: &MeshHierarchy, problem: &Problem, cfg: &MlmcConfig) -> Result<MlmcResult> {
    if !(cfg.eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {}", cfg.eps)));
    }
    if cfg.coarsest > cfg.finest {
        return Err(Error::InvalidArgument(format!(
            "coarsest level {} exceeds finest level {}",
            cfg.coarsest, cfg.finest
        )));
    }
    hier.level(cfg.coarsest)?;
    hier.level(cfg.finest)?;

    let mut accs = pilot(hier, problem, cfg.coarsest, cfg.finest, cfg.pilot_samples, cfg.seed)?;

    let choice = match cfg.selection {
        LevelSelection::Fixed => LevelChoice {
            finest: cfg.finest,
            bias_coefficient: f64::NAN,
            decays: true,
        },
        LevelSelection::Adaptive => {
            let bias: Vec<(usize, f64)> = accs
                .iter()
                .filter_map(|(term, acc)| match term {
                    LevelTerm::Transition(l) => Some(debiased_mean_norm(hier, acc).map(|b| (*l, b))),
                    LevelTerm::Plain(_) => None,
                })
                .collect::<Result<_>>()?;
            choose_levels(cfg.eps, &bias, cfg.coarsest, cfg.finest)?
        }
    };
    let finest = choice.finest;
    let kept = 1 + (finest - cfg.coarsest);
    let discarded_cost: u64 = accs[kept..].iter().map(|(_, a)| a.total_cost()).sum();
    accs.truncate(kept);

    let variances: Vec<f64> = accs.iter().map(|(_, a)| a.variance()).collect();
    let costs: Vec<f64> = accs.iter().map(|(_, a)| a.mean_cost().max(1.0)).collect();
    let planned = allocate(cfg.eps, &variances, &costs)?;

    let projected: f64 = planned
        .iter()
        .zip(&costs)
        .map(|(m, c)| (*m).max(cfg.pilot_samples) as f64 * c)
        .sum::<f64>()
        + discarded_cost as f64;
    if let Some(budget) = cfg.budget {
        if projected > budget {
            return Err(Error::BudgetExceeded { projected, budget });
        }
    }

    for ((term, acc), &m) in accs.iter_mut().zip(&planned) {
        if m > cfg.pilot_samples {
            let extra = accumulate(hier, problem, *term, cfg.seed, cfg.pilot_samples..m)?;
            acc.merge(hier.level(term.field_level())?, extra);
        }
    }

    let mut solution = hier.level(finest)?.zero_field();
    let mut terms = Vec::with_capacity(accs.len());
    let mut stat_var = 0.0;
    let mut total_cost = discarded_cost;
    for ((term, acc), &m) in accs.iter().zip(&planned) {
        let mean = hier.prolong_to(&acc.mean_field(), finest)?;
        solution.axpy(1.0, &mean)?;
        stat_var += acc.variance() / acc.count() as f64;
        total_cost += acc.total_cost();
        terms.push(TermReport {
            term: *term,
            variance: acc.variance(),
            mean_cost: acc.mean_cost(),
            planned: m,
            used: acc.count(),
        });
    }

    Ok(MlmcResult {
        solution,
        plan: MlmcPlan {
            eps: cfg.eps,
            coarsest: cfg.coarsest,
            finest,
            bias_rate: BIAS_RATE,
            cost_rate: COST_RATE,
            bias_coefficient: choice.bias_coefficient,
            bias_decays: choice.decays,
            terms,
        },
        total_cost,
        statistical_error: stat_var.sqrt(),
    })
}

/// `‖d̄‖` with the sampling noise `V/M` removed from `‖d̄‖²`.
fn debiased_mean_norm(hier: &MeshHierarchy, acc: &FieldAccumulator) -> Result<f64> {
    let mean = acc.mean_field();
    let mesh = hier.level(mean.level)?;
    let norm2 = mesh.l2_norm(&mean, NormMask::Domain)?.powi(2);
    Ok((norm2 - acc.variance() / acc.count() as f64).max(0.0).sqrt())
}

/// Absolute and relative L²(D) error of a vertex field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorNorms {
    pub abs: f64,
    pub rel: Option<f64>,
}

impl ErrorNorms {
    pub fn relative(&self) -> Result<f64> {
        self.rel.ok_or(Error::ZeroReferenceNorm)
    }
}

/// Masked L² distance to `exact` sampled at the vertices, and the same
/// relative to the norm of `exact`.
pub fn error_vs_exact(solution: &FieldVector, exact: &ScalarField, mesh: &MeshLevel) -> Result<ErrorNorms> {
    let reference = mesh.sample(|p| exact.eval(p));
    let mut diff = solution.clone();
    diff.axpy(-1.0, &reference)?;
    let abs = mesh.l2_norm(&diff, NormMask::Domain)?;
    let norm = mesh.l2_norm(&reference, NormMask::Domain)?;
    Ok(ErrorNorms {
        abs,
        rel: (norm > 0.0).then(|| abs / norm),
    })
}

/// Multilevel and single-level costs at one tolerance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostRow {
    pub eps: f64,
    pub finest: usize,
    pub mlmc_cost: u64,
    pub vanilla_cost: u64,
    pub mlmc_error: f64,
    pub vanilla_error: f64,
}

/// Finest level for tolerance `ε` on the schedule `ε = 2^{−2L}`.
pub fn schedule_level(eps: f64) -> usize {
    (-eps.log2() / BIAS_RATE).ceil().max(1.0) as usize
}

/// Runs the multilevel estimator from `coarsest` and the single-level one at
/// the scheduled finest level for each tolerance.
pub fn cost_comparison(
    hier: &MeshHierarchy,
    problem: &Problem,
    eps_list: &[f64],
    coarsest: usize,
    pilot_samples: u64,
    seed: u64,
    budget: Option<f64>,
) -> Result<Vec<CostRow>> {
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("tolerances must be strictly decreasing".into()));
    }
    eps_list
        .iter()
        .map(|&eps| {
            let finest = schedule_level(eps).max(coarsest);
            let mut cfg = MlmcConfig::new(eps, coarsest, finest, seed).fixed();
            cfg.pilot_samples = pilot_samples;
            cfg.budget = budget;
            let ml = run(hier, problem, &cfg)?;
            cfg.coarsest = finest;
            let vanilla = run(hier, problem, &cfg)?;
            Ok(CostRow {
                eps,
                finest,
                mlmc_cost: ml.total_cost,
                vanilla_cost: vanilla.total_cost,
                mlmc_error: ml.statistical_error,
                vanilla_error: vanilla.statistical_error,
            })
        })
        .collect()
}

/// Level variance and cost of one transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceRow {
    pub coarse_level: usize,
    pub mesh_width: f64,
    pub variance: f64,
    pub mean_cost: f64,
    pub samples: u64,
}

/// Coupling variances for the transitions `coarsest → coarsest+1`, …,
/// `finest−1 → finest` and the fitted rate against the coarse mesh width.
pub fn variance_study(
    hier: &MeshHierarchy,
    problem: &Problem,
    coarsest: usize,
    finest: usize,
    samples: u64,
    seed: u64,
) -> Result<(Vec<VarianceRow>, Option<f64>)> {
    if coarsest >= finest {
        return Err(Error::InvalidArgument(format!(
            "variance study needs coarsest < finest, got {coarsest} and {finest}"
        )));
    }
    let rows: Vec<VarianceRow> = (coarsest..finest)
        .map(|l| {
            let acc = accumulate(hier, problem, LevelTerm::Transition(l), seed, 0..samples)?;
            let stats = acc.statistics()?;
            Ok(VarianceRow {
                coarse_level: l,
                mesh_width: hier.level(l)?.mesh_width(),
                variance: stats.variance,
                mean_cost: stats.mean_cost,
                samples: stats.samples,
            })
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.mesh_width, r.variance)).collect();
    let slope = if pairs.len() >= 3 { fit_slope(&pairs).ok() } else { None };
    Ok((rows, slope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;
    use crate::problems::example2;

    #[test]
    fn level_choice_examples() {
        let l0 = 3;
        // c₁ = 1 corresponds to k = 1 − 2^{−2}
        let k = 0.75;
        let bias: Vec<(usize, f64)> = (3..6).map(|l| (l, k * (-2.0 * l as f64).exp2())).collect();
        let eps = (-(2.0 * l0 as f64) + 1.0).exp2();
        let c = choose_levels(eps, &bias, l0, 9).unwrap();
        assert_eq!(c.finest, l0);
        assert!((c.bias_coefficient - 1.0).abs() < 1e-12);
        let mut prev = c.finest;
        let mut e = eps;
        for _ in 0..4 {
            e /= 2.0;
            let next = choose_levels(e, &bias, l0, 12).unwrap().finest;
            assert!(next >= prev && next <= prev + 1);
            prev = next;
        }
        let zero = choose_levels(1e-6, &[(3, 0.0), (4, 0.0)], l0, 9).unwrap();
        assert_eq!((zero.finest, zero.bias_coefficient), (l0, 0.0));
        let flat = choose_levels(1e-2, &[(3, 0.1), (4, 0.2), (5, 0.3)], l0, 7).unwrap();
        assert_eq!(flat.finest, 7);
        assert!(!flat.decays);
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate(1.0, &[1.0], &[1.0]).unwrap(), vec![2]);
        let v = [0.5, 0.1, 0.02];
        let c = [10.0, 40.0, 160.0];
        let base = allocate(0.1, &v, &c).unwrap();
        let half = allocate(0.05, &v, &c).unwrap();
        let exact = |eps: f64| -> Vec<f64> {
            let total: f64 = v.iter().zip(&c).map(|(v, c)| (v * c).sqrt()).sum();
            v.iter().zip(&c).map(|(v, c)| 2.0 / (eps * eps) * (v / c).sqrt() * total).collect()
        };
        for (m, x) in half.iter().zip(exact(0.05)) {
            assert_eq!(*m, x.ceil() as u64);
        }
        for (m, x) in base.iter().zip(exact(0.1)) {
            assert!((4.0 * x - (*m as f64 * 4.0)).abs() <= 4.0);
        }
        let scaled: Vec<f64> = c.iter().map(|c| 4.0 * c).collect();
        assert_eq!(allocate(0.1, &v, &scaled).unwrap(), base);
        let stat: f64 = v.iter().zip(&base).map(|(v, m)| v / *m as f64).sum();
        assert!(stat <= 0.5 * 0.1 * 0.1 * (1.0 + 1e-12));
        assert_eq!(allocate(0.1, &[0.0], &[1.0]).unwrap(), vec![1]);
        assert!(allocate(0.1, &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn allocation_is_optimal_for_its_cost() {
        let triples: [([f64; 3], [f64; 3]); 3] = [
            ([0.5, 0.1, 0.02], [10.0, 40.0, 160.0]),
            ([1.0, 1.0, 1.0], [1.0, 4.0, 16.0]),
            ([0.03, 0.3, 0.003], [5.0, 7.0, 90.0]),
        ];
        for (v, c) in triples {
            let total: f64 = v.iter().zip(&c).map(|(v, c)| (v * c).sqrt()).sum();
            let m: Vec<f64> = v.iter().zip(&c).map(|(v, c)| 2e4 * (v / c).sqrt() * total).collect();
            let budget: f64 = m.iter().zip(&c).map(|(m, c)| m * c).sum();
            let objective = |m: &[f64]| v.iter().zip(m).map(|(v, m)| v / m).sum::<f64>();
            let best = objective(&m);
            for i in 1..100 {
                for j in 1..(100 - i) {
                    let share = [i as f64 / 100.0, j as f64 / 100.0, (100 - i - j) as f64 / 100.0];
                    let trial: Vec<f64> = share.iter().zip(&c).map(|(s, c)| s * budget / c).collect();
                    assert!(objective(&trial) >= best * (1.0 - 1e-12));
                }
            }
        }
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let p = Problem::new(
            "zero",
            1.0,
            Domain::unit_ball(),
            ScalarField::Constant(0.0),
            ScalarField::Constant(0.0),
            None,
        )
        .unwrap();
        let hier = MeshHierarchy::unit_ball(4).unwrap();
        let r = run(&hier, &p, &MlmcConfig::new(1e-2, 2, 4, 1)).unwrap();
        assert!(r.solution.values.iter().all(|v| *v == 0.0));
        assert_eq!(r.plan.finest, 2);
    }

    #[test]
    fn pilot_is_reproducible_and_costs_grow() {
        let p = example2(1.0).unwrap();
        let hier = MeshHierarchy::unit_ball(5).unwrap();
        let a = pilot(&hier, &p, 2, 5, 16, 3).unwrap();
        let b = pilot(&hier, &p, 2, 5, 16, 3).unwrap();
        for ((ta, aa), (tb, ab)) in a.iter().zip(&b) {
            assert_eq!(ta, tb);
            assert_eq!(aa.variance(), ab.variance());
            assert!(aa.variance() > 0.0);
        }
        let ratio = a[3].1.mean_cost() / a[2].1.mean_cost();
        assert!(ratio > 3.0 && ratio < 5.0, "{ratio}");
        assert!(pilot(&hier, &p, 2, 5, 4, 3).is_err());
    }

    #[test]
    fn error_norm_examples() {
        let hier = MeshHierarchy::build(
            &crate::mesh::BaseMesh::square_diagonals(
                crate::geometry::Point::new(0.0, 0.0),
                crate::geometry::Point::new(1.0, 1.0),
            ),
            3,
            &Domain::unit_square(),
        )
        .unwrap();
        let mesh = hier.level(3).unwrap();
        let exact = ScalarField::from_fn(|p| p.x + 2.0 * p.y);
        let same = mesh.sample(|p| exact.eval(p));
        assert_eq!(error_vs_exact(&same, &exact, mesh).unwrap().abs, 0.0);
        let shifted = mesh.sample(|p| exact.eval(p) + 0.25);
        assert!((error_vs_exact(&shifted, &exact, mesh).unwrap().abs - 0.25).abs() < 1e-12);
        let zero = ScalarField::Constant(0.0);
        let e = error_vs_exact(&shifted, &zero, mesh).unwrap();
        assert!(matches!(e.relative(), Err(Error::ZeroReferenceNorm)));
    }

    #[test]
    fn schedule_levels() {
        assert_eq!(schedule_level((-8.0f64).exp2()), 4);
        assert_eq!(schedule_level((-10.0f64).exp2()), 5);
        assert_eq!(schedule_level(1e-2), 4);
    }
}
