//! Smallest eigenvalue of the fractional Laplacian by Arnoldi iteration on
//! its inverse, with inexact Monte Carlo applications of the inverse.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh::{FieldVector, MeshHierarchy, NormMask};
use crate::mlmc::{self, MlmcConfig};
use crate::problems::{Problem, ScalarField};

/// Default cap on the relaxation factor of the solve tolerance.
pub const DEFAULT_RELAX_CAP: f64 = 100.0;
const BREAKDOWN: f64 = 1e-14;
const COMPLEX_TOLERANCE: f64 = 1e-10;

/// A linear map applied approximately, to a requested Euclidean accuracy.
pub trait InverseOperator {
    fn dim(&self) -> usize;

    /// `A⁻¹v` with root-mean-square Euclidean error about `tol`; returns the
    /// result and the work spent.
    fn apply(&mut self, v: &[f64], tol: f64, step: usize) -> Result<(Vec<f64>, u64)>;

    /// Start vector of unit Euclidean norm.
    fn start_vector(&self) -> Vec<f64> {
        let n = self.dim();
        vec![1.0 / (n as f64).sqrt(); n]
    }
}

/// Exact multiplication by a fixed matrix.
pub struct MatrixOperator(pub DMatrix<f64>);

impl InverseOperator for MatrixOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&mut self, v: &[f64], _tol: f64, _step: usize) -> Result<(Vec<f64>, u64)> {
        Ok(((&self.0 * DVector::from_column_slice(v)).as_slice().to_vec(), 0))
    }
}

/// `A⁻¹v`: a multilevel solve with `g = 0` and source the piecewise-linear
/// interpolant of `v` on the finest level.
pub fn apply_inverse(
    v: &FieldVector,
    alpha: f64,
    hier: &Arc<MeshHierarchy>,
    coarsest: usize,
    rms_tol: f64,
    seed: u64,
) -> Result<(FieldVector, u64)> {
    let finest = hier.finest_level();
    if v.level != finest || v.len() != hier.finest().vertex_count() {
        return Err(Error::LevelMismatch {
            expected: finest,
            found: v.level,
        });
    }
    if v.values.iter().all(|x| *x == 0.0) {
        return Ok((hier.finest().zero_field(), 0));
    }
    let values = Arc::new(v.values.clone());
    let mesh_owner = Arc::clone(hier);
    let source = ScalarField::from_fn(move |p| {
        mesh_owner
            .finest()
            .interpolate_values(&values, p)
            .unwrap_or(0.0)
    });
    let problem = Problem::new(
        "inverse",
        alpha,
        hier.domain().clone(),
        source,
        ScalarField::Constant(0.0),
        None,
    )?;
    let cfg = MlmcConfig::new(rms_tol, coarsest, finest, seed).fixed();
    let result = mlmc::run(hier, &problem, &cfg)?;
    Ok((result.solution, result.total_cost))
}

/// Walk-outside-spheres inverse of the fractional Laplacian on the finest
/// level of a hierarchy.
pub struct WosInverse {
    hier: Arc<MeshHierarchy>,
    alpha: f64,
    coarsest: usize,
    seed: u64,
    /// Converts a Euclidean vertex-vector tolerance into an L²(D) one.
    euclid_to_l2: f64,
}

impl WosInverse {
    pub fn new(hier: Arc<MeshHierarchy>, alpha: f64, coarsest: usize, seed: u64) -> Result<Self> {
        crate::sampling::StableParams::new(alpha)?;
        hier.level(coarsest)?;
        let mesh = hier.finest();
        let interior = mesh.interior_count().max(1) as f64;
        let euclid_to_l2 = (mesh.area(NormMask::Domain) / interior).sqrt();
        Ok(Self {
            hier,
            alpha,
            coarsest,
            seed,
            euclid_to_l2,
        })
    }

    pub fn hierarchy(&self) -> &Arc<MeshHierarchy> {
        &self.hier
    }

    /// L²(D) tolerance handed to the field solver for Euclidean `tol`.
    pub fn l2_tolerance(&self, tol: f64) -> f64 {
        tol * self.euclid_to_l2
    }
}

impl InverseOperator for WosInverse {
    fn dim(&self) -> usize {
        self.hier.finest().vertex_count()
    }

    fn apply(&mut self, v: &[f64], tol: f64, step: usize) -> Result<(Vec<f64>, u64)> {
        let field = FieldVector::new(self.hier.finest_level(), v.to_vec());
        let seed = self.seed ^ (step as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let (u, cost) = apply_inverse(
            &field,
            self.alpha,
            &self.hier,
            self.coarsest,
            self.l2_tolerance(tol),
            seed,
        )?;
        Ok((u.values, cost))
    }

    /// Normalized indicator of the interior vertices.
    fn start_vector(&self) -> Vec<f64> {
        let mask = self.hier.finest().interior_mask();
        let n = mask.iter().filter(|b| **b).count().max(1) as f64;
        mask.iter()
            .map(|&inside| if inside { 1.0 / n.sqrt() } else { 0.0 })
            .collect()
    }
}

/// Eigenvalues of a small dense matrix, sorted by decreasing real part.
fn ritz_values(h: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let mut ev: Vec<(f64, f64)> = h
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect();
    ev.sort_by(|a, b| b.0.total_cmp(&a.0));
    ev
}

/// Distance from the leading Ritz value of `h` to the nearest other one.
pub fn spectral_gap(h: &DMatrix<f64>) -> Result<f64> {
    if h.nrows() < 2 {
        return Err(Error::NoSpectralGap);
    }
    let ev = ritz_values(h);
    let lead = ev[0];
    Ok(ev[1..]
        .iter()
        .map(|z| (z.0 - lead.0).hypot(z.1 - lead.1))
        .fold(f64::INFINITY, f64::min))
}

/// Solve tolerance for step `k`: `(tol/(B·m))·min(max(gap/r, 1), cap)` when
/// a gap is known, else the base `tol/(B·m)`. The flag reports whether the
/// cap was active.
pub fn wos_tolerance(
    tol: f64,
    safety: f64,
    m: usize,
    gap: Option<f64>,
    r_prev: f64,
    cap: f64,
) -> (f64, bool) {
    let base = tol / (safety * m as f64);
    match gap {
        Some(g) if r_prev > 0.0 => {
            let ratio = (g / r_prev).max(1.0);
            (base * ratio.min(cap), ratio > cap)
        }
        Some(_) => (base * cap, true),
        None => (base, false),
    }
}

/// One row of the iteration log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub theta: f64,
    pub lambda: f64,
    pub residual: f64,
    /// Gap of the previous Hessenberg matrix used for the tolerance.
    pub gap: Option<f64>,
    pub wos_tol: f64,
    pub relax_capped: bool,
    pub cost: u64,
}

/// Tolerance policy for the inner solves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TolerancePolicy {
    /// Relax by `gap/residual` up to the cap.
    Relaxed { cap: f64 },
    /// Always `tol/(B·m)`.
    Fixed,
}

#[derive(Clone, Debug)]
pub struct ArnoldiState {
    basis: Vec<Vec<f64>>,
    /// Columns of the Hessenberg matrix; column `j` has `j + 2` entries.
    columns: Vec<Vec<f64>>,
    pub residual_history: Vec<f64>,
    pub theta: f64,
    pub w: Vec<f64>,
    pub m: usize,
    pub tol: f64,
    pub safety: f64,
    pub policy: TolerancePolicy,
    pub records: Vec<StepRecord>,
    pub breakdown: bool,
}

impl ArnoldiState {
    pub fn new(start: Vec<f64>, m: usize, tol: f64, safety: f64, policy: TolerancePolicy) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 Arnoldi steps, got {m}")));
        }
        if !(tol > 0.0) || !(safety > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need tol > 0 and B > 1, got tol={tol}, B={safety}"
            )));
        }
        let norm = start.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::InvalidArgument("start vector is zero".into()));
        }
        Ok(Self {
            basis: vec![start.iter().map(|x| x / norm).collect()],
            columns: Vec::new(),
            residual_history: Vec::new(),
            theta: f64::NAN,
            w: Vec::new(),
            m,
            tol,
            safety,
            policy,
            records: Vec::new(),
            breakdown: false,
        })
    }

    pub fn steps(&self) -> usize {
        self.columns.len()
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    /// The leading `rows × cols` block of the Hessenberg matrix.
    pub fn hessenberg(&self, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |i, j| {
            self.columns.get(j).and_then(|c| c.get(i)).copied().unwrap_or(0.0)
        })
    }

    /// `h_{k+1,k}` of the latest step.
    pub fn subdiagonal(&self) -> f64 {
        self.columns.last().map_or(0.0, |c| c[c.len() - 1])
    }

    pub fn lambda(&self) -> f64 {
        1.0 / self.theta
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One Arnoldi step: inexact application, classical Gram–Schmidt with one
/// reorthogonalization pass, Ritz update and residual proxy.
pub fn arnoldi_step(state: &mut ArnoldiState, op: &mut dyn InverseOperator) -> Result<()> {
    if state.breakdown {
        return Ok(());
    }
    let k = state.steps() + 1;
    let gap = if k >= 3 {
        Some(spectral_gap(&state.hessenberg(k - 1, k - 1))?)
    } else {
        None
    };
    let r_prev = state.residual_history.last().copied().unwrap_or(f64::INFINITY);
    let (wos_tol, capped) = match state.policy {
        TolerancePolicy::Relaxed { cap } => {
            wos_tolerance(state.tol, state.safety, state.m, gap, r_prev, cap)
        }
        TolerancePolicy::Fixed => wos_tolerance(state.tol, state.safety, state.m, None, r_prev, 1.0),
    };

    let (mut u, cost) = op.apply(&state.basis[k - 1], wos_tol, k)?;
    let mut h = vec![0.0; k + 1];
    for _ in 0..2 {
        let coeffs: Vec<f64> = state.basis.iter().map(|v| dot(v, &u)).collect();
        for (v, c) in state.basis.iter().zip(&coeffs) {
            u.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
        }
        h.iter_mut().zip(&coeffs).for_each(|(a, c)| *a += c);
    }
    let norm = dot(&u, &u).sqrt();
    h[k] = norm;
    state.columns.push(h);
    if norm < BREAKDOWN {
        state.breakdown = true;
        state.columns.last_mut().expect("just pushed")[k] = 0.0;
    } else {
        state.basis.push(u.iter().map(|x| x / norm).collect());
    }

    let hk = state.hessenberg(k, k);
    let ev = ritz_values(&hk);
    let (re, im) = ev[0];
    if im.abs() > COMPLEX_TOLERANCE * re.abs().max(1.0) {
        return Err(Error::ComplexRitzValue { re, im });
    }
    let w = leading_vector(&hk, re);
    let residual = state.subdiagonal() * w[k - 1].abs();
    state.theta = re;
    state.w = w;
    state.residual_history.push(residual);
    state.records.push(StepRecord {
        k,
        theta: re,
        lambda: 1.0 / re,
        residual,
        gap,
        wos_tol,
        relax_capped: capped,
        cost,
    });
    Ok(())
}

/// Unit null vector of `H − θI`, from the smallest singular value.
fn leading_vector(h: &DMatrix<f64>, theta: f64) -> Vec<f64> {
    let n = h.nrows();
    if n == 1 {
        return vec![1.0];
    }
    let shifted = h - DMatrix::identity(n, n) * theta;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let row = v_t.row(idx);
    let norm = row.norm();
    row.iter().map(|x| x / norm).collect()
}

#[derive(Clone, Debug)]
pub struct EigenResult {
    pub lambda: f64,
    pub theta: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub records: Vec<StepRecord>,
    pub total_cost: u64,
    pub state: ArnoldiState,
}

/// `m` Arnoldi steps on `op` from its start vector; `λ = 1/θ` of the leading
/// Ritz pair.
pub fn smallest_eigenvalue(
    op: &mut dyn InverseOperator,
    tol: f64,
    safety: f64,
    m: usize,
    policy: TolerancePolicy,
) -> Result<EigenResult> {
    let mut state = ArnoldiState::new(op.start_vector(), m, tol, safety, policy)?;
    while state.steps() < m && !state.breakdown {
        arnoldi_step(&mut state, op)?;
        log::info!(
            "arnoldi step {}: lambda = {:.6}, residual = {:.3e}",
            state.steps(),
            state.lambda(),
            state.residual_history.last().copied().unwrap_or(f64::NAN)
        );
    }
    let residual = *state.residual_history.last().expect("at least one step");
    if residual > tol {
        log::warn!("Arnoldi residual {residual:.3e} exceeds tol {tol:.3e} after {} steps", state.steps());
    }
    Ok(EigenResult {
        lambda: state.lambda(),
        theta: state.theta,
        residual,
        iterations: state.steps(),
        converged: residual <= tol,
        total_cost: state.records.iter().map(|r| r.cost).sum(),
        records: state.records.clone(),
        state,
    })
}

/// Per-iteration CSV: `k,theta,lambda,residual,gap,wos_tol,cost`.
pub fn write_iterations<W: Write>(out: &mut W, records: &[StepRecord]) -> Result<()> {
    writeln!(out, "k,theta,lambda,residual,gap,wos_tol,cost")?;
    for r in records {
        let gap = r.gap.map_or(String::new(), |g| g.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.k, r.theta, r.lambda, r.residual, gap, r.wos_tol, r.cost
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gap_examples() {
        let d = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
        assert!((spectral_gap(&d(&[3.0, 1.0, 0.5])).unwrap() - 2.0).abs() < 1e-12);
        assert!((spectral_gap(&d(&[5.0, 5.0 - 1e-9])).unwrap() - 1e-9).abs() < 1e-15);
        assert!((spectral_gap(&d(&[2.0, 1.0])).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(spectral_gap(&d(&[2.0])), Err(Error::NoSpectralGap)));
    }

    #[test]
    fn tolerance_examples() {
        let (t, _) = wos_tolerance(0.01, 3.0, 5, None, 1.0, DEFAULT_RELAX_CAP);
        assert!((t - 0.01 / 15.0).abs() < 1e-15);
        let (t, capped) = wos_tolerance(0.01, 3.0, 5, Some(2.0), 0.5, DEFAULT_RELAX_CAP);
        assert!((t - 0.04 / 15.0).abs() < 1e-15 && !capped);
        let (t, _) = wos_tolerance(0.01, 3.0, 5, Some(0.1), 0.5, DEFAULT_RELAX_CAP);
        assert!((t - 0.01 / 15.0).abs() < 1e-15);
        let (t, capped) = wos_tolerance(0.01, 3.0, 5, Some(1.0), 1e-6, DEFAULT_RELAX_CAP);
        assert!((t - 1.0 / 15.0).abs() < 1e-15 && capped);
        // relaxation never decreases as the residual shrinks under a fixed gap
        let mut prev = 0.0;
        for r in [1.0, 0.5, 0.1, 0.01, 1e-4] {
            let (t, _) = wos_tolerance(0.01, 3.0, 5, Some(0.3), r, DEFAULT_RELAX_CAP);
            assert!(t >= prev);
            prev = t;
        }
    }

    fn diag_inverse(n: usize) -> MatrixOperator {
        MatrixOperator(DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / (i + 1) as f64 } else { 0.0 }))
    }

    #[test]
    fn diagonal_stub_recovers_leading_value() {
        let mut op = diag_inverse(6);
        let r = smallest_eigenvalue(&mut op, 1e-8, 3.0, 6, TolerancePolicy::Relaxed { cap: 100.0 }).unwrap();
        assert!((r.theta - 1.0).abs() < 1e-10);
        assert!((r.lambda - 1.0).abs() < 1e-10);
        assert!(r.residual < 1e-10);
    }

    #[test]
    fn breakdown_gives_zero_residual() {
        let mut op = MatrixOperator(DMatrix::identity(4, 4) * 2.0);
        let r = smallest_eigenvalue(&mut op, 1e-3, 3.0, 4, TolerancePolicy::Fixed).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.residual, 0.0);
        assert!((r.lambda - 0.5).abs() < 1e-14);
    }

    #[test]
    fn zero_vector_maps_to_zero() {
        let hier = Arc::new(MeshHierarchy::unit_ball(3).unwrap());
        let v = hier.finest().zero_field();
        let (u, cost) = apply_inverse(&v, 1.0, &hier, 2, 1e-2, 1).unwrap();
        assert!(u.values.iter().all(|x| *x == 0.0));
        assert_eq!(cost, 0);
    }

    #[test]
    fn ones_reproduce_the_exit_time() {
        let hier = Arc::new(MeshHierarchy::unit_ball(4).unwrap());
        let mesh = hier.finest();
        let ones = mesh.sample(|_| 1.0);
        let (u, _) = apply_inverse(&ones, 1.0, &hier, 2, 5e-3, 4).unwrap();
        let exact = crate::problems::example1(1.0).unwrap().exact.unwrap();
        let err = crate::mlmc::error_vs_exact(&u, &exact, mesh).unwrap();
        assert!(err.relative().unwrap() < 0.03, "{err:?}");
    }

    #[test]
    fn inverse_is_linear_in_the_source() {
        let hier = Arc::new(MeshHierarchy::unit_ball(4).unwrap());
        let mesh = hier.finest();
        let v = mesh.sample(|p| 1.0 + p.x);
        let mut v2 = v.clone();
        v2.scale(2.0);
        // identical seeds drive identical walks, so linearity is exact up to roundoff
        let (a, _) = apply_inverse(&v, 1.0, &hier, 2, 2e-2, 9).unwrap();
        let (b, _) = apply_inverse(&v2, 1.0, &hier, 2, 2e-2, 9).unwrap();
        let mut diff = b.clone();
        diff.axpy(-2.0, &a).unwrap();
        let rel = mesh.l2_norm(&diff, NormMask::Domain).unwrap() / mesh.l2_norm(&b, NormMask::Domain).unwrap();
        assert!(rel < 0.05, "{rel}");
    }

    #[test]
    fn iteration_csv_layout() {
        let mut op = diag_inverse(5);
        let r = smallest_eigenvalue(&mut op, 1e-6, 3.0, 3, TolerancePolicy::Relaxed { cap: 100.0 }).unwrap();
        let mut buf = Vec::new();
        write_iterations(&mut buf, &r.records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,theta,lambda,residual,gap,wos_tol,cost");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1,"));
        assert_eq!(lines[3].split(',').count(), 7);
    }

    fn symmetric(n: usize, entries: &[f64]) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |i, j| entries[(i * n + j) % entries.len()]);
        // positive definite so the leading Ritz value is real and simple
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn stub_matches_dense_eigensolve(entries in proptest::collection::vec(-1.0..1.0f64, 49)) {
            let a = symmetric(7, &entries);
            let oracle = a.clone().symmetric_eigen().eigenvalues.max();
            let mut op = MatrixOperator(a);
            let mut state = ArnoldiState::new(op.start_vector(), 7, 1e-10, 3.0, TolerancePolicy::Fixed).unwrap();
            while state.steps() < 7 && !state.breakdown {
                arnoldi_step(&mut state, &mut op).unwrap();
                let k = state.steps();
                for (i, v) in state.basis().iter().enumerate() {
                    prop_assert!((dot(v, v) - 1.0).abs() < 1e-12);
                    for u in &state.basis()[..i] {
                        prop_assert!(dot(u, v).abs() < 1e-10);
                    }
                }
                let h = state.hessenberg(k + 1, k);
                let recomputed = h[(k, k - 1)] * state.w[k - 1].abs();
                prop_assert_eq!(recomputed, *state.residual_history.last().unwrap());
            }
            prop_assert!((state.theta - oracle).abs() < 1e-8 * oracle.max(1.0));
        }
    }
}
