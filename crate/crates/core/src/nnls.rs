//! Factor updates for the subproblem `min_{X >= 0} ||A X - B||_F`.
//!
//! Every updater works from the same two small inputs: the `R x R` matrix
//! `S = A^T A` (the Hadamard product of the other modes' Gram matrices) and
//! the local rows of `M = (A^T B)^T` (the MTTKRP result). Rows of the factor
//! are independent NNLS problems, so a worker only ever touches its own rows.
//! Algorithms that need a global quantity (column norms, stopping tests) get
//! it through a [`ReduceHook`], which is the identity in sequential runs and
//! an All-Reduce over every worker in parallel runs.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::{FactorSet, GramMatrix, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Min,
    Max,
}

impl ReduceOp {
    pub fn apply(self, acc: f64, v: f64) -> f64 {
        match self {
            ReduceOp::Sum => acc + v,
            ReduceOp::Min => acc.min(v),
            ReduceOp::Max => acc.max(v),
        }
    }
}

/// Global reduction over the workers that share a factor's rows.
pub trait ReduceHook {
    /// Replaces `values` with their elementwise reduction across workers.
    fn reduce(&mut self, values: &mut [f64], op: ReduceOp) -> Result<()>;
}

/// Single-worker hook: every reduction is over one contributor.
#[derive(Debug, Default, Clone, Copy)]
pub struct LocalReduce;

impl ReduceHook for LocalReduce {
    fn reduce(&mut self, _values: &mut [f64], _op: ReduceOp) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Unconstrained CP (plain least squares).
    Ucp,
    /// Multiplicative update.
    Mu,
    /// Hierarchical alternating least squares.
    Hals,
    /// Block principal pivoting.
    Bpp,
    Admm,
    /// Nesterov-type accelerated projected gradient.
    Nesterov,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Ucp,
        Algorithm::Mu,
        Algorithm::Hals,
        Algorithm::Bpp,
        Algorithm::Admm,
        Algorithm::Nesterov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ucp => "ucp",
            Algorithm::Mu => "mu",
            Algorithm::Hals => "hals",
            Algorithm::Bpp => "bpp",
            Algorithm::Admm => "admm",
            Algorithm::Nesterov => "nes",
        }
    }

    pub fn is_constrained(self) -> bool {
        self != Algorithm::Ucp
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm `{}`", s)))
    }
}

/// Tunables shared by the updaters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Added to the multiplicative-update denominator.
    pub mu_epsilon: f64,
    /// ADMM step size; `None` uses `trace(S) / R`.
    pub admm_rho: Option<f64>,
    pub admm_max_inner: usize,
    pub admm_tol: f64,
    pub nesterov_max_inner: usize,
    pub nesterov_tol: f64,
    /// Lower bound on `(mu + lambda) / (L + lambda)` when picking the proximal weight.
    pub nesterov_q_min: f64,
    /// BPP iteration cap per column is `bpp_iter_factor * R`.
    pub bpp_iter_factor: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            mu_epsilon: 1e-16,
            admm_rho: None,
            admm_max_inner: 5,
            admm_tol: 1e-4,
            nesterov_max_inner: 20,
            nesterov_tol: 1e-8,
            nesterov_q_min: 1e-6,
            bpp_iter_factor: 5,
        }
    }
}

/// Inner-iteration counts of the iterative updaters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InnerStats {
    pub calls: u64,
    pub last_inner: usize,
    pub max_inner: usize,
    pub total_inner: u64,
}

impl InnerStats {
    fn record(&mut self, inner: usize) {
        self.calls += 1;
        self.last_inner = inner;
        self.max_inner = self.max_inner.max(inner);
        self.total_inner += inner as u64;
    }
}

/// Per-mode updater state.
#[derive(Debug, Clone)]
pub struct UpdaterState {
    pub algorithm: Algorithm,
    pub hyper: Hyperparams,
    /// Scaled ADMM dual `U`, zero until the first update.
    pub admm_dual: Option<Matrix>,
    pub stats: InnerStats,
}

impl UpdaterState {
    pub fn new(algorithm: Algorithm, hyper: Hyperparams) -> Self {
        Self { algorithm, hyper, admm_dual: None, stats: InnerStats::default() }
    }

    /// Multiplies the columns of the stored dual by `weights` (or divides,
    /// skipping zero weights), keeping it in the same units as the factor.
    pub fn rescale_dual(&mut self, weights: &[f64], inverse: bool) {
        if let Some(u) = self.admm_dual.as_mut() {
            for (mut col, &w) in u.column_iter_mut().zip(weights) {
                if inverse {
                    if w > 0.0 {
                        col /= w;
                    }
                } else {
                    col *= w;
                }
            }
        }
    }
}

/// The shared inputs of every updater.
#[derive(Debug, Clone, Copy)]
pub struct UpdateInputs<'a> {
    pub gram: &'a GramMatrix,
    pub mttkrp_rows: &'a Matrix,
    pub current: &'a Matrix,
}

impl<'a> UpdateInputs<'a> {
    pub fn new(gram: &'a GramMatrix, mttkrp_rows: &'a Matrix, current: &'a Matrix) -> Result<Self> {
        let r = gram.nrows();
        if gram.ncols() != r {
            return Err(Error::DimMismatch(format!("gram is {}x{}", r, gram.ncols())));
        }
        if mttkrp_rows.ncols() != r || current.ncols() != r {
            return Err(Error::RankMismatch {
                expected: r,
                found: if mttkrp_rows.ncols() != r { mttkrp_rows.ncols() } else { current.ncols() },
            });
        }
        if mttkrp_rows.nrows() != current.nrows() {
            return Err(Error::DimMismatch(format!(
                "MTTKRP has {} rows, factor has {}",
                mttkrp_rows.nrows(),
                current.nrows()
            )));
        }
        Ok(Self { gram, mttkrp_rows, current })
    }

    fn rank(&self) -> usize {
        self.gram.nrows()
    }
}

/// Result of one factor update. `weights` is set when the updater already
/// normalized the columns (HALS); the factor is then unit-column.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutput {
    pub factor: Matrix,
    pub weights: Option<Vec<f64>>,
}

/// Runs the updater selected by `state.algorithm`.
pub fn nnls_update(
    inputs: UpdateInputs<'_>,
    state: &mut UpdaterState,
    hook: &mut dyn ReduceHook,
) -> Result<UpdateOutput> {
    let plain = |factor| UpdateOutput { factor, weights: None };
    match state.algorithm {
        Algorithm::Ucp => ucp_update(inputs).map(plain),
        Algorithm::Mu => Ok(plain(mu_update(inputs, state.hyper.mu_epsilon))),
        Algorithm::Hals => {
            let (factor, weights) = hals_update(inputs, hook)?;
            Ok(UpdateOutput { factor, weights: Some(weights) })
        }
        Algorithm::Bpp => bpp_update_capped(inputs, state.hyper.bpp_iter_factor).map(plain),
        Algorithm::Admm => admm_update(inputs, state, hook).map(plain),
        Algorithm::Nesterov => nesterov_update(inputs, state, hook).map(plain),
    }
}

/// Solves `H S = M` for `H` (S symmetric), Cholesky first, pseudo-inverse
/// if the system is numerically singular.
fn solve_right(s: &Matrix, m: &Matrix) -> Option<Matrix> {
    let chol = s.clone().cholesky()?;
    Some(chol.solve(&m.transpose()).transpose())
}

fn pinv_solve_right(s: &Matrix, m: &Matrix) -> Matrix {
    let svd = s.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    match svd.solve(&m.transpose(), tol) {
        Ok(x) => x.transpose(),
        Err(_) => Matrix::zeros(m.nrows(), m.ncols()),
    }
}

/// Unconstrained least squares: `H = M S^{-1}`.
pub fn ucp_update(inputs: UpdateInputs<'_>) -> Result<Matrix> {
    let s = inputs.gram;
    let m = inputs.mttkrp_rows;
    if let Some(h) = solve_right(s, m) {
        return Ok(h);
    }
    let r = inputs.rank();
    let ridge = 1e-12 * s.trace() / r as f64;
    warn!("singular Gram in UCP update; adding ridge {:e}", ridge);
    let shifted = s + Matrix::identity(r, r) * ridge;
    Ok(solve_right(&shifted, m).unwrap_or_else(|| pinv_solve_right(s, m)))
}

/// Multiplicative update `H <- H * M / (H S + eps)`, elementwise.
pub fn mu_update(inputs: UpdateInputs<'_>, epsilon: f64) -> Matrix {
    let denom = inputs.current * inputs.gram;
    let mut out = inputs.current.clone();
    for ((h, &num), &den) in out.iter_mut().zip(inputs.mttkrp_rows.iter()).zip(denom.iter()) {
        *h *= num.max(0.0) / (den + epsilon);
    }
    out
}

/// One HALS column step on the working matrix, Gauss-Seidel style:
/// `h_r <- [h_r + (m_r - H s_r) / S_rr]_+`. Returns `false` when the
/// diagonal entry is not positive and the column was left alone.
pub fn hals_column_step(work: &mut Matrix, gram: &Matrix, mttkrp: &Matrix, r: usize) -> bool {
    let d = gram[(r, r)];
    if d <= 0.0 {
        return false;
    }
    let hs = &*work * gram.column(r);
    for i in 0..work.nrows() {
        let v = work[(i, r)] + (mttkrp[(i, r)] - hs[i]) / d;
        work[(i, r)] = v.max(0.0);
    }
    true
}

/// HALS sweep over the columns in ascending order. Each updated column's
/// global 2-norm is reduced through `hook` right after its update; the
/// returned factor is column-normalized and the norms are returned as weights.
pub fn hals_update(inputs: UpdateInputs<'_>, hook: &mut dyn ReduceHook) -> Result<(Matrix, Vec<f64>)> {
    let r = inputs.rank();
    let mut work = inputs.current.clone();
    let mut weights = vec![0.0; r];
    for c in 0..r {
        if !hals_column_step(&mut work, inputs.gram, inputs.mttkrp_rows, c) {
            warn!("HALS: zero Gram diagonal for column {}, column left unchanged", c);
        }
        let mut sq = [work.column(c).iter().map(|v| v * v).sum::<f64>()];
        hook.reduce(&mut sq, ReduceOp::Sum)?;
        weights[c] = sq[0].sqrt();
    }
    let mut out = work;
    crate::tensor::scale_columns_by_inverse(&mut out, &weights);
    Ok((out, weights))
}

/// Exact NNLS by block principal pivoting, row by row.
pub fn bpp_update(inputs: UpdateInputs<'_>) -> Result<Matrix> {
    bpp_update_capped(inputs, Hyperparams::default().bpp_iter_factor)
}

fn bpp_update_capped(inputs: UpdateInputs<'_>, iter_factor: usize) -> Result<Matrix> {
    let r = inputs.rank();
    let cap = (iter_factor * r).max(1);
    let mut out = Matrix::zeros(inputs.current.nrows(), r);
    for i in 0..inputs.current.nrows() {
        let b: DVector<f64> = inputs.mttkrp_rows.row(i).transpose();
        let x = bpp_solve(inputs.gram, &b, cap).map_err(|iterations| Error::BppCycling { column: i, iterations })?;
        out.row_mut(i).copy_from(&x.transpose());
    }
    Ok(out)
}

/// Solves `S_FF x_F = b_F` on the passive set, zero elsewhere.
fn passive_solve(s: &Matrix, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&k| passive[k]).collect();
    let mut x = DVector::zeros(passive.len());
    if idx.is_empty() {
        return x;
    }
    let k = idx.len();
    let sff = Matrix::from_fn(k, k, |a, c| s[(idx[a], idx[c])]);
    let bf = DVector::from_fn(k, |a, _| b[idx[a]]);
    let xf = match sff.clone().cholesky() {
        Some(ch) => ch.solve(&bf),
        None => {
            let svd = sff.svd(true, true);
            let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
            svd.solve(&bf, tol).unwrap_or_else(|_| DVector::zeros(k))
        }
    };
    for (a, &j) in idx.iter().enumerate() {
        x[j] = xf[a];
    }
    x
}

/// Single right-hand side block principal pivoting. `Err` carries the
/// iteration count when the cap is hit.
fn bpp_solve(s: &Matrix, b: &DVector<f64>, cap: usize) -> std::result::Result<DVector<f64>, usize> {
    let n = b.len();
    let scale = b.amax().max(s.diagonal().amax()).max(1.0);
    let tol = 1e-14 * scale;
    let mut passive = vec![false; n];
    let mut best_infeasible = n + 1;
    let mut backup = 3usize;
    for _ in 0..cap {
        let x = passive_solve(s, b, &passive);
        let y = s * &x - b;
        let violations: Vec<usize> = (0..n)
            .filter(|&k| if passive[k] { x[k] < -tol } else { y[k] < -tol })
            .collect();
        if violations.is_empty() {
            return Ok(x.map(|v| v.max(0.0)));
        }
        if violations.len() < best_infeasible {
            best_infeasible = violations.len();
            backup = 3;
            for &k in &violations {
                passive[k] = !passive[k];
            }
        } else if backup >= 1 {
            backup -= 1;
            for &k in &violations {
                passive[k] = !passive[k];
            }
        } else {
            let k = *violations.last().expect("non-empty");
            passive[k] = !passive[k];
        }
    }
    Err(cap)
}

/// Default ADMM step size `||A||_F^2 / R = trace(S) / R`.
pub fn admm_default_rho(gram: &Matrix) -> f64 {
    gram.trace() / gram.nrows() as f64
}

/// ADMM with the dual kept in `state`; at most `admm_max_inner` steps.
pub fn admm_update(
    inputs: UpdateInputs<'_>,
    state: &mut UpdaterState,
    hook: &mut dyn ReduceHook,
) -> Result<Matrix> {
    let r = inputs.rank();
    let rows = inputs.current.nrows();
    let mut rho = state.hyper.admm_rho.unwrap_or_else(|| admm_default_rho(inputs.gram));
    if !(rho > 0.0) {
        rho = 1.0;
    }
    let shifted = inputs.gram + Matrix::identity(r, r) * rho;
    // S + rho I is SPD for rho > 0 and a PSD Gram.
    let chol = shifted
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidConfig("S + rho I is not positive definite".into()))?;
    let mut u = match state.admm_dual.take() {
        Some(u) if u.shape() == (rows, r) => u,
        _ => Matrix::zeros(rows, r),
    };
    let mut h = inputs.current.clone();
    let tol = state.hyper.admm_tol;
    let mut steps = 0;
    for _ in 0..state.hyper.admm_max_inner {
        steps += 1;
        let prev = h.clone();
        let rhs = inputs.mttkrp_rows + (&h + &u) * rho;
        let h_aux = chol.solve(&rhs.transpose()).transpose();
        h = (&h_aux - &u).map(|v| v.max(0.0));
        u += &h - &h_aux;

        let mut norms = [
            (&h - &h_aux).norm_squared(),
            h.norm_squared(),
            h_aux.norm_squared(),
            (&h - &prev).norm_squared(),
            u.norm_squared(),
        ];
        hook.reduce(&mut norms, ReduceOp::Sum)?;
        let [primal, h_norm, aux_norm, change, dual] = norms.map(f64::sqrt);
        if primal <= tol * h_norm.max(aux_norm) && rho * change <= tol * dual * rho {
            break;
        }
    }
    state.admm_dual = Some(u);
    state.stats.record(steps);
    Ok(h)
}

/// Step parameters of the accelerated inner loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NesterovHyper {
    pub prox: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NesterovHyper {
    /// `L = lambda_max(S)`, `mu = lambda_min(S)`; the proximal weight is the
    /// smallest one giving `q = (mu + prox) / (L + prox) >= q_min`.
    pub fn from_gram(gram: &Matrix, q_min: f64) -> Self {
        let eig = SymmetricEigen::new(gram.clone());
        let l = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
        let mu = eig.eigenvalues.min().max(0.0);
        let prox = ((q_min * l - mu) / (1.0 - q_min)).max(0.0);
        let q = ((mu + prox) / (l + prox)).min(1.0);
        let sq = q.sqrt();
        Self { prox, alpha: 1.0 / (l + prox), beta: (1.0 - sq) / (1.0 + sq) }
    }
}

/// Accelerated projected gradient on the proximal objective with
/// `X_* = inputs.current`. Returns the iterate and the number of steps.
pub fn nesterov_inner(
    inputs: UpdateInputs<'_>,
    hyper: NesterovHyper,
    max_inner: usize,
    tol: f64,
    hook: &mut dyn ReduceHook,
) -> Result<(Matrix, usize)> {
    let anchor = inputs.current;
    let mut x = anchor.clone();
    let mut y = anchor.clone();
    let mut steps = 0;
    for _ in 0..max_inner {
        steps += 1;
        let grad = &y * inputs.gram - inputs.mttkrp_rows + (&y - anchor) * hyper.prox;
        let next = (&y - grad * hyper.alpha).map(|v| v.max(0.0));
        let mut probe = [(&next - &x).amax(), next.amax()];
        hook.reduce(&mut probe, ReduceOp::Max)?;
        y = &next + (&next - &x) * hyper.beta;
        x = next;
        if probe[0] <= tol * (1.0 + probe[1]) {
            break;
        }
    }
    Ok((x, steps))
}

pub fn nesterov_update(
    inputs: UpdateInputs<'_>,
    state: &mut UpdaterState,
    hook: &mut dyn ReduceHook,
) -> Result<Matrix> {
    let hyper = NesterovHyper::from_gram(inputs.gram, state.hyper.nesterov_q_min);
    let (x, steps) = nesterov_inner(
        inputs,
        hyper,
        state.hyper.nesterov_max_inner,
        state.hyper.nesterov_tol,
        hook,
    )?;
    state.stats.record(steps);
    Ok(x)
}

/// Outer extrapolation weight `s_i = i^(1/N)`.
pub fn acceleration_step(iter: usize, order: usize) -> f64 {
    (iter as f64).powf(1.0 / order as f64)
}

/// `[cur + s (cur - prev)]_+`.
pub fn extrapolate(cur: &Matrix, prev: &Matrix, step: f64) -> Matrix {
    cur.zip_map(prev, |c, p| (c + step * (c - p)).max(0.0))
}

/// Outer acceleration: extrapolates every factor (weights folded into the
/// last mode) and keeps the candidate only if its error is strictly below
/// `cur_error`, the error of `cur`. The candidate comes back with unit
/// weights and unnormalized columns.
pub fn nesterov_outer_accelerate(
    prev: &FactorSet,
    cur: &FactorSet,
    iter: usize,
    cur_error: f64,
    mut error_fn: impl FnMut(&FactorSet) -> Result<f64>,
) -> Result<(FactorSet, bool)> {
    if prev.dims() != cur.dims() || prev.rank() != cur.rank() {
        return Err(Error::DimMismatch("previous and current models differ in shape".into()));
    }
    let order = cur.order();
    let step = acceleration_step(iter, order);
    let mut factors = Vec::with_capacity(order);
    for n in 0..order {
        let c = if n + 1 == order {
            extrapolate(
                &crate::tensor::scale_columns(&cur.factors[n], &cur.lambda),
                &crate::tensor::scale_columns(&prev.factors[n], &prev.lambda),
                step,
            )
        } else {
            extrapolate(&cur.factors[n], &prev.factors[n], step)
        };
        factors.push(c);
    }
    let candidate = FactorSet::with_unit_weights(factors)?;
    if error_fn(&candidate)? < cur_error {
        Ok((candidate, true))
    } else {
        Ok((cur.clone(), false))
    }
}
