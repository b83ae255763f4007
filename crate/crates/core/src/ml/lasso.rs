//! Lasso by cyclic coordinate descent on precomputed cross-moments.
//!
//! Minimizes `(1/2n)·Σ(y − β0 − xβ)² + λ·Σ|β_j|` with columns standardized
//! to mean zero and unit variance and an unpenalized intercept. All fits
//! run off raw sums (X'X, X'y, column sums), so cross-validation folds are
//! obtained by subtracting a fold's moments from the full-sample ones
//! instead of refitting from rows, and a whole penalty path costs little
//! more than one Gram matrix.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::{Error, Result};

/// Coordinate-descent stopping rule: largest coefficient change per sweep.
pub const CONVERGENCE_TOL: f64 = 1e-7;
/// Sweep budget per fit.
pub const MAX_SWEEPS: usize = 10_000;
/// Sweep budget per grid point inside cross-validation paths, where
/// near-singular fits (p close to or above n at tiny penalties) would
/// otherwise crawl to the full budget without changing the selection.
pub const PATH_MAX_SWEEPS: usize = 500;
/// Penalty grid resolution for cross-validated selection.
pub const LAMBDA_GRID_POINTS: usize = 50;
/// Smallest grid penalty as a fraction of `lambda_max`.
pub const LAMBDA_MIN_RATIO: f64 = 1e-3;

/// Column-major feature matrix.
pub(crate) struct ColMat {
    pub n: usize,
    pub p: usize,
    data: Vec<f64>,
}

impl ColMat {
    pub fn zeros(n: usize, p: usize) -> Self {
        ColMat {
            n,
            p,
            data: vec![0.0; n * p],
        }
    }

    pub fn from_view(a: ArrayView2<'_, f64>) -> Self {
        let (n, p) = (a.nrows(), a.ncols());
        let mut m = ColMat::zeros(n, p);
        for j in 0..p {
            let col = m.col_mut(j);
            for (i, v) in a.column(j).iter().enumerate() {
                col[i] = *v;
            }
        }
        m
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.n..(j + 1) * self.n]
    }

    /// Copies the given rows into a dense matrix.
    pub fn gather(&self, rows: &[usize]) -> ColMat {
        let mut out = ColMat::zeros(rows.len(), self.p);
        for j in 0..self.p {
            let src = self.col(j);
            let dst = out.col_mut(j);
            for (o, &i) in dst.iter_mut().zip(rows) {
                *o = src[i];
            }
        }
        out
    }

    #[allow(dead_code)]
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Raw sums over a row set: enough to reconstruct the standardized problem.
pub(crate) struct Moments {
    pub n: f64,
    pub sum_x: Vec<f64>,
    pub sum_y: f64,
    pub sum_yy: f64,
    pub sum_xy: Vec<f64>,
    /// Full symmetric p×p matrix of Σ x_j x_k.
    pub gram: Vec<f64>,
}

impl Moments {
    pub fn dense(m: &ColMat, y: &[f64]) -> Moments {
        let p = m.p;
        let mut gram = vec![0.0; p * p];
        let mut sum_x = vec![0.0; p];
        let mut sum_xy = vec![0.0; p];
        for j in 0..p {
            let cj = m.col(j);
            sum_x[j] = cj.iter().sum();
            sum_xy[j] = dot(cj, y);
            for k in 0..=j {
                let s = dot(cj, m.col(k));
                gram[j * p + k] = s;
                gram[k * p + j] = s;
            }
        }
        Moments {
            n: m.n as f64,
            sum_x,
            sum_y: y.iter().sum(),
            sum_yy: dot(y, y),
            sum_xy,
            gram,
        }
    }

    /// Moments of `self \ other` (other must be a row-subset of self).
    pub fn minus(&self, other: &Moments) -> Moments {
        Moments {
            n: self.n - other.n,
            sum_x: self
                .sum_x
                .iter()
                .zip(&other.sum_x)
                .map(|(a, b)| a - b)
                .collect(),
            sum_y: self.sum_y - other.sum_y,
            sum_yy: self.sum_yy - other.sum_yy,
            sum_xy: self
                .sum_xy
                .iter()
                .zip(&other.sum_xy)
                .map(|(a, b)| a - b)
                .collect(),
            gram: self
                .gram
                .iter()
                .zip(&other.gram)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

/// The standardized quadratic problem: correlation-scale Gram and
/// cross-products, with zero-variance columns excluded (their coefficients
/// stay exactly zero).
pub(crate) struct StdProblem {
    pub p: usize,
    gram: Vec<f64>,
    pub c: Vec<f64>,
    pub included: Vec<bool>,
    pub mean_x: Vec<f64>,
    pub scale_x: Vec<f64>,
    pub mean_y: f64,
    #[cfg_attr(not(test), allow(dead_code))]
    pub var_y: f64,
}

impl StdProblem {
    pub fn from_moments(mo: &Moments) -> StdProblem {
        let p = mo.sum_x.len();
        let n = mo.n.max(1.0);
        let mean_x: Vec<f64> = mo.sum_x.iter().map(|s| s / n).collect();
        let mean_y = mo.sum_y / n;
        let var_y = (mo.sum_yy / n - mean_y * mean_y).max(0.0);
        let mut scale_x = vec![1.0; p];
        let mut included = vec![false; p];
        for j in 0..p {
            let msq = mo.gram[j * p + j] / n;
            let var = (msq - mean_x[j] * mean_x[j]).max(0.0);
            if var > 1e-10 * msq.max(1e-12) {
                scale_x[j] = var.sqrt();
                included[j] = true;
            }
        }
        let mut gram = vec![0.0; p * p];
        let mut c = vec![0.0; p];
        for j in 0..p {
            if !included[j] {
                continue;
            }
            c[j] = (mo.sum_xy[j] / n - mean_x[j] * mean_y) / scale_x[j];
            for k in 0..=j {
                if !included[k] {
                    continue;
                }
                let cov = mo.gram[j * p + k] / n - mean_x[j] * mean_x[k];
                let g = cov / (scale_x[j] * scale_x[k]);
                gram[j * p + k] = g;
                gram[k * p + j] = g;
            }
            gram[j * p + j] = 1.0;
        }
        StdProblem {
            p,
            gram,
            c,
            included,
            mean_x,
            scale_x,
            mean_y,
            var_y,
        }
    }

    /// Smallest penalty with an all-zero solution.
    pub fn lambda_max(&self) -> f64 {
        self.c
            .iter()
            .zip(&self.included)
            .filter(|(_, inc)| **inc)
            .map(|(c, _)| c.abs())
            .fold(0.0, f64::max)
    }

    /// One cyclic pass over the given columns; `grad` holds
    /// `c − G·β` and is kept in sync. Returns the largest coefficient change.
    pub fn sweep(&self, cols: &[usize], beta: &mut [f64], grad: &mut [f64], lambda: f64) -> f64 {
        let mut max_delta = 0.0f64;
        for &j in cols {
            let z = grad[j] + beta[j];
            let new = soft_threshold(z, lambda);
            let delta = new - beta[j];
            if delta != 0.0 {
                beta[j] = new;
                let row = &self.gram[j * self.p..(j + 1) * self.p];
                for (g, r) in grad.iter_mut().zip(row) {
                    *g -= delta * r;
                }
                max_delta = max_delta.max(delta.abs());
            }
        }
        max_delta
    }

    /// Full coordinate descent with active-set refinement. `beta`/`grad`
    /// may carry a warm start (grad must equal `c − G·β`). Returns the
    /// number of sweeps used.
    pub fn descend(&self, beta: &mut [f64], grad: &mut [f64], lambda: f64, max_sweeps: usize) -> usize {
        let all: Vec<usize> = (0..self.p).filter(|&j| self.included[j]).collect();
        let mut sweeps = 0;
        loop {
            let delta = self.sweep(&all, beta, grad, lambda);
            sweeps += 1;
            if delta < CONVERGENCE_TOL || sweeps >= max_sweeps {
                return sweeps;
            }
            // Iterate the active set to convergence, then re-check all
            // coordinates; stop once a full sweep is quiet.
            let active: Vec<usize> = all.iter().copied().filter(|&j| beta[j] != 0.0).collect();
            while sweeps < max_sweeps {
                let d = self.sweep(&active, beta, grad, lambda);
                sweeps += 1;
                if d < CONVERGENCE_TOL {
                    break;
                }
            }
        }
    }

    /// `(1/2)·E(y−ŷ)² + λΣ|β|` on the standardized scale, for tests.
    #[cfg(test)]
    pub fn objective(&self, beta: &[f64], lambda: f64) -> f64 {
        let mut quad = 0.0;
        for j in 0..self.p {
            if beta[j] == 0.0 {
                continue;
            }
            let row = &self.gram[j * self.p..(j + 1) * self.p];
            quad += beta[j] * dot_sparse(row, beta);
        }
        let lin: f64 = beta.iter().zip(&self.c).map(|(b, c)| b * c).sum();
        let l1: f64 = beta.iter().map(|b| b.abs()).sum();
        0.5 * (self.var_y - 2.0 * lin + quad) + lambda * l1
    }

    /// Maps standardized coefficients to a raw-scale prediction model.
    pub fn raw_model(&self, beta: &[f64], lambda: f64) -> FittedModel {
        let mut b0 = self.mean_y;
        let mut active = Vec::new();
        for j in 0..self.p {
            if beta[j] != 0.0 {
                let raw = beta[j] / self.scale_x[j];
                b0 -= raw * self.mean_x[j];
                active.push((j, raw));
            }
        }
        FittedModel { b0, active, lambda }
    }
}

#[cfg(test)]
fn dot_sparse(row: &[f64], beta: &[f64]) -> f64 {
    row.iter()
        .zip(beta)
        .filter(|(_, b)| **b != 0.0)
        .map(|(r, b)| r * b)
        .sum()
}

#[inline]
fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// A fitted regression in raw column units, sparse over active columns.
#[derive(Debug, Clone)]
pub(crate) struct FittedModel {
    pub b0: f64,
    pub active: Vec<(usize, f64)>,
    #[allow(dead_code)]
    pub lambda: f64,
}

impl FittedModel {
    pub fn predict_into(&self, m: &ColMat, rows: &[usize], out: &mut [f64]) {
        out.fill(self.b0);
        for &(j, b) in &self.active {
            let col = m.col(j);
            for (o, &i) in out.iter_mut().zip(rows) {
                *o += b * col[i];
            }
        }
    }

    /// As `predict_into`, but columns listed in `overrides` contribute the
    /// given constant instead of their observed values.
    pub fn predict_override_into(
        &self,
        m: &ColMat,
        rows: &[usize],
        overrides: &[(usize, f64)],
        out: &mut [f64],
    ) {
        out.fill(self.b0);
        for &(j, b) in &self.active {
            if let Some(&(_, v)) = overrides.iter().find(|(oj, _)| *oj == j) {
                for o in out.iter_mut() {
                    *o += b * v;
                }
            } else {
                let col = m.col(j);
                for (o, &i) in out.iter_mut().zip(rows) {
                    *o += b * col[i];
                }
            }
        }
    }
}

/// Descending geometric penalty grid from `lambda_max`.
pub fn lambda_grid(lambda_max: f64) -> Vec<f64> {
    if lambda_max <= 0.0 {
        return vec![0.0; LAMBDA_GRID_POINTS];
    }
    (0..LAMBDA_GRID_POINTS)
        .map(|t| lambda_max * LAMBDA_MIN_RATIO.powf(t as f64 / (LAMBDA_GRID_POINTS - 1) as f64))
        .collect()
}

/// Cross-validated grid index (largest penalty on ties) on a design given
/// by contiguous rows of `m`. Folds are deterministic index strides.
pub(crate) fn cv_grid_index(m: &ColMat, y: &[f64], folds: usize) -> Result<usize> {
    let full = Moments::dense(m, y);
    cv_grid_index_with(&full, m, y, folds)
}

fn cv_grid_index_with(full: &Moments, m: &ColMat, y: &[f64], folds: usize) -> Result<usize> {
    let n = m.n;
    if folds < 2 {
        return Err(Error::InvalidArgument("cross-validation needs at least 2 folds".into()));
    }
    if n < folds {
        return Err(Error::InvalidData(format!(
            "insufficient data: {n} rows for {folds}-fold cross-validation"
        )));
    }
    let lambda_max = StdProblem::from_moments(full).lambda_max();
    let grid = lambda_grid(lambda_max);
    if lambda_max <= 0.0 {
        return Ok(grid.len() - 1);
    }
    let mut sse = vec![0.0; grid.len()];
    for f in 0..folds {
        let held: Vec<usize> = (f..n).step_by(folds).collect();
        let n_train = n - held.len();
        let held_m = m.gather(&held);
        let held_y: Vec<f64> = held.iter().map(|&i| y[i]).collect();
        let train = full.minus(&Moments::dense(&held_m, &held_y));
        let sp = StdProblem::from_moments(&train);
        let mut beta = vec![0.0; sp.p];
        let mut grad = sp.c.clone();
        let mut pred = vec![0.0; held.len()];
        for (t, &lambda) in grid.iter().enumerate() {
            sp.descend(&mut beta, &mut grad, lambda, PATH_MAX_SWEEPS);
            let model = sp.raw_model(&beta, lambda);
            let all_rows: Vec<usize> = (0..held.len()).collect();
            model.predict_into(&held_m, &all_rows, &mut pred);
            sse[t] += pred
                .iter()
                .zip(&held_y)
                .map(|(p, y)| (p - y) * (p - y))
                .sum::<f64>();
            // Once the active set saturates the training sample the fit
            // interpolates; deeper penalties cannot win the validation.
            if model.active.len() >= n_train {
                for s in sse.iter_mut().skip(t + 1) {
                    *s = f64::INFINITY;
                }
                break;
            }
        }
    }
    let mut best = 0;
    for t in 1..sse.len() {
        if sse[t] < sse[best] {
            best = t;
        }
    }
    Ok(best)
}

/// Cross-validated fit: selects the penalty by `folds`-fold CV on the rows
/// of `m`, then refits on all of them, warm-starting down the grid.
pub(crate) fn cv_fit(m: &ColMat, y: &[f64], folds: usize) -> Result<FittedModel> {
    let full = Moments::dense(m, y);
    let best = cv_grid_index_with(&full, m, y, folds)?;
    let sp = StdProblem::from_moments(&full);
    let grid = lambda_grid(sp.lambda_max());
    let mut beta = vec![0.0; sp.p];
    let mut grad = sp.c.clone();
    for &lambda in &grid[..best] {
        sp.descend(&mut beta, &mut grad, lambda, PATH_MAX_SWEEPS);
    }
    sp.descend(&mut beta, &mut grad, grid[best], MAX_SWEEPS);
    Ok(sp.raw_model(&beta, grid[best]))
}

// ---------------------------------------------------------------------------
// Public array-based API
// ---------------------------------------------------------------------------

/// A lasso fit: standardized-basis coefficients plus the standardization
/// that maps them back to raw features.
#[derive(Debug, Clone)]
pub struct LassoFit {
    /// Intercept on the standardized scale (the training target mean).
    pub intercept: f64,
    /// Coefficients on standardized columns.
    pub coefficients: Array1<f64>,
    pub lambda: f64,
    pub means: Array1<f64>,
    pub scales: Array1<f64>,
}

impl LassoFit {
    pub fn predict_row(&self, row: ArrayView1<'_, f64>) -> f64 {
        let mut acc = self.intercept;
        for j in 0..row.len() {
            let b = self.coefficients[j];
            if b != 0.0 {
                acc += b * (row[j] - self.means[j]) / self.scales[j];
            }
        }
        acc
    }

    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Array1<f64> {
        Array1::from_iter(features.rows().into_iter().map(|r| self.predict_row(r)))
    }

    pub fn nonzero_count(&self) -> usize {
        self.coefficients.iter().filter(|b| **b != 0.0).count()
    }
}

fn check_inputs(features: &ArrayView2<'_, f64>, target: &ArrayView1<'_, f64>) -> Result<()> {
    if features.nrows() != target.len() {
        return Err(Error::InvalidData(format!(
            "feature rows ({}) and target length ({}) differ",
            features.nrows(),
            target.len()
        )));
    }
    if features.nrows() < 2 {
        return Err(Error::InvalidData("need at least 2 rows".into()));
    }
    if features.iter().any(|v| !v.is_finite()) || target.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite value in regression inputs".into()));
    }
    Ok(())
}

/// Coordinate-descent lasso at a fixed penalty.
pub fn lasso_fit(
    features: ArrayView2<'_, f64>,
    target: ArrayView1<'_, f64>,
    lambda: f64,
) -> Result<LassoFit> {
    check_inputs(&features, &target)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidArgument("lambda must be finite and >= 0".into()));
    }
    let m = ColMat::from_view(features);
    let y: Vec<f64> = target.to_vec();
    let sp = StdProblem::from_moments(&Moments::dense(&m, &y));
    let mut beta = vec![0.0; sp.p];
    let mut grad = sp.c.clone();
    sp.descend(&mut beta, &mut grad, lambda, MAX_SWEEPS);
    Ok(LassoFit {
        intercept: sp.mean_y,
        coefficients: Array1::from_vec(beta),
        lambda,
        means: Array1::from_vec(sp.mean_x.clone()),
        scales: Array1::from_vec(sp.scale_x.clone()),
    })
}

/// Smallest penalty at which the lasso solution is identically zero.
pub fn lambda_max(features: ArrayView2<'_, f64>, target: ArrayView1<'_, f64>) -> Result<f64> {
    check_inputs(&features, &target)?;
    let m = ColMat::from_view(features);
    let y: Vec<f64> = target.to_vec();
    Ok(StdProblem::from_moments(&Moments::dense(&m, &y)).lambda_max())
}

/// K-fold cross-validated mean-squared-error minimizer over a
/// `LAMBDA_GRID_POINTS`-point geometric grid from `lambda_max` down to
/// `lambda_max · LAMBDA_MIN_RATIO`.
pub fn select_lambda(
    features: ArrayView2<'_, f64>,
    target: ArrayView1<'_, f64>,
    folds: usize,
) -> Result<f64> {
    check_inputs(&features, &target)?;
    let m = ColMat::from_view(features);
    let y: Vec<f64> = target.to_vec();
    let best = cv_grid_index(&m, &y, folds)?;
    let lmax = StdProblem::from_moments(&Moments::dense(&m, &y)).lambda_max();
    Ok(lambda_grid(lmax)[best])
}
