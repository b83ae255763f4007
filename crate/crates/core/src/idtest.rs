//! The identification test: quadratic score, cluster-robust inference,
//! multi-run aggregation, and first-stage relevance diagnostics.
//!
//! The null is that including the instruments leaves all three conditional
//! means unchanged. The statistic averages the squared cross-fitted
//! prediction gaps plus an independent mean-zero perturbation `ζ` drawn
//! once per subject and added to all three components:
//!
//! `θ̂ = (1/3n) Σ_i [ (g_i1² + ζ_i) + (g_i2² + ζ_i) + (g_i3² + ζ_i) ]`
//!
//! The shared `ζ_i` keeps the variance non-degenerate under the null and
//! correlates the three stacked score rows of one subject, which is why
//! the standard error clusters at the subject level. `θ̂/se` is referred
//! to the standard normal, two-sided by default (matching the reported
//! reference results); a one-sided upper-tail option is available since
//! violations can only push `θ` up.

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal as GaussDist};

use crate::ml::{
    self, crossfit_means_with_folds, CrossfitOptions, CrossfitPredictions, Dataset,
    FoldAssignment, SetupVariant,
};
use crate::seed;
use crate::{Error, Result};

/// Perturbation scale rule: explicit, or the sample-size default `500/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SigmaZetaRule {
    Explicit(f64),
    /// `σ_ζ = 500/n`.
    ScaledByN,
}

impl SigmaZetaRule {
    pub fn value(self, n: usize) -> Result<f64> {
        let v = match self {
            SigmaZetaRule::Explicit(v) => v,
            SigmaZetaRule::ScaledByN => 500.0 / n as f64,
        };
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma_zeta must be positive, got {v}"
            )));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sidedness {
    OneSidedUpper,
    TwoSided,
}

#[derive(Debug, Clone)]
pub struct TestSetup {
    pub variant: SetupVariant,
    pub sigma_zeta: SigmaZetaRule,
    pub folds: usize,
    pub sidedness: Sidedness,
    pub options: CrossfitOptions,
}

impl TestSetup {
    pub fn new(variant: SetupVariant) -> Self {
        TestSetup {
            variant,
            sigma_zeta: SigmaZetaRule::ScaledByN,
            folds: 10,
            sidedness: Sidedness::TwoSided,
            options: CrossfitOptions::default(),
        }
    }

    pub fn with_folds(mut self, folds: usize) -> Self {
        self.folds = folds;
        self
    }
}

/// One test run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestResult {
    pub theta_hat: f64,
    pub se: f64,
    pub tstat: f64,
    pub pval: f64,
    pub n: usize,
    /// Mean squared eta gap per component.
    pub component_means: [f64; 3],
    pub zeta_sd: f64,
    /// All subject contributions were equal; `pval` forced to 1 and
    /// `tstat` to 0 instead of dividing by a zero standard error.
    pub degenerate: bool,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// `θ̂` and the per-subject cluster contributions `u_i = Σ_j (g_ij² + ζ_i)`.
pub fn compute_theta(preds: &CrossfitPredictions, zeta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = preds.n();
    if zeta.len() != n {
        return Err(Error::InvalidData(format!(
            "zeta length {} does not match sample size {n}",
            zeta.len()
        )));
    }
    if !preds.eta1.iter().chain(preds.eta2.iter()).all(|v| v.is_finite()) {
        return Err(Error::InvalidData("non-finite prediction".into()));
    }
    let mut contributions = Vec::with_capacity(n);
    for i in 0..n {
        let mut u = 3.0 * zeta[i];
        for j in 0..3 {
            let g = preds.eta1[[i, j]] - preds.eta2[[i, j]];
            u += g * g;
        }
        contributions.push(u);
    }
    let theta = contributions.iter().sum::<f64>() / (3.0 * n as f64);
    Ok((theta, contributions))
}

/// Cluster-robust standard error treating each subject's three stacked
/// score rows as one cluster: `sqrt(Σ (u_i − 3θ̂)²) / 3n`.
pub fn cluster_se(contributions: &[f64], theta_hat: f64, n: usize) -> Result<f64> {
    if n < 2 || contributions.len() != n {
        return Err(Error::InvalidData(
            "cluster variance needs at least two subjects".into(),
        ));
    }
    let ssq: f64 = contributions
        .iter()
        .map(|u| {
            let d = u - 3.0 * theta_hat;
            d * d
        })
        .sum();
    Ok(ssq.sqrt() / (3.0 * n as f64))
}

fn pvalue(tstat: f64, sidedness: Sidedness) -> f64 {
    let normal = GaussDist::standard();
    match sidedness {
        Sidedness::OneSidedUpper => 1.0 - normal.cdf(tstat),
        Sidedness::TwoSided => 2.0 * (1.0 - normal.cdf(tstat.abs())),
    }
}

/// Runs the test once: cross-fit the six means, draw `ζ`, form `θ̂`, the
/// clustered standard error, and the p-value.
pub fn run_test(data: &Dataset, setup: &TestSetup, seed: u64) -> Result<TestResult> {
    let folds = FoldAssignment::new(data.n(), setup.folds, seed)?;
    let preds = crossfit_means_with_folds(data, setup.variant, &folds, &setup.options)?;
    test_from_predictions(&preds, setup, seed)
}

/// The inference step alone, for callers that already hold predictions.
pub fn test_from_predictions(
    preds: &CrossfitPredictions,
    setup: &TestSetup,
    seed: u64,
) -> Result<TestResult> {
    let n = preds.n();
    let sigma = setup.sigma_zeta.value(n)?;
    let mut rng = seed::rng(seed, 1);
    let dist = Normal::new(0.0, sigma).expect("positive sigma");
    let zeta: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();

    let (theta_hat, contributions) = compute_theta(preds, &zeta)?;
    let se = cluster_se(&contributions, theta_hat, n)?;
    let degenerate = se == 0.0;
    let tstat = if degenerate { 0.0 } else { theta_hat / se };
    let pval = if degenerate {
        1.0
    } else {
        pvalue(tstat, setup.sidedness)
    };
    Ok(TestResult {
        theta_hat,
        se,
        tstat,
        pval,
        n,
        component_means: preds.component_gaps(),
        zeta_sd: sigma,
        degenerate,
        seed,
        warnings: preds.warnings.clone(),
    })
}

/// Runs the test `runs` times with derived seeds and returns every result
/// plus the index of the median-p-value run.
pub fn median_run_all(
    data: &Dataset,
    setup: &TestSetup,
    runs: usize,
    seed: u64,
) -> Result<(Vec<TestResult>, usize)> {
    if runs == 0 || runs % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "run count must be odd, got {runs}"
        )));
    }
    let seeds: Vec<u64> = (0..runs).map(|r| seed::derive(seed, 2, r as u64)).collect();
    let results: Vec<TestResult> = seeds
        .par_iter()
        .map(|&s| run_test(data, setup, s))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..runs).collect();
    order.sort_by(|&a, &b| {
        results[a]
            .pval
            .partial_cmp(&results[b].pval)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok((results, order[runs / 2]))
}

/// The run whose p-value is the median of `runs` runs, reported with its
/// own test statistic and standard error.
pub fn median_run(data: &Dataset, setup: &TestSetup, runs: usize, seed: u64) -> Result<TestResult> {
    let (results, chosen) = median_run_all(data, setup, runs, seed)?;
    Ok(results[chosen].clone())
}

// ---------------------------------------------------------------------------
// First-stage relevance
// ---------------------------------------------------------------------------

/// First-stage association p-values (small values confirm relevance).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FirstStageResult {
    /// Treatment on its instrument given covariates.
    pub pval_d_z1: f64,
    /// Mediator on its instrument given treatment and covariates
    /// (plus `W` in the post-treatment setup).
    pub pval_m_z2: f64,
}

/// Tests the conditional associations of `D` with `Z1` and of `M` with
/// `Z2` by partialling out: cross-fitted lasso residuals of target and
/// instruments on the controls, then a heteroskedasticity-robust Wald test
/// of the residual-on-residual regression.
pub fn first_stage_check(data: &Dataset, setup: &TestSetup, seed: u64) -> Result<FirstStageResult> {
    data.validate()?;
    for (name, block) in [("z1", &data.z1), ("z2", &data.z2)] {
        for c in 0..block.ncols() {
            let col = block.column(c);
            let mean = col.mean().unwrap();
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
            if var <= 1e-12 * mean.mul_add(mean, 1e-12) {
                return Err(Error::InvalidData(format!(
                    "instrument column {name}[{c}] has zero variance"
                )));
            }
        }
    }
    let folds = FoldAssignment::new(data.n(), setup.folds.max(2), seed::derive(seed, 3, 0))?;

    let with_w = setup.variant == SetupVariant::PostTreatment && data.w.is_some();
    let d_controls = controls_matrix(data, false, false);
    let m_controls = controls_matrix(data, true, with_w);

    let pval_d_z1 = partial_out_wald(&d_controls, data.d.as_slice().unwrap(), &data.z1, &folds)?;
    let pval_m_z2 = partial_out_wald(&m_controls, data.m.as_slice().unwrap(), &data.z2, &folds)?;
    Ok(FirstStageResult { pval_d_z1, pval_m_z2 })
}

fn controls_matrix(data: &Dataset, include_d: bool, include_w: bool) -> Array2<f64> {
    let n = data.n();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    if include_d {
        cols.push(data.d.to_vec());
    }
    for c in 0..data.x.ncols() {
        cols.push(data.x.column(c).to_vec());
    }
    if include_w {
        if let Some(w) = &data.w {
            for c in 0..w.ncols() {
                cols.push(w.column(c).to_vec());
            }
        }
    }
    let p = cols.len();
    let mut out = Array2::zeros((n, p));
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            out[[i, j]] = col[i];
        }
    }
    out
}

/// Cross-fitted residuals of `target` on `controls`.
fn crossfit_residuals(
    controls: &Array2<f64>,
    target: &[f64],
    folds: &FoldAssignment,
) -> Result<Vec<f64>> {
    use crate::ml::lasso;
    let m = lasso::ColMat::from_view(controls.view());
    let mut resid = vec![0.0; target.len()];
    for f in 0..folds.k {
        let train = folds.complement_rows(f);
        let held = folds.fold_rows(f);
        let tm = m.gather(&train);
        let ty: Vec<f64> = train.iter().map(|&i| target[i]).collect();
        let model = lasso::cv_fit(&tm, &ty, ml::INNER_CV_FOLDS.min(train.len()).max(2))?;
        let mut preds = vec![0.0; held.len()];
        model.predict_into(&m, &held, &mut preds);
        for (&i, &p) in held.iter().zip(&preds) {
            resid[i] = target[i] - p;
        }
    }
    Ok(resid)
}

/// Wald test (χ², HC0 sandwich) that the instrument residuals jointly
/// predict the target residual.
fn partial_out_wald(
    controls: &Array2<f64>,
    target: &[f64],
    instruments: &Array2<f64>,
    folds: &FoldAssignment,
) -> Result<f64> {
    let n = target.len();
    let q = instruments.ncols();
    if n <= q + 1 {
        return Err(Error::InvalidData("too few observations for first-stage test".into()));
    }
    let ry = crossfit_residuals(controls, target, folds)?;
    let mut rz: Vec<Vec<f64>> = Vec::with_capacity(q);
    for c in 0..q {
        let col: Vec<f64> = instruments.column(c).to_vec();
        rz.push(crossfit_residuals(controls, &col, folds)?);
    }

    // OLS of ry on [1, rz] with HC0 sandwich covariance.
    let k = q + 1;
    let design_row = |i: usize| -> Vec<f64> {
        let mut row = Vec::with_capacity(k);
        row.push(1.0);
        for col in &rz {
            row.push(col[i]);
        }
        row
    };
    let mut xtx = vec![0.0; k * k];
    let mut xty = vec![0.0; k];
    for i in 0..n {
        let row = design_row(i);
        for a in 0..k {
            xty[a] += row[a] * ry[i];
            for b in 0..k {
                xtx[a * k + b] += row[a] * row[b];
            }
        }
    }
    let coef = solve(&xtx, &xty, k)?;
    let mut meat = vec![0.0; k * k];
    for i in 0..n {
        let row = design_row(i);
        let fitted: f64 = row.iter().zip(&coef).map(|(x, b)| x * b).sum();
        let e = ry[i] - fitted;
        for a in 0..k {
            for b in 0..k {
                meat[a * k + b] += row[a] * row[b] * e * e;
            }
        }
    }
    // V = (X'X)^{-1} M (X'X)^{-1}
    let bread = invert(&xtx, k)?;
    let mut tmp = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            let mut s = 0.0;
            for c in 0..k {
                s += bread[a * k + c] * meat[c * k + b];
            }
            tmp[a * k + b] = s;
        }
    }
    let mut cov = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            let mut s = 0.0;
            for c in 0..k {
                s += tmp[a * k + c] * bread[c * k + b];
            }
            cov[a * k + b] = s;
        }
    }

    // Wald statistic on the instrument block (coordinates 1..k).
    let mut vzz = vec![0.0; q * q];
    for a in 0..q {
        for b in 0..q {
            vzz[a * q + b] = cov[(a + 1) * k + (b + 1)];
        }
    }
    let bz: Vec<f64> = coef[1..].to_vec();
    let sol = solve(&vzz, &bz, q)?;
    let wald: f64 = bz.iter().zip(&sol).map(|(b, s)| b * s).sum();
    let chi = ChiSquared::new(q as f64)
        .map_err(|e| Error::InvalidData(format!("wald degrees of freedom: {e}")))?;
    Ok(1.0 - chi.cdf(wald.max(0.0)))
}

/// Gaussian elimination with partial pivoting for the small dense systems
/// in the Wald test.
fn solve(a: &[f64], b: &[f64], k: usize) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut v = b.to_vec();
    for col in 0..k {
        let mut piv = col;
        for r in col + 1..k {
            if m[r * k + col].abs() > m[piv * k + col].abs() {
                piv = r;
            }
        }
        if m[piv * k + col].abs() < 1e-300 {
            return Err(Error::InvalidData("singular matrix in first-stage test".into()));
        }
        if piv != col {
            for c in 0..k {
                m.swap(col * k + c, piv * k + c);
            }
            v.swap(col, piv);
        }
        for r in col + 1..k {
            let f = m[r * k + col] / m[col * k + col];
            if f != 0.0 {
                for c in col..k {
                    m[r * k + c] -= f * m[col * k + c];
                }
                v[r] -= f * v[col];
            }
        }
    }
    for col in (0..k).rev() {
        let mut acc = v[col];
        for c in col + 1..k {
            acc -= m[col * k + c] * v[c];
        }
        v[col] = acc / m[col * k + col];
    }
    Ok(v)
}

fn invert(a: &[f64], k: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; k * k];
    for col in 0..k {
        let mut e = vec![0.0; k];
        e[col] = 1.0;
        let x = solve(a, &e, k)?;
        for r in 0..k {
            out[r * k + col] = x[r];
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Orthogonality diagnostics
// ---------------------------------------------------------------------------

/// Finite-difference profile of the mean score under a nuisance
/// perturbation `η → η + r·h`, for the squared score and the non-squared
/// control score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrthogonalityProfile {
    /// Centered finite-difference derivative of the mean squared score at 0.
    pub derivative: f64,
    pub derivative_se: f64,
    /// Second difference; equals twice the mean squared perturbation for
    /// the squared score.
    pub second_derivative: f64,
    pub mean_sq_perturbation: f64,
    /// Same derivative for the non-squared control score, which is not
    /// orthogonal and should fail the zero test.
    pub control_derivative: f64,
    pub control_derivative_se: f64,
}

impl OrthogonalityProfile {
    /// Orthogonality verdict: derivative indistinguishable from zero at
    /// three Monte Carlo standard errors (degenerate-zero counts as a pass).
    pub fn squared_score_passes(&self) -> bool {
        self.derivative.abs() <= 3.0 * self.derivative_se
    }

    pub fn control_score_fails(&self) -> bool {
        self.control_derivative.abs() > 3.0 * self.control_derivative_se
    }
}

/// Evaluates the score mean at `η0 ± r·h` around known true conditional
/// means. `eta1`/`eta2` are the true means, `h1`/`h2` the perturbation
/// directions, all `n × 3`.
pub fn orthogonality_profile(
    eta1: &Array2<f64>,
    eta2: &Array2<f64>,
    h1: &Array2<f64>,
    h2: &Array2<f64>,
    zeta: &[f64],
    theta0: f64,
    r: f64,
) -> Result<OrthogonalityProfile> {
    let n = eta1.nrows();
    for (name, m) in [("eta1", eta1), ("eta2", eta2), ("h1", h1), ("h2", h2)] {
        if m.dim() != (n, 3) {
            return Err(Error::InvalidData(format!("{name} must be n x 3")));
        }
    }
    if zeta.len() != n || !(r.is_finite() && r > 0.0) {
        return Err(Error::InvalidArgument("bad zeta length or step".into()));
    }
    let phi = |i: usize, s: f64| -> f64 {
        let mut acc = 0.0;
        for j in 0..3 {
            let g = eta1[[i, j]] - eta2[[i, j]] + s * (h1[[i, j]] - h2[[i, j]]);
            acc += g * g + zeta[i];
        }
        acc / 3.0 - theta0
    };
    let phi_lin = |i: usize, s: f64| -> f64 {
        let mut acc = 0.0;
        for j in 0..3 {
            let g = eta1[[i, j]] - eta2[[i, j]] + s * (h1[[i, j]] - h2[[i, j]]);
            acc += g + zeta[i];
        }
        acc / 3.0 - theta0
    };

    let mut d = Vec::with_capacity(n);
    let mut d2 = Vec::with_capacity(n);
    let mut dc = Vec::with_capacity(n);
    let mut msq = 0.0;
    for i in 0..n {
        let (hi, lo, at0) = (phi(i, r), phi(i, -r), phi(i, 0.0));
        d.push((hi - lo) / (2.0 * r));
        d2.push((hi - 2.0 * at0 + lo) / (r * r));
        dc.push((phi_lin(i, r) - phi_lin(i, -r)) / (2.0 * r));
        for j in 0..3 {
            let h = h1[[i, j]] - h2[[i, j]];
            msq += h * h;
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let sd_of_mean = |v: &[f64], m: f64| {
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
            / (n as f64).sqrt()
    };
    let (dm, d2m, dcm) = (mean(&d), mean(&d2), mean(&dc));
    Ok(OrthogonalityProfile {
        derivative: dm,
        derivative_se: sd_of_mean(&d, dm),
        second_derivative: d2m,
        mean_sq_perturbation: msq / (3.0 * n as f64),
        control_derivative: dcm,
        control_derivative_se: sd_of_mean(&dc, dcm),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{self, DgpConfig};
    use rand_distr::StandardNormal;

    fn preds_from(eta1: Array2<f64>, eta2: Array2<f64>) -> CrossfitPredictions {
        let n = eta1.nrows();
        CrossfitPredictions {
            eta1,
            eta2,
            setup: SetupVariant::Baseline,
            folds: FoldAssignment::new(n, 2, 0).unwrap(),
            warnings: Vec::new(),
        }
    }

    #[test]
    fn theta_trivial_cases() {
        let n = 10;
        let eta = Array2::from_elem((n, 3), 1.5);
        let preds = preds_from(eta.clone(), eta.clone());
        let (theta, u) = compute_theta(&preds, &vec![0.0; n]).unwrap();
        assert_eq!(theta, 0.0);
        assert!(u.iter().all(|&x| x == 0.0));

        // Constant gap c in every component: theta = c².
        let c = 0.7;
        let preds = preds_from(eta.clone(), eta.mapv(|v| v - c));
        let (theta, _) = compute_theta(&preds, &vec![0.0; n]).unwrap();
        assert!((theta - c * c).abs() < 1e-12);
    }

    #[test]
    fn theta_five_subject_oracle() {
        // Hand-set gaps and zetas; theta recomputed by direct arithmetic.
        let gaps = [
            [0.1, -0.2, 0.3],
            [0.0, 0.5, -0.1],
            [0.2, 0.2, 0.2],
            [-0.4, 0.1, 0.0],
            [0.3, -0.3, 0.6],
        ];
        let zeta = [0.05, -0.02, 0.0, 0.01, -0.04];
        let n = 5;
        let mut eta1 = Array2::zeros((n, 3));
        let eta2 = Array2::zeros((n, 3));
        for i in 0..n {
            for j in 0..3 {
                eta1[[i, j]] = gaps[i][j];
            }
        }
        let preds = preds_from(eta1, eta2);
        let (theta, u) = compute_theta(&preds, &zeta).unwrap();

        let mut expect = 0.0;
        for i in 0..n {
            for j in 0..3 {
                expect += gaps[i][j] * gaps[i][j] + zeta[i];
            }
        }
        expect /= 3.0 * n as f64;
        assert!((theta - expect).abs() < 1e-15);
        let u0 = gaps[0].iter().map(|g| g * g).sum::<f64>() + 3.0 * zeta[0];
        assert!((u[0] - u0).abs() < 1e-15);
    }

    #[test]
    fn theta_nonnegative_without_zeta() {
        let mut rng = seed::rng(9, 0);
        for _ in 0..20 {
            let n = 8;
            let eta1 = Array2::from_shape_fn((n, 3), |_| StandardNormal.sample(&mut rng));
            let eta2 = Array2::from_shape_fn((n, 3), |_| StandardNormal.sample(&mut rng));
            let preds = preds_from(eta1, eta2);
            let (theta, _) = compute_theta(&preds, &vec![0.0; n]).unwrap();
            assert!(theta >= 0.0);
        }
    }

    #[test]
    fn cluster_se_examples() {
        // All contributions equal: zero dispersion.
        let theta = 1.0;
        let u = vec![3.0; 4];
        assert_eq!(cluster_se(&u, theta, 4).unwrap(), 0.0);

        // Two clusters at (0, 6θ): se = θ·sqrt(2)/2.
        let theta = 0.8;
        let u = vec![0.0, 6.0 * theta];
        let se = cluster_se(&u, theta, 2).unwrap();
        assert!((se - theta * 2.0f64.sqrt() / 2.0).abs() < 1e-12);

        assert!(cluster_se(&[1.0], 1.0, 1).is_err());
    }

    #[test]
    fn run_test_deterministic_and_consistent() {
        let data = dgp::simulate(&DgpConfig {
            n: 150,
            p: 5,
            seed: 5,
            ..DgpConfig::default()
        })
        .unwrap();
        let setup = TestSetup::new(SetupVariant::Baseline).with_folds(2);
        let a = run_test(&data, &setup, 11).unwrap();
        let b = run_test(&data, &setup, 11).unwrap();
        assert_eq!(a.theta_hat.to_bits(), b.theta_hat.to_bits());
        assert_eq!(a.pval.to_bits(), b.pval.to_bits());
        assert!(!a.degenerate);
        assert!(a.se > 0.0);
        assert!((a.tstat - a.theta_hat / a.se).abs() < 1e-12);
        assert!((a.zeta_sd - 500.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn median_run_is_an_order_statistic() {
        let data = dgp::simulate(&DgpConfig {
            n: 120,
            p: 4,
            seed: 6,
            ..DgpConfig::default()
        })
        .unwrap();
        let setup = TestSetup::new(SetupVariant::Baseline).with_folds(2);
        let (all, chosen) = median_run_all(&data, &setup, 5, 3).unwrap();
        let mut pvals: Vec<f64> = all.iter().map(|r| r.pval).collect();
        pvals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(all[chosen].pval, pvals[2]);

        // runs = 1 is identical to a single run with the derived seed.
        let (one, idx) = median_run_all(&data, &setup, 1, 3).unwrap();
        assert_eq!(idx, 0);
        let direct = run_test(&data, &setup, seed::derive(3, 2, 0)).unwrap();
        assert_eq!(one[0].pval.to_bits(), direct.pval.to_bits());

        assert!(median_run(&data, &setup, 4, 3).is_err());
    }

    #[test]
    fn first_stage_detects_relevance_and_rejects_constants() {
        let data = dgp::simulate(&DgpConfig {
            n: 1500,
            p: 5,
            seed: 7,
            ..DgpConfig::default()
        })
        .unwrap();
        let setup = TestSetup::new(SetupVariant::Baseline).with_folds(2);
        let fs = first_stage_check(&data, &setup, 0).unwrap();
        assert!(fs.pval_d_z1 < 0.01, "pval_d_z1 = {}", fs.pval_d_z1);
        assert!(fs.pval_m_z2 < 0.01, "pval_m_z2 = {}", fs.pval_m_z2);

        // Irrelevant instrument: p-value far from 0.
        let mut noise = data.clone();
        let mut rng = seed::rng(8, 0);
        for v in noise.z1.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let fs = first_stage_check(&noise, &setup, 0).unwrap();
        assert!(fs.pval_d_z1 > 0.05, "pval under noise = {}", fs.pval_d_z1);

        let mut constant = data.clone();
        constant.z1.fill(2.0);
        assert!(first_stage_check(&constant, &setup, 0).is_err());
    }

    #[test]
    fn orthogonality_profile_shapes() {
        // Exact null with known truths: derivative identically zero;
        // second derivative equals twice the mean squared perturbation;
        // the control score has derivative = mean(h) != 0.
        let n = 500;
        let mut rng = seed::rng(10, 0);
        let eta = Array2::from_shape_fn((n, 3), |_| StandardNormal.sample(&mut rng));
        let h1 = Array2::from_shape_fn((n, 3), |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            1.0 + 0.5 * v
        });
        let h2 = Array2::zeros((n, 3));
        let zeta: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let prof = orthogonality_profile(&eta, &eta.clone(), &h1, &h2, &zeta, 0.0, 1e-3).unwrap();
        assert!(prof.squared_score_passes());
        assert!(prof.derivative.abs() < 1e-10);
        assert!(
            (prof.second_derivative - 2.0 * prof.mean_sq_perturbation).abs()
                < 1e-6 * prof.mean_sq_perturbation.max(1.0)
        );
        assert!(prof.control_score_fails());
    }
}
