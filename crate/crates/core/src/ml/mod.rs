//! Data layout and cross-fitted conditional-mean prediction.
//!
//! [`crossfit_means`] produces, for every observation, held-out predictions
//! of the six conditional means entering the test: the means of `Y` and `M`
//! given the setup's conditioning sets excluding the relevant instrument
//! (`eta1`) and including it (`eta2`). Models are fitted per fold on the
//! complement with a cross-validated lasso penalty, so row `i`'s
//! predictions never depend on row `i`.

pub mod lasso;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};
pub use lasso::{lambda_grid, lambda_max, lasso_fit, select_lambda, LassoFit};
use lasso::{ColMat, FittedModel};

/// Default inner fold count for penalty selection on a complement.
pub const INNER_CV_FOLDS: usize = 5;

/// Columnar sample: outcome, treatment, mediator (or selection indicator),
/// instrument blocks, and covariate blocks.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Array1<f64>,
    pub d: Array1<f64>,
    pub m: Array1<f64>,
    pub z1: Array2<f64>,
    pub z2: Array2<f64>,
    pub x: Array2<f64>,
    pub w: Option<Array2<f64>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::InvalidData("empty sample".into()));
        }
        let blocks: [(&str, usize); 5] = [
            ("d", self.d.len()),
            ("m", self.m.len()),
            ("z1", self.z1.nrows()),
            ("z2", self.z2.nrows()),
            ("x", self.x.nrows()),
        ];
        for (name, len) in blocks {
            if len != n {
                return Err(Error::InvalidData(format!(
                    "column `{name}` has {len} rows, expected {n}"
                )));
            }
        }
        if self.z1.ncols() == 0 || self.z2.ncols() == 0 {
            return Err(Error::InvalidData("instrument blocks must be non-empty".into()));
        }
        if let Some(w) = &self.w {
            if w.nrows() != n {
                return Err(Error::InvalidData(format!(
                    "column `w` has {} rows, expected {n}",
                    w.nrows()
                )));
            }
        }
        let finite = self.y.iter().all(|v| v.is_finite())
            && self.d.iter().all(|v| v.is_finite())
            && self.m.iter().all(|v| v.is_finite())
            && self.z1.iter().all(|v| v.is_finite())
            && self.z2.iter().all(|v| v.is_finite())
            && self.x.iter().all(|v| v.is_finite())
            && self.w.as_ref().is_none_or(|w| w.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidData("non-finite value in dataset".into()));
        }
        Ok(())
    }

    /// True iff `d` takes only the values 0 and 1 (both present).
    pub fn d_is_binary(&self) -> bool {
        let mut seen = [false, false];
        for &v in self.d.iter() {
            if v == 0.0 {
                seen[0] = true;
            } else if v == 1.0 {
                seen[1] = true;
            } else {
                return false;
            }
        }
        seen[0] && seen[1]
    }

    /// True iff `m` takes only the values 0 and 1 (both present).
    pub fn m_is_binary(&self) -> bool {
        let mut seen = [false, false];
        for &v in self.m.iter() {
            if v == 0.0 {
                seen[0] = true;
            } else if v == 1.0 {
                seen[1] = true;
            } else {
                return false;
            }
        }
        seen[0] && seen[1]
    }
}

/// Which causal setup's conditioning sets the test uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetupVariant {
    /// Pre-treatment covariates only.
    Baseline,
    /// The treatment instrument may affect the mediator instrument:
    /// `Z2` joins the conditioning sets of the first two components.
    Z2Linked,
    /// Post-treatment covariates `W` join the third component's sets.
    PostTreatment,
}

impl fmt::Display for SetupVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SetupVariant::Baseline => "baseline",
            SetupVariant::Z2Linked => "z2linked",
            SetupVariant::PostTreatment => "posttreatment",
        };
        f.write_str(s)
    }
}

impl FromStr for SetupVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(SetupVariant::Baseline),
            "z2linked" => Ok(SetupVariant::Z2Linked),
            "posttreatment" => Ok(SetupVariant::PostTreatment),
            _ => Err(Error::InvalidArgument(format!(
                "unknown setup variant `{s}` (expected baseline|z2linked|posttreatment)"
            ))),
        }
    }
}

/// Seeded assignment of observations to near-equal folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument("fold count must be at least 2".into()));
        }
        if k > n {
            return Err(Error::InvalidArgument(format!(
                "fold count {k} exceeds sample size {n}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(seed, 0));
        let mut fold_of = vec![0usize; n];
        for (pos, &i) in order.iter().enumerate() {
            fold_of[i] = pos % k;
        }
        Ok(FoldAssignment { k, fold_of, seed })
    }

    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == fold)
            .collect()
    }

    pub fn complement_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != fold)
            .collect()
    }
}

/// Per-observation held-out predictions of the six conditional means.
#[derive(Debug, Clone)]
pub struct CrossfitPredictions {
    /// Columns: mean of `Y` given (D, X[, ...]), mean of `M` given the same
    /// set, mean of `Y` given (D, M, X[, ...]).
    pub eta1: Array2<f64>,
    /// Same means with the relevant instrument added to the conditioning set.
    pub eta2: Array2<f64>,
    pub setup: SetupVariant,
    pub folds: FoldAssignment,
    pub warnings: Vec<String>,
}

impl CrossfitPredictions {
    pub fn n(&self) -> usize {
        self.eta1.nrows()
    }

    /// Mean squared eta1-eta2 gap per component.
    pub fn component_gaps(&self) -> [f64; 3] {
        let n = self.n() as f64;
        let mut out = [0.0; 3];
        for j in 0..3 {
            out[j] = (0..self.n())
                .map(|i| {
                    let g = self.eta1[[i, j]] - self.eta2[[i, j]];
                    g * g
                })
                .sum::<f64>()
                / n;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CrossfitOptions {
    /// Fit separate per-arm outcome models when `d` is binary and both arms
    /// have at least `stratify_min` complement observations.
    pub stratify_d: bool,
    pub stratify_min: usize,
    pub inner_folds: usize,
}

impl Default for CrossfitOptions {
    fn default() -> Self {
        CrossfitOptions {
            stratify_d: false,
            stratify_min: 100,
            inner_folds: INNER_CV_FOLDS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Block {
    D,
    M,
    X,
    W,
    Z1,
    Z2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    Y,
    M,
}

struct RegressionSpec {
    target: Target,
    blocks: &'static [Block],
}

/// The six regressions of a setup, eta1 components first.
fn regressions(variant: SetupVariant) -> [RegressionSpec; 6] {
    use Block::*;
    let spec = |target, blocks| RegressionSpec { target, blocks };
    match variant {
        SetupVariant::Baseline => [
            spec(Target::Y, &[D, X][..]),
            spec(Target::M, &[D, X][..]),
            spec(Target::Y, &[D, M, X][..]),
            spec(Target::Y, &[D, X, Z1][..]),
            spec(Target::M, &[D, X, Z1][..]),
            spec(Target::Y, &[D, M, X, Z2][..]),
        ],
        SetupVariant::Z2Linked => [
            spec(Target::Y, &[D, X, Z2][..]),
            spec(Target::M, &[D, X, Z2][..]),
            spec(Target::Y, &[D, M, X][..]),
            spec(Target::Y, &[D, X, Z2, Z1][..]),
            spec(Target::M, &[D, X, Z2, Z1][..]),
            spec(Target::Y, &[D, M, X, Z2][..]),
        ],
        SetupVariant::PostTreatment => [
            spec(Target::Y, &[D, X][..]),
            spec(Target::M, &[D, X][..]),
            spec(Target::Y, &[D, M, X, W][..]),
            spec(Target::Y, &[D, X, Z1][..]),
            spec(Target::M, &[D, X, Z1][..]),
            spec(Target::Y, &[D, M, X, W, Z2][..]),
        ],
    }
}

fn block_width(data: &Dataset, b: Block) -> usize {
    match b {
        Block::D | Block::M => 1,
        Block::X => data.x.ncols(),
        Block::W => data.w.as_ref().map_or(0, |w| w.ncols()),
        Block::Z1 => data.z1.ncols(),
        Block::Z2 => data.z2.ncols(),
    }
}

/// Assembles a column-major design over all observations for the listed
/// blocks, in block order.
pub(crate) fn build_design(data: &Dataset, blocks: &[Block]) -> ColMat {
    let n = data.n();
    let p: usize = blocks.iter().map(|&b| block_width(data, b)).sum();
    let mut m = ColMat::zeros(n, p);
    let mut j = 0;
    for &b in blocks {
        match b {
            Block::D => {
                m.col_mut(j).copy_from_slice(data.d.as_slice().unwrap());
                j += 1;
            }
            Block::M => {
                m.col_mut(j).copy_from_slice(data.m.as_slice().unwrap());
                j += 1;
            }
            Block::X => {
                for c in 0..data.x.ncols() {
                    let dst = m.col_mut(j);
                    for (i, v) in data.x.column(c).iter().enumerate() {
                        dst[i] = *v;
                    }
                    j += 1;
                }
            }
            Block::W => {
                if let Some(w) = &data.w {
                    for c in 0..w.ncols() {
                        let dst = m.col_mut(j);
                        for (i, v) in w.column(c).iter().enumerate() {
                            dst[i] = *v;
                        }
                        j += 1;
                    }
                }
            }
            Block::Z1 => {
                for c in 0..data.z1.ncols() {
                    let dst = m.col_mut(j);
                    for (i, v) in data.z1.column(c).iter().enumerate() {
                        dst[i] = *v;
                    }
                    j += 1;
                }
            }
            Block::Z2 => {
                for c in 0..data.z2.ncols() {
                    let dst = m.col_mut(j);
                    for (i, v) in data.z2.column(c).iter().enumerate() {
                        dst[i] = *v;
                    }
                    j += 1;
                }
            }
        }
    }
    m
}

/// A complement-fitted model, possibly stratified by treatment arm.
enum FoldModel {
    Pooled(FittedModel),
    ByArm {
        treated: FittedModel,
        control: FittedModel,
    },
}

impl FoldModel {
    fn predict(&self, design: &ColMat, d: &Array1<f64>, rows: &[usize]) -> Vec<f64> {
        match self {
            FoldModel::Pooled(m) => {
                let mut out = vec![0.0; rows.len()];
                m.predict_into(design, rows, &mut out);
                out
            }
            FoldModel::ByArm { treated, control } => {
                let mut out = vec![0.0; rows.len()];
                // Predict each row with its own arm's model.
                for arm in [0.0, 1.0] {
                    let arm_rows: Vec<usize> =
                        rows.iter().copied().filter(|&i| d[i] == arm).collect();
                    if arm_rows.is_empty() {
                        continue;
                    }
                    let model = if arm == 1.0 { treated } else { control };
                    let mut preds = vec![0.0; arm_rows.len()];
                    model.predict_into(design, &arm_rows, &mut preds);
                    for (p, &i) in preds.iter().zip(&arm_rows) {
                        let pos = rows.iter().position(|&r| r == i).unwrap();
                        out[pos] = *p;
                    }
                }
                out
            }
        }
    }
}

fn fit_fold_model(
    design: &ColMat,
    y_full: &[f64],
    train_rows: &[usize],
    data: &Dataset,
    opts: &CrossfitOptions,
) -> Result<FoldModel> {
    let inner = opts.inner_folds.min(train_rows.len()).max(2);
    if opts.stratify_d && data.d_is_binary() {
        let treated_rows: Vec<usize> = train_rows.iter().copied().filter(|&i| data.d[i] == 1.0).collect();
        let control_rows: Vec<usize> = train_rows.iter().copied().filter(|&i| data.d[i] == 0.0).collect();
        if treated_rows.len() >= opts.stratify_min && control_rows.len() >= opts.stratify_min {
            let fit_arm = |rows: &[usize]| -> Result<FittedModel> {
                let tm = design.gather(rows);
                let ty: Vec<f64> = rows.iter().map(|&i| y_full[i]).collect();
                lasso::cv_fit(&tm, &ty, opts.inner_folds.min(rows.len()).max(2))
            };
            return Ok(FoldModel::ByArm {
                treated: fit_arm(&treated_rows)?,
                control: fit_arm(&control_rows)?,
            });
        }
    }
    let tm = design.gather(train_rows);
    let ty: Vec<f64> = train_rows.iter().map(|&i| y_full[i]).collect();
    Ok(FoldModel::Pooled(lasso::cv_fit(&tm, &ty, inner)?))
}

/// Cross-fits the six conditional-mean regressions of a setup.
///
/// For each fold, each regression is fitted on the complement (penalty
/// selected there by inner cross-validation) and predicted on the fold.
pub fn crossfit_means(
    data: &Dataset,
    variant: SetupVariant,
    k: usize,
    seed: u64,
) -> Result<CrossfitPredictions> {
    let folds = FoldAssignment::new(data.n(), k, seed)?;
    crossfit_means_with_folds(data, variant, &folds, &CrossfitOptions::default())
}

/// As [`crossfit_means`] with an explicit fold assignment and options.
pub fn crossfit_means_with_folds(
    data: &Dataset,
    variant: SetupVariant,
    folds: &FoldAssignment,
    opts: &CrossfitOptions,
) -> Result<CrossfitPredictions> {
    data.validate()?;
    if variant == SetupVariant::PostTreatment
        && data.w.as_ref().map_or(true, |w| w.ncols() == 0)
    {
        return Err(Error::InvalidData(
            "post-treatment setup requires a W covariate block".into(),
        ));
    }
    let n = data.n();
    if folds.fold_of.len() != n {
        return Err(Error::InvalidArgument(
            "fold assignment length does not match the sample".into(),
        ));
    }
    let mut warnings = Vec::new();
    if n / folds.k < 20 {
        warnings.push(format!(
            "folds of roughly {} observations may be too small for stable fits",
            n / folds.k
        ));
    }

    let specs = regressions(variant);
    let designs: Vec<ColMat> = specs.iter().map(|s| build_design(data, s.blocks)).collect();
    let targets: Vec<&[f64]> = specs
        .iter()
        .map(|s| match s.target {
            Target::Y => data.y.as_slice().unwrap(),
            Target::M => data.m.as_slice().unwrap(),
        })
        .collect();

    // Fold x regression tasks are independent; each returns the fold's rows
    // and predictions for one eta column.
    let tasks: Vec<(usize, usize)> = (0..folds.k)
        .flat_map(|f| (0..6).map(move |r| (f, r)))
        .collect();
    let results: Vec<(usize, usize, Vec<usize>, Vec<f64>)> = tasks
        .into_par_iter()
        .map(|(f, r)| {
            let train = folds.complement_rows(f);
            let held = folds.fold_rows(f);
            let model = fit_fold_model(&designs[r], targets[r], &train, data, opts)?;
            let preds = model.predict(&designs[r], &data.d, &held);
            Ok((f, r, held, preds))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut eta1 = Array2::zeros((n, 3));
    let mut eta2 = Array2::zeros((n, 3));
    for (_, r, held, preds) in results {
        let (mat, col) = if r < 3 {
            (&mut eta1, r)
        } else {
            (&mut eta2, r - 3)
        };
        for (&i, &p) in held.iter().zip(&preds) {
            mat[[i, col]] = p;
        }
    }
    Ok(CrossfitPredictions {
        eta1,
        eta2,
        setup: variant,
        folds: folds.clone(),
        warnings,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn toy_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut randn = |k: usize| -> Vec<f64> {
            (0..k).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        let p = 5;
        let x = Array2::from_shape_vec((n, p), randn(n * p)).unwrap();
        let z1 = Array2::from_shape_vec((n, 1), randn(n)).unwrap();
        let z2 = Array2::from_shape_vec((n, 1), randn(n)).unwrap();
        let u = randn(3 * n);
        let d = Array1::from_iter(
            (0..n).map(|i| f64::from(x[[i, 0]] + 0.5 * z1[[i, 0]] + u[i] > 0.0)),
        );
        let m = Array1::from_iter(
            (0..n).map(|i| 0.5 * d[i] + 0.5 * z2[[i, 0]] + x[[i, 0]] + u[n + i]),
        );
        let y = Array1::from_iter(
            (0..n).map(|i| d[i] + 0.5 * m[i] + x[[i, 0]] + u[2 * n + i]),
        );
        Dataset {
            y,
            d,
            m,
            z1,
            z2,
            x,
            w: None,
        }
    }

    #[test]
    fn fold_sizes_differ_by_at_most_one() {
        for (n, k) in [(10, 3), (100, 7), (30, 30), (11, 2)] {
            let fa = FoldAssignment::new(n, k, 9).unwrap();
            let sizes: Vec<usize> = (0..k).map(|f| fa.fold_rows(f).len()).collect();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(hi - lo <= 1, "n={n} k={k} sizes={sizes:?}");
            assert_eq!(sizes.iter().sum::<usize>(), n);
        }
        assert!(FoldAssignment::new(5, 6, 0).is_err());
        assert!(FoldAssignment::new(5, 1, 0).is_err());
    }

    #[test]
    fn fold_assignment_reproducible() {
        let a = FoldAssignment::new(200, 5, 42).unwrap();
        let b = FoldAssignment::new(200, 5, 42).unwrap();
        let c = FoldAssignment::new(200, 5, 43).unwrap();
        assert_eq!(a.fold_of, b.fold_of);
        assert_ne!(a.fold_of, c.fold_of);
    }

    #[test]
    fn crossfit_deterministic_and_shaped() {
        let data = toy_dataset(120, 1);
        let a = crossfit_means(&data, SetupVariant::Baseline, 2, 7).unwrap();
        let b = crossfit_means(&data, SetupVariant::Baseline, 2, 7).unwrap();
        assert_eq!(a.eta1, b.eta1);
        assert_eq!(a.eta2, b.eta2);
        assert_eq!(a.eta1.dim(), (120, 3));
    }

    #[test]
    fn posttreatment_without_w_errors() {
        let data = toy_dataset(60, 2);
        let err = crossfit_means(&data, SetupVariant::PostTreatment, 2, 0);
        assert!(matches!(err, Err(Error::InvalidData(_))));
    }

    #[test]
    fn small_folds_warn() {
        let data = toy_dataset(60, 3);
        let preds = crossfit_means(&data, SetupVariant::Baseline, 4, 0).unwrap();
        assert!(!preds.warnings.is_empty());
    }

    #[test]
    fn honesty_within_fold() {
        // Permuting two observations of the same fold permutes exactly
        // their predictions: fits depend only on the complement.
        let data = toy_dataset(80, 4);
        let folds = FoldAssignment::new(80, 2, 11).unwrap();
        let opts = CrossfitOptions::default();
        let base = crossfit_means_with_folds(&data, SetupVariant::Baseline, &folds, &opts).unwrap();

        let rows0 = folds.fold_rows(0);
        let (i, j) = (rows0[0], rows0[1]);
        let mut swapped = data.clone();
        for arr in [&mut swapped.y, &mut swapped.d, &mut swapped.m] {
            arr.swap(i, j);
        }
        for mat in [&mut swapped.z1, &mut swapped.z2, &mut swapped.x] {
            for c in 0..mat.ncols() {
                let (a, b) = (mat[[i, c]], mat[[j, c]]);
                mat[[i, c]] = b;
                mat[[j, c]] = a;
            }
        }
        let perm = crossfit_means_with_folds(&swapped, SetupVariant::Baseline, &folds, &opts).unwrap();
        for col in 0..3 {
            assert_eq!(base.eta1[[i, col]], perm.eta1[[j, col]]);
            assert_eq!(base.eta1[[j, col]], perm.eta1[[i, col]]);
            assert_eq!(base.eta2[[i, col]], perm.eta2[[j, col]]);
            assert_eq!(base.eta2[[j, col]], perm.eta2[[i, col]]);
        }
    }

    #[test]
    fn leave_one_out_smoke() {
        let data = toy_dataset(30, 5);
        let preds = crossfit_means(&data, SetupVariant::Baseline, 30, 0).unwrap();
        assert!(preds.eta1.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gap_shrinks_when_instrument_is_irrelevant() {
        // Instrument coefficient zero in truth for component 1: the mean
        // squared eta gap shrinks with n.
        let small = crossfit_means(&toy_dataset(200, 6), SetupVariant::Baseline, 2, 1).unwrap();
        let large = crossfit_means(&toy_dataset(1600, 6), SetupVariant::Baseline, 2, 1).unwrap();
        let (gs, gl) = (small.component_gaps(), large.component_gaps());
        assert!(
            gl[0] < gs[0].max(1e-4),
            "gap did not shrink: {:?} -> {:?}",
            gs,
            gl
        );
    }
}
