//! Double machine learning effect estimators: total and natural
//! direct/indirect mediation effects, and the dynamic average effect of a
//! treatment sequence, both with propensity trimming.
//!
//! Multiply robust efficient-score forms are used throughout: inverse
//! propensity weighted residuals plus regression plug-ins, with all
//! nuisances (propensities, outcome regressions, nested regressions) fit
//! by cross-validated lasso on complement folds. Propensities come from
//! linear probability fits clipped to [0.001, 0.999] before any trimming
//! decision; observations with propensities (or propensity products, for
//! the sequence effect) outside the trimming band are discarded from every
//! score mean so the effect decomposition stays internally consistent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as GaussDist};

use crate::ml::lasso::{cv_fit, ColMat, FittedModel};
use crate::ml::{build_design, Block, Dataset, FoldAssignment, INNER_CV_FOLDS};
use crate::{Error, Result};

/// Clipping bounds applied to estimated propensities before trimming.
pub const PROPENSITY_CLIP: (f64, f64) = (0.001, 0.999);

/// Discard band for estimated propensities.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrimPolicy {
    pub lower: f64,
}

impl TrimPolicy {
    pub fn new(lower: f64) -> Result<Self> {
        if !(lower.is_finite() && lower > 0.0 && lower < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "trimming threshold must lie in (0, 0.5), got {lower}"
            )));
        }
        Ok(TrimPolicy { lower })
    }

    pub fn upper(&self) -> f64 {
        1.0 - self.lower
    }

    fn keeps(&self, p: f64) -> bool {
        p >= self.lower && p <= self.upper()
    }
}

impl Default for TrimPolicy {
    fn default() -> Self {
        TrimPolicy { lower: 0.01 }
    }
}

/// Mediation effect estimates: total, direct under treatment and control,
/// indirect under treatment and control, with standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectEstimates {
    pub total: f64,
    pub dir1: f64,
    pub dir0: f64,
    pub indir1: f64,
    pub indir0: f64,
    /// Standard errors in the same order (total, dir1, dir0, indir1, indir0).
    pub ses: [f64; 5],
    pub n_trimmed: usize,
    pub n_used: usize,
}

impl EffectEstimates {
    pub fn point_estimates(&self) -> [f64; 5] {
        [self.total, self.dir1, self.dir0, self.indir1, self.indir0]
    }
}

/// Dynamic average treatment effect of the (1,1) versus (0,0) sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicEffect {
    pub ate: f64,
    pub se: f64,
    pub pval: f64,
    pub n_trimmed: usize,
    pub n_used: usize,
}

fn clip(p: f64) -> f64 {
    p.clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1)
}

/// Standard-normal two-sided p-value for an estimate and its standard error.
pub fn two_sided_pval(estimate: f64, se: f64) -> f64 {
    if se <= 0.0 {
        return 1.0;
    }
    let normal = GaussDist::standard();
    2.0 * (1.0 - normal.cdf((estimate / se).abs()))
}

fn require_binary_d(data: &Dataset) -> Result<()> {
    if !data.d_is_binary() {
        return Err(Error::InvalidData(
            "treatment must be binary with both arms present (degenerate propensity otherwise)"
                .into(),
        ));
    }
    Ok(())
}

/// Cross-fitted nuisance predictions for the mediation scores.
struct MediationNuisances {
    /// P(D=1 | X), clipped.
    p_x: Vec<f64>,
    /// P(D=1 | M, X), clipped.
    p_mx: Vec<f64>,
    /// E[Y | D=d, X] by arm.
    mu_y_dx: [Vec<f64>; 2],
    /// E[Y | D=d, M, X] by arm.
    mu_y_dmx: [Vec<f64>; 2],
    /// E[ mu_y_dmx[1] | D=0, X ] and E[ mu_y_dmx[0] | D=1, X ].
    nu_10: Vec<f64>,
    nu_01: Vec<f64>,
}

fn fit_on(design: &ColMat, y: &[f64], rows: &[usize]) -> Result<FittedModel> {
    let tm = design.gather(rows);
    let ty: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    cv_fit(&tm, &ty, INNER_CV_FOLDS.min(rows.len()).max(2))
}

fn mediation_nuisances(
    data: &Dataset,
    folds: &FoldAssignment,
) -> Result<MediationNuisances> {
    let n = data.n();
    let d_col = data.d.as_slice().unwrap();
    let y_col = data.y.as_slice().unwrap();

    let design_x = build_design(data, &[Block::X]);
    let design_mx = build_design(data, &[Block::M, Block::X]);
    let design_dx = build_design(data, &[Block::D, Block::X]);
    let design_dmx = build_design(data, &[Block::D, Block::M, Block::X]);

    let mut nuis = MediationNuisances {
        p_x: vec![0.0; n],
        p_mx: vec![0.0; n],
        mu_y_dx: [vec![0.0; n], vec![0.0; n]],
        mu_y_dmx: [vec![0.0; n], vec![0.0; n]],
        nu_10: vec![0.0; n],
        nu_01: vec![0.0; n],
    };

    // One task per fold; each fills the held-out slice of every nuisance.
    let per_fold: Vec<_> = (0..folds.k)
        .into_par_iter()
        .map(|f| -> Result<_> {
            let train = folds.complement_rows(f);
            let held = folds.fold_rows(f);
            let m_held = held.clone();

            let pscore_x = fit_on(&design_x, d_col, &train)?;
            let pscore_mx = fit_on(&design_mx, d_col, &train)?;
            let outcome_dx = fit_on(&design_dx, y_col, &train)?;
            let outcome_dmx = fit_on(&design_dmx, y_col, &train)?;

            let mut p_x = vec![0.0; held.len()];
            pscore_x.predict_into(&design_x, &held, &mut p_x);
            let mut p_mx = vec![0.0; held.len()];
            pscore_mx.predict_into(&design_mx, &held, &mut p_mx);

            let mut mu_y_dx = [vec![0.0; held.len()], vec![0.0; held.len()]];
            let mut mu_y_dmx = [vec![0.0; held.len()], vec![0.0; held.len()]];
            for arm in 0..2 {
                outcome_dx.predict_override_into(
                    &design_dx,
                    &held,
                    &[(0, arm as f64)],
                    &mut mu_y_dx[arm],
                );
                outcome_dmx.predict_override_into(
                    &design_dmx,
                    &held,
                    &[(0, arm as f64)],
                    &mut mu_y_dmx[arm],
                );
            }

            // Nested regressions: project the complement's cross-world
            // outcome predictions on X within the opposite arm.
            let mut nested = [vec![0.0; held.len()], vec![0.0; held.len()]];
            for (slot, (inner_arm, outer_arm)) in [(1usize, 0usize), (0usize, 1usize)]
                .into_iter()
                .enumerate()
            {
                let mut cross_world = vec![0.0; train.len()];
                outcome_dmx.predict_override_into(
                    &design_dmx,
                    &train,
                    &[(0, inner_arm as f64)],
                    &mut cross_world,
                );
                let opposite: Vec<usize> = train
                    .iter()
                    .copied()
                    .filter(|&i| d_col[i] == outer_arm as f64)
                    .collect();
                if opposite.len() < 2 {
                    return Err(Error::InvalidData(
                        "too few observations in one treatment arm".into(),
                    ));
                }
                // Targets live on train indices; remap to full-length space.
                let mut target_full = vec![0.0; n];
                for (pos, &i) in train.iter().enumerate() {
                    target_full[i] = cross_world[pos];
                }
                let nested_model = fit_on(&design_x, &target_full, &opposite)?;
                nested_model.predict_into(&design_x, &held, &mut nested[slot]);
            }

            Ok((m_held, p_x, p_mx, mu_y_dx, mu_y_dmx, nested))
        })
        .collect::<Result<Vec<_>>>()?;

    for (held, p_x, p_mx, mu_y_dx, mu_y_dmx, nested) in per_fold {
        for (pos, &i) in held.iter().enumerate() {
            nuis.p_x[i] = clip(p_x[pos]);
            nuis.p_mx[i] = clip(p_mx[pos]);
            for arm in 0..2 {
                nuis.mu_y_dx[arm][i] = mu_y_dx[arm][pos];
                nuis.mu_y_dmx[arm][i] = mu_y_dmx[arm][pos];
            }
            nuis.nu_10[i] = nested[0][pos];
            nuis.nu_01[i] = nested[1][pos];
        }
    }
    Ok(nuis)
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Estimates the five mediation effects by cross-fitted multiply robust
/// scores, discarding observations whose clipped propensities fall outside
/// the trimming band.
pub fn estimate_mediation(
    data: &Dataset,
    trim: TrimPolicy,
    folds: usize,
    seed: u64,
) -> Result<EffectEstimates> {
    data.validate()?;
    require_binary_d(data)?;
    let n = data.n();
    let fold_assignment = FoldAssignment::new(n, folds, seed)?;
    let nuis = mediation_nuisances(data, &fold_assignment)?;

    let kept: Vec<usize> = (0..n)
        .filter(|&i| trim.keeps(nuis.p_x[i]) && trim.keeps(nuis.p_mx[i]))
        .collect();
    if kept.len() < 2 {
        return Err(Error::InvalidData(format!(
            "trimming at {} removed all but {} observations",
            trim.lower,
            kept.len()
        )));
    }

    // Efficient scores for the four potential-outcome means.
    let mut psi11 = Vec::with_capacity(kept.len());
    let mut psi00 = Vec::with_capacity(kept.len());
    let mut psi10 = Vec::with_capacity(kept.len());
    let mut psi01 = Vec::with_capacity(kept.len());
    for &i in &kept {
        let (d, y) = (data.d[i], data.y[i]);
        let (p, pm) = (nuis.p_x[i], nuis.p_mx[i]);
        let (mu1x, mu0x) = (nuis.mu_y_dx[1][i], nuis.mu_y_dx[0][i]);
        let (mu1mx, mu0mx) = (nuis.mu_y_dmx[1][i], nuis.mu_y_dmx[0][i]);

        psi11.push(d * (y - mu1x) / p + mu1x);
        psi00.push((1.0 - d) * (y - mu0x) / (1.0 - p) + mu0x);
        psi10.push(
            d * (1.0 - pm) / (pm * (1.0 - p)) * (y - mu1mx)
                + (1.0 - d) / (1.0 - p) * (mu1mx - nuis.nu_10[i])
                + nuis.nu_10[i],
        );
        psi01.push(
            (1.0 - d) * pm / ((1.0 - pm) * p) * (y - mu0mx)
                + d / p * (mu0mx - nuis.nu_01[i])
                + nuis.nu_01[i],
        );
    }

    let contrast = |a: &[f64], b: &[f64]| -> (f64, f64) {
        let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        mean_and_se(&diffs)
    };
    let (total, se_total) = contrast(&psi11, &psi00);
    let (dir1, se_dir1) = contrast(&psi11, &psi01);
    let (dir0, se_dir0) = contrast(&psi10, &psi00);
    let (indir1, se_indir1) = contrast(&psi11, &psi10);
    let (indir0, se_indir0) = contrast(&psi01, &psi00);

    Ok(EffectEstimates {
        total,
        dir1,
        dir0,
        indir1,
        indir0,
        ses: [se_total, se_dir1, se_dir0, se_indir1, se_indir0],
        n_trimmed: n - kept.len(),
        n_used: kept.len(),
    })
}

/// Estimates `E[Y(1,1) - Y(0,0)]` under sequential ignorability with
/// nested cross-fitted regressions and inverse probability weights,
/// trimming on the product of the treatment and mediator propensities.
pub fn estimate_dynamic_ate(
    data: &Dataset,
    trim: TrimPolicy,
    folds: usize,
    seed: u64,
) -> Result<DynamicEffect> {
    data.validate()?;
    require_binary_d(data)?;
    if !data.m_is_binary() {
        return Err(Error::InvalidData(
            "sequence effects need a binary mediator with both values present".into(),
        ));
    }
    let n = data.n();
    let fold_assignment = FoldAssignment::new(n, folds, seed)?;
    let d_col = data.d.as_slice().unwrap();
    let m_col = data.m.as_slice().unwrap();
    let y_col = data.y.as_slice().unwrap();
    let with_w = data.w.as_ref().is_some_and(|w| w.ncols() > 0);

    let design_x = build_design(data, &[Block::X]);
    let m_blocks: &[Block] = if with_w {
        &[Block::D, Block::X, Block::W]
    } else {
        &[Block::D, Block::X]
    };
    let y_blocks: &[Block] = if with_w {
        &[Block::D, Block::M, Block::X, Block::W]
    } else {
        &[Block::D, Block::M, Block::X]
    };
    let design_m = build_design(data, m_blocks);
    let design_y = build_design(data, y_blocks);

    // Cross-fitted nuisances: treatment propensity, per-arm mediator
    // propensity, per-path outcome regression, per-path nested regression.
    let mut p_d = vec![0.0; n];
    let mut p_m = [vec![0.0; n], vec![0.0; n]];
    let mut mu = [vec![0.0; n], vec![0.0; n]]; // path (0,0) and (1,1)
    let mut nu = [vec![0.0; n], vec![0.0; n]];

    let per_fold: Vec<_> = (0..fold_assignment.k)
        .into_par_iter()
        .map(|f| -> Result<_> {
            let train = fold_assignment.complement_rows(f);
            let held = fold_assignment.fold_rows(f);

            let treat_model = fit_on(&design_x, d_col, &train)?;
            let med_model = fit_on(&design_m, m_col, &train)?;
            let outcome_model = fit_on(&design_y, y_col, &train)?;

            let mut p_d_f = vec![0.0; held.len()];
            treat_model.predict_into(&design_x, &held, &mut p_d_f);

            let mut p_m_f = [vec![0.0; held.len()], vec![0.0; held.len()]];
            let mut mu_f = [vec![0.0; held.len()], vec![0.0; held.len()]];
            let mut nu_f = [vec![0.0; held.len()], vec![0.0; held.len()]];
            for path in 0..2 {
                let dm = path as f64;
                med_model.predict_override_into(&design_m, &held, &[(0, dm)], &mut p_m_f[path]);
                outcome_model.predict_override_into(
                    &design_y,
                    &held,
                    &[(0, dm), (1, dm)],
                    &mut mu_f[path],
                );
                if with_w {
                    // Nested stage: project the outcome prediction, which
                    // depends on W, onto X within the path's treatment arm.
                    let mut cross = vec![0.0; train.len()];
                    outcome_model.predict_override_into(
                        &design_y,
                        &train,
                        &[(0, dm), (1, dm)],
                        &mut cross,
                    );
                    let arm_rows: Vec<usize> = train
                        .iter()
                        .copied()
                        .filter(|&i| d_col[i] == dm)
                        .collect();
                    if arm_rows.len() < 2 {
                        return Err(Error::InvalidData(
                            "too few observations in one treatment arm".into(),
                        ));
                    }
                    let mut target_full = vec![0.0; n];
                    for (pos, &i) in train.iter().enumerate() {
                        target_full[i] = cross[pos];
                    }
                    let nested = fit_on(&design_x, &target_full, &arm_rows)?;
                    nested.predict_into(&design_x, &held, &mut nu_f[path]);
                } else {
                    // Without W the inner conditional mean is the outcome
                    // regression itself.
                    nu_f[path].copy_from_slice(&mu_f[path]);
                }
            }
            Ok((held, p_d_f, p_m_f, mu_f, nu_f))
        })
        .collect::<Result<Vec<_>>>()?;

    for (held, p_d_f, p_m_f, mu_f, nu_f) in per_fold {
        for (pos, &i) in held.iter().enumerate() {
            p_d[i] = clip(p_d_f[pos]);
            for path in 0..2 {
                p_m[path][i] = clip(p_m_f[path][pos]);
                mu[path][i] = mu_f[path][pos];
                nu[path][i] = nu_f[path][pos];
            }
        }
    }

    // Keep observations where both treatment-path propensity products lie
    // inside the band.
    let kept: Vec<usize> = (0..n)
        .filter(|&i| {
            let prod11 = p_d[i] * p_m[1][i];
            let prod00 = (1.0 - p_d[i]) * (1.0 - p_m[0][i]);
            trim.keeps(prod11) && trim.keeps(prod00)
        })
        .collect();
    if kept.len() < 2 {
        return Err(Error::InvalidData(format!(
            "trimming at {} removed all but {} observations",
            trim.lower,
            kept.len()
        )));
    }

    let mut diffs = Vec::with_capacity(kept.len());
    for &i in &kept {
        let (d, m, y) = (d_col[i], m_col[i], y_col[i]);
        let psi11 = d * m / (p_d[i] * p_m[1][i]) * (y - mu[1][i])
            + d / p_d[i] * (mu[1][i] - nu[1][i])
            + nu[1][i];
        let psi00 = (1.0 - d) * (1.0 - m) / ((1.0 - p_d[i]) * (1.0 - p_m[0][i]))
            * (y - mu[0][i])
            + (1.0 - d) / (1.0 - p_d[i]) * (mu[0][i] - nu[0][i])
            + nu[0][i];
        diffs.push(psi11 - psi00);
    }
    let (ate, se) = mean_and_se(&diffs);
    let normal = GaussDist::standard();
    let pval = if se > 0.0 {
        2.0 * (1.0 - normal.cdf((ate / se).abs()))
    } else {
        1.0
    };
    Ok(DynamicEffect {
        ate,
        se,
        pval,
        n_trimmed: n - kept.len(),
        n_used: kept.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{self, DgpConfig, TRUE_DYNAMIC_EFFECT};
    use ndarray::{Array1, Array2};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn trim_policy_bounds() {
        assert!(TrimPolicy::new(0.0).is_err());
        assert!(TrimPolicy::new(0.5).is_err());
        let t = TrimPolicy::new(0.05).unwrap();
        assert_eq!(t.upper(), 0.95);
        assert!(t.keeps(0.5));
        assert!(!t.keeps(0.01));
    }

    #[test]
    fn constant_treatment_rejected() {
        let mut data = crate::ml::tests::toy_dataset(100, 1);
        data.d.fill(1.0);
        let err = estimate_mediation(&data, TrimPolicy::default(), 2, 0);
        assert!(matches!(err, Err(Error::InvalidData(_))));
    }

    #[test]
    fn decomposition_identities_hold_exactly() {
        let data = dgp::simulate(&DgpConfig {
            n: 600,
            p: 5,
            seed: 21,
            ..DgpConfig::default()
        })
        .unwrap();
        let est = estimate_mediation(&data, TrimPolicy::default(), 2, 1).unwrap();
        assert!((est.total - (est.dir1 + est.indir0)).abs() < 1e-10);
        assert!((est.total - (est.dir0 + est.indir1)).abs() < 1e-10);
        assert_eq!(est.n_used + est.n_trimmed, 600);
    }

    #[test]
    fn trimming_is_monotone_in_threshold() {
        let data = dgp::simulate(&DgpConfig {
            n: 800,
            p: 5,
            seed: 22,
            ..DgpConfig::default()
        })
        .unwrap();
        let mut last = 0usize;
        for lower in [0.001, 0.01, 0.05, 0.10] {
            let est =
                estimate_mediation(&data, TrimPolicy::new(lower).unwrap(), 2, 3).unwrap();
            assert!(est.n_trimmed >= last, "n_trimmed fell at {lower}");
            last = est.n_trimmed;
        }
    }

    /// Randomized treatment and mediator, no covariate effects: the
    /// estimator must agree with the difference in means.
    #[test]
    fn agrees_with_difference_in_means_under_randomization() {
        let n = 4000;
        let mut rng = crate::seed::rng(23, 0);
        let mut norm = || -> f64 { StandardNormal.sample(&mut rng) };
        let mut d = Array1::zeros(n);
        let mut m = Array1::zeros(n);
        let mut y = Array1::zeros(n);
        let mut z1 = Array2::zeros((n, 1));
        let mut z2 = Array2::zeros((n, 1));
        let mut x = Array2::zeros((n, 3));
        for i in 0..n {
            for j in 0..3 {
                x[[i, j]] = norm();
            }
            z1[[i, 0]] = norm();
            z2[[i, 0]] = norm();
            d[i] = f64::from(norm() > 0.0);
            m[i] = 0.5 * d[i] + 0.5 * z2[[i, 0]] + norm();
            y[i] = d[i] + 0.5 * m[i] + norm();
        }
        let data = Dataset {
            y: y.clone(),
            d: d.clone(),
            m,
            z1,
            z2,
            x,
            w: None,
        };
        let est = estimate_mediation(&data, TrimPolicy::default(), 2, 5).unwrap();

        let treated: Vec<f64> = (0..n).filter(|&i| d[i] == 1.0).map(|i| y[i]).collect();
        let control: Vec<f64> = (0..n).filter(|&i| d[i] == 0.0).map(|i| y[i]).collect();
        let dim = treated.iter().sum::<f64>() / treated.len() as f64
            - control.iter().sum::<f64>() / control.len() as f64;
        let mc_se = (1.0 / treated.len() as f64 + 1.0 / control.len() as f64).sqrt()
            * y.std(1.0);
        assert!(
            (est.total - dim).abs() < 3.0 * mc_se,
            "total {} vs diff-in-means {}",
            est.total,
            dim
        );
    }

    #[test]
    fn dynamic_effect_recovers_truth_on_binary_mediator() {
        let data = dgp::simulate(&DgpConfig {
            n: 4000,
            p: 5,
            binary_m: true,
            seed: 24,
            ..DgpConfig::default()
        })
        .unwrap();
        let est = estimate_dynamic_ate(&data, TrimPolicy::default(), 2, 7).unwrap();
        assert!(
            (est.ate - TRUE_DYNAMIC_EFFECT).abs() < 3.0 * est.se.max(0.02),
            "ate {} se {}",
            est.ate,
            est.se
        );
        assert!(est.pval < 0.01);

        // Tightening the band produces a very similar estimate.
        let wide = estimate_dynamic_ate(&data, TrimPolicy::new(0.05).unwrap(), 2, 7).unwrap();
        assert!(
            (wide.ate - est.ate).abs() < 2.0 * est.se.max(wide.se),
            "estimates moved too much: {} vs {}",
            wide.ate,
            est.ate
        );

        // A continuous mediator is rejected.
        let cont = dgp::simulate(&DgpConfig {
            n: 500,
            p: 5,
            seed: 25,
            ..DgpConfig::default()
        })
        .unwrap();
        assert!(estimate_dynamic_ate(&cont, TrimPolicy::default(), 2, 0).is_err());
    }

    #[test]
    fn covariate_order_invariance() {
        let data = dgp::simulate(&DgpConfig {
            n: 500,
            p: 6,
            seed: 26,
            ..DgpConfig::default()
        })
        .unwrap();
        let mut flipped = data.clone();
        let p = flipped.x.ncols();
        for i in 0..flipped.x.nrows() {
            for j in 0..p {
                flipped.x[[i, j]] = data.x[[i, p - 1 - j]];
            }
        }
        let a = estimate_mediation(&data, TrimPolicy::default(), 2, 9).unwrap();
        let b = estimate_mediation(&flipped, TrimPolicy::default(), 2, 9).unwrap();
        assert!(
            (a.total - b.total).abs() < 1e-6,
            "column order changed the estimate: {} vs {}",
            a.total,
            b.total
        );
        assert_eq!(a.n_trimmed, b.n_trimmed);
    }
}
