//! Monte Carlo driver for the simulation tables.
//!
//! One cell = one (design, n, delta, gamma) configuration replicated
//! `reps` times: simulate, run the test with 2-fold cross-fitting, and
//! optionally estimate the mediation effects. Replication seeds derive
//! from the cell seed and the replication index, so runs are resumable
//! and scheduling-independent. Per-replication results stream to a
//! line-delimited checkpoint file in rep order; aggregation is a fold
//! over those records.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{self, Design, DgpConfig, TRUE_EFFECTS};
use crate::effects::{estimate_mediation, TrimPolicy};
use crate::idtest::{run_test, TestSetup};
use crate::ml::SetupVariant;
use crate::seed;
use crate::{Error, Result};

/// Defaults from the simulation protocol.
pub const SIMULATION_FOLDS: usize = 2;
pub const REJECTION_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellConfig {
    pub design: Design,
    pub n: usize,
    pub p: usize,
    pub delta: f64,
    pub gamma: f64,
    pub reps: usize,
    pub seed: u64,
    pub folds: usize,
    pub trim: TrimPolicy,
    /// Also run the mediation effect estimator each replication.
    pub with_effects: bool,
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl CellConfig {
    pub fn new(design: Design, n: usize, delta: f64, gamma: f64, reps: usize, seed: u64) -> Self {
        CellConfig {
            design,
            n,
            p: 200,
            delta,
            gamma,
            reps,
            seed,
            folds: SIMULATION_FOLDS,
            trim: TrimPolicy::default(),
            with_effects: true,
            checkpoint_dir: None,
        }
    }

    /// The test variant implied by the design: the second design links the
    /// instruments, so its implications condition on `Z2`.
    pub fn variant(&self) -> SetupVariant {
        match self.design {
            Design::One => SetupVariant::Baseline,
            Design::Two => SetupVariant::Z2Linked,
        }
    }

    fn checkpoint_path(&self) -> Option<PathBuf> {
        self.checkpoint_dir.as_ref().map(|dir| {
            dir.join(format!(
                "cell_design{}_n{}_delta{}_gamma{}_reps{}_seed{}.jsonl",
                self.design.index(),
                self.n,
                self.delta,
                self.gamma,
                self.reps,
                self.seed
            ))
        })
    }
}

/// One replication's results.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RepRecord {
    pub rep: u64,
    pub theta: f64,
    pub se: f64,
    pub tstat: f64,
    pub pval: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effects: Option<[f64; 5]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_trimmed: Option<u64>,
}

/// One table row: rejection rate, mean p-value, and per-effect bias/RMSE
/// against the implied truths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationRow {
    pub design: u8,
    pub n: usize,
    pub delta: f64,
    pub gamma: f64,
    pub reps: usize,
    pub rej_rate: f64,
    pub mean_pval: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias: Option<[f64; 5]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<[f64; 5]>,
}

fn run_rep(cfg: &CellConfig, rep: u64) -> Result<RepRecord> {
    let data = dgp::simulate(&DgpConfig {
        n: cfg.n,
        p: cfg.p,
        delta: cfg.delta,
        gamma: cfg.gamma,
        design: cfg.design,
        seed: seed::derive(cfg.seed, 10, rep),
        binary_m: false,
    })?;
    let setup = TestSetup::new(cfg.variant()).with_folds(cfg.folds);
    let test = run_test(&data, &setup, seed::derive(cfg.seed, 11, rep))?;
    let (effects, n_trimmed) = if cfg.with_effects {
        let est = estimate_mediation(&data, cfg.trim, cfg.folds, seed::derive(cfg.seed, 12, rep))?;
        (Some(est.point_estimates()), Some(est.n_trimmed as u64))
    } else {
        (None, None)
    };
    Ok(RepRecord {
        rep,
        theta: test.theta_hat,
        se: test.se,
        tstat: test.tstat,
        pval: test.pval,
        effects,
        n_trimmed,
    })
}

fn read_checkpoint(path: &Path, cfg: &CellConfig) -> Result<Vec<RepRecord>> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Ok(Vec::new()),
    };
    let stored: CellConfig = serde_json::from_str(&header)
        .map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;
    if stored.design != cfg.design
        || stored.n != cfg.n
        || stored.p != cfg.p
        || stored.delta != cfg.delta
        || stored.gamma != cfg.gamma
        || stored.seed != cfg.seed
        || stored.folds != cfg.folds
        || stored.with_effects != cfg.with_effects
    {
        return Err(Error::InvalidArgument(format!(
            "checkpoint {} belongs to a different cell configuration",
            path.display()
        )));
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RepRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("checkpoint record: {e}")))?;
        records.push(rec);
    }
    records.sort_by_key(|r| r.rep);
    records.dedup_by_key(|r| r.rep);
    Ok(records)
}

/// Runs (or resumes) one simulation cell and aggregates it.
///
/// Replications run in a parallel pool in batches; after each batch the
/// checkpoint is extended in replication order, so the file content does
/// not depend on scheduling and an interrupted run resumes to identical
/// aggregates.
pub fn run_cell(cfg: &CellConfig) -> Result<SimulationRow> {
    if cfg.reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    let path = cfg.checkpoint_path();
    let mut records: Vec<RepRecord> = Vec::new();
    let mut writer = match &path {
        Some(p) => {
            if let Some(dir) = p.parent() {
                fs::create_dir_all(dir)?;
            }
            if p.exists() {
                records = read_checkpoint(p, cfg)?;
                records.retain(|r| r.rep < cfg.reps as u64);
                Some(fs::OpenOptions::new().append(true).open(p)?)
            } else {
                let mut f = fs::File::create(p)?;
                let header = serde_json::to_string(cfg)
                    .map_err(|e| Error::Parse(format!("serialize header: {e}")))?;
                writeln!(f, "{header}")?;
                Some(f)
            }
        }
        None => None,
    };

    let done: std::collections::BTreeSet<u64> = records.iter().map(|r| r.rep).collect();
    let missing: Vec<u64> = (0..cfg.reps as u64).filter(|r| !done.contains(r)).collect();

    let batch = (rayon::current_num_threads() * 4).max(4);
    for chunk in missing.chunks(batch) {
        let mut batch_records: Vec<RepRecord> = chunk
            .par_iter()
            .map(|&rep| run_rep(cfg, rep))
            .collect::<Result<Vec<_>>>()?;
        batch_records.sort_by_key(|r| r.rep);
        if let Some(f) = writer.as_mut() {
            for rec in &batch_records {
                let line = serde_json::to_string(rec)
                    .map_err(|e| Error::Parse(format!("serialize record: {e}")))?;
                writeln!(f, "{line}")?;
            }
            f.flush()?;
        }
        records.extend(batch_records);
    }
    records.sort_by_key(|r| r.rep);
    aggregate(cfg, &records)
}

/// Folds replication records into a table row.
pub fn aggregate(cfg: &CellConfig, records: &[RepRecord]) -> Result<SimulationRow> {
    if records.len() != cfg.reps {
        return Err(Error::InvalidData(format!(
            "expected {} records, got {}",
            cfg.reps,
            records.len()
        )));
    }
    let reps = records.len() as f64;
    let rej_rate = records.iter().filter(|r| r.pval < REJECTION_LEVEL).count() as f64 / reps;
    let mean_pval = records.iter().map(|r| r.pval).sum::<f64>() / reps;

    let (bias, rmse) = if cfg.with_effects {
        let mut mean_est = [0.0; 5];
        let mut mse = [0.0; 5];
        for rec in records {
            let est = rec.effects.ok_or_else(|| {
                Error::InvalidData("record missing effect estimates".into())
            })?;
            for j in 0..5 {
                mean_est[j] += est[j] / reps;
                let err = est[j] - TRUE_EFFECTS[j];
                mse[j] += err * err / reps;
            }
        }
        let mut bias = [0.0; 5];
        let mut rmse = [0.0; 5];
        for j in 0..5 {
            bias[j] = (mean_est[j] - TRUE_EFFECTS[j]).abs();
            rmse[j] = mse[j].sqrt();
        }
        (Some(bias), Some(rmse))
    } else {
        (None, None)
    };

    Ok(SimulationRow {
        design: cfg.design.index(),
        n: cfg.n,
        delta: cfg.delta,
        gamma: cfg.gamma,
        reps: cfg.reps,
        rej_rate,
        mean_pval,
        bias,
        rmse,
    })
}

/// Renders rows as an aligned table grouped into (delta, gamma) panels,
/// mirroring the published layout.
pub fn render_rows(rows: &[SimulationRow]) -> String {
    let mut out = String::new();
    let header = format!(
        "{:>6} {:>9} {:>10} | {:>7} {:>7} {:>7} {:>8} {:>8} | {:>7} {:>7} {:>7} {:>8} {:>8}\n",
        "n", "rej.rate", "mean pval", "total", "dir.(1)", "dir.(0)", "indir(1)", "indir(0)",
        "total", "dir.(1)", "dir.(0)", "indir(1)", "indir(0)"
    );
    let mut last_panel: Option<(f64, f64)> = None;
    for row in rows {
        let panel = (row.delta, row.gamma);
        if last_panel != Some(panel) {
            out.push_str(&format!(
                "\ndesign {}  delta = {}  gamma = {}   ({} reps)\n",
                row.design, row.delta, row.gamma, row.reps
            ));
            out.push_str(&format!(
                "{:>6} {:>9} {:>10} | {:^41} | {:^41}\n",
                "", "", "", "bias", "RMSE"
            ));
            out.push_str(&header);
            last_panel = Some(panel);
        }
        let fmt5 = |v: &Option<[f64; 5]>| -> String {
            match v {
                Some(a) => format!(
                    "{:>7.3} {:>7.3} {:>7.3} {:>8.3} {:>8.3}",
                    a[0], a[1], a[2], a[3], a[4]
                ),
                None => format!("{:>7} {:>7} {:>7} {:>8} {:>8}", "-", "-", "-", "-", "-"),
            }
        };
        out.push_str(&format!(
            "{:>6} {:>9.3} {:>10.3} | {} | {}\n",
            row.n,
            row.rej_rate,
            row.mean_pval,
            fmt5(&row.bias),
            fmt5(&row.rmse)
        ));
    }
    out
}

/// The three (delta, gamma) panels of the published tables.
pub const TABLE_PANELS: [(f64, f64); 3] = [(0.0, 0.0), (1.0, 0.0), (0.0, 0.2)];

/// Runs every panel of one table at one sample size.
pub fn replicate_table(
    design: Design,
    n: usize,
    reps: usize,
    seed: u64,
    with_effects: bool,
    checkpoint_dir: Option<PathBuf>,
) -> Result<Vec<SimulationRow>> {
    let mut rows = Vec::new();
    for (idx, (delta, gamma)) in TABLE_PANELS.into_iter().enumerate() {
        let mut cfg = CellConfig::new(design, n, delta, gamma, reps, seed::derive(seed, 20, idx as u64));
        cfg.with_effects = with_effects;
        cfg.checkpoint_dir = checkpoint_dir.clone();
        rows.push(run_cell(&cfg)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_cfg(dir: Option<PathBuf>, reps: usize) -> CellConfig {
        let mut cfg = CellConfig::new(Design::One, 120, 0.0, 0.0, reps, 42);
        cfg.p = 5;
        cfg.checkpoint_dir = dir;
        cfg
    }

    #[test]
    fn aggregates_match_stored_pvals() {
        let cfg = small_cfg(None, 4);
        let row = run_cell(&cfg).unwrap();
        assert!(row.rej_rate >= 0.0 && row.rej_rate <= 1.0);
        assert!(row.mean_pval >= 0.0 && row.mean_pval <= 1.0);
        let (bias, rmse) = (row.bias.unwrap(), row.rmse.unwrap());
        for j in 0..5 {
            assert!(rmse[j] >= bias[j] - 1e-12, "rmse < |bias| at {j}");
        }
    }

    #[test]
    fn single_rep_rejection_is_binary() {
        let mut cfg = small_cfg(None, 1);
        cfg.with_effects = false;
        let row = run_cell(&cfg).unwrap();
        assert!(row.rej_rate == 0.0 || row.rej_rate == 1.0);
    }

    #[test]
    fn checkpoint_resume_is_identical() {
        let dir = tempdir().unwrap();
        let fresh = run_cell(&small_cfg(None, 6)).unwrap();

        // Run 3 reps, then resume to 6 against the same checkpoint file...
        let mut partial = small_cfg(Some(dir.path().to_path_buf()), 3);
        run_cell(&partial).unwrap();
        let partial_file = partial.checkpoint_path().unwrap();
        let resumed_file = small_cfg(Some(dir.path().to_path_buf()), 6)
            .checkpoint_path()
            .unwrap();
        // ... the file name encodes reps; emulate an interrupted 6-rep run
        // by renaming the 3-rep checkpoint, fixing its header.
        let content = std::fs::read_to_string(&partial_file).unwrap();
        let mut lines: Vec<String> = content.lines().map(|s| s.to_string()).collect();
        partial.reps = 6;
        lines[0] = serde_json::to_string(&partial).unwrap();
        std::fs::write(&resumed_file, lines.join("\n") + "\n").unwrap();

        let resumed = run_cell(&small_cfg(Some(dir.path().to_path_buf()), 6)).unwrap();
        assert_eq!(fresh.rej_rate, resumed.rej_rate);
        assert_eq!(fresh.mean_pval, resumed.mean_pval);
        assert_eq!(fresh.bias.unwrap(), resumed.bias.unwrap());

        // The resumed checkpoint is byte-identical to a fresh full run.
        let resumed_bytes = std::fs::read(&resumed_file).unwrap();
        let dir2 = tempdir().unwrap();
        let full = small_cfg(Some(dir2.path().to_path_buf()), 6);
        run_cell(&full).unwrap();
        let full_bytes = std::fs::read(full.checkpoint_path().unwrap()).unwrap();
        assert_eq!(resumed_bytes, full_bytes);
    }

    #[test]
    fn mismatched_checkpoint_rejected() {
        let dir = tempdir().unwrap();
        let cfg = small_cfg(Some(dir.path().to_path_buf()), 3);
        run_cell(&cfg).unwrap();
        // Same file path, different seed inside the header.
        let path = cfg.checkpoint_path().unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        let mut other = cfg.clone();
        other.seed = 43;
        let mut lines: Vec<String> = content.lines().map(|s| s.to_string()).collect();
        lines[0] = serde_json::to_string(&other).unwrap();
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        assert!(run_cell(&cfg).is_err());
    }

    #[test]
    fn render_has_panel_headers() {
        let rows = vec![SimulationRow {
            design: 1,
            n: 100,
            delta: 0.0,
            gamma: 0.0,
            reps: 2,
            rej_rate: 0.5,
            mean_pval: 0.4,
            bias: None,
            rmse: None,
        }];
        let text = render_rows(&rows);
        assert!(text.contains("delta = 0"));
        assert!(text.contains("rej.rate"));
    }
}
