// Probe: two-sided default calibration across the acceptance cells.
use identest::dgp::{self, Design, DgpConfig};
use identest::idtest::{run_test, TestSetup};
use identest::ml::SetupVariant;
use identest::seed;
use rayon::prelude::*;

fn cell(design: Design, n: usize, delta: f64, gamma: f64, reps: usize, variant: SetupVariant) {
    let start = std::time::Instant::now();
    let results: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let data = dgp::simulate(&DgpConfig {
                n, p: 200, delta, gamma, design,
                seed: seed::derive(99, 10, r as u64),
                binary_m: false,
            }).unwrap();
            let setup = TestSetup::new(variant).with_folds(2);
            run_test(&data, &setup, seed::derive(99, 11, r as u64)).unwrap().pval
        })
        .collect();
    let rej = results.iter().filter(|p| **p < 0.05).count() as f64 / reps as f64;
    let meanp = results.iter().sum::<f64>() / reps as f64;
    println!(
        "TWOSIDED design={design:?} n={n} delta={delta} gamma={gamma} reps={reps}: rej={rej:.3} meanpval={meanp:.3} elapsed={:.1?}",
        start.elapsed()
    );
}

#[test]
fn probe_two_c5() { cell(Design::Two, 1000, 0.0, 0.2, 120, SetupVariant::Z2Linked); }

#[test]
fn probe_two_size() { cell(Design::One, 1000, 0.0, 0.0, 120, SetupVariant::Baseline); }

#[test]
fn probe_two_4000() {
    cell(Design::One, 4000, 1.0, 0.0, 15, SetupVariant::Baseline);
    cell(Design::One, 4000, 0.0, 0.2, 15, SetupVariant::Baseline);
}
