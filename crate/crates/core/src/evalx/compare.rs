//! Baseline (affine head) against RBI over several seeds.

use std::fmt::Write as _;

use crate::config::TrainConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::HeadKind;
use crate::train::trainer::{fit, TrainState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompareRun {
    pub seed: u64,
    pub head: HeadKind,
    /// Test accuracy after the final epoch.
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl ArmSummary {
    fn of(values: impl Iterator<Item = f64> + Clone) -> ArmSummary {
        let n = values.clone().count() as f64;
        ArmSummary {
            mean: values.clone().sum::<f64>() / n,
            min: values.clone().fold(f64::INFINITY, f64::min),
            max: values.fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub runs: Vec<CompareRun>,
    pub baseline: ArmSummary,
    pub rbi: ArmSummary,
    /// `rbi.mean − baseline.mean`, as a fraction (not percentage points).
    pub delta: f64,
}

impl CompareReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,head,accuracy\n");
        for r in &self.runs {
            let _ = writeln!(out, "{},{},{}", r.seed, r.head.name(), r.accuracy);
        }
        out
    }

    pub fn summary(&self) -> String {
        let line = |name: &str, s: &ArmSummary| {
            format!(
                "{name:<8} mean {:.4}  range [{:.4}, {:.4}]\n",
                s.mean, s.min, s.max
            )
        };
        let mut out = line("baseline", &self.baseline);
        out.push_str(&line("rbi", &self.rbi));
        let _ = writeln!(out, "delta    {:+.2} points", 100.0 * self.delta);
        out
    }
}

/// For every seed, trains the baseline and the RBI head under `cfg` (head
/// and seed replaced) and records final test accuracy. `on_run` sees each
/// run, with its trained state, as it finishes.
pub fn compare_baseline(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    seeds: &[u64],
    mut on_run: impl FnMut(&CompareRun, &TrainState),
) -> Result<CompareReport> {
    if seeds.len() < 3 {
        return Err(Error::Invalid(format!("comparison needs at least 3 seeds, got {}", seeds.len())));
    }
    let mut runs = Vec::with_capacity(2 * seeds.len());
    for &seed in seeds {
        for head in [HeadKind::Baseline, HeadKind::Rbi] {
            let mut arm = cfg.clone();
            arm.seed = seed;
            arm.head = head;
            let mut state = TrainState::from_config(&arm);
            let reports = fit(&mut state, train, Some(test), &arm, None, |_| {})?;
            let accuracy = match reports.last().and_then(|r| r.test) {
                Some(m) => m.accuracy,
                None => return Err(Error::Invalid("comparison needs at least one epoch".into())),
            };
            let run = CompareRun { seed, head, accuracy };
            on_run(&run, &state);
            runs.push(run);
        }
    }
    let arm = |h: HeadKind| ArmSummary::of(runs.iter().filter(move |r| r.head == h).map(|r| r.accuracy));
    let (baseline, rbi) = (arm(HeadKind::Baseline), arm(HeadKind::Rbi));
    Ok(CompareReport {
        delta: rbi.mean - baseline.mean,
        runs,
        baseline,
        rbi,
    })
}
