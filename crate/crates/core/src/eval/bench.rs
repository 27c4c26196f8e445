//! Dataset by arm benchmark grid with a wins tally.

use crate::data::{ImagePool, MappingPolicy, TabularDataset};
use crate::error::Result;
use crate::model::{fit, EpochMetrics, TrainConfig, Variant};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::time::Instant;

/// One column of the comparison: a model variant, optionally trained with a
/// single fixed mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Arm {
    pub variant: Variant,
    pub single_mapping: bool,
}

impl Arm {
    pub const fn new(variant: Variant) -> Self {
        Self { variant, single_mapping: false }
    }

    pub const fn single(variant: Variant) -> Self {
        Self { variant, single_mapping: true }
    }

    pub fn label(&self) -> String {
        if self.single_mapping {
            format!("{}-single", self.variant)
        } else {
            self.variant.to_string()
        }
    }

    pub fn config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.variant = self.variant;
        if self.single_mapping {
            cfg.mapping = MappingPolicy::Single;
        }
        cfg
    }
}

/// The four variants plus the single-mapping ablation of the base model.
pub fn default_arms() -> Vec<Arm> {
    let mut arms: Vec<Arm> = Variant::ALL.iter().map(|&v| Arm::new(v)).collect();
    arms.push(Arm::single(Variant::Base));
    arms
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub dataset: String,
    pub arm: String,
    pub accuracies: Vec<f64>,
    pub aucs: Vec<Option<f64>>,
    pub mean_acc: f64,
    pub mean_auc: Option<f64>,
    pub param_count: usize,
    pub wall_secs: f64,
    pub config_hash: String,
    pub curves: Vec<Vec<EpochMetrics>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub dataset: String,
    pub arm: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BenchReport {
    pub arms: Vec<String>,
    pub datasets: Vec<String>,
    pub runs: Vec<RunReport>,
    pub failures: Vec<Failure>,
}

/// A prepared benchmark dataset.
pub struct Prepared {
    pub train: TabularDataset,
    pub test: TabularDataset,
    pub pool: ImagePool,
}

/// A named dataset whose loading may fail without stopping the benchmark.
pub struct BenchCase<'a> {
    pub name: String,
    pub load: Box<dyn Fn() -> Result<Prepared> + 'a>,
}

/// Hex SHA-256 of the JSON form of a training configuration.
pub fn config_hash(config: &TrainConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serialises");
    hex::encode(Sha256::digest(&json))
}

pub fn run_arm(name: &str, data: &Prepared, arm: Arm, base: &TrainConfig) -> Result<RunReport> {
    let cfg = arm.config(base);
    let started = Instant::now();
    let report = fit(&data.train, &data.test, &data.pool, &cfg, None)?;
    Ok(RunReport {
        dataset: name.to_string(),
        arm: arm.label(),
        accuracies: report.runs.iter().map(|r| r.best_acc).collect(),
        aucs: report.runs.iter().map(|r| r.best_auc).collect(),
        mean_acc: report.mean_acc,
        mean_auc: report.mean_auc,
        param_count: report.runs[0].model.param_count(),
        wall_secs: started.elapsed().as_secs_f64(),
        config_hash: config_hash(&cfg),
        curves: report.runs.into_iter().map(|r| r.epochs).collect(),
    })
}

/// Trains every arm on every dataset. Failures are recorded and skipped.
pub fn benchmark_run(cases: &[BenchCase<'_>], arms: &[Arm], config: &TrainConfig) -> BenchReport {
    let mut out = BenchReport {
        arms: arms.iter().map(Arm::label).collect(),
        datasets: cases.iter().map(|c| c.name.clone()).collect(),
        ..Default::default()
    };
    for case in cases {
        let data = match (case.load)() {
            Ok(d) => d,
            Err(e) => {
                log::warn!("benchmark: {} failed to load: {e}", case.name);
                out.failures.push(Failure { dataset: case.name.clone(), arm: None, error: e.to_string() });
                continue;
            }
        };
        for &arm in arms {
            match run_arm(&case.name, &data, arm, config) {
                Ok(r) => out.runs.push(r),
                Err(e) => {
                    log::warn!("benchmark: {} / {} failed: {e}", case.name, arm.label());
                    out.failures.push(Failure {
                        dataset: case.name.clone(),
                        arm: Some(arm.label()),
                        error: e.to_string(),
                    });
                }
            }
        }
    }
    out
}

impl BenchReport {
    fn find(&self, dataset: &str, arm: &str) -> Option<&RunReport> {
        self.runs.iter().find(|r| r.dataset == dataset && r.arm == arm)
    }

    /// Per arm, the datasets on which its mean accuracy is the highest
    /// (ties count for every tied arm).
    pub fn wins(&self) -> Vec<usize> {
        let mut wins = vec![0; self.arms.len()];
        for d in &self.datasets {
            let accs: Vec<Option<f64>> = self.arms.iter().map(|a| self.find(d, a).map(|r| r.mean_acc)).collect();
            let Some(best) = accs.iter().flatten().copied().reduce(f64::max) else { continue };
            for (w, a) in wins.iter_mut().zip(&accs) {
                if *a == Some(best) {
                    *w += 1;
                }
            }
        }
        wins
    }

    /// Wide comparison table: one row per dataset, an accuracy and an AUC
    /// column per arm, and a final row of wins. Missing cells are empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dataset");
        for a in &self.arms {
            write!(s, ",acc_{a},auc_{a}").unwrap();
        }
        s.push('\n');
        for d in &self.datasets {
            s.push_str(d);
            for a in &self.arms {
                match self.find(d, a) {
                    Some(r) => {
                        let auc = r.mean_auc.map(|v| format!("{v:.4}")).unwrap_or_default();
                        write!(s, ",{:.4},{auc}", r.mean_acc).unwrap();
                    }
                    None => s.push_str(",,"),
                }
            }
            s.push('\n');
        }
        s.push_str("# of Wins");
        for w in self.wins() {
            write!(s, ",{w},").unwrap();
        }
        s.push('\n');
        s
    }
}
