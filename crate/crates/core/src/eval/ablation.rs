use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::DatasetSplit;
use crate::model::ModelConfig;
use crate::training::{train_stage1, train_stage2, StageSchedule, TrainOptions};

use super::report::{evaluate_model, EvalReport};
use super::{EvalError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Arm {
    /// Feature extractor and regression head, no attention layers.
    Cnn,
    CnnSaedn,
    CnnSaednRes,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Cnn, Arm::CnnSaedn, Arm::CnnSaednRes];

    pub fn label(self) -> &'static str {
        match self {
            Arm::Cnn => "CNN",
            Arm::CnnSaedn => "CNN-SAEDN",
            Arm::CnnSaednRes => "CNN-SAEDN-Res",
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub stage1: StageSchedule,
    pub stage2: StageSchedule,
    pub seeds: Vec<u64>,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ArmRun {
    pub arm: Arm,
    pub seed: u64,
    /// Mean over the test window.
    pub a_d: f64,
    pub e_d: f64,
    #[serde(skip)]
    pub report: EvalReport,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub runs: usize,
    pub a_d_mean: f64,
    pub a_d_std: f64,
    pub a_d_median: f64,
    pub e_d_mean: f64,
    pub e_d_std: f64,
    pub e_d_median: f64,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    /// Sorted by seed, then arm.
    pub runs: Vec<ArmRun>,
    pub summary: Vec<ArmSummary>,
}

impl AblationReport {
    pub fn runs_for(&self, arm: Arm) -> impl Iterator<Item = &ArmRun> {
        self.runs.iter().filter(move |r| r.arm == arm)
    }

    pub fn summary_for(&self, arm: Arm) -> Option<&ArmSummary> {
        self.summary.iter().find(|s| s.arm == arm)
    }
}

/// Median of a non-empty slice.
fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    (mean, (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

enum Job {
    Cnn(u64),
    Attention(u64),
}

fn run_job(job: &Job, split: &DatasetSplit, cfg: &AblationConfig) -> Result<Vec<ArmRun>> {
    let opts = TrainOptions::default();
    let make = |arm: Arm, seed: u64, report: EvalReport| ArmRun {
        arm,
        seed,
        a_d: report.overall.a_d,
        e_d: report.overall.e_d,
        report,
    };
    let label = |arm: Arm, seed: u64| move |source| EvalError::Arm {
        arm: arm.label(),
        seed,
        source,
    };
    match *job {
        Job::Cnn(seed) => {
            let mut model = cfg.model.clone();
            model.n_encoder_layers = 0;
            model.n_decoder_layers = 0;
            let (_, ckpt) = train_stage1(split, &model, &cfg.stage1, seed, &opts).map_err(label(Arm::Cnn, seed))?;
            let eval = evaluate_model(&ckpt.model, &split.test, &split.stats, 0)?;
            Ok(vec![make(Arm::Cnn, seed, eval.init)])
        }
        Job::Attention(seed) => {
            let (_, ckpt) =
                train_stage1(split, &cfg.model, &cfg.stage1, seed, &opts).map_err(label(Arm::CnnSaedn, seed))?;
            let (_, ckpt) = train_stage2(split, ckpt, &cfg.stage2, &opts).map_err(label(Arm::CnnSaednRes, seed))?;
            // stage 1 is frozen during stage 2, so the initial forecast is arm (b)
            let eval = evaluate_model(&ckpt.model, &split.test, &split.stats, 0)?;
            Ok(vec![make(Arm::CnnSaedn, seed, eval.init), make(Arm::CnnSaednRes, seed, eval.refined)])
        }
    }
}

/// Train and score the three arms for every seed on the same split.
/// Arm (c) refines the stage-1 network of arm (b) from the same seed.
pub fn run_ablation(split: &DatasetSplit, cfg: &AblationConfig) -> Result<AblationReport> {
    if cfg.seeds.is_empty() {
        return Err(EvalError::Invalid("ablation needs at least one seed".into()));
    }
    cfg.model.validate()?;
    let jobs: Vec<Job> = cfg
        .seeds
        .iter()
        .flat_map(|&s| [Job::Cnn(s), Job::Attention(s)])
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| EvalError::Invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<Vec<ArmRun>>> = pool.install(|| jobs.par_iter().map(|j| run_job(j, split, cfg)).collect());
    let mut runs = Vec::with_capacity(3 * cfg.seeds.len());
    for r in results {
        runs.extend(r?);
    }
    runs.sort_by_key(|r| (cfg.seeds.iter().position(|&s| s == r.seed), r.arm));

    let summary = Arm::ALL
        .iter()
        .map(|&arm| {
            let a: Vec<f64> = runs.iter().filter(|r| r.arm == arm).map(|r| r.a_d).collect();
            let e: Vec<f64> = runs.iter().filter(|r| r.arm == arm).map(|r| r.e_d).collect();
            let (a_d_mean, a_d_std) = mean_std(&a);
            let (e_d_mean, e_d_std) = mean_std(&e);
            ArmSummary {
                arm,
                runs: a.len(),
                a_d_mean,
                a_d_std,
                a_d_median: median(&a),
                e_d_mean,
                e_d_std,
                e_d_median: median(&e),
            }
        })
        .collect();
    Ok(AblationReport { runs, summary })
}

/// Table with one row per arm: mean ± std and median over seeds.
pub fn format_ablation_table(report: &AblationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<15} {:>5} {:>18} {:>10} {:>18} {:>10}",
        "model", "seeds", "A_d(%) mean±std", "median", "E_d mean±std", "median"
    );
    for s in &report.summary {
        let _ = writeln!(
            out,
            "{:<15} {:>5} {:>18} {:>10.2} {:>18} {:>10.2}",
            s.arm.label(),
            s.runs,
            format!("{:.2}±{:.2}", s.a_d_mean, s.a_d_std),
            s.a_d_median,
            format!("{:.2}±{:.2}", s.e_d_mean, s.e_d_std),
            s.e_d_median,
        );
    }
    out
}

/// `arm,seed,a_d,e_d` per run.
pub fn write_ablation_csv<W: Write>(report: &AblationReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["arm", "seed", "a_d", "e_d"])?;
    for r in &report.runs {
        w.write_record([r.arm.label(), &r.seed.to_string(), &r.a_d.to_string(), &r.e_d.to_string()])?;
    }
    w.flush().map_err(|source| EvalError::Io {
        path: "<ablation csv>".into(),
        source,
    })
}
