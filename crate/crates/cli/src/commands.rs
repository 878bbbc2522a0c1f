use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use loadcast::data::{
    build_feature_matrix, clean_records, load_csv, split_train_test, synthesize_dataset, write_csv_file, CleaningReport,
    DailyRecord, DataError, DatasetSplit, DayType, History, NormStats, Sample, SplitSpec, HOURS,
};
use loadcast::eval::{
    evaluate_model, format_ablation_table, format_report_table, period_report, residual_analysis,
    run_ablation, write_ablation_csv, write_report_csv, write_residual_csv, AblationConfig, EvalReport,
    ResidualAnalysis,
};
use loadcast::training::{
    load_checkpoint, resume, train_stage1, train_stage2, write_loss_csv, Checkpoint, TrainOptions, TrainReport,
};

use crate::config::{RunConfig, Source};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub struct Dataset {
    pub records: Vec<DailyRecord>,
    pub gaps: Vec<NaiveDate>,
    pub cleaning: CleaningReport,
}

/// Ingest (or synthesize) and clean.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    cfg.require_data()?;
    let (raw, gaps) = match &cfg.source {
        Source::Csv(path) => {
            let ing = load_csv(path, &cfg.schema, cfg.unit)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            (ing.records, ing.gaps)
        }
        Source::Synthetic => (synthesize_dataset(cfg.seed, cfg.synth_days, &cfg.synth_profile)?, Vec::new()),
    };
    let cleaning = clean_records(&raw, cfg.sigma_threshold);
    Ok(Dataset {
        records: cleaning.records.clone(),
        gaps,
        cleaning,
    })
}

/// Test window from the config, defaulting to the last seven days.
pub fn test_window(cfg: &RunConfig, records: &[DailyRecord]) -> Result<(NaiveDate, NaiveDate)> {
    let last = records
        .last()
        .ok_or_else(|| CliError::Data("dataset is empty".into()))?
        .date;
    let end = cfg.test_end.unwrap_or(last);
    let start = cfg.test_start.unwrap_or(end - Duration::days(6));
    if end < start {
        return Err(CliError::Config(format!("test window {start}..={end} is empty")));
    }
    Ok((start, end))
}

pub fn make_split(cfg: &RunConfig, records: &[DailyRecord]) -> Result<DatasetSplit> {
    let (start, end) = test_window(cfg, records)?;
    let spec = SplitSpec {
        train_start: cfg.train_start,
        ..SplitSpec::test_window(start, end)
    };
    let split = split_train_test(records, &spec)?;
    if !split.skipped.is_empty() {
        log::info!("{} days skipped for lack of similar-day history", split.skipped.len());
    }
    Ok(split)
}

/// Feature matrices for every recorded day in `from..=to`, normalized with `stats`.
pub fn samples_in_range(records: &[DailyRecord], from: NaiveDate, to: NaiveDate, stats: &NormStats) -> Result<Vec<Sample>> {
    let history = History::new(records)?;
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for r in records.iter().filter(|r| r.date >= from && r.date <= to) {
        match build_feature_matrix(r.date, &history, stats) {
            Ok(s) => out.push(s),
            Err(DataError::SkipDay { date, reason }) => missing.push(format!("{date} ({reason})")),
            Err(e) => return Err(e.into()),
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Data(format!("cannot build features for: {}", missing.join(", "))));
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("no recorded days in {from}..={to}")));
    }
    Ok(out)
}

/// Create the run directory and store the resolved config in it.
pub fn create_run_dir(cfg: &RunConfig, command: &str, over: Option<&Path>) -> Result<PathBuf> {
    let dir = match over {
        Some(d) => d.to_path_buf(),
        None => {
            let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
            let base = cfg.output_dir.join(format!("{command}-{stamp}"));
            let mut dir = base.clone();
            let mut n = 1;
            while dir.exists() {
                dir = PathBuf::from(format!("{}-{n}", base.display()));
                n += 1;
            }
            dir
        }
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let path = dir.join("config.txt");
    fs::write(&path, cfg.render()).map_err(|e| CliError::io(&path, e))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| CliError::io(path, e))
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path).map_err(|e| CliError::Data(format!("checkpoint {}: {e}", path.display())))
}

pub fn preprocess(cfg: &RunConfig, run_dir: Option<&Path>) -> Result<PathBuf> {
    let data = load_dataset(cfg)?;
    let dir = create_run_dir(cfg, "preprocess", run_dir)?;
    write_csv_file(&data.records, dir.join("cleaned.csv"))?;

    let c = &data.cleaning;
    let mut rep = String::new();
    let _ = writeln!(rep, "days ingested: {}", c.records.len() + c.dropped.len());
    let _ = writeln!(rep, "missing dates: {}", data.gaps.len());
    for d in &data.gaps {
        let _ = writeln!(rep, "  gap {d}");
    }
    let _ = writeln!(rep, "anomalous days (sigma > {}): {}", cfg.sigma_threshold, c.anomalous_days.len());
    for (d, s) in &c.anomalous_days {
        let _ = writeln!(rep, "  {d} sigma {s:.3}");
    }
    let _ = writeln!(rep, "replacements: {}", c.replacements.len());
    for r in &c.replacements {
        let _ = writeln!(rep, "  {} hour {}: {} -> {}", r.date, r.hour, r.original, r.replacement);
    }
    let _ = writeln!(rep, "dropped days: {}", c.dropped.len());
    for d in &c.dropped {
        let _ = writeln!(rep, "  {d}");
    }
    write(&dir.join("preprocess_report.txt"), &rep)?;
    print!("{rep}");
    Ok(dir)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageSel {
    One,
    Two,
    Both,
}

pub struct TrainArgs {
    pub stage: StageSel,
    /// Completed stage-1 checkpoint for `StageSel::Two`.
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub stop_after: Option<usize>,
}

fn summarize(r: &TrainReport) -> String {
    if r.losses.is_empty() {
        return format!("stage {}: nothing left to train", r.stage);
    }
    let first = r.losses.first().copied().unwrap_or(f64::NAN);
    let last = r.losses.last().copied().unwrap_or(f64::NAN);
    format!(
        "stage {}: epochs {}..{} loss {first:.6e} -> {last:.6e} ({:.1}s){}",
        r.stage,
        r.first_epoch,
        r.first_epoch + r.losses.len() - 1,
        r.wall_time.as_secs_f64(),
        if r.completed { "" } else { " [stopped early]" }
    )
}

pub fn train(cfg: &RunConfig, args: &TrainArgs, run_dir: Option<&Path>) -> Result<PathBuf> {
    let data = load_dataset(cfg)?;
    let split = make_split(cfg, &data.records)?;
    let prior = match (&args.resume, &args.checkpoint) {
        (Some(p), _) | (None, Some(p)) => Some(load_ckpt(p)?),
        (None, None) => None,
    };
    if args.checkpoint.is_some() && (args.stage != StageSel::Two || args.resume.is_some()) {
        return Err(CliError::Usage("--checkpoint is for --stage 2; use --resume to continue a run".into()));
    }
    if args.stage == StageSel::Two && prior.is_none() {
        return Err(CliError::Usage("--stage 2 needs --checkpoint with a trained stage 1".into()));
    }
    if let Some(ck) = &prior {
        if ck.stats != split.stats {
            return Err(CliError::Data(
                "checkpoint was fitted with different normalization statistics than this config's training data".into(),
            ));
        }
        if args.resume.is_none() && !ck.complete[0] {
            return Err(CliError::Data("checkpoint has not finished stage 1".into()));
        }
    }

    let dir = create_run_dir(cfg, "train", run_dir)?;
    let opts = TrainOptions {
        checkpoint_dir: Some(dir.join("checkpoints")),
        stop_after_epoch: args.stop_after,
        grad_clip: cfg.grad_clip,
    };
    let mut lines = Vec::new();
    let mut ckpt = match prior {
        Some(ck) if args.resume.is_some() => {
            let (r, ck) = resume(ck, &split, &opts)?;
            lines.push(summarize(&r));
            ck
        }
        Some(ck) => ck,
        None => {
            let (r, ck) = train_stage1(&split, &cfg.model, &cfg.stage1, cfg.seed, &opts)?;
            lines.push(summarize(&r));
            ck
        }
    };
    let want_two = matches!(args.stage, StageSel::Two | StageSel::Both);
    if want_two && ckpt.complete[0] && !ckpt.complete[1] {
        let (r, ck) = train_stage2(&split, ckpt, &cfg.stage2, &opts)?;
        lines.push(summarize(&r));
        ckpt = ck;
    }
    write_loss_csv(&ckpt.history, dir.join("loss.csv"))?;
    for l in &lines {
        println!("{l}");
    }
    println!("checkpoints in {}", dir.join("checkpoints").display());
    Ok(dir)
}

pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub out: Option<PathBuf>,
}

pub const PREDICTION_HEADER: [&str; 11] = [
    "date",
    "hour",
    "y_init",
    "e_star",
    "y_refine",
    "actual",
    "y_init_raw",
    "e_star_raw",
    "y_refine_raw",
    "actual_raw",
    "day_type",
];

fn day_type_name(t: DayType) -> &'static str {
    match t {
        DayType::Workday => "workday",
        DayType::RestDay => "restday",
    }
}

pub fn predict(cfg: &RunConfig, args: &PredictArgs, run_dir: Option<&Path>) -> Result<PathBuf> {
    let ckpt = load_ckpt(&args.checkpoint)?;
    let data = load_dataset(cfg)?;
    let (ws, we) = test_window(cfg, &data.records)?;
    let (from, to) = (args.from.unwrap_or(ws), args.to.unwrap_or(we));
    if to < from {
        return Err(CliError::Usage(format!("--to {to} is before --from {from}")));
    }
    let samples = samples_in_range(&data.records, from, to, &ckpt.stats)?;
    let feats: Vec<_> = samples.iter().map(|s| &s.features).collect();
    let preds = ckpt.model.predict(&feats, &ckpt.stats)?;

    let dir = create_run_dir(cfg, "predict", run_dir)?;
    let path = args.out.clone().unwrap_or_else(|| dir.join("predictions.csv"));
    let mut w = csv::Writer::from_writer(create(&path)?);
    let csv_err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    w.write_record(PREDICTION_HEADER).map_err(csv_err)?;
    for (p, s) in preds.iter().zip(&samples) {
        for h in 0..HOURS {
            w.write_record([
                p.date.to_string(),
                (h + 1).to_string(),
                p.y_init[h].to_string(),
                p.e_star[h].to_string(),
                p.y_refine[h].to_string(),
                s.target[h].to_string(),
                p.y_init_raw[h].to_string(),
                p.e_star_raw[h].to_string(),
                p.y_refine_raw[h].to_string(),
                s.target_raw[h].to_string(),
                day_type_name(s.day_type).to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    println!("{} days predicted -> {}", preds.len(), path.display());
    Ok(dir)
}

/// Per-day forecasts parsed back from a predictions file.
pub struct PredictionTable {
    pub dates: Vec<NaiveDate>,
    pub day_types: Vec<DayType>,
    pub init: Vec<[f64; HOURS]>,
    pub refined: Vec<[f64; HOURS]>,
    pub actual: Vec<[f64; HOURS]>,
}

pub fn read_predictions(path: &Path) -> Result<PredictionTable> {
    let data = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| data(e.to_string()))?;
    let header = rdr.headers().map_err(|e| data(e.to_string()))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| data(format!("missing column `{name}`")))
    };
    let (cd, ch, ci, cr, ca, ct) = (
        col("date")?,
        col("hour")?,
        col("y_init_raw")?,
        col("y_refine_raw")?,
        col("actual_raw")?,
        col("day_type")?,
    );
    let mut t = PredictionTable {
        dates: vec![],
        day_types: vec![],
        init: vec![],
        refined: vec![],
        actual: vec![],
    };
    let mut seen: Vec<[bool; HOURS]> = vec![];
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| data(e.to_string()))?;
        let num = |c: usize| -> Result<f64> {
            row[c]
                .trim()
                .parse::<f64>()
                .map_err(|_| data(format!("line {line}: `{}` in column {} is not a number", &row[c], &header[c])))
        };
        let date: NaiveDate = row[cd]
            .trim()
            .parse()
            .map_err(|_| data(format!("line {line}: bad date `{}`", &row[cd])))?;
        let hour: usize = row[ch]
            .trim()
            .parse()
            .ok()
            .filter(|h| (1..=HOURS).contains(h))
            .ok_or_else(|| data(format!("line {line}: hour must be 1..24")))?;
        let kind = match row[ct].trim() {
            "workday" => DayType::Workday,
            "restday" => DayType::RestDay,
            other => return Err(data(format!("line {line}: unknown day_type `{other}`"))),
        };
        if t.dates.last() != Some(&date) {
            if t.dates.last().is_some_and(|&d| d >= date) {
                return Err(data(format!("line {line}: dates must be increasing")));
            }
            t.dates.push(date);
            t.day_types.push(kind);
            t.init.push([0.0; HOURS]);
            t.refined.push([0.0; HOURS]);
            t.actual.push([0.0; HOURS]);
            seen.push([false; HOURS]);
        }
        let d = t.dates.len() - 1;
        if std::mem::replace(&mut seen[d][hour - 1], true) {
            return Err(data(format!("line {line}: duplicate hour {hour} for {date}")));
        }
        t.init[d][hour - 1] = num(ci)?;
        t.refined[d][hour - 1] = num(cr)?;
        t.actual[d][hour - 1] = num(ca)?;
    }
    if let Some(d) = seen.iter().position(|s| !s.iter().all(|&x| x)) {
        return Err(data(format!("{} does not have all 24 hours", t.dates[d])));
    }
    if t.dates.is_empty() {
        return Err(data("no rows".into()));
    }
    Ok(t)
}

pub struct EvaluateArgs {
    pub predictions: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub timing_runs: usize,
}

fn residual_lines(label: &str, r: &Option<ResidualAnalysis>) -> String {
    match r {
        Some(a) => format!(
            "{label} residuals: {} of {} beyond 2 sd (limit {:.1}) -> {}",
            a.outliers.len(),
            a.z.len(),
            a.threshold,
            if a.passes { "PASS" } else { "FAIL" }
        ),
        None => format!("{label} residuals: zero variance, analysis skipped"),
    }
}

struct Scored {
    dates: Vec<NaiveDate>,
    init: EvalReport,
    refined: EvalReport,
    res_init: Option<ResidualAnalysis>,
    res_refined: Option<ResidualAnalysis>,
    timing: Option<f64>,
}

pub fn evaluate(cfg: &RunConfig, args: &EvaluateArgs, run_dir: Option<&Path>) -> Result<PathBuf> {
    let scored = match (&args.predictions, &args.checkpoint) {
        (Some(p), None) => {
            let t = read_predictions(p)?;
            Scored {
                init: period_report(&t.init, &t.actual, &t.dates, &t.day_types)?,
                refined: period_report(&t.refined, &t.actual, &t.dates, &t.day_types)?,
                res_init: residual_analysis(&t.init, &t.actual).ok(),
                res_refined: residual_analysis(&t.refined, &t.actual).ok(),
                timing: None,
                dates: t.dates,
            }
        }
        (None, Some(c)) => {
            let ckpt = load_ckpt(c)?;
            let data = load_dataset(cfg)?;
            let (from, to) = test_window(cfg, &data.records)?;
            let samples = samples_in_range(&data.records, from, to, &ckpt.stats)?;
            let ev = evaluate_model(&ckpt.model, &samples, &ckpt.stats, args.timing_runs)?;
            for w in &ev.warnings {
                log::warn!("{w}");
            }
            Scored {
                dates: ev.predictions.iter().map(|p| p.date).collect(),
                init: ev.init,
                refined: ev.refined,
                res_init: ev.residual_init,
                res_refined: ev.residual_refined,
                timing: ev.timing_ms,
            }
        }
        _ => return Err(CliError::Usage("evaluate needs exactly one of --predictions or --checkpoint".into())),
    };
    let Scored {
        dates,
        init,
        refined,
        res_init: res_i,
        res_refined: res_r,
        timing,
    } = scored;

    let dir = create_run_dir(cfg, "evaluate", run_dir)?;
    write_report_csv(&[("initial", &init), ("refined", &refined)], create(&dir.join("report.csv"))?)?;
    let mut text = format_report_table("initial forecast", &init, None);
    text.push('\n');
    text.push_str(&format_report_table("refined forecast", &refined, timing));
    text.push('\n');
    for (label, r, file) in [
        ("initial", &res_i, "residuals_initial.csv"),
        ("refined", &res_r, "residuals_refined.csv"),
    ] {
        let _ = writeln!(text, "{}", residual_lines(label, r));
        if let Some(a) = r {
            write_residual_csv(a, &dates, create(&dir.join(file))?)?;
        }
    }
    write(&dir.join("report.txt"), &text)?;
    let summary = serde_json::json!({
        "initial": init,
        "refined": refined,
        "timing_ms": timing,
        "outliers_initial": res_i.as_ref().map(|a| a.outliers.len()),
        "outliers_refined": res_r.as_ref().map(|a| a.outliers.len()),
    });
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Data(e.to_string()))?;
    write(&dir.join("summary.json"), &json)?;
    print!("{text}");
    Ok(dir)
}

pub fn ablate(cfg: &RunConfig, jobs: usize, run_dir: Option<&Path>) -> Result<PathBuf> {
    let data = load_dataset(cfg)?;
    let split = make_split(cfg, &data.records)?;
    let acfg = AblationConfig {
        model: cfg.model.clone(),
        stage1: cfg.stage1.clone(),
        stage2: cfg.stage2.clone(),
        seeds: cfg.ablation_seeds.clone(),
        jobs,
    };
    let dir = create_run_dir(cfg, "ablate", run_dir)?;
    let report = run_ablation(&split, &acfg)?;
    let table = format_ablation_table(&report);
    write_ablation_csv(&report, create(&dir.join("ablation.csv"))?)?;
    write(&dir.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(dir)
}

pub fn synth(cfg: &RunConfig, out: Option<&Path>, run_dir: Option<&Path>) -> Result<PathBuf> {
    let (days, profile) = (cfg.synth_days, &cfg.synth_profile);
    let records = synthesize_dataset(cfg.seed, days, profile)?;
    let dir = create_run_dir(cfg, "synth", run_dir)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| dir.join("synthetic.csv"));
    write_csv_file(&records, &path)?;
    println!("{days} synthetic days -> {}", path.display());
    Ok(dir)
}
