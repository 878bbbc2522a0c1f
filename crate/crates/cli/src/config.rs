//! Flat `key = value` run configuration.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Every key
//! has a default and can be overridden on the command line as `--key=value`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use loadcast::data::{CsvSchema, SynthProfile, Unit, DEFAULT_SIGMA_THRESHOLD_KW};
use loadcast::model::ModelConfig;
use loadcast::training::StageSchedule;

use crate::error::CliError;

/// `(key, default, description)` in the order they are written out.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("source", "csv", "csv or synthetic"),
    ("data_path", "", "input CSV (source = csv)"),
    ("unit", "kW", "kW or MW"),
    ("col_date", "date", "date column header"),
    ("col_hour", "hour", "hour column header"),
    ("col_load", "load", "load column header"),
    ("col_temp", "temp", "temperature column header"),
    ("col_humidity", "humidity", "optional humidity column header"),
    ("col_rainfall", "rainfall", "optional rainfall column header"),
    ("col_holiday", "holiday", "optional holiday flag column header"),
    ("sigma_threshold", "", "daily std threshold for cleaning; empty = 140 for kW"),
    ("synth_days", "400", "days generated when source = synthetic"),
    ("synth_start", "2004-01-01", "first synthetic day"),
    ("synth_load_noise", "5", "synthetic load noise std"),
    ("synth_temp_noise", "0.5", "synthetic temperature noise std"),
    ("train_start", "", "first training day; empty = first record"),
    ("test_start", "", "first test day; empty = 7 days before the last record"),
    ("test_end", "", "last test day; empty = last record"),
    ("model_preset", "default", "default or tiny"),
    ("conv_channels", "", "7 comma-separated widths; empty = preset"),
    ("n_heads", "", "attention heads; empty = preset"),
    ("n_encoder_layers", "", "empty = preset"),
    ("n_decoder_layers", "", "empty = preset"),
    ("attn_ffn_hidden", "", "empty = preset"),
    ("head_hidden", "", "empty = preset"),
    ("gru_hidden", "", "empty = preset"),
    ("refine_hidden", "", "empty = preset"),
    ("dropout", "", "empty = preset"),
    ("stage1_batch_size", "32", ""),
    ("stage1_lr", "0.001", ""),
    ("stage1_milestones", "150,300", "epochs where the rate halves"),
    ("stage1_epochs", "500", ""),
    ("stage2_batch_size", "16", ""),
    ("stage2_lr", "0.01", ""),
    ("stage2_milestones", "100,200", ""),
    ("stage2_epochs", "300", ""),
    ("grad_clip", "", "global gradient norm clip; empty = off"),
    ("seed", "42", "single source of randomness"),
    ("ablation_seeds", "1,2,3,4,5", ""),
    ("output_dir", "runs", "parent of the timestamped run directories"),
];

pub fn is_key(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Csv(PathBuf),
    Synthetic,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    /// Every key with its resolved text value.
    pub raw: BTreeMap<String, String>,
    pub source: Source,
    pub schema: CsvSchema,
    pub unit: Unit,
    pub sigma_threshold: f64,
    pub synth_days: usize,
    pub synth_profile: SynthProfile,
    pub train_start: Option<NaiveDate>,
    pub test_start: Option<NaiveDate>,
    pub test_end: Option<NaiveDate>,
    pub model: ModelConfig,
    pub stage1: StageSchedule,
    pub stage2: StageSchedule,
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub ablation_seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

/// Parse the file grammar into a key map, rejecting unknown keys.
pub fn parse_pairs(text: &str, origin: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected `key = value`", i + 1)))?;
        let k = k.trim();
        if !is_key(k) {
            return Err(CliError::Config(format!("{origin}:{}: unknown key `{k}`", i + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| CliError::Config(format!("{key} = `{v}`: {e}")))
}

fn opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    if v.is_empty() {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    /// Defaults, then the file (if any), then overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut raw: BTreeMap<String, String> = KEYS.iter().map(|(k, d, _)| (k.to_string(), d.to_string())).collect();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            raw.extend(parse_pairs(&text, &p.display().to_string())?);
        }
        for (k, v) in overrides {
            if !is_key(k) {
                return Err(CliError::Usage(format!("unknown config key `--{k}`")));
            }
            raw.insert(k.clone(), v.clone());
        }
        Self::resolve(raw)
    }

    pub fn resolve(raw: BTreeMap<String, String>) -> Result<Self, CliError> {
        let g = |k: &str| raw.get(k).map(String::as_str).unwrap_or("");
        let unit: Unit = parse("unit", g("unit"))?;
        let source = match g("source") {
            "csv" => Source::Csv(PathBuf::from(g("data_path"))),
            "synthetic" => Source::Synthetic,
            other => return Err(CliError::Config(format!("source must be csv or synthetic, got `{other}`"))),
        };
        let synth_days: usize = parse("synth_days", g("synth_days"))?;
        if synth_days < 30 {
            return Err(CliError::Config(format!("synth_days must be at least 30, got {synth_days}")));
        }
        let synth_profile = SynthProfile {
            start: parse("synth_start", g("synth_start"))?,
            load_noise_std: parse("synth_load_noise", g("synth_load_noise"))?,
            temp_noise_std: parse("synth_temp_noise", g("synth_temp_noise"))?,
            ..SynthProfile::default()
        };
        if !(synth_profile.load_noise_std >= 0.0 && synth_profile.temp_noise_std >= 0.0) {
            return Err(CliError::Config("synthetic noise levels must be non-negative".into()));
        }
        let schema = CsvSchema {
            date: g("col_date").into(),
            hour: g("col_hour").into(),
            load: g("col_load").into(),
            temp: g("col_temp").into(),
            humidity: g("col_humidity").into(),
            rainfall: g("col_rainfall").into(),
            holiday: g("col_holiday").into(),
            ..CsvSchema::default()
        };
        let sigma_threshold = match opt::<f64>("sigma_threshold", g("sigma_threshold"))? {
            Some(s) if s > 0.0 => s,
            Some(s) => return Err(CliError::Config(format!("sigma_threshold must be positive, got {s}"))),
            None if unit == Unit::Kw => DEFAULT_SIGMA_THRESHOLD_KW,
            None => return Err(CliError::Config("MW data needs an explicit sigma_threshold".into())),
        };

        let mut model = match g("model_preset") {
            "default" => ModelConfig::default(),
            "tiny" => ModelConfig::tiny(),
            other => return Err(CliError::Config(format!("model_preset must be default or tiny, got `{other}`"))),
        };
        if !g("conv_channels").is_empty() {
            let c: Vec<usize> = list("conv_channels", g("conv_channels"))?;
            model.conv_channels = c
                .try_into()
                .map_err(|c: Vec<usize>| CliError::Config(format!("conv_channels needs 7 widths, got {}", c.len())))?;
        }
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = opt(stringify!($f), g(stringify!($f)))? { model.$f = v; }
            )*};
        }
        set!(n_heads, n_encoder_layers, n_decoder_layers, attn_ffn_hidden, head_hidden, gru_hidden, refine_hidden, dropout);
        model.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let schedule = |stage: u8| -> Result<StageSchedule, CliError> {
            let k = |s: &str| format!("stage{stage}_{s}");
            let s = StageSchedule {
                stage,
                batch_size: parse(&k("batch_size"), g(&k("batch_size")))?,
                initial_lr: parse(&k("lr"), g(&k("lr")))?,
                milestones: list(&k("milestones"), g(&k("milestones")))?,
                total_epochs: parse(&k("epochs"), g(&k("epochs")))?,
            };
            s.validate().map_err(|e| CliError::Config(format!("stage {stage} schedule: {e}")))?;
            Ok(s)
        };
        let (stage1, stage2) = (schedule(1)?, schedule(2)?);

        let grad_clip = opt::<f64>("grad_clip", g("grad_clip"))?;
        if grad_clip.is_some_and(|c| c <= 0.0 || !c.is_finite()) {
            return Err(CliError::Config("grad_clip must be positive".into()));
        }
        let train_start = opt("train_start", g("train_start"))?;
        let test_start = opt("test_start", g("test_start"))?;
        let test_end = opt("test_end", g("test_end"))?;
        if let (Some(s), Some(e)) = (test_start, test_end) {
            if e < s {
                return Err(CliError::Config(format!("test_end {e} is before test_start {s}")));
            }
        }
        if let (Some(t), Some(s)) = (train_start, test_start) {
            if s <= t {
                return Err(CliError::Config(format!("test_start {s} is not after train_start {t}")));
            }
        }
        let ablation_seeds: Vec<u64> = list("ablation_seeds", g("ablation_seeds"))?;
        if ablation_seeds.is_empty() {
            return Err(CliError::Config("ablation_seeds needs at least one seed".into()));
        }
        if g("output_dir").is_empty() {
            return Err(CliError::Config("output_dir must not be empty".into()));
        }
        Ok(RunConfig {
            source,
            schema,
            unit,
            sigma_threshold,
            synth_days,
            synth_profile,
            train_start,
            test_start,
            test_end,
            model,
            stage1,
            stage2,
            grad_clip,
            seed: parse("seed", g("seed"))?,
            ablation_seeds,
            output_dir: PathBuf::from(g("output_dir")),
            raw,
        })
    }

    /// Check that the configured data source is usable. Commands that read
    /// data call this before producing any output.
    pub fn require_data(&self) -> Result<(), CliError> {
        if let Source::Csv(p) = &self.source {
            if p.as_os_str().is_empty() {
                return Err(CliError::Config("source = csv needs data_path".into()));
            }
            if !p.is_file() {
                return Err(CliError::Config(format!("data_path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// The resolved configuration in file syntax.
    pub fn render(&self) -> String {
        let mut out = String::from("# resolved loadcast configuration\n");
        for (k, _, doc) in KEYS {
            let v = self.raw.get(*k).map(String::as_str).unwrap_or("");
            if doc.is_empty() {
                let _ = writeln!(out, "{k} = {v}");
            } else {
                let _ = writeln!(out, "{k} = {v}  # {doc}");
            }
        }
        out
    }
}
