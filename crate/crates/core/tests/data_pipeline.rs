use chrono::{Datelike, NaiveDate, Weekday};
use loadcast::data::{
    build_feature_matrix, clean_records, day_statistics, detect_anomalous_day, locate_and_replace_outliers, read_csv,
    split_train_test, synthesize_dataset, write_csv, CsvSchema, DailyRecord, DataError, History, MinMax, SplitSpec,
    SynthProfile, Unit, FEATURE_ROWS, HOURS,
};
use proptest::prelude::*;

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn synth_from(start: NaiveDate, end: NaiveDate, seed: u64) -> Vec<DailyRecord> {
    let n = (end - start).num_days() as usize + 1;
    let profile = SynthProfile {
        start,
        ..SynthProfile::default()
    };
    synthesize_dataset(seed, n, &profile).unwrap()
}

#[test]
fn single_spike_day_is_anomalous() {
    let mut loads = [500.0; HOURS];
    loads[7] = 1500.0;
    let rec = DailyRecord::new(ymd(2008, 6, 23), loads, [20.0; HOURS]);
    // direct evaluation: mu = (23*500 + 1500)/24, sigma over 24 with divisor 24
    let mu: f64 = (23.0 * 500.0 + 1500.0) / 24.0;
    let sigma: f64 = ((23.0 * (500.0 - mu) * (500.0 - mu) + (1500.0 - mu) * (1500.0 - mu)) / 24.0).sqrt();
    let check = detect_anomalous_day(&rec, 140.0);
    assert!((check.mean - 541.6666666666666).abs() < 1e-9);
    assert!((check.sigma - sigma).abs() < 1e-9);
    assert!((check.sigma - 1000.0 * 23f64.sqrt() / 24.0).abs() < 1e-9);
    assert!(check.sigma > 140.0);
    assert!(check.anomalous);

    let (out, log) = locate_and_replace_outliers(&rec).unwrap();
    assert_eq!(log.len(), 1);
    assert_eq!(log[0].hour, 8);
    assert!(((1500.0 - mu) / sigma - 4.8).abs() < 0.05);
    assert_eq!(out.loads, [500.0; HOURS]);
}

#[test]
fn paper_window_gives_seven_test_days() {
    let recs = synth_from(ymd(2004, 1, 1), ymd(2008, 6, 29), 5);
    let spec = SplitSpec {
        train_start: Some(ymd(2004, 1, 1)),
        train_end: Some(ymd(2008, 6, 22)),
        test_start: ymd(2008, 6, 23),
        test_end: ymd(2008, 6, 29),
    };
    let split = split_train_test(&recs, &spec).unwrap();
    assert_eq!(split.test.len(), 7);
    assert_eq!(split.test[0].features.target_date, ymd(2008, 6, 23));
    assert_eq!(split.test[6].features.target_date, ymd(2008, 6, 29));
    let last_train = split.train.iter().map(|s| s.features.target_date).max().unwrap();
    assert!(last_train < ymd(2008, 6, 23));
}

#[test]
fn test_window_before_training_end_is_rejected() {
    let recs = synth_from(ymd(2007, 1, 1), ymd(2007, 12, 31), 1);
    let spec = SplitSpec {
        train_start: None,
        train_end: Some(ymd(2007, 12, 20)),
        test_start: ymd(2007, 12, 15),
        test_end: ymd(2007, 12, 31),
    };
    assert!(matches!(split_train_test(&recs, &spec), Err(DataError::Chronology(_))));
    let empty = SplitSpec::test_window(ymd(2007, 12, 31), ymd(2007, 12, 30));
    assert!(matches!(split_train_test(&recs, &empty), Err(DataError::EmptyTestWindow { .. })));
    let outside = SplitSpec::test_window(ymd(2009, 1, 1), ymd(2009, 1, 7));
    assert!(matches!(split_train_test(&recs, &outside), Err(DataError::EmptyTestWindow { .. })));
}

#[test]
fn one_year_train_count_matches_enumeration() {
    let recs = synth_from(ymd(2007, 1, 1), ymd(2007, 12, 31), 2);
    assert_eq!(recs.len(), 365);
    let spec = SplitSpec::test_window(ymd(2007, 12, 25), ymd(2007, 12, 31));
    let split = split_train_test(&recs, &spec).unwrap();

    // independent oracle: a day is usable when two earlier days of the same type exist
    let holidays = [(1, 1), (5, 1), (7, 4), (10, 1), (12, 25)];
    let rest = |d: NaiveDate| {
        matches!(d.weekday(), Weekday::Sat | Weekday::Sun) || holidays.contains(&(d.month(), d.day()))
    };
    let mut seen = [0usize; 2];
    let mut warmup = 0;
    for d in ymd(2007, 1, 1).iter_days().take(365 - 7) {
        let k = rest(d) as usize;
        if seen[k] < 2 {
            warmup += 1;
        }
        seen[k] += 1;
    }
    assert_eq!(split.train.len(), 365 - 7 - warmup);
    assert_eq!(split.test.len(), 7);
    assert_eq!(split.skipped.len(), warmup);
}

#[test]
fn normalization_stats_ignore_test_days() {
    let mut recs = synth_from(ymd(2007, 1, 1), ymd(2007, 12, 31), 3);
    // push the test window out of the training range on both quantities
    for r in recs.iter_mut().rev().take(7) {
        r.loads = [5000.0; HOURS];
        r.temps = [60.0; HOURS];
    }
    let spec = SplitSpec::test_window(ymd(2007, 12, 25), ymd(2007, 12, 31));
    let split = split_train_test(&recs, &spec).unwrap();
    let train_only = MinMax::fit(recs[..358].iter().flat_map(|r| r.loads)).unwrap();
    let with_test = MinMax::fit(recs.iter().flat_map(|r| r.loads)).unwrap();
    assert_eq!(split.stats.load, train_only);
    assert_ne!(split.stats.load, with_test);
    assert!(split.stats.temperature.max < 60.0);
    // test targets are not clipped
    assert!(split.test.iter().all(|s| s.target.iter().all(|&y| y > 1.0)));
}

#[test]
fn training_features_are_finite_and_in_unit_range() {
    let recs = synth_from(ymd(2007, 1, 1), ymd(2007, 12, 31), 4);
    let split = split_train_test(&recs, &SplitSpec::test_window(ymd(2007, 12, 25), ymd(2007, 12, 31))).unwrap();
    for s in &split.train {
        let f = &s.features;
        assert_eq!(f.values().len(), FEATURE_ROWS * HOURS);
        assert!(f.values().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        assert_eq!(f.row(0).iter().sum::<f64>(), 1.0);
        assert_eq!(f.row(1).iter().chain(f.row(2)).sum::<f64>(), 1.0);
        assert_eq!(f.row(3).iter().sum::<f64>(), 1.0);
        assert!(s.target.iter().all(|y| (0.0..=1.0).contains(y)));
    }
}

#[test]
fn holiday_rest_flag_is_all_ones() {
    let recs = synth_from(ymd(2007, 12, 1), ymd(2008, 1, 10), 6);
    let split = split_train_test(&recs, &SplitSpec::test_window(ymd(2008, 1, 1), ymd(2008, 1, 2))).unwrap();
    // Tuesday 2008-01-01 is a synthetic holiday, Wednesday 2008-01-02 a workday
    assert!(split.test[0].features.row(4).iter().all(|&x| x == 1.0));
    assert!(split.test[1].features.row(4).iter().all(|&x| x == 0.0));
    assert_eq!(split.test[0].features.get(0, 0), 1.0);
    assert_eq!(split.test[0].features.get(1, 0), 1.0);
    assert_eq!(split.test[1].features.get(1, 1), 1.0);
}

#[test]
fn history_requires_sorted_records() {
    let mut recs = synth_from(ymd(2007, 1, 1), ymd(2007, 2, 28), 1);
    recs.swap(3, 4);
    assert!(History::new(&recs).is_err());
    let stats = loadcast::data::NormStats {
        load: MinMax::new(0.0, 1.0).unwrap(),
        temperature: MinMax::new(0.0, 1.0).unwrap(),
    };
    recs.swap(3, 4);
    let h = History::new(&recs).unwrap();
    assert!(build_feature_matrix(ymd(2007, 3, 1), &h, &stats).is_err());
}

fn with_spikes(seed: u64) -> Vec<DailyRecord> {
    let mut recs = synth_from(ymd(2007, 1, 1), ymd(2007, 3, 31), seed);
    for (i, r) in recs.iter_mut().enumerate() {
        if i % 9 == 4 {
            r.loads[(i * 7) % HOURS] += 900.0;
            r.loads[(i * 7 + 1) % HOURS] += 700.0;
        }
    }
    recs
}

#[test]
fn cleaning_reduces_sigma_and_is_idempotent() {
    let recs = with_spikes(8);
    let first = clean_records(&recs, 140.0);
    assert!(!first.replacements.is_empty());
    assert!(first.dropped.is_empty());
    for (before, after) in recs.iter().zip(&first.records) {
        if after.replaced.iter().any(|&r| r) {
            assert!(day_statistics(&after.loads).1 < day_statistics(&before.loads).1);
        }
    }
    // days that fell below the threshold are left alone on a second pass
    let second = clean_records(&first.records, 140.0);
    for (a, b) in first.records.iter().zip(&second.records) {
        if !detect_anomalous_day(a, 140.0).anomalous {
            assert_eq!(a, b);
        }
    }
    assert!(first.records.iter().all(|r| r.loads.iter().all(|&x| x >= 0.0)));
}

#[test]
fn cleaned_records_survive_csv_round_trip() {
    let mut recs = clean_records(&with_spikes(9), 140.0).records;
    recs[3].humidity = Some(61.5);
    recs[3].rainfall = Some(0.25);
    let mut buf = Vec::new();
    write_csv(&recs, &mut buf).unwrap();
    let back = read_csv(buf.as_slice(), &CsvSchema::default(), Unit::Kw).unwrap();
    assert_eq!(back.records, recs);
    assert!(back.gaps.is_empty());
}

#[test]
fn hourly_temperature_file_with_custom_headers() {
    // hand-built fixture in a GEFCom-like layout
    let mut text = String::from("Date,Hour,Load_kW,Temperature\n");
    let mut expected = Vec::new();
    for (i, date) in ["2008-06-23", "2008-06-24"].iter().enumerate() {
        let mut temps = [0.0; HOURS];
        for h in 0..HOURS {
            let t = 15.0 + 0.5 * h as f64 + i as f64;
            temps[h] = t;
            text.push_str(&format!("{date},{},{},{t}\n", h + 1, 400 + 10 * h));
        }
        expected.push(temps);
    }
    let schema = CsvSchema {
        date: "Date".into(),
        hour: "Hour".into(),
        load: "Load_kW".into(),
        temp: "Temperature".into(),
        ..CsvSchema::default()
    };
    let got = read_csv(text.as_bytes(), &schema, Unit::Kw).unwrap();
    assert_eq!(got.records.len(), 2);
    for (r, temps) in got.records.iter().zip(&expected) {
        assert_eq!(&r.temps, temps);
        assert_eq!(r.loads[23], 630.0);
    }
}

#[test]
fn synthetic_generator_contract() {
    let p = SynthProfile::default();
    let a = synthesize_dataset(42, 400, &p).unwrap();
    assert_eq!(a, synthesize_dataset(42, 400, &p).unwrap());
    assert_eq!(a.len(), 400);
    assert!(a.windows(2).all(|w| w[1].date == w[0].date.succ_opt().unwrap()));
    let mean = |rest: bool| {
        let v: Vec<f64> = a.iter().filter(|r| r.is_weekend() == rest).map(|r| r.mean_load()).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(true) < mean(false));
    assert!(matches!(synthesize_dataset(42, 29, &p), Err(DataError::Invalid(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn replacement_always_lowers_sigma(
        base in prop::collection::vec(300f64..700.0, HOURS),
        spikes in prop::collection::vec((0usize..HOURS, 200f64..2000.0), 1..4),
    ) {
        let mut loads: [f64; HOURS] = base.try_into().unwrap();
        for (h, s) in spikes {
            loads[h] += s;
        }
        let rec = DailyRecord::new(ymd(2008, 1, 1), loads, [0.0; HOURS]);
        let (out, log) = locate_and_replace_outliers(&rec).unwrap();
        if !log.is_empty() {
            prop_assert!(day_statistics(&out.loads).1 < day_statistics(&rec.loads).1);
        }
        prop_assert_eq!(out.replaced.iter().filter(|&&r| r).count(), log.len());
    }
}
