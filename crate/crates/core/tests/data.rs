mod common;

use std::fs;
use std::path::Path;

use chrono::{NaiveDate, TimeDelta};
use powermamba::data::{
    load_csv, stats, synth_gridset, windows, write_csv, Channel, ForecastSpec, GridFrame, Group,
    Schema, SplitSpec, SynthSpec, ZScore,
};
use powermamba::tensor::Tensor;
use powermamba::Error;
use proptest::prelude::*;

fn small_synth(days: f64, forecasts: Option<ForecastSpec>) -> GridFrame {
    synth_gridset(&SynthSpec {
        forecasts,
        ..SynthSpec::new(3, days / 365.0)
    })
    .unwrap()
}

fn tiny_frame(cols: &[(&str, Group)], rows: Vec<Vec<f64>>) -> GridFrame {
    let start = NaiveDate::from_ymd_opt(2021, 3, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    GridFrame {
        times: (0..rows.len())
            .map(|t| start + TimeDelta::hours(t as i64))
            .collect(),
        channels: cols
            .iter()
            .map(|(n, g)| Channel {
                name: n.to_string(),
                group: *g,
            })
            .collect(),
        values: Tensor::from_rows(&rows).unwrap(),
        forecasts: None,
    }
}

fn rewrite(path: &Path, f: impl Fn(Vec<String>) -> Vec<String>) {
    let lines: Vec<String> = fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    fs::write(path, f(lines).join("\n") + "\n").unwrap();
}

#[test]
fn canonical_round_trip() {
    let frame = small_synth(10.0, None);
    assert_eq!(
        frame.group_sizes(),
        vec![
            (Group::Load, 8),
            (Group::Price, 8),
            (Group::AsPrice, 4),
            (Group::Renewable, 2)
        ]
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.csv");
    write_csv(&frame, &path).unwrap();
    let back = load_csv(&path, &Schema::Canonical).unwrap();
    assert_eq!(back, frame);
    assert_eq!(load_csv(&path, &Schema::Infer).unwrap(), frame);
}

#[test]
fn extended_file_has_262_features() {
    let frame = small_synth(5.0, Some(ForecastSpec::new(24)));
    assert_eq!(frame.feature_count(), 262);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ext.csv");
    write_csv(&frame, &path).unwrap();
    let header = fs::read_to_string(&path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(header.split(',').count(), 263);
    assert!(header.contains("load_coast__f1,load_coast__f2"));
    assert!(header.ends_with("renewable_solar__f24"));
    let back = load_csv(&path, &Schema::Canonical).unwrap();
    let f = back.forecasts.as_ref().unwrap();
    assert_eq!((f.channels.len(), f.horizon), (10, 24));
    assert_eq!(back, frame);
}

#[test]
fn gap_is_reported_at_the_offending_row() {
    let frame = small_synth(3.0, None);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gap.csv");
    write_csv(&frame, &path).unwrap();
    rewrite(&path, |mut lines| {
        lines.remove(11);
        lines
    });
    match load_csv(&path, &Schema::Canonical) {
        Err(Error::Schema {
            row: Some(11),
            column: Some(c),
            msg,
            ..
        }) => {
            assert_eq!(c, "timestamp");
            assert!(
                msg.contains("gap") && msg.contains("2019-01-01 11:00:00"),
                "{msg}"
            );
        }
        other => panic!("expected a gap error, got {other:?}"),
    }
    rewrite(&path, |mut lines| {
        let dup = lines[5].clone();
        lines.insert(6, dup);
        lines
    });
    assert!(matches!(
        load_csv(&path, &Schema::Canonical),
        Err(Error::Schema { row: Some(6), .. })
    ));
}

#[test]
fn bad_cells_and_columns_name_their_location() {
    let frame = small_synth(2.0, None);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    write_csv(&frame, &path).unwrap();
    rewrite(&path, |mut lines| {
        let mut cells: Vec<String> = lines[4].split(',').map(str::to_string).collect();
        cells[3] = "NaN".into();
        lines[4] = cells.join(",");
        lines
    });
    match load_csv(&path, &Schema::Canonical) {
        Err(e @ Error::Schema { row: Some(4), .. }) => {
            assert!(e.to_string().contains("load_far_west"), "{e}")
        }
        other => panic!("{other:?}"),
    }

    write_csv(&frame, &path).unwrap();
    rewrite(&path, |lines| {
        lines
            .into_iter()
            .map(|l| {
                let mut c: Vec<&str> = l.split(',').collect();
                c.remove(9);
                c.join(",")
            })
            .collect()
    });
    match load_csv(&path, &Schema::Canonical) {
        Err(Error::Schema {
            column: Some(c),
            msg,
            ..
        }) => {
            assert_eq!(c, "price_houston");
            assert!(msg.contains("missing"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn group_statistics() {
    let f = tiny_frame(
        &[
            ("load_a", Group::Load),
            ("load_b", Group::Load),
            ("price_a", Group::Price),
        ],
        vec![
            vec![1.0, 3.0, 5.0],
            vec![1.0, 3.0, 5.0],
            vec![1.0, 3.0, 5.0],
        ],
    );
    let s = stats(&f);
    assert_eq!(s[&Group::Load], (2.0, 1.0));
    assert_eq!(s[&Group::Price], (5.0, 0.0));
}

/// Published statistics of the real dataset, checked only when the real dataset is supplied through
/// `POWERMAMBA_GRIDSET`.
#[test]
fn real_dataset_statistics_when_available() {
    let Ok(path) = std::env::var("POWERMAMBA_GRIDSET") else {
        eprintln!("POWERMAMBA_GRIDSET not set; skipping real-data statistics");
        return;
    };
    let frame = load_csv(Path::new(&path), &Schema::Canonical).unwrap();
    let s = stats(&frame);
    let (lm, ls) = s[&Group::Load];
    let (rm, rs) = s[&Group::Renewable];
    assert!((lm - 5797.93).abs() < 0.5 && (ls - 1446.52).abs() < 0.5);
    assert!((rm - 6363.30).abs() < 0.5 && (rs - 4438.36).abs() < 0.5);
}

#[test]
fn zscore_uses_training_rows_only() {
    let frame = small_synth(20.0, Some(ForecastSpec::new(6)));
    let split = SplitSpec::by_fraction(&frame, 0.75).unwrap();
    let z = ZScore::fit(&frame, split.train.clone()).unwrap();
    let std = z.apply(&frame).unwrap();
    let d = frame.width();
    for c in 0..d {
        let col: Vec<f64> = split.train.clone().map(|t| std.values.at(t, c)).collect();
        let n = col.len() as f64;
        let m = col.iter().sum::<f64>() / n;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        assert!(m.abs() < 1e-10 && (v - 1.0).abs() < 1e-10);
    }
    let test_means: Vec<f64> = (0..d)
        .map(|c| {
            split.test.clone().map(|t| std.values.at(t, c)).sum::<f64>() / split.test.len() as f64
        })
        .collect();
    assert!(test_means.iter().any(|m| m.abs() > 1e-3));

    let back = z.invert(&std.values).unwrap();
    for (a, b) in back.data().iter().zip(frame.values.data()) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }

    // forecasts use their own channel's statistics
    let f = std.forecasts.as_ref().unwrap();
    let c = f.channels[1];
    let raw = frame.forecasts.as_ref().unwrap().values.at(10, 6 + 2);
    assert!((f.values.at(10, 6 + 2) - (raw - z.mean[c]) / z.std[c]).abs() < 1e-12);

    // moving the test range leaves the fitted transform untouched
    let mut shifted = frame.clone();
    let data: Vec<f64> = frame
        .values
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if i / d >= split.test.start {
                v + 1000.0
            } else {
                *v
            }
        })
        .collect();
    shifted.values = Tensor::new(frame.values.shape(), data).unwrap();
    assert_eq!(ZScore::fit(&shifted, split.train.clone()).unwrap(), z);
}

#[test]
fn zscore_rejects_flat_channels() {
    let f = tiny_frame(
        &[("load_a", Group::Load), ("price_a", Group::Price)],
        vec![vec![1.0, 2.0], vec![2.0, 2.0], vec![3.0, 2.0]],
    );
    match ZScore::fit(&f, 0..3) {
        Err(Error::DegenerateChannel { channel, .. }) => assert_eq!(channel, "price_a"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn window_counts_and_containment() {
    let frame = small_synth(30.0, Some(ForecastSpec::new(24)));
    assert_eq!(windows(&frame, 0..300, 240, 24, 1).unwrap().len(), 37);
    assert_eq!(windows(&frame, 100..364, 240, 24, 1).unwrap().len(), 1);
    assert!(windows(&frame, 0..263, 240, 24, 1).unwrap().is_empty());

    let split = SplitSpec::by_fraction(&frame, 0.8).unwrap();
    for range in [split.train.clone(), split.test.clone()] {
        let ws = windows(&frame, range.clone(), 48, 24, 5).unwrap();
        for s in ws.starts() {
            assert!(*s >= range.start && s + 72 <= range.end);
        }
        let w = ws.get(ws.len() - 1);
        let s = w.start;
        assert_eq!(w.context.row(0), frame.values.row(s));
        assert_eq!(w.target.row(0), frame.values.row(s + 48));
        // forecasts issued at the last context hour, for the target hours
        let f = w.forecasts.unwrap();
        assert_eq!(f.shape(), &[24, 10]);
        let block = frame.forecasts.as_ref().unwrap();
        assert_eq!(f.at(3, 2), block.values.at(s + 47, 2 * 24 + 3));
    }
}

#[test]
fn split_by_time() {
    let frame = small_synth(4.0, None);
    let cut = frame.times[50];
    let s = SplitSpec::by_time(&frame, cut).unwrap();
    assert_eq!((s.train.clone(), s.test.clone()), (0..50, 50..96));
    assert!(SplitSpec::by_time(&frame, frame.times[0]).is_err());
    assert!(SplitSpec::by_fraction(&frame, 1.0).is_err());
}

#[test]
fn synthetic_generator_properties() {
    let spec = SynthSpec::new(7, 0.5);
    assert_eq!(spec.hours(), 4380);
    let a = synth_gridset(&spec).unwrap();
    assert_eq!(a.len(), 4380);
    assert_eq!(a.width(), 22);
    assert_eq!(a.times[0].to_string(), "2019-01-01 00:00:00");
    let b = synth_gridset(&spec).unwrap();
    assert_eq!(
        a.values
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>(),
        b.values
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    );
    assert_ne!(
        synth_gridset(&SynthSpec::new(8, 0.5)).unwrap().values,
        a.values
    );

    for (c, ch) in a.channels.iter().enumerate() {
        let col = a.values.column(c);
        match ch.group {
            Group::Load => {
                let n = col.len();
                let m = col.iter().sum::<f64>() / n as f64;
                let var: f64 = col.iter().map(|v| (v - m).powi(2)).sum();
                let cov: f64 = (24..n).map(|t| (col[t] - m) * (col[t - 24] - m)).sum();
                assert!(
                    cov / var > 0.5,
                    "{} lag-24 autocorrelation {}",
                    ch.name,
                    cov / var
                );
            }
            Group::Renewable | Group::AsPrice => {
                assert!(col.iter().all(|&v| v >= 0.0), "{}", ch.name)
            }
            Group::Price => {}
        }
    }
    assert!(synth_gridset(&SynthSpec::new(0, 0.5 / 365.0)).is_err());
}

#[test]
fn synthetic_forecast_noise_matches_spec() {
    let spec = ForecastSpec {
        horizon: 12,
        noise_frac: 0.1,
        growth: 0.0,
    };
    let frame = small_synth(120.0, Some(spec));
    let f = frame.forecasts.as_ref().unwrap();
    let j = 0;
    let c = f.channels[j];
    let col = frame.values.column(c);
    let m = col.iter().sum::<f64>() / col.len() as f64;
    let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
    for h in [1, 12] {
        let errs: Vec<f64> = (0..frame.len() - h)
            .map(|t| f.values.at(t, j * 12 + h - 1) - col[t + h])
            .collect();
        let e_sd = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
        assert!((e_sd / sd - 0.1).abs() < 0.01, "h={h}: {}", e_sd / sd);
    }
}

#[test]
fn channel_subset() {
    let spec = SynthSpec {
        channels: Some(vec!["price_north".into(), "renewable_wind".into()]),
        ..SynthSpec::new(1, 3.0 / 365.0)
    };
    let f = synth_gridset(&spec).unwrap();
    let full = synth_gridset(&SynthSpec::new(1, 3.0 / 365.0)).unwrap();
    assert_eq!(f.width(), 2);
    assert_eq!(f.values.column(1), full.values.column(20));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_window_count(len in 1usize..400, l in 1usize..100, w in 0usize..50, stride in 1usize..10, offset in 0usize..50) {
        let frame = small_synth(20.0, None);
        let range = offset..(offset + len).min(frame.len());
        let n = range.len();
        let ws = windows(&frame, range, l, w, stride).unwrap();
        let want = if n >= l + w { (n - l - w) / stride + 1 } else { 0 };
        prop_assert_eq!(ws.len(), want);
    }

    #[test]
    fn prop_csv_round_trip(seed: u64, days in 1usize..4, h in 0usize..4) {
        let spec = SynthSpec {
            forecasts: (h > 0).then(|| ForecastSpec::new(h)),
            ..SynthSpec::new(seed, days as f64 / 365.0)
        };
        let frame = synth_gridset(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_csv(&frame, &path).unwrap();
        prop_assert_eq!(load_csv(&path, &Schema::Infer).unwrap(), frame);
    }
}
