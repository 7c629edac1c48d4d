use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{NaiveDateTime, TimeDelta};

use super::{Channel, ForecastBlock, GridFrame, Group, CANONICAL_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TIMESTAMP_COLUMN: &str = "timestamp";
pub const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// How actual channel columns are matched to groups.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Schema {
    /// Exactly the 22 canonical channels, in order.
    Canonical,
    /// Any channels; the group comes from the name prefix (`load_`, `price_`, ...).
    #[default]
    Infer,
    /// Exactly these channels, in order.
    Explicit(Vec<Channel>),
}

pub(crate) fn schema_err(
    file: &Path,
    row: Option<usize>,
    column: Option<&str>,
    msg: impl Into<String>,
) -> Error {
    Error::Schema {
        file: file.display().to_string(),
        row,
        column: column.map(str::to_string),
        msg: msg.into(),
    }
}

/// Splits `name__f<h>` into (`name`, `h`).
fn forecast_parts(name: &str) -> Option<(&str, usize)> {
    let (base, h) = name.rsplit_once("__f")?;
    let h: usize = h.parse().ok()?;
    (h >= 1 && !base.is_empty()).then_some((base, h))
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<GridFrame> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| schema_err(path, None, None, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some(TIMESTAMP_COLUMN) {
        return Err(schema_err(
            path,
            None,
            Some(TIMESTAMP_COLUMN),
            "first column must be `timestamp`",
        ));
    }

    let mut actual: Vec<(usize, String)> = Vec::new();
    let mut fc: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for (i, name) in header.iter().enumerate().skip(1) {
        match forecast_parts(name) {
            Some((base, h)) => fc.entry(base.to_string()).or_default().push((h, i)),
            None => actual.push((i, name.clone())),
        }
    }

    let channels = resolve_channels(path, schema, &actual)?;

    // forecast layout: every forecast channel carries horizons 1..=W
    let mut horizon = None;
    let mut fchannels = Vec::new();
    let mut fcols = Vec::new();
    for (idx, c) in channels.iter().enumerate() {
        let Some(mut cols) = fc.remove(&c.name) else {
            continue;
        };
        cols.sort();
        let w = cols.len();
        if cols.iter().enumerate().any(|(k, &(h, _))| h != k + 1) {
            return Err(schema_err(
                path,
                None,
                Some(&c.name),
                "forecast horizons must be 1..=W without gaps",
            ));
        }
        if *horizon.get_or_insert(w) != w {
            return Err(schema_err(
                path,
                None,
                Some(&c.name),
                "forecast channels disagree on the horizon",
            ));
        }
        fchannels.push(idx);
        fcols.extend(cols.into_iter().map(|(_, col)| col));
    }
    if let Some((orphan, _)) = fc.into_iter().next() {
        let col = format!("{orphan}__f1");
        return Err(schema_err(
            path,
            None,
            Some(&col),
            format!("forecasts for unknown channel `{orphan}`"),
        ));
    }

    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut fvalues = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| schema_err(path, Some(row), None, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(schema_err(
                path,
                Some(row),
                None,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let ts = NaiveDateTime::parse_from_str(&rec[0], TIME_FORMAT).map_err(|e| {
            schema_err(
                path,
                Some(row),
                Some(TIMESTAMP_COLUMN),
                format!("bad timestamp `{}`: {e}", &rec[0]),
            )
        })?;
        if let Some(prev) = times.last() {
            let step = ts - *prev;
            if step != TimeDelta::hours(1) {
                let what = if step > TimeDelta::hours(1) {
                    "gap"
                } else {
                    "duplicate or out-of-order timestamp"
                };
                return Err(schema_err(
                    path,
                    Some(row),
                    Some(TIMESTAMP_COLUMN),
                    format!("{what}: {prev} followed by {ts}"),
                ));
            }
        }
        times.push(ts);
        let cell = |col: usize| -> Result<f64> {
            let raw = rec[col].trim();
            let v: f64 = raw.parse().map_err(|_| {
                schema_err(
                    path,
                    Some(row),
                    Some(&header[col]),
                    format!("not a number: `{raw}`"),
                )
            })?;
            if !v.is_finite() {
                return Err(schema_err(
                    path,
                    Some(row),
                    Some(&header[col]),
                    format!("non-finite value `{raw}`"),
                ));
            }
            Ok(v)
        };
        for (col, _) in &actual {
            values.push(cell(*col)?);
        }
        for &col in &fcols {
            fvalues.push(cell(col)?);
        }
    }
    if times.is_empty() {
        return Err(schema_err(path, None, None, "no data rows"));
    }
    let n = times.len();
    let forecasts = horizon.map(|w| ForecastBlock {
        channels: fchannels.clone(),
        horizon: w,
        values: Tensor::new(&[n, fchannels.len() * w], fvalues).expect("validated cells"),
    });
    Ok(GridFrame {
        times,
        values: Tensor::new(&[n, channels.len()], values).expect("validated cells"),
        channels,
        forecasts,
    })
}

fn resolve_channels(
    path: &Path,
    schema: &Schema,
    actual: &[(usize, String)],
) -> Result<Vec<Channel>> {
    let expect = |want: Vec<Channel>| -> Result<Vec<Channel>> {
        for (k, c) in want.iter().enumerate() {
            match actual.get(k) {
                Some((_, name)) if *name == c.name => {}
                _ if !actual.iter().any(|(_, n)| *n == c.name) => {
                    return Err(schema_err(path, None, Some(&c.name), "missing column"));
                }
                _ => {
                    return Err(schema_err(
                        path,
                        None,
                        Some(&c.name),
                        format!("column out of order (expected position {})", k + 1),
                    ))
                }
            }
        }
        if let Some((_, extra)) = actual.get(want.len()) {
            return Err(schema_err(path, None, Some(extra), "unexpected column"));
        }
        Ok(want)
    };
    match schema {
        Schema::Canonical => expect(
            CANONICAL_CHANNELS
                .iter()
                .map(|(n, g)| Channel {
                    name: n.to_string(),
                    group: *g,
                })
                .collect(),
        ),
        Schema::Explicit(chs) => expect(chs.clone()),
        Schema::Infer => actual
            .iter()
            .map(|(_, name)| {
                let group = Group::from_channel_name(name).ok_or_else(|| {
                    schema_err(
                        path,
                        None,
                        Some(name),
                        "cannot infer group from the name prefix",
                    )
                })?;
                Ok(Channel {
                    name: name.clone(),
                    group,
                })
            })
            .collect(),
    }
}

/// Writes the wide CSV format read by [`load_csv`]. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv(frame: &GridFrame, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(TIMESTAMP_COLUMN);
    for c in &frame.channels {
        out.push(',');
        out.push_str(&c.name);
    }
    if let Some(f) = &frame.forecasts {
        for &c in &f.channels {
            for h in 1..=f.horizon {
                out.push(',');
                out.push_str(&ForecastBlock::column_name(&frame.channels[c].name, h));
            }
        }
    }
    out.push('\n');
    for (t, ts) in frame.times.iter().enumerate() {
        out.push_str(&ts.format(TIME_FORMAT).to_string());
        let fc = frame.forecasts.as_ref().map(|f| f.values.row(t));
        for v in frame.values.row(t).iter().chain(fc.into_iter().flatten()) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))
}
