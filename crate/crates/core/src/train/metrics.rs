use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{Predictor, SampleSource};
use crate::data::{Channel, Group};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub group: String,
    pub mse: f64,
    pub mae: f64,
    pub channels: usize,
}

/// Errors on standardized series, averaged per channel and then over the
/// channels of each group. The `GridSet` row averages every channel.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub channel_mse: Vec<f64>,
    pub channel_mae: Vec<f64>,
    pub samples: usize,
    /// Set when there were no samples; all metrics are then zero.
    pub empty: bool,
    #[serde(skip)]
    pub seconds: f64,
}

pub const OVERALL: &str = "GridSet";

impl EvalReport {
    pub fn overall(&self) -> &ReportRow {
        &self.rows[0]
    }

    pub fn row(&self, group: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.group == group)
    }

    /// `group,mse,mae` with one row per report line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("group,mse,mae\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.group, r.mse, r.mae));
        }
        s
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>10} {:>10}", "", "MSE", "MAE")?;
        for r in &self.rows {
            writeln!(f, "{:<12} {:>10.4} {:>10.4}", r.group, r.mse, r.mae)?;
        }
        write!(f, "{} samples", self.samples)?;
        if self.empty {
            write!(f, " (empty test set)")?;
        }
        Ok(())
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn evaluate(
    model: &dyn Predictor,
    data: &dyn SampleSource,
    channels: &[Channel],
) -> Result<EvalReport> {
    let started = Instant::now();
    let d = channels.len();
    let per_sample: Vec<Result<(Vec<f64>, Vec<f64>, usize)>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let s = data.sample(i)?;
            let yhat = model.predict(&s.input)?;
            if yhat.shape() != s.target.shape() || s.target.cols() != d {
                return Err(Error::dim(
                    "evaluate",
                    format!("{:?} over {d} channels", s.target.shape()),
                    format!("{:?}", yhat.shape()),
                ));
            }
            let mut sq = vec![0.0; d];
            let mut ab = vec![0.0; d];
            for (k, (p, y)) in yhat.data().iter().zip(s.target.data()).enumerate() {
                let e = p - y;
                sq[k % d] += e * e;
                ab[k % d] += e.abs();
            }
            Ok((sq, ab, s.target.rows()))
        })
        .collect();

    let mut sq = vec![0.0; d];
    let mut ab = vec![0.0; d];
    let mut count = 0usize;
    for r in per_sample {
        let (s, a, rows) = r?;
        sq.iter_mut().zip(&s).for_each(|(x, y)| *x += y);
        ab.iter_mut().zip(&a).for_each(|(x, y)| *x += y);
        count += rows;
    }
    let denom = count.max(1) as f64;
    let channel_mse: Vec<f64> = sq.iter().map(|v| v / denom).collect();
    let channel_mae: Vec<f64> = ab.iter().map(|v| v / denom).collect();

    let row = |name: &str, idx: &[usize]| ReportRow {
        group: name.to_string(),
        mse: mean(idx.iter().map(|&c| channel_mse[c])),
        mae: mean(idx.iter().map(|&c| channel_mae[c])),
        channels: idx.len(),
    };
    let all: Vec<usize> = (0..d).collect();
    let mut rows = vec![row(OVERALL, &all)];
    for g in Group::ALL {
        let idx: Vec<usize> = (0..d).filter(|&c| channels[c].group == g).collect();
        if !idx.is_empty() {
            rows.push(row(g.label(), &idx));
        }
    }
    Ok(EvalReport {
        rows,
        channel_mse,
        channel_mae,
        samples: data.len(),
        empty: data.is_empty(),
        seconds: started.elapsed().as_secs_f64(),
    })
}
