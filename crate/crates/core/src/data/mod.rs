//! Hourly grid datasets: schema, CSV I/O, statistics, standardization,
//! splitting, sliding windows and a synthetic generator.

mod csvio;
mod synth;

pub(crate) use csvio::schema_err;
pub use csvio::{load_csv, write_csv, Schema, TIMESTAMP_COLUMN, TIME_FORMAT};
pub use synth::{synth_gridset, ForecastSpec, SynthSpec};

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Load,
    Price,
    AsPrice,
    Renewable,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Load, Group::Price, Group::AsPrice, Group::Renewable];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Load => "load",
            Group::Price => "price",
            Group::AsPrice => "asprice",
            Group::Renewable => "renewable",
        }
    }

    /// Row label used in evaluation reports.
    pub fn label(self) -> &'static str {
        match self {
            Group::Load => "Load",
            Group::Price => "Price",
            Group::AsPrice => "ASPrice",
            Group::Renewable => "Renewables",
        }
    }

    /// Group from a `<group>_<zone>` channel name.
    pub fn from_channel_name(name: &str) -> Option<Group> {
        let prefix = name.split('_').next()?;
        prefix.parse().ok()
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Group::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown channel group `{s}`")))
    }
}

/// The 22 channels of the canonical dataset, in file order.
pub const CANONICAL_CHANNELS: [(&str, Group); 22] = [
    ("load_coast", Group::Load),
    ("load_east", Group::Load),
    ("load_far_west", Group::Load),
    ("load_north", Group::Load),
    ("load_north_central", Group::Load),
    ("load_south_central", Group::Load),
    ("load_southern", Group::Load),
    ("load_west", Group::Load),
    ("price_houston", Group::Price),
    ("price_north", Group::Price),
    ("price_south", Group::Price),
    ("price_west", Group::Price),
    ("price_austin", Group::Price),
    ("price_cps", Group::Price),
    ("price_lcra", Group::Price),
    ("price_raybn", Group::Price),
    ("asprice_regup", Group::AsPrice),
    ("asprice_regdown", Group::AsPrice),
    ("asprice_rrs", Group::AsPrice),
    ("asprice_nonspin", Group::AsPrice),
    ("renewable_wind", Group::Renewable),
    ("renewable_solar", Group::Renewable),
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub group: Group,
}

/// External forecasts stored wide: for each forecast channel `j` and horizon
/// `h ∈ 1..=W`, column `j·W + h − 1` at row `t` holds the forecast for hour
/// `t + h` issued at hour `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastBlock {
    /// Index into the frame's channels for each forecast channel.
    pub channels: Vec<usize>,
    pub horizon: usize,
    /// `T × (D_f·W)`.
    pub values: Tensor,
}

impl ForecastBlock {
    pub fn column_name(channel: &str, h: usize) -> String {
        format!("{channel}__f{h}")
    }

    /// `w × D_f` forecasts for the first `w` horizons issued at row `t`.
    pub fn issued_at(&self, t: usize, w: usize) -> Tensor {
        let (df, full) = (self.channels.len(), self.horizon);
        assert!(w <= full, "requested horizon {w} beyond stored {full}");
        let row = self.values.row(t);
        let data = (0..w)
            .flat_map(|h| (0..df).map(move |j| row[j * full + h]))
            .collect();
        Tensor::new(&[w, df], data).expect("finite block")
    }
}

/// Hourly, gap-free multichannel series.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFrame {
    pub times: Vec<NaiveDateTime>,
    pub channels: Vec<Channel>,
    /// `T × D` actuals.
    pub values: Tensor,
    pub forecasts: Option<ForecastBlock>,
}

impl GridFrame {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn width(&self) -> usize {
        self.channels.len()
    }

    /// Channel indices belonging to each group present in the frame.
    pub fn groups(&self) -> BTreeMap<Group, Vec<usize>> {
        let mut g: BTreeMap<Group, Vec<usize>> = BTreeMap::new();
        for (i, c) in self.channels.iter().enumerate() {
            g.entry(c.group).or_default().push(i);
        }
        g
    }

    pub fn group_sizes(&self) -> Vec<(Group, usize)> {
        self.groups()
            .into_iter()
            .map(|(g, v)| (g, v.len()))
            .collect()
    }

    /// Total column count of the wide file, timestamp excluded.
    pub fn feature_count(&self) -> usize {
        self.width() + self.forecasts.as_ref().map_or(0, |f| f.values.cols())
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }
}

/// Population mean and standard deviation pooled over every value of each group.
pub fn stats(frame: &GridFrame) -> BTreeMap<Group, (f64, f64)> {
    let mut out = BTreeMap::new();
    let d = frame.width();
    for (group, idx) in frame.groups() {
        let vals = || {
            (0..frame.len()).flat_map(|t| idx.iter().map(move |&c| frame.values.data()[t * d + c]))
        };
        let n = (frame.len() * idx.len()) as f64;
        let mean = vals().sum::<f64>() / n;
        let var = vals().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        out.insert(group, (mean, var.sqrt()));
    }
    out
}

/// Disjoint, ordered train and test row ranges covering a frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

impl SplitSpec {
    /// First `fraction` of the rows (rounded down) for training.
    pub fn by_fraction(frame: &GridFrame, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction must be in (0, 1), got {fraction}"
            )));
        }
        let cut = (frame.len() as f64 * fraction).floor() as usize;
        Self::at_row(frame, cut)
    }

    /// Rows strictly before `train_end` train; the rest test.
    pub fn by_time(frame: &GridFrame, train_end: NaiveDateTime) -> Result<Self> {
        let cut = frame.times.partition_point(|t| *t < train_end);
        Self::at_row(frame, cut)
    }

    fn at_row(frame: &GridFrame, cut: usize) -> Result<Self> {
        if cut == 0 || cut >= frame.len() {
            return Err(Error::Config(format!(
                "split leaves an empty range ({cut} of {} rows)",
                frame.len()
            )));
        }
        Ok(Self {
            train: 0..cut,
            test: cut..frame.len(),
        })
    }
}

/// Per-channel standardization fitted on the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScore {
    pub fn fit(frame: &GridFrame, train: Range<usize>) -> Result<Self> {
        if train.is_empty() || train.end > frame.len() {
            return Err(Error::Config(format!(
                "invalid training range {train:?} for {} rows",
                frame.len()
            )));
        }
        let d = frame.width();
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        for c in 0..d {
            let col = || train.clone().map(|t| frame.values.data()[t * d + c]);
            let m = col().sum::<f64>() / n;
            let var = col().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if s < 1e-12 {
                return Err(Error::DegenerateChannel {
                    channel: frame.channels[c].name.clone(),
                    std: s,
                });
            }
            mean[c] = m;
            std[c] = s;
        }
        Ok(Self { mean, std })
    }

    /// Standardizes actuals and each forecast column with its channel's statistics.
    pub fn apply(&self, frame: &GridFrame) -> Result<GridFrame> {
        let d = frame.width();
        if self.mean.len() != d {
            return Err(Error::dim(
                "zscore apply",
                format!("{} channels", self.mean.len()),
                format!("{d}"),
            ));
        }
        let values = map_columns(&frame.values, |c, v| (v - self.mean[c]) / self.std[c])?;
        let forecasts = match &frame.forecasts {
            Some(f) => Some(ForecastBlock {
                values: map_columns(&f.values, |col, v| {
                    let c = f.channels[col / f.horizon];
                    (v - self.mean[c]) / self.std[c]
                })?,
                ..f.clone()
            }),
            None => None,
        };
        Ok(GridFrame {
            values,
            forecasts,
            ..frame.clone()
        })
    }

    /// Maps standardized `rows × D` values back to original units.
    pub fn invert(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.mean.len() {
            return Err(Error::dim(
                "zscore invert",
                format!("[rows, {}]", self.mean.len()),
                format!("{:?}", x.shape()),
            ));
        }
        map_columns(x, |c, v| v * self.std[c] + self.mean[c])
    }
}

fn map_columns(x: &Tensor, f: impl Fn(usize, f64) -> f64) -> Result<Tensor> {
    let cols = x.cols();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| f(i % cols, v))
        .collect();
    Tensor::new(x.shape(), data)
}

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// Row index of the first context hour.
    pub start: usize,
    /// `L × D`.
    pub context: Tensor,
    /// `W × D` actuals following the context.
    pub target: Tensor,
    /// `W × D_f` forecasts issued at the last context hour.
    pub forecasts: Option<Tensor>,
}

/// Lazily materialized sliding windows over a row range.
#[derive(Clone, Debug)]
pub struct Windows<'a> {
    frame: &'a GridFrame,
    starts: Vec<usize>,
    context: usize,
    horizon: usize,
}

impl<'a> Windows<'a> {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn frame(&self) -> &'a GridFrame {
        self.frame
    }

    pub fn context(&self) -> usize {
        self.context
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn get(&self, i: usize) -> WindowSample {
        let s = self.starts[i];
        let (l, w, d) = (self.context, self.horizon, self.frame.width());
        let rows = |from: usize, n: usize| {
            Tensor::new(
                &[n, d],
                self.frame.values.data()[from * d..(from + n) * d].to_vec(),
            )
            .expect("finite frame")
        };
        let forecasts = self
            .frame
            .forecasts
            .as_ref()
            .filter(|f| f.horizon >= w && w > 0)
            .map(|f| f.issued_at(s + l - 1, w));
        WindowSample {
            start: s,
            context: rows(s, l),
            target: rows(s + l, w),
            forecasts,
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = WindowSample> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }
}

/// Windows fully inside `range`: `(len − L − W) / stride + 1` of them, or
/// none (with a warning) when the range is shorter than `L + W`.
pub fn windows(
    frame: &GridFrame,
    range: Range<usize>,
    context: usize,
    horizon: usize,
    stride: usize,
) -> Result<Windows<'_>> {
    if context == 0 || stride == 0 {
        return Err(Error::Config(
            "context length and stride must be positive".into(),
        ));
    }
    if range.end > frame.len() || range.start > range.end {
        return Err(Error::Config(format!(
            "row range {range:?} outside a frame of {} rows",
            frame.len()
        )));
    }
    let span = context + horizon;
    let starts = if range.len() < span {
        log::warn!(
            "range of {} rows is shorter than L + W = {span}; no windows",
            range.len()
        );
        Vec::new()
    } else {
        (range.start..=range.end - span).step_by(stride).collect()
    };
    Ok(Windows {
        frame,
        starts,
        context,
        horizon,
    })
}
