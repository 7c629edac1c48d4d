use std::f64::consts::PI;

use chrono::{NaiveDate, TimeDelta};
use rand::Rng;
use rand_distr::{Distribution, Normal, Pareto, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Channel, ForecastBlock, GridFrame, Group, CANONICAL_CHANNELS};
use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};
use crate::tensor::Tensor;

/// Noisy external forecasts for the load and renewable channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastSpec {
    pub horizon: usize,
    /// Noise standard deviation as a fraction of the channel's standard deviation.
    pub noise_frac: f64,
    /// Relative noise growth from horizon 1 to horizon `W`.
    pub growth: f64,
}

impl ForecastSpec {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            noise_frac: 0.1,
            growth: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub years: f64,
    /// Subset of canonical channel names; all 22 when `None`.
    pub channels: Option<Vec<String>>,
    pub forecasts: Option<ForecastSpec>,
}

impl SynthSpec {
    pub fn new(seed: u64, years: f64) -> Self {
        Self {
            seed,
            years,
            channels: None,
            forecasts: None,
        }
    }

    pub fn hours(&self) -> usize {
        (self.years * 8760.0).round() as usize
    }
}

/// Unit-variance AR(1) path.
fn ar1(rng: &mut StreamRng, n: usize, phi: f64) -> Vec<f64> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut x: f64 = StandardNormal.sample(rng);
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            x = phi * x + innov * e;
            x
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

const LOAD_BASE: [f64; 8] = [
    11_000.0, 1_500.0, 3_000.0, 1_000.0, 13_000.0, 6_500.0, 3_500.0, 1_300.0,
];
const PRICE_OFFSET: [f64; 8] = [1.5, -1.0, 0.5, -3.0, 0.0, 1.0, 0.2, -0.5];
const AS_BASE: [f64; 4] = [10.0, 6.0, 12.0, 4.0];
const WIND_CAP: f64 = 25_000.0;
const SOLAR_CAP: f64 = 9_000.0;

/// Deterministic stand-in for the hourly grid dataset: zonal loads with daily,
/// weekly and annual cycles driven by a shared weather factor, prices affine in
/// system load plus heavy-tailed spikes, nonnegative ancillary prices, and
/// wind and solar output.
pub fn synth_gridset(spec: &SynthSpec) -> Result<GridFrame> {
    let hours = spec.hours();
    if hours < 24 {
        return Err(Error::Config(format!(
            "synthetic data needs at least one day, got {} hours",
            hours
        )));
    }
    let extra = spec.forecasts.as_ref().map_or(0, |f| f.horizon);
    let n = hours + extra;
    let seed = spec.seed;
    let mut shape_rng = stream(seed, "synth.shape");

    let weather = ar1(&mut stream(seed, "synth.weather"), n, 0.97);
    let hour_of_day = |t: usize| (t % 24) as f64;
    // 2019-01-01 is a Tuesday; 0 = Monday
    let weekend = |t: usize| (t / 24 + 1) % 7 >= 5;
    let annual = |t: usize| (2.0 * PI * (t as f64 - 4800.0) / 8760.0).cos();

    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(22);

    // loads
    let mut zone_rng = stream(seed, "synth.load");
    for base in LOAD_BASE {
        let phase: f64 = shape_rng.random_range(-1.5..1.5);
        let amp: f64 = shape_rng.random_range(0.12..0.2);
        let sens: f64 = shape_rng.random_range(0.08..0.14);
        let noise = ar1(&mut zone_rng, n, 0.8);
        cols.push(
            (0..n)
                .map(|t| {
                    let h = hour_of_day(t) - phase;
                    let daily = 0.7 * (2.0 * PI * (h - 9.0) / 24.0).sin()
                        + 0.3 * (4.0 * PI * (h - 3.0) / 24.0).sin();
                    let week = if weekend(t) { -1.0 } else { 0.4 };
                    base * (1.0
                        + amp * daily
                        + 0.06 * week
                        + 0.1 * annual(t)
                        + sens * weather[t]
                        + 0.02 * noise[t])
                })
                .collect(),
        );
    }
    let base_total: f64 = LOAD_BASE.iter().sum();
    let ratio: Vec<f64> = (0..n)
        .map(|t| cols.iter().map(|c| c[t]).sum::<f64>() / base_total)
        .collect();

    // shared spike process, likelier under high load
    let mut spike_rng = stream(seed, "synth.spike");
    let tail = Pareto::new(40.0, 2.5).expect("valid pareto");
    let mut level = 0.0;
    let spikes: Vec<f64> = ratio
        .iter()
        .map(|&r| {
            level *= 0.5;
            let p = 0.004 * (1.0 + 5.0 * (r - 1.0).max(0.0));
            if spike_rng.random::<f64>() < p {
                level += tail.sample(&mut spike_rng);
            }
            level
        })
        .collect();

    // zonal prices
    let mut price_rng = stream(seed, "synth.price");
    for off in PRICE_OFFSET {
        let scale: f64 = shape_rng.random_range(0.8..1.2);
        let noise = ar1(&mut price_rng, n, 0.7);
        cols.push(
            (0..n)
                .map(|t| {
                    let r = ratio[t];
                    30.0 + off
                        + 60.0 * (r - 1.0)
                        + 80.0 * (r - 1.15).max(0.0)
                        + 2.0 * noise[t]
                        + scale * spikes[t]
                })
                .collect(),
        );
    }

    // ancillary service prices
    let mut as_rng = stream(seed, "synth.asprice");
    for base in AS_BASE {
        let share: f64 = shape_rng.random_range(0.1..0.3);
        let noise = ar1(&mut as_rng, n, 0.6);
        cols.push(
            (0..n)
                .map(|t| {
                    (base * (1.0 + 1.5 * (ratio[t] - 1.0)) + 1.0 * noise[t]).max(0.0)
                        + share * spikes[t]
                })
                .collect(),
        );
    }

    // wind and solar
    let wind = ar1(&mut stream(seed, "synth.wind"), n, 0.985);
    cols.push(
        (0..n)
            .map(|t| {
                WIND_CAP
                    * sigmoid(
                        2.0 * wind[t] - 0.3
                            + 0.3 * (2.0 * PI * (hour_of_day(t) - 2.0) / 24.0).sin(),
                    )
            })
            .collect(),
    );
    let cloud = ar1(&mut stream(seed, "synth.cloud"), n, 0.95);
    cols.push(
        (0..n)
            .map(|t| {
                let sun = (PI * (hour_of_day(t) - 6.0) / 12.0).sin().max(0.0);
                SOLAR_CAP
                    * sun
                    * (0.55 + 0.45 * sigmoid(2.0 * cloud[t]))
                    * (0.75 + 0.25 * annual(t))
            })
            .collect(),
    );

    let cols: Vec<Vec<f64>> = cols
        .into_iter()
        .map(|c| c.into_iter().map(round3).collect())
        .collect();

    let wanted: Vec<usize> = match &spec.channels {
        None => (0..CANONICAL_CHANNELS.len()).collect(),
        Some(names) => names
            .iter()
            .map(|name| {
                CANONICAL_CHANNELS
                    .iter()
                    .position(|(c, _)| c == name)
                    .ok_or_else(|| Error::Config(format!("unknown synthetic channel `{name}`")))
            })
            .collect::<Result<_>>()?,
    };
    let channels: Vec<Channel> = wanted
        .iter()
        .map(|&i| Channel {
            name: CANONICAL_CHANNELS[i].0.to_string(),
            group: CANONICAL_CHANNELS[i].1,
        })
        .collect();

    let d = wanted.len();
    let mut values = Vec::with_capacity(hours * d);
    for t in 0..hours {
        values.extend(wanted.iter().map(|&i| cols[i][t]));
    }

    let forecasts = match &spec.forecasts {
        None => None,
        Some(fs) => Some(make_forecasts(fs, &cols, &wanted, &channels, hours, seed)?),
    };

    let start = NaiveDate::from_ymd_opt(2019, 1, 1)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time");
    Ok(GridFrame {
        times: (0..hours)
            .map(|t| start + TimeDelta::hours(t as i64))
            .collect(),
        channels,
        values: Tensor::new(&[hours, d], values)?,
        forecasts,
    })
}

fn make_forecasts(
    fs: &ForecastSpec,
    cols: &[Vec<f64>],
    wanted: &[usize],
    channels: &[Channel],
    hours: usize,
    seed: u64,
) -> Result<ForecastBlock> {
    let w = fs.horizon;
    if w == 0 || !(fs.noise_frac >= 0.0) || !(fs.growth >= 0.0) {
        return Err(Error::Config(
            "forecast horizon must be positive and noise parameters nonnegative".into(),
        ));
    }
    let fidx: Vec<usize> = channels
        .iter()
        .enumerate()
        .filter(|(_, c)| matches!(c.group, Group::Load | Group::Renewable))
        .map(|(i, _)| i)
        .collect();
    let mut rng = stream(seed, "synth.forecast");
    let mut per_channel: Vec<Vec<f64>> = Vec::with_capacity(fidx.len());
    for &i in &fidx {
        let truth = &cols[wanted[i]];
        let mean = truth.iter().sum::<f64>() / truth.len() as f64;
        let std =
            (truth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / truth.len() as f64).sqrt();
        let mut block = Vec::with_capacity(hours * w);
        for t in 0..hours {
            for h in 1..=w {
                let sigma = fs.noise_frac * std * (1.0 + fs.growth * (h - 1) as f64 / w as f64);
                let noise = if sigma > 0.0 {
                    Normal::new(0.0, sigma)
                        .expect("positive sigma")
                        .sample(&mut rng)
                } else {
                    0.0
                };
                block.push(round3(truth[t + h] + noise));
            }
        }
        per_channel.push(block);
    }
    let width = fidx.len() * w;
    let mut values = Vec::with_capacity(hours * width);
    for t in 0..hours {
        for block in &per_channel {
            values.extend_from_slice(&block[t * w..(t + 1) * w]);
        }
    }
    Ok(ForecastBlock {
        channels: fidx,
        horizon: w,
        values: Tensor::new(&[hours, width], values)?,
    })
}
