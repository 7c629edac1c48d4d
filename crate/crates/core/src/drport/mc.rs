use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use super::{price_driven_profit, RewardRule};
use crate::error::{Error, Result};
use crate::rng;

/// Additive i.i.d. price noise.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseModel {
    None,
    Gaussian {
        sigma: f64,
    },
    /// Resamples uniformly from observed residuals.
    Empirical(Vec<f64>),
}

impl NoiseModel {
    fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::Gaussian { sigma } if !(*sigma >= 0.0) || !sigma.is_finite() => Err(
                Error::Config(format!("noise sigma must be >= 0, got {sigma}")),
            ),
            NoiseModel::Empirical(v) if v.is_empty() => Err(Error::Config(
                "empirical noise distribution is empty".into(),
            )),
            _ => Ok(()),
        }
    }

    fn perturb<R: Rng + ?Sized>(&self, base: &[f64], rng: &mut R) -> Vec<f64> {
        match self {
            NoiseModel::None => base.to_vec(),
            NoiseModel::Gaussian { sigma } => {
                let n = Normal::new(0.0, *sigma).expect("validated sigma");
                base.iter().map(|p| p + n.sample(rng)).collect()
            }
            NoiseModel::Empirical(e) => base
                .iter()
                .map(|p| p + e[rng.random_range(0..e.len())])
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Envelope {
    #[default]
    MinMax,
    /// Symmetric band `[q, 1 - q]`, nearest-rank.
    Quantile(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct McConfig {
    pub runs: usize,
    pub seed: u64,
    pub envelope: Envelope,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            runs: 1000,
            seed: 0,
            envelope: Envelope::MinMax,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub theta: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Profit-vs-threshold curve with a Monte-Carlo band. Each run perturbs the
/// LMP, pays the noisy LMP as reward and charges mining losses of
/// `mining_revenue - noisy LMP` while deployed. Run `k` draws from its own
/// stream, so the result does not depend on scheduling.
pub fn profit_curve_mc(
    lmp_base: &[f64],
    mining_revenue: &[f64],
    thetas: &[f64],
    noise: &NoiseModel,
    cfg: &McConfig,
) -> Result<Vec<CurvePoint>> {
    if cfg.runs == 0 {
        return Err(Error::Config("Monte-Carlo runs must be >= 1".into()));
    }
    if let Envelope::Quantile(q) = cfg.envelope {
        if !(0.0..=0.5).contains(&q) {
            return Err(Error::Config(format!(
                "envelope quantile must lie in [0, 0.5], got {q}"
            )));
        }
    }
    noise.validate()?;
    if lmp_base.len() != mining_revenue.len() {
        return Err(Error::dim(
            "profit_curve_mc",
            format!("{} mining revenue entries", lmp_base.len()),
            mining_revenue.len().to_string(),
        ));
    }

    let per_run: Vec<Result<Vec<f64>>> = (0..cfg.runs)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::indexed_stream(cfg.seed, "mc", k as u64);
            let lmp = noise.perturb(lmp_base, &mut r);
            let reward: Vec<f64> = mining_revenue
                .iter()
                .zip(&lmp)
                .map(|(b, p)| b - p)
                .collect();
            thetas
                .iter()
                .map(|&th| price_driven_profit(&lmp, th, &RewardRule::Lmp, &reward))
                .collect()
        })
        .collect();
    let runs = per_run.into_iter().collect::<Result<Vec<_>>>()?;

    let n = cfg.runs as f64;
    Ok(thetas
        .iter()
        .enumerate()
        .map(|(j, &theta)| {
            let mut v: Vec<f64> = runs.iter().map(|r| r[j]).collect();
            v.sort_by(f64::total_cmp);
            // offsets from the minimum, so identical runs give the exact value
            let mean = v[0] + v.iter().map(|x| x - v[0]).sum::<f64>() / n;
            let (lower, upper) = match cfg.envelope {
                Envelope::MinMax => (v[0], v[v.len() - 1]),
                Envelope::Quantile(q) => {
                    let idx =
                        |p: f64| ((p * (v.len() - 1) as f64).round() as usize).min(v.len() - 1);
                    (v[idx(q)], v[idx(1.0 - q)])
                }
            };
            CurvePoint {
                theta,
                mean,
                lower,
                upper,
            }
        })
        .collect())
}
