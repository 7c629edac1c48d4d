//! Demand-response portfolio selection for a flexible (crypto-mining) load
//! and price-driven profit curves under Monte-Carlo price noise.
//!
//! The portfolio problem is linear in the committed capacities, so its
//! optimum is a vertex of the capacity simplex: either no participation or
//! the whole capacity in the best program.

mod io;
mod mc;

pub use io::{
    load_economics, load_programs, load_series, write_curve_csv, EconomicsFile, ProgramSpec,
};
pub use mc::{profit_curve_mc, CurvePoint, Envelope, McConfig, NoiseModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProgramKind {
    Contract,
    Market,
    /// Deployed whenever the LMP exceeds `theta` ($/MWh).
    PriceDriven {
        theta: f64,
    },
}

impl ProgramKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProgramKind::Contract => "contract",
            ProgramKind::Market => "market",
            ProgramKind::PriceDriven { .. } => "price_driven",
        }
    }
}

/// Expected availability revenue `revenue[t]` ($/MWh) and deployment rate
/// `deployment[t]` in `[0, 1]` over the planning horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrProgram {
    pub name: String,
    pub revenue: Vec<f64>,
    pub deployment: Vec<f64>,
    pub kind: ProgramKind,
}

impl DrProgram {
    pub fn new(
        name: impl Into<String>,
        revenue: Vec<f64>,
        deployment: Vec<f64>,
        kind: ProgramKind,
    ) -> Result<Self> {
        let name = name.into();
        if revenue.len() != deployment.len() {
            return Err(Error::dim(
                "DrProgram",
                format!("{name}: {} deployment entries", revenue.len()),
                deployment.len().to_string(),
            ));
        }
        if let Some(t) = deployment.iter().position(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::domain(
                "DrProgram",
                format!("{name}: deployment[{t}] = {} outside [0, 1]", deployment[t]),
            ));
        }
        if let Some(t) = revenue.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("{name} revenue[{t}]"),
            });
        }
        Ok(Self {
            name,
            revenue,
            deployment,
            kind,
        })
    }

    /// A price-driven program whose reward is the LMP itself.
    pub fn price_driven(name: impl Into<String>, lmp: &[f64], theta: f64) -> Result<Self> {
        Self::new(
            name,
            lmp.to_vec(),
            price_driven_deployment(lmp, theta),
            ProgramKind::PriceDriven { theta },
        )
    }

    pub fn horizon(&self) -> usize {
        self.revenue.len()
    }
}

/// Mining revenue `p_b` and electricity cost `p_e`, both $/MWh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningEconomics {
    pub mining_revenue: Vec<f64>,
    pub energy_cost: Vec<f64>,
}

impl MiningEconomics {
    pub fn new(mining_revenue: Vec<f64>, energy_cost: Vec<f64>) -> Result<Self> {
        check_len("MiningEconomics", mining_revenue.len(), energy_cost.len())?;
        Ok(Self {
            mining_revenue,
            energy_cost,
        })
    }

    /// `r(t) = p_b(t) - p_e(t)`, the opportunity cost of curtailing one MWh.
    pub fn net_reward(&self) -> Vec<f64> {
        self.mining_revenue
            .iter()
            .zip(&self.energy_cost)
            .map(|(b, e)| b - e)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PortfolioSolution {
    /// MW committed to each program.
    pub capacities: Vec<f64>,
    pub total_capacity: f64,
    pub expected_profit: f64,
    /// Per-MW profit coefficient of each program.
    pub coefficients: Vec<f64>,
    pub chosen: Option<usize>,
}

fn check_len(op: &'static str, want: usize, got: usize) -> Result<()> {
    if want != got {
        return Err(Error::dim(
            op,
            format!("series of length {want}"),
            got.to_string(),
        ));
    }
    Ok(())
}

/// Mining revenue per MWh: BTC price divided by MWh consumed per BTC.
pub fn mining_revenue(btc_price: &[f64], efficiency: f64) -> Result<Vec<f64>> {
    if !(efficiency > 0.0) || !efficiency.is_finite() {
        return Err(Error::domain(
            "mining_reward",
            format!("efficiency must be > 0 MWh/BTC, got {efficiency}"),
        ));
    }
    Ok(btc_price.iter().map(|p| p / efficiency).collect())
}

/// Net mining reward `r = btc_price / efficiency - p_e`; may be negative.
pub fn mining_reward(btc_price: &[f64], efficiency: f64, energy_cost: &[f64]) -> Result<Vec<f64>> {
    check_len("mining_reward", btc_price.len(), energy_cost.len())?;
    let pb = mining_revenue(btc_price, efficiency)?;
    Ok(pb.iter().zip(energy_cost).map(|(b, e)| b - e).collect())
}

/// Mining revenue forgone by deploying: `Σ d(t) r(t)` per MW.
pub fn deployment_loss(prog: &DrProgram, r: &[f64]) -> Result<f64> {
    check_len("deployment_loss", prog.horizon(), r.len())?;
    Ok(prog.deployment.iter().zip(r).map(|(d, r)| d * r).sum())
}

/// Profit per MW committed: `π = Σ_t (p(t) - d(t) r(t))`.
pub fn program_coefficient(prog: &DrProgram, r: &[f64]) -> Result<f64> {
    check_len("program_coefficient", prog.horizon(), r.len())?;
    Ok(prog
        .revenue
        .iter()
        .zip(&prog.deployment)
        .zip(r)
        .map(|((p, d), r)| p - d * r)
        .sum())
}

/// Vertex solution of the linear portfolio problem. Ties go to the lowest
/// index; a best coefficient of exactly zero means no participation.
pub fn solve_portfolio(
    programs: &[DrProgram],
    r: &[f64],
    capacity: f64,
) -> Result<PortfolioSolution> {
    if !(capacity > 0.0) || !capacity.is_finite() {
        return Err(Error::domain(
            "solve_portfolio",
            format!("total capacity must be > 0 MW, got {capacity}"),
        ));
    }
    let coefficients = programs
        .iter()
        .map(|p| program_coefficient(p, r))
        .collect::<Result<Vec<_>>>()?;
    let mut chosen: Option<usize> = None;
    for (i, &pi) in coefficients.iter().enumerate() {
        if pi > 0.0 && chosen.is_none_or(|j| pi > coefficients[j]) {
            chosen = Some(i);
        }
    }
    let mut capacities = vec![0.0; programs.len()];
    let expected_profit = match chosen {
        Some(i) => {
            capacities[i] = capacity;
            capacity * coefficients[i]
        }
        None => 0.0,
    };
    Ok(PortfolioSolution {
        capacities,
        total_capacity: capacity,
        expected_profit,
        coefficients,
        chosen,
    })
}

/// `1` where `lmp > theta`, else `0`.
pub fn price_driven_deployment(lmp: &[f64], theta: f64) -> Vec<f64> {
    lmp.iter()
        .map(|&p| if p > theta { 1.0 } else { 0.0 })
        .collect()
}

/// How a price-driven program is paid for availability.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum RewardRule {
    /// Paid the hourly LMP.
    #[default]
    Lmp,
    Series(Vec<f64>),
}

/// Annual profit per MW of a price-driven program: availability reward minus
/// mining revenue lost while deployed.
pub fn price_driven_profit(lmp: &[f64], theta: f64, reward: &RewardRule, r: &[f64]) -> Result<f64> {
    check_len("price_driven_profit", lmp.len(), r.len())?;
    let reward: f64 = match reward {
        RewardRule::Lmp => lmp.iter().sum(),
        RewardRule::Series(s) => {
            check_len("price_driven_profit", lmp.len(), s.len())?;
            s.iter().sum()
        }
    };
    let lost: f64 = lmp
        .iter()
        .zip(r)
        .filter(|(p, _)| **p > theta)
        .map(|(_, r)| r)
        .sum();
    Ok(reward - lost)
}

/// Plugs forecast prices into the optimizer: they become the electricity
/// cost, and price-driven programs are re-derived from them (deployment
/// always; reward too when `forecast_reward` is set).
pub fn forecast_to_dr(
    price_forecast: &[f64],
    mining_revenue: &[f64],
    programs: &[DrProgram],
    capacity: f64,
    forecast_reward: bool,
) -> Result<PortfolioSolution> {
    let t = price_forecast.len();
    check_len("forecast_to_dr", t, mining_revenue.len())?;
    let mut adjusted = Vec::with_capacity(programs.len());
    for p in programs {
        if p.horizon() != t {
            return Err(Error::dim(
                "forecast_to_dr",
                format!("program `{}` horizon {}", p.name, p.horizon()),
                format!("forecast horizon {t}"),
            ));
        }
        let mut q = p.clone();
        if let ProgramKind::PriceDriven { theta } = p.kind {
            q.deployment = price_driven_deployment(price_forecast, theta);
            if forecast_reward {
                q.revenue = price_forecast.to_vec();
            }
        }
        adjusted.push(q);
    }
    let econ = MiningEconomics::new(mining_revenue.to_vec(), price_forecast.to_vec())?;
    solve_portfolio(&adjusted, &econ.net_reward(), capacity)
}
