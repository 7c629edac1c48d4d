//! Python bindings. Matrices cross the boundary as lists of rows.

use std::collections::BTreeMap;
use std::path::PathBuf;

use powermamba::checkpoint::Checkpoint;
use powermamba::data::{self, ForecastSpec, GridFrame, Schema, SynthSpec};
use powermamba::drport::{self, DrProgram, McConfig, NoiseModel, ProgramKind, RewardRule};
use powermamba::fusion::{FillPolicy, ForecastBundle, FusedModel};
use powermamba::model::{Norm, PowerMamba, PowerMambaConfig};
use powermamba::ssm::{self, DiscreteSsm};
use powermamba::tensor::Tensor;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: powermamba::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(err)
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn parse_norm(norm: &str) -> PyResult<Norm> {
    match norm {
        "revin" => Ok(Norm::Revin),
        "zscore" => Ok(Norm::Zscore),
        other => Err(PyValueError::new_err(format!(
            "norm must be `revin` or `zscore`, got `{other}`"
        ))),
    }
}

fn parse_fill(fill: &str) -> PyResult<FillPolicy> {
    match fill {
        "repeat_last" => Ok(FillPolicy::RepeatLast),
        "zero" => Ok(FillPolicy::Zero),
        other => Err(PyValueError::new_err(format!(
            "fill must be `repeat_last` or `zero`, got `{other}`"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
fn config(
    context: usize,
    horizon: usize,
    channels: usize,
    embed: usize,
    state: usize,
    ma_kernel: usize,
    dropout: f64,
    norm: &str,
) -> PyResult<PowerMambaConfig> {
    Ok(PowerMambaConfig {
        embed,
        state,
        ma_kernel,
        dropout,
        norm: parse_norm(norm)?,
        ..PowerMambaConfig::new(context, horizon, channels)
    })
}

/// PowerMamba forecaster: `L x D` context in, `W x D` forecast out.
#[pyclass(name = "PowerMamba", module = "powermamba_py")]
struct PyPowerMamba {
    inner: PowerMamba,
}

#[pymethods]
impl PyPowerMamba {
    #[new]
    #[pyo3(signature = (context, horizon, channels, embed=64, state=16, ma_kernel=25, dropout=0.1, norm="revin", seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        context: usize,
        horizon: usize,
        channels: usize,
        embed: usize,
        state: usize,
        ma_kernel: usize,
        dropout: f64,
        norm: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = config(
            context, horizon, channels, embed, state, ma_kernel, dropout, norm,
        )?;
        Ok(Self {
            inner: PowerMamba::new(cfg, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(err)?;
        Ok(Self {
            inner: PowerMamba::from_checkpoint(&ck, &path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.to_checkpoint().save(&path).map_err(err)
    }

    fn predict(&self, context: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let y = self.inner.predict(&matrix(context)?).map_err(err)?;
        Ok(to_rows(&y))
    }

    /// `(total, {part: count})`.
    fn param_count(&self) -> (usize, BTreeMap<String, usize>) {
        let pc = self.inner.param_count();
        (pc.total, pc.by_part)
    }

    #[getter]
    fn context(&self) -> usize {
        self.inner.config().context
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.config().horizon
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.config().channels
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "PowerMamba(context={}, horizon={}, channels={}, embed={}, state={})",
            c.context, c.horizon, c.channels, c.embed, c.state
        )
    }
}

/// PowerMamba behind the forecast-fusion front end.
#[pyclass(name = "FusedModel", module = "powermamba_py")]
struct PyFusedModel {
    inner: FusedModel,
}

#[pymethods]
impl PyFusedModel {
    #[new]
    #[pyo3(signature = (context, horizon, channels, embed=64, state=16, ma_kernel=25, dropout=0.1, norm="revin", fill="repeat_last", seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        context: usize,
        horizon: usize,
        channels: usize,
        embed: usize,
        state: usize,
        ma_kernel: usize,
        dropout: f64,
        norm: &str,
        fill: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = config(
            context, horizon, channels, embed, state, ma_kernel, dropout, norm,
        )?;
        Ok(Self {
            inner: FusedModel::new(cfg, parse_fill(fill)?, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(err)?;
        Ok(Self {
            inner: FusedModel::from_checkpoint(&ck, &path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.to_checkpoint().save(&path).map_err(err)
    }

    /// `forecasts` is `W x len(forecast_channels)`, one column per channel index.
    #[pyo3(signature = (context, forecasts=None, forecast_channels=Vec::new()))]
    fn predict(
        &self,
        context: Vec<Vec<f64>>,
        forecasts: Option<Vec<Vec<f64>>>,
        forecast_channels: Vec<usize>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let bundle = ForecastBundle {
            context: matrix(context)?,
            forecasts: forecasts.map(matrix).transpose()?,
            forecast_channels,
            times: None,
        };
        Ok(to_rows(&self.inner.fused_forward(&bundle).map_err(err)?))
    }

    fn param_count(&self) -> (usize, BTreeMap<String, usize>) {
        let pc = self.inner.param_count();
        (pc.total, pc.by_part)
    }
}

/// Zero-order hold of a diagonal SSM. Returns `(a_bar, b_bar)`.
#[pyfunction]
fn discretize_zoh(
    a: Vec<f64>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    delta: f64,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let cont = ssm::ContinuousSsm::new(a, matrix(b)?, matrix(c)?, delta).map_err(err)?;
    let d = ssm::discretize_zoh(&cont).map_err(err)?;
    Ok((d.a_bar, to_rows(&d.b_bar)))
}

fn discrete(a_bar: Vec<f64>, b_bar: Vec<Vec<f64>>, c: Vec<Vec<f64>>) -> PyResult<DiscreteSsm> {
    DiscreteSsm::new(a_bar, matrix(b_bar)?, matrix(c)?).map_err(err)
}

/// Recurrent scan of `x` (`L x D`) from a zero state.
#[pyfunction]
fn ssm_scan(
    a_bar: Vec<f64>,
    b_bar: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    let sys = discrete(a_bar, b_bar, c)?;
    Ok(to_rows(
        &ssm::scan_recurrent(&sys, &matrix(x)?).map_err(err)?,
    ))
}

/// The same output computed by causal convolution with the SSM kernel.
#[pyfunction]
fn ssm_convolve(
    a_bar: Vec<f64>,
    b_bar: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    let sys = discrete(a_bar, b_bar, c)?;
    let x = matrix(x)?;
    let k = ssm::build_kernel(&sys, x.rows()).map_err(err)?;
    Ok(to_rows(&ssm::apply_kernel(&k, &x).map_err(err)?))
}

fn frame_dict<'py>(py: Python<'py>, frame: &GridFrame) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    let times: Vec<String> = frame
        .times
        .iter()
        .map(|t| t.format(data::TIME_FORMAT).to_string())
        .collect();
    let names: Vec<&str> = frame.channels.iter().map(|c| c.name.as_str()).collect();
    out.set_item("timestamps", times)?;
    out.set_item("channels", names)?;
    out.set_item("values", to_rows(&frame.values))?;
    if let Some(f) = &frame.forecasts {
        out.set_item("forecast_horizon", f.horizon)?;
        out.set_item("forecast_channels", f.channels.clone())?;
    }
    Ok(out)
}

/// Seeded synthetic grid dataset as a dict; also written to `path` if given.
#[pyfunction]
#[pyo3(signature = (seed=0, years=1.0, forecast_horizon=None, path=None))]
fn synth_gridset<'py>(
    py: Python<'py>,
    seed: u64,
    years: f64,
    forecast_horizon: Option<usize>,
    path: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = SynthSpec {
        forecasts: forecast_horizon.map(ForecastSpec::new),
        ..SynthSpec::new(seed, years)
    };
    let frame = data::synth_gridset(&spec).map_err(err)?;
    if let Some(p) = path {
        data::write_csv(&frame, &p).map_err(err)?;
    }
    frame_dict(py, &frame)
}

#[pyfunction]
fn load_csv<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let frame = data::load_csv(&path, &Schema::Canonical).map_err(err)?;
    frame_dict(py, &frame)
}

/// Hourly mining reward per MWh: revenue at `btc_price` minus `energy_cost`.
#[pyfunction]
fn mining_reward(
    btc_price: Vec<f64>,
    efficiency: f64,
    energy_cost: Vec<f64>,
) -> PyResult<Vec<f64>> {
    drport::mining_reward(&btc_price, efficiency, &energy_cost).map_err(err)
}

/// `programs` holds `(name, revenue, deployment)` tuples of contract programs.
#[pyfunction]
fn solve_portfolio<'py>(
    py: Python<'py>,
    programs: Vec<(String, Vec<f64>, Vec<f64>)>,
    net_reward: Vec<f64>,
    capacity: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let progs = programs
        .into_iter()
        .map(|(name, rev, dep)| DrProgram::new(name, rev, dep, ProgramKind::Contract))
        .collect::<powermamba::Result<Vec<_>>>()
        .map_err(err)?;
    let s = drport::solve_portfolio(&progs, &net_reward, capacity).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("capacities", s.capacities)?;
    out.set_item("total_capacity", s.total_capacity)?;
    out.set_item("expected_profit", s.expected_profit)?;
    out.set_item("coefficients", s.coefficients)?;
    out.set_item("chosen", s.chosen)?;
    Ok(out)
}

/// Profit of a price-driven program at threshold `theta`, paid the LMP.
#[pyfunction]
fn price_driven_profit(lmp: Vec<f64>, theta: f64, net_reward: Vec<f64>) -> PyResult<f64> {
    drport::price_driven_profit(&lmp, theta, &RewardRule::Lmp, &net_reward).map_err(err)
}

/// Monte-Carlo profit curve under Gaussian LMP noise. Rows are
/// `(theta, mean, lower, upper)`.
#[pyfunction]
#[pyo3(signature = (lmp, mining_revenue, thetas, sigma=0.0, runs=1000, seed=0))]
fn profit_curve_mc(
    lmp: Vec<f64>,
    mining_revenue: Vec<f64>,
    thetas: Vec<f64>,
    sigma: f64,
    runs: usize,
    seed: u64,
) -> PyResult<Vec<(f64, f64, f64, f64)>> {
    let noise = if sigma == 0.0 {
        NoiseModel::None
    } else {
        NoiseModel::Gaussian { sigma }
    };
    let cfg = McConfig {
        runs,
        seed,
        ..McConfig::default()
    };
    let curve =
        drport::profit_curve_mc(&lmp, &mining_revenue, &thetas, &noise, &cfg).map_err(err)?;
    Ok(curve
        .into_iter()
        .map(|p| (p.theta, p.mean, p.lower, p.upper))
        .collect())
}

/// Runs a command-line invocation, e.g. `run_cli(["train", "--synth-years", "1"])`.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> PyResult<()> {
    let argv: Vec<String> = std::iter::once("powermamba".to_string())
        .chain(args)
        .collect();
    py.detach(|| powermamba::cli::run_args(argv)).map_err(err)
}

#[pymodule]
fn powermamba_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPowerMamba>()?;
    m.add_class::<PyFusedModel>()?;
    m.add_function(wrap_pyfunction!(discretize_zoh, m)?)?;
    m.add_function(wrap_pyfunction!(ssm_scan, m)?)?;
    m.add_function(wrap_pyfunction!(ssm_convolve, m)?)?;
    m.add_function(wrap_pyfunction!(synth_gridset, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(mining_reward, m)?)?;
    m.add_function(wrap_pyfunction!(solve_portfolio, m)?)?;
    m.add_function(wrap_pyfunction!(price_driven_profit, m)?)?;
    m.add_function(wrap_pyfunction!(profit_curve_mc, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip_and_ragged_input_is_rejected() {
        let m = matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(to_rows(&m), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(matrix(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(parse_norm("layer").is_err());
        assert_eq!(parse_fill("zero").unwrap(), FillPolicy::Zero);
    }
}
