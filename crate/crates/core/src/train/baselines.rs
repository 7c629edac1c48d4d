use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Forecaster, InputKind, Predictor};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{checkpoint_of, decompose_on, expect_kind, ParamCount};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::StreamRng;
use crate::tensor::{Mode, Tape, Tensor, Var};

/// Repeats the last context row `W` times.
pub fn baseline_persistence(context: &Tensor, horizon: usize) -> Result<Tensor> {
    if context.shape().len() != 2 {
        return Err(Error::dim(
            "persistence",
            "[L >= 1, D]",
            format!("{:?}", context.shape()),
        ));
    }
    let last = context.row(context.rows() - 1);
    Tensor::new(&[horizon, context.cols()], last.repeat(horizon))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Persistence {
    pub horizon: usize,
}

impl Predictor for Persistence {
    fn input_kind(&self) -> InputKind {
        InputKind::Context
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        baseline_persistence(input, self.horizon)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DLinearConfig {
    pub context: usize,
    pub horizon: usize,
    pub ma_kernel: usize,
}

/// Trend/seasonal split followed by two channel-shared temporal linear maps.
#[derive(Clone, Debug)]
pub struct DLinear {
    cfg: DLinearConfig,
    trend_w: ParamId,
    trend_b: ParamId,
    seasonal_w: ParamId,
    seasonal_b: ParamId,
    store: ParamStore,
}

pub const CHECKPOINT_KIND: &str = "dlinear";

impl DLinear {
    /// Weights start as uniform averages of the context (`1/L`), biases at zero.
    pub fn new(cfg: DLinearConfig) -> Result<Self> {
        if cfg.context == 0
            || cfg.horizon == 0
            || cfg.ma_kernel.is_multiple_of(2)
            || cfg.ma_kernel > cfg.context
        {
            return Err(Error::Config(format!("invalid DLinear config {cfg:?}")));
        }
        let (l, w) = (cfg.context, cfg.horizon);
        let mut store = ParamStore::new();
        let avg = Tensor::full(&[w, l], 1.0 / l as f64);
        let trend_w = store.add("linear_t.weight", avg.clone());
        let trend_b = store.add("linear_t.bias", Tensor::zeros(&[w]));
        let seasonal_w = store.add("linear_s.weight", avg);
        let seasonal_b = store.add("linear_s.bias", Tensor::zeros(&[w]));
        Ok(Self {
            cfg,
            trend_w,
            trend_b,
            seasonal_w,
            seasonal_b,
            store,
        })
    }

    /// Random weights in `±1/√L`, for tests.
    pub fn with_rng<R: Rng + ?Sized>(cfg: DLinearConfig, rng: &mut R) -> Result<Self> {
        let mut m = Self::new(cfg)?;
        let b = 1.0 / (m.cfg.context as f64).sqrt();
        for t in m.store.tensors_mut() {
            let data: Vec<f64> = (0..t.numel()).map(|_| rng.random_range(-b..=b)).collect();
            t.assign(&data)?;
        }
        Ok(m)
    }

    pub fn config(&self) -> &DLinearConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> ParamCount {
        ParamCount::of(&self.store)
    }

    /// Named handles: trend weight, trend bias, seasonal weight, seasonal bias.
    pub fn ids(&self) -> [ParamId; 4] {
        [self.trend_w, self.trend_b, self.seasonal_w, self.seasonal_b]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        checkpoint_of(CHECKPOINT_KIND, &self.cfg, &self.store)
    }

    pub fn from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<Self> {
        expect_kind(ck, CHECKPOINT_KIND, path)?;
        let mut m = Self::new(ck.field("config", path)?)?;
        m.store
            .load_from(&ck.tensors)
            .map_err(|e| Error::Checkpoint {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
        Ok(m)
    }
}

impl Forecaster for DLinear {
    fn input_kind(&self) -> InputKind {
        InputKind::Context
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward_on(
        &self,
        tape: &mut Tape,
        p: &Bound,
        input: Var,
        _mode: Mode,
        _rng: &mut StreamRng,
    ) -> Result<Var> {
        let l = self.cfg.context;
        let d = match tape.shape(input) {
            [rows, d] if *rows == l => *d,
            other => {
                return Err(Error::dim(
                    "dlinear forward",
                    format!("[{l}, D]"),
                    format!("{other:?}"),
                ))
            }
        };
        let (trend, seasonal) = decompose_on(tape, input, self.cfg.ma_kernel)?;
        let yt = tape.matmul(p[self.trend_w], trend)?;
        let bt = tape.broadcast_cols(p[self.trend_b], d)?;
        let ys = tape.matmul(p[self.seasonal_w], seasonal)?;
        let bs = tape.broadcast_cols(p[self.seasonal_b], d)?;
        let a = tape.add(yt, bt)?;
        let b = tape.add(ys, bs)?;
        tape.add(a, b)
    }
}
