//! Training and evaluation: L2 loss, Adam, the epoch loop, grouped metrics
//! and two reference forecasters.

mod baselines;
mod metrics;
mod optim;

pub use baselines::{
    baseline_persistence, DLinear, DLinearConfig, Persistence,
    CHECKPOINT_KIND as DLINEAR_CHECKPOINT_KIND,
};
pub use metrics::{evaluate, EvalReport, ReportRow};
pub use optim::{Adam, AdamConfig};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Windows;
use crate::error::{Error, Result};
use crate::fusion::{self, FillPolicy, ForecastBundle, FusedModel};
use crate::model::PowerMamba;
use crate::params::{Bound, ParamStore};
use crate::rng::{self, StreamRng};
use crate::tensor::{Mode, Tape, Tensor, Var};

/// A model-ready input paired with its `W × D` target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub target: Tensor,
}

/// What a forecaster consumes for one window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    /// The `L × D` context.
    Context,
    /// Appended and expanded context plus forecasts, `(L+W) × 2D`.
    Fused(FillPolicy),
}

/// Random-access collection of samples.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn sample(&self, i: usize) -> Result<Sample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn sample(&self, i: usize) -> Result<Sample> {
        Ok(self[i].clone())
    }
}

impl SampleSource for Vec<Sample> {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn sample(&self, i: usize) -> Result<Sample> {
        Ok(self[i].clone())
    }
}

/// Windows of a frame presented as inputs of a given kind.
pub struct WindowSource<'a> {
    pub windows: &'a Windows<'a>,
    pub kind: InputKind,
}

impl<'a> WindowSource<'a> {
    pub fn new(windows: &'a Windows<'a>, kind: InputKind) -> Self {
        Self { windows, kind }
    }
}

impl SampleSource for WindowSource<'_> {
    fn len(&self) -> usize {
        self.windows.len()
    }

    fn sample(&self, i: usize) -> Result<Sample> {
        let w = self.windows.get(i);
        let input = match self.kind {
            InputKind::Context => w.context,
            InputKind::Fused(fill) => {
                let channels = self
                    .windows
                    .frame()
                    .forecasts
                    .as_ref()
                    .map(|f| f.channels.clone())
                    .unwrap_or_default();
                let bundle = ForecastBundle {
                    context: w.context,
                    forecasts: w.forecasts,
                    forecast_channels: channels,
                    times: None,
                };
                fusion::prepare(&bundle, self.windows.horizon(), fill)?
            }
        };
        Ok(Sample {
            input,
            target: w.target,
        })
    }
}

/// Maps one input to a `W × D` forecast.
pub trait Predictor: Sync {
    fn input_kind(&self) -> InputKind;
    fn predict(&self, input: &Tensor) -> Result<Tensor>;
}

/// A trainable model whose forward pass runs on a tape.
pub trait Forecaster: Sync {
    fn input_kind(&self) -> InputKind;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn forward_on(
        &self,
        tape: &mut Tape,
        p: &Bound,
        input: Var,
        mode: Mode,
        rng: &mut StreamRng,
    ) -> Result<Var>;
}

impl<F: Forecaster> Predictor for F {
    fn input_kind(&self) -> InputKind {
        Forecaster::input_kind(self)
    }

    fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params().bind(&mut tape);
        let x = tape.constant(input.clone());
        let y = self.forward_on(&mut tape, &p, x, Mode::Eval, &mut rng::stream(0, "eval"))?;
        Ok(tape.value(y).clone())
    }
}

impl Forecaster for PowerMamba {
    fn input_kind(&self) -> InputKind {
        InputKind::Context
    }

    fn params(&self) -> &ParamStore {
        PowerMamba::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        PowerMamba::params_mut(self)
    }

    fn forward_on(
        &self,
        tape: &mut Tape,
        p: &Bound,
        input: Var,
        mode: Mode,
        rng: &mut StreamRng,
    ) -> Result<Var> {
        self.net().forward_on(tape, p, input, mode, rng)
    }
}

impl Forecaster for FusedModel {
    fn input_kind(&self) -> InputKind {
        InputKind::Fused(self.fill())
    }

    fn params(&self) -> &ParamStore {
        FusedModel::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        FusedModel::params_mut(self)
    }

    fn forward_on(
        &self,
        tape: &mut Tape,
        p: &Bound,
        input: Var,
        mode: Mode,
        rng: &mut StreamRng,
    ) -> Result<Var> {
        FusedModel::forward_on(self, tape, p, input, mode, rng)
    }
}

/// Mean squared error over every entry.
pub fn l2_loss(tape: &mut Tape, yhat: Var, y: Var) -> Result<Var> {
    if tape.shape(yhat) != tape.shape(y) {
        return Err(Error::dim(
            "l2_loss",
            format!("{:?}", tape.shape(y)),
            format!("{:?}", tape.shape(yhat)),
        ));
    }
    let diff = tape.sub(yhat, y)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
            shuffle: true,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitReport {
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Loss and parameter gradients of one sample.
fn sample_grads<F: Forecaster + ?Sized>(
    model: &F,
    sample: &Sample,
    rng: &mut StreamRng,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let x = tape.constant(sample.input.clone());
    let y = tape.constant(sample.target.clone());
    let yhat = model.forward_on(&mut tape, &p, x, Mode::Train, rng)?;
    let loss = l2_loss(&mut tape, yhat, y)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let per_param = p
        .vars()
        .iter()
        .zip(model.params().iter())
        .map(|(&v, (_, t))| {
            grads
                .get(v)
                .map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec)
        })
        .collect();
    Ok((value, per_param))
}

/// Epoch loop with mini-batch Adam. Batch gradients are the mean of the
/// per-sample gradients, reduced in sample order; dropout masks come from a
/// per-sample stream so results do not depend on thread count.
pub fn fit<F: Forecaster + ?Sized>(
    model: &mut F,
    data: &dyn SampleSource,
    cfg: &TrainConfig,
) -> Result<FitReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let mut adam = Adam::new(cfg.adam.clone(), cfg.learning_rate, model.params());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, "shuffle");
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut draws: u64 = 0;

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let first = draws;
            let results: Vec<Result<(f64, Vec<Vec<f64>>)>> = {
                let m: &F = model;
                batch
                    .par_iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        let mut r = rng::indexed_stream(cfg.seed, "dropout", first + k as u64);
                        sample_grads(m, &data.sample(i)?, &mut r)
                    })
                    .collect()
            };
            draws += batch.len() as u64;

            let mut sum: Vec<Vec<f64>> = model
                .params()
                .iter()
                .map(|(_, t)| vec![0.0; t.numel()])
                .collect();
            for res in results {
                let (loss, grads) = res?;
                if !loss.is_finite() {
                    return Err(Error::TrainingAborted {
                        step: adam.steps() + 1,
                        msg: format!("non-finite loss {loss}"),
                    });
                }
                total += loss;
                for (acc, g) in sum.iter_mut().zip(grads) {
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            let inv = 1.0 / batch.len() as f64;
            sum.iter_mut()
                .for_each(|g| g.iter_mut().for_each(|v| *v *= inv));
            adam.step(model.params_mut(), &sum)?;
        }
        let mean = total / data.len() as f64;
        log::info!("epoch {:>3}: train loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }
    Ok(FitReport {
        epoch_losses,
        steps: adam.steps(),
    })
}
