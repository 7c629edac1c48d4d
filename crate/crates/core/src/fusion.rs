//! External-forecast fusion: append the forecast window to the context,
//! expand each step with the value `W` hours ahead, and compress the
//! lengthened sequence back to `L` steps with a learned temporal map.

use std::path::Path;

use chrono::{NaiveDateTime, TimeDelta};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{checkpoint_of, expect_kind, ParamCount, PowerMambaConfig, PowerMambaNet};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng;
use crate::tensor::{Mode, Tape, Tensor, Var};

/// How channels without an external forecast are filled in the appended rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    #[default]
    RepeatLast,
    Zero,
}

/// A context window plus external forecasts for the following hours.
#[derive(Clone, Debug)]
pub struct ForecastBundle {
    /// `L × D` actuals.
    pub context: Tensor,
    /// `W × D_f` forecasts for the hours after the context.
    pub forecasts: Option<Tensor>,
    /// Channel index of each forecast column.
    pub forecast_channels: Vec<usize>,
    /// Timestamp of the last context row and of the first forecast row, when known.
    pub times: Option<(NaiveDateTime, NaiveDateTime)>,
}

/// Concatenates context and forecasts into `(L+W) × D`. With `horizon = 0`
/// the context is returned unchanged.
pub fn append_predictions(
    bundle: &ForecastBundle,
    horizon: usize,
    fill: FillPolicy,
) -> Result<Tensor> {
    let ctx = &bundle.context;
    if ctx.shape().len() != 2 {
        return Err(Error::dim(
            "append_predictions",
            "context [L, D]",
            format!("{:?}", ctx.shape()),
        ));
    }
    if let Some((last, first)) = bundle.times {
        if first - last != TimeDelta::hours(1) {
            return Err(Error::Alignment(format!(
                "forecasts start at {first}, expected one hour after the context end {last}"
            )));
        }
    }
    if horizon == 0 {
        return Ok(ctx.clone());
    }
    let (l, d) = (ctx.rows(), ctx.cols());
    let mut rows = ctx.data().to_vec();
    let last = ctx.row(l - 1).to_vec();
    let fill_row = match fill {
        FillPolicy::RepeatLast => last,
        FillPolicy::Zero => vec![0.0; d],
    };
    let mut ahead: Vec<f64> = fill_row.repeat(horizon);
    if let Some(f) = &bundle.forecasts {
        let df = bundle.forecast_channels.len();
        if f.shape() != [horizon, df] {
            return Err(Error::dim(
                "append_predictions",
                format!("forecasts [{horizon}, {df}]"),
                format!("{:?}", f.shape()),
            ));
        }
        for (j, &ch) in bundle.forecast_channels.iter().enumerate() {
            if ch >= d {
                return Err(Error::dim(
                    "append_predictions",
                    format!("forecast channel < {d}"),
                    format!("{ch}"),
                ));
            }
            for h in 0..horizon {
                ahead[h * d + ch] = f.at(h, j);
            }
        }
    }
    rows.extend(ahead);
    Tensor::new(&[l + horizon, d], rows)
}

/// Doubles the channel axis: the first `D` columns copy `x_app`; the second
/// copy has rows `1..L` replaced by the rows `W` steps later, so step `r`
/// also sees the value for hour `r + W`. Row 0 of the copy is left as is.
pub fn expand_features(x_app: &Tensor, context: usize) -> Result<Tensor> {
    let (n, d) = match x_app.shape() {
        [n, d] if *n >= context && context >= 1 => (*n, *d),
        other => {
            return Err(Error::dim(
                "expand_features",
                format!("[L + W, D] with L = {context}"),
                format!("{other:?}"),
            ))
        }
    };
    let w = n - context;
    let mut out = Vec::with_capacity(n * 2 * d);
    for r in 0..n {
        out.extend_from_slice(x_app.row(r));
        let src = if (1..context).contains(&r) { r + w } else { r };
        out.extend_from_slice(x_app.row(src));
    }
    Tensor::new(&[n, 2 * d], out)
}

/// `proj · x_exp` with `proj` of shape `L × (L+W)`.
pub fn compress(x_exp: &Tensor, proj: &Tensor) -> Result<Tensor> {
    proj.matmul(x_exp)
}

/// The `[I_L | 0]` projection that keeps the first `L` rows.
pub fn identity_slice(context: usize, horizon: usize) -> Tensor {
    let n = context + horizon;
    let mut data = vec![0.0; context * n];
    for i in 0..context {
        data[i * n + i] = 1.0;
    }
    Tensor::new(&[context, n], data).expect("finite")
}

/// Model input for one bundle: append then expand, `(L+W) × 2D`.
pub fn prepare(bundle: &ForecastBundle, horizon: usize, fill: FillPolicy) -> Result<Tensor> {
    let app = append_predictions(bundle, horizon, fill)?;
    expand_features(&app, bundle.context.rows())
}

/// PowerMamba over `2D` expanded channels behind a learned compression.
/// Predicts only the original `D` channels.
#[derive(Clone, Debug)]
pub struct FusedModel {
    base: PowerMambaConfig,
    fill: FillPolicy,
    net: PowerMambaNet,
    compress: ParamId,
    store: ParamStore,
}

pub const CHECKPOINT_KIND: &str = "fused";

#[derive(Serialize, Deserialize)]
struct FusedHeader {
    base: PowerMambaConfig,
    fill: FillPolicy,
}

impl FusedModel {
    /// `base` describes the unfused task (`D` actual channels).
    pub fn new(base: PowerMambaConfig, fill: FillPolicy, seed: u64) -> Result<Self> {
        Self::with_rng(base, fill, &mut rng::stream(seed, "init"))
    }

    pub fn with_rng<R: Rng + ?Sized>(
        base: PowerMambaConfig,
        fill: FillPolicy,
        rng: &mut R,
    ) -> Result<Self> {
        base.validate()?;
        let mut store = ParamStore::new();
        let inner = PowerMambaConfig {
            channels: 2 * base.channels,
            ..base.clone()
        };
        let net = PowerMambaNet::build(&mut store, inner, rng)?;
        let compress = store.add(
            "compress.weight",
            identity_slice(base.context, base.horizon),
        );
        Ok(Self {
            base,
            fill,
            net,
            compress,
            store,
        })
    }

    pub fn config(&self) -> &PowerMambaConfig {
        &self.base
    }

    pub fn fill(&self) -> FillPolicy {
        self.fill
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> ParamCount {
        ParamCount::of(&self.store)
    }

    /// Forward from a prepared `(L+W) × 2D` input to a `W × D` forecast.
    pub fn forward_on<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x_exp: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let (l, w, d) = (self.base.context, self.base.horizon, self.base.channels);
        if tape.shape(x_exp) != [l + w, 2 * d] {
            return Err(Error::dim(
                "fused forward",
                format!("[{}, {}]", l + w, 2 * d),
                format!("{:?}", tape.shape(x_exp)),
            ));
        }
        let fused = tape.matmul(p[self.compress], x_exp)?;
        let y = self.net.forward_on(tape, p, fused, mode, rng)?;
        tape.slice(y, 1, 0, d)
    }

    pub fn forward_prepared<R: Rng + ?Sized>(
        &self,
        x_exp: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape);
        let xv = tape.constant(x_exp.clone());
        let y = self.forward_on(&mut tape, &p, xv, mode, rng)?;
        Ok(tape.value(y).clone())
    }

    /// Append, expand, compress and forecast for one bundle in eval mode.
    pub fn fused_forward(&self, bundle: &ForecastBundle) -> Result<Tensor> {
        if bundle.context.shape() != [self.base.context, self.base.channels] {
            return Err(Error::dim(
                "fused_forward",
                format!("context [{}, {}]", self.base.context, self.base.channels),
                format!("{:?}", bundle.context.shape()),
            ));
        }
        let x = prepare(bundle, self.base.horizon, self.fill)?;
        self.forward_prepared(&x, Mode::Eval, &mut rng::stream(0, "eval"))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = checkpoint_of(CHECKPOINT_KIND, &self.base, &self.store);
        ck.header["fill"] = serde_json::to_value(self.fill).expect("enum serializes");
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<Self> {
        expect_kind(ck, CHECKPOINT_KIND, path)?;
        let header = FusedHeader {
            base: ck.field("config", path)?,
            fill: ck.field("fill", path)?,
        };
        let mut model = Self::new(header.base, header.fill, 0)?;
        model
            .store
            .load_from(&ck.tensors)
            .map_err(|e| Error::Checkpoint {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
        Ok(model)
    }
}
