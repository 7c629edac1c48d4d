//! The PowerMamba forecaster: instance normalization, trend/seasonal split,
//! temporal embedding, a Mamba block over time and an inverse block over
//! channels, residual concatenation and a temporal output projection.

mod norm;

pub use norm::{decompose, decompose_on, revin_denormalize, revin_normalize, RevinStats};

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng;
use crate::ssm::{MambaBlock, MambaBlockConfig};
use crate::tensor::{Mode, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    /// Per-sample reversible instance normalization with learnable affine.
    Revin,
    /// Inputs are already globally standardized; no instance normalization.
    Zscore,
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "revin" => Ok(Norm::Revin),
            "zscore" => Ok(Norm::Zscore),
            other => Err(Error::Config(format!(
                "unknown norm `{other}` (expected revin or zscore)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerMambaConfig {
    /// Look-back length `L`.
    pub context: usize,
    /// Prediction window `W`.
    pub horizon: usize,
    /// Channel count `D`.
    pub channels: usize,
    /// Embedding length `E`.
    pub embed: usize,
    /// SSM state size `N`.
    pub state: usize,
    pub dropout: f64,
    pub ma_kernel: usize,
    pub expand: usize,
    pub conv_width: usize,
    pub norm: Norm,
    pub revin_eps: f64,
}

impl PowerMambaConfig {
    pub fn new(context: usize, horizon: usize, channels: usize) -> Self {
        Self {
            context,
            horizon,
            channels,
            embed: 64,
            state: 16,
            dropout: 0.1,
            ma_kernel: 25,
            expand: 2,
            conv_width: 4,
            norm: Norm::Revin,
            revin_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.context < 2
            || self.horizon == 0
            || self.channels == 0
            || self.embed == 0
            || self.state == 0
        {
            return fail(format!(
                "need L >= 2 and positive W, D, E, N (got L={}, W={}, D={}, E={}, N={})",
                self.context, self.horizon, self.channels, self.embed, self.state
            ));
        }
        if self.ma_kernel.is_multiple_of(2) || self.ma_kernel > self.context {
            return fail(format!(
                "ma_kernel must be odd and <= L, got {} with L={}",
                self.ma_kernel, self.context
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.expand == 0 || self.conv_width == 0 {
            return fail("expand and conv_width must be positive".into());
        }
        if !(self.revin_eps > 0.0) {
            return fail(format!(
                "revin_eps must be positive, got {}",
                self.revin_eps
            ));
        }
        Ok(())
    }

    fn block(&self, width: usize) -> MambaBlockConfig {
        MambaBlockConfig {
            expand: self.expand,
            conv_width: self.conv_width,
            ..MambaBlockConfig::new(width, self.state)
        }
    }

    /// Block over the temporal axis: sequence `E`, token width `D`.
    pub fn mamba_block(&self) -> MambaBlockConfig {
        self.block(self.channels)
    }

    /// Block over the channel axis: sequence `D`, token width `E`.
    pub fn imamba_block(&self) -> MambaBlockConfig {
        self.block(self.embed)
    }

    /// Closed-form parameter count per named part.
    pub fn param_parts(&self) -> BTreeMap<String, usize> {
        let (l, w, d, e) = (self.context, self.horizon, self.channels, self.embed);
        let mut parts = BTreeMap::new();
        if self.norm == Norm::Revin {
            parts.insert("revin".into(), 2 * d);
        }
        parts.insert("linear_e".into(), 2 * l * e + e);
        parts.insert("mamba".into(), self.mamba_block().param_count());
        parts.insert("imamba".into(), self.imamba_block().param_count());
        parts.insert("linear_w".into(), 4 * e * w + w);
        parts
    }
}

/// Parameter totals reported by [`PowerMamba::param_count`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub by_part: BTreeMap<String, usize>,
}

impl ParamCount {
    pub fn of(store: &ParamStore) -> Self {
        let by_part = store.count_by_part();
        Self {
            total: by_part.values().sum(),
            by_part,
        }
    }
}

/// Parameter layout of the network; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct PowerMambaNet {
    cfg: PowerMambaConfig,
    revin: Option<(ParamId, ParamId)>,
    embed_w: ParamId,
    embed_b: ParamId,
    mamba: MambaBlock,
    imamba: MambaBlock,
    out_w: ParamId,
    out_b: ParamId,
}

impl PowerMambaNet {
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: PowerMambaConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let (l, w, d, e) = (cfg.context, cfg.horizon, cfg.channels, cfg.embed);
        let revin = (cfg.norm == Norm::Revin).then(|| {
            (
                store.add("revin.gamma", Tensor::full(&[d], 1.0)),
                store.add("revin.beta", Tensor::zeros(&[d])),
            )
        });
        let be = 1.0 / ((2 * l) as f64).sqrt();
        let embed_w = store.add_uniform("linear_e.weight", &[e, 2 * l], be, rng);
        let embed_b = store.add_uniform("linear_e.bias", &[e], be, rng);
        let mamba = MambaBlock::init(store, "mamba", cfg.mamba_block(), rng)?;
        let imamba = MambaBlock::init(store, "imamba", cfg.imamba_block(), rng)?;
        let bw = 1.0 / ((4 * e) as f64).sqrt();
        let out_w = store.add_uniform("linear_w.weight", &[w, 4 * e], bw, rng);
        let out_b = store.add_uniform("linear_w.bias", &[w], bw, rng);
        Ok(Self {
            cfg,
            revin,
            embed_w,
            embed_b,
            mamba,
            imamba,
            out_w,
            out_b,
        })
    }

    pub fn config(&self) -> &PowerMambaConfig {
        &self.cfg
    }

    /// Forward pass of one `L × D` sample to a `W × D` forecast.
    pub fn forward_on<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let c = &self.cfg;
        let (l, d) = (c.context, c.channels);
        if tape.shape(x) != [l, d] {
            return Err(Error::dim(
                "powermamba forward",
                format!("[{l}, {d}]"),
                format!("{:?}", tape.shape(x)),
            ));
        }

        let (xn, stats) = match self.revin {
            Some((g, b)) => {
                check_scale(tape.value(p[g]))?;
                let (xn, stats) = norm::revin_on(tape, x, p[g], p[b], c.revin_eps)?;
                (xn, Some(stats))
            }
            None => (x, None),
        };

        let (trend, seasonal) = decompose_on(tape, xn, c.ma_kernel)?;
        let x_ts = tape.concat(&[trend, seasonal], 0)?;
        let x_e = tape.matmul(p[self.embed_w], x_ts)?;
        let bias = tape.broadcast_cols(p[self.embed_b], d)?;
        let x_e = tape.add(x_e, bias)?;

        let left_in = tape.dropout(x_e, c.dropout, mode, rng)?;
        let x_m = self.mamba.forward(tape, p, left_in)?;
        let x_et = tape.transpose(x_e)?;
        let right_in = tape.dropout(x_et, c.dropout, mode, rng)?;
        let x_im = self.imamba.forward(tape, p, right_in)?;
        let x_im = tape.transpose(x_im)?;
        let both = tape.add(x_m, x_im)?;
        let x_c = tape.concat(&[x_e, x_m, x_im, both], 0)?;

        let y = tape.matmul(p[self.out_w], x_c)?;
        let bias = tape.broadcast_cols(p[self.out_b], d)?;
        let y = tape.add(y, bias)?;

        match (self.revin, stats) {
            (Some((g, b)), Some(stats)) => norm::revin_inverse_on(tape, y, &stats, p[g], p[b]),
            _ => Ok(y),
        }
    }
}

fn check_scale(gamma: &Tensor) -> Result<()> {
    match gamma.data().iter().position(|g| g.abs() < 1e-12) {
        Some(channel) => Err(Error::DegenerateScale {
            channel,
            value: gamma.data()[channel],
        }),
        None => Ok(()),
    }
}

/// A network together with its parameter values.
#[derive(Clone, Debug)]
pub struct PowerMamba {
    net: PowerMambaNet,
    store: ParamStore,
}

pub const CHECKPOINT_KIND: &str = "powermamba";

impl PowerMamba {
    /// Initializes parameters from the `init` stream of `seed`.
    pub fn new(cfg: PowerMambaConfig, seed: u64) -> Result<Self> {
        Self::with_rng(cfg, &mut rng::stream(seed, "init"))
    }

    pub fn with_rng<R: Rng + ?Sized>(cfg: PowerMambaConfig, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = PowerMambaNet::build(&mut store, cfg, rng)?;
        Ok(Self { net, store })
    }

    pub fn config(&self) -> &PowerMambaConfig {
        self.net.config()
    }

    pub fn net(&self) -> &PowerMambaNet {
        &self.net
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

    /// Forecast for one `L × D` context. `rng` only drives dropout in train mode.
    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = self.net.forward_on(&mut tape, &p, xv, mode, rng)?;
        Ok(tape.value(y).clone())
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x, Mode::Eval, &mut rng::stream(0, "eval"))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        checkpoint_of(CHECKPOINT_KIND, self.config(), &self.store)
    }

    pub fn from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<Self> {
        expect_kind(ck, CHECKPOINT_KIND, path)?;
        let cfg: PowerMambaConfig = ck.field("config", path)?;
        let mut model = Self::new(cfg, 0)?;
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

pub(crate) fn checkpoint_of<C: Serialize>(kind: &str, cfg: &C, store: &ParamStore) -> Checkpoint {
    Checkpoint {
        header: serde_json::json!({
            "kind": kind,
            "config": cfg,
        }),
        tensors: store
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone().with_requires_grad(false)))
            .collect(),
    }
}

pub(crate) fn expect_kind(ck: &Checkpoint, kind: &str, path: &Path) -> Result<()> {
    let found: String = ck.field("kind", path)?;
    if found != kind {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            msg: format!("expected a `{kind}` checkpoint, found `{found}`"),
        });
    }
    Ok(())
}
