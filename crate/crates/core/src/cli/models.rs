use std::path::Path;

use super::{FillArg, ModelArgs, ModelKind, NormArg};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::fusion::{FillPolicy, FusedModel};
use crate::model::{Norm, PowerMamba, PowerMambaConfig};
use crate::params::{Bound, ParamStore};
use crate::rng::StreamRng;
use crate::tensor::{Mode, Tape, Var};
use crate::train::{DLinear, DLinearConfig, Forecaster, InputKind};

/// Any of the trainable forecasters the CLI can build or load.
#[derive(Clone, Debug)]
pub enum AnyModel {
    PowerMamba(PowerMamba),
    Fused(FusedModel),
    DLinear(DLinear),
}

impl AnyModel {
    pub fn build(
        args: &ModelArgs,
        context: usize,
        horizon: usize,
        channels: usize,
        seed: u64,
    ) -> Result<Self> {
        let cfg = PowerMambaConfig {
            embed: args.embed,
            state: args.state,
            ma_kernel: args.ma_kernel,
            dropout: args.dropout,
            norm: match args.norm {
                NormArg::Revin => Norm::Revin,
                NormArg::Zscore => Norm::Zscore,
            },
            ..PowerMambaConfig::new(context, horizon, channels)
        };
        let fill = match args.fill {
            FillArg::RepeatLast => FillPolicy::RepeatLast,
            FillArg::Zero => FillPolicy::Zero,
        };
        Ok(match args.model {
            ModelKind::Powermamba => AnyModel::PowerMamba(PowerMamba::new(cfg, seed)?),
            ModelKind::Fused => AnyModel::Fused(FusedModel::new(cfg, fill, seed)?),
            ModelKind::Dlinear => AnyModel::DLinear(DLinear::new(DLinearConfig {
                context,
                horizon,
                ma_kernel: args.ma_kernel,
            })?),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let kind: String = ck.field("kind", path)?;
        match kind.as_str() {
            crate::model::CHECKPOINT_KIND => Ok(AnyModel::PowerMamba(PowerMamba::from_checkpoint(
                &ck, path,
            )?)),
            crate::fusion::CHECKPOINT_KIND => {
                Ok(AnyModel::Fused(FusedModel::from_checkpoint(&ck, path)?))
            }
            crate::train::DLINEAR_CHECKPOINT_KIND => {
                Ok(AnyModel::DLinear(DLinear::from_checkpoint(&ck, path)?))
            }
            other => Err(Error::Checkpoint {
                path: path.to_path_buf(),
                msg: format!("unknown model kind `{other}`"),
            }),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            AnyModel::PowerMamba(m) => m.to_checkpoint(),
            AnyModel::Fused(m) => m.to_checkpoint(),
            AnyModel::DLinear(m) => m.to_checkpoint(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::PowerMamba(_) => "powermamba",
            AnyModel::Fused(_) => "fused",
            AnyModel::DLinear(_) => "dlinear",
        }
    }

    /// `(L, W, D)`; DLinear is channel-agnostic and reports `None` for D.
    pub fn dims(&self) -> (usize, usize, Option<usize>) {
        match self {
            AnyModel::PowerMamba(m) => (
                m.config().context,
                m.config().horizon,
                Some(m.config().channels),
            ),
            AnyModel::Fused(m) => (
                m.config().context,
                m.config().horizon,
                Some(m.config().channels),
            ),
            AnyModel::DLinear(m) => (m.config().context, m.config().horizon, None),
        }
    }

    fn inner(&self) -> &dyn Forecaster {
        match self {
            AnyModel::PowerMamba(m) => m,
            AnyModel::Fused(m) => m,
            AnyModel::DLinear(m) => m,
        }
    }
}

impl Forecaster for AnyModel {
    fn input_kind(&self) -> InputKind {
        self.inner().input_kind()
    }

    fn params(&self) -> &ParamStore {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            AnyModel::PowerMamba(m) => m.params_mut(),
            AnyModel::Fused(m) => m.params_mut(),
            AnyModel::DLinear(m) => m.params_mut(),
        }
    }

    fn forward_on(
        &self,
        tape: &mut Tape,
        p: &Bound,
        input: Var,
        mode: Mode,
        rng: &mut StreamRng,
    ) -> Result<Var> {
        self.inner().forward_on(tape, p, input, mode, rng)
    }
}
