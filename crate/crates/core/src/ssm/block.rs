use rand::Rng;
use serde::{Deserialize, Serialize};

use super::selective::{selective_scan, SelectiveWeights};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MambaBlockConfig {
    /// Token width (channels per sequence step).
    pub width: usize,
    /// SSM state size `N`.
    pub state: usize,
    pub expand: usize,
    pub conv_width: usize,
    /// Rank of the step projection.
    pub dt_rank: usize,
}

impl MambaBlockConfig {
    /// Default internals: expand 2, conv width 4, step rank ⌈width/16⌉.
    pub fn new(width: usize, state: usize) -> Self {
        Self {
            width,
            state,
            expand: 2,
            conv_width: 4,
            dt_rank: width.div_ceil(16),
        }
    }

    pub fn inner(&self) -> usize {
        self.expand * self.width
    }

    /// Closed-form parameter count; a function of the block shape only.
    pub fn param_count(&self) -> usize {
        let (w, i) = (self.width, self.inner());
        let in_proj = w * 2 * i;
        let conv = i * self.conv_width + i;
        let selective = SelectiveWeights::<ParamId>::param_count(i, self.state, self.dt_rank);
        let poles = self.state;
        let out_proj = i * w;
        in_proj + conv + selective + poles + out_proj
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0
            || self.state == 0
            || self.expand == 0
            || self.conv_width == 0
            || self.dt_rank == 0
        {
            return Err(Error::Config(format!(
                "mamba block sizes must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Mamba block: input projection into an SSM path and a gate path, causal
/// depthwise convolution, SiLU, selective scan, SiLU gate, output projection.
#[derive(Clone, Debug)]
pub struct MambaBlock {
    cfg: MambaBlockConfig,
    in_proj: ParamId,
    conv_w: ParamId,
    conv_b: ParamId,
    selective: SelectiveWeights<ParamId>,
    a_log: ParamId,
    out_proj: ParamId,
}

impl MambaBlock {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: MambaBlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let (w, i, k) = (cfg.width, cfg.inner(), cfg.conv_width);
        let in_proj = store.add_uniform(
            format!("{prefix}.in_proj"),
            &[w, 2 * i],
            1.0 / (w as f64).sqrt(),
            rng,
        );
        let conv_bound = 1.0 / (k as f64).sqrt();
        let conv_w = store.add_uniform(format!("{prefix}.conv_w"), &[i, k], conv_bound, rng);
        let conv_b = store.add_uniform(format!("{prefix}.conv_b"), &[i], conv_bound, rng);
        let selective = SelectiveWeights::init(
            store,
            &format!("{prefix}.ssm"),
            i,
            cfg.state,
            cfg.dt_rank,
            rng,
        );
        // A_n = -exp(a_log_n) = -(n + 1)
        let a_log = (1..=cfg.state).map(|n| (n as f64).ln()).collect();
        let a_log = store.add(format!("{prefix}.a_log"), Tensor::new(&[cfg.state], a_log)?);
        let out_proj = store.add_uniform(
            format!("{prefix}.out_proj"),
            &[i, w],
            1.0 / (i as f64).sqrt(),
            rng,
        );
        Ok(Self {
            cfg,
            in_proj,
            conv_w,
            conv_b,
            selective,
            a_log,
            out_proj,
        })
    }

    pub fn config(&self) -> &MambaBlockConfig {
        &self.cfg
    }

    /// Maps `x` (`S × width`) to an output of the same shape.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let (s, w) = match tape.shape(x) {
            [s, w] => (*s, *w),
            other => {
                return Err(Error::dim(
                    "mamba_block",
                    "[S, width]",
                    format!("{other:?}"),
                ))
            }
        };
        if w != self.cfg.width {
            return Err(Error::dim(
                "mamba_block",
                format!("[S, {}]", self.cfg.width),
                format!("[{s}, {w}]"),
            ));
        }
        let i = self.cfg.inner();
        let xz = tape.matmul(x, p[self.in_proj])?;
        let u = tape.slice(xz, 1, 0, i)?;
        let z = tape.slice(xz, 1, i, i)?;

        let u = tape.causal_conv(u, p[self.conv_w], p[self.conv_b])?;
        let u = tape.silu(u);
        let a = tape.exp(p[self.a_log]);
        let a = tape.neg(a);
        let y = selective_scan(tape, u, a, &self.selective.bind(p))?;

        let gate = tape.silu(z);
        let y = tape.mul(y, gate)?;
        tape.matmul(y, p[self.out_proj])
    }
}
