use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Projections that make `B`, `C` and the step `Δ` functions of the input.
///
/// `T` is [`ParamId`] for stored weights and [`Var`] once bound to a tape.
#[derive(Clone, Debug)]
pub struct SelectiveWeights<T> {
    /// `D × N`, token → `B_t`.
    pub w_b: T,
    /// `D × N`, token → `C_t`.
    pub w_c: T,
    /// `D × R`, low-rank step projection.
    pub w_dt_low: T,
    /// `R × D`, expands the low-rank step back to every channel.
    pub w_dt_up: T,
    /// Per-channel step offset, length `D`.
    pub dt_bias: T,
}

impl SelectiveWeights<ParamId> {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        state: usize,
        dt_rank: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (channels as f64).sqrt();
        let w_b = store.add_uniform(format!("{prefix}.w_b"), &[channels, state], bound, rng);
        let w_c = store.add_uniform(format!("{prefix}.w_c"), &[channels, state], bound, rng);
        let w_dt_low = store.add_uniform(
            format!("{prefix}.w_dt_low"),
            &[channels, dt_rank],
            bound,
            rng,
        );
        let w_dt_up = store.add_uniform(
            format!("{prefix}.w_dt_up"),
            &[dt_rank, channels],
            1.0 / (dt_rank as f64).sqrt(),
            rng,
        );
        // steps log-uniform in [1e-3, 1e-1], stored through the inverse softplus
        let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
        let bias = (0..channels)
            .map(|_| {
                let dt = rng.random_range(lo..hi).exp();
                dt + (-(-dt).exp_m1()).ln()
            })
            .collect();
        let dt_bias = store.add(
            format!("{prefix}.dt_bias"),
            Tensor::new(&[channels], bias).expect("finite"),
        );
        Self {
            w_b,
            w_c,
            w_dt_low,
            w_dt_up,
            dt_bias,
        }
    }

    pub fn bind(&self, b: &Bound) -> SelectiveWeights<Var> {
        SelectiveWeights {
            w_b: b[self.w_b],
            w_c: b[self.w_c],
            w_dt_low: b[self.w_dt_low],
            w_dt_up: b[self.w_dt_up],
            dt_bias: b[self.dt_bias],
        }
    }

    pub fn param_count(channels: usize, state: usize, dt_rank: usize) -> usize {
        2 * channels * state + 2 * channels * dt_rank + channels
    }
}

/// Per-token `B_t = x W_B`, `C_t = x W_C`,
/// `Δ_t = softplus(bias + (x W_low) W_up)` for every row of `x` (`S × D`).
pub fn selective_params(
    tape: &mut Tape,
    x: Var,
    w: &SelectiveWeights<Var>,
) -> Result<(Var, Var, Var)> {
    let rows = tape.shape(x)[0];
    let b = tape.matmul(x, w.w_b)?;
    let c = tape.matmul(x, w.w_c)?;
    let low = tape.matmul(x, w.w_dt_low)?;
    let up = tape.matmul(low, w.w_dt_up)?;
    let bias = tape.broadcast_rows(w.dt_bias, rows)?;
    let pre = tape.add(up, bias)?;
    Ok((b, c, tape.softplus(pre)))
}

/// Selective scan over `x` (`S × D`) with diagonal poles `a` (length `N`):
/// `Ā_t = exp(Δ_t A)`, `B̄_t = Δ_t B_t`, zero initial state.
pub fn selective_scan(tape: &mut Tape, x: Var, a: Var, w: &SelectiveWeights<Var>) -> Result<Var> {
    if tape.shape(x).len() != 2 {
        return Err(Error::dim(
            "selective_scan",
            "[S, D]",
            format!("{:?}", tape.shape(x)),
        ));
    }
    let (b, c, delta) = selective_params(tape, x, w)?;
    tape.selective_scan(x, delta, a, b, c)
}
