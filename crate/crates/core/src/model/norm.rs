use crate::error::{Error, Result};
use crate::tensor::{Reduce, Tape, Tensor, Var};

/// Per-channel statistics of one context window.
#[derive(Clone, Debug, PartialEq)]
pub struct RevinStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

pub(crate) struct TapeStats {
    mean: Var,
    std: Var,
}

pub(crate) fn revin_on(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    eps: f64,
) -> Result<(Var, TapeStats)> {
    let rows = tape.shape(x)[0];
    let mean = tape.reduce(Reduce::Mean, x, Some(0))?;
    let var = tape.reduce(Reduce::Var, x, Some(0))?;
    let shifted = tape.add_scalar(var, eps);
    let std = tape.sqrt(shifted);

    let m = tape.broadcast_rows(mean, rows)?;
    let s = tape.broadcast_rows(std, rows)?;
    let g = tape.broadcast_rows(gamma, rows)?;
    let b = tape.broadcast_rows(beta, rows)?;
    let centered = tape.sub(x, m)?;
    let z = tape.div(centered, s)?;
    let scaled = tape.mul(z, g)?;
    Ok((tape.add(scaled, b)?, TapeStats { mean, std }))
}

pub(crate) fn revin_inverse_on(
    tape: &mut Tape,
    y: Var,
    stats: &TapeStats,
    gamma: Var,
    beta: Var,
) -> Result<Var> {
    let rows = tape.shape(y)[0];
    let m = tape.broadcast_rows(stats.mean, rows)?;
    let s = tape.broadcast_rows(stats.std, rows)?;
    let g = tape.broadcast_rows(gamma, rows)?;
    let b = tape.broadcast_rows(beta, rows)?;
    let unshifted = tape.sub(y, b)?;
    let unscaled = tape.div(unshifted, g)?;
    let spread = tape.mul(unscaled, s)?;
    tape.add(spread, m)
}

fn check_affine(op: &'static str, d: usize, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::dim(
            op,
            format!("gamma and beta of shape [{d}]"),
            format!("{:?} and {:?}", gamma.shape(), beta.shape()),
        ));
    }
    Ok(())
}

/// Standardizes each channel of `x` (`L × D`) over its rows, then applies
/// `γ_d · z + β_d`.
pub fn revin_normalize(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, RevinStats)> {
    if x.shape().len() != 2 || x.rows() < 2 {
        return Err(Error::dim(
            "revin_normalize",
            "[L >= 2, D]",
            format!("{:?}", x.shape()),
        ));
    }
    check_affine("revin_normalize", x.cols(), gamma, beta)?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(gamma.clone());
    let b = tape.constant(beta.clone());
    let var = tape.reduce(Reduce::Var, xv, Some(0))?;
    let (y, stats) = revin_on(&mut tape, xv, g, b, eps)?;
    let stats = RevinStats {
        mean: tape.value(stats.mean).data().to_vec(),
        var: tape.value(var).data().to_vec(),
        eps,
    };
    Ok((tape.value(y).clone(), stats))
}

/// Inverts [`revin_normalize`] using the context statistics.
pub fn revin_denormalize(
    y: &Tensor,
    stats: &RevinStats,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<Tensor> {
    let d = stats.mean.len();
    if y.shape().len() != 2 || y.cols() != d {
        return Err(Error::dim(
            "revin_denormalize",
            format!("[W, {d}]"),
            format!("{:?}", y.shape()),
        ));
    }
    check_affine("revin_denormalize", d, gamma, beta)?;
    super::check_scale(gamma)?;
    let mut tape = Tape::new();
    let yv = tape.constant(y.clone());
    let g = tape.constant(gamma.clone());
    let b = tape.constant(beta.clone());
    let mean = tape.constant(Tensor::new(&[d], stats.mean.clone())?);
    let std = tape.constant(Tensor::new(
        &[d],
        stats.var.iter().map(|v| (v + stats.eps).sqrt()).collect(),
    )?);
    let out = revin_inverse_on(&mut tape, yv, &TapeStats { mean, std }, g, b)?;
    Ok(tape.value(out).clone())
}

/// Trend as a centered moving average with edge replication, seasonal as the
/// remainder. The trend is then reconciled as `x − S` so that `T + S`
/// reproduces `x` whenever the float grid allows it.
pub fn decompose_on(tape: &mut Tape, x: Var, kernel: usize) -> Result<(Var, Var)> {
    let rows = match tape.shape(x) {
        [r, _] => *r,
        other => return Err(Error::dim("decompose", "[L, D]", format!("{other:?}"))),
    };
    if kernel.is_multiple_of(2) || kernel > rows {
        return Err(Error::domain(
            "decompose",
            format!("kernel must be odd and <= {rows}, got {kernel}"),
        ));
    }
    let half = (kernel - 1) / 2;
    let padded = tape.pad_edge(x, 0, half, half)?;
    let avg = tape.window_mean(padded, kernel)?;
    let seasonal = tape.sub(x, avg)?;
    let trend = tape.sub(x, seasonal)?;
    Ok((trend, seasonal))
}

pub fn decompose(x: &Tensor, kernel: usize) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (t, s) = decompose_on(&mut tape, xv, kernel)?;
    Ok((tape.value(t).clone(), tape.value(s).clone()))
}
