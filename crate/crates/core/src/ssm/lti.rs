use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Below this magnitude a diagonal entry of `A` is treated as zero in the
/// hold integral, whose limit is `Δ·B`.
const ZERO_POLE: f64 = 1e-12;

/// Continuous-time SSM `h' = A h + B x`, `y = C h` with diagonal `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousSsm {
    /// Diagonal of `A`, length `N`.
    pub a: Vec<f64>,
    /// `N × D`.
    pub b: Tensor,
    /// `D × N`.
    pub c: Tensor,
    /// Sampling step.
    pub delta: f64,
}

/// Discretized SSM: `h_t = Ā h_{t-1} + B̄ x_t`, `y_t = C h_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsm {
    pub a_bar: Vec<f64>,
    pub b_bar: Tensor,
    pub c: Tensor,
}

fn check_io(n: usize, b: &Tensor, c: &Tensor, op: &'static str) -> Result<usize> {
    if n == 0 {
        return Err(Error::dim(op, "state size N >= 1", "0"));
    }
    let d = b.cols();
    if b.shape() != [n, d] || c.shape() != [d, n] {
        return Err(Error::dim(
            op,
            format!("B [{n}, D] and C [D, {n}]"),
            format!("{:?} and {:?}", b.shape(), c.shape()),
        ));
    }
    Ok(d)
}

impl ContinuousSsm {
    pub fn new(a: Vec<f64>, b: Tensor, c: Tensor, delta: f64) -> Result<Self> {
        check_io(a.len(), &b, &c, "ContinuousSsm")?;
        Ok(Self { a, b, c, delta })
    }

    /// Diagonal real initialization `A_n = -(n + 1)`.
    pub fn diagonal_init(n: usize, b: Tensor, c: Tensor, delta: f64) -> Result<Self> {
        Self::new((0..n).map(|i| -((i + 1) as f64)).collect(), b, c, delta)
    }

    pub fn state_size(&self) -> usize {
        self.a.len()
    }
}

impl DiscreteSsm {
    pub fn new(a_bar: Vec<f64>, b_bar: Tensor, c: Tensor) -> Result<Self> {
        check_io(a_bar.len(), &b_bar, &c, "DiscreteSsm")?;
        Ok(Self { a_bar, b_bar, c })
    }

    pub fn state_size(&self) -> usize {
        self.a_bar.len()
    }

    pub fn io_dim(&self) -> usize {
        self.b_bar.cols()
    }
}

/// Zero-order hold: `Ā = exp(ΔA)`, `B̄_n = (exp(ΔA_n) − 1)/A_n · B_n`.
pub fn discretize_zoh(ssm: &ContinuousSsm) -> Result<DiscreteSsm> {
    let dt = ssm.delta;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::domain(
            "discretize_zoh",
            format!("step must be positive, got {dt}"),
        ));
    }
    let d = ssm.b.cols();
    let mut b_bar = Vec::with_capacity(ssm.b.numel());
    let a_bar = ssm
        .a
        .iter()
        .enumerate()
        .map(|(n, &a)| {
            let gain = if a.abs() < ZERO_POLE {
                dt
            } else {
                (dt * a).exp_m1() / a
            };
            b_bar.extend(ssm.b.row(n).iter().map(|v| gain * v));
            (dt * a).exp()
        })
        .collect();
    DiscreteSsm::new(a_bar, Tensor::new(&[ssm.a.len(), d], b_bar)?, ssm.c.clone())
}

/// Runs the recurrence from a zero state over `x` (`L × D`).
pub fn scan_recurrent(ssm: &DiscreteSsm, x: &Tensor) -> Result<Tensor> {
    let (n, d) = (ssm.state_size(), ssm.io_dim());
    if x.shape().len() != 2 || x.cols() != d {
        return Err(Error::dim(
            "scan_recurrent",
            format!("[L, {d}]"),
            format!("{:?}", x.shape()),
        ));
    }
    let (bb, c) = (ssm.b_bar.data(), ssm.c.data());
    let mut h = vec![0.0; n];
    let mut out = Vec::with_capacity(x.numel());
    for t in 0..x.rows() {
        let xt = x.row(t);
        for (k, hk) in h.iter_mut().enumerate() {
            let drive: f64 = bb[k * d..(k + 1) * d]
                .iter()
                .zip(xt)
                .map(|(b, x)| b * x)
                .sum();
            *hk = ssm.a_bar[k] * *hk + drive;
        }
        out.extend((0..d).map(|j| {
            c[j * n..(j + 1) * n]
                .iter()
                .zip(&h)
                .map(|(c, h)| c * h)
                .sum::<f64>()
        }));
    }
    Ok(Tensor::from_raw(vec![x.rows(), d], out))
}

/// Convolution kernel `K_i = C Ā^i B̄` for `i < L`; each tap is `D × D`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    len: usize,
    dim: usize,
    taps: Vec<f64>,
}

impl Kernel {
    /// Single-input single-output kernel from scalar taps.
    pub fn from_scalar(taps: Vec<f64>) -> Self {
        Self {
            len: taps.len(),
            dim: 1,
            taps,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Tap `i` as a row-major `D × D` block.
    pub fn tap(&self, i: usize) -> &[f64] {
        let s = self.dim * self.dim;
        &self.taps[i * s..(i + 1) * s]
    }

    /// Entry `(out, in)` of every tap.
    pub fn channel_pair(&self, out: usize, inp: usize) -> Vec<f64> {
        (0..self.len)
            .map(|i| self.tap(i)[out * self.dim + inp])
            .collect()
    }
}

pub fn build_kernel(ssm: &DiscreteSsm, len: usize) -> Result<Kernel> {
    if len == 0 {
        return Err(Error::domain("build_kernel", "kernel length must be >= 1"));
    }
    let (n, d) = (ssm.state_size(), ssm.io_dim());
    let (bb, c) = (ssm.b_bar.data(), ssm.c.data());
    let mut power = vec![1.0; n];
    let mut taps = Vec::with_capacity(len * d * d);
    for _ in 0..len {
        for o in 0..d {
            for i in 0..d {
                taps.push(
                    (0..n)
                        .map(|k| c[o * n + k] * power[k] * bb[k * d + i])
                        .sum::<f64>(),
                );
            }
        }
        for (p, a) in power.iter_mut().zip(&ssm.a_bar) {
            *p *= a;
        }
    }
    Ok(Kernel { len, dim: d, taps })
}

/// Causal convolution `y_t = Σ_{i≤t} K_i x_{t−i}`, direct O(L²).
pub fn apply_kernel(kernel: &Kernel, x: &Tensor) -> Result<Tensor> {
    let d = kernel.dim;
    if x.shape().len() != 2 || x.rows() != kernel.len || x.cols() != d {
        return Err(Error::dim(
            "apply_kernel",
            format!("[{}, {d}]", kernel.len),
            format!("{:?}", x.shape()),
        ));
    }
    let len = kernel.len;
    let mut out = vec![0.0; len * d];
    for t in 0..len {
        let yt = &mut out[t * d..(t + 1) * d];
        for i in 0..=t {
            let tap = kernel.tap(i);
            let xs = x.row(t - i);
            for (o, y) in yt.iter_mut().enumerate() {
                *y += tap[o * d..(o + 1) * d]
                    .iter()
                    .zip(xs)
                    .map(|(k, x)| k * x)
                    .sum::<f64>();
            }
        }
    }
    Ok(Tensor::from_raw(vec![len, d], out))
}
