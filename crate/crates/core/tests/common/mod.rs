#![allow(dead_code)]

pub mod cases;
pub mod dr;

use powermamba::tensor::{Tape, Tensor, Var};
use powermamba::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

/// Relative error with a unit floor on the denominator, so gradients near
/// zero are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Evaluates `build` on fresh tapes and returns the scalar loss value.
fn eval_loss<F>(inputs: &[Tensor], build: &F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.watch(t)).collect();
    let loss = build(&mut tape, &vars).unwrap();
    tape.value(loss).item()
}

/// Central finite differences against the tape gradient for every entry of
/// every input. Returns the worst relative error.
pub fn gradcheck<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let inputs: Vec<Tensor> = inputs
        .iter()
        .cloned()
        .map(|t| t.with_requires_grad(true))
        .collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.watch(t)).collect();
    let loss = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).unwrap().to_vec();
        for i in 0..t.numel() {
            let mut plus = inputs.clone();
            let mut minus = inputs.clone();
            let mut dp = t.data().to_vec();
            let mut dm = t.data().to_vec();
            dp[i] += FD_STEP;
            dm[i] -= FD_STEP;
            plus[k] = Tensor::new(t.shape(), dp).unwrap().with_requires_grad(true);
            minus[k] = Tensor::new(t.shape(), dm).unwrap().with_requires_grad(true);
            let fd = (eval_loss(&plus, &build) - eval_loss(&minus, &build)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(fd, analytic[i]));
        }
    }
    worst
}
