//! Finite-difference fixtures shared by the autodiff, model and acceptance suites.

use super::{gradcheck, random_tensor, seeded};
use powermamba::model::{Norm, PowerMamba, PowerMambaConfig};
use powermamba::params::Bound;
use powermamba::tensor::{Mode, Reduce, Tape, Tensor, Var};
use powermamba::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Scalar probe `Σ out ⊙ R` with a fixed random `R`, so every output entry
/// contributes a distinct weight to the gradient.
pub fn probe(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let r = random_tensor(&mut seeded(seed), &shape, -1.0, 1.0);
    let r = tape.constant(r);
    let prod = tape.mul(out, r)?;
    Ok(tape.sum(prod))
}

pub type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// One case per differentiable primitive: (name, input shapes, builder).
pub fn primitive_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    vec![
        (
            "matmul",
            vec![vec![3, 4], vec![4, 2]],
            Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1])),
        ),
        (
            "add",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1])),
        ),
        (
            "add scalar bcast",
            vec![vec![3, 4], vec![1]],
            Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1])),
        ),
        (
            "sub",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|t: &mut Tape, v: &[Var]| t.sub(v[0], v[1])),
        ),
        (
            "sub scalar lhs",
            vec![vec![1], vec![3, 4]],
            Box::new(|t: &mut Tape, v: &[Var]| t.sub(v[0], v[1])),
        ),
        (
            "mul",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1])),
        ),
        (
            "mul scalar",
            vec![vec![3, 4], vec![1]],
            Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1])),
        ),
        (
            "div",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|t: &mut Tape, v: &[Var]| {
                // keep the divisor away from zero: 3 + x²
                let sq = t.square(v[1]);
                let d = t.add_scalar(sq, 3.0);
                t.div(v[0], d)
            }),
        ),
        (
            "scale",
            vec![vec![5]],
            Box::new(|t: &mut Tape, v: &[Var]| Ok(t.scale(v[0], -1.7))),
        ),
        (
            "add_scalar",
            vec![vec![5]],
            Box::new(|t: &mut Tape, v: &[Var]| Ok(t.add_scalar(v[0], 0.3))),
        ),
        (
            "neg",
            vec![vec![5]],
            Box::new(|t: &mut Tape, v: &[Var]| Ok(t.neg(v[0]))),
        ),
        (
            "square",
            vec![vec![2, 3]],
            Box::new(|t: &mut Tape, v: &[Var]| Ok(t.square(v[0]))),
        ),
        (
            "exp",
            vec![vec![3, 3]],
            Box::new(|t: &mut Tape, v: &[Var]| Ok(t.exp(v[0]))),
        ),
        (
            "softplus",
            vec![vec![3, 3]],
            Box::new(|t: &mut Tape, v: &[Var]| Ok(t.softplus(v[0]))),
        ),
        (
            "softplus large branch",
            vec![vec![4]],
            Box::new(|t: &mut Tape, v: &[Var]| {
                let s = t.add_scalar(v[0], 25.0);
                Ok(t.softplus(s))
            }),
        ),
        (
            "silu",
            vec![vec![3, 3]],
            Box::new(|t: &mut Tape, v: &[Var]| Ok(t.silu(v[0]))),
        ),
        (
            "sqrt",
            vec![vec![6]],
            Box::new(|t: &mut Tape, v: &[Var]| {
                let sq = t.square(v[0]);
                let pos = t.add_scalar(sq, 0.5);
                Ok(t.sqrt(pos))
            }),
        ),
        (
            "dropout",
            vec![vec![4, 4]],
            Box::new(|t: &mut Tape, v: &[Var]| {
                let mut rng = ChaCha8Rng::seed_from_u64(99);
                t.dropout(v[0], 0.3, Mode::Train, &mut rng)
            }),
        ),
        (
            "sum axis0",
            vec![vec![3, 4]],
            Box::new(|t: &mut Tape, v: &[Var]| t.reduce(Reduce::Sum, v[0], Some(0))),
        ),
        (
            "mean axis1",
            vec![vec![3, 4]],
            Box::new(|t: &mut Tape, v: &[Var]| t.reduce(Reduce::Mean, v[0], Some(1))),
        ),
        (
            "var axis0",
            vec![vec![5, 3]],
            Box::new(|t: &mut Tape, v: &[Var]| t.reduce(Reduce::Var, v[0], Some(0))),
        ),
        (
            "var 3d axis1",
            vec![vec![2, 4, 3]],
            Box::new(|t: &mut Tape, v: &[Var]| t.reduce(Reduce::Var, v[0], Some(1))),
        ),
        (
            "transpose",
            vec![vec![3, 5]],
            Box::new(|t: &mut Tape, v: &[Var]| t.transpose(v[0])),
        ),
        (
            "concat0",
            vec![vec![2, 3], vec![4, 3]],
            Box::new(|t: &mut Tape, v: &[Var]| t.concat(&[v[0], v[1]], 0)),
        ),
        (
            "concat1",
            vec![vec![3, 2], vec![3, 1]],
            Box::new(|t: &mut Tape, v: &[Var]| t.concat(&[v[0], v[1], v[0]], 1)),
        ),
        (
            "slice",
            vec![vec![5, 4]],
            Box::new(|t: &mut Tape, v: &[Var]| t.slice(v[0], 1, 1, 2)),
        ),
        (
            "pad_edge",
            vec![vec![5, 2]],
            Box::new(|t: &mut Tape, v: &[Var]| t.pad_edge(v[0], 0, 3, 2)),
        ),
        (
            "broadcast_rows",
            vec![vec![3]],
            Box::new(|t: &mut Tape, v: &[Var]| t.broadcast_rows(v[0], 4)),
        ),
        (
            "broadcast_cols",
            vec![vec![3]],
            Box::new(|t: &mut Tape, v: &[Var]| t.broadcast_cols(v[0], 4)),
        ),
        (
            "window_mean",
            vec![vec![7, 2]],
            Box::new(|t: &mut Tape, v: &[Var]| t.window_mean(v[0], 3)),
        ),
        (
            "causal_conv",
            vec![vec![6, 3], vec![3, 4], vec![3]],
            Box::new(|t: &mut Tape, v: &[Var]| t.causal_conv(v[0], v[1], v[2])),
        ),
        (
            "selective_scan",
            vec![vec![6, 3], vec![6, 3], vec![4], vec![6, 4], vec![6, 4]],
            Box::new(|t: &mut Tape, v: &[Var]| {
                // positive steps and negative poles, as in the model
                let delta = t.softplus(v[1]);
                let a_pos = t.exp(v[2]);
                let a = t.neg(a_pos);
                t.selective_scan(v[0], delta, a, v[3], v[4])
            }),
        ),
    ]
}

/// Worst finite-difference error of the MSE loss of a model built from `cfg`,
/// over every parameter (or only the RevIN scale).
pub fn mse_gradcheck(cfg: PowerMambaConfig, only_gamma: bool) -> f64 {
    let model = PowerMamba::new(cfg.clone(), 3).unwrap();
    let mut rng = seeded(7);
    let x = random_tensor(&mut rng, &[cfg.context, cfg.channels], -2.0, 2.0);
    let y = random_tensor(&mut rng, &[cfg.horizon, cfg.channels], -1.0, 1.0);
    // perturb the affine away from its (1, 0) init so its gradient is generic
    let mut params: Vec<Tensor> = model.params().iter().map(|(_, t)| t.clone()).collect();
    if cfg.norm == Norm::Revin {
        params[0] = random_tensor(&mut rng, &[cfg.channels], 0.5, 1.5);
        params[1] = random_tensor(&mut rng, &[cfg.channels], -0.5, 0.5);
    }
    let n = params.len();
    let net = model.net().clone();
    let run = |inputs: Vec<Tensor>, fixed: Vec<Tensor>| {
        gradcheck(&inputs, |tape, v| {
            let mut vars = Vec::with_capacity(n);
            let mut vi = v.iter();
            let mut fi = fixed.iter();
            for k in 0..n {
                let train = !only_gamma || k == 0;
                vars.push(if train {
                    *vi.next().unwrap()
                } else {
                    tape.constant(fi.next().unwrap().clone())
                });
            }
            let p = Bound::from_vars(vars);
            let xv = tape.constant(x.clone());
            let out = net.forward_on(tape, &p, xv, Mode::Eval, &mut seeded(0))?;
            let target = tape.constant(y.clone());
            let diff = tape.sub(out, target)?;
            let sq = tape.square(diff);
            Ok(tape.mean(sq))
        })
    };
    if only_gamma {
        run(vec![params[0].clone()], params[1..].to_vec())
    } else {
        run(params, vec![])
    }
}
