mod common;

use common::{gradcheck, random_tensor, seeded};
use powermamba::params::{Bound, ParamStore};
use powermamba::ssm::{
    apply_kernel, build_kernel, discretize_zoh, scan_recurrent, selective_params, selective_scan,
    ContinuousSsm, DiscreteSsm, Kernel, MambaBlock, MambaBlockConfig, SelectiveWeights,
};
use powermamba::tensor::{Tape, Tensor, Var};
use powermamba::Error;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn col(v: &[f64]) -> Tensor {
    Tensor::new(&[v.len(), 1], v.to_vec()).unwrap()
}

fn random_discrete(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteSsm {
    let a_bar = (0..n).map(|_| rng.random_range(-0.99..0.99)).collect();
    DiscreteSsm::new(
        a_bar,
        random_tensor(rng, &[n, d], -1.0, 1.0),
        random_tensor(rng, &[d, n], -1.0, 1.0),
    )
    .unwrap()
}

#[test]
fn zoh_examples() {
    let ssm = ContinuousSsm::new(vec![-1.0], col(&[1.0]), col(&[1.0]), 0.5).unwrap();
    let d = discretize_zoh(&ssm).unwrap();
    assert!((d.a_bar[0] - 0.606_530_659_712_633_4).abs() < 1e-15);
    assert!((d.b_bar.item() - 0.393_469_340_287_366_6).abs() < 1e-15);

    let two = ContinuousSsm::new(
        vec![-2.0, -0.5],
        Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap(),
        Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap(),
        1.0,
    )
    .unwrap();
    let d = discretize_zoh(&two).unwrap();
    assert_eq!(d.a_bar, vec![(-2.0f64).exp(), (-0.5f64).exp()]);

    // zero pole takes the Δ·B branch
    let flat = ContinuousSsm::new(
        vec![0.0, -1e-13],
        Tensor::new(&[2, 1], vec![2.0, 3.0]).unwrap(),
        Tensor::zeros(&[1, 2]),
        0.25,
    )
    .unwrap();
    let d = discretize_zoh(&flat).unwrap();
    assert_eq!(d.b_bar.data(), &[0.5, 0.75]);
    assert_eq!(d.a_bar[0], 1.0);

    // vanishing step: Ā → 1, B̄ → 0
    let tiny = ContinuousSsm::diagonal_init(
        3,
        Tensor::full(&[3, 1], 1.0),
        Tensor::full(&[1, 3], 1.0),
        1e-300,
    )
    .unwrap();
    let d = discretize_zoh(&tiny).unwrap();
    assert!(d.a_bar.iter().all(|&a| a == 1.0));
    assert!(d.b_bar.data().iter().all(|b| b.abs() < 1e-299));
}

#[test]
fn zoh_rejects_nonpositive_step() {
    for dt in [0.0, -1.0, f64::NAN] {
        let ssm = ContinuousSsm::new(vec![-1.0], col(&[1.0]), col(&[1.0]), dt).unwrap();
        assert!(matches!(discretize_zoh(&ssm), Err(Error::Domain { .. })));
    }
}

#[test]
fn scan_and_kernel_examples() {
    let unit = DiscreteSsm::new(vec![1.0], col(&[1.0]), col(&[1.0])).unwrap();
    assert_eq!(scan_recurrent(&unit, &col(&[2.0])).unwrap().data(), &[2.0]);

    let dead = DiscreteSsm::new(vec![0.0], col(&[1.0]), col(&[1.0])).unwrap();
    assert_eq!(
        build_kernel(&dead, 3).unwrap().channel_pair(0, 0),
        vec![1.0, 0.0, 0.0]
    );

    let half = DiscreteSsm::new(vec![0.5], col(&[1.0]), col(&[1.0])).unwrap();
    assert_eq!(
        build_kernel(&half, 4).unwrap().channel_pair(0, 0),
        vec![1.0, 0.5, 0.25, 0.125]
    );
    assert!(build_kernel(&half, 0).is_err());

    let x = col(&[0.3, -1.0, 2.5, 4.0]);
    let delta = Kernel::from_scalar(vec![1.0, 0.0, 0.0, 0.0]);
    assert_eq!(apply_kernel(&delta, &x).unwrap(), x);
    assert!(apply_kernel(&delta, &Tensor::zeros(&[4, 1]))
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));
    assert!(matches!(
        apply_kernel(&delta, &col(&[1.0, 2.0])),
        Err(Error::Dimension { .. })
    ));

    let mut rng = seeded(3);
    let ssm = random_discrete(&mut rng, 5, 1);
    assert!(scan_recurrent(&ssm, &Tensor::zeros(&[9, 1]))
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn impulse_response_is_kernel() {
    let mut rng = seeded(11);
    for _ in 0..20 {
        let n = rng.random_range(1..=8);
        let d = rng.random_range(1..=3);
        let len = rng.random_range(1..=64);
        let ssm = random_discrete(&mut rng, n, d);
        let k = build_kernel(&ssm, len).unwrap();
        for inp in 0..d {
            let mut x = Tensor::zeros(&[len, d]);
            let mut data = x.data().to_vec();
            data[inp] = 1.0;
            x = Tensor::new(&[len, d], data).unwrap();
            let y = scan_recurrent(&ssm, &x).unwrap();
            for out in 0..d {
                let tap = k.channel_pair(out, inp);
                for t in 0..len {
                    assert!((y.at(t, out) - tap[t]).abs() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn convolution_matches_recurrence_on_random_systems() {
    let mut rng = seeded(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let len = rng.random_range(1..=64);
        let ssm = random_discrete(&mut rng, n, 1);
        let x = random_tensor(&mut rng, &[len, 1], -2.0, 2.0);
        let rec = scan_recurrent(&ssm, &x).unwrap();
        let conv = apply_kernel(&build_kernel(&ssm, len).unwrap(), &x).unwrap();
        worst = worst.max(rec.max_abs_diff(&conv));
    }
    assert!(worst < 1e-8, "max abs diff {worst}");
}

#[test]
fn multichannel_convolution_matches_recurrence() {
    let mut rng = seeded(5);
    for _ in 0..30 {
        let ssm = random_discrete(&mut rng, 6, 3);
        let x = random_tensor(&mut rng, &[40, 3], -1.0, 1.0);
        let rec = scan_recurrent(&ssm, &x).unwrap();
        let conv = apply_kernel(&build_kernel(&ssm, 40).unwrap(), &x).unwrap();
        assert!(rec.max_abs_diff(&conv) < 1e-8);
    }
}

fn continuous(n: usize, rng: &mut ChaCha8Rng) -> ContinuousSsm {
    let a = (0..n).map(|_| -rng.random_range(1e-3..5.0)).collect();
    ContinuousSsm::new(
        a,
        random_tensor(rng, &[n, 1], -1.0, 1.0),
        random_tensor(rng, &[1, n], -1.0, 1.0),
        rng.random_range(1e-3..2.0),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_conv_equals_recurrence(seed in any::<u64>(), n in 1usize..=8, len in 1usize..=64) {
        let mut rng = seeded(seed);
        let ssm = discretize_zoh(&continuous(n, &mut rng)).unwrap();
        let x = random_tensor(&mut rng, &[len, 1], -3.0, 3.0);
        let rec = scan_recurrent(&ssm, &x).unwrap();
        let conv = apply_kernel(&build_kernel(&ssm, len).unwrap(), &x).unwrap();
        prop_assert!(rec.max_abs_diff(&conv) < 1e-8);
    }

    #[test]
    fn prop_contractive_and_bounded(seed in any::<u64>(), n in 1usize..=8, len in 1usize..=128) {
        let mut rng = seeded(seed);
        let ssm = discretize_zoh(&continuous(n, &mut rng)).unwrap();
        prop_assert!(ssm.a_bar.iter().all(|a| a.abs() < 1.0));
        let x = random_tensor(&mut rng, &[len, 1], -1.0, 1.0);
        let y = scan_recurrent(&ssm, &x).unwrap();
        // geometric-series bound on each state, summed through C
        let bound: f64 = (0..n)
            .map(|k| (ssm.c.data()[k] * ssm.b_bar.data()[k]).abs() / (1.0 - ssm.a_bar[k].abs()))
            .sum();
        prop_assert!(y.data().iter().all(|v| v.abs() <= bound * (1.0 + 1e-12)));
    }

    #[test]
    fn prop_static_causality(seed in any::<u64>(), len in 2usize..=48, frac in 0.0f64..1.0) {
        let mut rng = seeded(seed);
        let ssm = random_discrete(&mut rng, 4, 1);
        let x = random_tensor(&mut rng, &[len, 1], -1.0, 1.0);
        let t = ((len as f64) * frac) as usize;
        let mut data = x.data().to_vec();
        data[t] += 10.0;
        let bumped = Tensor::new(&[len, 1], data).unwrap();
        let (y0, y1) = (scan_recurrent(&ssm, &x).unwrap(), scan_recurrent(&ssm, &bumped).unwrap());
        for s in 0..t {
            prop_assert_eq!(y0.data()[s], y1.data()[s]);
        }
    }

    #[test]
    fn prop_static_linearity(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = seeded(seed);
        let ssm = random_discrete(&mut rng, 5, 2);
        let x1 = random_tensor(&mut rng, &[30, 2], -1.0, 1.0);
        let x2 = random_tensor(&mut rng, &[30, 2], -1.0, 1.0);
        let mix: Vec<f64> = x1.data().iter().zip(x2.data()).map(|(a, b)| alpha * a + beta * b).collect();
        let ymix = scan_recurrent(&ssm, &Tensor::new(&[30, 2], mix).unwrap()).unwrap();
        let (y1, y2) = (scan_recurrent(&ssm, &x1).unwrap(), scan_recurrent(&ssm, &x2).unwrap());
        for i in 0..ymix.numel() {
            prop_assert!((ymix.data()[i] - (alpha * y1.data()[i] + beta * y2.data()[i])).abs() < 1e-12);
        }
    }
}

struct Selective {
    store: ParamStore,
    w: SelectiveWeights<powermamba::params::ParamId>,
}

fn selective(seed: u64, d: usize, n: usize, r: usize) -> Selective {
    let mut store = ParamStore::new();
    let w = SelectiveWeights::init(&mut store, "sel", d, n, r, &mut seeded(seed));
    Selective { store, w }
}

fn poles(n: usize) -> Tensor {
    Tensor::new(&[n], (1..=n).map(|k| -(k as f64)).collect()).unwrap()
}

fn run_selective(sel: &Selective, x: &Tensor, a: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let p = sel.store.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let av = tape.constant(a.clone());
    let y = selective_scan(&mut tape, xv, av, &sel.w.bind(&p)).unwrap();
    tape.value(y).clone()
}

#[test]
fn zero_token_gives_bias_step_and_zero_projections() {
    let sel = selective(1, 6, 4, 2);
    let mut tape = Tape::new();
    let p = sel.store.bind(&mut tape);
    let x = tape.constant(Tensor::zeros(&[1, 6]));
    let (b, c, dt) = selective_params(&mut tape, x, &sel.w.bind(&p)).unwrap();
    assert!(tape.value(b).data().iter().all(|&v| v == 0.0));
    assert!(tape.value(c).data().iter().all(|&v| v == 0.0));
    let bias = sel.store.get(sel.w.dt_bias).data();
    for (d, &v) in tape.value(dt).data().iter().enumerate() {
        assert!(v > 0.0);
        assert!((v - (1.0 + bias[d].exp()).ln()).abs() < 1e-15);
    }
}

#[test]
fn steps_positive_for_many_tokens() {
    let sel = selective(2, 8, 4, 1);
    let mut rng = seeded(9);
    let x = random_tensor(&mut rng, &[1000, 8], -50.0, 50.0);
    let mut tape = Tape::new();
    let p = sel.store.bind(&mut tape);
    let xv = tape.constant(x);
    let (_, _, dt) = selective_params(&mut tape, xv, &sel.w.bind(&p)).unwrap();
    assert!(tape
        .value(dt)
        .data()
        .iter()
        .all(|&v| v > 0.0 && v.is_finite()));
}

#[test]
fn step_gradient_matches_finite_differences() {
    let sel = selective(4, 5, 3, 2);
    let x = random_tensor(&mut seeded(8), &[7, 5], -1.0, 1.0);
    let others: Vec<Tensor> = [sel.w.w_b, sel.w.w_c, sel.w.w_dt_up, sel.w.dt_bias]
        .iter()
        .map(|&id| sel.store.get(id).clone())
        .collect();
    let worst = gradcheck(&[sel.store.get(sel.w.w_dt_low).clone()], |tape, v| {
        let c: Vec<Var> = others.iter().map(|t| tape.constant(t.clone())).collect();
        let w = SelectiveWeights {
            w_b: c[0],
            w_c: c[1],
            w_dt_low: v[0],
            w_dt_up: c[2],
            dt_bias: c[3],
        };
        let xv = tape.constant(x.clone());
        let (_, _, dt) = selective_params(tape, xv, &w)?;
        Ok(tape.sum(dt))
    });
    assert!(worst < 1e-5, "rel err {worst}");
}

#[test]
fn zero_readout_projections_silence_output() {
    let mut sel = selective(5, 4, 3, 1);
    *sel.store.get_mut(sel.w.w_b) = Tensor::zeros(&[4, 3]);
    *sel.store.get_mut(sel.w.w_c) = Tensor::zeros(&[4, 3]);
    let x = random_tensor(&mut seeded(1), &[20, 4], -1.0, 1.0);
    assert!(run_selective(&sel, &x, &poles(3))
        .data()
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn constant_parameters_reduce_to_static_scan() {
    let mut rng = seeded(77);
    let (s, d, n) = (50, 3, 4);
    let a = poles(n);
    let dt: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..0.5)).collect();
    let b_row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c_row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let u = random_tensor(&mut rng, &[s, d], -1.0, 1.0);

    let mut tape = Tape::new();
    let uv = tape.constant(u.clone());
    let delta =
        tape.constant(Tensor::new(&[s, d], (0..s).flat_map(|_| dt.clone()).collect()).unwrap());
    let av = tape.constant(a.clone());
    let bv = tape.constant(Tensor::new(&[s, n], b_row.repeat(s)).unwrap());
    let cv = tape.constant(Tensor::new(&[s, n], c_row.repeat(s)).unwrap());
    let y = tape.selective_scan(uv, delta, av, bv, cv).unwrap();
    let y = tape.value(y).clone();

    for ch in 0..d {
        let ssm = DiscreteSsm::new(
            a.data().iter().map(|an| (dt[ch] * an).exp()).collect(),
            Tensor::new(&[n, 1], b_row.iter().map(|b| dt[ch] * b).collect()).unwrap(),
            Tensor::new(&[1, n], c_row.clone()).unwrap(),
        )
        .unwrap();
        let yref = scan_recurrent(&ssm, &col(&u.column(ch))).unwrap();
        for t in 0..s {
            assert!((y.at(t, ch) - yref.data()[t]).abs() < 1e-10);
        }
    }
}

#[test]
fn very_fast_poles_forget_history() {
    let sel = selective(6, 4, 3, 1);
    let a = Tensor::full(&[3], -1e6);
    let mut rng = seeded(12);
    let x = random_tensor(&mut rng, &[16, 4], -1.0, 1.0);
    let y = run_selective(&sel, &x, &a);
    let t = 15;
    // reverse the history before step t
    let mut rows: Vec<Vec<f64>> = (0..16).map(|r| x.row(r).to_vec()).collect();
    rows[..t].reverse();
    let y2 = run_selective(&sel, &Tensor::from_rows(&rows).unwrap(), &a);
    for ch in 0..4 {
        assert!((y.at(t, ch) - y2.at(t, ch)).abs() < 1e-6);
    }
}

#[test]
fn selective_scan_is_causal() {
    let sel = selective(7, 4, 3, 1);
    let x = random_tensor(&mut seeded(13), &[24, 4], -1.0, 1.0);
    let y = run_selective(&sel, &x, &poles(3));
    for t in [0, 5, 23] {
        let mut rows: Vec<Vec<f64>> = (0..24).map(|r| x.row(r).to_vec()).collect();
        rows[t].iter_mut().for_each(|v| *v += 3.0);
        let y2 = run_selective(&sel, &Tensor::from_rows(&rows).unwrap(), &poles(3));
        for s in 0..t {
            assert_eq!(y.row(s), y2.row(s));
        }
        assert_ne!(y.row(t), y2.row(t));
    }
}

fn block(width: usize, n: usize, seed: u64) -> (ParamStore, MambaBlock) {
    let mut store = ParamStore::new();
    let blk = MambaBlock::init(
        &mut store,
        "blk",
        MambaBlockConfig::new(width, n),
        &mut seeded(seed),
    )
    .unwrap();
    (store, blk)
}

fn run_block(store: &ParamStore, blk: &MambaBlock, x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let y = blk.forward(&mut tape, &p, xv).unwrap();
    tape.value(y).clone()
}

#[test]
fn block_preserves_shape_and_is_deterministic() {
    for seq in [8, 64] {
        for width in [4, 22] {
            let (store, blk) = block(width, 8, 1);
            let x = random_tensor(&mut seeded(seq as u64), &[seq, width], -1.0, 1.0);
            let y = run_block(&store, &blk, &x);
            assert_eq!(y.shape(), &[seq, width]);
            assert_eq!(y, run_block(&store, &blk, &x));
        }
    }
}

#[test]
fn block_parameter_count_ignores_sequence_length() {
    let counts: Vec<usize> = [120, 240, 480]
        .iter()
        .map(|&seq| {
            let (store, blk) = block(22, 16, 2);
            let x = random_tensor(&mut seeded(1), &[seq, 22], -1.0, 1.0);
            assert_eq!(run_block(&store, &blk, &x).shape(), &[seq, 22]);
            store.num_scalars()
        })
        .collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(counts[0], MambaBlockConfig::new(22, 16).param_count());
}

#[test]
fn block_is_causal_along_sequence() {
    let (store, blk) = block(5, 4, 3);
    let x = random_tensor(&mut seeded(4), &[20, 5], -1.0, 1.0);
    let y = run_block(&store, &blk, &x);
    let mut rows: Vec<Vec<f64>> = (0..20).map(|r| x.row(r).to_vec()).collect();
    rows[10][2] += 1.0;
    let y2 = run_block(&store, &blk, &Tensor::from_rows(&rows).unwrap());
    for s in 0..10 {
        assert_eq!(y.row(s), y2.row(s));
    }
}

#[test]
fn block_gradients_match_finite_differences() {
    let (store, blk) = block(3, 2, 5);
    let x = random_tensor(&mut seeded(6), &[6, 3], -1.0, 1.0);
    let params: Vec<Tensor> = store.iter().map(|(_, t)| t.clone()).collect();
    let mut inputs = params.clone();
    inputs.push(x);
    let worst = gradcheck(&inputs, |tape, v| {
        let p = Bound::from_vars(v[..params.len()].to_vec());
        let y = blk.forward(tape, &p, v[params.len()])?;
        let y2 = tape.square(y);
        Ok(tape.sum(y2))
    });
    assert!(worst < 1e-5, "rel err {worst}");
}
