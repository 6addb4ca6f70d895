use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>;

/// Central differences of the scalar produced by `build`, one input at a time.
fn numeric_grads(inputs: &[Tensor], build: &Build, step: f64) -> Vec<Vec<f64>> {
    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.scalar(out)
    };
    let mut result = Vec::new();
    for i in 0..inputs.len() {
        let mut gi = Vec::new();
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += step;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= step;
            gi.push((eval(&plus) - eval(&minus)) / (2.0 * step));
        }
        result.push(gi);
    }
    result
}

fn analytic_grads(inputs: &[Tensor], build: &Build) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(out).unwrap();
    vars.iter()
        .zip(inputs)
        .map(|(v, x)| {
            grads
                .wrt(*v)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; x.len()])
        })
        .collect()
}

fn close(a: f64, n: f64, rel: f64, floor: f64) -> bool {
    let diff = (a - n).abs();
    diff <= floor || diff / a.abs().max(n.abs()) < rel
}

fn assert_grads_match(inputs: &[Tensor], build: &Build, rel: f64) {
    let a = analytic_grads(inputs, build);
    let n = numeric_grads(inputs, build, 1e-5);
    for (i, (ai, ni)) in a.iter().zip(&n).enumerate() {
        for (j, (x, y)) in ai.iter().zip(ni).enumerate() {
            assert!(close(*x, *y, rel, 1e-6), "input {i}[{j}]: analytic {x} vs numeric {y}");
        }
    }
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Weighted sum so every output element reaches the loss with a distinct weight.
fn weighted(tape: &mut Tape, v: Var) -> Result<Var, AutodiffError> {
    let t = tape.value(v).clone();
    let w = Tensor::from_fn(t.rows(), t.cols(), |r, c| 0.3 + 0.17 * (r * t.cols() + c) as f64);
    let w = tape.constant(w);
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::row(&[0.0, 0.0, 0.0]));
    let y = tape.softmax(x, 1).unwrap();
    for v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn square_derivative() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let y = tape.square(x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.wrt(x).unwrap().item(), 6.0);
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, 3, 4, -1.0, 1.0);
    let b = random(&mut rng, 4, 2, -1.0, 1.0);
    let build: &Build = &|t, v| {
        let m = t.matmul(v[0], v[1])?;
        weighted(t, m)
    };
    assert_grads_match(&[a, b], build, 1e-4);
}

#[test]
fn sum_gives_ones_and_zero_scale_gives_zeros() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::from_fn(2, 3, |r, c| (r + c) as f64));
    let s = tape.sum(p).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.wrt(p).unwrap().data().iter().all(|&x| x == 1.0));

    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::from_fn(2, 3, |r, c| (r * c) as f64 - 1.0));
    let z = tape.scale(p, 0.0).unwrap();
    let s = tape.sum(z).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.wrt(p).unwrap().data().iter().all(|&x| x == 0.0));
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::row(&[1.0, 2.0]));
    let q = tape.square(p).unwrap();
    assert!(matches!(tape.backward(q), Err(AutodiffError::NonScalarLoss([1, 2]))));
}

#[test]
fn shape_mismatch_and_non_finite_are_errors() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(2, 3));
    let b = tape.constant(Tensor::zeros(3, 2));
    assert!(matches!(tape.add(a, b), Err(AutodiffError::Shape(_))));
    assert!(matches!(tape.matmul(a, a), Err(AutodiffError::Shape(_))));
    assert!(matches!(tape.log(a), Err(AutodiffError::NonFinite(_))));
    let one = tape.constant(Tensor::filled(2, 3, 1.0));
    assert!(matches!(tape.div(one, a), Err(AutodiffError::NonFinite(_))));
}

#[test]
fn repeated_backward_accumulates_into_params() {
    let mut params = ParamSet::new();
    let id = params.add("w", Tensor::row(&[1.0, -2.0]));
    for _ in 0..2 {
        let mut tape = Tape::new();
        let w = tape.param(&params, id);
        let s = tape.sum(w).unwrap();
        tape.backward(s).unwrap().accumulate_into(&mut params).unwrap();
    }
    assert_eq!(params.grad(id).data(), &[2.0, 2.0]);
    params.zero_grad();
    assert_eq!(params.grad(id).data(), &[0.0, 0.0]);
}

#[test]
fn shared_subexpression_matches_duplicated_subgraph() {
    // f(x) = g(x) * g(x) + g(x) with g(x) = tanh(x W), built once and reused
    // versus rebuilt three times.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, 2, 3, -1.0, 1.0);
    let w = random(&mut rng, 3, 3, -1.0, 1.0);
    let shared: &Build = &|t, v| {
        let h = t.matmul(v[0], v[1])?;
        let g = t.tanh(h)?;
        let gg = t.mul(g, g)?;
        let s = t.add(gg, g)?;
        t.sum(s)
    };
    let duplicated: &Build = &|t, v| {
        let mut g = Vec::new();
        for _ in 0..3 {
            let h = t.matmul(v[0], v[1])?;
            g.push(t.tanh(h)?);
        }
        let gg = t.mul(g[0], g[1])?;
        let s = t.add(gg, g[2])?;
        t.sum(s)
    };
    let a = analytic_grads(&[x.clone(), w.clone()], shared);
    let b = analytic_grads(&[x, w], duplicated);
    for (ga, gb) in a.iter().flatten().zip(b.iter().flatten()) {
        assert!((ga - gb).abs() < 1e-12, "{ga} vs {gb}");
    }
}

#[test]
fn three_layer_network_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inputs = vec![
        random(&mut rng, 4, 3, -1.0, 1.0),
        random(&mut rng, 3, 5, -0.8, 0.8),
        random(&mut rng, 1, 5, -0.2, 0.2),
        random(&mut rng, 5, 4, -0.8, 0.8),
        random(&mut rng, 4, 2, -0.8, 0.8),
    ];
    let build: &Build = &|t, v| {
        let h1 = t.matmul(v[0], v[1])?;
        let h1 = t.add(h1, v[2])?;
        let h1 = t.tanh(h1)?;
        let h2 = t.matmul(h1, v[3])?;
        let h2 = t.sigmoid(h2)?;
        let o = t.matmul(h2, v[4])?;
        let o = t.softplus(o)?;
        let sq = t.square(o)?;
        t.mean(sq)
    };
    assert_grads_match(&inputs, build, 1e-3);
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut params = ParamSet::new();
    let id = params.add("w", Tensor::row(&[0.5, -1.5]));
    let mut state = AdamState::new(&params);
    adam_step(&mut params, &mut state, &AdamConfig::default()).unwrap();
    assert_eq!(params.value(id).data(), &[0.5, -1.5]);
}

#[test]
fn adam_first_step_has_magnitude_lr() {
    for g in [1e-4, 0.3, 250.0] {
        let mut params = ParamSet::new();
        let id = params.add("w", Tensor::row(&[1.0, 1.0]));
        params.accumulate_grad(0, &Tensor::row(&[g, -g])).unwrap();
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        adam_step(&mut params, &mut state, &cfg).unwrap();
        // m_hat = g, v_hat = g^2 => step = lr * g / (|g| + eps)
        let expected = 0.01 * g / (g + 1e-8);
        let v = params.value(id).data();
        assert!((1.0 - v[0] - expected).abs() < 1e-15);
        assert!((v[1] - 1.0 - expected).abs() < 1e-15);
    }
}

#[test]
fn adam_constant_gradient_moves_against_sign() {
    let mut params = ParamSet::new();
    let id = params.add("w", Tensor::row(&[0.0, 0.0]));
    let mut state = AdamState::new(&params);
    for _ in 0..50 {
        params.zero_grad();
        params.accumulate_grad(0, &Tensor::row(&[2.0, -0.5])).unwrap();
        adam_step(&mut params, &mut state, &AdamConfig::default()).unwrap();
    }
    let v = params.value(id).data();
    assert!(v[0] < 0.0 && v[1] > 0.0);
    assert_eq!(state.steps(), 50);
}

#[test]
fn clip_grad_norm_bounds_norm() {
    let mut params = ParamSet::new();
    params.add("a", Tensor::row(&[0.0, 0.0]));
    params.accumulate_grad(0, &Tensor::row(&[30.0, 40.0])).unwrap();
    assert_eq!(params.clip_grad_norm(5.0), 50.0);
    assert!((params.grad_norm() - 5.0).abs() < 1e-12);
}

#[derive(Debug, Clone, Copy)]
enum Prim {
    Add,
    Sub,
    Mul,
    Div,
    AddRowBroadcast,
    MulColBroadcast,
    MatMul,
    Transpose,
    ConcatRows,
    ConcatCols,
    SliceRows,
    SliceCols,
    Sum,
    SumAxis0,
    MeanAxis1,
    Mean,
    Relu,
    Abs,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Softplus,
    Square,
    Sqrt,
    Sin,
    Neg,
    Scale,
    AddScalar,
    SoftmaxRows,
    SoftmaxCols,
}

const PRIMS: [Prim; 31] = [
    Prim::Add,
    Prim::Sub,
    Prim::Mul,
    Prim::Div,
    Prim::AddRowBroadcast,
    Prim::MulColBroadcast,
    Prim::MatMul,
    Prim::Transpose,
    Prim::ConcatRows,
    Prim::ConcatCols,
    Prim::SliceRows,
    Prim::SliceCols,
    Prim::Sum,
    Prim::SumAxis0,
    Prim::MeanAxis1,
    Prim::Mean,
    Prim::Relu,
    Prim::Abs,
    Prim::Exp,
    Prim::Log,
    Prim::Sigmoid,
    Prim::Tanh,
    Prim::Softplus,
    Prim::Square,
    Prim::Sqrt,
    Prim::Sin,
    Prim::Neg,
    Prim::Scale,
    Prim::AddScalar,
    Prim::SoftmaxRows,
    Prim::SoftmaxCols,
];

fn prim_case(prim: Prim, seed: u64) -> (Vec<Tensor>, Box<Build>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Keep kinks of relu/abs away from the finite-difference stencil and
    // log/sqrt/div on positive inputs.
    let mut away = |r: usize, c: usize| {
        Tensor::from_fn(r, c, |_, _| {
            let m: f64 = rng.random_range(0.1..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
    };
    let a = away(3, 4);
    let b = away(3, 4);
    let pos = Tensor::from_fn(3, 4, |r, c| 0.5 + a.get(r, c).abs());
    let wrap = |f: fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>| -> Box<Build> {
        Box::new(move |t: &mut Tape, v: &[Var]| {
            let o = f(t, v)?;
            weighted(t, o)
        })
    };
    match prim {
        Prim::Add => (vec![a, b], wrap(|t, v| t.add(v[0], v[1]))),
        Prim::Sub => (vec![a, b], wrap(|t, v| t.sub(v[0], v[1]))),
        Prim::Mul => (vec![a, b], wrap(|t, v| t.mul(v[0], v[1]))),
        Prim::Div => (vec![a, pos], wrap(|t, v| t.div(v[0], v[1]))),
        Prim::AddRowBroadcast => (vec![a, away(1, 4)], wrap(|t, v| t.add(v[0], v[1]))),
        Prim::MulColBroadcast => (vec![away(3, 1), b], wrap(|t, v| t.mul(v[0], v[1]))),
        Prim::MatMul => (vec![a, away(4, 2)], wrap(|t, v| t.matmul(v[0], v[1]))),
        Prim::Transpose => (vec![a], wrap(|t, v| t.transpose(v[0]))),
        Prim::ConcatRows => (vec![a, away(2, 4)], wrap(|t, v| t.concat(&[v[0], v[1], v[0]], 0))),
        Prim::ConcatCols => (vec![a, away(3, 1)], wrap(|t, v| t.concat(&[v[1], v[0]], 1))),
        Prim::SliceRows => (vec![a], wrap(|t, v| t.slice(v[0], 0, 1, 2))),
        Prim::SliceCols => (vec![a], wrap(|t, v| t.slice(v[0], 1, 2, 2))),
        Prim::Sum => (vec![a], wrap(|t, v| t.sum(v[0]))),
        Prim::SumAxis0 => (vec![a], wrap(|t, v| t.sum_axis(v[0], 0))),
        Prim::MeanAxis1 => (vec![a], wrap(|t, v| t.mean_axis(v[0], 1))),
        Prim::Mean => (vec![a], wrap(|t, v| t.mean(v[0]))),
        Prim::Relu => (vec![a], wrap(|t, v| t.max_with_zero(v[0]))),
        Prim::Abs => (vec![a], wrap(|t, v| t.abs(v[0]))),
        Prim::Exp => (vec![a], wrap(|t, v| t.exp(v[0]))),
        Prim::Log => (vec![pos], wrap(|t, v| t.log(v[0]))),
        Prim::Sigmoid => (vec![a], wrap(|t, v| t.sigmoid(v[0]))),
        Prim::Tanh => (vec![a], wrap(|t, v| t.tanh(v[0]))),
        Prim::Softplus => (vec![a], wrap(|t, v| t.softplus(v[0]))),
        Prim::Square => (vec![a], wrap(|t, v| t.square(v[0]))),
        Prim::Sqrt => (vec![pos], wrap(|t, v| t.sqrt(v[0]))),
        Prim::Sin => (vec![a], wrap(|t, v| t.sin(v[0]))),
        Prim::Neg => (vec![a], wrap(|t, v| t.neg(v[0]))),
        Prim::Scale => (vec![a], wrap(|t, v| t.scale(v[0], -1.7))),
        Prim::AddScalar => (vec![a], wrap(|t, v| t.add_scalar(v[0], 0.4))),
        Prim::SoftmaxRows => (vec![a], wrap(|t, v| t.softmax(v[0], 1))),
        Prim::SoftmaxCols => (vec![a], wrap(|t, v| t.softmax(v[0], 0))),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_primitive_matches_finite_differences(seed in any::<u64>()) {
        for prim in PRIMS {
            let (inputs, build) = prim_case(prim, seed);
            let a = analytic_grads(&inputs, &*build);
            let n = numeric_grads(&inputs, &*build, 1e-5);
            for (x, y) in a.iter().flatten().zip(n.iter().flatten()) {
                prop_assert!(close(*x, *y, 1e-3, 1e-6), "{prim:?}: analytic {x} vs numeric {y}");
            }
        }
    }

    #[test]
    fn softmax_rows_are_distributions(
        vals in proptest::collection::vec(-30.0f64..30.0, 12),
        axis in 0usize..2,
    ) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(3, 4, vals).unwrap());
        let y = tape.softmax(x, axis).unwrap();
        let t = tape.value(y);
        prop_assert!(t.data().iter().all(|&p| p >= 0.0));
        let groups: Vec<f64> = if axis == 1 {
            (0..3).map(|r| t.row_slice(r).iter().sum()).collect()
        } else {
            (0..4).map(|c| (0..3).map(|r| t.get(r, c)).sum()).collect()
        };
        for s in groups {
            prop_assert!((s - 1.0).abs() <= 1e-9);
        }
    }
}
