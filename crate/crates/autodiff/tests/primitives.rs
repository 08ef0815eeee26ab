use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textgsl_autodiff::{
    finite_diff_check, ParamId, ParamStore, Tape, Tensor, TensorError, Var,
};

const TOL: f64 = 1e-5;
const EPS: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Contracts `out` against fixed random weights so every output element
/// contributes a distinct amount to the scalar loss.
fn contract(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, tape.shape(out));
    let w = tape.constant(w);
    let p = tape.mul(out, w).unwrap();
    tape.sum(p)
}

fn check(
    inputs: &[&[usize]],
    op: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs
        .iter()
        .enumerate()
        .map(|(k, s)| store.add(format!("in{k}"), random(&mut rng, s)).unwrap())
        .collect();
    let report = finite_diff_check(&mut store, &ids, EPS, 25, 3, |s, tape| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
        let out = op(tape, &vars);
        Ok(contract(tape, out, 99))
    })
    .unwrap();
    report.max_rel_error
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let cases: Vec<(&str, f64)> = vec![
        ("matmul", check(&[&[3, 4], &[4, 2]], |t, v| t.matmul(v[0], v[1]).unwrap())),
        ("transpose", check(&[&[3, 4]], |t, v| t.transpose(v[0]).unwrap())),
        ("add", check(&[&[3, 4], &[3, 4]], |t, v| t.add(v[0], v[1]).unwrap())),
        ("add_row_bcast", check(&[&[3, 4], &[4]], |t, v| t.add(v[0], v[1]).unwrap())),
        ("add_col_bcast", check(&[&[3, 4], &[3, 1]], |t, v| t.add(v[0], v[1]).unwrap())),
        ("mul", check(&[&[3, 4], &[3, 4]], |t, v| t.mul(v[0], v[1]).unwrap())),
        ("mul_col_bcast", check(&[&[3, 4], &[3, 1]], |t, v| t.mul(v[0], v[1]).unwrap())),
        ("sub", check(&[&[2, 5], &[2, 5]], |t, v| t.sub(v[0], v[1]).unwrap())),
        ("scale", check(&[&[3, 4], &[1]], |t, v| t.scale(v[0], v[1]).unwrap())),
        ("concat", check(&[&[3, 2], &[3, 4]], |t, v| t.concat(&[v[0], v[1]]).unwrap())),
        ("concat_rows", check(&[&[2, 3], &[1, 3]], |t, v| t.concat_rows(&[v[0], v[1]]).unwrap())),
        ("slice_cols", check(&[&[3, 6]], |t, v| t.slice_cols(v[0], 2, 5).unwrap())),
        ("exp", check(&[&[3, 4]], |t, v| t.exp(v[0]))),
        ("sigmoid", check(&[&[3, 4]], |t, v| t.sigmoid(v[0]))),
        ("tanh", check(&[&[3, 4]], |t, v| t.tanh(v[0]))),
        ("relu", check(&[&[3, 4]], |t, v| t.relu(v[0]))),
        ("ln", check(&[&[3, 4]], |t, v| {
            let e = t.exp(v[0]);
            t.ln_clamped(e, 1e-12)
        })),
        ("row_softmax", check(&[&[3, 5]], |t, v| t.row_softmax(v[0]))),
        ("layer_norm", check(&[&[3, 6], &[6], &[6]], |t, v| {
            t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()
        })),
        ("mean_rows", check(&[&[4, 3]], |t, v| t.mean_rows(v[0]).unwrap())),
        ("max_rows", check(&[&[4, 3]], |t, v| t.max_rows(v[0]).unwrap())),
        ("sum", check(&[&[4, 3]], |t, v| t.sum(v[0]))),
        ("gather_rows", check(&[&[4, 3]], |t, v| t.gather_rows(v[0], &[2, 0, 2, 3]).unwrap())),
        ("scatter_add_rows", check(&[&[4, 3]], |t, v| {
            t.scatter_add_rows(v[0], &[1, 1, 0, 2], 3).unwrap()
        })),
        ("row_sq_dist", check(&[&[4, 3]], |t, v| {
            t.row_sq_dist(v[0], &[(0, 1), (1, 0), (2, 3), (3, 3)]).unwrap()
        })),
    ];
    for (name, err) in cases {
        assert!(err < TOL, "{name}: max relative error {err:e}");
    }
}

#[test]
fn dropout_gradient_matches_with_fixed_mask() {
    let err = check(&[&[4, 5]], |t, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        t.dropout(v[0], 0.3, true, &mut rng).unwrap()
    });
    assert!(err < TOL, "{err:e}");
}

#[test]
fn analytic_values() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
    let s = t.row_softmax(x);
    assert_eq!(t.value(s).data(), &[0.5, 0.5]);
    let z = t.constant(Tensor::scalar(0.0));
    let sg = t.sigmoid(z);
    let th = t.tanh(z);
    assert_eq!(t.value(sg).item(), 0.5);
    assert_eq!(t.value(th).item(), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[4, 4]);
    let av = t.constant(a.clone());
    let i = t.constant(Tensor::identity(4));
    let p = t.matmul(av, i).unwrap();
    assert_eq!(t.value(p), &Tensor::matrix(4, 4, a.data().to_vec()).unwrap());
}

#[test]
fn backward_examples_and_accumulation() {
    let mut store = ParamStore::<f64>::new();
    let mut t = Tape::new();
    let x = t.leaf(Tensor::new(vec![3], vec![0.3, -1.0, 2.0]).unwrap());
    let l = t.sum(x);
    t.backward(l, &mut store).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

    let id = store.add("x", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
    let mut t = Tape::new();
    let x = t.param(&store, id);
    let sq = t.mul(x, x).unwrap();
    let l = t.sum(sq);
    t.backward(l, &mut store).unwrap();
    assert_eq!(store.grad(id).data(), &[2.0, 4.0]);
    // No reset: gradients double.
    t.backward(l, &mut store).unwrap();
    assert_eq!(store.grad(id).data(), &[4.0, 8.0]);
    store.zero_grads();
    assert_eq!(store.grad(id).data(), &[0.0, 0.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut store = ParamStore::<f64>::new();
    let mut t = Tape::new();
    let x = t.leaf(Tensor::zeros(&[2]));
    assert_eq!(
        t.backward(x, &mut store),
        Err(TensorError::NonScalarLoss(vec![2]))
    );
}

#[test]
fn shape_errors_name_the_operator() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 3]));
    let err = t.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::ShapeMismatch {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    let c = t.constant(Tensor::zeros(&[4, 2]));
    assert!(err.to_string().contains("matmul"));
    assert!(matches!(t.add(a, c), Err(TensorError::ShapeMismatch { op: "add", .. })));
    assert!(t.gather_rows(a, &[2]).is_err());
}

#[test]
fn max_rows_ties_go_to_first_index() {
    let mut store = ParamStore::<f64>::new();
    let mut t = Tape::new();
    let x = t.leaf(Tensor::matrix(3, 1, vec![1.0, 1.0, 0.0]).unwrap());
    let m = t.max_rows(x).unwrap();
    let l = t.sum(m);
    t.backward(l, &mut store).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn dropout_eval_is_identity_and_train_is_unbiased() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::filled(&[1, 4], 2.0));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(t.dropout(x, 0.5, false, &mut rng).unwrap(), x);

    let masks = 20_000;
    let mut total = 0.0;
    for _ in 0..masks {
        let d = t.dropout(x, 0.65, true, &mut rng).unwrap();
        total += t.value(d).sum();
    }
    let mean = total / (masks as f64 * 4.0);
    assert!((mean - 2.0).abs() / 2.0 < 0.01, "mean {mean}");
}

#[test]
fn dropout_rate_is_validated() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::zeros(&[2]));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(t.dropout(x, 1.0, true, &mut rng).is_err());
}

#[test]
fn gradient_check_on_quadratic_is_exact() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let id = store.add("w", random(&mut rng, &[6, 6])).unwrap();
    for eps in [1e-4, 1e-5] {
        let r = finite_diff_check(&mut store, &[id], eps, 25, 0, |s, t| {
            let w = t.param(s, id);
            let sq = t.mul(w, w).unwrap();
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "eps {eps}: {:e}", r.max_rel_error);
        assert_eq!(r.params[0].coordinates, 25);
    }
}

fn sigmoid_chain(s: &ParamStore<f64>, t: &mut Tape<f64>, id: ParamId, corrupt: bool) -> Var {
    let mut x = t.param(s, id);
    for _ in 0..5 {
        x = if corrupt {
            // Backward rule deliberately missing the (1 - y) factor.
            t.custom_unary(
                x,
                |v| 1.0 / (1.0 + (-v).exp()),
                |_, y, g| {
                    let d = g.data().iter().zip(y.data()).map(|(&g, &y)| g * y).collect();
                    Tensor::new(y.shape().to_vec(), d).unwrap()
                },
            )
        } else {
            t.sigmoid(x)
        };
    }
    t.sum(x)
}

#[test]
fn sigmoid_chain_passes_and_corrupted_rule_is_caught() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let id = store.add("x", random(&mut rng, &[5, 5])).unwrap();
    let good = finite_diff_check(&mut store, &[id], 1e-5, 25, 1, |s, t| {
        Ok(sigmoid_chain(s, t, id, false))
    })
    .unwrap();
    assert!(good.max_rel_error < 1e-6, "{:e}", good.max_rel_error);
    let bad = finite_diff_check(&mut store, &[id], 1e-5, 25, 1, |s, t| {
        Ok(sigmoid_chain(s, t, id, true))
    })
    .unwrap();
    assert!(bad.max_rel_error > 1e-2, "{:e}", bad.max_rel_error);
}

#[test]
fn gradients_are_bit_identical_across_runs() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", random(&mut rng, &[5, 4])).unwrap();
        let b = store.add("b", random(&mut rng, &[4, 3])).unwrap();
        let mut t = Tape::new();
        let (av, bv) = (t.param(&store, a), t.param(&store, b));
        let m = t.matmul(av, bv).unwrap();
        let d = t.dropout(m, 0.5, true, &mut rng).unwrap();
        let s = t.row_softmax(d);
        let l = t.sum(s);
        let l2 = t.mul(l, l).unwrap();
        t.backward(l2, &mut store).unwrap();
        (store.grad(a).clone(), store.grad(b).clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn f32_gradients_pass_relaxed_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f32>::new();
    let id = store.add("x", random(&mut rng, &[3, 4]).cast()).unwrap();
    let r = finite_diff_check(&mut store, &[id], 1e-2, 25, 0, |s, t| {
        let x = t.param(s, id);
        let y = t.tanh(x);
        let z = t.row_softmax(y);
        let w = t.mul(z, x).unwrap();
        Ok(t.sum(w))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-3, "{:e}", r.max_rel_error);
}

proptest! {
    #[test]
    fn softmax_rows_are_positive_and_sum_to_one(
        rows in 1usize..5,
        vals in prop::collection::vec(-30.0f64..30.0, 1..40),
    ) {
        let cols = vals.len();
        let data: Vec<f64> = (0..rows).flat_map(|r| vals.iter().map(move |v| v * (r as f64 + 1.0))).collect();
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::matrix(rows, cols, data).unwrap());
        let s = t.row_softmax(x);
        for r in 0..rows {
            let row = t.value(s).row(r);
            prop_assert!(row.iter().all(|&v| v > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
