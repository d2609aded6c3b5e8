//! Analytic gradients against central finite differences.

use dimnmt_tensor::{Axis, Graph, Result, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Relative error between two gradient vectors, `‖a − n‖ / (‖a‖ + ‖n‖)`.
fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + n.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Builds `f` on a fresh graph and returns the max relative error over inputs.
fn check<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> f64 {
        let mut g = Graph::inference();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.variable(x.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    let grads = g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; x.numel()]);
        let mut numeric = vec![0.0; x.numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += EPS;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= EPS;
            *slot = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Contracts any matrix to a scalar with fixed non-uniform weights so
/// every output entry influences the loss differently.
fn weighted_sum(g: &mut Graph, x: Var) -> Result<Var> {
    let (r, c) = (g.value(x).rows(), g.value(x).cols());
    let w = Tensor::matrix(r, c, (0..r * c).map(|i| ((i * 7 % 11) as f64 - 4.5) / 3.0).collect()).unwrap();
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    g.sum(p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_grad(seed in any::<u64>(), m in 1usize..4, k in 1usize..5, n in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, m, k, -1.0, 1.0);
        let b = rand_tensor(&mut rng, k, n, -1.0, 1.0);
        let e = check(&[a, b], |g, v| { let c = g.matmul(v[0], v[1])?; weighted_sum(g, c) });
        prop_assert!(e < TOL, "rel err {e}");
    }

    #[test]
    fn matmul_bt_grad(seed in any::<u64>(), m in 1usize..4, k in 1usize..5, n in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, m, k, -1.0, 1.0);
        let b = rand_tensor(&mut rng, n, k, -1.0, 1.0);
        let e = check(&[a, b], |g, v| { let c = g.matmul_bt(v[0], v[1])?; weighted_sum(g, c) });
        prop_assert!(e < TOL, "rel err {e}");
    }

    #[test]
    fn binary_broadcast_grads(seed in any::<u64>(), r in 1usize..4, c in 1usize..5, which in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, r, c, -1.0, 1.0);
        let full = rand_tensor(&mut rng, r, c, -1.0, 1.0);
        let row = rand_tensor(&mut rng, 1, c, -1.0, 1.0);
        let scalar = rand_tensor(&mut rng, 1, 1, -1.0, 1.0);
        for b in [full, row, scalar] {
            let e = check(&[a.clone(), b], |g, v| {
                let y = match which {
                    0 => g.add(v[0], v[1])?,
                    1 => g.sub(v[0], v[1])?,
                    _ => g.mul(v[0], v[1])?,
                };
                weighted_sum(g, y)
            });
            prop_assert!(e < TOL, "rel err {e}");
        }
    }

    #[test]
    fn unary_grads(seed in any::<u64>(), r in 1usize..4, c in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, r, c, -2.0, 2.0);
        let pos = rand_tensor(&mut rng, r, c, 0.2, 3.0);
        for op in 0..5 {
            let input = if op == 3 { pos.clone() } else { x.clone() };
            let e = check(&[input], |g, v| {
                let y = match op {
                    0 => g.sigmoid(v[0])?,
                    1 => g.tanh(v[0])?,
                    2 => g.exp(v[0])?,
                    3 => g.log(v[0])?,
                    _ => { let s = g.scale(v[0], -1.7)?; g.add_scalar(s, 0.3)? }
                };
                weighted_sum(g, y)
            });
            prop_assert!(e < TOL, "op {op} rel err {e}");
        }
    }

    #[test]
    fn softmax_grads(seed in any::<u64>(), r in 1usize..4, c in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, r, c, -3.0, 3.0);
        for axis in [Axis::Rows, Axis::Cols] {
            let e = check(std::slice::from_ref(&x), |g, v| { let y = g.softmax(v[0], axis)?; weighted_sum(g, y) });
            prop_assert!(e < TOL, "softmax rel err {e}");
            let e = check(std::slice::from_ref(&x), |g, v| { let y = g.log_softmax(v[0], axis)?; weighted_sum(g, y) });
            prop_assert!(e < TOL, "log_softmax rel err {e}");
        }
        let mask: Vec<bool> = (0..r).map(|i| i == 0 || rng.gen_bool(0.5)).collect();
        let e = check(&[x], |g, v| { let y = g.softmax_masked(v[0], Axis::Rows, Some(&mask))?; weighted_sum(g, y) });
        prop_assert!(e < TOL, "masked rel err {e}");
    }

    #[test]
    fn softmax_normalizes(seed in any::<u64>(), r in 1usize..6, c in 1usize..6, scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, r, c, -scale, scale);
        let mut g = Graph::inference();
        let v = g.constant(x);
        let s = g.softmax(v, Axis::Cols).unwrap();
        for row in 0..r {
            let total: f64 = g.value(s).row_slice(row).iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(g.value(s).row_slice(row).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn structural_grads(seed in any::<u64>(), r in 2usize..5, c in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, r, c, -1.0, 1.0);
        let b = rand_tensor(&mut rng, r, c + 1, -1.0, 1.0);
        let e = check(&[a.clone(), b.clone()], |g, v| {
            let cat = g.concat_cols(&[v[0], v[1], v[0]])?;
            let s = g.slice_cols(cat, 1, c)?;
            let rr = g.reverse_rows(s)?;
            let top = g.slice_rows(rr, 1, r - 1)?;
            let stacked = g.concat_rows(&[top, rr])?;
            let t = g.tanh(stacked)?;
            weighted_sum(g, t)
        });
        prop_assert!(e < TOL, "rel err {e}");
        let e = check(&[a], |g, v| {
            let rows = g.gather_rows(v[0], &[1, 0, 1, r - 1])?;
            let sq = g.mul(rows, rows)?;
            let m = g.mean(sq)?;
            let s = g.sum(rows)?;
            g.add(m, s)
        });
        prop_assert!(e < TOL, "gather rel err {e}");
    }

    #[test]
    fn head_op_grads(seed in any::<u64>(), n in 1usize..5, heads in 1usize..4, dh in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = heads * dh;
        let t = rand_tensor(&mut rng, n, d, -1.0, 1.0);
        let v = rand_tensor(&mut rng, heads, dh, -1.0, 1.0);
        let e = check(&[t.clone(), v], |g, x| { let s = g.head_scores(x[0], x[1])?; weighted_sum(g, s) });
        prop_assert!(e < TOL, "scores rel err {e}");
        let w = rand_tensor(&mut rng, n, heads, 0.0, 1.0);
        let e = check(&[w, t], |g, x| { let c = g.head_read(x[0], x[1])?; weighted_sum(g, c) });
        prop_assert!(e < TOL, "read rel err {e}");
    }
}

#[test]
fn composed_graph_is_tight_at_f64() {
    // tanh(x W + b) followed by softmax cross-entropy style reduction.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, 3, 4, -1.0, 1.0);
    let w = rand_tensor(&mut rng, 4, 5, -0.5, 0.5);
    let b = rand_tensor(&mut rng, 1, 5, -0.5, 0.5);
    let e = check(&[x, w, b], |g, v| {
        let h = g.matmul(v[0], v[1])?;
        let h = g.add(h, v[2])?;
        let h = g.tanh(h)?;
        let ls = g.log_softmax(h, Axis::Cols)?;
        let picked = g.slice_cols(ls, 2, 1)?;
        let s = g.sum(picked)?;
        g.scale(s, -1.0)
    });
    assert!(e < 1e-6, "rel err {e}");
}

proptest! {
    #[test]
    fn clip_never_increases_norm(seed in any::<u64>(), n in 1usize..5, max_norm in 0.01f64..20.0, spread in 0.0f64..30.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grads: Vec<Tensor> = (0..n).map(|_| rand_tensor(&mut rng, 2, 3, -spread - 1e-3, spread + 1e-3)).collect();
        let before = grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt();
        let scale = dimnmt_tensor::clip_global_norm(grads.iter_mut(), max_norm);
        let after = grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt();
        prop_assert!(after <= before + 1e-12);
        prop_assert!(after <= max_norm + 1e-9);
        prop_assert!(scale <= 1.0);
    }
}
