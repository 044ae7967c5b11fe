//! Gradient checks against central finite differences.
//!
//! Entries with |analytic gradient| < 1e-8 are compared absolutely; the rest
//! relatively at 1e-4.

use m2ac_nn::{Activation, DenseArray, Mlp, Tape};
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-8;

/// Scalar loss of an MLP's parameters, for reuse in both taped and
/// finite-difference evaluations.
fn mse_loss(mlp: &Mlp, x: &DenseArray, y: &DenseArray) -> f64 {
    let out = mlp.forward(x).unwrap();
    let n = out.len() as f64;
    out.data()
        .iter()
        .zip(y.data())
        .map(|(o, t)| (o - t) * (o - t))
        .sum::<f64>()
        / n
}

fn taped_mse_grads(mlp: &Mlp, x: &DenseArray, y: &DenseArray) -> Vec<DenseArray> {
    let mut tape = Tape::new();
    let vars = mlp.vars(&mut tape);
    let xv = tape.leaf(x.clone());
    let yv = tape.leaf(y.clone());
    let out = mlp.forward_tape(&mut tape, &vars, xv).unwrap();
    let diff = tape.sub(out, yv).unwrap();
    let sq = tape.square(diff).unwrap();
    let loss = tape.mean_all(sq).unwrap();
    let mut grads = tape.backward(loss).unwrap();
    let mut out = Vec::new();
    for (w, b) in vars.weights.iter().zip(vars.biases.iter()) {
        out.push(grads.take_or_zeros(*w, tape.value(*w).shape()));
        out.push(grads.take_or_zeros(*b, tape.value(*b).shape()));
    }
    out
}

fn check_grads_vs_fd<F: Fn(&Mlp) -> f64>(mlp: &mut Mlp, analytic: &[DenseArray], loss: F) {
    for p_idx in 0..analytic.len() {
        for i in 0..analytic[p_idx].len() {
            let orig = mlp.params()[p_idx].data()[i];
            mlp.params_mut()[p_idx].data_mut()[i] = orig + FD_STEP;
            let plus = loss(mlp);
            mlp.params_mut()[p_idx].data_mut()[i] = orig - FD_STEP;
            let minus = loss(mlp);
            mlp.params_mut()[p_idx].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[p_idx].data()[i];
            if a.abs() < ABS_FLOOR {
                assert!(
                    (a - numeric).abs() < 1e-6,
                    "param {p_idx}[{i}]: analytic {a} vs numeric {numeric}"
                );
            } else {
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
                assert!(
                    rel < REL_TOL,
                    "param {p_idx}[{i}]: analytic {a} vs numeric {numeric} (rel {rel})"
                );
            }
        }
    }
}

#[test]
fn mse_gradients_match_finite_differences_across_architectures() {
    let cases: &[(&[usize], Activation)] = &[
        (&[2, 8, 1], Activation::Tanh),
        (&[3, 6, 6, 2], Activation::Relu),
        (&[4, 10, 3], Activation::Swish),
        (&[1, 5, 5, 5, 1], Activation::Tanh),
        (&[6, 4, 4], Activation::Swish),
    ];
    let mut rng = Pcg64::seed_from_u64(99);
    for (arch, act) in cases {
        let mut mlp = Mlp::new(arch, *act, &mut rng).unwrap();
        let n = 4;
        let x = DenseArray::new(
            vec![n, arch[0]],
            (0..n * arch[0]).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        )
        .unwrap();
        let y = DenseArray::new(
            vec![n, *arch.last().unwrap()],
            (0..n * arch.last().unwrap())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let analytic = taped_mse_grads(&mlp, &x, &y);
        check_grads_vs_fd(&mut mlp, &analytic, |m| mse_loss(m, &x, &y));
    }
}

#[test]
fn linear_in_params_loss_has_unit_gradient() {
    // loss = sum over params of p (via a forward on an input of ones with a
    // single linear layer and sum reduction)
    let mut tape = Tape::new();
    let w = tape.leaf(DenseArray::new(vec![3, 2], vec![0.0; 6]).unwrap());
    let x = tape.leaf(DenseArray::new(vec![1, 3], vec![1.0, 1.0, 1.0]).unwrap());
    let out = tape.matmul(x, w).unwrap();
    let loss = tape.sum_all(out).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(w).unwrap().data().iter().all(|&g| g == 1.0));
}
