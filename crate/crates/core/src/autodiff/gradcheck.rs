//! Central finite-difference checks for tape operators (f64 only).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, TensorError, Var};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn scalar_of<F>(inputs: &[Tensor<f64>], weights: Option<&Tensor<f64>>, f: &F) -> f64
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>, TensorError>,
{
    let tape = Tape::inference();
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars).expect("forward");
    match weights {
        Some(w) => out.value().data().iter().zip(w.data()).map(|(a, b)| a * b).sum(),
        None => out.value().data()[0],
    }
}

/// Compares analytic and numeric gradients of `sum(f(inputs) * r)` for a
/// fixed random `r`, for every element of every input.
pub fn check<F>(inputs: &[Tensor<f64>], f: F)
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>, TensorError>,
{
    let tape = Tape::new(true);
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars).expect("forward");
    let weights = (out.value().len() > 1).then(|| random_tensor(out.shape(), 991));
    let root = match &weights {
        Some(w) => tape.dot(&out, w).unwrap(),
        None => out,
    };
    let grads = tape.backward(&root).expect("backward");
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(v);
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (scalar_of(&plus, weights.as_ref(), &f) - scalar_of(&minus, weights.as_ref(), &f))
                / (2.0 * FD_STEP);
            let a = analytic.data()[i];
            let scale = a.abs().max(numeric.abs()).max(1.0);
            assert!(
                (a - numeric).abs() <= TOLERANCE * scale,
                "input {k} element {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}
