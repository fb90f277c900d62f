//! Checks the analytic GRU gradient against central differences.
//!
//! ```bash
//! cargo run --release --example gru_gradient
//! ```

use finemotion::tensor::{finite_diff_check, gru_backward, gru_forward, Activation, GruWeights, Tensor, FD_STEP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> finemotion::Result<()> {
    let (steps, d_in, h) = (4, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rand = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-0.5..0.5));
    let x = rand(&[steps, d_in]);
    let (w, u, bi, bh) = (rand(&[d_in, 3 * h]), rand(&[h, 3 * h]), rand(&[3 * h]), rand(&[3 * h]));
    let weights = GruWeights { w_input: &w, w_recurrent: &u, b_input: &bi, b_recurrent: &bh };

    // scalar objective: sum of all hidden states
    let (out, cache) = gru_forward(&x, weights, Activation::Tanh)?;
    let grads = gru_backward(&cache, weights, &Tensor::filled(out.shape(), 1.0))?;

    let worst = finite_diff_check(x.data(), grads.inputs[0].data(), FD_STEP, |p| {
        let xp = Tensor::new(x.shape().to_vec(), p.to_vec()).unwrap();
        gru_forward(&xp, weights, Activation::Tanh).unwrap().0.sum()
    });
    println!("input gradient: worst relative error {worst:.2e}");

    let worst = finite_diff_check(u.data(), grads.params[1].data(), FD_STEP, |p| {
        let up = Tensor::new(u.shape().to_vec(), p.to_vec()).unwrap();
        let wt = GruWeights { w_recurrent: &up, ..weights };
        gru_forward(&x, wt, Activation::Tanh).unwrap().0.sum()
    });
    println!("recurrent weight gradient: worst relative error {worst:.2e}");
    Ok(())
}
