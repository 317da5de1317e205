//! Central-difference gradient checking against the tape's reverse pass.

use super::tape::{Tape, Var};
use super::Tensor;
use crate::rng::Rng;

/// Compare analytic gradients with central finite differences on up to
/// `max_coords` randomly sampled coordinates per parameter. Returns the
/// maximum relative error `|g - g_fd| / max(|g|, |g_fd|, 1e-8)`.
///
/// `build` must construct the scalar loss from the leaves it is given;
/// it runs on fresh tapes seeded identically, so any dropout masks
/// repeat exactly across evaluations.
pub fn grad_check<F>(build: F, params: &[Tensor], h: f64, seed: u64, max_coords: usize) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |tensors: &[Tensor]| -> f64 {
        let mut tape = Tape::new(seed);
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).item()
    };

    // Analytic gradients.
    let mut tape = Tape::new(seed);
    let vars: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss);
    let analytic: Vec<Option<Tensor>> = vars.iter().map(|&v| tape.grad(v).cloned()).collect();

    let mut rng = Rng::new(seed ^ 0x5eed);
    let mut worst = 0.0f64;
    let mut work = params.to_vec();
    for (p, grad) in analytic.iter().enumerate() {
        let n = params[p].numel();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            rng.sample_indices(n, max_coords)
        };
        for i in coords {
            let g = grad.as_ref().map(|t| t.data[i]).unwrap_or(0.0);
            let original = work[p].data[i];
            work[p].data[i] = original + h;
            let up = eval(&work);
            work[p].data[i] = original - h;
            let down = eval(&work);
            work[p].data[i] = original;
            let fd = (up - down) / (2.0 * h);
            let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}
