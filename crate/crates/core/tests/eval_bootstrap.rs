//! Statistical behavior of the paired bootstrap: the interval width
//! shrinks like one over the square root of the corpus size.

use lrmt::eval::paired_bootstrap_ci;
use lrmt::rng::Rng;

fn noisy_corpus(n: usize, seed: u64) -> (Vec<String>, Vec<String>) {
    let vocab = [
        "the", "cat", "dog", "ran", "sat", "tree", "bird", "far", "near", "sky",
    ];
    let mut rng = Rng::new(seed);
    let mut hyps = Vec::with_capacity(n);
    let mut refs = Vec::with_capacity(n);
    for _ in 0..n {
        let len = 4 + rng.gen_range(8);
        let reference: Vec<&str> = (0..len)
            .map(|_| vocab[rng.gen_range(vocab.len())])
            .collect();
        let hyp: Vec<&str> = reference
            .iter()
            .map(|&w| {
                if rng.gen_f64() < 0.35 {
                    vocab[rng.gen_range(vocab.len())]
                } else {
                    w
                }
            })
            .collect();
        refs.push(reference.join(" "));
        hyps.push(hyp.join(" "));
    }
    (hyps, refs)
}

#[test]
fn interval_width_shrinks_like_inverse_sqrt_n() {
    let mut ratios = Vec::new();
    for seed in 0..20u64 {
        let (hyps_small, refs_small) = noisy_corpus(100, 100 + seed);
        let (hyps_large, refs_large) = noisy_corpus(400, 200 + seed);
        let small = paired_bootstrap_ci(&hyps_small, &refs_small, 400, 0.95, seed).unwrap();
        let large = paired_bootstrap_ci(&hyps_large, &refs_large, 400, 0.95, seed).unwrap();
        let width_small = small.upper - small.lower;
        let width_large = large.upper - large.lower;
        assert!(width_small > 0.0 && width_large > 0.0);
        ratios.push(width_small / width_large);
    }
    let mean: f64 = ratios.iter().sum::<f64>() / ratios.len() as f64;
    // Quadrupling the corpus should halve the width: ratio 2 within 25%.
    assert!(
        (1.5..=2.5).contains(&mean),
        "mean width ratio {mean} over 20 seeds ({ratios:?})"
    );
}
