//! Finite-difference check of the tiny enhancer's input gradient.
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uwadv::autodiff::{grad_check, Reduction, Region, Tensor};
use uwadv::models::{Model, ParamMode};

fn main() -> uwadv::Result<()> {
    let model = Model::tiny_enhancer(0);
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..3 * 8 * 8).map(|_| rng.random_range(0.0..1.0)).collect();
        let weights: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let point = Tensor::new(vec![3, 8, 8], x)?;
        let check = grad_check(
            |tape, input| {
                let out = model.record(tape, input, ParamMode::Frozen)?.output;
                let w = tape.constant(Tensor::new(vec![3, 8, 8], weights.clone())?);
                let prod = tape.mul(out, w)?;
                tape.reduce(prod, Reduction::Sum, Region::All)
            },
            &point,
            1e-3,
        )?;
        println!(
            "seed {seed}: max rel error {:.2e} over {} coordinates ({} skipped at relu kinks)",
            check.max_rel_error,
            check.compared(),
            check.kinked.len()
        );
    }
    Ok(())
}
