//! Random noise of the attack's strength versus the attack itself.
use uwadv::dataset::{degrade, synth_clean, DegradationParams, Sample};
use uwadv::eval::{noise_compare, EvalSpec};
use uwadv::models::Model;

fn main() -> uwadv::Result<()> {
    let params = DegradationParams::default();
    let samples: Vec<Sample> = (0..8)
        .map(|i| {
            let y = synth_clean(40 + i, 32)?;
            Ok(Sample {
                id: i.to_string(),
                x: degrade(&y, 0.6, &params, i)?,
                y,
            })
        })
        .collect::<uwadv::Result<_>>()?;
    let model = Model::tiny_enhancer(5);
    let cmp = noise_compare(
        &model,
        &samples,
        &EvalSpec {
            iters: 10,
            ..EvalSpec::default()
        },
    )?;

    println!("clean output psnr {:.2} dB", cmp.clean_psnr);
    for c in &cmp.conditions {
        let q = c.psnr_quartiles().expect("finite psnr");
        println!(
            "{:>12}: min {:.2} q1 {:.2} median {:.2} q3 {:.2} max {:.2}",
            c.condition, q.min, q.q1, q.median, q.q3, q.max
        );
    }
    Ok(())
}
