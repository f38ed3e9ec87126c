//! Adversarial PSNR over a grid of budgets and iteration counts.
use uwadv::dataset::{degrade, synth_clean, DegradationParams, Sample};
use uwadv::eval::{sweep, EvalSpec, PAPER_SWEEP_EPS};
use uwadv::models::Model;

fn main() -> uwadv::Result<()> {
    let params = DegradationParams::default();
    let samples: Vec<Sample> = (0..4)
        .map(|i| {
            let y = synth_clean(i, 32)?;
            Ok(Sample {
                id: i.to_string(),
                x: degrade(&y, 0.8, &params, i)?,
                y,
            })
        })
        .collect::<uwadv::Result<_>>()?;
    let model = Model::tiny_enhancer(8);
    let iters = [1, 5, 10];
    let grid = sweep(
        &model,
        &samples,
        &PAPER_SWEEP_EPS,
        &iters,
        &EvalSpec::default(),
    )?;

    print!("{:>8}", "eps\\T");
    for t in iters {
        print!("{t:>8}");
    }
    println!();
    for &e in &grid.eps {
        print!("{:>8}", format!("{e}/255"));
        for &t in &grid.iters {
            print!("{:>8.2}", grid.cell(e, t).expect("grid cell").psnr.mean);
        }
        println!();
    }
    Ok(())
}
