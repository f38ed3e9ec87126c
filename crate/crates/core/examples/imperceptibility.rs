//! Input-side PSNR of adversarial examples against the analytic floor.
use uwadv::attack::{InitMode, Projection};
use uwadv::dataset::{degrade, synth_clean, DegradationParams, Sample};
use uwadv::eval::{imperceptibility_report, EvalSpec};
use uwadv::models::Model;

fn main() -> uwadv::Result<()> {
    let params = DegradationParams::default();
    let samples: Vec<Sample> = (0..6)
        .map(|i| {
            let y = synth_clean(i, 32)?;
            Ok(Sample {
                id: i.to_string(),
                x: degrade(&y, 1.0, &params, i)?,
                y,
            })
        })
        .collect::<uwadv::Result<_>>()?;
    let model = Model::tiny_enhancer(1);

    for (projection, init) in [
        (Projection::Cumulative, InitMode::Uniform),
        (Projection::StepClip, InitMode::Zero),
    ] {
        let spec = EvalSpec {
            iters: 5,
            projection,
            init,
            ..EvalSpec::default()
        };
        for row in imperceptibility_report(&model, &samples, &[1.0, 2.0, 4.0, 8.0], &spec)? {
            println!(
                "{projection:>10} eps {:>2}/255: mean {:.2} dB, min {:.2} dB, floor {:.2} dB",
                row.eps, row.mean_psnr_x_xadv, row.min_psnr_x_xadv, row.floor_db
            );
        }
    }
    Ok(())
}
