//! Standard training of the tiny enhancer, then a checkpoint round trip.
use uwadv::dataset::{degrade, synth_clean, DegradationParams};
use uwadv::defense::{train_with, TrainConfig};
use uwadv::imaging::{psnr, Image};
use uwadv::models::{load_checkpoint, Model};

fn pairs(
    range: std::ops::Range<u64>,
    params: &DegradationParams,
) -> uwadv::Result<Vec<(Image, Image)>> {
    range
        .map(|i| {
            let y = synth_clean(i, 32)?;
            Ok((degrade(&y, 0.8, params, i)?, y))
        })
        .collect()
}

fn main() -> uwadv::Result<()> {
    let params = DegradationParams::default();
    let train_set = pairs(0..48, &params)?;
    let test_set = pairs(1000..1008, &params)?;

    let dir = std::env::temp_dir().join("uwadv-example-checkpoint");
    let cfg = TrainConfig {
        epochs: 15,
        checkpoint_out: Some(dir.clone()),
        ..TrainConfig::default()
    };
    let (model, _) = train_with(Model::tiny_enhancer(1), &train_set, &cfg, |e| {
        println!("epoch {:>2}: mse {:.5}", e.epoch, e.l_model)
    })?;

    let (restored, manifest) = load_checkpoint(&dir)?;
    assert_eq!(restored, model);
    println!(
        "checkpoint {} ({} parameters)",
        manifest.architecture,
        model.num_parameters()
    );

    let mut before = 0.0;
    let mut after = 0.0;
    for (x, y) in &test_set {
        before += psnr(x, y)?.value;
        after += psnr(&model.enhance(x)?, y)?.value;
    }
    let n = test_set.len() as f64;
    println!(
        "held-out psnr: input {:.2} dB, enhanced {:.2} dB",
        before / n,
        after / n
    );
    Ok(())
}
