//! Standard pre-training followed by adversarial finetuning.
use uwadv::dataset::{degrade, synth_clean, DegradationParams, Sample};
use uwadv::defense::{train_with, TrainConfig, TrainMode};
use uwadv::eval::{evaluate, EvalSpec};
use uwadv::models::Model;

const SIZE: usize = 32;

fn samples(range: std::ops::Range<u64>) -> uwadv::Result<Vec<Sample>> {
    let params = DegradationParams::default();
    range
        .map(|i| {
            let y = synth_clean(i, SIZE)?;
            Ok(Sample {
                id: format!("{i}"),
                x: degrade(&y, 0.5 + (i % 5) as f32 * 0.15, &params, i)?,
                y,
            })
        })
        .collect()
}

fn report(tag: &str, model: &Model, test: &[Sample]) -> uwadv::Result<()> {
    let spec = EvalSpec {
        iters: 10,
        ..EvalSpec::default()
    };
    let r = evaluate(model, test, &spec)?;
    println!(
        "{tag:>10}: clean {:.2} dB, pixel attack {:.2} dB",
        r.summary.psnr_clean.mean, r.summary.psnr_adv.mean
    );
    Ok(())
}

fn main() -> uwadv::Result<()> {
    let train_set: Vec<_> = samples(0..36)?.into_iter().map(|s| (s.x, s.y)).collect();
    let test = samples(500..508)?;

    let standard = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let (model, _) = train_with(Model::tiny_enhancer(0), &train_set, &standard, |_| {})?;
    report("standard", &model, &test)?;

    let mut adversarial = TrainConfig {
        mode: TrainMode::Adversarial,
        epochs: 2,
        lambda: 1.0,
        ..TrainConfig::default()
    };
    adversarial.attack.iters = 5;
    adversarial.optimizer.lr = 1e-5;
    let (defended, log) = train_with(model, &train_set, &adversarial, |e| {
        println!(
            "  epoch {}: l_model {:.5}, l_adv {:.4}",
            e.epoch, e.l_model, e.l_adv
        )
    })?;
    report("finetuned", &defended, &test)?;
    println!("{} epochs logged", log.epochs.len());
    Ok(())
}
