//! Pixel Attack on one image, in both projection modes.
use uwadv::attack::{pgd_attack, AttackConfig, InitMode, Projection};
use uwadv::dataset::{degrade, synth_clean, DegradationParams};
use uwadv::imaging::psnr;
use uwadv::models::Model;

fn main() -> uwadv::Result<()> {
    let model = Model::tiny_enhancer(3);
    let y = synth_clean(5, 48)?;
    let x = degrade(&y, 0.6, &DegradationParams::default(), 5)?;

    for (projection, init) in [
        (Projection::Cumulative, InitMode::Uniform),
        (Projection::StepClip, InitMode::Zero),
    ] {
        let cfg = AttackConfig {
            projection,
            init,
            iters: 5,
            ..AttackConfig::default()
        };
        let r = pgd_attack(&model, &x, &y, &cfg)?;
        println!(
            "{projection:>10}: loss {:.5} -> {:.5}, linf {:.2}/255, psnr(x, x_adv) {:.2} dB",
            r.initial_loss(),
            r.final_loss(),
            r.linf * 255.0,
            psnr(&x, &r.adversarial)?.value
        );
        let clean = psnr(&model.enhance(&x)?, &y)?.value;
        let adv = psnr(&model.enhance(&r.adversarial)?, &y)?.value;
        println!("{:>12}output psnr {clean:.2} dB -> {adv:.2} dB", "");
    }
    Ok(())
}
