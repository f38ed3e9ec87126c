//! Channel-masked attacks perturb a single RGB channel.
use uwadv::attack::{pgd_attack, AttackConfig, ChannelMask};
use uwadv::dataset::{degrade, synth_clean, DegradationParams};
use uwadv::imaging::psnr;
use uwadv::models::Model;

fn main() -> uwadv::Result<()> {
    let model = Model::tiny_enhancer(4);
    let y = synth_clean(9, 32)?;
    let x = degrade(&y, 0.7, &DegradationParams::default(), 9)?;
    for mask in [ChannelMask::R, ChannelMask::G, ChannelMask::B] {
        let cfg = AttackConfig {
            mask,
            iters: 10,
            ..AttackConfig::default()
        };
        let r = pgd_attack(&model, &x, &y, &cfg)?;
        let moved: Vec<f32> = (0..3)
            .map(|c| {
                x.plane(c)
                    .iter()
                    .zip(r.adversarial.plane(c))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f32::max)
                    * 255.0
            })
            .collect();
        println!(
            "{mask}: per-channel linf {:.1} {:.1} {:.1} (/255), output psnr {:.2} dB",
            moved[0],
            moved[1],
            moved[2],
            psnr(&model.enhance(&r.adversarial)?, &y)?.value
        );
    }
    Ok(())
}
