//! PSNR, SSIM, YUV conversion and histograms on synthetic images.
use uwadv::dataset::synth_clean;
use uwadv::imaging::{histogram256, psnr, rgb_to_yuv, ssim, yuv_to_rgb, Image};

fn main() -> uwadv::Result<()> {
    let a = Image::filled(32, 32, 0.4)?;
    let b = Image::filled(32, 32, 0.5)?;
    println!("psnr(0.4, 0.5)   = {}", psnr(&a, &b)?);
    println!("psnr(a, a)       = {}", psnr(&a, &a)?);

    let black = Image::filled(32, 32, 0.0)?;
    let white = Image::filled(32, 32, 1.0)?;
    println!(
        "ssim(black, white) = {:.8} (1e-4/1.0001 = {:.8})",
        ssim(&black, &white)?.value,
        1e-4 / 1.0001
    );

    let img = synth_clean(7, 64)?;
    let yuv = rgb_to_yuv(&img);
    let back = yuv_to_rgb(&yuv)?;
    let err = img
        .data()
        .iter()
        .zip(back.data())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0f32, f32::max);
    println!("yuv round trip max error = {err:e}");

    let h = histogram256(&img);
    for (c, name) in ["R", "G", "B"].iter().enumerate() {
        println!(
            "{name}: mean level {:.1}, {} pixels",
            h.mean_level(c),
            h.channel_total(c)
        );
    }
    Ok(())
}
