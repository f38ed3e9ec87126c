//! Generates a small paired dataset on disk and loads it back.
use uwadv::dataset::{generate_dataset, load_paired_dir, DegradationParams, Split, WaterType};
use uwadv::imaging::psnr;

fn main() -> uwadv::Result<()> {
    let dir = std::env::temp_dir().join("uwadv-example-dataset");
    let params = DegradationParams::preset(WaterType::II);
    let ds = generate_dataset(&dir, 20, 64, &params, 42, 0.8)?;
    println!("wrote {} pairs to {}", ds.len(), dir.display());

    let loaded = load_paired_dir(&dir)?;
    let test = loaded.samples(Split::Test)?;
    let manifest = loaded
        .manifest
        .as_ref()
        .expect("generated datasets carry a manifest");
    for s in &test {
        println!(
            "{}: depth {:.2}, psnr(x, y) = {:.2} dB",
            s.id,
            manifest.depths[&s.id],
            psnr(&s.x, &s.y)?.value
        );
    }
    Ok(())
}
