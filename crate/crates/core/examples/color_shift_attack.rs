//! Pixel versus Color Shift Attack: where does the output move?
use uwadv::dataset::{degrade, synth_clean, DegradationParams, Sample};
use uwadv::eval::{histogram_report, EvalSpec};
use uwadv::models::Model;

fn main() -> uwadv::Result<()> {
    let model = Model::tiny_enhancer(11);
    let y = synth_clean(2, 48)?;
    let sample = Sample {
        id: "demo".into(),
        x: degrade(&y, 0.9, &DegradationParams::default(), 2)?,
        y,
    };
    let report = histogram_report(&model, &sample, 0, &EvalSpec::default())?;
    for c in &report.conditions {
        let d = c.displacement;
        println!(
            "{:>12}: mean R/G/B level {:>6.1} {:>6.1} {:>6.1}  |dY| {:.4}  |dU|+|dV| {:.4}  ratio {:.3}",
            c.condition,
            c.histogram.mean_level(0),
            c.histogram.mean_level(1),
            c.histogram.mean_level(2),
            d.luma,
            d.chroma,
            d.ratio()
        );
    }
    Ok(())
}
