//! Full evaluation of an enhancer written to CSV reports.
use std::collections::BTreeMap;

use uwadv::dataset::{degrade, synth_clean, DegradationParams, Sample};
use uwadv::defense::{train, TrainConfig};
use uwadv::eval::{
    eval_meta, evaluate, histogram_study, imperceptibility_report, noise_compare, write_reports,
    EvalSpec, ReportArtifacts,
};
use uwadv::models::Model;

fn main() -> uwadv::Result<()> {
    let params = DegradationParams::default();
    let make = |i: u64| -> uwadv::Result<Sample> {
        let y = synth_clean(i, 32)?;
        Ok(Sample {
            id: format!("img{i:02}"),
            x: degrade(&y, 0.7, &params, i)?,
            y,
        })
    };
    let train_set: Vec<_> = (0..30)
        .map(|i| make(i).map(|s| (s.x, s.y)))
        .collect::<Result<_, _>>()?;
    let test: Vec<Sample> = (100..106).map(make).collect::<Result<_, _>>()?;
    let (model, _) = train(
        Model::tiny_enhancer(2),
        &train_set,
        &TrainConfig {
            epochs: 8,
            ..Default::default()
        },
    )?;

    let spec = EvalSpec {
        iters: 10,
        ..EvalSpec::default()
    };
    let robustness = evaluate(&model, &test, &spec)?;
    let noise = noise_compare(&model, &test, &spec)?;
    let histograms = histogram_study(&model, &test, &spec)?;
    let impercept = imperceptibility_report(
        &model,
        &test,
        &[2.0, 4.0, 8.0],
        &EvalSpec { iters: 5, ..spec },
    )?;

    let dir = std::env::temp_dir().join("uwadv-example-report");
    write_reports(
        &dir,
        &ReportArtifacts {
            robustness: Some(&robustness),
            noise: Some(&noise),
            histograms: Some(&histograms),
            impercept: Some(&impercept),
            meta: eval_meta(&model, &spec, BTreeMap::new()),
            save_images: Some((&model, &test)),
            ..Default::default()
        },
    )?;

    let s = &robustness.summary;
    println!(
        "clean {:.2} dB -> adversarial {:.2} dB (drop {:.2})",
        s.psnr_clean.mean,
        s.psnr_adv.mean,
        robustness.psnr_drop()
    );
    for name in ["gaussian", "uniform"] {
        println!("{name} drop {:.2} dB", noise.drop(name).unwrap_or(f64::NAN));
    }
    for row in &impercept {
        println!(
            "eps {}/255: min psnr(x, x_adv) {:.2} dB, floor {:.2} dB",
            row.eps, row.min_psnr_x_xadv, row.floor_db
        );
    }
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .expect("report dir")
        .filter_map(|e| e.ok())
        .map(|e| e.file_name())
        .collect();
    files.sort();
    println!(
        "wrote {} entries to {}: {files:?}",
        files.len(),
        dir.display()
    );
    Ok(())
}
