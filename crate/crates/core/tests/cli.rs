use std::path::Path;
use std::process::{Command, Output};

use uwadv::imaging::load_image;

fn uwadv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uwadv"))
        .args(args)
        .output()
        .expect("spawn uwadv")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn gen_small(dir: &Path) {
    let out = uwadv(&[
        "gen-data",
        "--out",
        s(dir),
        "--count",
        "10",
        "--size",
        "24",
        "--seed",
        "3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gen_data_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen_small(&a);
    gen_small(&b);
    for sub in ["clean", "degraded"] {
        for entry in std::fs::read_dir(a.join(sub)).unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(
                std::fs::read(a.join(sub).join(&name)).unwrap(),
                std::fs::read(b.join(sub).join(&name)).unwrap()
            );
        }
    }
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn zero_budget_attack_returns_the_input() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let model = tmp.path().join("model");
    let adv = tmp.path().join("adv");
    gen_small(&data);
    let out = uwadv(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&model),
        "--epochs",
        "1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = uwadv(&[
        "attack",
        "--model",
        s(&model),
        "--input",
        s(&data),
        "--out",
        s(&adv),
        "--method",
        "pixel",
        "--eps",
        "0",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let mut seen = 0;
    for entry in std::fs::read_dir(data.join("degraded")).unwrap() {
        let name = entry.unwrap().file_name();
        let x = load_image(data.join("degraded").join(&name)).unwrap();
        let x_adv = load_image(adv.join(&name)).unwrap();
        assert_eq!(x, x_adv);
        seen += 1;
    }
    assert_eq!(seen, 10);
}

#[test]
fn invalid_config_exits_one_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("never");
    let out = uwadv(&[
        "attack",
        "--model",
        "m",
        "--input",
        "i",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("method"));
    assert!(!out_dir.exists());

    let out = uwadv(&[
        "eval",
        "--model",
        "m",
        "--data",
        "d",
        "--out",
        s(&out_dir),
        "--eps",
        "300",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_dir.exists());
}

#[test]
fn missing_model_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data);
    let out = uwadv(&[
        "eval",
        "--model",
        s(&tmp.path().join("no-such-model")),
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("eval")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn config_file_supplies_settings() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let cfg = tmp.path().join("gen.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"out": {:?}, "data.count": 6, "data.size": 20, "seed": 5}}"#,
            s(&data)
        ),
    )
    .unwrap();
    let out = uwadv(&["gen-data", "--config", s(&cfg)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(std::fs::read_dir(data.join("clean")).unwrap().count(), 6);

    std::fs::write(&cfg, r#"{"data.cuont": 6}"#).unwrap();
    let out = uwadv(&[
        "gen-data",
        "--config",
        s(&cfg),
        "--out",
        s(&tmp.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
