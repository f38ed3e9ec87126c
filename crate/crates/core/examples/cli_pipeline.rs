//! The command-line workflow driven in-process: data, training, evaluation.
use uwadv::cli::run;

fn main() {
    let root = std::env::temp_dir().join("uwadv-example-cli");
    let p = |s: &str| root.join(s).display().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec![
            "gen-data".into(),
            "--out".into(),
            p("data"),
            "--count".into(),
            "30".into(),
            "--size".into(),
            "32".into(),
        ],
        vec![
            "train".into(),
            "--data".into(),
            p("data"),
            "--out".into(),
            p("model"),
            "--epochs".into(),
            "3".into(),
        ],
        vec![
            "eval".into(),
            "--model".into(),
            p("model"),
            "--data".into(),
            p("data"),
            "--out".into(),
            p("eval"),
            "--iters".into(),
            "5".into(),
        ],
    ];
    for args in steps {
        let code = run(std::iter::once("uwadv".to_string()).chain(args.iter().cloned()));
        println!("uwadv {} -> exit {code}", args[0]);
        if code != 0 {
            std::process::exit(code);
        }
    }
    println!(
        "{}",
        std::fs::read_to_string(root.join("eval/summary.csv")).unwrap_or_default()
    );
}
