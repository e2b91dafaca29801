mod support;

use std::fs;

use support::*;

fn fixture(n: u64, w: u32, h: u32) -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf) {
    let root = tempfile::tempdir().unwrap();
    let (p, g) = dirs(root.path());
    for i in 0..n {
        let m = mask_levels(w, h, i + 1);
        write_gray(&g.join(format!("img{i}.png")), w, h, m.clone());
        write_gray(&p.join(format!("img{i}.pgm")), w, h, soft_levels(&m, i));
    }
    (root, p, g)
}

#[test]
fn ground_truth_against_itself_scores_perfectly() {
    let (_root, _, g) = fixture(2, 24, 20);
    let out = run(&["eval", "--pred", g.to_str().unwrap(), "--gt", g.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let lines: Vec<String> = stdout(&out).lines().map(str::to_string).collect();
    let values: Vec<&str> = lines[1].split_whitespace().collect();
    assert_eq!(values, ["1.000", "1.000", "1.000", "0.000"]);
}

#[test]
fn inverted_masks_give_unit_mae() {
    let root = tempfile::tempdir().unwrap();
    let (p, g) = dirs(root.path());
    let m = mask_levels(16, 16, 3);
    write_gray(&g.join("a.png"), 16, 16, m.clone());
    write_gray(&p.join("a.png"), 16, 16, m.iter().map(|v| 255 - v).collect());
    let csv = root.path().join("m.csv");
    let out =
        run(&["eval", "--pred", p.to_str().unwrap(), "--gt", g.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let rows = parse_csv(&csv);
    assert_eq!(rows[2][0], "mean");
    assert_eq!(rows[2][4], "1.000000");
}

#[test]
fn csv_mean_row_averages_images() {
    let (root, p, g) = fixture(3, 20, 18);
    let csv = root.path().join("scores.csv");
    let out =
        run(&["eval", "--pred", p.to_str().unwrap(), "--gt", g.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = parse_csv(&csv);
    assert_eq!(rows[0], ["image", "f_beta", "s_alpha", "e_phi", "mae"]);
    assert_eq!(rows.len(), 5);
    for col in 1..5 {
        let mean: f64 = rows[1..4].iter().map(|r| r[col].parse::<f64>().unwrap()).sum::<f64>() / 3.0;
        let reported: f64 = rows[4][col].parse().unwrap();
        assert!((mean - reported).abs() < 2e-6, "column {col}");
    }
}

#[test]
fn curves_subcommand_writes_256_thresholds() {
    let (root, p, g) = fixture(2, 16, 16);
    let csv = root.path().join("run.csv");
    let out =
        run(&["curves", "--pred", p.to_str().unwrap(), "--gt", g.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for (name, col) in [("run_f_curve.csv", "f_beta"), ("run_e_curve.csv", "e_phi")] {
        let rows = parse_csv(&root.path().join(name));
        assert_eq!(rows[0], ["threshold", col]);
        assert_eq!(rows.len(), 257);
        assert_eq!(rows[256][0], "255");
    }
    let missing_out = run(&["eval", "--curves", "--pred", p.to_str().unwrap(), "--gt", g.to_str().unwrap()]);
    assert_eq!(code(&missing_out), 2);
}

#[test]
fn unpaired_files_are_a_contract_error() {
    let (_root, p, g) = fixture(2, 8, 8);
    write_gray(&p.join("orphan.png"), 8, 8, vec![0; 64]);
    let out = run(&["eval", "--pred", p.to_str().unwrap(), "--gt", g.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("orphan"));
}

#[test]
fn unreadable_inputs_are_io_errors() {
    let (root, p, g) = fixture(1, 8, 8);
    let missing = root.path().join("nowhere");
    assert_eq!(code(&run(&["eval", "--pred", missing.to_str().unwrap(), "--gt", g.to_str().unwrap()])), 3);
    fs::write(p.join("img0.pgm"), b"P5\n8 8\n255\n").unwrap();
    assert_eq!(code(&run(&["eval", "--pred", p.to_str().unwrap(), "--gt", g.to_str().unwrap()])), 3);
}

#[test]
fn size_mismatch_resamples_unless_strict() {
    let root = tempfile::tempdir().unwrap();
    let (p, g) = dirs(root.path());
    let m = mask_levels(16, 16, 2);
    write_gray(&g.join("a.png"), 16, 16, m);
    write_gray(&p.join("a.png"), 8, 8, mask_levels(8, 8, 2));
    let args = ["eval", "--pred", p.to_str().unwrap(), "--gt", g.to_str().unwrap()];
    let lenient = run(&args);
    assert_eq!(code(&lenient), 0);
    assert!(stderr(&lenient).contains("resampled"));
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(code(&run(&strict)), 4);
}

#[test]
fn thread_cap_must_be_positive() {
    let (_root, p, g) = fixture(1, 8, 8);
    let out = cma()
        .args(["eval", "--pred", p.to_str().unwrap(), "--gt", g.to_str().unwrap()])
        .env("CMA_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let capped = cma()
        .args(["eval", "--pred", p.to_str().unwrap(), "--gt", g.to_str().unwrap()])
        .env("CMA_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&capped), 0);
}

#[test]
fn unknown_config_key_is_named() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("bad.conf");
    fs::write(&cfg, "epochs = 1\nlearning_rate = 0.1\n").unwrap();
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--out", root.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_rate"));
    let missing = run(&["train", "--config", root.path().join("none.conf").to_str().unwrap()]);
    assert_eq!(code(&missing), 3);
    assert_eq!(code(&run(&["train", "--variant", "model9"])), 2);
}

#[test]
fn train_writes_identical_artifacts_for_identical_seeds() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("tiny.conf");
    fs::write(&cfg, "input_size = 16\nepochs = 2\nsamples = 10\nbatch = 4\n").unwrap();
    let train = |dir: &str| {
        let out = root.path().join(dir);
        let o = run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "3",
            "--variant",
            "model3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    };
    let (a, b) = (train("a"), train("b"));
    for name in ["model3.ckpt", "model3_trace.csv", "model3_report.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let trace = parse_csv(&a.join("model3_trace.csv"));
    assert_eq!(trace.len(), 3);
}

#[test]
fn gradcheck_reports_injected_faults() {
    let ok = run(&["gradcheck", "--seeds", "2"]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    let bad = run(&["gradcheck", "--seeds", "2", "--inject-fault", "matmul"]);
    assert_eq!(code(&bad), 1);
    assert!(stderr(&bad).contains("matmul"));
    assert_eq!(code(&run(&["gradcheck", "--inject-fault", "nonsense"])), 2);
}
