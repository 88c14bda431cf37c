use synthmix::data::Label;
use synthmix::sweep::{
    make_toy_dataset, manifest_source_counts, parse_config, parse_report_csv, parse_report_json,
    render_report, run_sweep, ExperimentConfig, ReportFormat,
};
use synthmix::Error;

#[test]
fn toy_classes_differ_in_mean_intensity() {
    let data = make_toy_dataset(500, 64, 21).unwrap();
    let mean = |label| {
        let v: Vec<f64> = data
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.mean_pixel())
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(Label::Tumor) - mean(Label::Healthy) >= 0.05);
    assert!(data
        .iter()
        .all(|r| r.pixels.iter().all(|v| (-1.0..=1.0).contains(v))));
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "# toy run\ntoy = true\nseed = 4\ncnn.epochs = 2\n").unwrap();
    let c = parse_config(&path).unwrap();
    assert!(c.toy);
    assert_eq!((c.seed, c.cnn.epochs), (4, 2));
    assert!(matches!(
        parse_config(dir.path().join("missing.cfg")),
        Err(Error::Io { .. })
    ));
}

fn small_config(out: &std::path::Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.apply_text(
        "toy = true\n\
         toy_per_class = 800\n\
         toy_image_size = 32\n\
         seed = 5\n\
         ratios = 1000:0, 0:1000\n\
         synthetic_per_class = 300\n\
         gan.epochs = 1\n\
         gan.base_width = 2\n\
         gan.z_dim = 8\n\
         gan.sample_epochs = 1\n\
         cnn.epochs = 1\n",
    )
    .unwrap();
    c.out = out.to_path_buf();
    c
}

#[test]
fn sweep_keeps_completed_rows_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let result = run_sweep(&config).unwrap();
    assert_eq!(result.rows.len(), 2);

    let ok = &result.rows[0];
    assert_eq!(ok.label, "100:0");
    assert!(ok.failure.is_none());
    assert_eq!((ok.real_count, ok.synthetic_count), (1000, 0));
    assert_eq!(
        manifest_source_counts(&ok.artifacts.manifest).unwrap(),
        (1000, 0)
    );
    assert_eq!(ok.test_manifest_hash, result.test_manifest_hash);
    for path in [
        Some(&ok.artifacts.manifest),
        ok.artifacts.history_csv.as_ref(),
        ok.artifacts.checkpoint.as_ref(),
        ok.artifacts.metrics_json.as_ref(),
        Some(&result.test_manifest),
    ] {
        assert!(path.unwrap().exists());
    }
    for gan in &result.gans {
        assert!(gan.checkpoint.exists() && gan.loss_csv.exists());
        assert!(gan.sample_grids.iter().all(|p| p.exists()));
    }

    // 300 synthetic images per class cannot fill the all-synthetic row.
    let failed = &result.rows[1];
    let failure = failed.failure.as_ref().unwrap();
    assert!(
        failure.message.starts_with("row 0:100:"),
        "{}",
        failure.message
    );
    assert_eq!(failure.exit_code, 2);

    let csv = render_report(&result, ReportFormat::Csv).unwrap();
    let json = render_report(&result, ReportFormat::Json).unwrap();
    assert_eq!(
        parse_report_csv(&csv).unwrap(),
        parse_report_json(&json).unwrap()
    );
    assert!(csv.lines().nth(2).unwrap().ends_with(",,,,,"));

    let modified = std::fs::metadata(ok.artifacts.checkpoint.as_ref().unwrap())
        .unwrap()
        .modified()
        .unwrap();
    let again = run_sweep(&config).unwrap();
    assert_eq!(again.rows[0], result.rows[0]);
    let after = std::fs::metadata(ok.artifacts.checkpoint.as_ref().unwrap())
        .unwrap()
        .modified()
        .unwrap();
    assert_eq!(modified, after, "completed row was retrained");
}
