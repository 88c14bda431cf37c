//! End-to-end ratio sweep: data, generators, blends, classifiers, report.

mod config;
mod report;
mod run;
mod toy;

pub use config::{parse_config, parse_config_str, ExperimentConfig, ENV_PREFIX, KEYS};
pub use report::{
    emit_report, parse_report_csv, parse_report_json, render_csv, render_json, render_report,
    report_rows, ReportFormat, ReportRow, COLUMNS,
};
pub use run::{
    class_gan_config, derive_seed, manifest_source_counts, prepare_data, run_sweep,
    train_class_gan, GanArtifacts, RowArtifacts, RowFailure, SweepResult, SweepRow,
};
pub use toy::make_toy_dataset;
