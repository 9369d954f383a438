//! Accuracy matrix, continual-learning metrics and run reports.

mod matrix;
mod report;

pub use matrix::{acc, acc_curve, acc_with, bwt, bwt_with, la, la_with, AccuracyMatrix};
pub use report::{
    build_report, compare, emit_report, read_report, render_csv, render_table, ComparisonRow,
    RunReport, Summary, REPORT_SCHEMA_VERSION,
};
