//! Experiment orchestration: catalog, dataset, pipeline, records and reports.

pub mod catalog;
pub mod config;
pub mod dataset;
pub mod pipeline;
pub mod records;
pub mod report;
pub mod sweeps;

pub use catalog::{Prompt, PromptCatalog, PromptCategory};
pub use config::Config;
pub use dataset::{load_dataset, load_source, Dataset, Skip};
pub use pipeline::{run_plan, run_plan_with, ExperimentPlan, ProtectionSet, ProtectionSidecar};
pub use records::{read_records, records_to_jsonl, write_records, EvaluationRecord, RecordFlag, NO_DEFENSE};
pub use report::{emit_report, render, Cell, Grouping, Report, ReportFormat, ReportRow};
pub use sweeps::{backbone_comparison, budget_sweep, design_ablation};
