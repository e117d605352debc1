//! Multi-run experiments: budget sweeps, design ablations, backbone swaps.

use std::collections::HashSet;

use super::pipeline::{run_plan_with, ExperimentPlan};
use super::records::EvaluationRecord;
use super::report::{Grouping, Report};
use crate::attacks::AttackMethod;
use crate::backends::{BackendBundle, FeatureFamily};
use crate::error::{invalid, Result};

/// Concatenates runs, keeping the first copy of each record id. Baseline rows
/// do not depend on the defense, so every run after the first repeats them.
fn merge(runs: Vec<Vec<EvaluationRecord>>) -> Vec<EvaluationRecord> {
    let mut seen = HashSet::new();
    runs.into_iter()
        .flatten()
        .filter(|r| seen.insert(r.record_id.clone()))
        .collect()
}

/// Re-runs `plan` at each ε; defense records are tagged `eps=<ε>`.
pub fn budget_sweep(
    bundle: &BackendBundle,
    plan: &ExperimentPlan,
    budgets: &[f64],
) -> Result<(Report, Vec<EvaluationRecord>)> {
    if budgets.is_empty() {
        return Err(invalid("budget sweep needs at least one ε"));
    }
    let mut runs = Vec::with_capacity(budgets.len());
    for &eps in budgets {
        let mut p = plan.clone();
        p.attack.epsilon = eps;
        p.attack.validate()?;
        p.variant = format!("eps={eps}");
        runs.push(run_plan_with(bundle, bundle, &p)?);
    }
    let records = merge(runs);
    Ok((Report::build(&records, Grouping::Budget), records))
}

/// Runs each design as the plan's only method.
pub fn design_ablation(
    bundle: &BackendBundle,
    plan: &ExperimentPlan,
    designs: &[AttackMethod],
) -> Result<(Report, Vec<EvaluationRecord>)> {
    if designs.is_empty() {
        return Err(invalid("design ablation needs at least one design"));
    }
    let mut p = plan.clone();
    p.methods = designs.to_vec();
    let records = run_plan_with(bundle, bundle, &p)?;
    Ok((Report::build(&records, Grouping::Design), records))
}

/// Protects with a bundle per feature family (from `attack_bundle_for`) and
/// edits / scores everything with `eval_bundle`.
pub fn backbone_comparison(
    eval_bundle: &BackendBundle,
    plan: &ExperimentPlan,
    families: &[FeatureFamily],
    attack_bundle_for: impl Fn(FeatureFamily) -> Result<BackendBundle>,
) -> Result<(Report, Vec<EvaluationRecord>)> {
    if families.is_empty() {
        return Err(invalid("backbone comparison needs at least one family"));
    }
    let mut runs = Vec::with_capacity(families.len());
    for &family in families {
        let attack_bundle = attack_bundle_for(family)?;
        let mut p = plan.clone();
        p.variant = format!("backbone={}", family.name());
        runs.push(run_plan_with(&attack_bundle, eval_bundle, &p)?);
    }
    let records = merge(runs);
    Ok((Report::build(&records, Grouping::Backbone), records))
}
