use std::collections::HashMap;
use std::path::PathBuf;

use camtrap_core::domain::{ImageRecord, LabelSet};
use camtrap_core::ensemble::{from_records, read_records};
use camtrap_core::manifest::Dataset;
use camtrap_core::model::{HeadLayout, Prediction, BINARY_ANIMAL, BINARY_EMPTY};
use camtrap_core::threshold::{
    compose_two_stage, labor_savings, match_human, stage1_automation, sweep, AutomationSummary, LaborSavings,
    ScoredExample, SweepMetric, Task, ThresholdCurve,
};
use camtrap_core::Error;
use serde::{Deserialize, Serialize};

use super::{pct, Ctx};
use crate::config::CountMetric;
use crate::CliError;

/// Outcome for one task: measured automation, a configured override, or
/// "unautomatable" when no threshold reaches the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAutomation {
    pub task: Task,
    pub target_accuracy: f64,
    pub source: String,
    pub automatable: bool,
    pub automated_fraction: Option<f64>,
    pub summary: Option<AutomationSummary>,
    pub max_achievable: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub empty_share: f64,
    pub empty_share_source: String,
    pub stage1: Option<TaskAutomation>,
    pub species: Option<TaskAutomation>,
    pub count: Option<TaskAutomation>,
    pub species_total_automated: Option<f64>,
    pub count_total_automated: Option<f64>,
    pub labor: Option<LaborSavings>,
}

fn predictions_path(ctx: &Ctx, configured: &Option<PathBuf>, default: &str) -> Option<PathBuf> {
    configured.clone().or_else(|| {
        let p = ctx.path(default);
        p.exists().then_some(p)
    })
}

fn load_predictions(
    path: &PathBuf,
    layout: &HeadLayout,
    labels: &HashMap<&str, &LabelSet>,
) -> Result<Vec<(Prediction, LabelSet)>, CliError> {
    let records = read_records(path)?;
    let map = from_records(layout, &records)?;
    map.into_iter()
        .map(|(id, p)| {
            let l = labels
                .get(id.as_str())
                .ok_or_else(|| CliError::Data(format!("prediction for unknown image `{id}`")))?;
            Ok((p, **l))
        })
        .collect()
}

fn curve_files(ctx: &Ctx, stem: &str, title: &str, curve: &ThresholdCurve) -> Result<(), CliError> {
    curve.write_csv(ctx.path(&format!("{stem}_curve.csv")))?;
    ctx.write(&format!("{stem}_curve.svg"), &curve.to_svg(title))?;
    Ok(())
}

fn from_override(task: Task, target: f64, v: f64) -> TaskAutomation {
    TaskAutomation {
        task,
        target_accuracy: target,
        source: "config".into(),
        automatable: true,
        automated_fraction: Some(v),
        summary: None,
        max_achievable: None,
    }
}

fn measured(task: Task, target: f64, r: camtrap_core::Result<AutomationSummary>) -> Result<TaskAutomation, CliError> {
    match r {
        Ok(s) => Ok(TaskAutomation {
            task,
            target_accuracy: target,
            source: "sweep".into(),
            automatable: true,
            automated_fraction: Some(s.automated_fraction_of_stage),
            summary: Some(s),
            max_achievable: None,
        }),
        Err(Error::Unattainable { max_achievable, .. }) => Ok(TaskAutomation {
            task,
            target_accuracy: target,
            source: "sweep".into(),
            automatable: false,
            automated_fraction: None,
            summary: None,
            max_achievable,
        }),
        Err(e) => Err(e.into()),
    }
}

fn label_index(d: &Dataset) -> HashMap<&str, &LabelSet> {
    d.images()
        .filter_map(|i: &ImageRecord| i.label.as_ref().map(|l| (i.image_id.as_str(), l)))
        .collect()
}

pub fn run(ctx: &Ctx) -> Result<SweepSummary, CliError> {
    let cfg = &ctx.cfg;
    let grid = cfg.grid();
    let s1_path = predictions_path(ctx, &cfg.stage1_predictions, "predictions_binary.jsonl");
    let s2_path = predictions_path(ctx, &cfg.stage2_predictions, "predictions_multitask.jsonl");
    let needs_stage1 = cfg.stage1_auto_fraction.is_none() || cfg.automation_empty_share.is_none();
    let needs_stage2 = cfg.stage2_species_auto_fraction.is_none() || cfg.stage2_count_auto_fraction.is_none();

    let data = if (needs_stage1 && s1_path.is_some())
        || (needs_stage2 && s2_path.is_some())
        || cfg.automation_empty_share.is_none()
    {
        Some(ctx.load_dataset()?)
    } else {
        None
    };
    let labels = data.as_ref().map(label_index).unwrap_or_default();

    let mut stage1_examples = None;
    if needs_stage1 {
        if let Some(p) = &s1_path {
            let rows = load_predictions(p, &HeadLayout::binary(), &labels)?;
            let ex: Vec<ScoredExample> = rows
                .iter()
                .map(|(p, l)| ScoredExample {
                    probs: p.primary(),
                    truth: if l.empty { BINARY_EMPTY } else { BINARY_ANIMAL },
                })
                .collect();
            let curve = sweep(&ex, &grid, SweepMetric::Top1, None)?;
            curve_files(ctx, "stage1", "empty vs. animal", &curve)?;
            stage1_examples = Some(ex);
        }
    }

    let (empty_share, empty_share_source) = match (cfg.automation_empty_share, &stage1_examples, &data) {
        (Some(v), _, _) => (v, "config".to_string()),
        (None, Some(ex), _) => (
            ex.iter().filter(|e| e.truth == BINARY_EMPTY).count() as f64 / ex.len() as f64,
            "stage-1 predictions".to_string(),
        ),
        (None, None, Some(d)) => (
            d.stats().empty_images as f64 / d.stats().total_images.max(1) as f64,
            "manifest".to_string(),
        ),
        (None, None, None) => unreachable!("dataset is loaded whenever the share is not configured"),
    };

    let stage1 = match (cfg.stage1_auto_fraction, &stage1_examples) {
        (Some(v), _) => Some(from_override(
            Task::EmptyDetection,
            cfg.empty_detection_human_accuracy,
            v,
        )),
        (None, Some(ex)) => Some(measured(
            Task::EmptyDetection,
            cfg.empty_detection_human_accuracy,
            stage1_automation(ex, cfg.empty_detection_human_accuracy, &grid),
        )?),
        (None, None) => None,
    };

    let mut species = cfg
        .stage2_species_auto_fraction
        .map(|v| from_override(Task::Species, cfg.human_accuracy, v));
    let mut count = cfg
        .stage2_count_auto_fraction
        .map(|v| from_override(Task::Count, cfg.count_human_accuracy, v));
    if needs_stage2 {
        if let Some(p) = &s2_path {
            let k = data.as_ref().map_or(0, |d| d.taxonomy().len());
            let rows = load_predictions(p, &HeadLayout::multitask(k), &labels)?;
            let (mut sp, mut ct) = (Vec::new(), Vec::new());
            for (p, l) in &rows {
                let heads = p.heads();
                if let Some(s) = l.species {
                    sp.push(ScoredExample {
                        probs: heads[0].clone(),
                        truth: s.0,
                    });
                }
                if let Some(c) = l.count {
                    ct.push(ScoredExample {
                        probs: heads[1].clone(),
                        truth: c.0,
                    });
                }
            }
            if species.is_none() && !sp.is_empty() {
                let curve = sweep(&sp, &grid, SweepMetric::Top1, Some(SweepMetric::TopK(5)))?;
                curve_files(ctx, "species", "species identification", &curve)?;
                species = Some(measured(
                    Task::Species,
                    cfg.human_accuracy,
                    match_human(Task::Species, &sp, cfg.human_accuracy, SweepMetric::Top1, &grid),
                )?);
            }
            if count.is_none() && !ct.is_empty() {
                let metric = match cfg.count_metric {
                    CountMetric::Top1 => SweepMetric::Top1,
                    CountMetric::WithinOneBin => SweepMetric::WithinOneBin,
                };
                let curve = sweep(&ct, &grid, metric, Some(SweepMetric::WithinOneBin))?;
                curve_files(ctx, "count", "counting", &curve)?;
                count = Some(measured(
                    Task::Count,
                    cfg.count_human_accuracy,
                    match_human(Task::Count, &ct, cfg.count_human_accuracy, metric, &grid),
                )?);
            }
        }
    }

    let s1 = stage1.as_ref().and_then(|t| t.automated_fraction);
    let total = |t: &Option<TaskAutomation>| -> Result<Option<f64>, CliError> {
        match (s1, t.as_ref().and_then(|t| t.automated_fraction)) {
            (Some(a), Some(b)) => Ok(Some(compose_two_stage(empty_share, a, b)?)),
            (Some(a), None) if t.as_ref().is_some_and(|t| !t.automatable) => {
                Ok(Some(compose_two_stage(empty_share, a, 0.0)?))
            }
            _ => Ok(None),
        }
    };
    let species_total_automated = total(&species)?;
    let count_total_automated = total(&count)?;
    let labor = species_total_automated
        .map(|f| labor_savings(&cfg.labor(), f))
        .transpose()?;

    let summary = SweepSummary {
        empty_share,
        empty_share_source,
        stage1,
        species,
        count,
        species_total_automated,
        count_total_automated,
        labor,
    };
    ctx.write_json("sweep_summary.json", &summary)?;
    ctx.write_resolved("sweep")?;
    print_summary(&summary);
    Ok(summary)
}

fn print_task(name: &str, t: &Option<TaskAutomation>) {
    let Some(t) = t else { return };
    match (t.automatable, t.automated_fraction, &t.summary) {
        (true, Some(f), Some(s)) => println!(
            "{name}: threshold {:.2} automates {} at {} accuracy (target {})",
            s.matched_threshold,
            pct(f),
            pct(s.retained_accuracy),
            pct(t.target_accuracy)
        ),
        (true, Some(f), None) => println!("{name}: {} automated ({})", pct(f), t.source),
        _ => println!(
            "{name}: not automatable at target {} (max achievable {})",
            pct(t.target_accuracy),
            t.max_achievable.map_or_else(|| "n/a".into(), pct)
        ),
    }
}

fn print_summary(s: &SweepSummary) {
    println!("empty share {} ({})", pct(s.empty_share), s.empty_share_source);
    print_task("stage 1", &s.stage1);
    print_task("species", &s.species);
    print_task("count", &s.count);
    if let Some(v) = s.species_total_automated {
        println!("total automated (species): {}", pct(v));
    }
    if let Some(v) = s.count_total_automated {
        println!("total automated (count): {}", pct(v));
    }
    if let Some(l) = &s.labor {
        println!("labor saved: {:.0} hours, {:.2} person-years", l.hours, l.person_years);
    }
}
