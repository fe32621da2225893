//! Confidence-threshold sweeps, matching a human accuracy target, two-stage
//! automation accounting and the labor-savings estimate.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::argmax;
use crate::ensemble::top_n;
use crate::error::{Error, Result};
use crate::model::Prediction;
use crate::par::{self, Execution};

/// Largest class probability.
pub fn confidence(probs: &[f64]) -> f64 {
    probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Confidence of a prediction's primary head.
pub fn prediction_confidence(pred: &Prediction) -> f64 {
    confidence(&pred.primary())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub probs: Vec<f64>,
    pub truth: usize,
}

impl ScoredExample {
    pub fn confidence(&self) -> f64 {
        confidence(&self.probs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    Top1,
    TopK(usize),
    WithinOneBin,
}

impl SweepMetric {
    pub fn hit(self, ex: &ScoredExample) -> bool {
        match self {
            SweepMetric::Top1 => argmax(&ex.probs) == ex.truth,
            SweepMetric::TopK(k) => top_n(&ex.probs, k.clamp(1, ex.probs.len().max(1)))
                .map(|t| t.contains(&ex.truth))
                .unwrap_or(false),
            SweepMetric::WithinOneBin => argmax(&ex.probs).abs_diff(ex.truth) <= 1,
        }
    }

    pub fn name(self) -> String {
        match self {
            SweepMetric::Top1 => "top1".into(),
            SweepMetric::TopK(k) => format!("top{k}"),
            SweepMetric::WithinOneBin => "within_one_bin".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub retained_fraction: f64,
    /// `None` when nothing is retained.
    pub accuracy: Option<f64>,
    pub secondary: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub metric: SweepMetric,
    pub secondary_metric: Option<SweepMetric>,
    pub points: Vec<CurvePoint>,
}

/// `0.00, 0.01, ..., 0.99`.
pub fn default_grid() -> Vec<f64> {
    (0..100).map(|i| i as f64 / 100.0).collect()
}

pub fn sweep(
    examples: &[ScoredExample],
    thresholds: &[f64],
    metric: SweepMetric,
    secondary: Option<SweepMetric>,
) -> Result<ThresholdCurve> {
    sweep_with(examples, thresholds, metric, secondary, Execution::default())
}

/// Keeps the examples with confidence `>= t` at every threshold `t`.
pub fn sweep_with(
    examples: &[ScoredExample],
    thresholds: &[f64],
    metric: SweepMetric,
    secondary: Option<SweepMetric>,
    exec: Execution,
) -> Result<ThresholdCurve> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("no predictions to sweep".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::EmptyInput("no thresholds".into()));
    }
    if thresholds
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
    {
        return Err(Error::OutOfRange("thresholds must be strictly increasing".into()));
    }
    let conf: Vec<f64> = examples.iter().map(ScoredExample::confidence).collect();
    let hit: Vec<bool> = examples.iter().map(|e| metric.hit(e)).collect();
    let hit2: Option<Vec<bool>> = secondary.map(|m| examples.iter().map(|e| m.hit(e)).collect());
    let n = examples.len() as f64;
    let points = par::map_range(exec, thresholds.len(), |i| {
        let t = thresholds[i];
        let (mut kept, mut good, mut good2) = (0usize, 0usize, 0usize);
        for (j, &c) in conf.iter().enumerate() {
            if c >= t {
                kept += 1;
                good += hit[j] as usize;
                if let Some(h) = &hit2 {
                    good2 += h[j] as usize;
                }
            }
        }
        let rate = |g: usize| (kept > 0).then(|| g as f64 / kept as f64);
        CurvePoint {
            threshold: t,
            retained_fraction: kept as f64 / n,
            accuracy: rate(good),
            secondary: hit2.as_ref().and_then(|_| rate(good2)),
        }
    });
    Ok(ThresholdCurve {
        metric,
        secondary_metric: secondary,
        points,
    })
}

impl ThresholdCurve {
    pub fn max_accuracy(&self) -> Option<f64> {
        self.points
            .iter()
            .filter_map(|p| p.accuracy)
            .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["threshold", "retained_fraction", "accuracy", "secondary_metric"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            w.write_record([
                p.threshold.to_string(),
                p.retained_fraction.to_string(),
                opt(p.accuracy),
                opt(p.secondary),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numeric(format!("csv buffer: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Numeric(e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), self.to_csv()?.as_bytes())
    }

    /// Line chart of accuracy and retained fraction against threshold.
    pub fn to_svg(&self, title: &str) -> String {
        const W: f64 = 480.0;
        const H: f64 = 320.0;
        const M: f64 = 40.0;
        let x = |t: f64| M + t * (W - 2.0 * M);
        let y = |v: f64| H - M - v * (H - 2.0 * M);
        let line = |values: Vec<(f64, f64)>| {
            values
                .iter()
                .map(|&(t, v)| format!("{:.1},{:.1}", x(t), y(v)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let acc = line(
            self.points
                .iter()
                .filter_map(|p| p.accuracy.map(|a| (p.threshold, a)))
                .collect(),
        );
        let kept = line(self.points.iter().map(|p| (p.threshold, p.retained_fraction)).collect());
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
            W / 2.0,
            escape(title)
        );
        let _ = writeln!(
            s,
            r#"<path d="M{M},{M} V{} H{}" fill="none" stroke="black"/>"#,
            H - M,
            W - M
        );
        for i in 0..=4 {
            let v = i as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.2}</text>"#,
                M - 4.0,
                y(v) + 3.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{v:.2}</text>"#,
                x(v),
                H - M + 14.0
            );
        }
        let _ = writeln!(
            s,
            r#"<polyline points="{acc}" fill="none" stroke-width="2" style="stroke:steelblue"/>"#
        );
        let _ = writeln!(
            s,
            r#"<polyline points="{kept}" fill="none" stroke-width="2" stroke-dasharray="5,3" style="stroke:darkorange"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="steelblue">{} on retained</text>"#,
            M + 8.0,
            M + 12.0,
            self.metric.name()
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="darkorange">retained fraction</text>"#,
            M + 8.0,
            M + 26.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">confidence threshold</text>"#,
            W / 2.0,
            H - 6.0
        );
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    EmptyDetection,
    Species,
    Count,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutomationSummary {
    pub task: Task,
    pub matched_threshold: f64,
    pub automated_fraction_of_stage: f64,
    pub total_automated_fraction: f64,
    pub target_accuracy: f64,
    pub retained_accuracy: f64,
}

/// Smallest grid threshold whose retained-set metric reaches `target`.
/// The total fraction equals the stage fraction until composed with
/// [`compose_two_stage`].
pub fn match_human(
    task: Task,
    examples: &[ScoredExample],
    target: f64,
    metric: SweepMetric,
    grid: &[f64],
) -> Result<AutomationSummary> {
    let curve = sweep(examples, grid, metric, None)?;
    curve
        .points
        .iter()
        .find_map(|p| {
            p.accuracy.filter(|&a| a >= target).map(|a| AutomationSummary {
                task,
                matched_threshold: p.threshold,
                automated_fraction_of_stage: p.retained_fraction,
                total_automated_fraction: p.retained_fraction,
                target_accuracy: target,
                retained_accuracy: a,
            })
        })
        .ok_or(Error::Unattainable {
            target,
            max_achievable: curve.max_accuracy(),
        })
}

/// Stage 1 counts as fully automated when its accuracy already reaches the
/// human level; otherwise it is thresholded like any other stage.
pub fn stage1_automation(examples: &[ScoredExample], human_accuracy: f64, grid: &[f64]) -> Result<AutomationSummary> {
    let overall = examples.iter().filter(|e| SweepMetric::Top1.hit(e)).count() as f64 / examples.len().max(1) as f64;
    if !examples.is_empty() && overall >= human_accuracy {
        return Ok(AutomationSummary {
            task: Task::EmptyDetection,
            matched_threshold: 0.0,
            automated_fraction_of_stage: 1.0,
            total_automated_fraction: 1.0,
            target_accuracy: human_accuracy,
            retained_accuracy: overall,
        });
    }
    match_human(Task::EmptyDetection, examples, human_accuracy, SweepMetric::Top1, grid)
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("{name} = {v} is outside [0, 1]")))
    }
}

/// Fraction of all images handled automatically: empties go through stage 1,
/// the rest through stage 2.
pub fn compose_two_stage(empty_fraction: f64, stage1: f64, stage2: f64) -> Result<f64> {
    unit("empty_fraction", empty_fraction)?;
    unit("stage1_auto_fraction", stage1)?;
    unit("stage2_auto_fraction", stage2)?;
    Ok(empty_fraction * stage1 + (1.0 - empty_fraction) * stage2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaborModel {
    pub baseline_hours: f64,
    pub baseline_images: u64,
    pub corpus_images: u64,
    pub hours_per_week: f64,
}

impl Default for LaborModel {
    fn default() -> Self {
        Self {
            baseline_hours: 14.6 * 52.0 * 40.0,
            baseline_images: 5_500_000,
            corpus_images: 3_200_000,
            hours_per_week: 40.0,
        }
    }
}

impl LaborModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.baseline_hours > 0.0
            && self.baseline_hours.is_finite()
            && self.baseline_images > 0
            && self.corpus_images > 0
            && self.hours_per_week > 0.0
            && self.hours_per_week.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::OutOfRange("labor model fields must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaborSavings {
    pub hours: f64,
    pub person_years: f64,
}

pub fn labor_savings(model: &LaborModel, automated_fraction: f64) -> Result<LaborSavings> {
    model.validate()?;
    unit("automated_fraction", automated_fraction)?;
    let per_image = model.baseline_hours / model.baseline_images as f64;
    let hours = model.corpus_images as f64 * automated_fraction * per_image;
    Ok(LaborSavings {
        hours,
        person_years: hours / (52.0 * model.hours_per_week),
    })
}
