use std::collections::BTreeMap;
use std::path::PathBuf;

use camtrap_core::domain::{argmax, ImageRecord, LabelSet};
use camtrap_core::ensemble::{average, to_records, write_records, RecordKey};
use camtrap_core::manifest::Dataset;
use camtrap_core::metrics::{EvalReport, MultilabelAveraging};
use camtrap_core::model::{Checkpoint, HeadLayout, HeadMode, Prediction, BINARY_EMPTY};
use serde::{Deserialize, Serialize};

use super::train::class_names;
use super::Ctx;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: HeadMode,
    pub checkpoints: Vec<String>,
    pub n_images: usize,
    pub n_events: usize,
    pub image_top1: f64,
    pub image_top5: f64,
    pub event_top1: Option<f64>,
    pub within_one_bin: Option<f64>,
    pub member_image_top1: Vec<f64>,
}

/// Whole-pipeline accuracy over `k + 1` classes (species or empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n_images: usize,
    pub two_stage_top1: f64,
    pub one_stage_top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub modes: Vec<ModeSummary>,
    pub comparison: Option<Comparison>,
}

fn mode_name(m: HeadMode) -> &'static str {
    match m {
        HeadMode::Binary => "binary",
        HeadMode::Multitask => "multitask",
        HeadMode::OneStage => "one_stage",
    }
}

fn discover(ctx: &Ctx) -> Result<Vec<PathBuf>, CliError> {
    if let Some(list) = &ctx.cfg.checkpoints {
        return Ok(list.clone());
    }
    let dir = std::fs::read_dir(&ctx.out).map_err(|e| camtrap_core::Error::io(&ctx.out, e))?;
    let mut found: Vec<PathBuf> = dir
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".ckpt.json"))
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(CliError::Data(format!("no checkpoints in {}", ctx.out.display())));
    }
    Ok(found)
}

struct Group {
    layout: HeadLayout,
    names: Vec<String>,
    members: Vec<(String, Checkpoint)>,
}

fn check_compat(c: &Checkpoint, data: &Dataset, name: &str) -> Result<(), CliError> {
    let expected = class_names(&c.layout, data.taxonomy());
    if c.class_names != expected {
        return Err(CliError::Data(format!(
            "{name}: classes do not match the manifest taxonomy"
        )));
    }
    if data.feature_dim().is_some_and(|d| d != c.network.input_dim()) {
        return Err(CliError::Data(format!(
            "{name}: expects {} features, manifest has {}",
            c.network.input_dim(),
            data.feature_dim().unwrap_or(0)
        )));
    }
    Ok(())
}

/// Member-by-image predictions.
fn predict(members: &[(String, Checkpoint)], images: &[&ImageRecord]) -> Result<Vec<Vec<Prediction>>, CliError> {
    members
        .iter()
        .map(|(_, c)| {
            let xs = images
                .iter()
                .map(|i| c.prepare(&i.features))
                .collect::<camtrap_core::Result<Vec<_>>>()?;
            Ok(c.network.predict_batch(&xs)?)
        })
        .collect()
}

fn ensemble(per_member: &[Vec<Prediction>]) -> Result<Vec<Prediction>, CliError> {
    let n = per_member[0].len();
    (0..n)
        .map(|i| {
            let preds: Vec<Prediction> = per_member.iter().map(|m| m[i].clone()).collect();
            Ok(average(&preds)?)
        })
        .collect()
}

fn label_of(img: &ImageRecord) -> Result<&LabelSet, CliError> {
    img.label
        .as_ref()
        .ok_or_else(|| CliError::Data(format!("image {} has no label", img.image_id)))
}

fn report_for(
    layout: &HeadLayout,
    names: &[String],
    preds: &[Prediction],
    labels: &[&LabelSet],
) -> Result<EvalReport, CliError> {
    let mut primary = Vec::with_capacity(preds.len());
    let mut truth = Vec::with_capacity(preds.len());
    for (p, l) in preds.iter().zip(labels) {
        primary.push(p.primary());
        truth.push(layout.target(l)?.primary().expect("primary target"));
    }
    let mut report = EvalReport::classification(&primary, &truth, names.to_vec())?;
    if layout.mode == HeadMode::Multitask {
        let counts: Vec<Vec<f64>> = preds.iter().map(|p| p.heads()[1].clone()).collect();
        let bins: Vec<usize> = labels.iter().map(|l| l.count.map_or(0, |c| c.0)).collect();
        report = report.with_counts(&counts, &bins)?;
        let (mut ap, mut al) = (Vec::new(), Vec::new());
        for (p, l) in preds.iter().zip(labels) {
            if let (Prediction::MultiTask(m), Some(a)) = (p, l.attributes) {
                ap.push(m.attributes.clone());
                al.push(a.to_array().to_vec());
            }
        }
        if !ap.is_empty() {
            report = report.with_multilabel(&ap, &al, MultilabelAveraging::Examples)?;
        }
    }
    Ok(report)
}

fn write_report(ctx: &Ctx, stem: &str, report: &EvalReport) -> Result<(), CliError> {
    report.write_json(ctx.path(&format!("{stem}.json")))?;
    ctx.write(&format!("{stem}_confusion.csv"), &report.confusion_csv()?)?;
    ctx.write(&format!("{stem}_per_class.csv"), &report.per_class_csv()?)?;
    Ok(())
}

fn test_set(mode: HeadMode, test: &Dataset) -> Dataset {
    match mode {
        HeadMode::Multitask => test.non_empty(),
        _ => test.clone(),
    }
}

pub fn run(ctx: &Ctx) -> Result<EvalSummary, CliError> {
    let data = ctx.load_dataset()?;
    let (_, test) = ctx.split(&data)?;

    let mut groups: BTreeMap<&'static str, Group> = BTreeMap::new();
    for path in discover(ctx)? {
        let name = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        let c = Checkpoint::load(&path)?;
        check_compat(&c, &data, &name)?;
        let g = groups.entry(mode_name(c.layout.mode)).or_insert_with(|| Group {
            layout: c.layout.clone(),
            names: c.class_names.clone(),
            members: Vec::new(),
        });
        if g.layout != c.layout {
            return Err(CliError::Data(format!(
                "{name}: layout differs from other {} checkpoints",
                mode_name(c.layout.mode)
            )));
        }
        g.members.push((name, c));
    }

    let mut modes = Vec::new();
    for (mname, g) in &groups {
        let ds = test_set(g.layout.mode, &test);
        let images: Vec<&ImageRecord> = ds.images().collect();
        if images.is_empty() {
            return Err(CliError::Data(format!("no test images for {mname}")));
        }
        let labels = images.iter().map(|i| label_of(i)).collect::<Result<Vec<_>, _>>()?;
        let per_member = predict(&g.members, &images)?;
        let preds = ensemble(&per_member)?;

        let image_report = report_for(&g.layout, &g.names, &preds, &labels)?;
        write_report(ctx, &format!("eval_{mname}_image"), &image_report)?;
        let mut member_top1 = Vec::new();
        for (i, mp) in per_member.iter().enumerate() {
            let r = report_for(&g.layout, &g.names, mp, &labels)?;
            member_top1.push(r.top1);
            if g.members.len() > 1 {
                r.write_json(ctx.path(&format!("eval_{mname}_member{i}_image.json")))?;
            }
        }
        let recs: Vec<_> = images
            .iter()
            .zip(&preds)
            .flat_map(|(img, p)| to_records(RecordKey::Image, &img.image_id, &g.layout, p))
            .collect();
        write_records(ctx.path(&format!("predictions_{mname}.jsonl")), &recs)?;

        let mut event_top1 = None;
        if ds.events().iter().any(|e| e.images.len() > 1) {
            let mut offset = 0;
            let (mut ev_preds, mut ev_labels, mut ev_recs) = (Vec::new(), Vec::new(), Vec::new());
            for e in ds.events() {
                let n = e.images.len();
                let p = camtrap_core::ensemble::aggregate_event(&preds[offset..offset + n])?;
                offset += n;
                ev_recs.extend(to_records(RecordKey::Event, &e.event_id, &g.layout, &p));
                ev_preds.push(p);
                ev_labels.push(&e.label);
            }
            let ev_report = report_for(&g.layout, &g.names, &ev_preds, &ev_labels)?;
            write_report(ctx, &format!("eval_{mname}_event"), &ev_report)?;
            write_records(ctx.path(&format!("predictions_{mname}_events.jsonl")), &ev_recs)?;
            event_top1 = Some(ev_report.top1);
        }

        modes.push(ModeSummary {
            mode: g.layout.mode,
            checkpoints: g.members.iter().map(|(n, _)| n.clone()).collect(),
            n_images: images.len(),
            n_events: ds.events().len(),
            image_top1: image_report.top1,
            image_top5: image_report.top5,
            event_top1,
            within_one_bin: image_report.within_one_bin,
            member_image_top1: member_top1,
        });
    }

    let comparison = match (groups.get("binary"), groups.get("multitask"), groups.get("one_stage")) {
        (Some(b), Some(m), Some(o)) => Some(compare(b, m, o, &test)?),
        _ => None,
    };
    let summary = EvalSummary { modes, comparison };
    ctx.write_json("eval_summary.json", &summary)?;
    ctx.write_resolved("eval")?;
    for m in &summary.modes {
        let ev = m
            .event_top1
            .map(|e| format!(", event top-1 {}", super::pct(e)))
            .unwrap_or_default();
        println!(
            "{} ({} model{}): image top-1 {}{ev}",
            mode_name(m.mode),
            m.checkpoints.len(),
            if m.checkpoints.len() == 1 { "" } else { "s" },
            super::pct(m.image_top1)
        );
    }
    if let Some(c) = &summary.comparison {
        println!(
            "two-stage {} vs one-stage {} over {} images (diagnostic)",
            super::pct(c.two_stage_top1),
            super::pct(c.one_stage_top1),
            c.n_images
        );
    }
    Ok(summary)
}

/// Stage 1 gates every test image; animals get stage 2's species.
fn compare(binary: &Group, multi: &Group, one: &Group, test: &Dataset) -> Result<Comparison, CliError> {
    let images: Vec<&ImageRecord> = test.images().collect();
    let k = test.taxonomy().len();
    let gate = ensemble(&predict(&binary.members, &images)?)?;
    let species = ensemble(&predict(&multi.members, &images)?)?;
    let single = ensemble(&predict(&one.members, &images)?)?;
    let (mut two_hits, mut one_hits) = (0usize, 0usize);
    for (((img, g), s), o) in images.iter().zip(&gate).zip(&species).zip(&single) {
        let l = label_of(img)?;
        let truth = if l.empty { k } else { l.species.map_or(k, |s| s.0) };
        let two = if argmax(&g.primary()) == BINARY_EMPTY {
            k
        } else {
            argmax(&s.primary())
        };
        two_hits += (two == truth) as usize;
        one_hits += (argmax(&o.primary()) == truth) as usize;
    }
    let n = images.len();
    Ok(Comparison {
        n_images: n,
        two_stage_top1: two_hits as f64 / n as f64,
        one_stage_top1: one_hits as f64 / n as f64,
    })
}
