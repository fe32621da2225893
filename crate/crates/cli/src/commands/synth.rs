use camtrap_core::manifest::{write_manifest, DatasetStats};
use camtrap_core::synthgen::generate;
use serde::Serialize;

use super::Ctx;
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct SynthSummary {
    pub events: usize,
    pub images: usize,
    pub empty_event_fraction: f64,
    pub events_per_class: Vec<usize>,
    pub images_per_class: Vec<usize>,
}

impl SynthSummary {
    pub fn from_stats(s: &DatasetStats) -> Self {
        Self {
            events: s.total_events,
            images: s.total_images,
            empty_event_fraction: s.empty_events as f64 / s.total_events.max(1) as f64,
            events_per_class: s.events_per_class.clone(),
            images_per_class: s.images_per_class.clone(),
        }
    }
}

pub fn run(ctx: &Ctx) -> Result<SynthSummary, CliError> {
    let d = generate(&ctx.cfg.synth())?;
    write_manifest(&d, ctx.cfg.manifest_path(&ctx.out))?;
    let summary = SynthSummary::from_stats(d.stats());
    ctx.write_json("synth_summary.json", &summary)?;
    ctx.write_resolved("synth")?;
    println!(
        "{} events, {} images, {} empty events",
        summary.events,
        summary.images,
        super::pct(summary.empty_event_fraction)
    );
    for (name, n) in d.taxonomy().names().iter().zip(&summary.events_per_class) {
        println!("  {name:>10} {n}");
    }
    Ok(summary)
}
