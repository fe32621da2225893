use std::fmt::Write as _;

use super::eval::EvalSummary;
use super::sweep::SweepSummary;
use super::{pct, read_json, Ctx};
use crate::CliError;

/// Published full-scale results, shown for orientation only.
const PUBLISHED_REFERENCE: [(&str, &str); 10] = [
    ("Empty vs. animal, VGG top-1", "96.8%"),
    ("Species, ensemble top-1", "94.9%"),
    ("Species, ensemble top-5", "99.1%"),
    ("Species, ResNet-152 top-1", "93.8%"),
    ("Counting, ensemble top-1", "63.1%"),
    ("Counting, ensemble within one bin", "84.7%"),
    (
        "Attributes, ensemble accuracy / precision / recall",
        "76.2% / 86.1% / 81.1%",
    ),
    ("Species automation at 96.6% human accuracy", "97.2% at 43% confidence"),
    ("Total automated (species)", "99.3%"),
    ("Labor saved", "over 17,000 hours, 8.4 years"),
];

pub fn run(ctx: &Ctx) -> Result<String, CliError> {
    let eval_path = ctx.path("eval_summary.json");
    let sweep_path = ctx.path("sweep_summary.json");
    let eval: Option<EvalSummary> = eval_path.exists().then(|| read_json(&eval_path)).transpose()?;
    let sweep: Option<SweepSummary> = sweep_path.exists().then(|| read_json(&sweep_path)).transpose()?;
    if eval.is_none() && sweep.is_none() {
        return Err(CliError::Data(format!(
            "nothing to report in {}: run eval or sweep first",
            ctx.out.display()
        )));
    }

    let mut md = String::new();
    let _ = writeln!(md, "# Run report\n");
    let _ = writeln!(md, "Generated by camtrap {}.\n", env!("CARGO_PKG_VERSION"));

    if let Some(e) = &eval {
        let _ = writeln!(md, "## Evaluation\n");
        let _ = writeln!(
            md,
            "| model | checkpoints | images | image top-1 | image top-5 | event top-1 | within one bin |"
        );
        let _ = writeln!(md, "|---|---|---|---|---|---|---|");
        for m in &e.modes {
            let opt = |v: Option<f64>| v.map_or_else(|| "n/a".into(), pct);
            let _ = writeln!(
                md,
                "| {:?} | {} | {} | {} | {} | {} | {} |",
                m.mode,
                m.checkpoints.len(),
                m.n_images,
                pct(m.image_top1),
                pct(m.image_top5),
                opt(m.event_top1),
                opt(m.within_one_bin)
            );
        }
        if let Some(c) = &e.comparison {
            let _ = writeln!(
                md,
                "\nTwo-stage vs. one-stage over {} test images (diagnostic, not a claim): {} vs. {}.",
                c.n_images,
                pct(c.two_stage_top1),
                pct(c.one_stage_top1)
            );
        }
        let _ = writeln!(md);
    }

    if let Some(s) = &sweep {
        let _ = writeln!(md, "## Automation\n");
        let _ = writeln!(md, "Empty share: {} ({}).\n", pct(s.empty_share), s.empty_share_source);
        for (name, t) in [("Stage 1", &s.stage1), ("Species", &s.species), ("Count", &s.count)] {
            let Some(t) = t else { continue };
            let line = match (t.automated_fraction, &t.summary) {
                (Some(f), Some(x)) => format!(
                    "{} automated at threshold {:.2} (retained accuracy {}, target {})",
                    pct(f),
                    x.matched_threshold,
                    pct(x.retained_accuracy),
                    pct(t.target_accuracy)
                ),
                (Some(f), None) => format!("{} automated ({})", pct(f), t.source),
                (None, _) => format!(
                    "not automatable at target {} (max achievable {})",
                    pct(t.target_accuracy),
                    t.max_achievable.map_or_else(|| "n/a".into(), pct)
                ),
            };
            let _ = writeln!(md, "- {name}: {line}");
        }
        if let Some(v) = s.species_total_automated {
            let _ = writeln!(md, "- Total automated (species): {}", pct(v));
        }
        if let Some(v) = s.count_total_automated {
            let _ = writeln!(md, "- Total automated (count): {}", pct(v));
        }
        if let Some(l) = &s.labor {
            let _ = writeln!(
                md,
                "- Labor saved: {:.0} hours ({:.2} person-years)",
                l.hours, l.person_years
            );
        }
        let _ = writeln!(md);
    }

    let _ = writeln!(md, "## Reference numbers\n");
    let _ = writeln!(
        md,
        "Published results on the full Snapshot Serengeti corpus (paper reference, not reproduced). \
         The figures above come from this run's data and are not comparable.\n"
    );
    let _ = writeln!(md, "| quantity | paper reference, not reproduced |");
    let _ = writeln!(md, "|---|---|");
    for (k, v) in PUBLISHED_REFERENCE {
        let _ = writeln!(md, "| {k} | {v} |");
    }

    ctx.write("report.md", &md)?;
    ctx.write_resolved("report")?;
    println!("wrote {}", ctx.path("report.md").display());
    Ok(md)
}
