use camtrap_core::domain::Taxonomy;
use camtrap_core::imbalance::{
    class_weights, BatchSource, EmphasisQueues, EmphasisSampler, ImbalanceMethod, Oversampler, UniformSampler,
};
use camtrap_core::manifest::{balance_empty, subsample_empty, Dataset};
use camtrap_core::model::{
    apply_class_weights, examples_from, fit_with, Checkpoint, EpochRecord, Example, HeadLayout, HeadMode, ModelState,
};
use camtrap_core::par::{map_range, Execution};
use camtrap_core::prep::ChannelStats;
use serde::{Deserialize, Serialize};

use super::Ctx;
use crate::config::Stage;
use crate::CliError;

/// Training and model-selection sets for one stage.
pub struct StageData {
    pub layout: HeadLayout,
    pub train: Dataset,
    pub test: Dataset,
}

/// Stage 1 sees every non-empty image plus as many empties; stage 2 sees
/// non-empty images only; the one-stage model sees empties cut down to the
/// size of the largest species.
pub fn stage_data(stage: Stage, train: &Dataset, test: &Dataset, seed: u64) -> StageData {
    let k = train.taxonomy().len();
    match stage {
        Stage::Stage1 => StageData {
            layout: HeadLayout::binary(),
            train: balance_empty(train, seed).dataset,
            test: test.clone(),
        },
        Stage::Stage2 => StageData {
            layout: HeadLayout::multitask(k),
            train: train.non_empty(),
            test: test.non_empty(),
        },
        Stage::OneStage => {
            let largest = train.stats().images_per_class.iter().copied().max().unwrap_or(0);
            StageData {
                layout: HeadLayout::one_stage(k),
                train: subsample_empty(train, largest, seed).dataset,
                test: test.clone(),
            }
        }
    }
}

/// Names of the primary head's classes.
pub fn class_names(layout: &HeadLayout, taxonomy: &Taxonomy) -> Vec<String> {
    match layout.mode {
        HeadMode::Binary => vec!["animal".into(), "empty".into()],
        HeadMode::Multitask => taxonomy.names().to_vec(),
        HeadMode::OneStage => {
            let mut v = taxonomy.names().to_vec();
            v.push("empty".into());
            v
        }
    }
}

fn sampler(
    method: ImbalanceMethod,
    examples: &mut [Example],
    n_classes: usize,
    ctx: &Ctx,
) -> Result<Box<dyn BatchSource>, CliError> {
    let n = examples.len();
    let classes: Vec<usize> = examples
        .iter()
        .map(|e| e.target.primary().expect("primary target"))
        .collect();
    Ok(match method {
        ImbalanceMethod::None => Box::new(UniformSampler::new(n)?),
        ImbalanceMethod::WeightedLoss => {
            let mut counts = vec![0usize; n_classes];
            classes.iter().for_each(|&c| counts[c] += 1);
            let w = class_weights(&counts)?;
            apply_class_weights(examples, &w, ctx.cfg.weight_all_heads)?;
            Box::new(UniformSampler::new(n)?)
        }
        ImbalanceMethod::Oversample => Box::new(Oversampler::new(&classes, n_classes)?),
        ImbalanceMethod::Emphasis => Box::new(EmphasisSampler::new(
            n,
            EmphasisQueues::new(ctx.cfg.p_top1, ctx.cfg.p_top5, n)?,
        )?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub member: usize,
    pub seed: u64,
    pub checkpoint: String,
    pub log: String,
    pub best_epoch: usize,
    pub best_test_top1: f64,
}

fn log_csv(history: &[EpochRecord], best_epoch: usize) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Core(e.into());
    w.write_record([
        "epoch",
        "learning_rate",
        "weight_decay",
        "mean_loss",
        "train_top1",
        "test_top1",
        "extra_batches",
        "best",
    ])
    .map_err(io)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.learning_rate.to_string(),
            r.weight_decay.to_string(),
            r.mean_loss.to_string(),
            r.train_top1.to_string(),
            r.test_top1.to_string(),
            r.extra_batches.to_string(),
            (r.epoch == best_epoch).to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Data(e.to_string()))
}

pub fn run(ctx: &Ctx) -> Result<Vec<MemberSummary>, CliError> {
    let cfg = &ctx.cfg;
    let data = ctx.load_dataset()?;
    let (train, test) = ctx.split(&data)?;
    let stage = stage_data(cfg.stage, &train, &test, cfg.seed);
    if stage.train.events().is_empty() || stage.test.events().is_empty() {
        return Err(CliError::Data(format!(
            "{} has no training or test images",
            cfg.stage.name()
        )));
    }
    let dim = data
        .feature_dim()
        .ok_or_else(|| CliError::Data("manifest has no images".into()))?;
    let stats = ChannelStats::from_vectors(stage.train.images().map(|i| i.features.as_slice()))?;
    let base_train = examples_from(&stage.train, &stage.layout, Some(&stats))?;
    let test_examples = examples_from(&stage.test, &stage.layout, Some(&stats))?;
    let names = class_names(&stage.layout, data.taxonomy());
    let members = cfg.ensemble_members;
    let inner = if members > 1 {
        Execution::Sequential
    } else {
        Execution::default()
    };

    let results = map_range(Execution::default(), members, |m| -> Result<MemberSummary, CliError> {
        let seed = cfg.seed.wrapping_add(m as u64);
        let tcfg = cfg.train_config(seed);
        let mut examples = base_train.clone();
        let mut source = sampler(cfg.imbalance, &mut examples, stage.layout.heads[0], ctx)?;
        let state = ModelState::new(dim, stage.layout.clone(), &tcfg)?;
        let state = fit_with(state, &examples, &test_examples, &tcfg, source.as_mut(), inner)?;
        let best = state.best.clone().expect("at least one epoch");
        let prefix = format!("{}_m{m}", cfg.stage.name());
        let ckpt_name = format!("{prefix}.ckpt.json");
        let log_name = format!("{prefix}.log.csv");
        let ckpt = Checkpoint::new(
            best.network,
            tcfg,
            Some(stats.clone()),
            best.epoch,
            best.test_top1,
            names.clone(),
        );
        ckpt.save(ctx.path(&ckpt_name))?;
        ctx.write(&log_name, &log_csv(&state.history, best.epoch)?)?;
        Ok(MemberSummary {
            member: m,
            seed,
            checkpoint: ckpt_name,
            log: log_name,
            best_epoch: best.epoch,
            best_test_top1: best.test_top1,
        })
    });
    let mut out = Vec::with_capacity(members);
    for r in results {
        out.push(r?);
    }
    ctx.write_json(&format!("train_{}.json", cfg.stage.name()), &out)?;
    ctx.write_resolved(&format!("train_{}", cfg.stage.name()))?;
    for m in &out {
        println!(
            "{} member {} (seed {}): best epoch {}, test top-1 {}",
            cfg.stage.name(),
            m.member,
            m.seed,
            m.best_epoch,
            super::pct(m.best_test_top1)
        );
    }
    Ok(out)
}
