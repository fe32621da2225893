//! Averaging predictions across ensemble members and across the images of a
//! capture event, plus the line-oriented prediction file format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::MultiTaskPrediction;
use crate::error::{Error, Result};
use crate::model::{HeadLayout, Prediction};

fn mean_vectors<'a>(rows: impl Iterator<Item = &'a [f64]>, n: usize) -> Result<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    for r in rows {
        match &mut acc {
            None => acc = Some(r.to_vec()),
            Some(a) => {
                if a.len() != r.len() {
                    return Err(Error::DimensionMismatch {
                        expected: a.len(),
                        actual: r.len(),
                    });
                }
                a.iter_mut().zip(r).for_each(|(x, y)| *x += y);
            }
        }
    }
    let mut a = acc.ok_or_else(|| Error::EmptyInput("no predictions to average".into()))?;
    a.iter_mut().for_each(|x| *x /= n as f64);
    Ok(a)
}

/// Elementwise mean of every head.
pub fn average_predictions(preds: &[MultiTaskPrediction]) -> Result<MultiTaskPrediction> {
    let n = preds.len();
    Ok(MultiTaskPrediction {
        species: mean_vectors(preds.iter().map(|p| p.species.as_slice()), n)?,
        count: mean_vectors(preds.iter().map(|p| p.count.as_slice()), n)?,
        attributes: mean_vectors(preds.iter().map(|p| p.attributes.as_slice()), n)?,
    })
}

/// [`average_predictions`] for any layout; all members must share one.
pub fn average(preds: &[Prediction]) -> Result<Prediction> {
    let first = preds
        .first()
        .ok_or_else(|| Error::EmptyInput("no predictions to average".into()))?;
    let n = preds.len();
    let mismatch = || Error::Integrity("members use different head layouts".into());
    Ok(match first {
        Prediction::MultiTask(_) => {
            let mut m = Vec::with_capacity(n);
            for p in preds {
                match p {
                    Prediction::MultiTask(x) => m.push(x.clone()),
                    _ => return Err(mismatch()),
                }
            }
            Prediction::MultiTask(average_predictions(&m)?)
        }
        Prediction::Binary(_) => {
            if !preds.iter().all(|p| matches!(p, Prediction::Binary(_))) {
                return Err(mismatch());
            }
            let prim: Vec<Vec<f64>> = preds.iter().map(Prediction::primary).collect();
            let v = mean_vectors(prim.iter().map(Vec::as_slice), n)?;
            HeadLayout::binary().to_prediction(vec![v])
        }
        Prediction::OneStage(_) => {
            let mut rows = Vec::with_capacity(n);
            for p in preds {
                match p {
                    Prediction::OneStage(v) => rows.push(v.as_slice()),
                    _ => return Err(mismatch()),
                }
            }
            Prediction::OneStage(mean_vectors(rows.into_iter(), n)?)
        }
    })
}

/// The `n` most probable classes, ties broken toward the lower id.
pub fn top_n(probs: &[f64], n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > probs.len() {
        return Err(Error::OutOfRange(format!("n = {n} with {} classes", probs.len())));
    }
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(n);
    Ok(idx)
}

/// Event-level prediction: the mean over the event's image predictions.
pub fn aggregate_event(image_preds: &[Prediction]) -> Result<Prediction> {
    average(image_preds)
}

/// One line of a prediction file: one head of one image or event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_id: Option<String>,
    pub head: String,
    pub probs: Vec<f64>,
}

impl PredictionRecord {
    pub fn id(&self) -> Option<&str> {
        self.image_id.as_deref().or(self.event_id.as_deref())
    }
}

/// Whether records are keyed by image or by event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKey {
    Image,
    Event,
}

/// One record per head; attribute heads are written as `[1 - p, p]`.
pub fn to_records(key: RecordKey, id: &str, layout: &HeadLayout, pred: &Prediction) -> Vec<PredictionRecord> {
    layout
        .head_names()
        .into_iter()
        .zip(pred.heads())
        .map(|(head, probs)| PredictionRecord {
            image_id: (key == RecordKey::Image).then(|| id.to_string()),
            event_id: (key == RecordKey::Event).then(|| id.to_string()),
            head,
            probs,
        })
        .collect()
}

/// Regroups records into predictions, keyed by id in sorted order.
pub fn from_records(layout: &HeadLayout, records: &[PredictionRecord]) -> Result<BTreeMap<String, Prediction>> {
    let names = layout.head_names();
    let mut grouped: BTreeMap<String, Vec<Option<Vec<f64>>>> = BTreeMap::new();
    for r in records {
        let id = r
            .id()
            .ok_or_else(|| Error::Integrity("prediction record without image_id or event_id".into()))?;
        let h = names
            .iter()
            .position(|n| *n == r.head)
            .ok_or_else(|| Error::Integrity(format!("unknown head `{}`", r.head)))?;
        if r.probs.len() != layout.heads[h] {
            return Err(Error::DimensionMismatch {
                expected: layout.heads[h],
                actual: r.probs.len(),
            });
        }
        let slots = grouped.entry(id.to_string()).or_insert_with(|| vec![None; names.len()]);
        if slots[h].replace(r.probs.clone()).is_some() {
            return Err(Error::Integrity(format!("duplicate `{}` head for `{id}`", r.head)));
        }
    }
    grouped
        .into_iter()
        .map(|(id, slots)| {
            let heads: Option<Vec<Vec<f64>>> = slots.into_iter().collect();
            let heads = heads.ok_or_else(|| Error::Integrity(format!("missing heads for `{id}`")))?;
            Ok((id, layout.to_prediction(heads)))
        })
        .collect()
}

pub fn write_records(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    crate::io::write_atomic(path.as_ref(), &buf)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
