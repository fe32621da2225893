//! Top-k, counting, per-class, confusion and multi-label metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{argmax, ATTRIBUTE_NAMES};
use crate::ensemble::top_n;
use crate::error::{Error, Result};

fn same_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: a, actual: b })
    }
}

fn nonempty(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::EmptyInput("no examples".into()))
    } else {
        Ok(())
    }
}

/// Fraction of examples whose true class is among the `k` most probable.
pub fn topk_accuracy(preds: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64> {
    same_len(preds.len(), labels.len())?;
    nonempty(preds.len())?;
    if k == 0 {
        return Err(Error::OutOfRange("k must be at least 1".into()));
    }
    let mut hits = 0;
    for (p, &y) in preds.iter().zip(labels) {
        if top_n(p, k.min(p.len()))?.contains(&y) {
            hits += 1;
        }
    }
    Ok(hits as f64 / preds.len() as f64)
}

/// Fraction whose most probable count bin is within one of the true bin.
pub fn within_one_bin(preds: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    same_len(preds.len(), labels.len())?;
    nonempty(preds.len())?;
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(p, &y)| argmax(p).abs_diff(y) <= 1)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultilabelScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultilabelAveraging {
    /// Mean of the per-example ratios.
    #[default]
    Examples,
    /// Ratios of the totals pooled over every example and attribute.
    Pooled,
}

fn ratio(num: usize, den: usize, both_empty: bool) -> f64 {
    if den == 0 {
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// Attribute metrics with each probability binarized at `> 0.5`.
pub fn multilabel_metrics(
    probs: &[Vec<f64>],
    labels: &[Vec<bool>],
    averaging: MultilabelAveraging,
) -> Result<MultilabelScores> {
    same_len(probs.len(), labels.len())?;
    nonempty(probs.len())?;
    let (mut acc, mut prec, mut rec) = (0.0, 0.0, 0.0);
    let (mut inter_t, mut union_t, mut pred_t, mut true_t) = (0, 0, 0, 0);
    for (p, y) in probs.iter().zip(labels) {
        same_len(y.len(), p.len())?;
        let (mut inter, mut union, mut z_n, mut y_n) = (0, 0, 0, 0);
        for (&pv, &yv) in p.iter().zip(y) {
            let zv = pv > 0.5;
            inter += (zv && yv) as usize;
            union += (zv || yv) as usize;
            z_n += zv as usize;
            y_n += yv as usize;
        }
        acc += ratio(inter, union, true);
        prec += ratio(inter, z_n, y_n == 0);
        rec += ratio(inter, y_n, z_n == 0);
        inter_t += inter;
        union_t += union;
        pred_t += z_n;
        true_t += y_n;
    }
    let n = probs.len() as f64;
    Ok(match averaging {
        MultilabelAveraging::Examples => MultilabelScores {
            accuracy: acc / n,
            precision: prec / n,
            recall: rec / n,
        },
        MultilabelAveraging::Pooled => MultilabelScores {
            accuracy: ratio(inter_t, union_t, true),
            precision: ratio(inter_t, pred_t, true_t == 0),
            recall: ratio(inter_t, true_t, pred_t == 0),
        },
    })
}

/// Top-1 accuracy per true class; `None` for classes with no examples.
pub fn per_class_accuracy(preds: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<Vec<Option<f64>>> {
    let cm = confusion_matrix(preds, labels, n_classes)?;
    Ok(cm
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect())
}

/// `m[true][predicted]` counts.
pub fn confusion_matrix(preds: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    same_len(preds.len(), labels.len())?;
    let mut m = vec![vec![0usize; n_classes]; n_classes];
    for (p, &y) in preds.iter().zip(labels) {
        same_len(n_classes, p.len())?;
        if y >= n_classes {
            return Err(Error::OutOfRange(format!("label {y} with {n_classes} classes")));
        }
        m[y][argmax(p)] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_examples: usize,
    pub top1: f64,
    pub top5: f64,
    pub within_one_bin: Option<f64>,
    pub class_names: Vec<String>,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub confusion: Vec<Vec<usize>>,
    pub multilabel: Option<MultilabelScores>,
}

impl EvalReport {
    /// Classification report over one head.
    pub fn classification(preds: &[Vec<f64>], labels: &[usize], class_names: Vec<String>) -> Result<Self> {
        let k = class_names.len();
        Ok(Self {
            n_examples: preds.len(),
            top1: topk_accuracy(preds, labels, 1)?,
            top5: topk_accuracy(preds, labels, 5.min(k.max(1)))?,
            within_one_bin: None,
            per_class_accuracy: per_class_accuracy(preds, labels, k)?,
            confusion: confusion_matrix(preds, labels, k)?,
            class_names,
            multilabel: None,
        })
    }

    pub fn with_counts(mut self, preds: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        self.within_one_bin = Some(within_one_bin(preds, labels)?);
        Ok(self)
    }

    pub fn with_multilabel(
        mut self,
        probs: &[Vec<f64>],
        labels: &[Vec<bool>],
        averaging: MultilabelAveraging,
    ) -> Result<Self> {
        self.multilabel = Some(multilabel_metrics(probs, labels, averaging)?);
        Ok(self)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), serde_json::to_string_pretty(self)?.as_bytes())
    }

    /// Header row of predicted class names, one row per true class.
    pub fn confusion_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(self.class_names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(usize::to_string));
            w.write_record(&rec)?;
        }
        finish_csv(w)
    }

    /// `class,examples,accuracy`; absent classes have an empty accuracy.
    pub fn per_class_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "examples", "accuracy"])?;
        for ((name, acc), row) in self
            .class_names
            .iter()
            .zip(&self.per_class_accuracy)
            .zip(&self.confusion)
        {
            let n: usize = row.iter().sum();
            w.write_record([
                name.clone(),
                n.to_string(),
                acc.map(|a| a.to_string()).unwrap_or_default(),
            ])?;
        }
        finish_csv(w)
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Numeric(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Numeric(e.to_string()))
}

/// Attribute names in head order.
pub fn attribute_names() -> Vec<String> {
    ATTRIBUTE_NAMES.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_hot(k: usize, c: usize) -> Vec<f64> {
        let mut v = vec![0.0; k];
        v[c] = 1.0;
        v
    }

    #[test]
    fn topk_cases() {
        let preds: Vec<Vec<f64>> = (0..4).map(|c| one_hot(4, c)).collect();
        assert_eq!(topk_accuracy(&preds, &[0, 1, 2, 3], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&preds, &[0, 1, 2, 0], 1).unwrap(), 0.75);
        assert_eq!(topk_accuracy(&preds, &[3, 2, 1, 0], 4).unwrap(), 1.0);
        assert!(topk_accuracy(&preds, &[0, 1], 1).is_err());
        assert!(topk_accuracy(&preds, &[0, 1, 2, 3], 0).is_err());
    }

    #[test]
    fn within_one_bin_cases() {
        let p = vec![one_hot(12, 4), one_hot(12, 11), one_hot(12, 2)];
        assert_abs_diff_eq!(within_one_bin(&p, &[3, 10, 0]).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn multilabel_cases() {
        let y = vec![vec![false, false, true, true, false, false]];
        let p = vec![vec![0.1, 0.1, 0.9, 0.4, 0.1, 0.1]];
        let s = multilabel_metrics(&p, &y, MultilabelAveraging::Examples).unwrap();
        assert_eq!((s.accuracy, s.precision, s.recall), (0.5, 1.0, 0.5));

        let s = multilabel_metrics(&[vec![0.2; 6]], &[vec![false; 6]], MultilabelAveraging::Examples).unwrap();
        assert_eq!((s.accuracy, s.precision, s.recall), (1.0, 1.0, 1.0));

        let s = multilabel_metrics(&[vec![0.5; 6]], &[vec![true; 6]], MultilabelAveraging::Examples).unwrap();
        assert_eq!((s.accuracy, s.precision, s.recall), (0.0, 0.0, 0.0));
    }

    #[test]
    fn pooled_differs_from_example_mean() {
        let y = vec![vec![true, false], vec![true, true]];
        let p = vec![vec![0.9, 0.1], vec![0.9, 0.1]];
        let e = multilabel_metrics(&p, &y, MultilabelAveraging::Examples).unwrap();
        let q = multilabel_metrics(&p, &y, MultilabelAveraging::Pooled).unwrap();
        assert_abs_diff_eq!(e.recall, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(q.recall, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn per_class_and_confusion() {
        let preds = vec![
            one_hot(3, 0),
            one_hot(3, 0),
            one_hot(3, 1),
            one_hot(3, 2),
            one_hot(3, 1),
        ];
        let labels = [0, 0, 0, 0, 1];
        let pc = per_class_accuracy(&preds, &labels, 3).unwrap();
        assert_eq!(pc, vec![Some(0.5), Some(1.0), None]);

        let cm = confusion_matrix(&preds[2..], &[1, 2, 0], 3).unwrap();
        assert_eq!(cm, vec![vec![0, 1, 0], vec![0, 1, 0], vec![0, 0, 1]]);
    }

    #[test]
    fn report_exports() {
        let preds = vec![one_hot(2, 0), one_hot(2, 1), one_hot(2, 1)];
        let r = EvalReport::classification(&preds, &[0, 1, 0], vec!["a".into(), "b".into()]).unwrap();
        assert_abs_diff_eq!(r.top1, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(r.top5, 1.0);
        assert_eq!(r.confusion_csv().unwrap(), "true\\predicted,a,b\na,1,1\nb,0,1\n");
        assert_eq!(r.per_class_csv().unwrap(), "class,examples,accuracy\na,2,0.5\nb,1,1\n");
    }
}
