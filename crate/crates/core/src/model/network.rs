use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Example, HeadLayout, Prediction};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Summed gradients, summed loss and per-example outcomes of one chunk.
type ChunkPartial = (Gradients, f64, Vec<(bool, bool)>);

/// Rows per work unit. Fixed so that parallel and sequential reductions add up
/// the same partial sums in the same order.
const GRAD_CHUNK: usize = 16;
const PREDICT_CHUNK: usize = 64;

/// Fully connected layer; `weights` is `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    fn affine(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }

    fn all_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Same shapes as the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn output_layer(&self) -> &Dense {
        self.layers.last().expect("at least one layer")
    }

    pub fn max_abs_output(&self) -> f64 {
        let out = self.output_layer();
        out.weights
            .iter()
            .chain(out.bias.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Gradients of the mean batch loss plus what the batch looked like before
/// the update.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub gradients: Gradients,
    pub mean_loss: f64,
    /// `(top1_correct, top5_correct)` on the primary head, per batch row.
    pub outcomes: Vec<(bool, bool)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layout: HeadLayout,
    layers: Vec<Dense>,
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    z.iter().map(|v| v - lse).collect()
}

/// Rank of `t` under descending probability, ties toward lower index.
fn rank_of(p: &[f64], t: usize) -> usize {
    p.iter()
        .enumerate()
        .filter(|&(j, &v)| v > p[t] || (v == p[t] && j < t))
        .count()
}

impl Network {
    /// Uniform `[-a, a]` weights with `a = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], layout: HeadLayout, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(input_dim, hidden, layout)?;
        for layer in &mut net.layers {
            let a = (6.0 / (layer.inputs() + layer.outputs()) as f64).sqrt();
            layer.weights.mapv_inplace(|_| rng.random_range(-a..=a));
        }
        Ok(net)
    }

    pub fn zeros(input_dim: usize, hidden: &[usize], layout: HeadLayout) -> Result<Self> {
        layout.validate()?;
        if input_dim == 0 {
            return Err(Error::config("input_dim", "must be positive"));
        }
        if hidden.contains(&0) {
            return Err(Error::config("hidden", "layer sizes must be positive"));
        }
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(layout.output_dim());
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self { layout, layers })
    }

    pub fn from_layers(layout: HeadLayout, layers: Vec<Dense>) -> Result<Self> {
        let net = Self { layout, layers };
        net.check_shapes()?;
        Ok(net)
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        self.layout.validate()?;
        let last = self
            .layers
            .last()
            .ok_or_else(|| Error::config("layers", "network has no layers"))?;
        if last.outputs() != self.layout.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.layout.output_dim(),
                actual: last.outputs(),
            });
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::config(
                    "layers",
                    format!("layer {i} output does not feed layer {}", i + 1),
                ));
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::config("layers", "bias length does not match outputs"));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> &HeadLayout {
        &self.layout
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(Dense::all_finite)
    }

    fn matrix<'a>(&self, rows: impl ExactSizeIterator<Item = &'a [f64]>) -> Result<Array2<f64>> {
        let d = self.input_dim();
        let n = rows.len();
        let mut x = Array2::zeros((n, d));
        for (mut row, src) in x.axis_iter_mut(Axis(0)).zip(rows) {
            if src.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: src.len(),
                });
            }
            row.assign(&ndarray::ArrayView1::from(src));
        }
        Ok(x)
    }

    /// Activations of every layer; element 0 is the input, the last element
    /// the output logits.
    fn activations(&self, x: Array2<f64>) -> Result<Vec<Array2<f64>>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(&acts[i].view());
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        if acts.last().is_some_and(|z| z.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric("forward activations".into()));
        }
        Ok(acts)
    }

    /// Per-head log-probabilities for one row of logits.
    fn head_log_probs(&self, logits: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.layout.heads.len());
        let mut o = 0;
        for &k in &self.layout.heads {
            out.push(log_softmax(&logits[o..o + k]));
            o += k;
        }
        out
    }

    fn predictions_for(&self, logits: &Array2<f64>) -> Vec<Prediction> {
        logits
            .axis_iter(Axis(0))
            .map(|row| {
                let row = row.to_vec();
                let probs = self
                    .head_log_probs(&row)
                    .into_iter()
                    .map(|lp| lp.into_iter().map(f64::exp).collect())
                    .collect();
                self.layout.to_prediction(probs)
            })
            .collect()
    }

    pub fn forward(&self, features: &[f64]) -> Result<Prediction> {
        let x = self.matrix(std::iter::once(features))?;
        let acts = self.activations(x)?;
        Ok(self.predictions_for(acts.last().expect("logits")).remove(0))
    }

    pub fn predict_batch(&self, features: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        self.predict_batch_with(features, Execution::default())
    }

    /// One prediction per row, in order.
    pub fn predict_batch_with(&self, features: &[Vec<f64>], exec: Execution) -> Result<Vec<Prediction>> {
        let parts = par::map_chunks(exec, features, PREDICT_CHUNK, |_, chunk| -> Result<Vec<Prediction>> {
            let x = self.matrix(chunk.iter().map(Vec::as_slice))?;
            let acts = self.activations(x)?;
            Ok(self.predictions_for(acts.last().expect("logits")))
        });
        let mut out = Vec::with_capacity(features.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Mean of the per-example losses.
    pub fn mean_loss(&self, batch: &[&Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let x = self.matrix(batch.iter().map(|e| e.features.as_slice()))?;
        let acts = self.activations(x)?;
        let logits = acts.last().expect("logits");
        let mut total = 0.0;
        for (row, ex) in logits.axis_iter(Axis(0)).zip(batch) {
            let lp = self.head_log_probs(&row.to_vec());
            for ((lp, t), w) in lp.iter().zip(&ex.target.classes).zip(&ex.target.weights) {
                if let Some(t) = *t {
                    total -= w * lp[t];
                }
            }
        }
        Ok(total / batch.len() as f64)
    }

    fn chunk_gradients(&self, chunk: &[&Example], scale: f64) -> Result<ChunkPartial> {
        let x = self.matrix(chunk.iter().map(|e| e.features.as_slice()))?;
        let acts = self.activations(x)?;
        let logits = acts.last().expect("logits");
        let mut dz = Array2::zeros(logits.raw_dim());
        let mut loss = 0.0;
        let mut outcomes = Vec::with_capacity(chunk.len());
        for (r, ex) in chunk.iter().enumerate() {
            let lp = self.head_log_probs(&logits.row(r).to_vec());
            let mut o = 0;
            for (h, lp) in lp.iter().enumerate() {
                let k = lp.len();
                if let Some(t) = ex.target.classes[h] {
                    let w = ex.target.weights[h];
                    loss -= w * lp[t];
                    for j in 0..k {
                        let p = lp[j].exp();
                        dz[[r, o + j]] = w * scale * (p - if j == t { 1.0 } else { 0.0 });
                    }
                    if h == 0 {
                        let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
                        let rank = rank_of(&p, t);
                        outcomes.push((rank == 0, rank < 5));
                    }
                } else if h == 0 {
                    outcomes.push((true, true));
                }
                o += k;
            }
        }

        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let input = &acts[l];
            grads.push(Dense {
                weights: dz.t().dot(input),
                bias: dz.sum_axis(Axis(0)),
            });
            if l > 0 {
                let mut da = dz.dot(&self.layers[l].weights);
                Zip::from(&mut da).and(input).for_each(|d, &a| *d *= 1.0 - a * a);
                dz = da;
            }
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, loss, outcomes))
    }

    pub fn gradients(&self, batch: &[&Example], clamp: Option<f64>) -> Result<StepResult> {
        self.gradients_with(batch, clamp, Execution::default())
    }

    /// Gradients of the mean batch loss. With `clamp`, every output-layer
    /// entry is clipped to `[-clamp, clamp]`.
    pub fn gradients_with(&self, batch: &[&Example], clamp: Option<f64>, exec: Execution) -> Result<StepResult> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let parts = par::map_chunks(exec, batch, GRAD_CHUNK, |_, chunk| self.chunk_gradients(chunk, scale));
        let mut total = Gradients::zeros_like(self);
        let mut loss = 0.0;
        let mut outcomes = Vec::with_capacity(batch.len());
        for part in parts {
            let (g, l, o) = part?;
            total.add_assign(&g);
            loss += l;
            outcomes.extend(o);
        }
        if let Some(c) = clamp {
            let out = total.layers.last_mut().expect("output layer");
            out.weights.mapv_inplace(|v| v.clamp(-c, c));
            out.bias.mapv_inplace(|v| v.clamp(-c, c));
        }
        for (i, g) in total.layers.iter().enumerate() {
            if !g.all_finite() {
                return Err(Error::Numeric(format!("gradient of layer {i}")));
            }
        }
        Ok(StepResult {
            gradients: total,
            mean_loss: loss * scale,
            outcomes,
        })
    }
}
