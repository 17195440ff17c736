//! Adam and the epoch/batch training loop.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::layers::LayerTensors;
use crate::loss::cross_entropy_labels;
use crate::model::Model;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Inputs `[n, ...]` with one class label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Examples<T = f32> {
    pub x: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> Examples<T> {
    pub fn new(x: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        if x.rank() == 0 || x.batch() != labels.len() {
            return Err(Error::shape(format!(
                "{} labels for inputs {:?}",
                labels.len(),
                x.dims()
            )));
        }
        Ok(Self { x, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::Empty("empty subset".into()));
        }
        Ok(Self {
            x: self.x.gather(idx)?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments<T> {
    m: LayerTensors<T>,
    v: LayerTensors<T>,
}

/// Adam with first and second moments for each trainable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T = f32> {
    pub config: AdamConfig,
    t: u64,
    state: BTreeMap<String, Moments<T>>,
}

/// One bias-corrected Adam update of `theta` in place.
pub fn adam_update<T: Real>(theta: &mut [T], g: &[T], m: &mut [T], v: &mut [T], t: u64, cfg: &AdamConfig) {
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let c1 = T::of(1.0 - cfg.beta1.powf(t as f64));
    let c2 = T::of(1.0 - cfg.beta2.powf(t as f64));
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.eps);
    let one = T::one();
    for i in 0..theta.len() {
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        theta[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Apply one step. `grads` is indexed like the model's layers; layers that
    /// are frozen or have no gradient are left untouched.
    pub fn step(&mut self, model: &mut Model<T>, grads: &[Option<LayerTensors<T>>]) -> Result<()> {
        if grads.len() != model.layers().len() {
            return Err(Error::shape(format!(
                "{} gradient slots for {} layers",
                grads.len(),
                model.layers().len()
            )));
        }
        self.t += 1;
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let layer = &model.layers()[i];
            if !layer.trainable {
                continue;
            }
            let name = layer.name().to_string();
            let p = model.params_mut(i).expect("trainable layers have parameters");
            if p.weights.dims() != g.weights.dims() || p.bias.dims() != g.bias.dims() {
                return Err(Error::shape(format!("gradient shape mismatch on layer `{name}`")));
            }
            let st = self.state.entry(name).or_insert_with(|| {
                let zeros = LayerTensors {
                    weights: Tensor::zeros(p.weights.dims()).expect("dims"),
                    bias: Tensor::zeros(p.bias.dims()).expect("dims"),
                };
                Moments {
                    m: zeros.clone(),
                    v: zeros,
                }
            });
            adam_update(
                p.weights.data_mut(),
                g.weights.data(),
                st.m.weights.data_mut(),
                st.v.weights.data_mut(),
                self.t,
                &self.config,
            );
            adam_update(
                p.bias.data_mut(),
                g.bias.data(),
                st.m.bias.data_mut(),
                st.v.bias.data_mut(),
                self.t,
                &self.config,
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// `None` means `ceil(n / batch_size)`.
    pub steps_per_epoch: Option<usize>,
    pub learning_rate: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 10,
            steps_per_epoch: None,
            learning_rate: 5e-5,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParam("epochs must be >= 1".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::InvalidParam("steps_per_epoch must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParam("learning_rate must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn steps(&self, n: usize) -> usize {
        self.steps_per_epoch.unwrap_or_else(|| n.div_ceil(self.batch_size))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
}

impl History {
    /// `epoch,loss,acc,val_loss,val_acc`; missing validation values are empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,acc,val_loss,val_acc\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{},{}",
                r.epoch,
                r.loss,
                r.acc,
                opt(r.val_loss),
                opt(r.val_acc)
            );
        }
        s
    }
}

/// Index stream that reshuffles at every epoch start and on wrap-around.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
    shuffle: bool,
}

impl Sampler {
    fn new(n: usize, seed: u64, shuffle: bool) -> Self {
        Self {
            order: (0..n).collect(),
            pos: 0,
            rng: Rng::new(seed).derive_str("sampler"),
            shuffle,
        }
    }

    fn reset(&mut self) {
        self.pos = 0;
        if self.shuffle {
            self.rng.shuffle(&mut self.order);
        }
    }

    fn next_batch(&mut self, batch: usize) -> Vec<usize> {
        let take = batch.min(self.order.len());
        let mut out = Vec::with_capacity(take);
        while out.len() < take {
            out.push(self.order[self.pos]);
            self.pos += 1;
            if self.pos == self.order.len() {
                self.reset();
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    /// Class probabilities, `[n, classes]` row-major.
    pub probs: Vec<f64>,
    pub classes: usize,
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn score<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<Evaluation> {
    let loss = cross_entropy_labels(probs, labels)?.as_f64();
    let classes = probs.dims()[1];
    let predictions: Vec<usize> = probs.data().chunks(classes).map(argmax).collect();
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(Evaluation {
        loss,
        accuracy: correct as f64 / labels.len() as f64,
        predictions,
        probs: probs.data().iter().map(|v| v.as_f64()).collect(),
        classes,
    })
}

/// Loss and argmax accuracy of `model` on `data`.
pub fn evaluate<T: Real>(model: &Model<T>, data: &Examples<T>, batch: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    score(&model.predict_batched(&data.x, batch)?, &data.labels)
}

/// [`evaluate`] on inputs that already went through layers `..start`.
pub fn evaluate_features<T: Real>(model: &Model<T>, start: usize, data: &Examples<T>, batch: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    let probs = model.forward_range_batched(&data.x, start, model.layers().len(), batch)?;
    score(&probs, &data.labels)
}

/// Train with a fresh Adam state.
pub fn fit<T: Real>(model: &mut Model<T>, train: &Examples<T>, val: Option<&Examples<T>>, cfg: &TrainConfig) -> Result<History> {
    let mut adam = Adam::new(AdamConfig::new(cfg.learning_rate));
    fit_with(model, train, val, cfg, &mut adam)
}

/// Batch size used when pushing whole datasets through frozen layers.
pub const INFERENCE_BATCH: usize = 64;

/// Train for `epochs * steps_per_epoch` Adam steps.
///
/// Layers before the first trainable layer are frozen, so their outputs are
/// computed once for the whole training (and validation) set and reused.
pub fn fit_with<T: Real>(
    model: &mut Model<T>,
    train: &Examples<T>,
    val: Option<&Examples<T>>,
    cfg: &TrainConfig,
    adam: &mut Adam<T>,
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    let start = model.first_trainable().unwrap_or(model.layers().len() - 1);
    let feats = Examples::new(
        model.forward_range_batched(&train.x, 0, start, INFERENCE_BATCH)?,
        train.labels.clone(),
    )?;
    let val_feats = match val {
        Some(v) if !v.is_empty() => Some(Examples::new(
            model.forward_range_batched(&v.x, 0, start, INFERENCE_BATCH)?,
            v.labels.clone(),
        )?),
        _ => None,
    };
    fit_features(model, start, &feats, val_feats.as_ref(), cfg, adam)
}

/// [`fit_with`] on inputs that already went through layers `..start`, which
/// must all be frozen.
pub fn fit_features<T: Real>(
    model: &mut Model<T>,
    start: usize,
    feats: &Examples<T>,
    val_feats: Option<&Examples<T>>,
    cfg: &TrainConfig,
    adam: &mut Adam<T>,
) -> Result<History> {
    cfg.validate()?;
    let train = feats;
    if train.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    let n_layers = model.layers().len();
    if start >= n_layers {
        return Err(Error::InvalidParam(format!("start layer {start} out of range for {n_layers} layers")));
    }
    if let Some(first) = model.first_trainable() {
        if first < start {
            return Err(Error::InvalidParam(format!(
                "layer `{}` is trainable but lies before the feature layer {start}",
                model.layers()[first].name()
            )));
        }
    }
    let steps = cfg.steps(train.len());
    let mut sampler = Sampler::new(train.len(), cfg.seed, cfg.shuffle);
    let mut history = History::default();
    for epoch in 1..=cfg.epochs {
        sampler.reset();
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for _ in 0..steps {
            let idx = sampler.next_batch(cfg.batch_size);
            let xb = feats.x.gather(&idx)?;
            let yb: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let out = model.loss_and_grads(&xb, start, &yb)?;
            let loss = out.loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::Degenerate(format!("non-finite training loss at epoch {epoch}")));
            }
            loss_sum += loss;
            let k = out.probs.dims()[1];
            correct += out
                .probs
                .data()
                .chunks(k)
                .zip(&yb)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            seen += yb.len();
            adam.step(model, &out.grads)?;
            history.steps += 1;
        }
        let (val_loss, val_acc) = match val_feats {
            Some(v) if !v.is_empty() => {
                let e = evaluate_features(model, start, v, INFERENCE_BATCH)?;
                (Some(e.loss), Some(e.accuracy))
            }
            _ => (None, None),
        };
        history.epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / steps as f64,
            acc: correct as f64 / seen as f64,
            val_loss,
            val_acc,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Activation, LayerSpec};
    use crate::model::TrainPolicy;

    fn toy() -> (Model<f64>, Examples<f64>) {
        // Two features, three classes split by sign patterns.
        let pts = [
            (2.0, 0.1, 0),
            (1.5, -0.3, 0),
            (1.8, 0.4, 0),
            (-2.0, 1.9, 1),
            (-1.7, 2.2, 1),
            (-2.2, 1.5, 1),
            (-1.9, -2.0, 2),
            (-2.1, -1.6, 2),
            (-1.5, -2.3, 2),
        ];
        let x: Vec<f64> = pts.iter().flat_map(|p| [p.0, p.1]).collect();
        let labels = pts.iter().map(|p| p.2).collect();
        let model = Model::from_specs(
            "toy",
            &[2],
            vec![LayerSpec::dense("h", 6, Activation::Tanh), LayerSpec::dense("out", 3, Activation::Softmax)],
            &Rng::new(11),
        )
        .unwrap();
        (model, Examples::new(Tensor::new(vec![9, 2], x).unwrap(), labels).unwrap())
    }

    #[test]
    fn scalar_adam_first_step() {
        let mut theta = [0.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        let cfg = AdamConfig::new(5e-5);
        adam_update(&mut theta, &[1.0], &mut m, &mut v, 1, &cfg);
        assert!((theta[0] + 5e-5 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut theta = [0.3f64, -1.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        adam_update(&mut theta, &[0.0, 0.0], &mut m, &mut v, 1, &AdamConfig::new(0.1));
        assert_eq!(theta, [0.3, -1.0]);
    }

    #[test]
    fn zero_learning_rate_advances_t_only() {
        let (mut model, data) = toy();
        let before = model.snapshot();
        let mut adam = Adam::new(AdamConfig::new(0.0));
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 3,
            learning_rate: 0.0,
            ..Default::default()
        };
        fit_with(&mut model, &data, None, &cfg, &mut adam).unwrap();
        assert_eq!(adam.t(), 9);
        assert_eq!(model.snapshot(), before);
    }

    #[test]
    fn step_count_follows_override() {
        let (mut model, data) = toy();
        let cfg = TrainConfig {
            batch_size: 100,
            epochs: 70,
            steps_per_epoch: Some(16),
            learning_rate: 1e-3,
            ..Default::default()
        };
        let h = fit(&mut model, &data, None, &cfg).unwrap();
        assert_eq!(h.steps, 1120);
        assert_eq!(h.epochs.len(), 70);
    }

    #[test]
    fn separable_toy_is_fit_and_loss_settles() {
        let (mut model, data) = toy();
        let cfg = TrainConfig {
            batch_size: 9,
            epochs: 200,
            learning_rate: 0.02,
            seed: 3,
            ..Default::default()
        };
        let h = fit(&mut model, &data, Some(&data), &cfg).unwrap();
        assert_eq!(evaluate(&model, &data, 4).unwrap().accuracy, 1.0);
        for w in h.epochs[5..].windows(2) {
            assert!(w[1].loss <= w[0].loss + 1e-12, "loss rose at epoch {}", w[1].epoch);
        }
        assert_eq!(h.epochs.last().unwrap().val_acc, Some(1.0));
    }

    #[test]
    fn frozen_everything_is_untouched() {
        let (mut model, data) = toy();
        model.set_trainable(&TrainPolicy::LastK(0)).unwrap();
        let before = model.snapshot();
        let h = fit(&mut model, &data, None, &TrainConfig { epochs: 2, ..Default::default() }).unwrap();
        assert_eq!(h.epochs.len(), 2);
        assert_eq!(model.snapshot(), before);
    }

    #[test]
    fn frozen_layers_stay_bit_identical() {
        let (mut model, data) = toy();
        model.set_trainable(&TrainPolicy::LastK(1)).unwrap();
        let h_before = model.layer("h").unwrap().params.clone();
        let out_before = model.layer("out").unwrap().params.clone();
        fit(&mut model, &data, None, &TrainConfig { epochs: 5, learning_rate: 0.01, ..Default::default() }).unwrap();
        assert_eq!(model.layer("h").unwrap().params, h_before);
        assert_ne!(model.layer("out").unwrap().params, out_before);
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 25,
            learning_rate: 0.01,
            seed: 8,
            ..Default::default()
        };
        let (mut a, data) = toy();
        let (mut b, _) = toy();
        let ha = fit(&mut a, &data, None, &cfg).unwrap();
        let hb = fit(&mut b, &data, None, &cfg).unwrap();
        assert_eq!(ha.steps, 75);
        assert_eq!(a, b);
        assert_eq!(ha.to_csv(), hb.to_csv());
    }

    #[test]
    fn uniform_model_scores_ln3() {
        let (mut model, data) = toy();
        for i in 0..model.layers().len() {
            if let Some(p) = model.params_mut(i) {
                p.weights.data_mut().fill(0.0);
            }
        }
        let e = evaluate(&model, &data, 5).unwrap();
        assert!((e.loss - 3f64.ln()).abs() < 1e-9);
        // All predictions tie and go to class 0.
        assert!((e.accuracy - 3.0 / 9.0).abs() < 1e-12);
        assert_eq!(evaluate(&model, &data, 5).unwrap(), e);
    }

    #[test]
    fn invalid_configs_and_empty_data() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { steps_per_epoch: Some(0), ..Default::default() }.validate().is_err());
        let (_, data) = toy();
        assert!(data.subset(&[]).is_err());
    }

    #[test]
    fn history_csv_layout() {
        let h = History {
            epochs: vec![EpochRecord {
                epoch: 1,
                loss: 1.0,
                acc: 0.5,
                val_loss: None,
                val_acc: Some(0.25),
            }],
            steps: 1,
        };
        assert_eq!(h.to_csv(), "epoch,loss,acc,val_loss,val_acc\n1,1.000000,0.500000,,0.250000\n");
    }
}
