//! Sequential models: assembly, freezing, truncation, persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layers::{Activation, Cache, Layer, LayerKind, LayerSpec, LayerTensors};
use crate::loss::{cross_entropy_labels, softmax_cross_entropy_backward};
use crate::rng::Rng;
use crate::tensor::{rng_normal, Real, Tensor};
use crate::weights::{WeightFile, WeightRecord};

/// Which parameterized layers receive optimizer updates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainPolicy {
    /// The last `k` parameterized layers, counted from the output.
    LastK(usize),
    All,
    Names(BTreeSet<String>),
}

impl std::str::FromStr for TrainPolicy {
    type Err = Error;

    /// `all`, `last_<k>` or a comma-separated list of layer names.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "all" {
            return Ok(TrainPolicy::All);
        }
        if let Some(k) = s.strip_prefix("last_") {
            return k
                .parse()
                .map(TrainPolicy::LastK)
                .map_err(|_| Error::InvalidParam(format!("bad trainable policy `{s}`")));
        }
        let names: BTreeSet<String> = s
            .split(',')
            .map(str::trim)
            .filter(|n| !n.is_empty())
            .map(String::from)
            .collect();
        Ok(TrainPolicy::Names(names))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSummary {
    pub name: String,
    pub kind: &'static str,
    pub output_shape: Vec<usize>,
    pub params: usize,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCounts {
    pub total: usize,
    pub trainable: usize,
    pub per_layer: Vec<LayerSummary>,
}

impl ParamCounts {
    pub fn frozen(&self) -> usize {
        self.total - self.trainable
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSummary> {
        self.per_layer.iter().find(|l| l.name == name)
    }
}

/// Outcome of [`Model::import_by_name`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ImportReport {
    /// Parameterized layers found in both, copied from the file.
    pub matched: Vec<String>,
    /// Parameterized model layers absent from the file (left as initialized).
    pub model_only: Vec<String>,
    /// File records with no parameterized model layer of that name.
    pub file_only: Vec<String>,
}

/// Output of one training step's forward and backward pass.
#[derive(Debug, Clone)]
pub struct StepGrads<T> {
    pub loss: T,
    pub probs: Tensor<T>,
    /// Indexed like the model's layers; `Some` only for trainable layers.
    pub grads: Vec<Option<LayerTensors<T>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

fn check_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::InvalidParam("model has no layers".into()));
    }
    let mut seen = BTreeSet::new();
    for (i, s) in specs.iter().enumerate() {
        if !seen.insert(s.name.as_str()) {
            return Err(Error::InvalidParam(format!("duplicate layer name `{}`", s.name)));
        }
        let last = i + 1 == specs.len();
        if s.activation() == Some(Activation::Softmax) && !(last && matches!(s.kind, LayerKind::Dense { .. })) {
            return Err(Error::InvalidParam(format!(
                "layer `{}`: softmax is only allowed on the final dense layer",
                s.name
            )));
        }
    }
    Ok(())
}

/// He-normal for relu, Glorot-normal otherwise; zero bias.
fn init_params<T: Real>(spec: &LayerSpec, input: &[usize], rng: &Rng) -> Result<Option<LayerTensors<T>>> {
    let Some((ws, bs)) = spec.param_shapes(input) else {
        return Ok(None);
    };
    let (fan_in, fan_out) = match spec.kind {
        LayerKind::Conv2D { kernel: (kh, kw), .. } => (kh * kw * ws[2], kh * kw * ws[3]),
        _ => (ws[0], ws[1]),
    };
    let std = match spec.activation() {
        Some(Activation::Relu) => (2.0 / fan_in as f64).sqrt(),
        _ => (2.0 / (fan_in + fan_out) as f64).sqrt(),
    };
    let mut r = rng.derive_str(&spec.name);
    Ok(Some(LayerTensors {
        weights: rng_normal(&mut r, &ws, 0.0, std)?,
        bias: Tensor::zeros(&bs)?,
    }))
}

impl<T: Real> Model<T> {
    /// Build from specs with freshly initialized parameters. Each layer draws
    /// from its own generator derived from `rng` and the layer name.
    pub fn from_specs(name: impl Into<String>, input_shape: &[usize], specs: Vec<LayerSpec>, rng: &Rng) -> Result<Self> {
        check_specs(&specs)?;
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let params = init_params(&spec, &shape, rng)?;
            let layer = Layer::new(spec, &shape, params)?;
            shape = layer.output_shape.clone();
            layers.push(layer);
        }
        Ok(Self {
            name: name.into(),
            input_shape: input_shape.to_vec(),
            layers,
        })
    }

    /// Build from specs with given parameters.
    pub fn from_parts(
        name: impl Into<String>,
        input_shape: &[usize],
        parts: Vec<(LayerSpec, Option<LayerTensors<T>>)>,
    ) -> Result<Self> {
        let specs: Vec<LayerSpec> = parts.iter().map(|(s, _)| s.clone()).collect();
        check_specs(&specs)?;
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(parts.len());
        for (spec, params) in parts {
            let layer = Layer::new(spec, &shape, params)?;
            shape = layer.output_shape.clone();
            layers.push(layer);
        }
        Ok(Self {
            name: name.into(),
            input_shape: input_shape.to_vec(),
            layers,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.layers.last().expect("models are nonempty").output_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&Layer<T>> {
        self.layers.iter().find(|l| l.name() == name)
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name() == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn param_layer_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter(|l| l.params.is_some())
            .map(|l| l.name().to_string())
            .collect()
    }

    pub fn set_trainable(&mut self, policy: &TrainPolicy) -> Result<()> {
        let param_names = self.param_layer_names();
        let chosen: BTreeSet<String> = match policy {
            TrainPolicy::All => param_names.iter().cloned().collect(),
            TrainPolicy::LastK(k) => {
                if *k > param_names.len() {
                    return Err(Error::InvalidParam(format!(
                        "last_{k} requested but the model has {} parameterized layers",
                        param_names.len()
                    )));
                }
                param_names[param_names.len() - k..].iter().cloned().collect()
            }
            TrainPolicy::Names(names) => {
                for n in names {
                    match self.layer(n) {
                        None => return Err(Error::UnknownLayer(n.clone())),
                        Some(l) if l.params.is_none() => {
                            return Err(Error::InvalidParam(format!("layer `{n}` has no parameters to train")))
                        }
                        Some(_) => {}
                    }
                }
                names.clone()
            }
        };
        for l in &mut self.layers {
            l.trainable = l.params.is_some() && chosen.contains(l.name());
        }
        Ok(())
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter(|l| l.trainable)
            .map(|l| l.name().to_string())
            .collect()
    }

    pub fn first_trainable(&self) -> Option<usize> {
        self.layers.iter().position(|l| l.trainable)
    }

    pub fn count_params(&self) -> ParamCounts {
        let per_layer: Vec<LayerSummary> = self
            .layers
            .iter()
            .map(|l| LayerSummary {
                name: l.name().to_string(),
                kind: l.spec.kind_name(),
                output_shape: l.output_shape.clone(),
                params: l.param_count(),
                trainable: l.trainable,
            })
            .collect();
        ParamCounts {
            total: per_layer.iter().map(|l| l.params).sum(),
            trainable: per_layer.iter().filter(|l| l.trainable).map(|l| l.params).sum(),
            per_layer,
        }
    }

    /// Feature extractor whose output is the activation of `layer`.
    pub fn truncate_at(&self, layer: &str) -> Result<Model<T>> {
        let idx = self.layer_index(layer)?;
        Ok(Model {
            name: self.name.clone(),
            input_shape: self.input_shape.clone(),
            layers: self.layers[..=idx].to_vec(),
        })
    }

    fn check_range(&self, start: usize, end: usize) -> Result<()> {
        if start > end || end > self.layers.len() {
            return Err(Error::InvalidParam(format!(
                "layer range {start}..{end} out of bounds for {} layers",
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// Inference through layers `start..end`.
    pub fn forward_range(&self, x: &Tensor<T>, start: usize, end: usize) -> Result<Tensor<T>> {
        self.check_range(start, end)?;
        let mut cur = x.clone();
        for l in &self.layers[start..end] {
            cur = l.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_range(x, 0, self.layers.len())
    }

    /// [`Model::forward_range`] in sample batches of at most `batch`.
    pub fn forward_range_batched(&self, x: &Tensor<T>, start: usize, end: usize, batch: usize) -> Result<Tensor<T>> {
        let n = x.batch();
        if batch == 0 {
            return Err(Error::InvalidParam("batch size must be >= 1".into()));
        }
        if n <= batch {
            return self.forward_range(x, start, end);
        }
        let mut out = Vec::new();
        let mut dims = Vec::new();
        for s in (0..n).step_by(batch) {
            let idx: Vec<usize> = (s..(s + batch).min(n)).collect();
            let y = self.forward_range(&x.gather(&idx)?, start, end)?;
            dims = y.dims().to_vec();
            out.extend_from_slice(y.data());
        }
        dims[0] = n;
        Tensor::new(dims, out)
    }

    pub fn predict_batched(&self, x: &Tensor<T>, batch: usize) -> Result<Tensor<T>> {
        self.forward_range_batched(x, 0, self.layers.len(), batch)
    }

    pub fn has_softmax_head(&self) -> bool {
        let last = self.layers.last().expect("models are nonempty");
        matches!(last.spec.kind, LayerKind::Dense { activation: Activation::Softmax, .. })
    }

    /// Forward from layer `start` (with `x` its input), softmax cross-entropy
    /// loss, and parameter gradients of the trainable layers at or after
    /// `start`. Gradients flow backwards through frozen layers as needed.
    pub fn loss_and_grads(&self, x: &Tensor<T>, start: usize, labels: &[usize]) -> Result<StepGrads<T>> {
        self.check_range(start, self.layers.len())?;
        if !self.has_softmax_head() {
            return Err(Error::InvalidParam(format!(
                "model `{}` needs a softmax dense output layer to train",
                self.name
            )));
        }
        let mut caches: Vec<Cache<T>> = Vec::with_capacity(self.layers.len() - start);
        let mut cur = x.clone();
        for l in &self.layers[start..] {
            let (out, cache) = l.forward_train(&cur)?;
            caches.push(cache);
            cur = out;
        }
        let probs = cur;
        let loss = cross_entropy_labels(&probs, labels)?;
        let mut grads: Vec<Option<LayerTensors<T>>> = vec![None; self.layers.len()];
        let Some(first) = self.layers[start..].iter().position(|l| l.trainable).map(|i| i + start) else {
            return Ok(StepGrads { loss, probs, grads });
        };
        let mut upstream = softmax_cross_entropy_backward(&probs, labels)?;
        let last = self.layers.len() - 1;
        for i in (first..=last).rev() {
            let layer = &self.layers[i];
            let cache = &caches[i - start];
            let want_input = i > first;
            let g = if i == last {
                layer.backward_preactivation(cache, &upstream, want_input, layer.trainable)?
            } else {
                layer.backward(cache, &upstream, want_input, layer.trainable)?
            };
            grads[i] = g.params;
            match g.input {
                Some(dx) => upstream = dx,
                None => break,
            }
        }
        Ok(StepGrads { loss, probs, grads })
    }

    /// Mutable parameters of layer `i`.
    pub fn params_mut(&mut self, i: usize) -> Option<&mut LayerTensors<T>> {
        self.layers.get_mut(i).and_then(|l| l.params.as_mut())
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            name: self.name.clone(),
            input_shape: self.input_shape.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec.clone(),
                    params: l.params.as_ref().map(LayerTensors::cast),
                    input_shape: l.input_shape.clone(),
                    output_shape: l.output_shape.clone(),
                    trainable: l.trainable,
                })
                .collect(),
        }
    }

    /// Parameterized layers in model order, as single-precision records.
    pub fn to_weight_file(&self) -> WeightFile {
        WeightFile {
            records: self
                .layers
                .iter()
                .filter_map(|l| {
                    l.params.as_ref().map(|p| WeightRecord {
                        name: l.name().to_string(),
                        tensors: vec![p.weights.cast(), p.bias.cast()],
                    })
                })
                .collect(),
        }
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        self.to_weight_file().save(path)
    }

    fn assign(&mut self, rec: &WeightRecord) -> Result<()> {
        let idx = self.layer_index(&rec.name)?;
        let layer = &mut self.layers[idx];
        let Some(p) = layer.params.as_mut() else {
            return Err(Error::WeightFormat(format!("layer `{}` takes no parameters", rec.name)));
        };
        let [w, b] = &rec.tensors[..] else {
            return Err(Error::WeightFormat(format!(
                "layer `{}`: expected 2 tensors, found {}",
                rec.name,
                rec.tensors.len()
            )));
        };
        for (have, got) in [(&p.weights, w), (&p.bias, b)] {
            if have.dims() != got.dims() {
                return Err(Error::ShapeConflict {
                    layer: rec.name.clone(),
                    expected: have.dims().to_vec(),
                    found: got.dims().to_vec(),
                });
            }
        }
        p.weights = w.cast();
        p.bias = b.cast();
        Ok(())
    }

    /// Replace every parameter from `file`, which must hold exactly this
    /// model's parameterized layers.
    pub fn load_from(&mut self, file: &WeightFile) -> Result<()> {
        let wanted = self.param_layer_names();
        let have: BTreeSet<&str> = file.records.iter().map(|r| r.name.as_str()).collect();
        let missing: Vec<&str> = wanted.iter().map(String::as_str).filter(|n| !have.contains(n)).collect();
        if !missing.is_empty() {
            return Err(Error::WeightFormat(format!("missing layers: {}", missing.join(", "))));
        }
        let extra: Vec<&str> = have.iter().copied().filter(|n| !wanted.iter().any(|w| w == n)).collect();
        if !extra.is_empty() {
            return Err(Error::WeightFormat(format!("unexpected layers: {}", extra.join(", "))));
        }
        // Validate all shapes before mutating anything.
        let mut staged = self.clone();
        for rec in &file.records {
            staged.assign(rec)?;
        }
        *self = staged;
        Ok(())
    }

    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        self.load_from(&WeightFile::load(path)?)
    }

    /// Copy tensors for every parameterized layer whose name appears in
    /// `file`; a shape conflict on a matched name aborts without changes.
    pub fn import_from(&mut self, file: &WeightFile, file_names: &[String]) -> Result<ImportReport> {
        let params = self.param_layer_names();
        let in_file: BTreeSet<&str> = file_names.iter().map(String::as_str).collect();
        let mut report = ImportReport::default();
        let mut staged = self.clone();
        for name in &params {
            if in_file.contains(name.as_str()) {
                let rec = file
                    .get(name)
                    .ok_or_else(|| Error::WeightFormat(format!("record `{name}` not loaded")))?;
                staged.assign(rec)?;
                report.matched.push(name.clone());
            } else {
                report.model_only.push(name.clone());
            }
        }
        report.file_only = file_names
            .iter()
            .filter(|n| !params.contains(n))
            .cloned()
            .collect();
        *self = staged;
        Ok(report)
    }

    /// Import by layer name from a weight file, reading only matching records.
    pub fn import_by_name(&mut self, path: &Path) -> Result<ImportReport> {
        let params: BTreeSet<String> = self.param_layer_names().into_iter().collect();
        let (file, names) = WeightFile::load_filtered(path, |n| params.contains(n))?;
        self.import_from(&file, &names)
    }

    /// SHA-256 over the model name, layer specs and single-precision weights.
    pub fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint_range(0, self.layers.len())
    }

    /// Fingerprint of layers `start..end` only.
    pub fn fingerprint_range(&self, start: usize, end: usize) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        h.update([0]);
        for d in &self.input_shape {
            h.update((*d as u64).to_le_bytes());
        }
        for l in &self.layers[start..end.min(self.layers.len())] {
            h.update(format!("{:?}", l.spec).as_bytes());
            if let Some(p) = &l.params {
                for t in [&p.weights, &p.bias] {
                    for v in t.data() {
                        h.update(v.as_f64().to_le_bytes());
                    }
                }
            }
        }
        h.finalize().into()
    }

    /// Per-layer copies of every parameter, keyed by layer name.
    pub fn snapshot(&self) -> BTreeMap<String, LayerTensors<T>> {
        self.layers
            .iter()
            .filter_map(|l| l.params.clone().map(|p| (l.name().to_string(), p)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradient_check;

    fn tiny(rng: &Rng) -> Model<f64> {
        Model::from_specs(
            "tiny",
            &[6, 6, 2],
            vec![
                LayerSpec::conv("c1", 3, Activation::Tanh),
                LayerSpec::pool("p1"),
                LayerSpec::conv("c2", 2, Activation::Tanh),
                LayerSpec::flatten("f"),
                LayerSpec::dense("d", 4, Activation::Tanh),
                LayerSpec::dense("out", 3, Activation::Softmax),
            ],
            rng,
        )
        .unwrap()
    }

    #[test]
    fn rejects_duplicate_names_and_inner_softmax() {
        let rng = Rng::new(1);
        let dup = Model::<f32>::from_specs(
            "m",
            &[4],
            vec![LayerSpec::dense("a", 2, Activation::Relu), LayerSpec::dense("a", 3, Activation::Softmax)],
            &rng,
        );
        assert!(dup.is_err());
        let inner = Model::<f32>::from_specs(
            "m",
            &[4],
            vec![LayerSpec::dense("a", 2, Activation::Softmax), LayerSpec::dense("b", 3, Activation::Softmax)],
            &rng,
        );
        assert!(inner.is_err());
    }

    #[test]
    fn trainable_policies() {
        let mut m = tiny(&Rng::new(2));
        assert_eq!(m.trainable_names().len(), 4);
        m.set_trainable(&TrainPolicy::LastK(2)).unwrap();
        assert_eq!(m.trainable_names(), vec!["d", "out"]);
        m.set_trainable(&TrainPolicy::LastK(0)).unwrap();
        assert!(m.trainable_names().is_empty());
        assert!(m.set_trainable(&TrainPolicy::LastK(5)).is_err());
        let names = ["c2".to_string()].into_iter().collect();
        m.set_trainable(&TrainPolicy::Names(names)).unwrap();
        assert_eq!(m.trainable_names(), vec!["c2"]);
        let bad = ["nope".to_string()].into_iter().collect();
        assert!(matches!(m.set_trainable(&TrainPolicy::Names(bad)), Err(Error::UnknownLayer(_))));
        let c = m.count_params();
        assert_eq!(c.total, c.trainable + c.frozen());
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("last_5".parse::<TrainPolicy>().unwrap(), TrainPolicy::LastK(5));
        assert_eq!("all".parse::<TrainPolicy>().unwrap(), TrainPolicy::All);
        assert!("last_x".parse::<TrainPolicy>().is_err());
    }

    #[test]
    fn truncate_at_last_layer_is_identity() {
        let rng = Rng::new(3);
        let m = tiny(&rng);
        let x: Tensor<f64> = rng_normal(&mut rng.derive(9), &[3, 6, 6, 2], 0.0, 1.0).unwrap();
        let t = m.truncate_at("out").unwrap();
        assert_eq!(t.predict(&x).unwrap(), m.predict(&x).unwrap());
        assert!(matches!(m.truncate_at("zzz"), Err(Error::UnknownLayer(_))));
    }

    #[test]
    fn batch_independence() {
        let rng = Rng::new(4);
        let m = tiny(&rng).cast::<f32>();
        let x: Tensor<f32> = rng_normal(&mut rng.derive(1), &[5, 6, 6, 2], 0.0, 1.0).unwrap();
        let all = m.predict(&x).unwrap();
        assert_eq!(all.dims(), &[5, 3]);
        for i in 0..5 {
            let one = m.predict(&x.gather(&[i]).unwrap()).unwrap();
            for (a, b) in one.data().iter().zip(all.sample(i)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        assert_eq!(m.predict_batched(&x, 2).unwrap().dims(), &[5, 3]);
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let mut m = tiny(&Rng::new(5));
        for i in 0..m.layers().len() {
            if let Some(p) = m.params_mut(i) {
                p.weights.data_mut().fill(0.0);
            }
        }
        let p = m.predict(&Tensor::zeros(&[2, 6, 6, 2]).unwrap()).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_through_frozen_layers_matches_finite_differences() {
        let rng = Rng::new(6);
        let mut m = tiny(&rng);
        // Only the first conv trains; everything after it is frozen but must
        // still carry the gradient back.
        m.set_trainable(&TrainPolicy::Names(["c1".to_string()].into_iter().collect())).unwrap();
        let x: Tensor<f64> = rng_normal(&mut rng.derive(2), &[3, 6, 6, 2], 0.0, 1.0).unwrap();
        let labels = [0, 2, 1];
        let g = m.loss_and_grads(&x, 0, &labels).unwrap();
        assert!(g.grads.iter().enumerate().all(|(i, gr)| gr.is_some() == (i == 0)));
        let gw = g.grads[0].as_ref().unwrap();
        let p0 = m.layers()[0].params.clone().unwrap();
        let nw = p0.weights.len();
        let mut flat = p0.weights.data().to_vec();
        flat.extend_from_slice(p0.bias.data());
        let mut analytic = gw.weights.data().to_vec();
        analytic.extend_from_slice(gw.bias.data());
        let mut probe = m.clone();
        let report = gradient_check(
            |theta| {
                let p = probe.params_mut(0).unwrap();
                p.weights.data_mut().copy_from_slice(&theta[..nw]);
                p.bias.data_mut().copy_from_slice(&theta[nw..]);
                let probs = probe.predict(&x).unwrap();
                cross_entropy_labels(&probs, &labels).unwrap()
            },
            &flat,
            &analytic,
            1e-5,
            1e-4,
        );
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn last_layer_only_gradient_matches_finite_differences() {
        let rng = Rng::new(7);
        let mut m = tiny(&rng);
        m.set_trainable(&TrainPolicy::LastK(1)).unwrap();
        let x: Tensor<f64> = rng_normal(&mut rng.derive(2), &[4, 6, 6, 2], 0.0, 1.0).unwrap();
        let labels = [0, 1, 2, 1];
        let g = m.loss_and_grads(&x, 0, &labels).unwrap();
        let last = m.layers().len() - 1;
        let gw = g.grads[last].as_ref().unwrap();
        let p = m.layers()[last].params.clone().unwrap();
        let nw = p.weights.len();
        let mut flat = p.weights.data().to_vec();
        flat.extend_from_slice(p.bias.data());
        let mut analytic = gw.weights.data().to_vec();
        analytic.extend_from_slice(gw.bias.data());
        let mut probe = m.clone();
        let report = gradient_check(
            |theta| {
                let p = probe.params_mut(last).unwrap();
                p.weights.data_mut().copy_from_slice(&theta[..nw]);
                p.bias.data_mut().copy_from_slice(&theta[nw..]);
                cross_entropy_labels(&probe.predict(&x).unwrap(), &labels).unwrap()
            },
            &flat,
            &analytic,
            1e-5,
            1e-4,
        );
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn save_load_import() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.nnwt");
        let m = tiny(&Rng::new(8)).cast::<f32>();
        m.save_weights(&path).unwrap();
        let mut other = tiny(&Rng::new(9)).cast::<f32>();
        assert_ne!(other.snapshot(), m.snapshot());
        other.load_weights(&path).unwrap();
        assert_eq!(other.snapshot(), m.snapshot());

        let mut smaller = Model::<f32>::from_specs(
            "other",
            &[6, 6, 2],
            vec![
                LayerSpec::conv("c1", 3, Activation::Tanh),
                LayerSpec::flatten("f"),
                LayerSpec::dense("head", 3, Activation::Softmax),
            ],
            &Rng::new(1),
        )
        .unwrap();
        let report = smaller.import_by_name(&path).unwrap();
        assert_eq!(report.matched, vec!["c1"]);
        assert_eq!(report.model_only, vec!["head"]);
        assert_eq!(report.file_only, vec!["c2", "d", "out"]);
        assert_eq!(smaller.layer("c1").unwrap().params, m.layer("c1").unwrap().params);
        // A strict load refuses the mismatched layer set.
        assert!(smaller.load_weights(&path).is_err());
    }

    #[test]
    fn import_shape_conflict_names_layer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.nnwt");
        tiny(&Rng::new(8)).cast::<f32>().save_weights(&path).unwrap();
        let mut conflicting = Model::<f32>::from_specs(
            "x",
            &[6, 6, 2],
            vec![
                LayerSpec::conv("c1", 5, Activation::Tanh),
                LayerSpec::flatten("f"),
                LayerSpec::dense("head", 3, Activation::Softmax),
            ],
            &Rng::new(1),
        )
        .unwrap();
        let before = conflicting.clone();
        let err = conflicting.import_by_name(&path).unwrap_err();
        assert!(matches!(err, Error::ShapeConflict { ref layer, .. } if layer == "c1"));
        assert_eq!(conflicting, before);
    }
}
