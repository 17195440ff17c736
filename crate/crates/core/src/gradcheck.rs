//! Central finite-difference gradient checking in double precision.

use crate::error::Result;
use crate::layers::{softmax, Activation, Layer, LayerKind, LayerSpec, LayerTensors, Padding};
use crate::loss::{cross_entropy_labels, softmax_cross_entropy_backward};
use crate::rng::Rng;
use crate::tensor::{rng_normal, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub pass: bool,
}

impl GradReport {
    /// Combine two reports over disjoint coordinates.
    pub fn merge(self, other: GradReport) -> GradReport {
        let (max_rel_error, worst_index) = if other.max_rel_error > self.max_rel_error {
            (other.max_rel_error, self.checked + other.worst_index)
        } else {
            (self.max_rel_error, self.worst_index)
        };
        GradReport {
            max_rel_error,
            worst_index,
            checked: self.checked + other.checked,
            pass: self.pass && other.pass,
        }
    }
}

/// `|a - g| / max(1, |a|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Compare `analytic` with `(f(x+h) - f(x-h)) / 2h` at every coordinate of
/// `probe`. Disagreement is reported, never raised.
pub fn gradient_check<F>(mut f: F, probe: &[f64], analytic: &[f64], step: f64, tolerance: f64) -> GradReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(probe.len(), analytic.len(), "probe and gradient lengths differ");
    let mut x = probe.to_vec();
    let mut worst = (0.0f64, 0usize);
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = f(&x);
        x[i] = orig - step;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 || err.is_nan() {
            worst = (if err.is_nan() { f64::INFINITY } else { err }, i);
        }
    }
    GradReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked: x.len(),
        pass: worst.0 < tolerance,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerCheck {
    pub input: GradReport,
    pub params: Option<GradReport>,
}

impl LayerCheck {
    pub fn pass(&self) -> bool {
        self.input.pass && self.params.is_none_or(|p| p.pass)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .map_or(self.input.max_rel_error, |p| p.max_rel_error.max(self.input.max_rel_error))
    }
}

/// Check a layer's input and parameter gradients on the scalar loss
/// `sum(r * layer(x))` for a random projection `r` drawn from `rng`.
pub fn check_layer(layer: &Layer<f64>, x: &Tensor<f64>, rng: &mut Rng, step: f64, tolerance: f64) -> Result<LayerCheck> {
    let (y, cache) = layer.forward_train(x)?;
    let r: Tensor<f64> = rng_normal(rng, y.dims(), 0.0, 1.0)?;
    let grads = layer.backward(&cache, &r, true, layer.params.is_some())?;
    let project = |out: &Tensor<f64>| out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();

    let dx = grads.input.expect("input gradient requested");
    let input = gradient_check(
        |xs| {
            let t = Tensor::new(x.dims().to_vec(), xs.to_vec()).expect("probe dims");
            project(&layer.forward(&t).expect("probe forward"))
        },
        x.data(),
        dx.data(),
        step,
        tolerance,
    );

    let params = match (&layer.params, grads.params) {
        (Some(p), Some(g)) => {
            let nw = p.weights.len();
            let mut flat = p.weights.data().to_vec();
            flat.extend_from_slice(p.bias.data());
            let mut analytic = g.weights.data().to_vec();
            analytic.extend_from_slice(g.bias.data());
            let mut probe_layer = layer.clone();
            Some(gradient_check(
                |theta| {
                    probe_layer.params = Some(LayerTensors {
                        weights: Tensor::new(p.weights.dims().to_vec(), theta[..nw].to_vec()).expect("weights"),
                        bias: Tensor::new(p.bias.dims().to_vec(), theta[nw..].to_vec()).expect("bias"),
                    });
                    project(&probe_layer.forward(x).expect("probe forward"))
                },
                &flat,
                &analytic,
                step,
                tolerance,
            ))
        }
        _ => None,
    };
    Ok(LayerCheck { input, params })
}

/// Check the fused softmax + cross-entropy gradient w.r.t. the logits.
pub fn check_softmax_cross_entropy(logits: &Tensor<f64>, labels: &[usize], step: f64, tolerance: f64) -> Result<GradReport> {
    let p = softmax(logits)?;
    let analytic = softmax_cross_entropy_backward(&p, labels)?;
    Ok(gradient_check(
        |z| {
            let t = Tensor::new(logits.dims().to_vec(), z.to_vec()).expect("probe dims");
            cross_entropy_labels(&softmax(&t).expect("softmax"), labels).expect("loss")
        },
        logits.data(),
        analytic.data(),
        step,
        tolerance,
    ))
}

/// One named entry of [`standard_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
    pub pass: bool,
}

fn random_layer(spec: LayerSpec, input: &[usize], rng: &mut Rng) -> Result<Layer<f64>> {
    let params = match spec.param_shapes(input) {
        Some((w, b)) => Some(LayerTensors {
            weights: rng_normal(rng, &w, 0.0, 0.5)?,
            bias: rng_normal(rng, &b, 0.0, 0.5)?,
        }),
        None => None,
    };
    Layer::new(spec, input, params)
}

/// Finite-difference checks of every layer kind and activation plus the
/// softmax and cross-entropy composite, each over `probes` seeded draws of
/// input and parameters.
pub fn standard_suite(probes: usize, seed: u64, step: f64, tolerance: f64) -> Result<Vec<SuiteResult>> {
    let root = Rng::new(seed);
    let conv = |padding, activation| LayerSpec {
        name: "conv".into(),
        kind: LayerKind::Conv2D {
            filters: 3,
            kernel: (3, 3),
            padding,
            activation,
        },
    };
    let mut cases: Vec<(String, LayerSpec, Vec<usize>)> = Vec::new();
    for act in [Activation::Relu, Activation::Tanh, Activation::Linear, Activation::Softmax] {
        cases.push((format!("dense/{act}"), LayerSpec::dense("dense", 4, act), vec![6]));
    }
    for act in [Activation::Relu, Activation::Tanh, Activation::Linear] {
        for padding in [Padding::Same, Padding::Valid] {
            cases.push((format!("conv2d/{padding:?}/{act}").to_lowercase(), conv(padding, act), vec![5, 5, 2]));
        }
    }
    cases.push(("maxpool2d".into(), LayerSpec::pool("pool"), vec![4, 4, 2]));
    cases.push(("flatten".into(), LayerSpec::flatten("flatten"), vec![3, 3, 2]));

    let mut out = Vec::new();
    for (name, spec, input) in cases {
        let mut worst = 0.0f64;
        let mut pass = true;
        for p in 0..probes {
            let mut rng = root.derive_str(&name).derive(p as u64);
            let layer = random_layer(spec.clone(), &input, &mut rng)?;
            let mut dims = vec![2];
            dims.extend_from_slice(&input);
            let x = rng_normal(&mut rng, &dims, 0.0, 1.0)?;
            let c = check_layer(&layer, &x, &mut rng, step, tolerance)?;
            worst = worst.max(c.max_rel_error());
            pass &= c.pass();
        }
        out.push(SuiteResult {
            name,
            probes,
            max_rel_error: worst,
            pass,
        });
    }
    let mut worst = 0.0f64;
    let mut pass = true;
    for p in 0..probes {
        let mut rng = root.derive_str("softmax_cross_entropy").derive(p as u64);
        let logits = rng_normal(&mut rng, &[4, 3], 0.0, 2.0)?;
        let labels: Vec<usize> = (0..4).map(|_| rng.int_range(0, 2)).collect();
        let r = check_softmax_cross_entropy(&logits, &labels, step, tolerance)?;
        worst = worst.max(r.max_rel_error);
        pass &= r.pass;
    }
    out.push(SuiteResult {
        name: "softmax_cross_entropy".into(),
        probes,
        max_rel_error: worst,
        pass,
    });
    Ok(out)
}
