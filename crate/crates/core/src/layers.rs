//! Layer definitions with forward and reverse-mode backward passes.
//!
//! Activations are NHWC: `[batch, height, width, channels]` for image-like
//! tensors and `[batch, features]` after flattening. Convolution is stride 1
//! and lowered to im2col + GEMM; pooling stride equals the pool size.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{gemm, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Softmax,
    Linear,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
            Activation::Linear => "linear",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "softmax" => Ok(Activation::Softmax),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::InvalidParam(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Conv2D {
        filters: usize,
        kernel: (usize, usize),
        padding: Padding,
        activation: Activation,
    },
    MaxPool2D {
        pool: (usize, usize),
    },
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    /// 3x3 same-padded convolution.
    pub fn conv(name: impl Into<String>, filters: usize, activation: Activation) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Conv2D {
                filters,
                kernel: (3, 3),
                padding: Padding::Same,
                activation,
            },
        }
    }

    /// 2x2 max pooling.
    pub fn pool(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::MaxPool2D { pool: (2, 2) },
        }
    }

    pub fn flatten(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Flatten,
        }
    }

    pub fn dense(name: impl Into<String>, units: usize, activation: Activation) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Dense { units, activation },
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            LayerKind::Conv2D { .. } => "Conv2D",
            LayerKind::MaxPool2D { .. } => "MaxPool2D",
            LayerKind::Flatten => "Flatten",
            LayerKind::Dense { .. } => "Dense",
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        match self.kind {
            LayerKind::Conv2D { activation, .. } | LayerKind::Dense { activation, .. } => {
                Some(activation)
            }
            _ => None,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Conv2D { .. } | LayerKind::Dense { .. })
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::InvalidParam(format!(
                "layer `{}`: {what} must be >= 1",
                self.name
            )))
        };
        match self.kind {
            LayerKind::Conv2D {
                filters,
                kernel: (kh, kw),
                activation,
                ..
            } => {
                if filters == 0 {
                    return bad("filters");
                }
                if kh == 0 || kw == 0 {
                    return bad("kernel");
                }
                if activation == Activation::Softmax {
                    return Err(Error::InvalidParam(format!(
                        "layer `{}`: softmax is only allowed on the final dense layer",
                        self.name
                    )));
                }
            }
            LayerKind::MaxPool2D { pool: (ph, pw) } => {
                if ph == 0 || pw == 0 {
                    return bad("pool");
                }
            }
            LayerKind::Dense { units, .. } => {
                if units == 0 {
                    return bad("units");
                }
            }
            LayerKind::Flatten => {}
        }
        Ok(())
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            match input {
                [h, w, c] => Ok((*h, *w, *c)),
                _ => Err(Error::shape(format!(
                    "{what} `{}` needs [h, w, c] input, got {input:?}",
                    self.name
                ))),
            }
        };
        match self.kind {
            LayerKind::Conv2D {
                filters,
                kernel: (kh, kw),
                padding,
                ..
            } => {
                let (h, w, _) = spatial("conv")?;
                match padding {
                    Padding::Same => Ok(vec![h, w, filters]),
                    Padding::Valid => {
                        if h < kh || w < kw {
                            return Err(Error::shape(format!(
                                "conv `{}`: kernel {kh}x{kw} larger than input {h}x{w}",
                                self.name
                            )));
                        }
                        Ok(vec![h - kh + 1, w - kw + 1, filters])
                    }
                }
            }
            LayerKind::MaxPool2D { pool: (ph, pw) } => {
                let (h, w, c) = spatial("pool")?;
                if h < ph || w < pw {
                    return Err(Error::shape(format!(
                        "pool `{}`: window {ph}x{pw} larger than input {h}x{w}",
                        self.name
                    )));
                }
                Ok(vec![h / ph, w / pw, c])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::Dense { units, .. } => match input {
                [_] => Ok(vec![units]),
                _ => Err(Error::shape(format!(
                    "dense `{}` needs flat input, got {input:?}",
                    self.name
                ))),
            },
        }
    }

    /// Weight and bias shapes, `None` for parameter-free layers.
    pub fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match self.kind {
            LayerKind::Conv2D {
                filters,
                kernel: (kh, kw),
                ..
            } => Some((vec![kh, kw, *input.last()?, filters], vec![filters])),
            LayerKind::Dense { units, .. } => Some((vec![input[0], units], vec![units])),
            _ => None,
        }
    }

    /// `kh*kw*in_ch*filters + filters` for Conv2D, `in*units + units` for Dense.
    pub fn param_count(&self, input: &[usize]) -> usize {
        self.param_shapes(input)
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensors<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LayerTensors<T> {
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn cast<U: Real>(&self) -> LayerTensors<U> {
        LayerTensors {
            weights: self.weights.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// A layer bound to its per-sample input shape and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T = f32> {
    pub spec: LayerSpec,
    pub params: Option<LayerTensors<T>>,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub trainable: bool,
}

/// State kept by a training forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    Conv { input: Tensor<T>, output: Tensor<T> },
    Pool { argmax: Vec<usize>, input_dims: Vec<usize> },
    Flatten { input_dims: Vec<usize> },
    Dense { input: Tensor<T>, output: Tensor<T> },
}

#[derive(Debug, Clone)]
pub struct LayerGrads<T> {
    pub input: Option<Tensor<T>>,
    pub params: Option<LayerTensors<T>>,
}

/// Target number of im2col rows per work item.
const CONV_CHUNK_ROWS: usize = 1024;

impl<T: Real> Layer<T> {
    /// Bind `spec` to an input shape, checking parameter shapes if given.
    pub fn new(spec: LayerSpec, input_shape: &[usize], params: Option<LayerTensors<T>>) -> Result<Self> {
        let output_shape = spec.output_shape(input_shape)?;
        match (spec.param_shapes(input_shape), &params) {
            (None, None) => {}
            (Some((ws, bs)), Some(p)) => {
                if p.weights.dims() != ws.as_slice() || p.bias.dims() != bs.as_slice() {
                    return Err(Error::ShapeConflict {
                        layer: spec.name.clone(),
                        expected: ws,
                        found: p.weights.dims().to_vec(),
                    });
                }
            }
            (Some(_), None) => {
                return Err(Error::InvalidParam(format!(
                    "layer `{}` needs parameters",
                    spec.name
                )))
            }
            (None, Some(_)) => {
                return Err(Error::InvalidParam(format!(
                    "layer `{}` takes no parameters",
                    spec.name
                )))
            }
        }
        let trainable = spec.has_params();
        Ok(Self {
            spec,
            params,
            input_shape: input_shape.to_vec(),
            output_shape,
            trainable,
        })
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn param_count(&self) -> usize {
        self.params.as_ref().map_or(0, LayerTensors::param_count)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        if x.rank() != self.input_shape.len() + 1 || &x.dims()[1..] != self.input_shape.as_slice() {
            return Err(Error::shape(format!(
                "layer `{}` expects [n, {:?}], got {:?}",
                self.spec.name,
                self.input_shape,
                x.dims()
            )));
        }
        Ok(x.batch())
    }

    fn out_dims(&self, n: usize) -> Vec<usize> {
        let mut d = vec![n];
        d.extend_from_slice(&self.output_shape);
        d
    }

    /// Inference forward pass.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check_input(x)?;
        match &self.spec.kind {
            LayerKind::Conv2D { .. } => self.conv_forward(x, n),
            LayerKind::MaxPool2D { .. } => Ok(self.pool_forward(x, n, false).0),
            LayerKind::Flatten => x.reshape(&self.out_dims(n)),
            LayerKind::Dense { .. } => self.dense_forward(x, n),
        }
    }

    /// Forward pass that also returns the state needed by [`Layer::backward`].
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
        let n = self.check_input(x)?;
        match &self.spec.kind {
            LayerKind::Conv2D { .. } => {
                let out = self.conv_forward(x, n)?;
                Ok((out.clone(), Cache::Conv { input: x.clone(), output: out }))
            }
            LayerKind::MaxPool2D { .. } => {
                let (out, argmax) = self.pool_forward(x, n, true);
                Ok((
                    out,
                    Cache::Pool {
                        argmax,
                        input_dims: x.dims().to_vec(),
                    },
                ))
            }
            LayerKind::Flatten => Ok((
                x.reshape(&self.out_dims(n))?,
                Cache::Flatten {
                    input_dims: x.dims().to_vec(),
                },
            )),
            LayerKind::Dense { .. } => {
                let out = self.dense_forward(x, n)?;
                Ok((out.clone(), Cache::Dense { input: x.clone(), output: out }))
            }
        }
    }

    /// Reverse-mode pass: gradient of the loss w.r.t. the layer input and,
    /// when `want_params`, w.r.t. weights and bias.
    pub fn backward(
        &self,
        cache: &Cache<T>,
        upstream: &Tensor<T>,
        want_input: bool,
        want_params: bool,
    ) -> Result<LayerGrads<T>> {
        let check_up = |out: &Tensor<T>| {
            if upstream.dims() != out.dims() {
                Err(Error::shape(format!(
                    "layer `{}`: upstream {:?} != output {:?}",
                    self.spec.name,
                    upstream.dims(),
                    out.dims()
                )))
            } else {
                Ok(())
            }
        };
        match (&self.spec.kind, cache) {
            (LayerKind::Conv2D { activation, .. }, Cache::Conv { input, output }) => {
                check_up(output)?;
                let dz = activation_backward(*activation, output, upstream)?;
                self.conv_backward(input, &dz, want_input, want_params)
            }
            (LayerKind::Dense { activation, .. }, Cache::Dense { input, output }) => {
                check_up(output)?;
                let dz = activation_backward(*activation, output, upstream)?;
                self.dense_backward(input, &dz, want_input, want_params)
            }
            (LayerKind::MaxPool2D { .. }, Cache::Pool { argmax, input_dims }) => {
                if upstream.dims() != self.out_dims(input_dims[0]).as_slice() {
                    return Err(Error::shape(format!(
                        "pool `{}`: upstream {:?} has wrong shape",
                        self.spec.name,
                        upstream.dims()
                    )));
                }
                let input = want_input
                    .then(|| {
                        let mut dx = vec![T::zero(); input_dims.iter().product()];
                        for (&src, &g) in argmax.iter().zip(upstream.data()) {
                            dx[src] += g;
                        }
                        Tensor::new(input_dims.clone(), dx)
                    })
                    .transpose()?;
                Ok(LayerGrads { input, params: None })
            }
            (LayerKind::Flatten, Cache::Flatten { input_dims }) => {
                let input = want_input.then(|| upstream.reshape(input_dims)).transpose()?;
                Ok(LayerGrads { input, params: None })
            }
            _ => Err(Error::InvalidParam(format!(
                "layer `{}`: cache does not match layer kind",
                self.spec.name
            ))),
        }
    }

    /// Like [`Layer::backward`], but `dz` is already the gradient w.r.t. the
    /// pre-activation (used for the fused softmax + cross-entropy head).
    pub fn backward_preactivation(
        &self,
        cache: &Cache<T>,
        dz: &Tensor<T>,
        want_input: bool,
        want_params: bool,
    ) -> Result<LayerGrads<T>> {
        match cache {
            Cache::Conv { input, output } | Cache::Dense { input, output } => {
                if dz.dims() != output.dims() {
                    return Err(Error::shape(format!(
                        "layer `{}`: gradient {:?} != output {:?}",
                        self.spec.name,
                        dz.dims(),
                        output.dims()
                    )));
                }
                match self.spec.kind {
                    LayerKind::Conv2D { .. } => self.conv_backward(input, dz, want_input, want_params),
                    LayerKind::Dense { .. } => self.dense_backward(input, dz, want_input, want_params),
                    _ => Err(Error::InvalidParam(format!(
                        "layer `{}`: cache does not match layer kind",
                        self.spec.name
                    ))),
                }
            }
            _ => self.backward(cache, dz, want_input, want_params),
        }
    }

    fn params(&self) -> Result<&LayerTensors<T>> {
        self.params
            .as_ref()
            .ok_or_else(|| Error::InvalidParam(format!("layer `{}` has no parameters", self.spec.name)))
    }

    fn conv_geometry(&self) -> ConvGeometry {
        let LayerKind::Conv2D {
            filters,
            kernel: (kh, kw),
            padding,
            ..
        } = self.spec.kind
        else {
            unreachable!("conv_geometry on non-conv layer");
        };
        let (h, w, c) = (self.input_shape[0], self.input_shape[1], self.input_shape[2]);
        let (oh, ow) = (self.output_shape[0], self.output_shape[1]);
        let (pad_t, pad_l) = match padding {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
            Padding::Valid => (0, 0),
        };
        let per_sample_rows = oh * ow;
        ConvGeometry {
            h,
            w,
            c,
            kh,
            kw,
            oh,
            ow,
            pad_t,
            pad_l,
            filters,
            samples_per_chunk: (CONV_CHUNK_ROWS / per_sample_rows).max(1),
        }
    }

    fn conv_forward(&self, x: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
        let p = self.params()?;
        let activation = self.spec.activation().unwrap_or(Activation::Linear);
        let g = self.conv_geometry();
        let k = g.kh * g.kw * g.c;
        let out_per_sample = g.oh * g.ow * g.filters;
        let in_per_sample = g.h * g.w * g.c;
        let mut out = vec![T::zero(); n * out_per_sample];
        par::for_each_chunk_mut(&mut out, g.samples_per_chunk * out_per_sample, |ci, dst| {
            let s0 = ci * g.samples_per_chunk;
            let ns = dst.len() / out_per_sample;
            let rows = ns * g.oh * g.ow;
            let src = &x.data()[s0 * in_per_sample..(s0 + ns) * in_per_sample];
            let mut cols = vec![T::zero(); rows * k];
            im2col(src, ns, &g, &mut cols);
            gemm(rows, k, g.filters, &cols, false, p.weights.data(), false, T::zero(), dst);
            for row in dst.chunks_mut(g.filters) {
                for (v, &b) in row.iter_mut().zip(p.bias.data()) {
                    *v += b;
                }
            }
            apply_activation_inplace(activation, dst, g.filters);
        });
        Tensor::new(self.out_dims(n), out)
    }

    fn conv_backward(
        &self,
        input: &Tensor<T>,
        dz: &Tensor<T>,
        want_input: bool,
        want_params: bool,
    ) -> Result<LayerGrads<T>> {
        let p = self.params()?;
        let g = self.conv_geometry();
        let n = input.batch();
        let k = g.kh * g.kw * g.c;
        let in_per_sample = g.h * g.w * g.c;
        let dz_per_sample = g.oh * g.ow * g.filters;
        let n_chunks = n.div_ceil(g.samples_per_chunk);

        // One work item per fixed-size sample chunk; partial parameter
        // gradients are summed afterwards in chunk order.
        let parts = par::map_range(n_chunks, |ci| {
            let s0 = ci * g.samples_per_chunk;
            let ns = g.samples_per_chunk.min(n - s0);
            let rows = ns * g.oh * g.ow;
            let src = &input.data()[s0 * in_per_sample..(s0 + ns) * in_per_sample];
            let dzc = &dz.data()[s0 * dz_per_sample..(s0 + ns) * dz_per_sample];
            let mut cols = vec![T::zero(); rows * k];
            im2col(src, ns, &g, &mut cols);
            let params = want_params.then(|| {
                let mut dw = vec![T::zero(); k * g.filters];
                gemm(k, rows, g.filters, &cols, true, dzc, false, T::zero(), &mut dw);
                let mut db = vec![T::zero(); g.filters];
                for row in dzc.chunks(g.filters) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                (dw, db)
            });
            let dx = want_input.then(|| {
                // Reuse the column buffer for d(cols) = dz * Wᵀ.
                gemm(rows, g.filters, k, dzc, false, p.weights.data(), true, T::zero(), &mut cols);
                let mut dx = vec![T::zero(); ns * in_per_sample];
                col2im(&cols, ns, &g, &mut dx);
                dx
            });
            (params, dx)
        });

        let mut dw_total: Option<(Vec<T>, Vec<T>)> = None;
        let mut dx_total = want_input.then(|| Vec::with_capacity(n * in_per_sample));
        for (params, dx) in parts {
            if let Some((dw, db)) = params {
                match &mut dw_total {
                    None => dw_total = Some((dw, db)),
                    Some((tw, tb)) => {
                        tw.iter_mut().zip(&dw).for_each(|(a, &b)| *a += b);
                        tb.iter_mut().zip(&db).for_each(|(a, &b)| *a += b);
                    }
                }
            }
            if let (Some(acc), Some(dx)) = (&mut dx_total, dx) {
                acc.extend_from_slice(&dx);
            }
        }
        let params = dw_total
            .map(|(dw, db)| -> Result<LayerTensors<T>> {
                Ok(LayerTensors {
                    weights: Tensor::new(p.weights.dims().to_vec(), dw)?,
                    bias: Tensor::new(p.bias.dims().to_vec(), db)?,
                })
            })
            .transpose()?;
        let input = dx_total
            .map(|dx| Tensor::new(input.dims().to_vec(), dx))
            .transpose()?;
        Ok(LayerGrads { input, params })
    }

    fn pool_forward(&self, x: &Tensor<T>, n: usize, keep_argmax: bool) -> (Tensor<T>, Vec<usize>) {
        let LayerKind::MaxPool2D { pool: (ph, pw) } = self.spec.kind else {
            unreachable!("pool_forward on non-pool layer");
        };
        let (h, w, c) = (self.input_shape[0], self.input_shape[1], self.input_shape[2]);
        let (oh, ow) = (self.output_shape[0], self.output_shape[1]);
        let per_out = oh * ow * c;
        let per_in = h * w * c;
        let xd = x.data();
        let results = par::map_range(n, |s| {
            let mut out = Vec::with_capacity(per_out);
            let mut arg = Vec::with_capacity(if keep_argmax { per_out } else { 0 });
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = T::neg_infinity();
                        let mut best_idx = usize::MAX;
                        for ky in 0..ph {
                            for kx in 0..pw {
                                let idx = s * per_in + ((oy * ph + ky) * w + (ox * pw + kx)) * c + ch;
                                // Strict comparison keeps the first maximum.
                                if best_idx == usize::MAX || xd[idx] > best {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        out.push(best);
                        if keep_argmax {
                            arg.push(best_idx);
                        }
                    }
                }
            }
            (out, arg)
        });
        let mut data = Vec::with_capacity(n * per_out);
        let mut argmax = Vec::new();
        for (o, a) in results {
            data.extend_from_slice(&o);
            argmax.extend_from_slice(&a);
        }
        let out = Tensor::new(self.out_dims(n), data).expect("pool output dims are consistent");
        (out, argmax)
    }

    fn dense_forward(&self, x: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
        let p = self.params()?;
        let activation = self.spec.activation().unwrap_or(Activation::Linear);
        let (inp, units) = (self.input_shape[0], self.output_shape[0]);
        let mut out = vec![T::zero(); n * units];
        gemm(n, inp, units, x.data(), false, p.weights.data(), false, T::zero(), &mut out);
        for row in out.chunks_mut(units) {
            for (v, &b) in row.iter_mut().zip(p.bias.data()) {
                *v += b;
            }
        }
        apply_activation_inplace(activation, &mut out, units);
        Tensor::new(self.out_dims(n), out)
    }

    fn dense_backward(
        &self,
        input: &Tensor<T>,
        dz: &Tensor<T>,
        want_input: bool,
        want_params: bool,
    ) -> Result<LayerGrads<T>> {
        let p = self.params()?;
        let n = input.batch();
        let (inp, units) = (self.input_shape[0], self.output_shape[0]);
        let params = if want_params {
            let mut dw = vec![T::zero(); inp * units];
            gemm(inp, n, units, input.data(), true, dz.data(), false, T::zero(), &mut dw);
            let mut db = vec![T::zero(); units];
            for row in dz.data().chunks(units) {
                for (d, &v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            Some(LayerTensors {
                weights: Tensor::new(vec![inp, units], dw)?,
                bias: Tensor::new(vec![units], db)?,
            })
        } else {
            None
        };
        let input_grad = if want_input {
            let mut dx = vec![T::zero(); n * inp];
            gemm(n, units, inp, dz.data(), false, p.weights.data(), true, T::zero(), &mut dx);
            Some(Tensor::new(input.dims().to_vec(), dx)?)
        } else {
            None
        };
        Ok(LayerGrads {
            input: input_grad,
            params,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    pad_t: usize,
    pad_l: usize,
    filters: usize,
    samples_per_chunk: usize,
}

/// Unroll `ns` samples into rows of `kh*kw*c` patch values (zero padded).
fn im2col<T: Real>(x: &[T], ns: usize, g: &ConvGeometry, cols: &mut [T]) {
    let k = g.kh * g.kw * g.c;
    let mut row = 0;
    for s in 0..ns {
        let base = s * g.h * g.w * g.c;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dst = &mut cols[row * k..(row + 1) * k];
                for ky in 0..g.kh {
                    let iy = (oy + ky) as isize - g.pad_t as isize;
                    for kx in 0..g.kw {
                        let ix = (ox + kx) as isize - g.pad_l as isize;
                        let d = &mut dst[(ky * g.kw + kx) * g.c..(ky * g.kw + kx + 1) * g.c];
                        if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                            d.fill(T::zero());
                        } else {
                            let off = base + (iy as usize * g.w + ix as usize) * g.c;
                            d.copy_from_slice(&x[off..off + g.c]);
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch rows back onto the image.
fn col2im<T: Real>(cols: &[T], ns: usize, g: &ConvGeometry, dx: &mut [T]) {
    let k = g.kh * g.kw * g.c;
    let mut row = 0;
    for s in 0..ns {
        let base = s * g.h * g.w * g.c;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let src = &cols[row * k..(row + 1) * k];
                for ky in 0..g.kh {
                    let iy = (oy + ky) as isize - g.pad_t as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox + kx) as isize - g.pad_l as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let off = base + (iy as usize * g.w + ix as usize) * g.c;
                        let sv = &src[(ky * g.kw + kx) * g.c..(ky * g.kw + kx + 1) * g.c];
                        for (d, &v) in dx[off..off + g.c].iter_mut().zip(sv) {
                            *d += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Apply `activation` in place; `width` is the softmax row length.
pub fn apply_activation_inplace<T: Real>(activation: Activation, data: &mut [T], width: usize) {
    match activation {
        Activation::Linear => {}
        Activation::Relu => data.iter_mut().for_each(|v| {
            if *v <= T::zero() {
                *v = T::zero();
            }
        }),
        Activation::Tanh => data.iter_mut().for_each(|v| *v = v.tanh()),
        Activation::Softmax => data.chunks_mut(width).for_each(softmax_row),
    }
}

fn softmax_row<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Row-wise, max-stabilized softmax of a `[n, k]` tensor.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = logits.dims()[..] else {
        return Err(Error::shape(format!("softmax needs [n, k], got {:?}", logits.dims())));
    };
    let mut out = logits.clone();
    apply_activation_inplace(Activation::Softmax, out.data_mut(), k);
    Ok(out)
}

/// Gradient w.r.t. the pre-activation, given the activation output and the
/// gradient w.r.t. that output. ReLU's derivative at exactly 0 is 0.
pub fn activation_backward<T: Real>(
    activation: Activation,
    output: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    if output.dims() != upstream.dims() {
        return Err(Error::shape(format!(
            "activation backward: output {:?} vs upstream {:?}",
            output.dims(),
            upstream.dims()
        )));
    }
    let y = output.data();
    let g = upstream.data();
    let data: Vec<T> = match activation {
        Activation::Linear => g.to_vec(),
        Activation::Relu => y
            .iter()
            .zip(g)
            .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
            .collect(),
        Activation::Tanh => y.iter().zip(g).map(|(&y, &g)| g * (T::one() - y * y)).collect(),
        Activation::Softmax => {
            let k = *output.dims().last().unwrap_or(&1);
            let mut out = Vec::with_capacity(y.len());
            for (yr, gr) in y.chunks(k).zip(g.chunks(k)) {
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                out.extend(yr.iter().zip(gr).map(|(&s, &gi)| s * (gi - dot)));
            }
            out
        }
    };
    Tensor::new(output.dims().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::rng_normal;

    fn conv_layer(
        input: &[usize],
        filters: usize,
        kernel: (usize, usize),
        padding: Padding,
        activation: Activation,
        rng: &mut Rng,
    ) -> Layer<f64> {
        let spec = LayerSpec {
            name: "c".into(),
            kind: LayerKind::Conv2D {
                filters,
                kernel,
                padding,
                activation,
            },
        };
        let (ws, bs) = spec.param_shapes(input).unwrap();
        let params = LayerTensors {
            weights: rng_normal(rng, &ws, 0.0, 0.5).unwrap(),
            bias: rng_normal(rng, &bs, 0.0, 0.5).unwrap(),
        };
        Layer::new(spec, input, Some(params)).unwrap()
    }

    /// Direct convolution, independent of im2col.
    fn naive_conv(layer: &Layer<f64>, x: &Tensor<f64>) -> Vec<f64> {
        let LayerKind::Conv2D {
            filters,
            kernel: (kh, kw),
            padding,
            ..
        } = layer.spec.kind
        else {
            unreachable!()
        };
        let p = layer.params.as_ref().unwrap();
        let [n, h, w, c] = x.dims()[..] else { unreachable!() };
        let (oh, ow) = (layer.output_shape[0], layer.output_shape[1]);
        let (pt, pl) = match padding {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
            Padding::Valid => (0, 0),
        };
        let wd = p.weights.data();
        let mut out = Vec::new();
        for s in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for f in 0..filters {
                        let mut acc = p.bias.data()[f];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy + ky) as isize - pt as isize;
                                let ix = (ox + kx) as isize - pl as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ch in 0..c {
                                    let xv = x.data()[((s * h + iy as usize) * w + ix as usize) * c + ch];
                                    acc += xv * wd[((ky * kw + kx) * c + ch) * filters + f];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let spec = LayerSpec {
            name: "id".into(),
            kind: LayerKind::Conv2D {
                filters: 1,
                kernel: (1, 1),
                padding: Padding::Same,
                activation: Activation::Linear,
            },
        };
        let params = LayerTensors {
            weights: Tensor::full(&[1, 1, 1, 1], 1.0f64).unwrap(),
            bias: Tensor::zeros(&[1]).unwrap(),
        };
        let layer = Layer::new(spec, &[4, 5, 1], Some(params)).unwrap();
        let mut rng = Rng::new(1);
        let x = rng_normal(&mut rng, &[2, 4, 5, 1], 0.0, 1.0).unwrap();
        assert_eq!(layer.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn valid_window_sum() {
        let spec = LayerSpec {
            name: "sum".into(),
            kind: LayerKind::Conv2D {
                filters: 1,
                kernel: (3, 3),
                padding: Padding::Valid,
                activation: Activation::Linear,
            },
        };
        let params = LayerTensors {
            weights: Tensor::full(&[3, 3, 1, 1], 1.0f64).unwrap(),
            bias: Tensor::zeros(&[1]).unwrap(),
        };
        let layer = Layer::new(spec, &[3, 3, 1], Some(params)).unwrap();
        let x = Tensor::full(&[1, 3, 3, 1], 1.0).unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = Rng::new(21);
        for padding in [Padding::Same, Padding::Valid] {
            let layer = conv_layer(&[6, 6, 2], 3, (3, 3), padding, Activation::Linear, &mut rng);
            let x = rng_normal(&mut rng, &[1, 6, 6, 2], 0.0, 1.0).unwrap();
            let y = layer.forward(&x).unwrap();
            let want = naive_conv(&layer, &x);
            assert_eq!(y.len(), want.len());
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_channel_mismatch_is_shape_error() {
        let mut rng = Rng::new(2);
        let layer = conv_layer(&[4, 4, 2], 3, (3, 3), Padding::Same, Activation::Relu, &mut rng);
        let x = Tensor::<f64>::zeros(&[1, 4, 4, 3]).unwrap();
        assert!(matches!(layer.forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_zero_upstream_gives_zero_grads() {
        let mut rng = Rng::new(4);
        let layer = conv_layer(&[5, 5, 2], 2, (3, 3), Padding::Same, Activation::Linear, &mut rng);
        let x = rng_normal(&mut rng, &[2, 5, 5, 2], 0.0, 1.0).unwrap();
        let (y, cache) = layer.forward_train(&x).unwrap();
        let up = Tensor::zeros(y.dims()).unwrap();
        let g = layer.backward(&cache, &up, true, true).unwrap();
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
        let p = g.params.unwrap();
        assert!(p.weights.data().iter().all(|&v| v == 0.0));
        assert!(p.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_scalar_product_rule() {
        let spec = LayerSpec {
            name: "s".into(),
            kind: LayerKind::Conv2D {
                filters: 1,
                kernel: (1, 1),
                padding: Padding::Valid,
                activation: Activation::Linear,
            },
        };
        let params = LayerTensors {
            weights: Tensor::full(&[1, 1, 1, 1], 0.7f64).unwrap(),
            bias: Tensor::zeros(&[1]).unwrap(),
        };
        let layer = Layer::new(spec, &[1, 1, 1], Some(params)).unwrap();
        let x = Tensor::full(&[1, 1, 1, 1], 3.0).unwrap();
        let (_, cache) = layer.forward_train(&x).unwrap();
        let up = Tensor::full(&[1, 1, 1, 1], 2.0).unwrap();
        let g = layer.backward(&cache, &up, true, true).unwrap();
        assert_eq!(g.params.unwrap().weights.data(), &[6.0]);
        assert!((g.input.unwrap().data()[0] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn upstream_shape_mismatch_errors() {
        let mut rng = Rng::new(4);
        let layer = conv_layer(&[4, 4, 1], 2, (3, 3), Padding::Same, Activation::Relu, &mut rng);
        let x = rng_normal(&mut rng, &[1, 4, 4, 1], 0.0, 1.0).unwrap();
        let (_, cache) = layer.forward_train(&x).unwrap();
        let bad = Tensor::zeros(&[1, 4, 4, 3]).unwrap();
        assert!(matches!(layer.backward(&cache, &bad, true, true), Err(Error::Shape(_))));
    }

    #[test]
    fn maxpool_forward_and_routing() {
        let layer: Layer<f64> = Layer::new(LayerSpec::pool("p"), &[2, 2, 1], None).unwrap();
        let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, cache) = layer.forward_train(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = layer
            .backward(&cache, &Tensor::full(&[1, 1, 1, 1], 5.0).unwrap(), true, false)
            .unwrap();
        assert_eq!(g.input.unwrap().data(), &[0.0, 0.0, 0.0, 5.0]);
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let layer: Layer<f64> = Layer::new(LayerSpec::pool("p"), &[2, 2, 1], None).unwrap();
        let x = Tensor::new(vec![1, 2, 2, 1], vec![7.0, 7.0, 7.0, 7.0]).unwrap();
        let (_, cache) = layer.forward_train(&x).unwrap();
        let g = layer
            .backward(&cache, &Tensor::full(&[1, 1, 1, 1], 1.0).unwrap(), true, false)
            .unwrap();
        assert_eq!(g.input.unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_one_nonzero_per_window() {
        let mut rng = Rng::new(13);
        let layer: Layer<f64> = Layer::new(LayerSpec::pool("p"), &[6, 7, 3], None).unwrap();
        assert_eq!(layer.output_shape, vec![3, 3, 3]);
        let x = rng_normal(&mut rng, &[2, 6, 7, 3], 0.0, 1.0).unwrap();
        let (y, cache) = layer.forward_train(&x).unwrap();
        let up = Tensor::full(y.dims(), 1.0).unwrap();
        let dx = layer.backward(&cache, &up, true, false).unwrap().input.unwrap();
        for s in 0..2 {
            for oy in 0..3 {
                for ox in 0..3 {
                    for c in 0..3 {
                        let mut nz = 0;
                        for ky in 0..2 {
                            for kx in 0..2 {
                                let i = ((s * 6 + oy * 2 + ky) * 7 + ox * 2 + kx) * 3 + c;
                                if dx.data()[i] != 0.0 {
                                    nz += 1;
                                }
                            }
                        }
                        assert_eq!(nz, 1);
                    }
                }
            }
        }
        // Dropped last column receives nothing.
        for s in 0..2 {
            for y in 0..6 {
                for c in 0..3 {
                    assert_eq!(dx.data()[((s * 6 + y) * 7 + 6) * 3 + c], 0.0);
                }
            }
        }
    }

    #[test]
    fn relu_and_derivative_at_zero() {
        let mut v = vec![-1.0f64, 0.0, 2.0];
        apply_activation_inplace(Activation::Relu, &mut v, 3);
        assert_eq!(v, vec![0.0, 0.0, 2.0]);
        let out = Tensor::new(vec![1, 3], v).unwrap();
        let up = Tensor::full(&[1, 3], 1.0).unwrap();
        let d = activation_backward(Activation::Relu, &out, &up).unwrap();
        assert_eq!(d.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let p = softmax(&Tensor::new(vec![1, 3], vec![0.0f64, 0.0, 0.0]).unwrap()).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let mut rng = Rng::new(6);
        let logits: Tensor<f64> = rng_normal(&mut rng, &[50, 3], 0.0, 1e4).unwrap();
        let p = softmax(&logits).unwrap();
        assert!(p.all_finite());
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let extreme = Tensor::new(vec![1, 3], vec![1e4f32, -1e4, 0.0]).unwrap();
        let p = softmax(&extreme).unwrap();
        assert!((p.data().iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn same_padding_chain_reaches_seven() {
        let mut shape = vec![224, 224, 3];
        for i in 0..5 {
            shape = LayerSpec::conv(format!("c{i}"), 8, Activation::Relu)
                .output_shape(&shape)
                .unwrap();
            shape = LayerSpec::pool(format!("p{i}")).output_shape(&shape).unwrap();
        }
        assert_eq!(shape, vec![7, 7, 8]);
    }

    #[test]
    fn spec_validation() {
        assert!(LayerSpec::conv("c", 0, Activation::Relu).output_shape(&[4, 4, 1]).is_err());
        assert!(LayerSpec::conv("c", 2, Activation::Softmax).output_shape(&[4, 4, 1]).is_err());
        assert!(LayerSpec::dense("d", 0, Activation::Relu).output_shape(&[4]).is_err());
        assert!(LayerSpec::dense("d", 3, Activation::Relu).output_shape(&[4, 4, 1]).is_err());
        assert_eq!(LayerSpec::conv("c", 512, Activation::Relu).param_count(&[14, 14, 512]), 2_359_808);
        assert_eq!(LayerSpec::dense("d", 3, Activation::Softmax).param_count(&[25_088]), 75_267);
    }

    #[test]
    fn parallel_and_sequential_bit_identical() {
        let mut rng = Rng::new(99);
        let layer = {
            let spec = LayerSpec::conv("c", 4, Activation::Relu);
            let (ws, bs) = spec.param_shapes(&[9, 9, 3]).unwrap();
            let params = LayerTensors {
                weights: rng_normal::<f32>(&mut rng, &ws, 0.0, 0.3).unwrap(),
                bias: rng_normal::<f32>(&mut rng, &bs, 0.0, 0.1).unwrap(),
            };
            Layer::new(spec, &[9, 9, 3], Some(params)).unwrap()
        };
        let x = rng_normal::<f32>(&mut rng, &[40, 9, 9, 3], 0.0, 1.0).unwrap();
        let run = || {
            let (y, cache) = layer.forward_train(&x).unwrap();
            let g = layer.backward(&cache, &y, true, true).unwrap();
            (y, g.input.unwrap(), g.params.unwrap())
        };
        let a = run();
        crate::par::force_sequential(true);
        let b = run();
        crate::par::force_sequential(false);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }
}
