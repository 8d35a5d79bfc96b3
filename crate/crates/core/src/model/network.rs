use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{EntryKind, LayerKind, LayerLayout, Layout, ParamVector, Region};
use super::spec::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::tape::{log_softmax_row, BatchStats, Tape, Var};
use crate::tensor::{Dual, Real, Tensor};

/// Momentum of batch-norm running buffers: `r ← (1 − m)·r + m·batch`.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running buffers are updated by the caller.
    Train,
    /// Stored running statistics.
    Eval,
}

#[derive(Clone, Debug)]
enum Step {
    Linear { w: usize, out: usize, fan_in: usize, b: Option<usize> },
    Conv { w: usize, shape: [usize; 4], stride: usize, pad: usize, b: Option<usize> },
    BatchNorm { layer: usize, offset: usize, channels: usize },
    Relu,
    MaxPool,
    Skip(Vec<Step>),
}

/// Flattened execution order, used to check positive homogeneity between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Token {
    Param(usize),
    Relu,
    Pool,
    Barrier,
}

/// Result of one forward pass.
pub struct Forward {
    pub logits: Var,
    /// Training-mode batch statistics per batch-norm parameter layer.
    pub batch_stats: Vec<(usize, BatchStats)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Fraction of misclassified samples.
    pub error: f64,
}

/// An immutable compiled model graph.
#[derive(Clone, Debug)]
pub struct Network {
    spec: ModelSpec,
    steps: Vec<Step>,
    layout: Arc<Layout>,
    trace: Vec<Token>,
    names: Vec<String>,
    hash: String,
}

struct Compiler {
    regions: Vec<LayerLayout>,
    names: Vec<String>,
    trace: Vec<Token>,
    offset: usize,
}

fn describe(l: &LayerSpec) -> &'static str {
    match l {
        LayerSpec::Linear { .. } => "linear",
        LayerSpec::Conv { .. } => "conv",
        LayerSpec::Relu => "relu",
        LayerSpec::Batchnorm => "batchnorm",
        LayerSpec::Maxpool => "maxpool",
        LayerSpec::Skip { .. } => "skip",
    }
}

impl Compiler {
    fn add_layer(&mut self, kind: LayerKind, name: String, parts: &[(EntryKind, usize)], filter_len: usize) -> (usize, usize) {
        let start = self.offset;
        let mut regions = Vec::new();
        for &(k, n) in parts {
            regions.push(Region { kind: k, range: self.offset..self.offset + n });
            self.offset += n;
        }
        self.regions.push(LayerLayout { kind, regions, filter_len });
        self.names.push(name);
        let idx = self.regions.len() - 1;
        self.trace.push(Token::Param(idx));
        (idx, start)
    }

    fn compile(&mut self, layers: &[LayerSpec], mut shape: Vec<usize>, path: &str) -> Result<(Vec<Step>, Vec<usize>)> {
        let mut steps = Vec::new();
        let mut prev = String::from("input");
        for (i, layer) in layers.iter().enumerate() {
            let name = format!("{path}[{i}] ({})", describe(layer));
            let incompatible = |why: String| Error::Spec(format!("{prev} -> {name}: {why}"));
            match layer {
                LayerSpec::Linear { out, bias } => {
                    if *out == 0 {
                        return Err(incompatible("zero output size".into()));
                    }
                    let fan_in: usize = shape.iter().product();
                    let mut parts = vec![(EntryKind::Weight, out * fan_in)];
                    if *bias {
                        parts.push((EntryKind::Bias, *out));
                    }
                    let (_, w) = self.add_layer(LayerKind::Linear, name.clone(), &parts, fan_in);
                    let b = bias.then_some(w + out * fan_in);
                    steps.push(Step::Linear { w, out: *out, fan_in, b });
                    shape = vec![*out];
                }
                LayerSpec::Conv { out, kernel, stride, bias } => {
                    if shape.len() != 3 {
                        return Err(incompatible(format!("conv needs [C, H, W] input, got {shape:?}")));
                    }
                    if *out == 0 || *kernel == 0 || *stride == 0 {
                        return Err(incompatible("zero-sized conv".into()));
                    }
                    let pad = kernel / 2;
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    if h + 2 * pad < *kernel || w + 2 * pad < *kernel {
                        return Err(incompatible(format!("kernel {kernel} larger than input {shape:?}")));
                    }
                    let flen = c * kernel * kernel;
                    let mut parts = vec![(EntryKind::Weight, out * flen)];
                    if *bias {
                        parts.push((EntryKind::Bias, *out));
                    }
                    let (_, woff) = self.add_layer(LayerKind::Conv, name.clone(), &parts, flen);
                    let b = bias.then_some(woff + out * flen);
                    steps.push(Step::Conv {
                        w: woff,
                        shape: [*out, c, *kernel, *kernel],
                        stride: *stride,
                        pad,
                        b,
                    });
                    shape = vec![*out, (h + 2 * pad - kernel) / stride + 1, (w + 2 * pad - kernel) / stride + 1];
                }
                LayerSpec::Batchnorm => {
                    let c = shape[0];
                    let parts = [
                        (EntryKind::BnScale, c),
                        (EntryKind::BnShift, c),
                        (EntryKind::BnRunningStat, 2 * c),
                    ];
                    let (idx, off) = self.add_layer(LayerKind::BatchNorm, name.clone(), &parts, 0);
                    steps.push(Step::BatchNorm { layer: idx, offset: off, channels: c });
                }
                LayerSpec::Relu => {
                    self.trace.push(Token::Relu);
                    steps.push(Step::Relu);
                }
                LayerSpec::Maxpool => {
                    if shape.len() != 3 || shape[1] < 2 || shape[2] < 2 {
                        return Err(incompatible(format!("maxpool needs [C, H>=2, W>=2], got {shape:?}")));
                    }
                    self.trace.push(Token::Pool);
                    steps.push(Step::MaxPool);
                    shape = vec![shape[0], shape[1] / 2, shape[2] / 2];
                }
                LayerSpec::Skip { layers } => {
                    self.trace.push(Token::Barrier);
                    let (inner, out_shape) = self.compile(layers, shape.clone(), &format!("{path}[{i}].layers"))?;
                    if out_shape != shape {
                        return Err(incompatible(format!(
                            "skip block maps {shape:?} to {out_shape:?}; identity shortcut needs equal shapes"
                        )));
                    }
                    self.trace.push(Token::Barrier);
                    steps.push(Step::Skip(inner));
                }
            }
            prev = name;
        }
        Ok((steps, shape))
    }
}

impl Network {
    /// Compiles `spec` and draws Glorot-uniform initial weights from `seed`.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<(Network, ParamVector)> {
        let net = Network::compile(spec)?;
        let params = net.init(seed);
        Ok((net, params))
    }

    pub fn compile(spec: &ModelSpec) -> Result<Network> {
        if spec.input.is_empty() || spec.input.contains(&0) {
            return Err(Error::Spec(format!("invalid input shape {:?}", spec.input)));
        }
        if spec.classes < 2 {
            return Err(Error::Spec("need at least 2 classes".into()));
        }
        let mut c = Compiler { regions: Vec::new(), names: Vec::new(), trace: Vec::new(), offset: 0 };
        let (steps, out) = c.compile(&spec.layers, spec.input.clone(), "layers")?;
        if out != [spec.classes] {
            return Err(Error::Spec(format!("network output {out:?} does not match {} classes", spec.classes)));
        }
        let layout = Layout { layers: c.regions, len: c.offset, spec_hash: spec.hash() };
        layout.validate()?;
        Ok(Network {
            spec: spec.clone(),
            steps,
            layout: Arc::new(layout),
            trace: c.trace,
            names: c.names,
            hash: spec.hash(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn spec_hash(&self) -> &str {
        &self.hash
    }

    pub fn dim(&self) -> usize {
        self.layout.len
    }

    pub fn layer_name(&self, layer: usize) -> Option<&str> {
        self.names.get(layer).map(String::as_str)
    }

    pub fn init(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; self.layout.len];
        for layer in &self.layout.layers {
            match layer.kind {
                LayerKind::Linear | LayerKind::Conv => {
                    let w = layer.region(EntryKind::Weight).expect("weight layer").range.clone();
                    let filters = w.len() / layer.filter_len;
                    let (fan_in, fan_out) = match layer.kind {
                        LayerKind::Conv => {
                            let k2 = self.kernel_area(layer);
                            (layer.filter_len, filters * k2)
                        }
                        _ => (layer.filter_len, filters),
                    };
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for v in &mut values[w] {
                        *v = rng.gen_range(-a..a);
                    }
                }
                LayerKind::BatchNorm => {
                    let scale = layer.region(EntryKind::BnScale).unwrap().range.clone();
                    values[scale].fill(1.0);
                    let stats = layer.region(EntryKind::BnRunningStat).unwrap().range.clone();
                    let c = stats.len() / 2;
                    values[stats.start + c..stats.end].fill(1.0);
                }
            }
        }
        ParamVector::new(values, self.layout.clone()).expect("layout length")
    }

    fn kernel_area(&self, layer: &LayerLayout) -> usize {
        fn find(steps: &[Step], w: usize) -> Option<usize> {
            steps.iter().find_map(|s| match s {
                Step::Conv { w: off, shape, .. } if *off == w => Some(shape[2] * shape[3]),
                Step::Skip(inner) => find(inner, w),
                _ => None,
            })
        }
        let w = layer.region(EntryKind::Weight).unwrap().range.start;
        find(&self.steps, w).unwrap_or(1)
    }

    fn check_input<T: Real>(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != self.spec.input.len() + 1 || x.shape()[1..] != self.spec.input[..] {
            return Err(Error::Shape(format!(
                "input {:?} does not match model input [N, {}]",
                x.shape(),
                self.spec.input.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `tape`; `params` must have length [`Self::dim`].
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &[T], x: &Tensor<T>, mode: Mode) -> Result<Forward> {
        if params.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: params.len() });
        }
        self.check_input(x)?;
        let input = tape.constant(x.clone());
        let mut stats = Vec::new();
        let logits = self.run(&self.steps, tape, params, input, mode, &mut stats)?;
        Ok(Forward { logits, batch_stats: stats })
    }

    fn run<T: Real>(
        &self,
        steps: &[Step],
        tape: &mut Tape<T>,
        p: &[T],
        mut h: Var,
        mode: Mode,
        stats: &mut Vec<(usize, BatchStats)>,
    ) -> Result<Var> {
        let leaf = |tape: &mut Tape<T>, off: usize, shape: Vec<usize>| -> Var {
            let n: usize = shape.iter().product();
            tape.param(Tensor::new(shape, p[off..off + n].to_vec()).expect("sized"), off)
        };
        for step in steps {
            h = match step {
                Step::Linear { w, out, fan_in, b, .. } => {
                    let wv = leaf(tape, *w, vec![*out, *fan_in]);
                    let y = tape.linear(h, wv)?;
                    match b {
                        Some(b) => {
                            let bv = leaf(tape, *b, vec![*out]);
                            tape.add_bias(y, bv)?
                        }
                        None => y,
                    }
                }
                Step::Conv { w, shape, stride, pad, b, .. } => {
                    let wv = leaf(tape, *w, shape.to_vec());
                    let y = tape.conv2d(h, wv, *stride, *pad)?;
                    match b {
                        Some(b) => {
                            let bv = leaf(tape, *b, vec![shape[0]]);
                            tape.add_bias(y, bv)?
                        }
                        None => y,
                    }
                }
                Step::BatchNorm { layer, offset, channels } => {
                    let c = *channels;
                    let gamma = leaf(tape, *offset, vec![c]);
                    let beta = leaf(tape, offset + c, vec![c]);
                    match mode {
                        Mode::Train => {
                            let (y, s) = tape.batch_norm_train(h, gamma, beta)?;
                            stats.push((*layer, s));
                            y
                        }
                        Mode::Eval => {
                            let mean: Vec<f64> = p[offset + 2 * c..offset + 3 * c].iter().map(|v| v.value()).collect();
                            let var: Vec<f64> = p[offset + 3 * c..offset + 4 * c].iter().map(|v| v.value()).collect();
                            tape.batch_norm_eval(h, gamma, beta, &mean, &var)?
                        }
                    }
                }
                Step::Relu => tape.relu(h),
                Step::MaxPool => tape.max_pool2(h)?,
                Step::Skip(inner) => {
                    let y = self.run(inner, tape, p, h, mode, stats)?;
                    tape.add(y, h)?
                }
            };
        }
        Ok(h)
    }

    /// Inference-mode logits.
    pub fn logits(&self, params: &[f64], x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, params, x, Mode::Eval)?;
        Ok(tape.value(f.logits).clone())
    }

    /// Inference-mode mean cross-entropy and error rate over `(x, labels)`.
    pub fn evaluate(&self, params: &[f64], x: &Tensor<f64>, labels: &[usize]) -> Result<Evaluation> {
        let logits = self.logits(params, x)?;
        Ok(score(&logits, labels))
    }

    /// Mean loss and its gradient with respect to every entry (zero on running statistics).
    pub fn loss_grad(
        &self,
        params: &[f64],
        x: &Tensor<f64>,
        labels: &[usize],
        mode: Mode,
    ) -> Result<(f64, Vec<f64>, Vec<(usize, BatchStats)>)> {
        let mut tape = Tape::<f64>::new();
        let f = self.forward(&mut tape, params, x, mode)?;
        let loss = tape.softmax_cross_entropy(f.logits, labels)?;
        let value = tape.value(loss).data()[0];
        let grad = tape.backward(loss)?.param_gradient(self.dim());
        Ok((value, grad, f.batch_stats))
    }

    /// Hessian-vector product of the mean loss, by forward-mode differentiation of
    /// the reverse-mode gradient along `v`.
    pub fn hvp(&self, params: &[f64], v: &[f64], x: &Tensor<f64>, labels: &[usize], mode: Mode) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: v.len() });
        }
        let dual: Vec<Dual> = params.iter().zip(v).map(|(&p, &t)| Dual::new(p, t)).collect();
        let mut tape = Tape::<Dual>::new();
        let f = self.forward(&mut tape, &dual, &x.lift(), mode)?;
        let loss = tape.softmax_cross_entropy(f.logits, labels)?;
        let g = tape.backward(loss)?.param_gradient(self.dim());
        Ok(g.into_iter().map(|d| d.eps).collect())
    }

    /// Multiplies the weights of parameter layer `layer` by `c` and those of
    /// `layer + 1` by `1/c`. Only ReLU or max-pool may sit between the two.
    pub fn rescale_pair(&self, theta: &ParamVector, layer: usize, c: f64) -> Result<ParamVector> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Rescale(format!("factor must be positive and finite, got {c}")));
        }
        let count = self.layout.layers.len();
        if layer + 1 >= count {
            return Err(Error::LayerIndex { index: layer + 1, count });
        }
        for l in [layer, layer + 1] {
            if !self.layout.layers[l].is_weight_layer() {
                return Err(Error::Rescale(format!("{} is not a weight layer", self.names[l])));
            }
        }
        let a = self.trace.iter().position(|t| *t == Token::Param(layer)).unwrap();
        let b = self.trace.iter().position(|t| *t == Token::Param(layer + 1)).unwrap();
        if let Some(bad) = self.trace[a + 1..b].iter().find(|t| !matches!(t, Token::Relu | Token::Pool)) {
            return Err(Error::Rescale(format!(
                "{:?} between {} and {} is not positively homogeneous",
                bad,
                self.names[layer],
                self.names[layer + 1]
            )));
        }
        let mut values = theta.values.clone();
        let first = self.layout.layers[layer].region(EntryKind::Weight).unwrap().range.clone();
        let second = self.layout.layers[layer + 1].region(EntryKind::Weight).unwrap().range.clone();
        values[first].iter_mut().for_each(|v| *v *= c);
        values[second].iter_mut().for_each(|v| *v *= 1.0 / c);
        theta.with_values(values)
    }

    /// Folds training-mode batch statistics into the running buffers of `params`.
    pub fn update_running_stats(&self, params: &mut [f64], stats: &[(usize, BatchStats)]) {
        for (layer, s) in stats {
            let r = self.layout.layers[*layer].region(EntryKind::BnRunningStat).unwrap().range.clone();
            let c = s.mean.len();
            for ch in 0..c {
                let m = &mut params[r.start + ch];
                *m = (1.0 - BN_MOMENTUM) * *m + BN_MOMENTUM * s.mean[ch];
                let v = &mut params[r.start + c + ch];
                *v = (1.0 - BN_MOMENTUM) * *v + BN_MOMENTUM * s.var[ch];
            }
        }
    }
}

/// Mean cross-entropy and error rate of logits `[N, K]`.
pub fn score(logits: &Tensor<f64>, labels: &[usize]) -> Evaluation {
    let k = logits.shape()[1];
    let mut loss = 0.0;
    let mut wrong = 0usize;
    for (s, &y) in labels.iter().enumerate() {
        let row = &logits.data()[s * k..(s + 1) * k];
        let (lse, arg) = log_softmax_row(row);
        loss += lse - row[y];
        if arg != y {
            wrong += 1;
        }
    }
    let n = labels.len() as f64;
    Evaluation { loss: loss / n, error: wrong as f64 / n }
}
