use std::fmt;

use super::spec::{BnPosition, ModelSpec};
use crate::error::{Error, Result};
use crate::nn::{
    backward_stack, forward_stack, sgd_step, softmax, softmax_crossentropy, one_hot, BatchNorm, Conv2d, Dense,
    Dropout, Layer, LayerNode, MaxPool2x2, Mode, OptimizerConfig, Param, Relu,
};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const STREAM_NAMES: [&str; 2] = ["image", "difference"];

/// Model inputs for one batch. Images and difference images are
/// `[n, 1, h, w]`; timestamps are `[n, 1]` raw week numbers.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub image: Tensor<T>,
    pub difference: Option<Tensor<T>>,
    pub timestamp: Option<Tensor<T>>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.image.shape().first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_4d<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<()> {
    if t.rank() != 4 {
        return Err(Error::invalid(format!("{op} expects [n, c, h, w], got {:?}", t.shape())));
    }
    Ok(())
}

/// Concatenates two `[n, c, h, w]` tensors along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_4d(a, "concat_channels")?;
    check_4d(b, "concat_channels")?;
    let (sa, sb) = (a.shape(), b.shape());
    if sa[0] != sb[0] || sa[2..] != sb[2..] {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            left: sa.to_vec(),
            right: sb.to_vec(),
        });
    }
    let (pa, pb) = (sa[1] * sa[2] * sa[3], sb[1] * sb[2] * sb[3]);
    let mut out = Vec::with_capacity(a.len() + b.len());
    for i in 0..sa[0] {
        out.extend_from_slice(&a.data()[i * pa..(i + 1) * pa]);
        out.extend_from_slice(&b.data()[i * pb..(i + 1) * pb]);
    }
    Ok(Tensor::from_parts(vec![sa[0], sa[1] + sb[1], sa[2], sa[3]], out))
}

/// Inverse of [`concat_channels`]: the first `c_first` channels and the rest.
pub fn split_channels<T: Scalar>(t: &Tensor<T>, c_first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    check_4d(t, "split_channels")?;
    let s = t.shape();
    if c_first > s[1] {
        return Err(Error::invalid(format!("cannot split {c_first} channels from {:?}", s)));
    }
    let (n, plane) = (s[0], s[2] * s[3]);
    let (fa, fb) = (c_first * plane, (s[1] - c_first) * plane);
    let mut a = Vec::with_capacity(n * fa);
    let mut b = Vec::with_capacity(n * fb);
    for row in t.data().chunks_exact(fa + fb) {
        a.extend_from_slice(&row[..fa]);
        b.extend_from_slice(&row[fa..]);
    }
    Ok((
        Tensor::from_parts(vec![n, c_first, s[2], s[3]], a),
        Tensor::from_parts(vec![n, s[1] - c_first, s[2], s[3]], b),
    ))
}

/// Concatenates `[n, f_i]` feature matrices column-wise.
fn concat_features<T: Scalar>(parts: &[Tensor<T>]) -> Tensor<T> {
    let n = parts[0].shape()[0];
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * total);
    for i in 0..n {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
        }
    }
    Tensor::from_parts(vec![n, total], out)
}

fn split_features<T: Scalar>(t: &Tensor<T>, widths: &[usize]) -> Vec<Tensor<T>> {
    let n = t.shape()[0];
    let total = t.shape()[1];
    let mut parts: Vec<Vec<T>> = widths.iter().map(|&w| Vec::with_capacity(n * w)).collect();
    for row in t.data().chunks_exact(total) {
        let mut off = 0;
        for (p, &w) in parts.iter_mut().zip(widths) {
            p.extend_from_slice(&row[off..off + w]);
            off += w;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(d, &w)| Tensor::from_parts(vec![n, w], d))
        .collect()
}

/// 1x1 convolutions exchanging features between two streams.
///
/// Each stream's features are projected by a linear 1x1 convolution and
/// appended to the other stream's channels.
#[derive(Clone, Debug)]
pub struct CrossConnection<T> {
    /// Projects stream A into B.
    pub a_to_b: Option<Conv2d<T>>,
    /// Projects stream B into A.
    pub b_to_a: Option<Conv2d<T>>,
    channels: (usize, usize),
}

impl<T: Scalar> CrossConnection<T> {
    pub fn new(c_a: usize, c_b: usize, kernels: usize, rng: &mut SeededRng) -> Result<Self> {
        let (a_to_b, b_to_a) = if kernels == 0 {
            (None, None)
        } else {
            (
                Some(Conv2d::new(c_a, kernels, 1, rng)?),
                Some(Conv2d::new(c_b, kernels, 1, rng)?),
            )
        };
        Ok(CrossConnection {
            a_to_b,
            b_to_a,
            channels: (c_a, c_b),
        })
    }

    pub fn kernels(&self) -> usize {
        self.a_to_b.as_ref().map_or(0, |c| c.c_out())
    }

    pub fn forward(&mut self, a: &Tensor<T>, b: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Tensor<T>)> {
        cross_connect(a, b, self, mode)
    }

    /// Gradients with respect to the unmerged stream inputs.
    pub fn backward(&mut self, grad_a: &Tensor<T>, grad_b: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (Some(ab), Some(ba)) = (self.a_to_b.as_mut(), self.b_to_a.as_mut()) else {
            return Ok((grad_a.clone(), grad_b.clone()));
        };
        let (ga, g_from_b) = split_channels(grad_a, self.channels.0)?;
        let (gb, g_from_a) = split_channels(grad_b, self.channels.1)?;
        let ga = ga.add(&ab.backward(&g_from_a)?)?;
        let gb = gb.add(&ba.backward(&g_from_b)?)?;
        Ok((ga, gb))
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        [&self.a_to_b, &self.b_to_a]
            .into_iter()
            .flatten()
            .flat_map(|c| c.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        [&mut self.a_to_b, &mut self.b_to_a]
            .into_iter()
            .flatten()
            .flat_map(|c| c.params_mut())
            .collect()
    }
}

/// `mergedA = concat(A, conv(B))`, `mergedB = concat(B, conv(A))` along channels.
pub fn cross_connect<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    conn: &mut CrossConnection<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_4d(a, "cross_connect")?;
    check_4d(b, "cross_connect")?;
    if a.shape()[0] != b.shape()[0] || a.shape()[2..] != b.shape()[2..] {
        return Err(Error::ShapeMismatch {
            op: "cross_connect",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    if (a.shape()[1], b.shape()[1]) != conn.channels {
        return Err(Error::invalid(format!(
            "cross-connection built for {:?} channels, got ({}, {})",
            conn.channels,
            a.shape()[1],
            b.shape()[1]
        )));
    }
    let (Some(ab), Some(ba)) = (conn.a_to_b.as_mut(), conn.b_to_a.as_mut()) else {
        return Ok((a.clone(), b.clone()));
    };
    let from_b = ba.forward(b, mode)?;
    let from_a = ab.forward(a, mode)?;
    Ok((concat_channels(a, &from_b)?, concat_channels(b, &from_a)?))
}

/// One chain (or X-chain) across all streams.
#[derive(Clone, Debug)]
pub struct Stage<T> {
    /// Convolutions, pooling and, before cross, batch norm and dropout.
    pub body: Vec<Vec<LayerNode<T>>>,
    pub cross: Option<CrossConnection<T>>,
    /// Batch norm and dropout when they follow the cross-connection.
    pub post: Vec<Vec<LayerNode<T>>>,
}

impl<T: Scalar> Stage<T> {
    fn forward(&mut self, inputs: Vec<Tensor<T>>, mode: Mode) -> Result<Vec<Tensor<T>>> {
        let mut xs = inputs
            .iter()
            .zip(self.body.iter_mut())
            .map(|(x, body)| forward_stack(body, x, mode))
            .collect::<Result<Vec<_>>>()?;
        if let Some(cross) = self.cross.as_mut() {
            let (a, b) = cross.forward(&xs[0], &xs[1], mode)?;
            xs = vec![a, b];
        }
        xs.iter()
            .zip(self.post.iter_mut())
            .map(|(x, post)| forward_stack(post, x, mode))
            .collect()
    }

    fn backward(&mut self, grads: Vec<Tensor<T>>) -> Result<Vec<Tensor<T>>> {
        let mut gs = grads
            .iter()
            .zip(self.post.iter_mut())
            .map(|(g, post)| backward_stack(post, g))
            .collect::<Result<Vec<_>>>()?;
        if let Some(cross) = self.cross.as_mut() {
            let (a, b) = cross.backward(&gs[0], &gs[1])?;
            gs = vec![a, b];
        }
        gs.iter()
            .zip(self.body.iter_mut())
            .map(|(g, body)| backward_stack(body, g))
            .collect()
    }
}

/// Per-layer parameter counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamReport {
    pub trainable: usize,
    pub non_trainable: usize,
    pub layers: Vec<LayerCount>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCount {
    pub name: String,
    pub trainable: usize,
    pub non_trainable: usize,
}

impl ParamReport {
    pub fn total(&self) -> usize {
        self.trainable + self.non_trainable
    }

    fn push(&mut self, name: String, trainable: usize, non_trainable: usize) {
        if trainable + non_trainable == 0 {
            return;
        }
        self.trainable += trainable;
        self.non_trainable += non_trainable;
        self.layers.push(LayerCount {
            name,
            trainable,
            non_trainable,
        });
    }

    pub fn add_layer<T: Scalar, L: Layer<T> + ?Sized>(&mut self, name: impl Into<String>, layer: &L) {
        let trainable = layer.params().iter().map(|p| p.len()).sum();
        let non_trainable = layer.buffers().iter().map(|b| b.len()).sum();
        self.push(name.into(), trainable, non_trainable);
    }

    pub fn of_layers<T: Scalar>(layers: &[LayerNode<T>]) -> Self {
        let mut r = ParamReport::default();
        for (i, l) in layers.iter().enumerate() {
            r.add_layer(format!("{i}.{}", l.kind()), l);
        }
        r
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<width$}  {:>10}  {:>13}", "layer", "trainable", "non-trainable")?;
        for l in &self.layers {
            writeln!(f, "{:<width$}  {:>10}  {:>13}", l.name, l.trainable, l.non_trainable)?;
        }
        writeln!(f, "{:<width$}  {:>10}  {:>13}", "total", self.trainable, self.non_trainable)?;
        write!(f, "all parameters: {}", self.total())
    }
}

#[derive(Clone, Debug)]
struct ForwardCache {
    /// Shapes of each stream's final feature map.
    stream_shapes: Vec<Vec<usize>>,
    timestamp: bool,
}

/// A network built from a [`ModelSpec`].
#[derive(Clone, Debug)]
pub struct Model<T> {
    spec: ModelSpec,
    pub stages: Vec<Stage<T>>,
    /// Dense, ReLU, BN, dense, ReLU, BN, output.
    pub head: Vec<LayerNode<T>>,
    cache: Option<ForwardCache>,
}

pub fn build_model<T: Scalar>(spec: &ModelSpec, rng: &mut SeededRng) -> Result<Model<T>> {
    Model::build(spec, rng)
}

impl<T: Scalar> Model<T> {
    pub fn build(spec: &ModelSpec, rng: &mut SeededRng) -> Result<Self> {
        spec.validate()?;
        let streams = spec.streams();
        let mut dropout_stream = 0u64;
        let mut dropout = |rate: f64, rng: &SeededRng| -> Result<LayerNode<T>> {
            dropout_stream += 1;
            Ok(LayerNode::Dropout(Dropout::new(rate, rng.fork(0xD0_0000 + dropout_stream))?))
        };

        let mut stages = Vec::with_capacity(spec.chains.len());
        let mut c_in = 1;
        for (i, xc) in spec.chains.iter().enumerate() {
            let k = xc.chain.kernels;
            let cross_k = if streams == 2 { xc.cross_kernels } else { 0 };
            let mut body = Vec::with_capacity(streams);
            let mut post = Vec::with_capacity(streams);
            for _ in 0..streams {
                let mut layers = vec![
                    LayerNode::Conv(Conv2d::new(c_in, k, 3, rng)?),
                    LayerNode::Relu(Relu::new()),
                    LayerNode::Conv(Conv2d::new(k, k, 3, rng)?),
                    LayerNode::Relu(Relu::new()),
                    LayerNode::Pool(MaxPool2x2::new()),
                ];
                let mut tail = Vec::new();
                let bn_channels = match spec.bn_position {
                    BnPosition::BeforeCross => k,
                    BnPosition::AfterCross => k + cross_k,
                };
                let target = match spec.bn_position {
                    BnPosition::BeforeCross => &mut layers,
                    BnPosition::AfterCross => &mut tail,
                };
                target.push(LayerNode::BatchNorm(BatchNorm::new(bn_channels)?));
                if xc.chain.uses_dropout() {
                    target.push(dropout(xc.chain.dropout, rng)?);
                }
                body.push(layers);
                post.push(tail);
            }
            let cross = if streams == 2 {
                Some(CrossConnection::new(k, k, cross_k, rng)?)
            } else {
                None
            };
            stages.push(Stage { body, cross, post });
            c_in = spec.chain_out_channels(i);
        }

        let flat = spec.flat_features() + usize::from(spec.kind.uses_timestamp());
        let [d1, d2] = spec.dense;
        let head = vec![
            LayerNode::Dense(Dense::new(flat, d1, rng)?),
            LayerNode::Relu(Relu::new()),
            LayerNode::BatchNorm(BatchNorm::new(d1)?),
            LayerNode::Dense(Dense::new(d1, d2, rng)?),
            LayerNode::Relu(Relu::new()),
            LayerNode::BatchNorm(BatchNorm::new(d2)?),
            LayerNode::Dense(Dense::output(d2, spec.n_classes, rng)?),
        ];
        let model = Model {
            spec: spec.clone(),
            stages,
            head,
            cache: None,
        };
        model.check_architecture()?;
        Ok(model)
    }

    /// Confirms the built layer shapes agree with `ModelSpec`'s shape arithmetic.
    fn check_architecture(&self) -> Result<()> {
        let (h, w) = self.spec.input_dims;
        let mut shapes = vec![vec![1, 1, h, w]; self.spec.streams()];
        for stage in &self.stages {
            for (s, body) in shapes.iter_mut().zip(&stage.body) {
                *s = crate::nn::stack_output_shape(body, s)?;
            }
            if let Some(c) = &stage.cross {
                for s in shapes.iter_mut() {
                    s[1] += c.kernels();
                }
            }
            for (s, post) in shapes.iter_mut().zip(&stage.post) {
                *s = crate::nn::stack_output_shape(post, s)?;
            }
        }
        let flat: usize = shapes.iter().map(|s| s[1..].iter().product::<usize>()).sum();
        if flat != self.spec.flat_features() {
            return Err(Error::Model(format!(
                "flattened features {flat} disagree with expected {}",
                self.spec.flat_features()
            )));
        }
        Ok(())
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    fn check_batch(&self, batch: &Batch<T>) -> Result<()> {
        let (h, w) = self.spec.input_dims;
        let n = batch.len();
        let want = [n, 1, h, w];
        if n == 0 || batch.image.shape() != want {
            return Err(Error::invalid(format!(
                "image batch must be [n, 1, {h}, {w}] with n > 0, got {:?}",
                batch.image.shape()
            )));
        }
        let kind = self.spec.kind;
        match (&batch.difference, kind.is_cross()) {
            (None, true) => return Err(Error::invalid(format!("{kind} requires a difference image"))),
            (Some(_), false) => return Err(Error::invalid(format!("{kind} does not accept a difference image"))),
            (Some(d), true) if d.shape() != want => {
                return Err(Error::ShapeMismatch {
                    op: "difference input",
                    left: d.shape().to_vec(),
                    right: want.to_vec(),
                })
            }
            _ => {}
        }
        match (&batch.timestamp, kind.uses_timestamp()) {
            (None, true) => return Err(Error::invalid(format!("{kind} requires a timestamp"))),
            (Some(_), false) => return Err(Error::invalid(format!("{kind} does not accept a timestamp"))),
            (Some(t), true) if t.shape() != [n, 1] => {
                return Err(Error::invalid(format!("timestamps must be [{n}, 1], got {:?}", t.shape())))
            }
            _ => {}
        }
        Ok(())
    }

    /// Pre-softmax scores `[n, n_classes]`.
    pub fn logits(&mut self, batch: &Batch<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        let mut xs = vec![batch.image.clone()];
        if let Some(d) = &batch.difference {
            xs.push(d.clone());
        }
        for stage in &mut self.stages {
            xs = stage.forward(xs, mode)?;
        }
        let n = batch.len();
        let stream_shapes: Vec<Vec<usize>> = xs.iter().map(|x| x.shape().to_vec()).collect();
        let mut parts = xs
            .into_iter()
            .map(|x| {
                let f = x.len() / n;
                x.reshape(&[n, f])
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(t) = &batch.timestamp {
            parts.push(t.clone());
        }
        let features = concat_features(&parts);
        let out = forward_stack(&mut self.head, &features, mode)?;
        self.cache = Some(ForwardCache {
            stream_shapes,
            timestamp: batch.timestamp.is_some(),
        });
        Ok(out)
    }

    /// Class probabilities `[n, n_classes]`; rows sum to one.
    pub fn forward(&mut self, batch: &Batch<T>, mode: Mode) -> Result<Tensor<T>> {
        let logits = self.logits(batch, mode)?;
        softmax(&logits)
    }

    /// Back-propagates `d loss / d logits` from the last forward pass, adding
    /// into every parameter gradient.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Model("backward called before forward".into()))?;
        let g = backward_stack(&mut self.head, grad_logits)?;
        let mut widths: Vec<usize> = cache
            .stream_shapes
            .iter()
            .map(|s| s[1..].iter().product())
            .collect();
        if cache.timestamp {
            widths.push(1);
        }
        let mut gs = split_features(&g, &widths);
        gs.truncate(cache.stream_shapes.len());
        let mut gs = gs
            .into_iter()
            .zip(&cache.stream_shapes)
            .map(|(g, s)| g.reshape(s))
            .collect::<Result<Vec<_>>>()?;
        for stage in self.stages.iter_mut().rev() {
            gs = stage.backward(gs)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Mean cross-entropy of a training-mode pass; leaves fresh gradients in
    /// every parameter. The L2 penalty is not included.
    pub fn loss_and_gradients(&mut self, batch: &Batch<T>, labels: &[usize]) -> Result<f64> {
        if labels.len() != batch.len() {
            return Err(Error::invalid(format!(
                "{} labels for a batch of {}",
                labels.len(),
                batch.len()
            )));
        }
        let y = one_hot(labels, self.spec.n_classes)?;
        let logits = self.logits(batch, Mode::Train)?;
        let (loss, grad) = softmax_crossentropy(&logits, &y)?;
        self.zero_grad();
        self.backward(&grad)?;
        Ok(loss)
    }

    /// One SGD step. Learning rate and momentum come from `cfg`; the L2
    /// coefficient is the model's own. Returns the batch cross-entropy.
    pub fn backward_and_step(&mut self, batch: &Batch<T>, labels: &[usize], cfg: &OptimizerConfig) -> Result<f64> {
        let cfg = OptimizerConfig {
            l2: self.spec.l2,
            ..*cfg
        };
        cfg.validate()?;
        let loss = self.loss_and_gradients(batch, labels)?;
        for p in self.params_mut() {
            sgd_step(p, &cfg)?;
        }
        Ok(loss)
    }

    /// `l2 * sum(w^2)` over decayed weights.
    pub fn l2_penalty(&self) -> f64 {
        let ss: f64 = self
            .params()
            .iter()
            .filter(|p| p.decay)
            .flat_map(|p| p.value.data().iter().map(|v| v.as_f64().powi(2)))
            .sum();
        self.spec.l2 * ss
    }

    /// Every layer in traversal order with its name.
    pub fn named_layers(&self) -> Vec<(String, &dyn Layer<T>)> {
        let mut out = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            for (s, body) in stage.body.iter().enumerate() {
                for (j, l) in body.iter().enumerate() {
                    out.push((format!("chain{}.{}.{j}.{}", i + 1, STREAM_NAMES[s], l.kind()), l as &dyn Layer<T>));
                }
            }
            if let Some(c) = &stage.cross {
                if let Some(ab) = &c.a_to_b {
                    out.push((format!("chain{}.cross.image_to_difference", i + 1), ab as &dyn Layer<T>));
                }
                if let Some(ba) = &c.b_to_a {
                    out.push((format!("chain{}.cross.difference_to_image", i + 1), ba as &dyn Layer<T>));
                }
            }
            for (s, post) in stage.post.iter().enumerate() {
                for (j, l) in post.iter().enumerate() {
                    out.push((format!("chain{}.{}.post{j}.{}", i + 1, STREAM_NAMES[s], l.kind()), l as &dyn Layer<T>));
                }
            }
        }
        for (j, l) in self.head.iter().enumerate() {
            out.push((format!("head.{j}.{}", l.kind()), l as &dyn Layer<T>));
        }
        out
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for stage in &self.stages {
            for body in &stage.body {
                out.extend(body.iter().flat_map(|l| l.params()));
            }
            if let Some(c) = &stage.cross {
                out.extend(c.params());
            }
            for post in &stage.post {
                out.extend(post.iter().flat_map(|l| l.params()));
            }
        }
        out.extend(self.head.iter().flat_map(|l| l.params()));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for stage in &mut self.stages {
            for body in &mut stage.body {
                out.extend(body.iter_mut().flat_map(|l| l.params_mut()));
            }
            if let Some(c) = stage.cross.as_mut() {
                out.extend(c.params_mut());
            }
            for post in &mut stage.post {
                out.extend(post.iter_mut().flat_map(|l| l.params_mut()));
            }
        }
        out.extend(self.head.iter_mut().flat_map(|l| l.params_mut()));
        out
    }

    /// Batch-norm running statistics in traversal order.
    pub fn buffers(&self) -> Vec<&Tensor<T>> {
        self.all_layers().flat_map(|l| l.buffers()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for stage in &mut self.stages {
            for body in &mut stage.body {
                out.extend(body.iter_mut().flat_map(|l| l.buffers_mut()));
            }
            for post in &mut stage.post {
                out.extend(post.iter_mut().flat_map(|l| l.buffers_mut()));
            }
        }
        out.extend(self.head.iter_mut().flat_map(|l| l.buffers_mut()));
        out
    }

    fn all_layers(&self) -> impl Iterator<Item = &LayerNode<T>> {
        self.stages
            .iter()
            .flat_map(|s| s.body.iter().chain(&s.post).flatten())
            .chain(&self.head)
    }

    pub fn count_params(&self) -> ParamReport {
        let mut r = ParamReport::default();
        for (name, layer) in self.named_layers() {
            r.add_layer::<T, _>(name, layer);
        }
        r
    }

    /// Reuses dropout masks across forward passes (finite-difference checks).
    pub fn freeze_dropout(&mut self, freeze: bool) {
        for stage in &mut self.stages {
            for l in stage.body.iter_mut().chain(stage.post.iter_mut()).flatten() {
                if let LayerNode::Dropout(d) = l {
                    d.freeze_mask = freeze;
                }
            }
        }
    }

    /// The matching model without timestamp input: the timestamp row of the
    /// first dense layer is dropped, everything else is copied.
    pub fn without_timestamp(&self) -> Result<Model<T>> {
        if !self.spec.kind.uses_timestamp() {
            return Err(Error::Model(format!("{} has no timestamp input", self.spec.kind)));
        }
        let mut out = self.clone();
        out.spec.kind = self.spec.kind.without_timestamp();
        out.cache = None;
        let LayerNode::Dense(d) = &mut out.head[0] else {
            return Err(Error::Model("head does not start with a dense layer".into()));
        };
        let (f_in, f_out) = (d.f_in(), d.f_out());
        let w = d.weight.value.data()[..(f_in - 1) * f_out].to_vec();
        let bias = d.bias.value.clone();
        *d = Dense::from_tensors(Tensor::from_vec(&[f_in - 1, f_out], w)?, bias)?;
        d.weight.decay = true;
        Ok(out)
    }
}
