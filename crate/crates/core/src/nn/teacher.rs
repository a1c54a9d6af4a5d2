use distilnas_tensor::{ops, Tensor};
use rand_chacha::ChaCha8Rng;

use super::layers::{BatchNorm, Conv, Linear};
use super::{join, Classifier, Module, NamedTensor};
use crate::arch::{Dims, FilterSpec};
use crate::error::{spec_err, Result};

/// A feature extractor split into consecutive segments `m_1..m_N`; the
/// output of segment `n` feeds segment `n + 1`.
pub trait Backbone: Module {
    fn num_segments(&self) -> usize;
    /// Channels produced by segment `n` (0-based).
    fn segment_channels(&self, n: usize) -> usize;
    fn forward_segment(&self, n: usize, x: &Tensor, training: bool) -> Result<Tensor>;
    /// Human-readable construction parameters, stored in checkpoints.
    fn describe(&self) -> String;
}

#[derive(Debug, Clone)]
struct ConvBnRelu {
    conv: Conv,
    bn: BatchNorm,
}

impl ConvBnRelu {
    fn new(cin: usize, cout: usize, kernel: usize, stride: usize, dims: Dims, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(ConvBnRelu {
            conv: Conv::with_stride(FilterSpec::new(kernel, cout, 1), cin, dims, stride, rng)?,
            bn: BatchNorm::new(cout),
        })
    }

    fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        Ok(ops::relu(&self.bn.forward(&self.conv.forward(x)?, training)?))
    }
}

impl Module for ConvBnRelu {
    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.conv.collect(&join(prefix, "conv"), out);
        self.bn.collect(&join(prefix, "bn"), out);
    }
}

/// A plain convolutional backbone. Segment 1 is a stride-2 3×3 conv and a
/// second 3×3 conv at width `widths[0]`; each later segment is one 3×3 conv
/// to `widths[n]`. Every segment ends in 2× max pooling and every conv is
/// followed by batch norm and ReLU.
#[derive(Debug, Clone)]
pub struct PlainCnnBackbone {
    input_channels: usize,
    widths: Vec<usize>,
    dims: Dims,
    segments: Vec<Vec<ConvBnRelu>>,
}

impl PlainCnnBackbone {
    pub fn new(input_channels: usize, widths: &[usize], dims: Dims, rng: &mut ChaCha8Rng) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(spec_err("backbone widths must be positive and nonempty"));
        }
        let mut segments = Vec::with_capacity(widths.len());
        let mut cin = input_channels;
        for (n, &w) in widths.iter().enumerate() {
            let mut layers = Vec::new();
            if n == 0 {
                layers.push(ConvBnRelu::new(cin, w, 3, 2, dims, rng)?);
                layers.push(ConvBnRelu::new(w, w, 3, 1, dims, rng)?);
            } else {
                layers.push(ConvBnRelu::new(cin, w, 3, 1, dims, rng)?);
            }
            segments.push(layers);
            cin = w;
        }
        Ok(PlainCnnBackbone {
            input_channels,
            widths: widths.to_vec(),
            dims,
            segments,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Total spatial down-sampling factor of the full backbone.
    pub fn reduction(&self) -> usize {
        2 << self.widths.len()
    }
}

impl Module for PlainCnnBackbone {
    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        for (n, seg) in self.segments.iter().enumerate() {
            for (i, layer) in seg.iter().enumerate() {
                layer.collect(&join(prefix, &format!("segment{}.layer{}", n + 1, i + 1)), out);
            }
        }
    }
}

impl Backbone for PlainCnnBackbone {
    fn num_segments(&self) -> usize {
        self.segments.len()
    }

    fn segment_channels(&self, n: usize) -> usize {
        self.widths[n]
    }

    fn forward_segment(&self, n: usize, x: &Tensor, training: bool) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.segments[n] {
            h = layer.forward(&h, training)?;
        }
        Ok(ops::max_pool(&h, 2, 2)?)
    }

    fn describe(&self) -> String {
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        format!("plain-cnn in={} widths={} dims={}", self.input_channels, widths.join(","), self.dims)
    }
}

/// Turns a stage feature map into a length-`L` descriptor: 1×1 conv to
/// `L/2`, 3×3 conv to `L` (each with batch norm and ReLU), then max
/// pooling over the whole spatial extent.
#[derive(Debug, Clone)]
pub struct StageDescriptor {
    reduce: ConvBnRelu,
    expand: ConvBnRelu,
}

impl StageDescriptor {
    pub fn new(channels: usize, descriptor_len: usize, dims: Dims, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(StageDescriptor {
            reduce: ConvBnRelu::new(channels, descriptor_len / 2, 1, 1, dims, rng)?,
            expand: ConvBnRelu::new(descriptor_len / 2, descriptor_len, 3, 1, dims, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        let h = self.expand.forward(&self.reduce.forward(x, training)?, training)?;
        Ok(ops::global_max_pool(&h)?)
    }
}

impl Module for StageDescriptor {
    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.reduce.collect(&join(prefix, "reduce"), out);
        self.expand.collect(&join(prefix, "expand"), out);
    }
}

/// BN → FC(in → L/2) → BN → ReLU → FC(L/2 → K), producing logits.
#[derive(Debug, Clone)]
pub struct StageClassifier {
    bn_in: BatchNorm,
    fc1: Linear,
    bn_mid: BatchNorm,
    fc2: Linear,
}

impl StageClassifier {
    pub fn new(input: usize, hidden: usize, classes: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(StageClassifier {
            bn_in: BatchNorm::new(input),
            fc1: Linear::new(input, hidden, rng)?,
            bn_mid: BatchNorm::new(hidden),
            fc2: Linear::new(hidden, classes, rng)?,
        })
    }

    pub fn input_len(&self) -> usize {
        self.bn_in.channels()
    }

    pub fn forward(&self, v: &Tensor, training: bool) -> Result<Tensor> {
        let h = self.fc1.forward(&self.bn_in.forward(v, training)?)?;
        let h = ops::relu(&self.bn_mid.forward(&h, training)?);
        self.fc2.forward(&h)
    }
}

impl Module for StageClassifier {
    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.bn_in.collect(&join(prefix, "bn_in"), out);
        self.fc1.collect(&join(prefix, "fc1"), out);
        self.bn_mid.collect(&join(prefix, "bn_mid"), out);
        self.fc2.collect(&join(prefix, "fc2"), out);
    }
}

/// A segmented backbone with one descriptor head and classifier per stage
/// plus an aggregation classifier over the concatenated descriptors.
pub struct TeacherModel {
    pub backbone: Box<dyn Backbone>,
    pub descriptors: Vec<StageDescriptor>,
    pub classifiers: Vec<StageClassifier>,
    pub aggregate: StageClassifier,
    pub descriptor_len: usize,
    pub num_classes: usize,
}

impl TeacherModel {
    pub fn new(backbone: Box<dyn Backbone>, descriptor_len: usize, num_classes: usize, dims: Dims, rng: &mut ChaCha8Rng) -> Result<Self> {
        let n = backbone.num_segments();
        if n < 2 {
            return Err(spec_err(format!("progressive training needs at least 2 stages, backbone has {n}")));
        }
        if descriptor_len < 2 || descriptor_len % 2 != 0 {
            return Err(spec_err(format!("descriptor length {descriptor_len} must be even and at least 2")));
        }
        if num_classes < 2 {
            return Err(spec_err("a classifier needs at least 2 classes"));
        }
        let half = descriptor_len / 2;
        let descriptors = (0..n)
            .map(|s| StageDescriptor::new(backbone.segment_channels(s), descriptor_len, dims, rng))
            .collect::<Result<Vec<_>>>()?;
        let classifiers = (0..n)
            .map(|_| StageClassifier::new(descriptor_len, half, num_classes, rng))
            .collect::<Result<Vec<_>>>()?;
        let aggregate = StageClassifier::new(n * descriptor_len, half, num_classes, rng)?;
        Ok(TeacherModel {
            backbone,
            descriptors,
            classifiers,
            aggregate,
            descriptor_len,
            num_classes,
        })
    }

    pub fn num_stages(&self) -> usize {
        self.descriptors.len()
    }

    /// Logits of stage `n` (0-based): segments `0..=n`, descriptor `n` and
    /// classifier `n`. Deeper segments are never touched.
    pub fn stage_logits(&self, n: usize, x: &Tensor, training: bool) -> Result<Tensor> {
        let mut h = x.clone();
        for s in 0..=n {
            h = self.backbone.forward_segment(s, &h, training)?;
        }
        let v = self.descriptors[n].forward(&h, training)?;
        self.classifiers[n].forward(&v, training)
    }

    /// Descriptors `v_1..v_N` from one pass through the backbone.
    pub fn descriptors(&self, x: &Tensor, training: bool) -> Result<Vec<Tensor>> {
        let mut h = x.clone();
        let mut out = Vec::with_capacity(self.num_stages());
        for (s, desc) in self.descriptors.iter().enumerate() {
            h = self.backbone.forward_segment(s, &h, training)?;
            out.push(desc.forward(&h, training)?);
        }
        Ok(out)
    }

    /// Logits of the aggregation stage over the concatenated descriptors.
    pub fn aggregate_logits(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        let v = ops::concat(&self.descriptors(x, training)?, 1)?;
        self.aggregate.forward(&v, training)
    }

    /// All `N + 1` stage logits from one backbone pass.
    pub fn all_logits(&self, x: &Tensor, training: bool) -> Result<Vec<Tensor>> {
        let vs = self.descriptors(x, training)?;
        let mut out = vs
            .iter()
            .zip(&self.classifiers)
            .map(|(v, c)| c.forward(v, training))
            .collect::<Result<Vec<_>>>()?;
        out.push(self.aggregate.forward(&ops::concat(&vs, 1)?, training)?);
        Ok(out)
    }

    /// Parameters of backbone segment `n` (0-based).
    pub fn segment_parameters(&self, n: usize) -> Vec<Tensor> {
        let prefix = format!("backbone.segment{}.", n + 1);
        self.named_tensors()
            .into_iter()
            .filter(|t| t.role == super::Role::Parameter && t.name.starts_with(&prefix))
            .map(|t| t.tensor)
            .collect()
    }

    pub fn describe(&self) -> String {
        format!(
            "teacher backbone=[{}] stages={} descriptor_len={} classes={}",
            self.backbone.describe(),
            self.num_stages(),
            self.descriptor_len,
            self.num_classes
        )
    }
}

impl Module for TeacherModel {
    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.backbone.collect(&join(prefix, "backbone"), out);
        for (n, (d, c)) in self.descriptors.iter().zip(&self.classifiers).enumerate() {
            d.collect(&join(prefix, &format!("descriptor{}", n + 1)), out);
            c.collect(&join(prefix, &format!("classifier{}", n + 1)), out);
        }
        self.aggregate.collect(&join(prefix, "aggregate"), out);
    }
}

impl Classifier for TeacherModel {
    /// Only the aggregation stage is used for prediction.
    fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        distilnas_tensor::no_grad(|| self.aggregate_logits(x, false))
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// The backbone trained end to end with a global-average-pool and linear
/// head: the reference point for progressive training.
pub struct BackboneClassifier {
    pub backbone: Box<dyn Backbone>,
    pub fc: Linear,
    pub num_classes: usize,
}

impl BackboneClassifier {
    pub fn new(backbone: Box<dyn Backbone>, num_classes: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let last = backbone.segment_channels(backbone.num_segments() - 1);
        Ok(BackboneClassifier {
            fc: Linear::new(last, num_classes, rng)?,
            backbone,
            num_classes,
        })
    }

    pub fn logits(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        let mut h = x.clone();
        for s in 0..self.backbone.num_segments() {
            h = self.backbone.forward_segment(s, &h, training)?;
        }
        self.fc.forward(&ops::global_avg_pool(&h)?)
    }
}

impl Module for BackboneClassifier {
    fn collect(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.backbone.collect(&join(prefix, "backbone"), out);
        self.fc.collect(&join(prefix, "fc"), out);
    }
}

impl Classifier for BackboneClassifier {
    fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        distilnas_tensor::no_grad(|| self.logits(x, false))
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }
}
