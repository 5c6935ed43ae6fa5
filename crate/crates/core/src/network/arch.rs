//! Declarative layer graph for the residual encoder and U-shaped decoder.
//!
//! An [`ArchSpec`] is an ordered node list. Each node consumes the output of
//! the node before it; concat nodes additionally read an earlier node's
//! output through `skip_from`. Residual basic blocks are single nodes whose
//! inner layers are expanded on demand for counting and inference.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    BatchNorm,
    Relu,
    MaxPool,
    BasicBlock,
    UpsampleNearest,
    Sigmoid,
    ConcatSkip,
    Elu,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            LayerKind::Conv2d => "Conv2d",
            LayerKind::BatchNorm => "BatchNorm2d",
            LayerKind::Relu => "ReLU",
            LayerKind::MaxPool => "MaxPool2d",
            LayerKind::BasicBlock => "BasicBlock",
            LayerKind::UpsampleNearest => "Upsample",
            LayerKind::Sigmoid => "Sigmoid",
            LayerKind::ConcatSkip => "Concat",
            LayerKind::Elu => "ELU",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PadMode {
    #[default]
    Zeros,
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub pad_mode: PadMode,
    pub has_bias: bool,
}

impl LayerSpec {
    fn elementwise(kind: LayerKind, channels: usize) -> Self {
        Self {
            kind,
            in_channels: channels,
            out_channels: channels,
            kernel: (1, 1),
            stride: (1, 1),
            padding: (0, 0),
            pad_mode: PadMode::Zeros,
            has_bias: false,
        }
    }

    pub fn conv(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        has_bias: bool,
    ) -> Self {
        Self {
            kind: LayerKind::Conv2d,
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
            pad_mode: PadMode::Zeros,
            has_bias,
        }
    }

    pub fn with_pad_mode(mut self, mode: PadMode) -> Self {
        self.pad_mode = mode;
        self
    }

    pub fn batchnorm(channels: usize) -> Self {
        Self::elementwise(LayerKind::BatchNorm, channels)
    }

    pub fn relu(channels: usize) -> Self {
        Self::elementwise(LayerKind::Relu, channels)
    }

    pub fn elu(channels: usize) -> Self {
        Self::elementwise(LayerKind::Elu, channels)
    }

    pub fn sigmoid(channels: usize) -> Self {
        Self::elementwise(LayerKind::Sigmoid, channels)
    }

    pub fn maxpool(channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
            ..Self::elementwise(LayerKind::MaxPool, channels)
        }
    }

    /// Two 3×3 convolutions with batchnorm; a 1×1 projection shortcut is
    /// added when the stride or channel count changes.
    pub fn basic_block(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            kind: LayerKind::BasicBlock,
            in_channels,
            out_channels,
            kernel: (3, 3),
            stride: (stride, stride),
            padding: (1, 1),
            pad_mode: PadMode::Zeros,
            has_bias: false,
        }
    }

    pub fn upsample_nearest(channels: usize) -> Self {
        Self {
            stride: (2, 2),
            ..Self::elementwise(LayerKind::UpsampleNearest, channels)
        }
    }

    pub fn concat(in_channels: usize, skip_channels: usize) -> Self {
        Self {
            out_channels: in_channels + skip_channels,
            ..Self::elementwise(LayerKind::ConcatSkip, in_channels)
        }
    }

    pub fn has_downsample(&self) -> bool {
        self.kind == LayerKind::BasicBlock && (self.stride != (1, 1) || self.in_channels != self.out_channels)
    }

    /// Inner layers of a basic block, named relative to the block, in
    /// execution order. The shortcut layers come last. Empty for other kinds.
    pub fn sublayers(&self) -> Vec<(&'static str, LayerSpec)> {
        if self.kind != LayerKind::BasicBlock {
            return Vec::new();
        }
        let (cin, cout, s) = (self.in_channels, self.out_channels, self.stride.0);
        let mut out = vec![
            ("conv1", LayerSpec::conv(cin, cout, 3, s, 1, false)),
            ("bn1", LayerSpec::batchnorm(cout)),
            ("relu", LayerSpec::relu(cout)),
            ("conv2", LayerSpec::conv(cout, cout, 3, 1, 1, false)),
            ("bn2", LayerSpec::batchnorm(cout)),
        ];
        if self.has_downsample() {
            out.push(("downsample.0", LayerSpec::conv(cin, cout, 1, s, 0, false)));
            out.push(("downsample.1", LayerSpec::batchnorm(cout)));
        }
        // the block applies its ReLU module a second time after the residual add
        out.push(("relu", LayerSpec::relu(cout)));
        out
    }

    /// Trainable parameter count: conv weights (+ bias), batchnorm scale and
    /// shift, block contents summed. Running statistics are not trainable.
    pub fn param_count(&self) -> u64 {
        match self.kind {
            LayerKind::Conv2d => {
                let w = (self.in_channels * self.out_channels * self.kernel.0 * self.kernel.1) as u64;
                w + if self.has_bias { self.out_channels as u64 } else { 0 }
            }
            LayerKind::BatchNorm => 2 * self.out_channels as u64,
            LayerKind::BasicBlock => self.sublayers().iter().map(|(_, l)| l.param_count()).sum(),
            _ => 0,
        }
    }

    /// Tensors this layer reads from a weight store, as `(suffix, dims)`.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>)> {
        match self.kind {
            LayerKind::Conv2d => {
                let mut t = vec![(
                    "weight".to_string(),
                    vec![self.out_channels, self.in_channels, self.kernel.0, self.kernel.1],
                )];
                if self.has_bias {
                    t.push(("bias".to_string(), vec![self.out_channels]));
                }
                t
            }
            LayerKind::BatchNorm => ["weight", "bias", "running_mean", "running_var"]
                .iter()
                .map(|s| (s.to_string(), vec![self.out_channels]))
                .collect(),
            LayerKind::BasicBlock => self
                .sublayers()
                .iter()
                .flat_map(|(name, l)| {
                    l.tensors()
                        .into_iter()
                        .map(move |(s, d)| (format!("{name}.{s}"), d))
                })
                .collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[1, {}, {}, {}]", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    /// Dotted path; weight tensors are `{name}.{suffix}`.
    pub name: String,
    pub layer: LayerSpec,
    /// For concat nodes: index of the node whose output is appended.
    pub skip_from: Option<usize>,
    /// Container the node belongs to (e.g. `layer1`), for summaries.
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub input_shape: Shape,
    pub layers: Vec<LayerNode>,
    /// Nodes whose outputs form the encoder feature pyramid, finest first.
    pub feature_taps: Vec<usize>,
}

/// Channel widths of the four residual stages.
pub const ENCODER_STAGE_CHANNELS: [usize; 4] = [64, 128, 256, 512];
/// Decoder widths, finest scale first.
pub const DECODER_CHANNELS: [usize; 5] = [16, 32, 64, 128, 256];
/// Reference input resolution (height, width).
pub const REFERENCE_RESOLUTION: (usize, usize) = (192, 640);

/// Layer totals by kind, with basic blocks expanded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LayerCensus {
    pub conv2d: usize,
    pub batchnorm: usize,
    pub relu: usize,
    pub maxpool: usize,
    pub basic_blocks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamReport {
    pub total: u64,
    /// `(node name, count)` in node order.
    pub per_layer: Vec<(String, u64)>,
}

impl ArchSpec {
    pub fn new(input_shape: Shape) -> Self {
        Self {
            input_shape,
            layers: Vec::new(),
            feature_taps: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: LayerSpec) -> usize {
        self.push_node(LayerNode {
            name: name.into(),
            layer,
            skip_from: None,
            group: None,
        })
    }

    pub fn push_node(&mut self, node: LayerNode) -> usize {
        self.layers.push(node);
        self.layers.len() - 1
    }

    pub fn with_input_resolution(mut self, height: usize, width: usize) -> Self {
        self.input_shape.height = height;
        self.input_shape.width = width;
        self
    }

    pub fn param_count(&self) -> ParamReport {
        let per_layer: Vec<_> = self
            .layers
            .iter()
            .map(|n| (n.name.clone(), n.layer.param_count()))
            .collect();
        ParamReport {
            total: per_layer.iter().map(|(_, c)| c).sum(),
            per_layer,
        }
    }

    pub fn census(&self) -> LayerCensus {
        let mut census = LayerCensus::default();
        let tally = |l: &LayerSpec, c: &mut LayerCensus| match l.kind {
            LayerKind::Conv2d => c.conv2d += 1,
            LayerKind::BatchNorm => c.batchnorm += 1,
            LayerKind::Relu => c.relu += 1,
            LayerKind::MaxPool => c.maxpool += 1,
            _ => {}
        };
        for node in &self.layers {
            if node.layer.kind == LayerKind::BasicBlock {
                census.basic_blocks += 1;
                for (_, l) in node.layer.sublayers() {
                    tally(&l, &mut census);
                }
            } else {
                tally(&node.layer, &mut census);
            }
        }
        census
    }

    /// Output shape of every node, in order.
    pub fn propagate_shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.layers.len());
        let mut current = self.input_shape;
        if current.channels == 0 || current.height == 0 || current.width == 0 {
            return Err(Error::Shape {
                layer: "input".into(),
                reason: format!("degenerate input shape {current}"),
            });
        }
        for (idx, node) in self.layers.iter().enumerate() {
            let l = &node.layer;
            let fail = |reason: String| Error::Shape {
                layer: node.name.clone(),
                reason,
            };
            if current.channels != l.in_channels {
                return Err(fail(format!(
                    "expects {} input channels, got {}",
                    l.in_channels, current.channels
                )));
            }
            current = match l.kind {
                LayerKind::Conv2d | LayerKind::MaxPool | LayerKind::BasicBlock => {
                    let h = window_output(current.height, l.kernel.0, l.stride.0, l.padding.0)
                        .ok_or_else(|| fail(format!("height {} collapses", current.height)))?;
                    let w = window_output(current.width, l.kernel.1, l.stride.1, l.padding.1)
                        .ok_or_else(|| fail(format!("width {} collapses", current.width)))?;
                    if l.pad_mode == PadMode::Reflect
                        && (l.padding.0 >= current.height || l.padding.1 >= current.width)
                    {
                        return Err(fail("reflection padding exceeds input size".into()));
                    }
                    Shape::new(l.out_channels, h, w)
                }
                LayerKind::UpsampleNearest => {
                    Shape::new(l.out_channels, current.height * l.stride.0, current.width * l.stride.1)
                }
                LayerKind::ConcatSkip => {
                    let src = node
                        .skip_from
                        .filter(|&s| s < idx)
                        .ok_or_else(|| fail("concat needs an earlier skip source".into()))?;
                    let skip = shapes[src];
                    if skip.height != current.height || skip.width != current.width {
                        return Err(fail(format!(
                            "skip from `{}` is {}x{}, main path is {}x{}",
                            self.layers[src].name, skip.height, skip.width, current.height, current.width
                        )));
                    }
                    if current.channels + skip.channels != l.out_channels {
                        return Err(fail(format!(
                            "concat yields {} channels, layer declares {}",
                            current.channels + skip.channels,
                            l.out_channels
                        )));
                    }
                    Shape::new(l.out_channels, current.height, current.width)
                }
                LayerKind::BatchNorm | LayerKind::Relu | LayerKind::Elu | LayerKind::Sigmoid => {
                    Shape::new(l.out_channels, current.height, current.width)
                }
            };
            shapes.push(current);
        }
        Ok(shapes)
    }

    /// Every weight tensor the graph reads, as `(full name, dims)`.
    pub fn required_tensors(&self) -> Vec<(String, Vec<usize>)> {
        self.layers
            .iter()
            .flat_map(|n| {
                n.layer
                    .tensors()
                    .into_iter()
                    .map(move |(s, d)| (format!("{}.{s}", n.name), d))
            })
            .collect()
    }

    pub fn output_shape(&self) -> Result<Shape> {
        self.propagate_shapes()?
            .last()
            .copied()
            .ok_or_else(|| Error::Shape {
                layer: "output".into(),
                reason: "architecture has no layers".into(),
            })
    }

    /// Torchinfo-style summary: one row per node with its output shape and
    /// parameter count, stage containers shown as their own rows.
    pub fn summary_rows(&self) -> Result<Vec<SummaryRow>> {
        let shapes = self.propagate_shapes()?;
        let mut rows = Vec::new();
        let mut depth_counters = [0usize; 3];
        let mut open_group: Option<&str> = None;
        for (node, shape) in self.layers.iter().zip(&shapes) {
            let group = node.group.as_deref();
            if group != open_group {
                open_group = group;
                if let Some(g) = group {
                    depth_counters[1] += 1;
                    // container rows report the shape of their last member
                    let last = self
                        .layers
                        .iter()
                        .zip(&shapes)
                        .filter(|(n, _)| n.group.as_deref() == Some(g))
                        .last()
                        .map(|(_, s)| *s)
                        .unwrap_or(*shape);
                    rows.push(SummaryRow {
                        label: format!("Sequential: 1-{}", depth_counters[1]),
                        name: g.to_string(),
                        output: last,
                        params: None,
                    });
                }
            }
            let depth = if group.is_some() { 2 } else { 1 };
            depth_counters[depth] += 1;
            let count = node.layer.param_count();
            let parameterized = !node.layer.tensors().is_empty();
            rows.push(SummaryRow {
                label: format!("{}: {}-{}", node.layer.kind, depth, depth_counters[depth]),
                name: node.name.clone(),
                output: *shape,
                params: parameterized.then_some(count),
            });
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub name: String,
    pub output: Shape,
    pub params: Option<u64>,
}

fn window_output(n: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = n + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Formats an integer with thousands separators.
pub fn with_commas(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn push_encoder(spec: &mut ArchSpec, in_channels: usize) {
    spec.push("enc.conv1", LayerSpec::conv(in_channels, 64, 7, 2, 3, false));
    spec.push("enc.bn1", LayerSpec::batchnorm(64));
    let relu = spec.push("enc.relu", LayerSpec::relu(64));
    spec.feature_taps.push(relu);
    spec.push("enc.maxpool", LayerSpec::maxpool(64, 3, 2, 1));
    let mut cin = 64;
    for (stage, &cout) in ENCODER_STAGE_CHANNELS.iter().enumerate() {
        let group = format!("enc.layer{}", stage + 1);
        let first_stride = if stage == 0 { 1 } else { 2 };
        let mut last = 0;
        for block in 0..2 {
            let (ci, s) = if block == 0 { (cin, first_stride) } else { (cout, 1) };
            last = spec.push_node(LayerNode {
                name: format!("{group}.{block}"),
                layer: LayerSpec::basic_block(ci, cout, s),
                skip_from: None,
                group: Some(group.clone()),
            });
        }
        spec.feature_taps.push(last);
        cin = cout;
    }
}

/// The 18-layer residual encoder. With `stereo_input` the first
/// convolution takes the 6-channel left-then-right stack instead of RGB.
pub fn build_encoder(stereo_input: bool) -> ArchSpec {
    let channels = if stereo_input { 6 } else { 3 };
    let (h, w) = REFERENCE_RESOLUTION;
    let mut spec = ArchSpec::new(Shape::new(channels, h, w));
    push_encoder(&mut spec, channels);
    spec
}

/// Encoder plus decoder: five nearest-upsample stages with skip
/// concatenation, 3×3 reflection-padded convolutions with ELU, and a
/// 1-channel sigmoid head at full input resolution.
pub fn build_depth_network(stereo_input: bool, height: usize, width: usize) -> ArchSpec {
    let mut spec = build_encoder(stereo_input).with_input_resolution(height, width);
    let taps = spec.feature_taps.clone();
    let enc_channels = [64, ENCODER_STAGE_CHANNELS[0], ENCODER_STAGE_CHANNELS[1], ENCODER_STAGE_CHANNELS[2], ENCODER_STAGE_CHANNELS[3]];
    let conv3 = |cin, cout| LayerSpec::conv(cin, cout, 3, 1, 1, true).with_pad_mode(PadMode::Reflect);
    let mut cin = enc_channels[4];
    for i in (0..5).rev() {
        let cout = DECODER_CHANNELS[i];
        spec.push(format!("dec.upconv.{i}.0"), conv3(cin, cout));
        spec.push(format!("dec.upconv.{i}.0.act"), LayerSpec::elu(cout));
        spec.push(format!("dec.up.{i}"), LayerSpec::upsample_nearest(cout));
        let mut c = cout;
        if i > 0 {
            let skip = enc_channels[i - 1];
            spec.push_node(LayerNode {
                name: format!("dec.skip.{i}"),
                layer: LayerSpec::concat(cout, skip),
                skip_from: Some(taps[i - 1]),
                group: None,
            });
            c += skip;
        }
        spec.push(format!("dec.upconv.{i}.1"), conv3(c, cout));
        spec.push(format!("dec.upconv.{i}.1.act"), LayerSpec::elu(cout));
        cin = cout;
    }
    spec.push("dec.dispconv.0", conv3(DECODER_CHANNELS[0], 1));
    spec.push("dec.sigmoid", LayerSpec::sigmoid(1));
    spec
}
