use super::arch::{ArchSpec, LayerKind, LayerSpec, Shape};
use super::tensor::{self, Scalar, Tensor};
use super::weights::WeightStore;
use crate::camera::{DisparityMap, StereoRig};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;

struct ConvParams<T> {
    layer: LayerSpec,
    weight: Vec<T>,
    bias: Option<Vec<T>>,
}

struct BnParams<T> {
    gamma: Vec<T>,
    beta: Vec<T>,
    mean: Vec<T>,
    var: Vec<T>,
}

struct BlockParams<T> {
    conv1: ConvParams<T>,
    bn1: BnParams<T>,
    conv2: ConvParams<T>,
    bn2: BnParams<T>,
    downsample: Option<(ConvParams<T>, BnParams<T>)>,
}

enum Prepared<T> {
    Conv(ConvParams<T>),
    Bn(BnParams<T>),
    Block(Box<BlockParams<T>>),
    Stateless,
}

fn convert<T: Scalar>(data: &[f32]) -> Vec<T> {
    data.iter().map(|&v| T::from_f32(v)).collect()
}

fn load_conv<T: Scalar>(store: &WeightStore, prefix: &str, layer: &LayerSpec) -> Result<ConvParams<T>> {
    let dims = [layer.out_channels, layer.in_channels, layer.kernel.0, layer.kernel.1];
    let weight = convert(&store.require(&format!("{prefix}.weight"), &dims)?.data);
    let bias = if layer.has_bias {
        Some(convert(&store.require(&format!("{prefix}.bias"), &[layer.out_channels])?.data))
    } else {
        None
    };
    Ok(ConvParams {
        layer: *layer,
        weight,
        bias,
    })
}

fn load_bn<T: Scalar>(store: &WeightStore, prefix: &str, channels: usize) -> Result<BnParams<T>> {
    let get = |s: &str| -> Result<Vec<T>> { Ok(convert(&store.require(&format!("{prefix}.{s}"), &[channels])?.data)) };
    Ok(BnParams {
        gamma: get("weight")?,
        beta: get("bias")?,
        mean: get("running_mean")?,
        var: get("running_var")?,
    })
}

impl<T: Scalar> ConvParams<T> {
    fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        tensor::conv2d(x, &self.weight, self.bias.as_deref(), &self.layer)
    }
}

impl<T: Scalar> BnParams<T> {
    fn apply(&self, x: Tensor<T>) -> Tensor<T> {
        tensor::batchnorm(x, &self.gamma, &self.beta, &self.mean, &self.var)
    }
}

impl<T: Scalar> BlockParams<T> {
    fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        let h = tensor::relu(self.bn1.apply(self.conv1.apply(x)));
        let mut h = self.bn2.apply(self.conv2.apply(&h));
        match &self.downsample {
            Some((conv, bn)) => tensor::add_in_place(&mut h, &bn.apply(conv.apply(x))),
            None => tensor::add_in_place(&mut h, x),
        }
        tensor::relu(h)
    }
}

/// An architecture bound to its weights, converted to the working precision.
pub struct Network<T> {
    spec: ArchSpec,
    shapes: Vec<Shape>,
    params: Vec<Prepared<T>>,
    /// Whether each node's output must be retained after the next node runs.
    keep: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub output: Tensor<T>,
    /// Encoder features at the architecture's tap points, finest first.
    pub features: Vec<Tensor<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(spec: ArchSpec, store: &WeightStore) -> Result<Self> {
        let shapes = spec.propagate_shapes()?;
        let mut params = Vec::with_capacity(spec.layers.len());
        for node in &spec.layers {
            let l = &node.layer;
            let p = match l.kind {
                LayerKind::Conv2d => Prepared::Conv(load_conv(store, &node.name, l)?),
                LayerKind::BatchNorm => Prepared::Bn(load_bn(store, &node.name, l.out_channels)?),
                LayerKind::BasicBlock => {
                    let sub = l.sublayers();
                    let find = |n: &str| sub.iter().find(|(s, _)| *s == n).map(|(_, l)| *l).expect("block sublayer");
                    let name = &node.name;
                    let downsample = if l.has_downsample() {
                        Some((
                            load_conv(store, &format!("{name}.downsample.0"), &find("downsample.0"))?,
                            load_bn(store, &format!("{name}.downsample.1"), l.out_channels)?,
                        ))
                    } else {
                        None
                    };
                    Prepared::Block(Box::new(BlockParams {
                        conv1: load_conv(store, &format!("{name}.conv1"), &find("conv1"))?,
                        bn1: load_bn(store, &format!("{name}.bn1"), l.out_channels)?,
                        conv2: load_conv(store, &format!("{name}.conv2"), &find("conv2"))?,
                        bn2: load_bn(store, &format!("{name}.bn2"), l.out_channels)?,
                        downsample,
                    }))
                }
                _ => Prepared::Stateless,
            };
            params.push(p);
        }
        let mut keep = vec![false; spec.layers.len()];
        for &t in &spec.feature_taps {
            keep[t] = true;
        }
        for node in &spec.layers {
            if let Some(s) = node.skip_from {
                keep[s] = true;
            }
        }
        Ok(Self {
            spec,
            shapes,
            params,
            keep,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> Shape {
        self.spec.input_shape
    }

    pub fn output_shape(&self) -> Shape {
        *self.shapes.last().unwrap_or(&self.spec.input_shape)
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<ForwardPass<T>> {
        let expected = self.spec.input_shape;
        if (input.channels, input.height, input.width) != (expected.channels, expected.height, expected.width) {
            return Err(Error::Shape {
                layer: "input".into(),
                reason: format!(
                    "network expects {expected}, got [1, {}, {}, {}]",
                    input.channels, input.height, input.width
                ),
            });
        }
        let mut kept: Vec<Option<Tensor<T>>> = vec![None; self.spec.layers.len()];
        let mut x = input.clone();
        for (idx, (node, p)) in self.spec.layers.iter().zip(&self.params).enumerate() {
            let l = &node.layer;
            x = match (l.kind, p) {
                (LayerKind::Conv2d, Prepared::Conv(c)) => c.apply(&x),
                (LayerKind::BatchNorm, Prepared::Bn(b)) => b.apply(x),
                (LayerKind::BasicBlock, Prepared::Block(b)) => b.apply(&x),
                (LayerKind::Relu, _) => tensor::relu(x),
                (LayerKind::Elu, _) => tensor::elu(x),
                (LayerKind::Sigmoid, _) => tensor::sigmoid(x),
                (LayerKind::MaxPool, _) => tensor::maxpool(&x, l),
                (LayerKind::UpsampleNearest, _) => tensor::upsample_nearest(&x, l.stride),
                (LayerKind::ConcatSkip, _) => {
                    let src = node.skip_from.expect("validated by shape propagation");
                    let skip = kept[src].as_ref().expect("skip source retained");
                    tensor::concat(x, skip)
                }
                _ => unreachable!("parameters prepared per layer kind"),
            };
            if self.keep[idx] {
                kept[idx] = Some(x.clone());
            }
        }
        let features = self
            .spec
            .feature_taps
            .iter()
            .map(|&t| kept[t].clone().expect("tap retained"))
            .collect();
        Ok(ForwardPass { output: x, features })
    }

    /// Runs on an interleaved image and returns the single-channel output
    /// as a map of values in (0, 1).
    pub fn predict(&self, input: &ImageBuffer) -> Result<(DisparityMap, Vec<Tensor<T>>)> {
        let pass = self.forward(&Tensor::from_image(input))?;
        if pass.output.channels != 1 {
            return Err(Error::Shape {
                layer: self.spec.layers.last().map(|n| n.name.clone()).unwrap_or_default(),
                reason: format!("expected a 1-channel head, got {}", pass.output.channels),
            });
        }
        let map = DisparityMap::new(pass.output.to_image())?;
        Ok((map, pass.features))
    }
}

/// One-shot inference in single precision.
pub fn forward(spec: &ArchSpec, weights: &WeightStore, input: &ImageBuffer) -> Result<(DisparityMap, Vec<Tensor<f32>>)> {
    Network::<f32>::new(spec.clone(), weights)?.predict(input)
}

pub const DEFAULT_MIN_DEPTH_M: f64 = 0.1;
pub const DEFAULT_MAX_DEPTH_M: f64 = 100.0;

/// Maps the sigmoid output to pixel disparity through linear interpolation
/// in inverse depth, then `d = b·fx / z`.
pub fn sigmoid_to_disparity(s: &DisparityMap, min_depth: f64, max_depth: f64, rig: &StereoRig) -> Result<DisparityMap> {
    if !(min_depth > 0.0 && max_depth > min_depth && max_depth.is_finite()) {
        return Err(Error::arg(format!(
            "depth range must satisfy 0 < min < max, got [{min_depth}, {max_depth}]"
        )));
    }
    let (lo, hi) = (1.0 / max_depth, 1.0 / min_depth);
    let bf = rig.disparity_depth_product();
    if let Some(v) = s.values().data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::arg(format!("sigmoid value {v} outside [0, 1]")));
    }
    let out = s.values().map(|v| bf * (lo + v * (hi - lo)))?;
    DisparityMap::with_mask(out, s.valid().to_vec())
}
