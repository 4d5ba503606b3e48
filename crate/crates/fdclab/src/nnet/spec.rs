//! Network topology descriptions and the two classifier presets.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Number of output classes (fault cases 0-9).
pub const N_CLASSES: usize = 10;
/// Classifier input side length.
pub const INPUT_SIZE: usize = 224;
pub const CONV_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// 3×3 convolution, stride 1, pad 1, fused ReLU.
    Conv { in_ch: usize, out_ch: usize },
    /// 2×2 max pooling, stride 2.
    MaxPool,
    /// Fully connected layer, optionally with fused ReLU.
    Dense {
        in_features: usize,
        out_features: usize,
        relu: bool,
    },
}

/// Spatial shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map { ch: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match self {
            Shape::Map { ch, h, w } => ch * h * w,
            Shape::Flat(n) => *n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    /// Input channels (grayscale: 1) and side length.
    pub input_ch: usize,
    pub input_size: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Shape at every layer boundary: `shapes()[0]` is the input,
    /// `shapes()[i+1]` the output of layer `i`. Fails on broken chains.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = vec![Shape::Map {
            ch: self.input_ch,
            h: self.input_size,
            w: self.input_size,
        }];
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = *shapes.last().unwrap();
            let next = match (layer, prev) {
                (LayerSpec::Conv { in_ch, out_ch }, Shape::Map { ch, h, w }) => {
                    if *in_ch != ch {
                        return Err(Error::shape(
                            format!("{} layer {i} (conv)", self.name),
                            format!("{in_ch} input channels"),
                            format!("{ch}"),
                        ));
                    }
                    Shape::Map { ch: *out_ch, h, w }
                }
                (LayerSpec::MaxPool, Shape::Map { ch, h, w }) => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(Error::shape(
                            format!("{} layer {i} (maxpool)", self.name),
                            "even spatial dims".to_string(),
                            format!("{h}x{w}"),
                        ));
                    }
                    Shape::Map {
                        ch,
                        h: h / 2,
                        w: w / 2,
                    }
                }
                (
                    LayerSpec::Dense {
                        in_features,
                        out_features,
                        ..
                    },
                    prev,
                ) => {
                    if *in_features != prev.len() {
                        return Err(Error::shape(
                            format!("{} layer {i} (dense)", self.name),
                            format!("{in_features} input features"),
                            format!("{}", prev.len()),
                        ));
                    }
                    Shape::Flat(*out_features)
                }
                (layer, Shape::Flat(_)) => {
                    return Err(Error::shape(
                        format!("{} layer {i}", self.name),
                        "map input".to_string(),
                        format!("flat input for {layer:?}"),
                    ));
                }
            };
            shapes.push(next);
        }
        match shapes.last() {
            Some(Shape::Flat(n)) if *n == N_CLASSES => Ok(shapes),
            other => Err(Error::shape(
                format!("{} head", self.name),
                format!("{N_CLASSES} logits"),
                format!("{other:?}"),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    /// Total learnable parameters: conv k²·in·out + out, dense in·out + out.
    pub fn param_count(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv { in_ch, out_ch } => {
                    (CONV_KERNEL * CONV_KERNEL * in_ch * out_ch + out_ch) as u64
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                    ..
                } => (in_features * out_features + out_features) as u64,
                LayerSpec::MaxPool => 0,
            })
            .sum()
    }

    /// Indices of conv layers, in network order.
    pub fn conv_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| matches!(l, LayerSpec::Conv { .. }).then_some(i))
            .collect()
    }
}

/// Parameter count reference for the full-size classifier.
pub const VGG16_FDC_PARAMS: u64 = 134_300_362;

/// The full-size classifier: VGG16 convolution/pooling stack adapted to a
/// 1-channel 224×224 input and a 10-class head.
pub fn vgg16_fdc() -> NetworkSpec {
    let mut layers = Vec::new();
    let stages: [&[usize]; 5] = [
        &[64, 64],
        &[128, 128],
        &[256, 256, 256],
        &[512, 512, 512],
        &[512, 512, 512],
    ];
    let mut in_ch = 1;
    for stage in stages {
        for &out_ch in stage {
            layers.push(LayerSpec::Conv { in_ch, out_ch });
            in_ch = out_ch;
        }
        layers.push(LayerSpec::MaxPool);
    }
    // 512 × 7 × 7 = 25088 after five pools.
    layers.push(LayerSpec::Dense {
        in_features: 25088,
        out_features: 4096,
        relu: true,
    });
    layers.push(LayerSpec::Dense {
        in_features: 4096,
        out_features: 4096,
        relu: true,
    });
    layers.push(LayerSpec::Dense {
        in_features: 4096,
        out_features: N_CLASSES,
        relu: false,
    });
    NetworkSpec {
        name: "VGG16_FDC".into(),
        input_ch: 1,
        input_size: INPUT_SIZE,
        layers,
    }
}

/// Desk-scale variant sharing every layer type with the full net. The extra
/// pool after the first convolution cuts the dominant 224×224 compute early;
/// spatial flow is 224 → 112 → 56 → 28 → 14.
pub fn compact_fdc() -> NetworkSpec {
    NetworkSpec {
        name: "COMPACT_FDC".into(),
        input_ch: 1,
        input_size: INPUT_SIZE,
        layers: vec![
            LayerSpec::Conv { in_ch: 1, out_ch: 8 },
            LayerSpec::MaxPool,
            LayerSpec::MaxPool,
            LayerSpec::Conv {
                in_ch: 8,
                out_ch: 16,
            },
            LayerSpec::MaxPool,
            LayerSpec::Conv {
                in_ch: 16,
                out_ch: 32,
            },
            LayerSpec::MaxPool,
            LayerSpec::Dense {
                in_features: 32 * 14 * 14,
                out_features: 64,
                relu: true,
            },
            LayerSpec::Dense {
                in_features: 64,
                out_features: N_CLASSES,
                relu: false,
            },
        ],
    }
}

/// Named presets accepted by the CLI and experiment configs.
pub fn preset_by_name(name: &str) -> Result<NetworkSpec> {
    match name {
        _ if name.eq_ignore_ascii_case("VGG16_FDC") => Ok(vgg16_fdc()),
        _ if name.eq_ignore_ascii_case("COMPACT_FDC") => Ok(compact_fdc()),
        _ => Err(Error::invalid(format!("unknown network preset {name:?}"))),
    }
}
