//! Declarative model specifications for the single-frame (SF), multi-frame
//! (MF) and configuration-based multi-frame (CBMF) press models, exact
//! parameter accounting, and the runtime that executes them.
//!
//! A [`ModelSpec`] is a plain value: an ordered list of encoder layers, an
//! optional decoder, and the window/image geometry. Shapes are derived by
//! propagating a `side×side×1` frame through the layers, so the same spec
//! drives parameter counting, validation and [`Network`] construction.

mod network;
pub mod reference;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv2d_param_count, dense_param_count, gru_param_count, pooled_extent, Activation};

pub use network::{FrameBatch, ForwardOutput, Network, Scope, Tape};

/// Width of a hand configuration (joint angles).
pub const CONFIG_WIDTH: usize = 17;
/// Number of fingers, i.e. the width of a press vector.
pub const FINGERS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "SF", alias = "sf")]
    Sf,
    #[serde(rename = "MF", alias = "mf")]
    Mf,
    #[serde(rename = "CBMF", alias = "cbmf")]
    Cbmf,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Sf => "SF",
            ModelKind::Mf => "MF",
            ModelKind::Cbmf => "CBMF",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SF" => Ok(ModelKind::Sf),
            "MF" => Ok(ModelKind::Mf),
            "CBMF" => Ok(ModelKind::Cbmf),
            other => Err(Error::invalid(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { channels: usize, activation: Activation },
    Maxpool2d { window: usize },
    Dropout { rate: f64 },
    Flatten,
    ConcatTime,
    Gru { hidden: usize, activation: Activation },
    Dense { units: usize, activation: Activation },
    /// Concatenates the incoming configuration sequence with the output of
    /// encoder layer `residual_from` along the feature axis.
    Merge { residual_from: usize },
}

impl LayerSpec {
    pub fn label(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Maxpool2d { .. } => "maxpool2d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::ConcatTime => "concat_time",
            LayerSpec::Gru { .. } => "gru",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Merge { .. } => "merge",
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        match *self {
            LayerSpec::Conv2d { activation, .. }
            | LayerSpec::Gru { activation, .. }
            | LayerSpec::Dense { activation, .. } => Some(activation),
            _ => None,
        }
    }
}

/// Window length, frame side and channel scale of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub k: usize,
    pub image_side: usize,
    /// Every hidden width (conv channels, recurrent and dense widths) is
    /// divided by this; output widths (17, 5) are fixed.
    pub width_divisor: usize,
}

impl Geometry {
    pub const fn full_size() -> Self {
        Self {
            k: 8,
            image_side: 224,
            width_divisor: 1,
        }
    }

    pub fn new(k: usize, image_side: usize, width_divisor: usize) -> Self {
        Self {
            k,
            image_side,
            width_divisor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub k: usize,
    pub image_side: usize,
    #[serde(default = "one")]
    pub width_divisor: usize,
    pub encoder: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder: Option<Vec<LayerSpec>>,
    /// Apply a sigmoid to the final press sequence.
    #[serde(default)]
    pub output_sigmoid: bool,
}

fn one() -> usize {
    1
}

/// Per-layer exact parameter counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub model: ModelKind,
    pub layers: Vec<LayerCount>,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCount {
    pub name: String,
    pub kind: String,
    pub activation: Option<Activation>,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

fn scaled(width: usize, g: &Geometry) -> usize {
    (width / g.width_divisor).max(1)
}

fn check_geometry(g: &Geometry, min_k: usize) -> Result<()> {
    if g.k < min_k {
        return Err(Error::Geometry {
            stage: "window".into(),
            detail: format!("k = {} but at least {min_k} frame(s) are required", g.k),
        });
    }
    if g.width_divisor == 0 || 32 % g.width_divisor != 0 {
        return Err(Error::Geometry {
            stage: "width".into(),
            detail: format!("width divisor {} must divide 32", g.width_divisor),
        });
    }
    Ok(())
}

/// The UNet-style encoder: five conv blocks, four 2×2 pools and a final
/// pool of `min(4, extent)` so that small desk-scale frames still reduce to
/// a positive extent.
fn cnn_layers(g: &Geometry) -> Result<Vec<LayerSpec>> {
    let mut side = g.image_side;
    let mut layers = Vec::new();
    let widths = [32, 64, 128, 256, 512];
    for (block, &w) in widths.iter().enumerate() {
        let channels = scaled(w, g);
        for _ in 0..2 {
            layers.push(LayerSpec::Conv2d {
                channels,
                activation: Activation::Relu,
            });
        }
        if block >= 3 {
            layers.push(LayerSpec::Dropout { rate: 0.3 });
        }
        let window = if block < 4 { 2 } else { side.min(4) };
        if window == 0 || pooled_extent(side, window) == 0 {
            return Err(Error::Geometry {
                stage: format!("pool after conv block {}", block + 1),
                detail: format!(
                    "image side {} leaves extent {side}, too small for a {window}×{window} pool",
                    g.image_side
                ),
            });
        }
        layers.push(LayerSpec::Maxpool2d { window });
        side = pooled_extent(side, window);
    }
    layers.push(LayerSpec::Flatten);
    Ok(layers)
}

pub fn build_mf(k: usize, image_side: usize) -> Result<ModelSpec> {
    build_mf_with(Geometry::new(k, image_side, 1))
}

pub fn build_mf_with(g: Geometry) -> Result<ModelSpec> {
    check_geometry(&g, 1)?;
    let mut encoder = cnn_layers(&g)?;
    encoder.extend([
        LayerSpec::ConcatTime,
        LayerSpec::Gru {
            hidden: scaled(1024, &g),
            activation: Activation::Relu,
        },
        LayerSpec::Gru {
            hidden: scaled(128, &g),
            activation: Activation::Relu,
        },
        LayerSpec::Gru {
            hidden: FINGERS,
            activation: Activation::Linear,
        },
    ]);
    Ok(ModelSpec {
        kind: ModelKind::Mf,
        k: g.k,
        image_side: g.image_side,
        width_divisor: g.width_divisor,
        encoder,
        decoder: None,
        output_sigmoid: true,
    })
}

pub fn build_cbmf(k: usize, image_side: usize) -> Result<ModelSpec> {
    build_cbmf_with(Geometry::new(k, image_side, 1))
}

pub fn build_cbmf_with(g: Geometry) -> Result<ModelSpec> {
    check_geometry(&g, 1)?;
    let mut encoder = cnn_layers(&g)?;
    encoder.extend([
        LayerSpec::ConcatTime,
        LayerSpec::Gru {
            hidden: scaled(1024, &g),
            activation: Activation::Relu,
        },
        LayerSpec::Gru {
            hidden: scaled(128, &g),
            activation: Activation::Relu,
        },
        LayerSpec::Gru {
            hidden: CONFIG_WIDTH,
            activation: Activation::Linear,
        },
    ]);
    let residual_from = encoder.len() - 2;
    let decoder = vec![
        LayerSpec::Merge { residual_from },
        LayerSpec::Gru {
            hidden: scaled(256, &g),
            activation: Activation::Relu,
        },
        LayerSpec::Gru {
            hidden: scaled(128, &g),
            activation: Activation::Relu,
        },
        LayerSpec::Gru {
            hidden: FINGERS,
            activation: Activation::Linear,
        },
    ];
    Ok(ModelSpec {
        kind: ModelKind::Cbmf,
        k: g.k,
        image_side: g.image_side,
        width_divisor: g.width_divisor,
        encoder,
        decoder: Some(decoder),
        output_sigmoid: true,
    })
}

pub fn build_sf(image_side: usize) -> Result<ModelSpec> {
    build_sf_with(Geometry::new(1, image_side, 1))
}

/// The MF CNN on a single frame followed by a 1024/128/5 MLP. `g.k` is
/// ignored: SF always sees one frame.
pub fn build_sf_with(g: Geometry) -> Result<ModelSpec> {
    let g = Geometry { k: 1, ..g };
    check_geometry(&g, 1)?;
    let mut encoder = cnn_layers(&g)?;
    encoder.extend([
        LayerSpec::Dense {
            units: scaled(1024, &g),
            activation: Activation::Relu,
        },
        LayerSpec::Dense {
            units: scaled(128, &g),
            activation: Activation::Relu,
        },
        LayerSpec::Dense {
            units: FINGERS,
            activation: Activation::Sigmoid,
        },
    ]);
    Ok(ModelSpec {
        kind: ModelKind::Sf,
        k: 1,
        image_side: g.image_side,
        width_divisor: g.width_divisor,
        encoder,
        decoder: None,
        output_sigmoid: false,
    })
}

pub fn build(kind: ModelKind, g: Geometry) -> Result<ModelSpec> {
    match kind {
        ModelKind::Sf => build_sf_with(g),
        ModelKind::Mf => build_mf_with(g),
        ModelKind::Cbmf => build_cbmf_with(g),
    }
}

/// Shape and parameter count of one layer application.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LayerShape {
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub params: usize,
}

impl ModelSpec {
    /// Output shapes of every encoder and decoder layer, or the first stage
    /// that cannot be applied.
    pub(crate) fn layer_shapes(&self) -> Result<(Vec<LayerShape>, Vec<LayerShape>)> {
        if self.kind == ModelKind::Sf && self.k != 1 {
            return Err(Error::Geometry {
                stage: "window".into(),
                detail: format!("SF models take exactly one frame, k = {}", self.k),
            });
        }
        if self.k == 0 {
            return Err(Error::Geometry {
                stage: "window".into(),
                detail: "k must be at least 1".into(),
            });
        }
        let mut shape = vec![self.image_side, self.image_side, 1];
        let mut enc = Vec::with_capacity(self.encoder.len());
        for (i, layer) in self.encoder.iter().enumerate() {
            let (out, params) = self.apply(layer, &shape, i, "encoder", &enc)?;
            enc.push(LayerShape {
                input: shape.clone(),
                output: out.clone(),
                params,
            });
            shape = out;
        }
        let mut dec = Vec::new();
        if let Some(decoder) = &self.decoder {
            for (i, layer) in decoder.iter().enumerate() {
                let (out, params) = self.apply(layer, &shape, i, "decoder", &enc)?;
                dec.push(LayerShape {
                    input: shape.clone(),
                    output: out.clone(),
                    params,
                });
                shape = out;
            }
        }
        Ok((enc, dec))
    }

    fn apply(
        &self,
        layer: &LayerSpec,
        shape: &[usize],
        index: usize,
        part: &str,
        encoder: &[LayerShape],
    ) -> Result<(Vec<usize>, usize)> {
        let fail = |detail: String| Error::Geometry {
            stage: format!("{part} layer {index} ({})", layer.label()),
            detail,
        };
        match *layer {
            LayerSpec::Conv2d { channels, .. } => match *shape {
                [h, w, c] if channels > 0 => Ok((vec![h, w, channels], conv2d_param_count(c, channels))),
                _ => Err(fail(format!("needs an H×W×C input, got {shape:?}"))),
            },
            LayerSpec::Maxpool2d { window } => match *shape {
                [h, w, c] if window > 0 && window <= h && window <= w => {
                    Ok((vec![pooled_extent(h, window), pooled_extent(w, window), c], 0))
                }
                _ => Err(fail(format!("window {window} does not fit {shape:?}"))),
            },
            LayerSpec::Dropout { rate } => {
                if (0.0..1.0).contains(&rate) {
                    Ok((shape.to_vec(), 0))
                } else {
                    Err(fail(format!("rate {rate} outside [0, 1)")))
                }
            }
            LayerSpec::Flatten => match *shape {
                [h, w, c] => Ok((vec![h * w * c], 0)),
                _ => Err(fail(format!("needs an H×W×C input, got {shape:?}"))),
            },
            LayerSpec::ConcatTime => match *shape {
                [d] => Ok((vec![self.k, d], 0)),
                _ => Err(fail(format!("needs a flat per-frame vector, got {shape:?}"))),
            },
            LayerSpec::Gru { hidden, .. } => match *shape {
                [k, d] if hidden > 0 => Ok((vec![k, hidden], gru_param_count(d, hidden))),
                _ => Err(fail(format!("needs a k×d sequence, got {shape:?}"))),
            },
            LayerSpec::Dense { units, .. } => match shape.last() {
                Some(&d) if units > 0 && shape.len() <= 2 => {
                    let mut out = shape.to_vec();
                    *out.last_mut().expect("non-empty") = units;
                    Ok((out, dense_param_count(d, units)))
                }
                _ => Err(fail(format!("needs a vector or sequence input, got {shape:?}"))),
            },
            LayerSpec::Merge { residual_from } => {
                let Some(res) = encoder.get(residual_from) else {
                    return Err(fail(format!("residual source {residual_from} is not an encoder layer")));
                };
                match (shape, res.output.as_slice()) {
                    ([k, a], [k2, b]) if k == k2 => Ok((vec![*k, a + b], 0)),
                    _ => Err(fail(format!(
                        "cannot merge {shape:?} with residual {:?}",
                        res.output
                    ))),
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (enc, dec) = self.layer_shapes()?;
        let out = dec.last().or(enc.last()).map(|l| l.output.clone());
        let expected_last = match self.kind {
            ModelKind::Sf => vec![FINGERS],
            ModelKind::Mf => vec![self.k, FINGERS],
            ModelKind::Cbmf => {
                match enc.last().map(|l| l.output.clone()) {
                    Some(o) if o == [self.k, CONFIG_WIDTH] => {}
                    other => {
                        return Err(Error::Geometry {
                            stage: "encoder output".into(),
                            detail: format!("CBMF encoder must emit k×{CONFIG_WIDTH}, got {other:?}"),
                        })
                    }
                }
                vec![self.k, FINGERS]
            }
        };
        if self.encoder.is_empty() {
            return Ok(());
        }
        if out.as_deref() != Some(expected_last.as_slice()) {
            return Err(Error::Geometry {
                stage: "model output".into(),
                detail: format!("{} must emit {expected_last:?}, got {out:?}", self.kind.label()),
            });
        }
        Ok(())
    }

    /// Width of the per-frame feature vector leaving the CNN.
    pub fn frame_feature_width(&self) -> Result<usize> {
        let (enc, _) = self.layer_shapes()?;
        let idx = self
            .encoder
            .iter()
            .position(|l| matches!(l, LayerSpec::Flatten))
            .ok_or_else(|| Error::invalid("spec has no flatten layer"))?;
        Ok(enc[idx].output[0])
    }

    /// Width of the decoder merge input (configuration + residual features).
    pub fn merge_width(&self) -> Option<usize> {
        let (_, dec) = self.layer_shapes().ok()?;
        let decoder = self.decoder.as_ref()?;
        decoder
            .iter()
            .position(|l| matches!(l, LayerSpec::Merge { .. }))
            .map(|i| dec[i].output[1])
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::parse("model spec", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("model spec", e))
    }
}

/// Exact per-layer parameter counts (parameter-free layers included with 0).
pub fn count_params(spec: &ModelSpec) -> Result<ParamReport> {
    let (enc, dec) = spec.layer_shapes()?;
    let mut layers = Vec::new();
    let mut push = |prefix: &str, specs: &[LayerSpec], shapes: &[LayerShape]| {
        for (i, (l, s)) in specs.iter().zip(shapes).enumerate() {
            layers.push(LayerCount {
                name: format!("{prefix}{i:02}_{}", l.label()),
                kind: l.label().to_string(),
                activation: l.activation(),
                output_shape: s.output.clone(),
                params: s.params,
            });
        }
    };
    push("enc", &spec.encoder, &enc);
    if let Some(d) = &spec.decoder {
        push("dec", d, &dec);
    }
    let total = layers.iter().map(|l| l.params).sum();
    Ok(ParamReport {
        model: spec.kind,
        layers,
        total,
    })
}

/// Formats a count the way the architecture tables print it: exact with
/// thousands separators below 10⁴, then two decimals with `k` (10³) or `M`
/// (10⁶).
pub fn format_count(n: usize) -> String {
    if n >= 1_000_000 {
        format!("{:.2}M", n as f64 / 1e6)
    } else if n >= 10_000 {
        format!("{:.2}k", n as f64 / 1e3)
    } else {
        let s = n.to_string();
        let mut out = String::new();
        for (i, ch) in s.chars().enumerate() {
            if i > 0 && (s.len() - i) % 3 == 0 {
                out.push(',');
            }
            out.push(ch);
        }
        out
    }
}
