//! Convolution FLOP accounting for color and grayscale inputs.
//!
//! One multiply-accumulate counts as one operation, plus one add per output
//! element when the layer has a bias:
//!
//! `flops = out_h * out_w * out_channels * (k^2 * in_channels / groups + bias)`

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn one() -> u32 {
    1
}

/// Specs shipped with the library, by name.
pub const BUILTIN_MODELS: [(&str, &str); 2] = [
    ("vgg19-32", include_str!("../data/models/vgg19-32.spec.toml")),
    ("enb0-32", include_str!("../data/models/enb0-32.spec.toml")),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub name: String,
    /// Square kernel side.
    pub kernel: u32,
    pub in_channels: u32,
    pub out_channels: u32,
    #[serde(default = "one")]
    pub stride: u32,
    #[serde(default)]
    pub padding: u32,
    #[serde(default)]
    pub has_bias: bool,
    /// Channel groups; equal to `in_channels` for a depthwise convolution.
    #[serde(default = "one")]
    pub groups: u32,
    /// Spatial downsampling factor applied after the layer (pooling); costs nothing.
    #[serde(default = "one")]
    pub pool_after: u32,
}

impl ConvLayerSpec {
    pub fn new(name: impl Into<String>, kernel: u32, in_channels: u32, out_channels: u32) -> Self {
        Self {
            name: name.into(),
            kernel,
            in_channels,
            out_channels,
            stride: 1,
            padding: 0,
            has_bias: false,
            groups: 1,
            pool_after: 1,
        }
    }

    pub fn stride(mut self, stride: u32) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: u32) -> Self {
        self.padding = padding;
        self
    }

    pub fn bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    pub fn groups(mut self, groups: u32) -> Self {
        self.groups = groups;
        self
    }

    pub fn pool_after(mut self, factor: u32) -> Self {
        self.pool_after = factor;
        self
    }

    fn check(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::input(format!("layer `{}`: {what}", self.name)));
        if self.kernel < 1 || self.stride < 1 || self.pool_after < 1 {
            return bad("kernel, stride and pool_after must be >= 1");
        }
        if self.in_channels < 1 || self.out_channels < 1 {
            return bad("channel counts must be >= 1");
        }
        if self.groups < 1
            || !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return bad("groups must divide both channel counts");
        }
        Ok(())
    }
}

/// A stack of convolution layers with a fixed input size.
///
/// Stored as TOML:
///
/// ```toml
/// name = "toy"
/// input_w = 32
/// input_h = 32
///
/// [[layers]]
/// name = "conv1"
/// kernel = 3
/// in_channels = 3
/// out_channels = 16
/// padding = 1
/// has_bias = true
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input_w: u32,
    pub input_h: u32,
    pub layers: Vec<ConvLayerSpec>,
}

impl ModelSpec {
    pub fn check(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::input(format!("model `{}` has no layers", self.name)))?;
        if !matches!(first.in_channels, 1 | 3) {
            return Err(Error::input(format!(
                "model `{}`: first layer must take 1 or 3 input channels, found {}",
                self.name, first.in_channels
            )));
        }
        if first.groups != 1 {
            return Err(Error::input(format!(
                "model `{}`: first layer must be a dense convolution",
                self.name
            )));
        }
        if self.input_w == 0 || self.input_h == 0 {
            return Err(Error::input(format!("model `{}`: input size must be positive", self.name)));
        }
        self.layers.iter().try_for_each(ConvLayerSpec::check)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ModelSpec = toml::from_str(text).map_err(|e| Error::format("model spec", e))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display().to_string(), message),
            other => other,
        })
    }

    /// Loads a spec file, falling back to a built-in spec when `path` does not
    /// exist and its file name names one (`vgg19-32`, `vgg19-32.spec`,
    /// `vgg19-32.spec.toml`).
    pub fn load_or_builtin(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let stem = name.trim_end_matches(".toml").trim_end_matches(".spec");
            if let Some((_, text)) = BUILTIN_MODELS.iter().find(|(n, _)| *n == stem) {
                return Self::from_toml(text);
            }
        }
        Self::load(path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }

    /// Same layers at a different square input size.
    pub fn at_size(&self, size: u32) -> Self {
        Self {
            input_w: size,
            input_h: size,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    Color,
    Gray,
}

impl ColorMode {
    pub fn input_channels(self) -> u32 {
        match self {
            ColorMode::Color => 3,
            ColorMode::Gray => 1,
        }
    }
}

impl std::fmt::Display for ColorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ColorMode::Color => "color",
            ColorMode::Gray => "gray",
        })
    }
}

impl std::str::FromStr for ColorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "color" | "rgb" => Ok(ColorMode::Color),
            "gray" | "grey" | "grayscale" => Ok(ColorMode::Gray),
            other => Err(Error::input(format!("unknown color mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvCost {
    pub flops: u64,
    pub out_w: u32,
    pub out_h: u32,
}

fn out_dim(input: u32, kernel: u32, stride: u32, padding: u32) -> Option<u32> {
    let padded = input as u64 + 2 * padding as u64;
    (padded >= kernel as u64).then(|| ((padded - kernel as u64) / stride as u64 + 1) as u32)
}

/// FLOPs and output size of one convolution on an `in_w` x `in_h` input.
pub fn conv_flops(layer: &ConvLayerSpec, in_w: u32, in_h: u32) -> Result<ConvCost> {
    layer.check()?;
    let (out_w, out_h) = match (
        out_dim(in_w, layer.kernel, layer.stride, layer.padding),
        out_dim(in_h, layer.kernel, layer.stride, layer.padding),
    ) {
        (Some(w), Some(h)) => (w, h),
        _ => {
            return Err(Error::input(format!(
                "layer `{}`: {k}x{k} kernel exceeds padded input {in_w}x{in_h} (padding {p})",
                layer.name,
                k = layer.kernel,
                p = layer.padding
            )))
        }
    };
    let k2 = layer.kernel as u64 * layer.kernel as u64;
    let per_output = k2 * (layer.in_channels / layer.groups) as u64 + layer.has_bias as u64;
    let flops = out_w as u64 * out_h as u64 * layer.out_channels as u64 * per_output;
    Ok(ConvCost { flops, out_w, out_h })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub name: String,
    pub flops: u64,
    pub out_w: u32,
    pub out_h: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub model: String,
    pub mode: ColorMode,
    pub input_w: u32,
    pub input_h: u32,
    pub per_layer: Vec<LayerFlops>,
    pub total: u64,
    pub layer1_color: u64,
    pub layer1_gray: u64,
    pub total_color: u64,
    pub total_gray: u64,
    /// total_gray / total_color.
    pub gray_to_color_ratio: f64,
}

fn chain(model: &ModelSpec, mode: ColorMode) -> Result<Vec<LayerFlops>> {
    let (mut w, mut h) = (model.input_w, model.input_h);
    let mut out = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        let cost = if i == 0 {
            let mut first = layer.clone();
            first.in_channels = mode.input_channels();
            conv_flops(&first, w, h)?
        } else {
            conv_flops(layer, w, h)?
        };
        out.push(LayerFlops {
            name: layer.name.clone(),
            flops: cost.flops,
            out_w: cost.out_w,
            out_h: cost.out_h,
        });
        w = cost.out_w / layer.pool_after;
        h = cost.out_h / layer.pool_after;
        if (w == 0 || h == 0) && i + 1 < model.layers.len() {
            return Err(Error::input(format!(
                "layer `{}`: pooling by {} collapses a {}x{} map",
                layer.name, layer.pool_after, cost.out_w, cost.out_h
            )));
        }
    }
    Ok(out)
}

/// Chains `conv_flops` through the model. Grayscale only changes the first
/// layer's input channels to 1.
pub fn model_flops(model: &ModelSpec, mode: ColorMode) -> Result<FlopsReport> {
    model.check()?;
    let color = chain(model, ColorMode::Color)?;
    let gray = chain(model, ColorMode::Gray)?;
    let total_color: u64 = color.iter().map(|l| l.flops).sum();
    let total_gray: u64 = gray.iter().map(|l| l.flops).sum();
    let layer1_color = color[0].flops;
    let layer1_gray = gray[0].flops;
    let per_layer = match mode {
        ColorMode::Color => color,
        ColorMode::Gray => gray,
    };
    Ok(FlopsReport {
        model: model.name.clone(),
        mode,
        input_w: model.input_w,
        input_h: model.input_h,
        total: per_layer.iter().map(|l| l.flops).sum(),
        per_layer,
        layer1_color,
        layer1_gray,
        total_color,
        total_gray,
        gray_to_color_ratio: total_gray as f64 / total_color as f64,
    })
}

/// Total FLOPs at each square input size, in the given order.
pub fn resolution_sweep(model: &ModelSpec, sizes: &[u32], mode: ColorMode) -> Result<Vec<(u32, u64)>> {
    sizes
        .iter()
        .map(|&s| {
            if s == 0 {
                return Err(Error::input("resolution_sweep: sizes must be positive"));
            }
            Ok((s, model_flops(&model.at_size(s), mode)?.total))
        })
        .collect()
}

/// Count in thousands with two decimals, e.g. `1835008` -> `"1835.01"`.
pub fn format_kflops(flops: u64) -> String {
    format_kflops_with(flops, 2)
}

pub fn format_kflops_with(flops: u64, decimals: usize) -> String {
    format!("{:.*}", decimals, flops as f64 / 1000.0)
}
