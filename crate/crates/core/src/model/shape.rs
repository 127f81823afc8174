use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::LayerKind;

/// Tensor shape in elements: either a feature vector or a CHW volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "Vec<usize>", try_from = "Vec<usize>")]
pub enum Shape {
    Vector(usize),
    Volume {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Shape {
    pub fn volume(channels: usize, height: usize, width: usize) -> Self {
        Shape::Volume {
            channels,
            height,
            width,
        }
    }

    pub fn elements(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Volume {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    /// Channel count; a vector has one channel per feature.
    pub fn channels(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Volume { channels, .. } => channels,
        }
    }

    /// Spatial positions (height·width), 1 for vectors.
    pub fn pixels(&self) -> usize {
        match *self {
            Shape::Vector(_) => 1,
            Shape::Volume { height, width, .. } => height * width,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Vector(n) => vec![n],
            Shape::Volume {
                channels,
                height,
                width,
            } => vec![channels, height, width],
        }
    }

    pub fn from_dims(dims: &[usize]) -> Option<Self> {
        match *dims {
            [n] => Some(Shape::Vector(n)),
            [c, h, w] => Some(Shape::volume(c, h, w)),
            _ => None,
        }
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.dims()
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = String;

    fn try_from(v: Vec<usize>) -> Result<Self, String> {
        Shape::from_dims(&v).ok_or_else(|| format!("shape must have 1 or 3 dims, got {}", v.len()))
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Shape::Vector(n) => write!(f, "{n}"),
            Shape::Volume {
                channels,
                height,
                width,
            } => write!(f, "{channels}x{height}x{width}"),
        }
    }
}

/// Structural parameters of a layer needed to infer its output shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShapeParams {
    pub kind: LayerKind,
    pub kernel: Option<(usize, usize)>,
    pub stride: (usize, usize),
    /// Output channels (Conv2D) or output features (FullyConnected).
    pub out_units: Option<usize>,
}

/// Output shape of a single layer. No padding.
pub fn infer_output_shape(layer: &str, input: Shape, p: &ShapeParams) -> Result<Shape> {
    match p.kind {
        LayerKind::Conv2D | LayerKind::MaxPool2D => {
            let Shape::Volume {
                channels,
                height,
                width,
            } = input
            else {
                return Err(Error::shape(
                    layer,
                    format!("{:?} needs a CxHxW input, got {input}", p.kind),
                ));
            };
            let (kh, kw) = p.kernel.ok_or_else(|| Error::shape(layer, "missing kernel"))?;
            let (sh, sw) = p.stride;
            if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
                return Err(Error::shape(layer, "kernel and stride must be positive"));
            }
            if kh > height || kw > width {
                return Err(Error::shape(
                    layer,
                    format!("kernel {kh}x{kw} larger than input {height}x{width}"),
                ));
            }
            let out_h = (height - kh) / sh + 1;
            let out_w = (width - kw) / sw + 1;
            let out_c = match p.kind {
                LayerKind::Conv2D => p.out_units.ok_or_else(|| Error::shape(layer, "missing out_channels"))?,
                _ => channels,
            };
            if out_c == 0 {
                return Err(Error::shape(layer, "output channels must be >= 1"));
            }
            Ok(Shape::volume(out_c, out_h, out_w))
        }
        LayerKind::FullyConnected => {
            let n = p.out_units.ok_or_else(|| Error::shape(layer, "missing out_features"))?;
            if n == 0 {
                return Err(Error::shape(layer, "out_features must be >= 1"));
            }
            Ok(Shape::Vector(n))
        }
        LayerKind::Threshold => Ok(input),
    }
}

/// Fills in (input, output) shapes along a linear chain starting at `input`.
pub fn infer_shapes<'a, I>(input: Shape, layers: I) -> Result<Vec<(Shape, Shape)>>
where
    I: IntoIterator<Item = (&'a str, ShapeParams)>,
{
    let mut current = input;
    let mut out = Vec::new();
    for (id, params) in layers {
        let next = infer_output_shape(id, current, &params)?;
        out.push((current, next));
        current = next;
    }
    Ok(out)
}
