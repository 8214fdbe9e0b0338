//! Randomly weighted compositional pattern-producing networks.
//!
//! A network maps the pixel coordinate triple `(x, y, r)` through fully
//! connected hidden layers with activation `tanh(z^3)` and a three-wide
//! logistic output head producing RGB in `(0, 1)`.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{layer_sizes, ArchError, ArchitectureSpec};
use crate::rng::NormalStream;

/// Width of the coordinate input `(x, y, r)`.
pub const INPUT_WIDTH: usize = 3;
/// Width of the RGB output head.
pub const OUTPUT_WIDTH: usize = 3;

// tanh(x) == 1.0 in f64 for x > ~19.06, so clamping the cubed pre-activation
// here keeps it finite without changing any result.
const CUBE_CLAMP: f64 = 40.0;

/// One fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn weight(&self, out: usize, input: usize) -> f64 {
        self.weights[out * self.inputs + input]
    }

    pub fn set_weight(&mut self, out: usize, input: usize, value: f64) {
        self.weights[out * self.inputs + input] = value;
    }

    fn row(&self, out: usize) -> &[f64] {
        &self.weights[out * self.inputs..(out + 1) * self.inputs]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error("layer {index} expects {expected} inputs but receives {actual}")]
    Shape {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("network must have at least one hidden layer and a {OUTPUT_WIDTH}-wide head")]
    Head,
    #[error("non-finite parameter in layer {0}")]
    NonFinite(usize),
}

/// Hidden layers followed by the RGB head. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
}

#[inline]
fn hidden_activation(z: f64) -> f64 {
    let cubed = z * z * z;
    libm::tanh(cubed.clamp(-CUBE_CLAMP, CUBE_CLAMP))
}

#[inline]
fn output_activation(z: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-z))
}

impl Network {
    /// Assembles a network from explicit layers, checking the shape chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NetworkError> {
        if layers.len() < 2 || layers.last().map(|l| l.outputs) != Some(OUTPUT_WIDTH) {
            return Err(NetworkError::Head);
        }
        let mut width = INPUT_WIDTH;
        for (index, layer) in layers.iter().enumerate() {
            if layer.inputs != width
                || layer.weights.len() != layer.inputs * layer.outputs
                || layer.bias.len() != layer.outputs
            {
                return Err(NetworkError::Shape {
                    index,
                    expected: width,
                    actual: layer.inputs,
                });
            }
            if !layer.weights.iter().chain(&layer.bias).all(|v| v.is_finite()) {
                return Err(NetworkError::NonFinite(index));
            }
            width = layer.outputs;
        }
        Ok(Self { layers })
    }

    /// Realizes the weights of `spec` from its seed.
    ///
    /// Parameters are drawn layer by layer; within a layer the weight matrix
    /// comes first in row-major order, then the biases.
    pub fn build(spec: &ArchitectureSpec) -> Result<Self, NetworkError> {
        let hidden = layer_sizes(spec)?;
        Ok(Self::random(hidden.as_slice(), spec.seed))
    }

    /// Random N(0,1) network with the given hidden widths.
    pub fn random(hidden: &[usize], seed: u64) -> Self {
        let mut stream = NormalStream::new(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut inputs = INPUT_WIDTH;
        for &outputs in hidden.iter().chain(std::iter::once(&OUTPUT_WIDTH)) {
            let mut layer = Layer::zeros(inputs, outputs);
            stream.fill(&mut layer.weights);
            stream.fill(&mut layer.bias);
            layers.push(layer);
            inputs = outputs;
        }
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.outputs)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    /// Evaluates one coordinate triple, returning RGB in `(0, 1)`.
    pub fn forward(&self, x: f64, y: f64, r: f64) -> [f64; 3] {
        let mut current = vec![x, y, r];
        let last = self.layers.len() - 1;
        for (index, layer) in self.layers.iter().enumerate() {
            let next: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    let mut acc = layer.bias[o];
                    for (w, v) in layer.row(o).iter().zip(&current) {
                        acc += w * v;
                    }
                    if index == last {
                        output_activation(acc)
                    } else {
                        hidden_activation(acc)
                    }
                })
                .collect();
            current = next;
        }
        [current[0], current[1], current[2]]
    }

    /// Evaluates a batch of coordinates; `coords` holds `[x.., y.., r..]`
    /// planes of equal length. Returns RGB planes. Per-pixel arithmetic is
    /// identical to [`Network::forward`].
    fn forward_batch(&self, coords: Vec<f64>, count: usize) -> Vec<f64> {
        let mut current = coords;
        let last = self.layers.len() - 1;
        for (index, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.outputs * count];
            for (o, out) in next.chunks_exact_mut(count).enumerate() {
                out.fill(layer.bias[o]);
                for (k, &w) in layer.row(o).iter().enumerate() {
                    let plane = &current[k * count..(k + 1) * count];
                    for (acc, v) in out.iter_mut().zip(plane) {
                        *acc += w * v;
                    }
                }
                if index == last {
                    out.iter_mut().for_each(|v| *v = output_activation(*v));
                } else {
                    out.iter_mut().for_each(|v| *v = hidden_activation(*v));
                }
            }
            current = next;
        }
        current
    }

    /// Renders a full `width x height` image.
    pub fn render(&self, width: usize, height: usize) -> ImageRgb {
        self.render_region(width, height, 0, 0, width, height)
    }

    /// Renders the sub-rectangle at `(left, top)` of size `w x h` of the
    /// `width x height` canvas.
    pub fn render_region(
        &self,
        width: usize,
        height: usize,
        left: usize,
        top: usize,
        w: usize,
        h: usize,
    ) -> ImageRgb {
        assert!(width >= 1 && height >= 1, "canvas must be non-empty");
        assert!(left + w <= width && top + h <= height, "region outside canvas");
        let mut data = vec![0u8; w * h * 3];
        if w == 0 || h == 0 {
            return ImageRgb { width: w, height: h, data };
        }
        data.par_chunks_mut(w * 3).enumerate().for_each(|(row, out)| {
            let y = grid_coordinate(top + row, height);
            let mut coords = vec![0.0; 3 * w];
            for col in 0..w {
                let x = grid_coordinate(left + col, width);
                coords[col] = x;
                coords[w + col] = y;
                coords[2 * w + col] = libm::sqrt(x * x + y * y);
            }
            let rgb = self.forward_batch(coords, w);
            for col in 0..w {
                for c in 0..3 {
                    out[col * 3 + c] = quantize(rgb[c * w + col]);
                }
            }
        });
        ImageRgb { width: w, height: h, data }
    }
}

/// Maps pixel index `i` of `n` onto `[-1, 1]`, endpoints inclusive. A single
/// pixel sits at 0.
pub fn grid_coordinate(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// `round(255 v)`, half away from zero, saturated to a byte.
pub fn quantize(v: f64) -> u8 {
    (255.0 * v).round().clamp(0.0, 255.0) as u8
}

/// 8-bit RGB raster, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height * 3, "RGB buffer size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer size checked on construction")
    }

    pub fn from_rgb_image(img: RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, image::ImageError> {
        let mut buf = Cursor::new(Vec::new());
        self.to_rgb_image().write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, image::ImageError> {
        Ok(Self::from_rgb_image(image::load_from_memory(bytes)?.to_rgb8()))
    }

    pub fn open(path: &Path) -> Result<Self, image::ImageError> {
        Ok(Self::from_rgb_image(image::open(path)?.to_rgb8()))
    }
}
