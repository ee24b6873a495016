//! Layer kernels. Activations are planar per sample: `[channel][row][col]`
//! for spatial layers and `[feature]` for flat ones.

use serde::{Deserialize, Serialize};

use crate::numerics::SeededRng;

/// Extent of one sample's activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActShape {
    Spatial {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat(usize),
}

impl ActShape {
    pub fn len(&self) -> usize {
        match *self {
            ActShape::Spatial {
                channels,
                height,
                width,
            } => channels * height * width,
            ActShape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            ActShape::Spatial {
                channels,
                height,
                width,
            } => vec![channels, height, width],
            ActShape::Flat(n) => vec![n],
        }
    }
}

/// Valid-padding, stride-1 cross-correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out][in][ky][kx]`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut SeededRng) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let scale = (2.0 / fan_in).sqrt();
        let weights = (0..out_channels * in_channels * kernel * kernel)
            .map(|_| rng.normal() * scale)
            .collect();
        Self {
            in_channels,
            out_channels,
            kernel,
            weights,
            bias: vec![0.0; out_channels],
        }
    }

    pub fn output_extent(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        (height >= self.kernel && width >= self.kernel).then(|| (height - self.kernel + 1, width - self.kernel + 1))
    }

    #[inline]
    fn w(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f64 {
        let k = self.kernel;
        self.weights[((oc * self.in_channels + ic) * k + ky) * k + kx]
    }

    pub fn forward(&self, input: &[f64], height: usize, width: usize, out: &mut [f64]) {
        let k = self.kernel;
        let (oh, ow) = (height - k + 1, width - k + 1);
        let in_plane = height * width;
        let out_plane = oh * ow;
        for oc in 0..self.out_channels {
            let dst = &mut out[oc * out_plane..(oc + 1) * out_plane];
            dst.fill(self.bias[oc]);
            for ic in 0..self.in_channels {
                let src = &input[ic * in_plane..(ic + 1) * in_plane];
                for ky in 0..k {
                    for kx in 0..k {
                        let w = self.w(oc, ic, ky, kx);
                        for y in 0..oh {
                            let s = &src[(y + ky) * width + kx..(y + ky) * width + kx + ow];
                            let d = &mut dst[y * ow..(y + 1) * ow];
                            for (d, &s) in d.iter_mut().zip(s) {
                                *d += w * s;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients into `grad_params` (weights then bias)
    /// and, when requested, writes the input gradient.
    pub fn backward(
        &self,
        input: &[f64],
        height: usize,
        width: usize,
        grad_out: &[f64],
        grad_params: Option<&mut [f64]>,
        grad_input: Option<&mut [f64]>,
    ) {
        let k = self.kernel;
        let (oh, ow) = (height - k + 1, width - k + 1);
        let in_plane = height * width;
        let out_plane = oh * ow;
        if let Some(gp) = grad_params {
            let (gw, gb) = gp.split_at_mut(self.weights.len());
            for oc in 0..self.out_channels {
                let go = &grad_out[oc * out_plane..(oc + 1) * out_plane];
                gb[oc] += go.iter().sum::<f64>();
                for ic in 0..self.in_channels {
                    let src = &input[ic * in_plane..(ic + 1) * in_plane];
                    for ky in 0..k {
                        for kx in 0..k {
                            let mut acc = 0.0;
                            for y in 0..oh {
                                let s = &src[(y + ky) * width + kx..(y + ky) * width + kx + ow];
                                let g = &go[y * ow..(y + 1) * ow];
                                acc += s.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                            }
                            gw[((oc * self.in_channels + ic) * k + ky) * k + kx] += acc;
                        }
                    }
                }
            }
        }
        if let Some(gi) = grad_input {
            gi.fill(0.0);
            for oc in 0..self.out_channels {
                let go = &grad_out[oc * out_plane..(oc + 1) * out_plane];
                for ic in 0..self.in_channels {
                    let dst = &mut gi[ic * in_plane..(ic + 1) * in_plane];
                    for ky in 0..k {
                        for kx in 0..k {
                            let w = self.w(oc, ic, ky, kx);
                            for y in 0..oh {
                                let d = &mut dst[(y + ky) * width + kx..(y + ky) * width + kx + ow];
                                let g = &go[y * ow..(y + 1) * ow];
                                for (d, &g) in d.iter_mut().zip(g) {
                                    *d += w * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
pub fn maxpool_forward(
    input: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    out: &mut [f64],
    argmax: &mut [u32],
) {
    let (oh, ow) = (height / 2, width / 2);
    for c in 0..channels {
        let base = c * height * width;
        for y in 0..oh {
            for x in 0..ow {
                let mut best_idx = base + 2 * y * width + 2 * x;
                let mut best = input[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * width + 2 * x + dx;
                    if input[idx] > best {
                        best = input[idx];
                        best_idx = idx;
                    }
                }
                let o = (c * oh + y) * ow + x;
                out[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
}

/// Batch-statistics standardization with a learned affine transform.
/// Running statistics (momentum 0.9) are used outside training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl FeatureNorm {
    pub fn new(features: usize) -> Self {
        Self {
            scale: vec![1.0; features],
            shift: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: 0.9,
            epsilon: 1e-5,
        }
    }

    pub fn features(&self) -> usize {
        self.scale.len()
    }

    pub fn absorb(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        let m = self.momentum;
        for j in 0..self.features() {
            self.running_mean[j] = m * self.running_mean[j] + (1.0 - m) * batch_mean[j];
            self.running_var[j] = m * self.running_var[j] + (1.0 - m) * batch_var[j];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        let scale = (2.0 / inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.normal() * scale).collect(),
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, dst) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *dst = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}
