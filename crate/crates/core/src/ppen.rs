//! Image-preprocessing primitives: bilinear sampling, standard and
//! deformable convolution, strip pooling with a gated fuse, and a
//! quantization-adaptive channel scaler, composed into a two-branch
//! preprocessing filter.
//!
//! Weights are supplied, not trained here. Feature maps are `h x w x c`
//! real grids; positions are `(row, col)` with fractional coordinates
//! resolved by bilinear interpolation and zero padding outside the grid.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // required when std is absent from the crate graph
use num_traits::Float;

use crate::rng::SeededRng;
use crate::{Error, Result};

/// Dense `h x w x c` feature map, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureMap {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut m = FeatureMap::zeros(height, width, channels);
        for i in 0..height {
            for j in 0..width {
                for c in 0..channels {
                    *m.at_mut(i, j, c) = f(i, j, c);
                }
            }
        }
        m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(i * self.width + j) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize, c: usize) -> &mut f64 {
        &mut self.data[(i * self.width + j) * self.channels + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Convolution weights: `out_ch x in_ch x kh x kw`, odd kernel sides.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    weights: Vec<f64>,
}

impl ConvKernel {
    pub fn new(out_ch: usize, in_ch: usize, kh: usize, kw: usize, weights: Vec<f64>) -> Result<Self> {
        if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return Err(Error::InvalidInput("kernel sides must be odd".into()));
        }
        if weights.len() != out_ch * in_ch * kh * kw {
            return Err(Error::Dimension(format!(
                "kernel needs {} weights, got {}",
                out_ch * in_ch * kh * kw,
                weights.len()
            )));
        }
        Ok(ConvKernel {
            out_ch,
            in_ch,
            kh,
            kw,
            weights,
        })
    }

    #[inline]
    pub fn w(&self, oc: usize, ic: usize, ki: usize, kj: usize) -> f64 {
        self.weights[((oc * self.in_ch + ic) * self.kh + ki) * self.kw + kj]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Per-output-location, per-tap fractional displacements `(d_row, d_col)`.
/// Tap order is row-major over the kernel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    pub height: usize,
    pub width: usize,
    pub taps: usize,
    data: Vec<(f64, f64)>,
}

impl OffsetField {
    pub fn zeros(height: usize, width: usize, taps: usize) -> Self {
        OffsetField {
            height,
            width,
            taps,
            data: vec![(0.0, 0.0); height * width * taps],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        taps: usize,
        mut f: impl FnMut(usize, usize, usize) -> (f64, f64),
    ) -> Self {
        let mut o = OffsetField::zeros(height, width, taps);
        for i in 0..height {
            for j in 0..width {
                for t in 0..taps {
                    o.data[(i * width + j) * taps + t] = f(i, j, t);
                }
            }
        }
        o
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, tap: usize) -> (f64, f64) {
        self.data[(i * self.width + j) * self.taps + tap]
    }

    pub fn data(&self) -> &[(f64, f64)] {
        &self.data
    }
}

/// Bilinear interpolation of channel `ch` at fractional `(row, col)`;
/// zero outside the grid.
pub fn bilinear_sample(t: &FeatureMap, p: (f64, f64), ch: usize) -> f64 {
    let (pi, pj) = p;
    let i0 = pi.floor();
    let j0 = pj.floor();
    let di = pi - i0;
    let dj = pj - j0;
    let mut acc = 0.0;
    for (ci, wi) in [(i0, 1.0 - di), (i0 + 1.0, di)] {
        if wi == 0.0 {
            continue;
        }
        for (cj, wj) in [(j0, 1.0 - dj), (j0 + 1.0, dj)] {
            if wj == 0.0 {
                continue;
            }
            let inside = ci >= 0.0
                && cj >= 0.0
                && (ci as usize) < t.height
                && (cj as usize) < t.width;
            if inside {
                acc += wi * wj * t.at(ci as usize, cj as usize, ch);
            }
        }
    }
    acc
}

/// Plain same-size convolution with zero padding; the zero-offset reference
/// for the deformable variant.
pub fn conv2d(t: &FeatureMap, kernel: &ConvKernel) -> Result<FeatureMap> {
    if kernel.in_ch != t.channels {
        return Err(Error::Dimension(format!(
            "kernel expects {} input channels, map has {}",
            kernel.in_ch, t.channels
        )));
    }
    let (rh, rw) = (kernel.kh / 2, kernel.kw / 2);
    let mut out = FeatureMap::zeros(t.height, t.width, kernel.out_ch);
    for i in 0..t.height {
        for j in 0..t.width {
            for oc in 0..kernel.out_ch {
                let mut acc = 0.0;
                for ic in 0..kernel.in_ch {
                    for ki in 0..kernel.kh {
                        for kj in 0..kernel.kw {
                            let si = i as isize + ki as isize - rh as isize;
                            let sj = j as isize + kj as isize - rw as isize;
                            if si < 0 || sj < 0 || si >= t.height as isize || sj >= t.width as isize
                            {
                                continue;
                            }
                            acc += kernel.w(oc, ic, ki, kj) * t.at(si as usize, sj as usize, ic);
                        }
                    }
                }
                *out.at_mut(i, j, oc) = acc;
            }
        }
    }
    Ok(out)
}

/// Deformable convolution: each kernel tap samples at its grid position plus
/// a per-location fractional offset, resolved bilinearly.
pub fn deformable_conv2d(
    t: &FeatureMap,
    kernel: &ConvKernel,
    offsets: &OffsetField,
) -> Result<FeatureMap> {
    if kernel.in_ch != t.channels {
        return Err(Error::Dimension(format!(
            "kernel expects {} input channels, map has {}",
            kernel.in_ch, t.channels
        )));
    }
    if offsets.height != t.height
        || offsets.width != t.width
        || offsets.taps != kernel.kh * kernel.kw
    {
        return Err(Error::Dimension(format!(
            "offset field is {}x{}x{}, need {}x{}x{}",
            offsets.height,
            offsets.width,
            offsets.taps,
            t.height,
            t.width,
            kernel.kh * kernel.kw
        )));
    }
    let (rh, rw) = (kernel.kh / 2, kernel.kw / 2);
    let mut out = FeatureMap::zeros(t.height, t.width, kernel.out_ch);
    for i in 0..t.height {
        for j in 0..t.width {
            for oc in 0..kernel.out_ch {
                let mut acc = 0.0;
                for ki in 0..kernel.kh {
                    for kj in 0..kernel.kw {
                        let tap = ki * kernel.kw + kj;
                        let (di, dj) = offsets.at(i, j, tap);
                        let pi = i as f64 + ki as f64 - rh as f64 + di;
                        let pj = j as f64 + kj as f64 - rw as f64 + dj;
                        for ic in 0..kernel.in_ch {
                            acc += kernel.w(oc, ic, ki, kj) * bilinear_sample(t, (pi, pj), ic);
                        }
                    }
                }
                *out.at_mut(i, j, oc) = acc;
            }
        }
    }
    Ok(out)
}

/// Per-channel maxima along full rows and full columns:
/// `row_max[c][i] = max_j t[i, j, c]`, `col_max[c][j] = max_i t[i, j, c]`.
pub fn strip_pool(t: &FeatureMap) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut row_max = vec![vec![f64::NEG_INFINITY; t.height]; t.channels];
    let mut col_max = vec![vec![f64::NEG_INFINITY; t.width]; t.channels];
    for i in 0..t.height {
        for j in 0..t.width {
            for c in 0..t.channels {
                let v = t.at(i, j, c);
                if v > row_max[c][i] {
                    row_max[c][i] = v;
                }
                if v > col_max[c][j] {
                    col_max[c][j] = v;
                }
            }
        }
    }
    (row_max, col_max)
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Broadcast the strip maxima back over the grid, gate through a logistic,
/// and scale the input elementwise.
pub fn strip_fuse(t: &FeatureMap, row_max: &[Vec<f64>], col_max: &[Vec<f64>]) -> Result<FeatureMap> {
    if row_max.len() != t.channels
        || col_max.len() != t.channels
        || row_max.iter().any(|r| r.len() != t.height)
        || col_max.iter().any(|c| c.len() != t.width)
    {
        return Err(Error::Dimension(
            "strip maxima do not match the feature map".into(),
        ));
    }
    Ok(FeatureMap::from_fn(
        t.height,
        t.width,
        t.channels,
        |i, j, c| t.at(i, j, c) * logistic(row_max[c][i] + col_max[c][j]),
    ))
}

/// Quantization levels the adaptive layer accepts.
pub const QUANT_SET: [u32; 5] = [28, 31, 34, 37, 41];

/// Two-layer perceptron mapping the normalized quantization parameter to a
/// per-channel scale vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QaMlp {
    pub hidden: usize,
    pub out: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl QaMlp {
    pub fn new(hidden: usize, out: usize, w1: Vec<f64>, b1: Vec<f64>, w2: Vec<f64>, b2: Vec<f64>) -> Result<Self> {
        if w1.len() != hidden || b1.len() != hidden || w2.len() != out * hidden || b2.len() != out {
            return Err(Error::Dimension("QA perceptron shape mismatch".into()));
        }
        Ok(QaMlp {
            hidden,
            out,
            w1,
            b1,
            w2,
            b2,
        })
    }

    /// Constant scale vector regardless of the quantization parameter.
    pub fn constant(scales: &[f64]) -> Self {
        QaMlp {
            hidden: 1,
            out: scales.len(),
            w1: vec![0.0],
            b1: vec![0.0],
            w2: vec![0.0; scales.len()],
            b2: scales.to_vec(),
        }
    }

    pub fn scale_vector(&self, q_norm: f64) -> Vec<f64> {
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|h| (self.w1[h] * q_norm + self.b1[h]).tanh())
            .collect();
        (0..self.out)
            .map(|o| {
                self.b2[o]
                    + (0..self.hidden)
                        .map(|h| self.w2[o * self.hidden + h] * hidden[h])
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Scale each channel by the perceptron output for this quantization
/// parameter. `q` must be one of [`QUANT_SET`]; it is normalized affinely to
/// [0, 1] over that set.
pub fn qa_scale(f: &FeatureMap, q: u32, mlp: &QaMlp) -> Result<FeatureMap> {
    if !QUANT_SET.contains(&q) {
        return Err(Error::InvalidInput(format!(
            "quantization parameter {q} not in {QUANT_SET:?}"
        )));
    }
    if mlp.out != f.channels {
        return Err(Error::Dimension(format!(
            "scale vector has {} entries, map has {} channels",
            mlp.out, f.channels
        )));
    }
    let lo = QUANT_SET[0] as f64;
    let hi = *QUANT_SET.last().unwrap() as f64;
    let v = mlp.scale_vector((q as f64 - lo) / (hi - lo));
    Ok(FeatureMap::from_fn(
        f.height,
        f.width,
        f.channels,
        |i, j, c| f.at(i, j, c) * v[c],
    ))
}

/// All weights of the two-branch preprocessing filter.
///
/// Upper branch: 1x1 conv -> QA scale -> 1x1 conv. Lower branch: 3x3 conv ->
/// deformable 3x3 conv -> strip pool/fuse -> 1x1 conv. Branch outputs are
/// added and clamped to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PpenWeights {
    pub upper_in: ConvKernel,
    pub qa: QaMlp,
    pub upper_out: ConvKernel,
    pub lower_in: ConvKernel,
    pub deform: ConvKernel,
    pub offsets: OffsetField,
    pub lower_out: ConvKernel,
}

impl PpenWeights {
    /// Random but reproducible weights sized for `h x w` RGB inputs; used by
    /// tests and the demo path.
    pub fn seeded(rng: &mut SeededRng, height: usize, width: usize, cu: usize, cl: usize) -> Self {
        fn draw(rng: &mut SeededRng, n: usize, scale: f64) -> Vec<f64> {
            (0..n).map(|_| (rng.next_f64() * 2.0 - 1.0) * scale).collect()
        }
        let upper_in = ConvKernel::new(cu, 3, 1, 1, draw(rng, cu * 3, 0.5)).unwrap();
        let qa = QaMlp::new(
            4,
            cu,
            draw(rng, 4, 1.0),
            draw(rng, 4, 0.5),
            draw(rng, cu * 4, 0.5),
            vec![1.0; cu],
        )
        .unwrap();
        let upper_out = ConvKernel::new(3, cu, 1, 1, draw(rng, 3 * cu, 0.5)).unwrap();
        let lower_in = ConvKernel::new(cl, 3, 3, 3, draw(rng, cl * 3 * 9, 0.2)).unwrap();
        let deform = ConvKernel::new(cl, cl, 3, 3, draw(rng, cl * cl * 9, 0.2)).unwrap();
        let offsets = OffsetField::from_fn(height, width, 9, |_, _, _| {
            (rng.next_f64() - 0.5, rng.next_f64() - 0.5)
        });
        let lower_out = ConvKernel::new(3, cl, 1, 1, draw(rng, 3 * cl, 0.5)).unwrap();
        PpenWeights {
            upper_in,
            qa,
            upper_out,
            lower_in,
            deform,
            offsets,
            lower_out,
        }
    }
}

/// Two-branch preprocessing filter over an RGB map; output has the input
/// shape with values clamped to [0, 1].
pub fn ppen_forward(x_o: &FeatureMap, weights: &PpenWeights, q: u32) -> Result<FeatureMap> {
    if x_o.channels != 3 {
        return Err(Error::Dimension(format!(
            "expected an RGB map, got {} channels",
            x_o.channels
        )));
    }
    // upper branch: pixel-level transform, quantization-adaptive
    let u = conv2d(x_o, &weights.upper_in)?;
    let u = qa_scale(&u, q, &weights.qa)?;
    let u = conv2d(&u, &weights.upper_out)?;
    // lower branch: local then deformable features, global strip context
    let l = conv2d(x_o, &weights.lower_in)?;
    let l = deformable_conv2d(&l, &weights.deform, &weights.offsets)?;
    let (rm, cm) = strip_pool(&l);
    let l = strip_fuse(&l, &rm, &cm)?;
    let l = conv2d(&l, &weights.lower_out)?;
    Ok(FeatureMap::from_fn(x_o.height, x_o.width, 3, |i, j, c| {
        (u.at(i, j, c) + l.at(i, j, c)).clamp(0.0, 1.0)
    }))
}
