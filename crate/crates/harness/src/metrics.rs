//! Rate and quality metrics: channel bandwidth ratio, PSNR, and the
//! Bjontegaard delta pair over rate-quality curves.

use crate::core::Error as CoreError;
use crate::report::{PsnrValue, RatePoint};
use crate::{HarnessError, Result};

/// 8-bit RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// RGB interleaved, row-major, `3 * width * height` bytes.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(HarnessError::Format(format!(
                "{}x{} RGB image needs {} bytes, got {}",
                width,
                height,
                3 * width * height,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Channel uses per source symbol: `k_total / (3 h w)`. The inputs stay
/// integers; the division is the only floating step.
pub fn compute_cbr(k_total: u64, h: u64, w: u64) -> Result<f64> {
    if h == 0 || w == 0 {
        return Err(HarnessError::Core(CoreError::InvalidInput(
            "image dimensions must be positive".into(),
        )));
    }
    Ok(k_total as f64 / (3 * h * w) as f64)
}

/// Peak signal-to-noise ratio between 8-bit images of equal size;
/// identical inputs report the lossless sentinel.
pub fn compute_psnr(a: &Image, b: &Image) -> Result<PsnrValue> {
    if a.width != b.width || a.height != b.height {
        return Err(HarnessError::Core(CoreError::Dimension(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        ))));
    }
    let sum_sq: u64 = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    if sum_sq == 0 {
        return Ok(PsnrValue::Lossless);
    }
    let mse = sum_sq as f64 / a.data.len() as f64;
    Ok(PsnrValue::Db(10.0 * (255.0 * 255.0 / mse).log10()))
}

/// Monotone piecewise-cubic interpolant (Fritsch-Carlson slopes) with an
/// analytic segment integral.
struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 2);
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                d[i] = 0.0;
            } else {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        d[0] = edge_slope(h[0], h.get(1).copied().unwrap_or(h[0]), delta[0], delta.get(1).copied().unwrap_or(delta[0]));
        let m = n - 1;
        d[m] = edge_slope(
            h[m - 1],
            if m >= 2 { h[m - 2] } else { h[m - 1] },
            delta[m - 1],
            if m >= 2 { delta[m - 2] } else { delta[m - 1] },
        );
        Pchip { x, y, d }
    }

    /// Integral over `[a, b]`, which must lie inside the knot range.
    fn integrate(&self, a: f64, b: f64) -> f64 {
        debug_assert!(a <= b);
        let mut acc = 0.0;
        for i in 0..self.x.len() - 1 {
            let (x0, x1) = (self.x[i], self.x[i + 1]);
            let lo = a.max(x0);
            let hi = b.min(x1);
            if lo >= hi {
                continue;
            }
            let h = x1 - x0;
            let t0 = (lo - x0) / h;
            let t1 = (hi - x0) / h;
            acc += h
                * (self.y[i] * (int_h00(t1) - int_h00(t0))
                    + h * self.d[i] * (int_h10(t1) - int_h10(t0))
                    + self.y[i + 1] * (int_h01(t1) - int_h01(t0))
                    + h * self.d[i + 1] * (int_h11(t1) - int_h11(t0)));
        }
        acc
    }
}

/// Three-point end slope with the usual shape-preserving clamps.
fn edge_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if s * d0 <= 0.0 {
        0.0
    } else if d0 * d1 < 0.0 && s.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        s
    }
}

// Antiderivatives of the cubic Hermite basis on [0, 1].
fn int_h00(t: f64) -> f64 {
    0.5 * t.powi(4) - t.powi(3) + t
}
fn int_h10(t: f64) -> f64 {
    0.25 * t.powi(4) - (2.0 / 3.0) * t.powi(3) + 0.5 * t * t
}
fn int_h01(t: f64) -> f64 {
    -0.5 * t.powi(4) + t.powi(3)
}
fn int_h11(t: f64) -> f64 {
    0.25 * t.powi(4) - t.powi(3) / 3.0
}

fn validate_curve(curve: &[RatePoint]) -> Result<Vec<RatePoint>> {
    if curve.len() < 4 {
        return Err(HarnessError::Format(format!(
            "need at least 4 rate-quality points, got {}",
            curve.len()
        )));
    }
    if curve.iter().any(|p| p.rate <= 0.0 || !p.rate.is_finite() || !p.quality.is_finite()) {
        return Err(HarnessError::Format("rates must be positive and finite".into()));
    }
    let mut sorted = curve.to_vec();
    sorted.sort_by(|a, b| a.quality.partial_cmp(&b.quality).unwrap());
    for w in sorted.windows(2) {
        if w[0].quality == w[1].quality {
            return Err(HarnessError::Format("duplicate quality values".into()));
        }
    }
    for w in sorted.windows(2) {
        if w[1].rate <= w[0].rate {
            return Err(HarnessError::Format(
                "quality must be monotone in rate".into(),
            ));
        }
    }
    Ok(sorted)
}

/// Bjontegaard deltas between two rate-quality curves: the average rate
/// change of `b` against `a` at equal quality (percent, negative is a
/// saving), and the average quality change at equal rate (same units as the
/// quality axis). Integration uses piecewise-cubic fits in log-rate over the
/// overlapping ranges only.
pub fn bd_metric(curve_a: &[RatePoint], curve_b: &[RatePoint]) -> Result<(f64, f64)> {
    let a = validate_curve(curve_a)?;
    let b = validate_curve(curve_b)?;

    // rate delta over the shared quality interval
    let q_lo = a[0].quality.max(b[0].quality);
    let q_hi = a.last().unwrap().quality.min(b.last().unwrap().quality);
    if q_lo >= q_hi {
        return Err(HarnessError::NoOverlap(format!(
            "quality ranges do not overlap: [{}, {}] vs [{}, {}]",
            a[0].quality,
            a.last().unwrap().quality,
            b[0].quality,
            b.last().unwrap().quality
        )));
    }
    let log_rate = |c: &[RatePoint]| -> Pchip {
        Pchip::new(
            c.iter().map(|p| p.quality).collect(),
            c.iter().map(|p| p.rate.log10()).collect(),
        )
    };
    let avg_log_diff =
        (log_rate(&b).integrate(q_lo, q_hi) - log_rate(&a).integrate(q_lo, q_hi)) / (q_hi - q_lo);
    let bd_rate_percent = (10f64.powf(avg_log_diff) - 1.0) * 100.0;

    // quality delta over the shared log-rate interval
    let r_lo = a[0].rate.log10().max(b[0].rate.log10());
    let r_hi = a
        .last()
        .unwrap()
        .rate
        .log10()
        .min(b.last().unwrap().rate.log10());
    if r_lo >= r_hi {
        return Err(HarnessError::NoOverlap("rate ranges do not overlap".into()));
    }
    let quality_of = |c: &[RatePoint]| -> Pchip {
        Pchip::new(
            c.iter().map(|p| p.rate.log10()).collect(),
            c.iter().map(|p| p.quality).collect(),
        )
    };
    let bd_quality =
        (quality_of(&b).integrate(r_lo, r_hi) - quality_of(&a).integrate(r_lo, r_hi)) / (r_hi - r_lo);

    Ok((bd_rate_percent, bd_quality))
}
