//! Differentiable surrogate of a non-differentiable processing pipeline, and
//! the gradient-through-surrogate training of an upstream preprocessor.
//!
//! The reference pipeline (quantize -> code -> modulate -> fixed channel ->
//! detect -> decode -> dequantize) is deterministic and piecewise constant,
//! so its true gradients vanish almost everywhere. A small perceptron is
//! fitted to mimic it; afterwards the real pipeline supplies loss values
//! while the surrogate supplies gradients for the preprocessor update.
//! The reference pipeline here has a fixed rate, so there is no rate-gradient
//! path to exercise; that term is identically zero.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // required when std is absent from the crate graph
use num_traits::Float;

use crate::chancode::{build_ldpc, Code, LdpcRate};
use crate::channel::snr_to_noise_var;
use crate::config::ModScheme;
use crate::detection::zf_filter;
use crate::modem::{demodulate_llr, make_constellation, modulate, Constellation};
use crate::numerics::{sample_cgauss, CMatrix};
use crate::precoder::{streams_to_symbols, symbols_to_streams};
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Two-hidden-layer perceptron with tanh activations and a linear skip path
/// (the skip makes the identity map exactly representable).
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub d_in: usize,
    pub d_out: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
    pub skip: Vec<f64>,
}

impl Surrogate {
    /// Random initialization, hidden width `4 * d_in`.
    pub fn seeded(d_in: usize, d_out: usize, rng: &mut SeededRng) -> Self {
        let hidden = 4 * d_in.max(1);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let s = (1.0 / fan_in as f64).sqrt();
            (0..n).map(|_| (rng.next_f64() * 2.0 - 1.0) * s).collect()
        };
        Surrogate {
            d_in,
            d_out,
            hidden,
            w1: draw(hidden * d_in, d_in),
            b1: vec![0.0; hidden],
            w2: draw(hidden * hidden, hidden),
            b2: vec![0.0; hidden],
            w3: draw(d_out * hidden, hidden),
            b3: vec![0.0; d_out],
            skip: draw(d_out * d_in, d_in),
        }
    }

    /// All nonlinear weights zero, skip = identity: the exact identity map.
    pub fn identity_init(d: usize) -> Self {
        let mut skip = vec![0.0; d * d];
        for i in 0..d {
            skip[i * d + i] = 1.0;
        }
        Surrogate {
            d_in: d,
            d_out: d,
            hidden: 4 * d,
            w1: vec![0.0; 4 * d * d],
            b1: vec![0.0; 4 * d],
            w2: vec![0.0; 16 * d * d],
            b2: vec![0.0; 4 * d],
            w3: vec![0.0; d * 4 * d],
            b3: vec![0.0; d],
            skip,
        }
    }

    fn affine(w: &[f64], b: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        (0..rows)
            .map(|r| b[r] + (0..cols).map(|c| w[r * cols + c] * x[c]).sum::<f64>())
            .collect()
    }

    /// Forward pass keeping the activations (for backprop).
    fn forward_trace(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut a1 = Self::affine(&self.w1, &self.b1, v, self.hidden, self.d_in);
        for x in a1.iter_mut() {
            *x = x.tanh();
        }
        let mut a2 = Self::affine(&self.w2, &self.b2, &a1, self.hidden, self.hidden);
        for x in a2.iter_mut() {
            *x = x.tanh();
        }
        let mut out = Self::affine(&self.w3, &self.b3, &a2, self.d_out, self.hidden);
        for (r, o) in out.iter_mut().enumerate() {
            *o += (0..self.d_in).map(|c| self.skip[r * self.d_in + c] * v[c]).sum::<f64>();
        }
        (a1, a2, out)
    }

    pub fn forward(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.d_in {
            return Err(Error::Dimension(format!(
                "surrogate expects {} inputs, got {}",
                self.d_in,
                v.len()
            )));
        }
        Ok(self.forward_trace(v).2)
    }

    /// `J(v)^T g`: pull an output cotangent back to the input.
    pub fn input_grad(&self, v: &[f64], g_out: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.d_in || g_out.len() != self.d_out {
            return Err(Error::Dimension("input_grad shape mismatch".into()));
        }
        let (a1, a2, _) = self.forward_trace(v);
        // back through w3
        let mut g2 = vec![0.0; self.hidden];
        for r in 0..self.d_out {
            for c in 0..self.hidden {
                g2[c] += self.w3[r * self.hidden + c] * g_out[r];
            }
        }
        for (g, a) in g2.iter_mut().zip(a2.iter()) {
            *g *= 1.0 - a * a;
        }
        let mut g1 = vec![0.0; self.hidden];
        for r in 0..self.hidden {
            for c in 0..self.hidden {
                g1[c] += self.w2[r * self.hidden + c] * g2[r];
            }
        }
        for (g, a) in g1.iter_mut().zip(a1.iter()) {
            *g *= 1.0 - a * a;
        }
        let mut gv = vec![0.0; self.d_in];
        for r in 0..self.hidden {
            for c in 0..self.d_in {
                gv[c] += self.w1[r * self.d_in + c] * g1[r];
            }
        }
        for r in 0..self.d_out {
            for c in 0..self.d_in {
                gv[c] += self.skip[r * self.d_in + c] * g_out[r];
            }
        }
        Ok(gv)
    }

    /// One SGD step on `||target - s(v)||^2 / d_out`; returns that loss.
    fn sgd_step(&mut self, v: &[f64], target: &[f64], lr: f64) -> f64 {
        let (a1, a2, out) = self.forward_trace(v);
        let scale = 2.0 / self.d_out as f64;
        let g_out: Vec<f64> = out
            .iter()
            .zip(target.iter())
            .map(|(o, t)| scale * (o - t))
            .collect();
        let loss = out
            .iter()
            .zip(target.iter())
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>()
            / self.d_out as f64;

        // output layer + skip
        let mut g2 = vec![0.0; self.hidden];
        for r in 0..self.d_out {
            for c in 0..self.hidden {
                g2[c] += self.w3[r * self.hidden + c] * g_out[r];
                self.w3[r * self.hidden + c] -= lr * g_out[r] * a2[c];
            }
            self.b3[r] -= lr * g_out[r];
            for c in 0..self.d_in {
                self.skip[r * self.d_in + c] -= lr * g_out[r] * v[c];
            }
        }
        for (g, a) in g2.iter_mut().zip(a2.iter()) {
            *g *= 1.0 - a * a;
        }
        let mut g1 = vec![0.0; self.hidden];
        for r in 0..self.hidden {
            for c in 0..self.hidden {
                g1[c] += self.w2[r * self.hidden + c] * g2[r];
                self.w2[r * self.hidden + c] -= lr * g2[r] * a1[c];
            }
            self.b2[r] -= lr * g2[r];
        }
        for (g, a) in g1.iter_mut().zip(a1.iter()) {
            *g *= 1.0 - a * a;
        }
        for r in 0..self.hidden {
            for c in 0..self.d_in {
                self.w1[r * self.d_in + c] -= lr * g1[r] * v[c];
            }
            self.b1[r] -= lr * g1[r];
        }
        loss
    }
}

/// Output of one reference-pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub reconstruction: Vec<f64>,
    /// Mean squared soft-symbol error inside the run (zero for the identity
    /// pipeline).
    pub symbol_mse: f64,
}

/// Deterministic reference map over small real vectors. The digital variant
/// quantizes, codes, modulates, crosses a fixed 2x2 channel with a frozen
/// noise pattern, detects, decodes, and dequantizes.
#[derive(Debug, Clone)]
pub enum ToyPipeline {
    Identity {
        dim: usize,
    },
    Digital(Box<DigitalPipeline>),
}

#[derive(Debug, Clone)]
pub struct DigitalPipeline {
    dim: usize,
    quant_bits: usize,
    code: Code,
    constellation: Constellation,
    h: CMatrix,
    noise: CMatrix,
    noise_var: f64,
    decoder_iters: usize,
}

impl ToyPipeline {
    pub fn identity(dim: usize) -> Self {
        ToyPipeline::Identity { dim }
    }

    /// Digital pipeline with a rate-1/2 length-128 code, QPSK, and a frozen
    /// 2x2 channel + noise pattern drawn from `seed`.
    pub fn digital(dim: usize, quant_bits: usize, snr_db: f64, seed: u64) -> Result<Self> {
        if dim == 0 || quant_bits == 0 {
            return Err(Error::InvalidInput("dim and quant_bits must be >= 1".into()));
        }
        let code = Code::Ldpc(build_ldpc(LdpcRate::Half, 128, seed)?);
        if dim * quant_bits > code.k_info() {
            return Err(Error::InvalidInput(format!(
                "dim * quant_bits = {} exceeds the {} info bits available",
                dim * quant_bits,
                code.k_info()
            )));
        }
        let constellation = make_constellation(ModScheme::Qpsk);
        let uses = code.n() / constellation.bits_per_symbol() / 2;
        let base = SeededRng::new(seed);
        let h = sample_cgauss(&mut base.derive(1), 2, 2, 1.0)?;
        let noise_var = snr_to_noise_var(snr_db, 1.0)?;
        let noise = sample_cgauss(&mut base.derive(2), 2, uses, noise_var)?;
        Ok(ToyPipeline::Digital(Box::new(DigitalPipeline {
            dim,
            quant_bits,
            code,
            constellation,
            h,
            noise,
            noise_var,
            decoder_iters: 30,
        })))
    }

    pub fn dim(&self) -> usize {
        match self {
            ToyPipeline::Identity { dim } => *dim,
            ToyPipeline::Digital(p) => p.dim,
        }
    }

    /// Uniform quantizer step width of the digital variant (unit range).
    pub fn quant_step(&self) -> Option<f64> {
        match self {
            ToyPipeline::Identity { .. } => None,
            ToyPipeline::Digital(p) => Some(1.0 / ((1usize << p.quant_bits) - 1) as f64),
        }
    }

    pub fn run(&self, v: &[f64]) -> Result<PipelineOutput> {
        match self {
            ToyPipeline::Identity { dim } => {
                if v.len() != *dim {
                    return Err(Error::Dimension("pipeline input length mismatch".into()));
                }
                Ok(PipelineOutput {
                    reconstruction: v.to_vec(),
                    symbol_mse: 0.0,
                })
            }
            ToyPipeline::Digital(p) => p.run(v),
        }
    }
}

impl DigitalPipeline {
    fn run(&self, v: &[f64]) -> Result<PipelineOutput> {
        if v.len() != self.dim {
            return Err(Error::Dimension(format!(
                "pipeline expects {} values, got {}",
                self.dim,
                v.len()
            )));
        }
        let levels = (1usize << self.quant_bits) - 1;
        let mut bits = Vec::with_capacity(self.code.k_info());
        for &x in v {
            let idx = (x.clamp(0.0, 1.0) * levels as f64).round() as usize;
            for b in (0..self.quant_bits).rev() {
                bits.push(((idx >> b) & 1) as u8);
            }
        }
        bits.resize(self.code.k_info(), 0);
        let cw = self.code.encode(&bits)?;
        let syms = modulate(&cw, &self.constellation)?;
        let x = symbols_to_streams(&syms, 2)?;
        let y = self.h.mul(&x).add(&self.noise);
        let filter = zf_filter(&self.h)?;
        let soft = filter.mul(&y);
        let symbol_mse = soft.sub(&x).norm_sqr() / (x.rows() * x.cols()) as f64;
        // per-stream post-filter noise variance for the soft bits
        let mut llrs = Vec::with_capacity(cw.len());
        let soft_syms = streams_to_symbols(&soft);
        for (i, s) in soft_syms.iter().enumerate() {
            let stream = i % 2;
            let nv: f64 = (0..filter.cols())
                .map(|j| filter[(stream, j)].norm_sqr())
                .sum::<f64>()
                * self.noise_var;
            llrs.extend(demodulate_llr(&[*s], &self.constellation, nv.max(1e-12))?);
        }
        let (info, _) = self.code.decode(&llrs, self.decoder_iters)?;
        let mut rec = Vec::with_capacity(self.dim);
        for d in 0..self.dim {
            let mut idx = 0usize;
            for b in 0..self.quant_bits {
                idx = (idx << 1) | info[d * self.quant_bits + b] as usize;
            }
            rec.push(idx as f64 / levels as f64);
        }
        Ok(PipelineOutput {
            reconstruction: rec,
            symbol_mse,
        })
    }
}

/// Weights of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 0.1,
            l2: 0.5,
            l3: 0.1,
        }
    }
}

/// `l1 * l_pcen + l2 * l_task + l3 * l_pre`, all terms nonnegative.
pub fn composite_loss(l_pcen: f64, l_task: f64, l_pre: f64, w: LossWeights) -> Result<f64> {
    for (name, v) in [("l_pcen", l_pcen), ("l_task", l_task), ("l_pre", l_pre)] {
        if v < 0.0 || !v.is_finite() {
            return Err(Error::InvalidInput(format!("{name} must be >= 0, got {v}")));
        }
    }
    Ok(w.l1 * l_pcen + w.l2 * l_task + w.l3 * l_pre)
}

#[derive(Debug, Clone)]
pub struct ProxyTrainOptions {
    pub epochs: usize,
    /// Polynomial schedule: `lr_n = base_lr * (1 - n / epochs)^poly_power`.
    pub base_lr: f64,
    pub poly_power: f64,
    pub batch_size: usize,
    /// Fraction of the dataset held out for the generalization check.
    pub holdout_fraction: f64,
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for ProxyTrainOptions {
    fn default() -> Self {
        ProxyTrainOptions {
            epochs: 6000,
            base_lr: 5e-4,
            poly_power: 0.9,
            batch_size: 8,
            holdout_fraction: 0.25,
            shuffle: true,
            seed: 0xf17,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProxyTrainReport {
    pub initial_holdout_loss: f64,
    pub final_holdout_loss: f64,
    pub final_train_loss: f64,
}

fn mean_loss(s: &Surrogate, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    for (v, t) in inputs.iter().zip(targets.iter()) {
        let out = s.forward(v).expect("dimensions checked at entry");
        acc += out
            .iter()
            .zip(t.iter())
            .map(|(o, x)| (o - x) * (o - x))
            .sum::<f64>()
            / s.d_out as f64;
    }
    acc / inputs.len().max(1) as f64
}

/// Fit a surrogate to the pipeline by SGD with the polynomial learning-rate
/// schedule. The tail of `dataset` (per `holdout_fraction`) is never trained
/// on and is what the report's holdout numbers refer to.
pub fn train_surrogate(
    pipeline: &ToyPipeline,
    dataset: &[Vec<f64>],
    opts: &ProxyTrainOptions,
) -> Result<(Surrogate, ProxyTrainReport)> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let dim = pipeline.dim();
    if dataset.iter().any(|v| v.len() != dim) {
        return Err(Error::Dimension("dataset entry with wrong length".into()));
    }
    let n_hold = ((dataset.len() as f64 * opts.holdout_fraction) as usize)
        .clamp(1, dataset.len() - 1);
    let n_train = dataset.len() - n_hold;
    let targets: Vec<Vec<f64>> = dataset
        .iter()
        .map(|v| pipeline.run(v).map(|o| o.reconstruction))
        .collect::<Result<_>>()?;

    let mut rng = SeededRng::new(opts.seed);
    let mut surrogate = Surrogate::seeded(dim, dim, &mut rng);
    let initial_holdout_loss = mean_loss(&surrogate, &dataset[n_train..], &targets[n_train..]);

    let mut order: Vec<usize> = (0..n_train).collect();
    for epoch in 0..opts.epochs {
        let lr = opts.base_lr * (1.0 - epoch as f64 / opts.epochs as f64).powf(opts.poly_power);
        if opts.shuffle {
            rng.shuffle(&mut order);
        }
        for chunk in order.chunks(opts.batch_size.max(1)) {
            for &i in chunk {
                surrogate.sgd_step(&dataset[i], &targets[i], lr);
            }
        }
    }
    let report = ProxyTrainReport {
        initial_holdout_loss,
        final_holdout_loss: mean_loss(&surrogate, &dataset[n_train..], &targets[n_train..]),
        final_train_loss: mean_loss(&surrogate, &dataset[..n_train], &targets[..n_train]),
    };
    Ok((surrogate, report))
}

/// Trainable linear preprocessor `v' = A v + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPreprocessor {
    pub dim: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearPreprocessor {
    /// Shrunk, slightly perturbed identity; far enough from the optimum that
    /// training has something to do.
    pub fn init(dim: usize, rng: &mut SeededRng) -> Self {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                a[i * dim + j] = if i == j { 0.4 } else { 0.0 } + 0.05 * (rng.next_f64() - 0.5);
            }
        }
        LinearPreprocessor {
            dim,
            a,
            b: vec![0.0; dim],
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                self.b[i]
                    + (0..self.dim)
                        .map(|j| self.a[i * self.dim + j] * v[j])
                        .sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct E2eTrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub poly_power: f64,
    /// Per-coordinate task emphasis; length must match the data dimension.
    pub task_weights: Vec<f64>,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl E2eTrainOptions {
    pub fn for_dim(dim: usize) -> Self {
        let mut task_weights = vec![0.5; dim];
        for w in task_weights.iter_mut().take(4.min(dim)) {
            *w = 4.0;
        }
        E2eTrainOptions {
            epochs: 60,
            lr: 0.02,
            poly_power: 0.9,
            task_weights,
            loss_weights: LossWeights::default(),
            seed: 0xe2e,
        }
    }
}

#[derive(Debug, Clone)]
pub struct E2eTrainReport {
    pub initial_composite: f64,
    pub final_composite: f64,
    pub epochs: usize,
}

/// Composite (real-pipeline) loss of a preprocessor over a dataset.
pub fn composite_over(
    prep: &LinearPreprocessor,
    pipeline: &ToyPipeline,
    dataset: &[Vec<f64>],
    opts: &E2eTrainOptions,
) -> Result<f64> {
    let wsum: f64 = opts.task_weights.iter().sum();
    let mut acc = 0.0;
    for v in dataset {
        let out = pipeline.run(&prep.apply(v))?;
        let l_task = out
            .reconstruction
            .iter()
            .zip(v.iter())
            .zip(opts.task_weights.iter())
            .map(|((r, x), w)| w * (r - x) * (r - x))
            .sum::<f64>()
            / wsum;
        let l_pre = out
            .reconstruction
            .iter()
            .zip(v.iter())
            .map(|(r, x)| (r - x) * (r - x))
            .sum::<f64>()
            / v.len() as f64;
        acc += composite_loss(out.symbol_mse, l_task, l_pre, opts.loss_weights)?;
    }
    Ok(acc / dataset.len() as f64)
}

/// Train the preprocessor by scheduled SGD: the loss is always evaluated on
/// the real pipeline; gradients reach the preprocessor through the
/// surrogate. The pipeline itself is never updated. Loss reduction holds
/// under this op's precondition (a surrogate actually fitted to the
/// pipeline); a mismatched surrogate sends the updates in arbitrary
/// directions, which is what the negative control demonstrates.
pub fn toy_end_to_end_train(
    prep_dim: usize,
    pipeline: &ToyPipeline,
    surrogate: &Surrogate,
    dataset: &[Vec<f64>],
    opts: &E2eTrainOptions,
) -> Result<(LinearPreprocessor, E2eTrainReport)> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    if prep_dim != pipeline.dim() || surrogate.d_in != prep_dim || surrogate.d_out != prep_dim {
        return Err(Error::Dimension(
            "preprocessor, pipeline, and surrogate dimensions must agree".into(),
        ));
    }
    if opts.task_weights.len() != prep_dim {
        return Err(Error::Dimension("task weight length mismatch".into()));
    }
    let mut rng = SeededRng::new(opts.seed);
    let mut prep = LinearPreprocessor::init(prep_dim, &mut rng);
    let initial_composite = composite_over(&prep, pipeline, dataset, opts)?;
    let wsum: f64 = opts.task_weights.iter().sum();
    let lw = opts.loss_weights;

    for epoch in 0..opts.epochs {
        let sched = opts.lr * (1.0 - epoch as f64 / opts.epochs as f64).powf(opts.poly_power);
        for v in dataset {
            let vp = prep.apply(v);
            let out = pipeline.run(&vp)?;
            // cotangent of the composite loss at the REAL reconstruction
            let g_out: Vec<f64> = out
                .reconstruction
                .iter()
                .zip(v.iter())
                .zip(opts.task_weights.iter())
                .map(|((r, x), w)| {
                    lw.l2 * 2.0 * w * (r - x) / wsum + lw.l3 * 2.0 * (r - x) / v.len() as f64
                })
                .collect();
            let g_vp = surrogate.input_grad(&vp, &g_out)?;
            for i in 0..prep_dim {
                for j in 0..prep_dim {
                    prep.a[i * prep_dim + j] -= sched * g_vp[i] * v[j];
                }
                prep.b[i] -= sched * g_vp[i];
            }
        }
    }
    let final_composite = composite_over(&prep, pipeline, dataset, opts)?;
    Ok((
        prep,
        E2eTrainReport {
            initial_composite,
            final_composite,
            epochs: opts.epochs,
        },
    ))
}
