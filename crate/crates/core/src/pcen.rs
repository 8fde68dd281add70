//! Finite-alphabet precoder refinement and the learned linear combiner.
//!
//! The transmit-side refinement (an unfolded damped iterative projection)
//! replaces the continuous precoder output with a signal whose entries lie
//! in the modulation alphabet, chosen so that after the channel and the
//! linear combiner the receiver sees something close to the original
//! precoded block. Unfolding depth `T` is fixed; each round carries its own
//! step size `gamma[t]` and damping factor `alpha[t]`.
//!
//! One refinement round, given `W` and `M = U2 H`:
//!
//! ```text
//! r[t]   = zd[t] + gamma[t] * W * (x_p - M * zd[t])
//! z[t+1] = project_alphabet(r[t])
//! zd[t+1] = alpha[t] * zd[t] + (1 - alpha[t]) * z[t+1]
//! ```
//!
//! with `W = diag((U2 H)^H (U2 H))^{-1} (U2 H)^H` and `zd[0] = 0`. The
//! transmitted signal is the final projected iterate `z[T]`, which keeps the
//! per-entry power at exactly 1 for unit-power constellations.
//!
//! The combiner `U2` is the Wiener solution for the current transmit
//! statistics; `(gamma, alpha)` are fitted by derivative-free search (the
//! projection makes analytic gradients vanish almost everywhere), with an
//! optional straight-through gradient mode for comparison. Training
//! alternates the two updates and only ever accepts improvements, so the
//! reported loss is non-increasing.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // required when std is absent from the crate graph
use num_traits::Float;

use crate::channel::{snr_to_noise_var, ChannelRealization};
use crate::config::LinkConfig;
use crate::modem::{modulate, project, Constellation};
use crate::numerics::{CMatrix, C64};
use crate::precoder::{build_precoder, standard_precode};
use crate::rng::SeededRng;
use crate::{Error, Result};

/// Unfolding depth, per-round step sizes and damping factors, and the
/// linear combiner.
#[derive(Debug, Clone, PartialEq)]
pub struct PcenParams {
    pub t_iters: usize,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub u2: CMatrix,
}

impl PcenParams {
    /// Depth-T parameters at the canonical starting point: unit steps,
    /// damping 0.95, zero combiner (callers fit or deploy their own).
    pub fn init(t_iters: usize, n_t: usize, n_r: usize) -> Self {
        PcenParams {
            t_iters,
            gamma: vec![1.0; t_iters],
            alpha: vec![0.95; t_iters],
            u2: CMatrix::zeros(n_t, n_r),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_iters == 0 {
            return Err(Error::InvalidInput("unfolding depth must be >= 1".into()));
        }
        if self.gamma.len() != self.t_iters || self.alpha.len() != self.t_iters {
            return Err(Error::InvalidInput(format!(
                "need {} step sizes and damping factors, got {} and {}",
                self.t_iters,
                self.gamma.len(),
                self.alpha.len()
            )));
        }
        if self.gamma.iter().any(|&g| g <= 0.0 || !g.is_finite()) {
            return Err(Error::InvalidInput("step sizes must be positive".into()));
        }
        if self.alpha.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
            return Err(Error::InvalidInput("damping factors must lie in [0, 1]".into()));
        }
        if !self.u2.is_finite() {
            return Err(Error::InvalidInput("combiner has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Precoded blocks sharing one channel realization and noise level. When the
/// composite precoding matrix is known it rides along; the trainer uses it as
/// one of the combiner starting points.
#[derive(Debug, Clone)]
pub struct PcenBatch {
    pub x_p_samples: Vec<CMatrix>,
    pub channel: ChannelRealization,
    pub noise_var: f64,
    pub precoder: Option<CMatrix>,
}

/// `W = diag((U2 H)^H (U2 H))^{-1} (U2 H)^H`. The diagonal holds the squared
/// column norms of `U2 H`; a zero column means the corresponding transmit
/// dimension is unobservable and the refinement cannot run.
pub fn compute_w(u2: &CMatrix, h: &CMatrix) -> Result<CMatrix> {
    if u2.cols() != h.rows() {
        return Err(Error::Dimension(format!(
            "combiner is {}x{}, channel {}x{}",
            u2.rows(),
            u2.cols(),
            h.rows(),
            h.cols()
        )));
    }
    let m = u2.mul(h);
    if m.rows() != m.cols() {
        return Err(Error::Dimension(format!(
            "U2 H must be square, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    let mut w = m.hermitian();
    for i in 0..n {
        let d: f64 = (0..n).map(|r| m[(r, i)].norm_sqr()).sum();
        if d <= 1e-300 {
            return Err(Error::Singularity(format!(
                "column {i} of U2 H has zero energy"
            )));
        }
        let inv = 1.0 / d;
        for j in 0..n {
            w[(i, j)] *= inv;
        }
    }
    Ok(w)
}

/// Run the unfolded refinement and return the final alphabet-valued iterate.
pub fn pen_forward(
    x_p: &CMatrix,
    h: &CMatrix,
    params: &PcenParams,
    c: &Constellation,
) -> Result<CMatrix> {
    params.validate()?;
    let w = compute_w(&params.u2, h)?;
    let m = params.u2.mul(h);
    if x_p.rows() != m.cols() {
        return Err(Error::Dimension(format!(
            "precoded block has {} rows, channel expects {}",
            x_p.rows(),
            m.cols()
        )));
    }
    let mut zd = CMatrix::zeros(x_p.rows(), x_p.cols());
    let mut z = CMatrix::zeros(x_p.rows(), x_p.cols());
    for t in 0..params.t_iters {
        let residual = x_p.sub(&m.mul(&zd));
        let r = zd.add(&w.mul(&residual).scale(C64::new(params.gamma[t], 0.0)));
        z = CMatrix::from_fn(r.rows(), r.cols(), |i, j| project(r[(i, j)], c));
        let a = params.alpha[t];
        zd = zd.scale(C64::new(a, 0.0)).add(&z.scale(C64::new(1.0 - a, 0.0)));
    }
    Ok(z)
}

/// Receive-side combiner: `U2 y`.
pub fn cen_forward(y: &CMatrix, params: &PcenParams) -> Result<CMatrix> {
    if params.u2.cols() != y.rows() {
        return Err(Error::Dimension(format!(
            "combiner is {}x{}, received block {}x{}",
            params.u2.rows(),
            params.u2.cols(),
            y.rows(),
            y.cols()
        )));
    }
    Ok(params.u2.mul(y))
}

/// Wiener combiner from empirical second moments, per channel use:
/// `U2 = R_{x_p, Hz} (R_{Hz, Hz} + noise_var I)^{-1}`.
pub fn optimal_u2(
    z_samples: &[CMatrix],
    x_p_samples: &[CMatrix],
    h: &CMatrix,
    noise_var: f64,
) -> Result<CMatrix> {
    if z_samples.is_empty() || z_samples.len() != x_p_samples.len() {
        return Err(Error::InvalidInput(
            "need equally many (nonzero) z and x_p samples".into(),
        ));
    }
    let n_t = x_p_samples[0].rows();
    let n_r = h.rows();
    let mut r_xh = CMatrix::zeros(n_t, n_r);
    let mut r_hh = CMatrix::zeros(n_r, n_r);
    let mut uses = 0usize;
    for (z, x_p) in z_samples.iter().zip(x_p_samples.iter()) {
        let hz = h.mul(z);
        r_xh = r_xh.add(&x_p.mul(&hz.hermitian()));
        r_hh = r_hh.add(&hz.mul(&hz.hermitian()));
        uses += z.cols();
    }
    let scale = C64::new(1.0 / uses as f64, 0.0);
    r_xh = r_xh.scale(scale);
    r_hh = r_hh.scale(scale);
    for i in 0..n_r {
        r_hh[(i, i)] += C64::new(noise_var, 0.0);
    }
    Ok(r_xh.mul(&r_hh.inverse()?))
}

/// Per-entry loss with the noise expectation taken analytically:
/// `(||x_p - U2 H z||_F^2 + k sigma^2 ||U2||_F^2) / (N_t k)`.
fn loss_given_z(x_p: &CMatrix, z: &CMatrix, u2: &CMatrix, h: &CMatrix, noise_var: f64) -> f64 {
    let m = u2.mul(h);
    let misfit = x_p.sub(&m.mul(z)).norm_sqr();
    let k = x_p.cols() as f64;
    (misfit + k * noise_var * u2.norm_sqr()) / (x_p.rows() as f64 * k)
}

/// Empirical loss: one noise draw per sample,
/// `mean ||x_p - U2 (H z + n)||_F^2 / (N_t k)` with `z` the refined signal.
pub fn pcen_loss(
    batch: &PcenBatch,
    params: &PcenParams,
    c: &Constellation,
    rng: &mut SeededRng,
) -> Result<f64> {
    if batch.x_p_samples.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let h = &batch.channel.h;
    let mut acc = 0.0;
    for x_p in &batch.x_p_samples {
        let z = pen_forward(x_p, h, params, c)?;
        let mut y = h.mul(&z);
        if batch.noise_var > 0.0 {
            for v in y.data_mut().iter_mut() {
                *v += rng.next_cgauss(batch.noise_var);
            }
        }
        let xhat = params.u2.mul(&y);
        acc += x_p.sub(&xhat).norm_sqr() / (x_p.rows() * x_p.cols()) as f64;
    }
    Ok(acc / batch.x_p_samples.len() as f64)
}

/// Loss with the noise term in closed form; deterministic, used by training.
pub fn pcen_loss_expected(
    batch: &PcenBatch,
    params: &PcenParams,
    c: &Constellation,
) -> Result<f64> {
    if batch.x_p_samples.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let h = &batch.channel.h;
    let mut acc = 0.0;
    for x_p in &batch.x_p_samples {
        let z = pen_forward(x_p, h, params, c)?;
        acc += loss_given_z(x_p, &z, &params.u2, h, batch.noise_var);
    }
    Ok(acc / batch.x_p_samples.len() as f64)
}

/// Wiener combiner for the continuous bypass (`z = x_p`, the refinement
/// removed altogether). Diagnostic: a finite-alphabet front end cannot
/// transmit this signal, but the number is useful context.
pub fn identity_pen_combiner(batch: &PcenBatch) -> Result<CMatrix> {
    optimal_u2(
        &batch.x_p_samples,
        &batch.x_p_samples,
        &batch.channel.h,
        batch.noise_var,
    )
}

/// Expected loss of the continuous bypass (`z = x_p`) under combiner `u2`,
/// computed by the same closed-form path as the trained loss.
pub fn identity_pen_loss(batch: &PcenBatch, u2: &CMatrix) -> Result<f64> {
    if batch.x_p_samples.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let h = &batch.channel.h;
    let mut acc = 0.0;
    for x_p in &batch.x_p_samples {
        acc += loss_given_z(x_p, x_p, u2, h, batch.noise_var);
    }
    Ok(acc / batch.x_p_samples.len() as f64)
}

/// The refinement loop disabled: the transmit signal is the one-shot
/// alphabet projection of the precoded block. This is the baseline a trained
/// refinement has to beat, since alphabet-valued transmission is the
/// system's premise either way.
pub fn projection_pen_signal(x_p: &CMatrix, c: &Constellation) -> CMatrix {
    CMatrix::from_fn(x_p.rows(), x_p.cols(), |i, j| project(x_p[(i, j)], c))
}

/// Wiener combiner fit for the one-shot projection signal.
pub fn projection_pen_combiner(batch: &PcenBatch, c: &Constellation) -> Result<CMatrix> {
    let z: Vec<CMatrix> = batch
        .x_p_samples
        .iter()
        .map(|x_p| projection_pen_signal(x_p, c))
        .collect();
    optimal_u2(&z, &batch.x_p_samples, &batch.channel.h, batch.noise_var)
}

/// Expected loss of the one-shot projection under combiner `u2`.
pub fn projection_pen_loss(batch: &PcenBatch, u2: &CMatrix, c: &Constellation) -> Result<f64> {
    if batch.x_p_samples.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let h = &batch.channel.h;
    let mut acc = 0.0;
    for x_p in &batch.x_p_samples {
        let z = projection_pen_signal(x_p, c);
        acc += loss_given_z(x_p, &z, u2, h, batch.noise_var);
    }
    Ok(acc / batch.x_p_samples.len() as f64)
}

/// How the per-round step and damping parameters get fitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaUpdate {
    /// Per-coordinate golden-section refinement followed by
    /// simultaneous-perturbation steps; only improvements are kept.
    DerivativeFree,
    /// Straight-through gradient descent (the projection backpropagates as
    /// identity). Provided for comparison.
    StraightThrough { lr: f64, steps: usize },
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub t_iters: usize,
    /// Precoded blocks drawn per channel realization.
    pub samples_per_channel: usize,
    pub max_rounds: usize,
    /// Relative improvement below which a round counts as stalled.
    pub rel_tol: f64,
    /// Consecutive stalled rounds before stopping.
    pub patience: usize,
    pub golden_iters: usize,
    pub spsa_steps: usize,
    pub theta_update: ThetaUpdate,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            t_iters: 8,
            samples_per_channel: 4,
            max_rounds: 50,
            rel_tol: 1e-4,
            patience: 3,
            golden_iters: 16,
            spsa_steps: 30,
            theta_update: ThetaUpdate::DerivativeFree,
            seed: 0x9c0ffee,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean loss after each outer round; non-increasing by construction.
    pub loss_history: Vec<f64>,
    pub rounds: usize,
    pub converged: bool,
}

/// Trained parameters: `(gamma, alpha)` are shared across the ensemble,
/// the combiner is refit per channel realization (`per_channel_u2[j]`).
/// `params.u2` carries the first realization's combiner so the struct is
/// directly usable and serializable; deployment refits the combiner for
/// whatever channel it actually sees.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PcenParams,
    pub per_channel_u2: Vec<CMatrix>,
    pub report: TrainReport,
}

/// Draw per-realization batches of precoded blocks. Sample `i` of
/// realization `j` uses the derived stream `(seed, j, i)`, so batches are
/// reproducible independent of iteration order.
pub fn make_training_batches(
    ensemble: &[ChannelRealization],
    cfg: &LinkConfig,
    c: &Constellation,
    samples_per_channel: usize,
    seed: u64,
) -> Result<Vec<PcenBatch>> {
    if ensemble.is_empty() {
        return Err(Error::InvalidInput("empty channel ensemble".into()));
    }
    let noise_var = snr_to_noise_var(cfg.snr_db, cfg.p_z)?;
    let base = SeededRng::new(seed);
    let bps = c.bits_per_symbol();
    let mut batches = Vec::with_capacity(ensemble.len());
    for (j, ch) in ensemble.iter().enumerate() {
        let spec = build_precoder(&ch.h, cfg, noise_var)?;
        let rng_j = base.derive(j as u64);
        let mut samples = Vec::with_capacity(samples_per_channel);
        for i in 0..samples_per_channel {
            let mut rng = rng_j.derive(i as u64);
            let bits: Vec<u8> = (0..cfg.n_s * cfg.k * bps)
                .map(|_| (rng.next_u64() & 1) as u8)
                .collect();
            let x_e = modulate(&bits, c)?;
            samples.push(standard_precode(&x_e, &spec, cfg)?);
        }
        batches.push(PcenBatch {
            x_p_samples: samples,
            channel: ch.clone(),
            noise_var,
            precoder: Some(spec.matrix().clone()),
        });
    }
    Ok(batches)
}

/// Combiner starting points for one realization: the Wiener solution for the
/// un-refined signal and, when the precoder is known, the precoder pushed
/// through the channel pseudo-inverse (the combiner under which the
/// refinement target is the plain stream symbols).
fn combiner_inits(batch: &PcenBatch, c: &Constellation) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(3);
    if let Ok(u2) = identity_pen_combiner(batch) {
        out.push(u2);
    }
    if let Ok(u2) = projection_pen_combiner(batch, c) {
        out.push(u2);
    }
    if let Some(p) = &batch.precoder {
        let h = &batch.channel.h;
        let gram = h.hermitian().mul(h);
        if let Ok(inv) = gram.inverse() {
            let pinv = inv.mul(&h.hermitian());
            if p.rows() == p.cols() {
                out.push(p.mul(&pinv));
            } else {
                // Rectangular precoder: lift the streams back to antennas
                // through the precoder's own pseudo-inverse transpose.
                let pg = p.hermitian().mul(p);
                if let Ok(pg_inv) = pg.inverse() {
                    out.push(p.mul(&pg_inv).mul(&p.hermitian()).mul(&pinv));
                }
            }
        }
    }
    out
}

struct EnsembleLoss<'a> {
    batches: &'a [PcenBatch],
    c: &'a Constellation,
}

impl<'a> EnsembleLoss<'a> {
    fn mean(&self, gamma: &[f64], alpha: &[f64], u2s: &[CMatrix]) -> f64 {
        let mut acc = 0.0;
        for (batch, u2) in self.batches.iter().zip(u2s.iter()) {
            let params = PcenParams {
                t_iters: gamma.len(),
                gamma: gamma.to_vec(),
                alpha: alpha.to_vec(),
                u2: u2.clone(),
            };
            // Batches are validated up front; a refinement failure here means
            // the combiner collapsed, which the accept-only updates prevent.
            acc += pcen_loss_expected(batch, &params, self.c).unwrap_or(f64::INFINITY);
        }
        acc / self.batches.len() as f64
    }
}

const GAMMA_RANGE: (f64, f64) = (0.05, 3.0);
const ALPHA_RANGE: (f64, f64) = (0.0, 1.0);

/// Golden-section minimization of `f` on `[lo, hi]`; returns the best probe.
fn golden_section(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    let inv_phi = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Alternating trainer. Each outer round refits the per-realization Wiener
/// combiners against the current refinement outputs (keeping a refit only if
/// it helps end to end) and then improves the shared `(gamma, alpha)`.
pub fn train_pcen(
    ensemble: &[ChannelRealization],
    cfg: &LinkConfig,
    c: &Constellation,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let batches = make_training_batches(ensemble, cfg, c, opts.samples_per_channel, opts.seed)?;
    train_pcen_on_batches(&batches, c, opts)
}

/// [`train_pcen`] on caller-supplied batches.
pub fn train_pcen_on_batches(
    batches: &[PcenBatch],
    c: &Constellation,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if opts.t_iters == 0 {
        return Err(Error::InvalidInput("unfolding depth must be >= 1".into()));
    }
    if batches.is_empty() {
        return Err(Error::InvalidInput("empty batch list".into()));
    }
    let loss = EnsembleLoss { batches, c };

    let mut gamma = vec![1.0; opts.t_iters];
    let mut alpha = vec![0.95; opts.t_iters];
    // best starting combiner per realization
    let mut u2s: Vec<CMatrix> = Vec::with_capacity(batches.len());
    for batch in batches {
        let candidates = combiner_inits(batch, c);
        if candidates.is_empty() {
            return Err(Error::Singularity(
                "no viable combiner initialization for a realization".into(),
            ));
        }
        let mut best: Option<(f64, CMatrix)> = None;
        for u2 in candidates {
            let params = PcenParams {
                t_iters: opts.t_iters,
                gamma: gamma.clone(),
                alpha: alpha.clone(),
                u2: u2.clone(),
            };
            let Ok(l) = pcen_loss_expected(batch, &params, c) else { continue };
            if best.as_ref().is_none_or(|(b, _)| l < *b) {
                best = Some((l, u2));
            }
        }
        let Some((_, u2)) = best else {
            return Err(Error::Singularity(
                "every combiner initialization failed".into(),
            ));
        };
        u2s.push(u2);
    }

    let mut current = loss.mean(&gamma, &alpha, &u2s);
    let initial_loss = current;
    let mut loss_history = Vec::with_capacity(opts.max_rounds);
    let mut stalled = 0usize;
    let mut rounds = 0usize;
    let mut spsa_rng = SeededRng::new(opts.seed).derive(0xa17e);

    for round in 0..opts.max_rounds {
        rounds = round + 1;
        let before = current;

        // (a) combiner refit, accepted per realization only when it helps
        for (j, batch) in batches.iter().enumerate() {
            let params = PcenParams {
                t_iters: opts.t_iters,
                gamma: gamma.clone(),
                alpha: alpha.clone(),
                u2: u2s[j].clone(),
            };
            let z: Result<Vec<CMatrix>> = batch
                .x_p_samples
                .iter()
                .map(|x_p| pen_forward(x_p, &batch.channel.h, &params, c))
                .collect();
            let Ok(z) = z else { continue };
            let Ok(candidate) = optimal_u2(&z, &batch.x_p_samples, &batch.channel.h, batch.noise_var)
            else {
                continue;
            };
            let old_loss = pcen_loss_expected(batch, &params, c)?;
            let cand_params = PcenParams {
                u2: candidate.clone(),
                ..params
            };
            match pcen_loss_expected(batch, &cand_params, c) {
                Ok(new_loss) if new_loss <= old_loss => u2s[j] = candidate,
                _ => {}
            }
        }
        current = loss.mean(&gamma, &alpha, &u2s);

        // (b) shared step/damping update
        match opts.theta_update {
            ThetaUpdate::DerivativeFree => {
                for t in 0..opts.t_iters {
                    for which in 0..2 {
                        let (lo, hi) = if which == 0 { GAMMA_RANGE } else { ALPHA_RANGE };
                        let probe = |x: f64, gamma: &[f64], alpha: &[f64]| {
                            let mut g = gamma.to_vec();
                            let mut a = alpha.to_vec();
                            if which == 0 {
                                g[t] = x;
                            } else {
                                a[t] = x;
                            }
                            loss.mean(&g, &a, &u2s)
                        };
                        let (x, fx) =
                            golden_section(|x| probe(x, &gamma, &alpha), lo, hi, opts.golden_iters);
                        if fx < current {
                            if which == 0 {
                                gamma[t] = x;
                            } else {
                                alpha[t] = x;
                            }
                            current = fx;
                        }
                    }
                }
                // simultaneous-perturbation polish
                for step in 0..opts.spsa_steps {
                    let decay = 1.0 / (1.0 + step as f64).powf(0.4);
                    let mut delta = vec![0.0; 2 * opts.t_iters];
                    for d in delta.iter_mut() {
                        *d = if spsa_rng.next_u64() & 1 == 0 { 1.0 } else { -1.0 };
                    }
                    let scale_of = |i: usize| if i < opts.t_iters { 0.15 } else { 0.05 };
                    let perturbed = |sign: f64, gamma: &[f64], alpha: &[f64]| {
                        let mut g = gamma.to_vec();
                        let mut a = alpha.to_vec();
                        for i in 0..opts.t_iters {
                            g[i] = (g[i] + sign * delta[i] * scale_of(i) * decay)
                                .clamp(GAMMA_RANGE.0, GAMMA_RANGE.1);
                            a[i] = (a[i]
                                + sign * delta[opts.t_iters + i] * scale_of(opts.t_iters + i) * decay)
                                .clamp(ALPHA_RANGE.0, ALPHA_RANGE.1);
                        }
                        (g, a)
                    };
                    let (gp, ap) = perturbed(1.0, &gamma, &alpha);
                    let (gm, am) = perturbed(-1.0, &gamma, &alpha);
                    let fp = loss.mean(&gp, &ap, &u2s);
                    let fm = loss.mean(&gm, &am, &u2s);
                    let (cand_g, cand_a, cand_f) = if fp <= fm { (gp, ap, fp) } else { (gm, am, fm) };
                    if cand_f < current {
                        gamma = cand_g;
                        alpha = cand_a;
                        current = cand_f;
                    }
                }
            }
            ThetaUpdate::StraightThrough { lr, steps } => {
                for _ in 0..steps {
                    let (g_gamma, g_alpha) =
                        straight_through_grad(batches, c, &gamma, &alpha, &u2s);
                    let mut cand_g = gamma.clone();
                    let mut cand_a = alpha.clone();
                    for t in 0..opts.t_iters {
                        cand_g[t] = (cand_g[t] - lr * g_gamma[t]).clamp(GAMMA_RANGE.0, GAMMA_RANGE.1);
                        cand_a[t] = (cand_a[t] - lr * g_alpha[t]).clamp(ALPHA_RANGE.0, ALPHA_RANGE.1);
                    }
                    let f = loss.mean(&cand_g, &cand_a, &u2s);
                    if f < current {
                        gamma = cand_g;
                        alpha = cand_a;
                        current = f;
                    }
                }
            }
        }

        loss_history.push(current);
        let improvement = (before - current) / before.abs().max(1e-30);
        if improvement < opts.rel_tol {
            stalled += 1;
            if stalled >= opts.patience {
                break;
            }
        } else {
            stalled = 0;
        }
    }

    let converged = stalled >= opts.patience || current <= 1e-15;
    Ok(TrainOutcome {
        params: PcenParams {
            t_iters: opts.t_iters,
            gamma,
            alpha,
            u2: u2s[0].clone(),
        },
        per_channel_u2: u2s,
        report: TrainReport {
            initial_loss,
            final_loss: current,
            loss_history,
            rounds,
            converged,
        },
    })
}

/// Fit a combiner for one channel at deployment time, using the block about
/// to be transmitted as the sample: start from the candidate inits and run a
/// few accept-only alternation rounds, keeping whatever scores best.
pub fn deploy_combiner(
    x_p: &CMatrix,
    h: &CMatrix,
    template: &PcenParams,
    c: &Constellation,
    noise_var: f64,
    rounds: usize,
    precoder: Option<&CMatrix>,
) -> Result<CMatrix> {
    let samples = [x_p.clone()];
    let batch = PcenBatch {
        x_p_samples: vec![x_p.clone()],
        channel: ChannelRealization::perfect(h.clone()),
        noise_var,
        precoder: precoder.cloned(),
    };
    let mut overall: Option<(f64, CMatrix)> = None;
    for mut u2 in combiner_inits(&batch, c) {
        let score = |u: &CMatrix, z: &CMatrix| loss_given_z(x_p, z, u, h, noise_var);
        let eval = |u: &CMatrix| -> Result<(f64, CMatrix)> {
            let params = PcenParams {
                t_iters: template.t_iters,
                gamma: template.gamma.clone(),
                alpha: template.alpha.clone(),
                u2: u.clone(),
            };
            let z = pen_forward(x_p, h, &params, c)?;
            Ok((score(u, &z), z))
        };
        let Ok((mut best, mut z)) = eval(&u2) else { continue };
        for _ in 0..rounds {
            let Ok(candidate) = optimal_u2(&[z.clone()], &samples, h, noise_var) else {
                break;
            };
            match eval(&candidate) {
                Ok((l, znew)) if l <= best => {
                    best = l;
                    u2 = candidate;
                    z = znew;
                }
                _ => break,
            }
        }
        if overall.as_ref().is_none_or(|(b, _)| best < *b) {
            overall = Some((best, u2));
        }
    }
    overall
        .map(|(_, u2)| u2)
        .ok_or_else(|| Error::Singularity("no viable deployment combiner".into()))
}

/// Straight-through gradient of the expected loss with respect to the shared
/// `(gamma, alpha)`: the entrywise projection is treated as identity on the
/// backward pass. Averaged over all batches and samples.
fn straight_through_grad(
    batches: &[PcenBatch],
    c: &Constellation,
    gamma: &[f64],
    alpha: &[f64],
    u2s: &[CMatrix],
) -> (Vec<f64>, Vec<f64>) {
    let t_iters = gamma.len();
    let mut g_gamma = vec![0.0; t_iters];
    let mut g_alpha = vec![0.0; t_iters];
    let mut count = 0usize;

    // Frobenius inner product, real part of <a, b> = tr(a^H b).
    let inner_re = |a: &CMatrix, b: &CMatrix| -> f64 {
        a.data()
            .iter()
            .zip(b.data().iter())
            .map(|(x, y)| (x.conj() * y).re)
            .sum()
    };

    for (batch, u2) in batches.iter().zip(u2s.iter()) {
        let h = &batch.channel.h;
        let Ok(w) = compute_w(u2, h) else { continue };
        let m = u2.mul(h);
        let denom = |x_p: &CMatrix| (x_p.rows() * x_p.cols()) as f64;

        for x_p in &batch.x_p_samples {
            // forward, recording the damped state and the step inputs
            let mut zd = CMatrix::zeros(x_p.rows(), x_p.cols());
            let mut zd_hist = Vec::with_capacity(t_iters + 1);
            let mut z_hist = Vec::with_capacity(t_iters);
            let mut we_hist = Vec::with_capacity(t_iters);
            zd_hist.push(zd.clone());
            let mut z = CMatrix::zeros(x_p.rows(), x_p.cols());
            for t in 0..t_iters {
                let we = w.mul(&x_p.sub(&m.mul(&zd)));
                let r = zd.add(&we.scale(C64::new(gamma[t], 0.0)));
                z = CMatrix::from_fn(r.rows(), r.cols(), |i, j| project(r[(i, j)], c));
                zd = zd
                    .scale(C64::new(alpha[t], 0.0))
                    .add(&z.scale(C64::new(1.0 - alpha[t], 0.0)));
                we_hist.push(we);
                z_hist.push(z.clone());
                zd_hist.push(zd.clone());
            }

            // backward: conjugate cotangents, projection passed through
            let nf = denom(x_p);
            let z_bar = m
                .hermitian()
                .mul(&x_p.sub(&m.mul(&z)))
                .scale(C64::new(-1.0 / nf, 0.0));
            let mut zd_bar = CMatrix::zeros(x_p.rows(), x_p.cols());
            let wm = w.mul(&m);
            for t in (0..t_iters).rev() {
                // zd[t+1] = alpha zd[t] + (1 - alpha) z[t+1]
                g_alpha[t] += 2.0 * inner_re(&zd_bar, &zd_hist[t].sub(&z_hist[t]));
                let mut z_next_bar = zd_bar.scale(C64::new(1.0 - alpha[t], 0.0));
                if t == t_iters - 1 {
                    z_next_bar = z_next_bar.add(&z_bar);
                }
                let zd_partial = zd_bar.scale(C64::new(alpha[t], 0.0));
                // z[t+1] = project(r[t]) -> pass through
                let r_bar = z_next_bar;
                g_gamma[t] += 2.0 * inner_re(&r_bar, &we_hist[t]);
                // r[t] = zd[t] + gamma (W x_p - W M zd[t])
                zd_bar = zd_partial
                    .add(&r_bar)
                    .sub(&wm.hermitian().mul(&r_bar).scale(C64::new(gamma[t], 0.0)));
            }
            count += 1;
        }
    }
    if count > 0 {
        for g in g_gamma.iter_mut().chain(g_alpha.iter_mut()) {
            *g /= count as f64;
        }
    }
    (g_gamma, g_alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::snr_to_noise_var;
    use crate::config::ModScheme;
    use crate::modem::make_constellation;
    use crate::numerics::{frob_norm, sample_cgauss};

    fn qpsk() -> Constellation {
        make_constellation(ModScheme::Qpsk)
    }

    fn params_with_u2(t: usize, u2: CMatrix) -> PcenParams {
        PcenParams {
            t_iters: t,
            gamma: vec![1.0; t],
            alpha: vec![0.95; t],
            u2,
        }
    }

    fn alphabet_block(rng: &mut SeededRng, c: &Constellation, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            c.points()[rng.next_below(c.len())]
        })
    }

    #[test]
    fn w_is_identity_when_u2h_is_identity() {
        let w = compute_w(&CMatrix::identity(2), &CMatrix::identity(2)).unwrap();
        assert!(frob_norm(&w.sub(&CMatrix::identity(2))) < 1e-12);
    }

    #[test]
    fn w_matches_dense_oracle_on_diagonal() {
        // U2 H = diag(2, 1): diag((U2H)^H U2H) = diag(4, 1),
        // so W = diag(1/4, 1) * diag(2, 1) = diag(0.5, 1).
        let u2 = CMatrix::diag(2, 2, &[2.0, 1.0]);
        let w = compute_w(&u2, &CMatrix::identity(2)).unwrap();
        assert!(frob_norm(&w.sub(&CMatrix::diag(2, 2, &[0.5, 1.0]))) < 1e-12);
    }

    #[test]
    fn w_times_u2h_has_unit_diagonal() {
        let mut rng = SeededRng::new(1);
        for _ in 0..20 {
            let u2 = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
            let h = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
            let w = compute_w(&u2, &h).unwrap();
            let prod = w.mul(&u2.mul(&h));
            for i in 0..2 {
                assert!((prod[(i, i)] - C64::new(1.0, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn w_rejects_zero_column() {
        let u2 = CMatrix::diag(2, 2, &[1.0, 0.0]);
        assert!(matches!(
            compute_w(&u2, &CMatrix::identity(2)),
            Err(Error::Singularity(_))
        ));
    }

    #[test]
    fn pen_fixed_point_on_alphabet_input() {
        let c = qpsk();
        let mut rng = SeededRng::new(2);
        let x_p = alphabet_block(&mut rng, &c, 2, 6);
        let mut p = params_with_u2(1, CMatrix::identity(2));
        p.gamma = vec![1.0];
        let z = pen_forward(&x_p, &CMatrix::identity(2), &p, &c).unwrap();
        assert_eq!(z, x_p);
    }

    #[test]
    fn pen_single_step_is_projected_w_xp() {
        let c = qpsk();
        let mut rng = SeededRng::new(3);
        let u2 = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
        let h = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
        let x_p = sample_cgauss(&mut rng, 2, 5, 1.0).unwrap();
        let p = params_with_u2(1, u2.clone());
        let z = pen_forward(&x_p, &h, &p, &c).unwrap();
        let w = compute_w(&u2, &h).unwrap();
        let r = w.mul(&x_p);
        let want = CMatrix::from_fn(2, 5, |i, j| project(r[(i, j)], &c));
        assert_eq!(z, want);
    }

    #[test]
    fn full_damping_freezes_memory_state() {
        let c = qpsk();
        let mut rng = SeededRng::new(4);
        let u2 = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
        let h = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
        let x_p = sample_cgauss(&mut rng, 2, 3, 1.0).unwrap();
        let mut p = params_with_u2(4, u2.clone());
        p.alpha = vec![1.0; 4];
        p.gamma = vec![0.7, 0.9, 1.1, 1.3];
        let z = pen_forward(&x_p, &h, &p, &c).unwrap();
        let w = compute_w(&u2, &h).unwrap();
        let r = w.mul(&x_p).scale(C64::new(1.3, 0.0));
        let want = CMatrix::from_fn(2, 3, |i, j| project(r[(i, j)], &c));
        assert_eq!(z, want);
    }

    #[test]
    fn pen_output_always_in_alphabet() {
        let c = qpsk();
        let mut rng = SeededRng::new(5);
        for _ in 0..200 {
            let u2 = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
            let h = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
            let x_p = sample_cgauss(&mut rng, 2, 4, 2.0).unwrap();
            let p = params_with_u2(3, u2);
            let Ok(z) = pen_forward(&x_p, &h, &p, &c) else { continue };
            for v in z.data() {
                assert!(c.points().iter().any(|q| (v - q).norm() < 1e-15));
            }
            // unit-power alphabet => the power budget is met with equality
            assert!((z.norm_sqr() / (z.rows() * z.cols()) as f64 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cen_is_the_combiner_product() {
        let mut rng = SeededRng::new(6);
        let u2 = sample_cgauss(&mut rng, 2, 3, 1.0).unwrap();
        let y = sample_cgauss(&mut rng, 3, 4, 1.0).unwrap();
        let p = params_with_u2(1, u2.clone());
        let out = cen_forward(&y, &p).unwrap();
        assert!(frob_norm(&out.sub(&u2.mul(&y))) < 1e-12);
        let y1 = sample_cgauss(&mut rng, 3, 4, 1.0).unwrap();
        let lhs = cen_forward(&y.add(&y1), &p).unwrap();
        let rhs = out.add(&cen_forward(&y1, &p).unwrap());
        assert!(frob_norm(&lhs.sub(&rhs)) < 1e-12);
    }

    #[test]
    fn scalar_wiener_is_half() {
        let h = CMatrix::identity(1);
        let x = CMatrix::from_fn(1, 1, |_, _| C64::new(1.0, 0.0));
        let xs = [x];
        let u2 = optimal_u2(&xs, &xs, &h, 1.0).unwrap();
        assert!((u2[(0, 0)] - C64::new(0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn noiseless_identity_channel_inverts_exactly() {
        let mut rng = SeededRng::new(7);
        let h = CMatrix::identity(2);
        let xs: Vec<CMatrix> = (0..4)
            .map(|_| sample_cgauss(&mut rng, 2, 8, 1.0).unwrap())
            .collect();
        let u2 = optimal_u2(&xs, &xs, &h, 0.0).unwrap();
        assert!(frob_norm(&u2.sub(&CMatrix::identity(2))) < 1e-9);
    }

    #[test]
    fn wiener_beats_random_perturbations() {
        let c = qpsk();
        let mut rng = SeededRng::new(8);
        let h = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
        let xs: Vec<CMatrix> = (0..6)
            .map(|_| alphabet_block(&mut rng, &c, 2, 8))
            .collect();
        let nv = 0.25;
        let u2 = optimal_u2(&xs, &xs, &h, nv).unwrap();
        let objective = |u: &CMatrix| -> f64 {
            xs.iter()
                .map(|x| loss_given_z(x, x, u, &h, nv))
                .sum::<f64>()
        };
        let base = objective(&u2);
        for _ in 0..100 {
            let d = sample_cgauss(&mut rng, 2, 2, 0.01).unwrap();
            assert!(objective(&u2.add(&d)) >= base - 1e-12);
        }
    }

    #[test]
    fn loss_is_zero_at_noiseless_fixed_point() {
        let c = qpsk();
        let mut rng = SeededRng::new(9);
        let x_p = alphabet_block(&mut rng, &c, 2, 6);
        let batch = PcenBatch {
            x_p_samples: vec![x_p],
            channel: ChannelRealization::perfect(CMatrix::identity(2)),
            noise_var: 0.0,
            precoder: None,
        };
        let p = params_with_u2(1, CMatrix::identity(2));
        let l = pcen_loss(&batch, &p, &c, &mut SeededRng::new(0)).unwrap();
        assert!(l < 1e-28);
        assert!(pcen_loss_expected(&batch, &p, &c).unwrap() < 1e-28);
    }

    #[test]
    fn monte_carlo_matches_noise_decomposition() {
        // E ||x_p - U2 (H z + n)||^2 = ||x_p - U2 H z||^2 + k sigma^2 ||U2||^2
        let c = qpsk();
        let mut rng = SeededRng::new(10);
        let h = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
        let u2 = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
        let x_p = sample_cgauss(&mut rng, 2, 4, 1.0).unwrap();
        let batch = PcenBatch {
            x_p_samples: vec![x_p.clone()],
            channel: ChannelRealization::perfect(h.clone()),
            noise_var: 0.5,
            precoder: None,
        };
        let p = params_with_u2(2, u2);
        let expected = pcen_loss_expected(&batch, &p, &c).unwrap();
        let draws = 20_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        let mut noise_rng = SeededRng::new(11);
        for _ in 0..draws {
            let l = pcen_loss(&batch, &p, &c, &mut noise_rng).unwrap();
            acc += l;
            acc2 += l * l;
        }
        let mean = acc / draws as f64;
        let std_err = ((acc2 / draws as f64 - mean * mean) / draws as f64).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * std_err,
            "MC {mean} vs analytic {expected} (3 se = {})",
            3.0 * std_err
        );
    }

    #[test]
    fn noise_term_scales_linearly_in_variance() {
        let c = qpsk();
        let mut rng = SeededRng::new(12);
        let h = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
        let u2 = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
        let x_p = sample_cgauss(&mut rng, 2, 4, 1.0).unwrap();
        let p = params_with_u2(2, u2.clone());
        let mk = |nv: f64| PcenBatch {
            x_p_samples: vec![x_p.clone()],
            channel: ChannelRealization::perfect(h.clone()),
            noise_var: nv,
            precoder: None,
        };
        let l1 = pcen_loss_expected(&mk(0.3), &p, &c).unwrap();
        let l2 = pcen_loss_expected(&mk(0.6), &p, &c).unwrap();
        let n_t = 2.0;
        let bump = 0.3 * u2.norm_sqr() / n_t;
        assert!(((l2 - l1) - bump).abs() < 1e-12, "{} vs {}", l2 - l1, bump);
    }

    #[test]
    fn training_in_lossless_regime_reaches_zero_loss() {
        // alphabet-valued transmit blocks over identity channels, no noise
        let c = qpsk();
        let mut rng = SeededRng::new(50);
        let batches: Vec<PcenBatch> = (0..3)
            .map(|_| PcenBatch {
                x_p_samples: (0..2).map(|_| alphabet_block(&mut rng, &c, 2, 8)).collect(),
                channel: ChannelRealization::perfect(CMatrix::identity(2)),
                noise_var: 0.0,
                precoder: Some(CMatrix::identity(2)),
            })
            .collect();
        let opts = TrainOptions {
            t_iters: 2,
            max_rounds: 4,
            golden_iters: 8,
            spsa_steps: 4,
            ..TrainOptions::default()
        };
        let out = train_pcen_on_batches(&batches, &c, &opts).unwrap();
        assert!(out.report.final_loss < 1e-12, "loss {}", out.report.final_loss);
        // the combiner acts as an inverse of the (identity) channel here
        let u2 = &out.per_channel_u2[0];
        let z = alphabet_block(&mut SeededRng::new(51), &c, 2, 8);
        let diff = u2.mul(&z).sub(&z).norm_sqr();
        assert!(diff < 1e-18, "combiner not identity-equivalent: {diff}");
    }

    #[test]
    fn training_never_increases_loss() {
        let c = qpsk();
        let base = SeededRng::new(40);
        let ensemble: Vec<ChannelRealization> = (0..6)
            .map(|j| {
                let mut r = base.derive(j);
                ChannelRealization::perfect(sample_cgauss(&mut r, 2, 2, 1.0).unwrap())
            })
            .collect();
        let cfg = LinkConfig::default_2x2();
        let opts = TrainOptions {
            t_iters: 4,
            samples_per_channel: 2,
            max_rounds: 3,
            golden_iters: 8,
            spsa_steps: 6,
            ..TrainOptions::default()
        };
        let out = train_pcen(&ensemble, &cfg, &c, &opts).unwrap();
        assert!(out.report.final_loss <= out.report.initial_loss);
        let mut prev = out.report.initial_loss;
        for &l in &out.report.loss_history {
            assert!(l <= prev + 1e-15, "round loss went up: {prev} -> {l}");
            prev = l;
        }
        assert_eq!(out.per_channel_u2.len(), 6);
        out.params.validate().unwrap();
    }

    #[test]
    fn straight_through_mode_also_improves() {
        let c = qpsk();
        let base = SeededRng::new(41);
        let ensemble: Vec<ChannelRealization> = (0..4)
            .map(|j| {
                let mut r = base.derive(j);
                ChannelRealization::perfect(sample_cgauss(&mut r, 2, 2, 1.0).unwrap())
            })
            .collect();
        let cfg = LinkConfig::default_2x2();
        let opts = TrainOptions {
            t_iters: 4,
            samples_per_channel: 2,
            max_rounds: 3,
            theta_update: ThetaUpdate::StraightThrough { lr: 0.05, steps: 10 },
            ..TrainOptions::default()
        };
        let out = train_pcen(&ensemble, &cfg, &c, &opts).unwrap();
        assert!(out.report.final_loss <= out.report.initial_loss);
    }

    #[test]
    fn trained_beats_identity_baseline_on_small_ensemble() {
        let c = qpsk();
        let base = SeededRng::new(42);
        let ensemble: Vec<ChannelRealization> = (0..12)
            .map(|j| {
                let mut r = base.derive(j);
                ChannelRealization::perfect(sample_cgauss(&mut r, 2, 2, 1.0).unwrap())
            })
            .collect();
        let cfg = LinkConfig::default_2x2();
        let opts = TrainOptions {
            t_iters: 8,
            samples_per_channel: 3,
            max_rounds: 4,
            golden_iters: 10,
            spsa_steps: 10,
            ..TrainOptions::default()
        };
        let out = train_pcen(&ensemble, &cfg, &c, &opts).unwrap();
        let batches =
            make_training_batches(&ensemble, &cfg, &c, opts.samples_per_channel, opts.seed)
                .unwrap();
        let mut baseline = 0.0;
        for b in &batches {
            let u2 = projection_pen_combiner(b, &c).unwrap();
            baseline += projection_pen_loss(b, &u2, &c).unwrap();
        }
        baseline /= batches.len() as f64;
        assert!(
            out.report.final_loss < baseline,
            "trained {} vs baseline {}",
            out.report.final_loss,
            baseline
        );
    }

    #[test]
    fn deploy_combiner_is_finite_and_helps() {
        let c = qpsk();
        let mut rng = SeededRng::new(43);
        let h = sample_cgauss(&mut rng, 2, 2, 1.0).unwrap();
        let cfg = LinkConfig::default_2x2();
        let nv = snr_to_noise_var(cfg.snr_db, cfg.p_z).unwrap();
        let spec = crate::precoder::build_precoder(&h, &cfg, nv).unwrap();
        let bits: Vec<u8> = (0..cfg.n_s * cfg.k * 2).map(|_| (rng.next_u64() & 1) as u8).collect();
        let x_e = modulate(&bits, &c).unwrap();
        let x_p = standard_precode(&x_e, &spec, &cfg).unwrap();
        let template = PcenParams::init(8, 2, 2);
        let u2 = deploy_combiner(&x_p, &h, &template, &c, nv, 3, Some(spec.matrix())).unwrap();
        assert!(u2.is_finite());
    }
}
