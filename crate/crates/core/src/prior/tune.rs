use nalgebra::DVector;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gp::{gp_realize, GpTarget, RbfKernel};
use super::params::{describe, Granularity, PriorParams};
use crate::error::{Error, Result};
use crate::snn::{propagate, sample_network, PropagationConfig, SnnModel};
use crate::stats::GaussianMixture;
use crate::transport::{empirical_w2_with_cap, mw2, relative_w2, EmpiricalW2};
use crate::TOL;

/// Terms of the tuning objective `mw2_term + beta * bound_term`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub loss: f64,
    /// MW2 between the propagated mixture and the GP marginal.
    pub mw2_term: f64,
    /// Certified bound between the network and the propagated mixture.
    pub bound_term: f64,
}

/// Evaluates the objective for `params` on `target`'s points.
pub fn tune_loss(
    params: &PriorParams,
    template: &SnnModel,
    target: &GpTarget,
    cfg: &PropagationConfig,
    beta: f64,
) -> Result<LossParts> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::invalid(format!("beta must be finite and nonnegative, got {beta}")));
    }
    let model = params.instantiate(template)?;
    check_shapes(&model, target)?;
    let (q, ledger) = propagate(&model, &target.points, cfg)?;
    let gp = GaussianMixture::single(gp_realize(target)?);
    let (mw2_term, _) = mw2(&q, &gp)?;
    let bound_term = ledger.bound;
    Ok(LossParts {
        loss: mw2_term + beta * bound_term,
        mw2_term,
        bound_term,
    })
}

fn check_shapes(model: &SnnModel, target: &GpTarget) -> Result<()> {
    if model.output_dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: model.output_dim(),
            context: "prior tuning needs a single-output network",
        });
    }
    let d = target.points[0].len();
    if d != model.input_dim() {
        return Err(Error::Dimension {
            expected: model.input_dim(),
            got: d,
            context: "GP evaluation point",
        });
    }
    Ok(())
}

/// Settings of [`tune`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneOptions {
    pub beta: f64,
    pub steps: usize,
    pub step_size: f64,
    /// Geometric decay of the step size per step.
    pub decay: f64,
    /// Points per mini-batch; 0 means all points.
    pub batch: usize,
    pub seed: u64,
    /// Central-difference half-width in log-variance space.
    pub fd_step: f64,
    pub granularity: Granularity,
    /// Samples per distribution for the empirical estimate in the report.
    pub n_samples: usize,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            beta: 0.01,
            steps: 100,
            step_size: 0.05,
            decay: 0.99,
            batch: 0,
            seed: 0,
            fd_step: 1e-4,
            granularity: Granularity::PerLayer,
            n_samples: 1000,
        }
    }
}

/// Relative W2 of a network against its GP target, estimated two ways.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeW2 {
    /// Sample-based estimate.
    pub empirical: f64,
    /// `(mw2_term + bound_term)` relative to the GP second moment.
    pub formal: f64,
    /// Raw sample estimate with its standard error.
    pub samples: EmpiricalW2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub kernel: RbfKernel,
    pub options: TuneOptions,
    /// Batch objective at the start of every step.
    pub history: Vec<LossParts>,
    /// Full-set objective before and after tuning.
    pub initial: LossParts,
    pub final_loss: LossParts,
    /// True when the last iterate was worse than the start and was discarded.
    pub reverted: bool,
    pub params: PriorParams,
    pub initial_relative_w2: RelativeW2,
    pub relative_w2: RelativeW2,
}

/// Mini-batch gradient descent on prior log-variances.
///
/// Gradients are central differences of [`tune_loss`]; step `t` uses the
/// propagation seed `cfg.seed + t` for every probe, so each step descends a
/// fixed piecewise-smooth surrogate. Each coordinate moves by at most 1 per
/// step. If the final full-set loss exceeds the initial one the initial
/// parameters are returned.
pub fn tune(template: &SnnModel, target: &GpTarget, cfg: &PropagationConfig, opts: &TuneOptions) -> Result<(TuneReport, SnnModel)> {
    if opts.steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    let n = target.points.len();
    if opts.batch > n {
        return Err(Error::invalid(format!("batch {} exceeds the {n} evaluation points", opts.batch)));
    }
    if !(opts.fd_step > 0.0 && opts.step_size > 0.0 && opts.decay > 0.0) {
        return Err(Error::invalid("fd_step, step_size and decay must be positive"));
    }
    let start = PriorParams::from_template(template, opts.granularity)?;
    let initial = tune_loss(&start, template, target, cfg, opts.beta)?;
    if !initial.loss.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite initial loss ({} of {} parameters, first block: {})",
            start.log_variances.len(),
            opts.granularity_label(),
            describe(template, opts.granularity, 0)
        )));
    }
    let batch = if opts.batch == 0 { n } else { opts.batch };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = start.clone();
    let mut history = Vec::with_capacity(opts.steps);
    let mut lr = opts.step_size;
    for t in 0..opts.steps {
        let mut idx = index::sample(&mut rng, n, batch).into_vec();
        idx.sort_unstable();
        let sub = target.restrict(&idx);
        let step_cfg = PropagationConfig {
            seed: cfg.seed.wrapping_add(t as u64),
            ..*cfg
        };
        let here = tune_loss(&params, template, &sub, &step_cfg, opts.beta)?;
        if !here.loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at step {t}")));
        }
        history.push(here);
        let grad = gradient(&params, template, &sub, &step_cfg, opts)?;
        for (p, g) in params.log_variances.iter_mut().zip(&grad) {
            *p -= (lr * g).clamp(-1.0, 1.0);
        }
        lr *= opts.decay;
    }
    let mut final_loss = tune_loss(&params, template, target, cfg, opts.beta)?;
    let reverted = !(final_loss.loss <= initial.loss);
    if reverted {
        params = start.clone();
        final_loss = initial;
    }
    let tuned = params.instantiate(template)?;
    let untuned = start.instantiate(template)?;
    let gp = gp_realize(target)?;
    let initial_relative_w2 = relative_estimates(&untuned, target, &gp, initial, opts)?;
    let relative_w2 = relative_estimates(&tuned, target, &gp, final_loss, opts)?;
    Ok((
        TuneReport {
            kernel: target.kernel,
            options: *opts,
            history,
            initial,
            final_loss,
            reverted,
            params,
            initial_relative_w2,
            relative_w2,
        },
        tuned,
    ))
}

impl TuneOptions {
    fn granularity_label(&self) -> &'static str {
        match self.granularity {
            Granularity::Shared => "shared",
            Granularity::PerLayer => "per-layer",
            Granularity::PerParameter => "per-parameter",
        }
    }
}

/// Central-difference gradient of the batch objective.
pub fn gradient(
    params: &PriorParams,
    template: &SnnModel,
    target: &GpTarget,
    cfg: &PropagationConfig,
    opts: &TuneOptions,
) -> Result<Vec<f64>> {
    let h = opts.fd_step;
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(params.log_variances.len());
    for i in 0..params.log_variances.len() {
        let x = params.log_variances[i];
        probe.log_variances[i] = x + h;
        let up = tune_loss(&probe, template, target, cfg, opts.beta)?.loss;
        probe.log_variances[i] = x - h;
        let down = tune_loss(&probe, template, target, cfg, opts.beta)?.loss;
        probe.log_variances[i] = x;
        let g = (up - down) / (2.0 * h);
        if !g.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient for {}",
                describe(template, params.granularity, i)
            )));
        }
        grad.push(g);
    }
    Ok(grad)
}

/// Empirical and formal relative W2 of `model` against the GP at the target points.
pub fn relative_estimates(
    model: &SnnModel,
    target: &GpTarget,
    gp: &crate::stats::Gaussian,
    loss: LossParts,
    opts: &TuneOptions,
) -> Result<RelativeW2> {
    let gp_mix = GaussianMixture::single(gp.clone());
    let net = sample_network(model, &target.points, opts.n_samples, opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(u64::MAX);
    let sampler = gp.sampler()?;
    let ref_samples: Vec<DVector<f64>> = (0..opts.n_samples).map(|_| sampler.sample(&mut rng)).collect();
    let samples = empirical_w2_with_cap(&net, &ref_samples, TOL.empirical_cost_cap)?;
    Ok(RelativeW2 {
        empirical: relative_w2(samples.w2, &gp_mix)?,
        formal: relative_w2(loss.mw2_term + loss.bound_term, &gp_mix)?,
        samples,
    })
}
