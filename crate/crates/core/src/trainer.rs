//! Learning gradients, Adam, evidence estimators and the training loop.

use rand::seq::SliceRandom;

use crate::basis::BasisKind;
use crate::config::{Config, Criterion};
use crate::error::{KaemError, Result};
use crate::generator::{Architecture, GeneratorNet};
use crate::inference::{
    anneal_exponent, importance_sample, population_ula, power_schedule, ula_posterior_samples,
    LatentTarget, PosteriorTarget, UlaConfig,
};
use crate::model::Kaem;
use crate::oracles::{GridModel1D, MAX_GRID_NODES};
use crate::prior::{MixturePrior, PriorMode};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// Bias-corrected Adam step in ascent direction: θ ← θ + η·m̂/(√v̂ + ε).
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = params.len();
    for len in [grads.len(), state.m.len(), state.v.len()] {
        if len != n {
            return Err(KaemError::DimensionMismatch {
                expected: n,
                got: len,
            });
        }
    }
    state.step += 1;
    let b1t = 1.0 - cfg.beta1.powf(state.step as f64);
    let b2t = 1.0 - cfg.beta2.powf(state.step as f64);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / b1t;
        let vh = state.v[i] / b2t;
        params[i] += cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
    Ok(())
}

pub fn l2_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescale `g` so that its norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let n = l2_norm(g);
    if max_norm > 0.0 && n > max_norm {
        let s = max_norm / n;
        g.iter_mut().for_each(|v| *v *= s);
    }
    n
}

/// Trapezoid weights c_k with Σ_k c_k·E_k = ½Σ Δt_k (E_{k−1} + E_k).
pub fn trapezoid_weights(temps: &[f64]) -> Vec<f64> {
    let n = temps.len();
    let mut c = vec![0.0; n];
    for k in 1..n {
        let dt = 0.5 * (temps[k] - temps[k - 1]);
        c[k - 1] += dt;
        c[k] += dt;
    }
    c
}

/// ½Σ Δt_k (E_{k−1} + E_k).
pub fn thermo_trapezoid(e: &[f64], temps: &[f64]) -> Result<f64> {
    if e.len() != temps.len() {
        return Err(KaemError::DimensionMismatch {
            expected: temps.len(),
            got: e.len(),
        });
    }
    let mut s = 0.0;
    for k in 1..temps.len() {
        s += 0.5 * (temps[k] - temps[k - 1]) * (e[k - 1] + e[k]);
    }
    Ok(s)
}

/// Σ_k [logsumexp_s(Δt_k·ℓ_{k−1}^(s)) − log N] with `log_liks[k]` drawn at t_k.
pub fn steppingstone_logml(log_liks: &[Vec<f64>], temps: &[f64]) -> Result<f64> {
    if log_liks.len() != temps.len() {
        return Err(KaemError::DimensionMismatch {
            expected: temps.len(),
            got: log_liks.len(),
        });
    }
    let mut total = 0.0;
    for k in 1..temps.len() {
        let prev = &log_liks[k - 1];
        if prev.is_empty() {
            return Err(KaemError::EmptyBatch);
        }
        let dt = temps[k] - temps[k - 1];
        let scaled: Vec<f64> = prev.iter().map(|l| dt * l).collect();
        total += crate::inference::log_mean_exp(&scaled);
    }
    Ok(total)
}

/// Trapezoid plus the KL bias correction on an enumerable model:
/// ½ΣΔt_k(E_{k−1}+E_k) + ½Σ(KL(p_{k−1}‖p_k) − KL(p_k‖p_{k−1})).
pub fn kl_corrected_logml(grid: &GridModel1D, temps: &[f64]) -> Result<f64> {
    if grid.len() > MAX_GRID_NODES {
        return Err(KaemError::GridTooLarge(grid.len()));
    }
    let e: Vec<f64> = temps.iter().map(|&t| grid.expected_log_lik(t)).collect();
    let mut s = thermo_trapezoid(&e, temps)?;
    for k in 1..temps.len() {
        s += 0.5 * (grid.kl(temps[k - 1], temps[k]) - grid.kl(temps[k], temps[k - 1]));
    }
    Ok(s)
}

/// Add the posterior side of the prior gradient for weighted samples:
/// ∇Σf for a factorized prior (its prior side comes from
/// [`accumulate_cd_prior_side`]), ∇log p for a mixture prior.
pub fn accumulate_prior_posterior_side(
    prior: &MixturePrior,
    particles: &[Vec<f64>],
    weights: &[f64],
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    for (z, &w) in particles.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        match prior.mode {
            PriorMode::Factorized => prior.accumulate_energy_grad(z, scale * w, out)?,
            PriorMode::Mixture => prior.accumulate_grad_log_prior_params(z, scale * w, out)?,
        }
    }
    Ok(())
}

/// Subtract `scale`·mean ∇Σf over prior draws (factorized prior only).
pub fn accumulate_cd_prior_side(
    prior: &MixturePrior,
    draws: &[Vec<f64>],
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    if draws.is_empty() {
        return Err(KaemError::EmptyBatch);
    }
    let w = -scale / draws.len() as f64;
    for z in draws {
        prior.accumulate_energy_grad(z, w, out)?;
    }
    Ok(())
}

/// Add `scale`·Σ_s w_s ∇_Φ log p(x|z_s).
pub fn accumulate_generator_side(
    gen: &GeneratorNet,
    x: &[f64],
    particles: &[Vec<f64>],
    weights: &[f64],
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    for (z, &w) in particles.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let cache = gen.forward_cached(z)?;
        gen.backward(x, &cache, Some((&mut *out, scale * w)))?;
    }
    Ok(())
}

/// Posterior sampler used by the MLE gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PosteriorSampler {
    Importance { n: usize, gamma: f64 },
    Ula { n: usize, cfg: UlaConfig },
}

/// Everything one batch contributes to an update.
#[derive(Debug, Clone, Default)]
pub struct BatchGradient {
    pub objective: f64,
    pub prior: Vec<f64>,
    pub generator: Vec<f64>,
    pub ess_mean: Option<f64>,
    pub swap_accept_mean: Option<f64>,
    /// Batch-mean E_k per temperature (thermo only).
    pub e_k: Option<Vec<f64>>,
    pub swap_rates: Option<Vec<f64>>,
    pub steppingstone: Option<f64>,
    /// Posterior latents seen during the step, for grid updates.
    pub latents: Vec<Vec<f64>>,
}

struct ExampleResult {
    objective: f64,
    prior: Vec<f64>,
    generator: Vec<f64>,
    ess: Option<f64>,
    e_k: Option<Vec<f64>>,
    swap_rates: Option<Vec<f64>>,
    steppingstone: Option<f64>,
    latents: Vec<Vec<f64>>,
}

#[cfg(feature = "parallel")]
fn map_examples<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_examples<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// The factorized CD prior side for one example, with its own draw stream.
fn cd_prior_for_example(
    prior: &MixturePrior,
    n: usize,
    seed: u64,
    update: u64,
    i: usize,
    out: &mut [f64],
) -> Result<()> {
    if prior.mode != PriorMode::Factorized {
        return Ok(());
    }
    let mut r = rng::stream(seed, &[tag::CD_PRIOR, update, i as u64]);
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|_| prior.sample_prior(&mut r))
        .collect::<Result<_>>()?;
    accumulate_cd_prior_side(prior, &draws, 1.0, out)
}

fn reduce(model: &Kaem, results: Vec<Result<ExampleResult>>) -> Result<BatchGradient> {
    let nx = results.len();
    if nx == 0 {
        return Err(KaemError::EmptyBatch);
    }
    let inv = 1.0 / nx as f64;
    let mut out = BatchGradient {
        prior: vec![0.0; model.prior.num_params()],
        generator: vec![0.0; model.generator.num_params()],
        ..Default::default()
    };
    let mut ess = Vec::new();
    let mut ss = Vec::new();
    let mut e_k: Option<Vec<f64>> = None;
    let mut rates: Option<Vec<f64>> = None;
    for r in results {
        let r = r?;
        out.objective += inv * r.objective;
        for (a, b) in out.prior.iter_mut().zip(&r.prior) {
            *a += inv * b;
        }
        for (a, b) in out.generator.iter_mut().zip(&r.generator) {
            *a += inv * b;
        }
        if let Some(e) = r.ess {
            ess.push(e);
        }
        if let Some(s) = r.steppingstone {
            ss.push(s);
        }
        if let Some(ek) = r.e_k {
            let acc = e_k.get_or_insert_with(|| vec![0.0; ek.len()]);
            acc.iter_mut().zip(&ek).for_each(|(a, b)| *a += inv * b);
        }
        if let Some(sr) = r.swap_rates {
            let acc = rates.get_or_insert_with(|| vec![0.0; sr.len()]);
            acc.iter_mut().zip(&sr).for_each(|(a, b)| *a += inv * b);
        }
        out.latents.extend(r.latents);
    }
    model.prior.accumulate_regularizer_grad(1.0, &mut out.prior);
    if !ess.is_empty() {
        out.ess_mean = Some(ess.iter().sum::<f64>() / ess.len() as f64);
    }
    if !ss.is_empty() {
        out.steppingstone = Some(ss.iter().sum::<f64>() / ss.len() as f64);
    }
    out.swap_accept_mean = rates
        .as_ref()
        .filter(|r| !r.is_empty())
        .map(|r| r.iter().sum::<f64>() / r.len() as f64);
    out.e_k = e_k;
    out.swap_rates = rates;
    Ok(out)
}

/// Batch-mean MLE gradient. The objective is the importance-sampling
/// log-evidence estimate, or the mean posterior log-likelihood under ULA.
pub fn mle_gradient(
    model: &Kaem,
    batch: &[&[f64]],
    sampler: PosteriorSampler,
    seed: u64,
    update: u64,
) -> Result<BatchGradient> {
    let results = map_examples(batch.len(), |i| -> Result<ExampleResult> {
        let x = batch[i];
        let target = PosteriorTarget {
            prior: &model.prior,
            generator: &model.generator,
            x,
        };
        let mut prior_g = vec![0.0; model.prior.num_params()];
        let mut gen_g = vec![0.0; model.generator.num_params()];
        let (particles, weights, objective, ess, n) = match sampler {
            PosteriorSampler::Importance { n, gamma } => {
                let mut r = rng::stream(seed, &[tag::IMPORTANCE, update, i as u64]);
                let wp = importance_sample(&target, n, gamma, &mut r)?;
                (wp.particles, wp.weights, wp.log_evidence, Some(wp.ess), n)
            }
            PosteriorSampler::Ula { n, cfg } => {
                let mut r = rng::stream(seed, &[tag::ULA, update, i as u64]);
                let zs = ula_posterior_samples(&target, n, cfg, &mut r)?;
                let mut obj = 0.0;
                for z in &zs {
                    obj += target.log_lik(z)? / n as f64;
                }
                (zs, vec![1.0 / n as f64; n], obj, None, n)
            }
        };
        accumulate_prior_posterior_side(&model.prior, &particles, &weights, 1.0, &mut prior_g)?;
        cd_prior_for_example(&model.prior, n, seed, update, i, &mut prior_g)?;
        accumulate_generator_side(&model.generator, x, &particles, &weights, 1.0, &mut gen_g)?;
        Ok(ExampleResult {
            objective,
            prior: prior_g,
            generator: gen_g,
            ess,
            e_k: None,
            swap_rates: None,
            steppingstone: None,
            latents: particles,
        })
    });
    reduce(model, results)
}

/// Thermodynamic objective ½ΣΔt_k(E_{k−1}+E_k) with its generator gradient
/// ½ΣΔt_k(∇E_{k−1}+∇E_k); the prior gradient uses the t = 1 replicas only.
pub fn thermo_objective_and_gradients(
    model: &Kaem,
    batch: &[&[f64]],
    temps: &[f64],
    n_particles: usize,
    cfg: UlaConfig,
    seed: u64,
    update: u64,
) -> Result<BatchGradient> {
    let c = trapezoid_weights(temps);
    let last = temps.len() - 1;
    let results = map_examples(batch.len(), |i| -> Result<ExampleResult> {
        let x = batch[i];
        let target = PosteriorTarget {
            prior: &model.prior,
            generator: &model.generator,
            x,
        };
        let mut r = rng::stream(seed, &[tag::ULA, update, i as u64]);
        let (pop, e) = population_ula(&target, temps, n_particles, cfg, &mut r)?;
        let objective = thermo_trapezoid(&e, temps)?;
        let lls: Vec<Vec<f64>> = pop
            .replicas
            .iter()
            .map(|row| row.iter().map(|rep| rep.log_lik).collect())
            .collect();
        let steppingstone = steppingstone_logml(&lls, temps)?;
        let mut gen_g = vec![0.0; model.generator.num_params()];
        let uniform = vec![1.0 / n_particles as f64; n_particles];
        for (k, &ck) in c.iter().enumerate() {
            if ck != 0.0 {
                accumulate_generator_side(
                    &model.generator,
                    x,
                    &pop.states(k),
                    &uniform,
                    ck,
                    &mut gen_g,
                )?;
            }
        }
        let posterior = pop.states(last);
        let mut prior_g = vec![0.0; model.prior.num_params()];
        accumulate_prior_posterior_side(&model.prior, &posterior, &uniform, 1.0, &mut prior_g)?;
        cd_prior_for_example(&model.prior, n_particles, seed, update, i, &mut prior_g)?;
        Ok(ExampleResult {
            objective,
            prior: prior_g,
            generator: gen_g,
            ess: None,
            e_k: Some(e),
            swap_rates: Some(pop.swap_rates()),
            steppingstone: Some(steppingstone),
            latents: posterior,
        })
    });
    reduce(model, results)
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub update: u64,
    pub objective: f64,
    pub ess_mean: Option<f64>,
    pub swap_accept_mean: Option<f64>,
    pub grad_norm_prior: f64,
    pub grad_norm_gen: f64,
    pub p_exponent: Option<f64>,
}

pub const METRICS_HEADER: &str =
    "update,objective,ess_mean,swap_accept_mean,grad_norm_prior,grad_norm_gen,p_exponent";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.update,
            self.objective,
            opt(self.ess_mean),
            opt(self.swap_accept_mean),
            self.grad_norm_prior,
            self.grad_norm_gen,
            opt(self.p_exponent)
        )
    }
}

/// Per-temperature diagnostics of one thermo update.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub update: u64,
    pub k: usize,
    pub t_k: f64,
    pub e_k: f64,
    /// Acceptance rate of swaps between t_k and t_{k+1}; empty for the last.
    pub swap_rate: Option<f64>,
}

pub const TRACE_HEADER: &str = "update,k,t_k,E_k,swap_accept_rate";

impl TraceRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.update,
            self.k,
            self.t_k,
            self.e_k,
            opt(self.swap_rate)
        )
    }
}

/// What one optimizer update did.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub update: u64,
    pub objective: f64,
    pub metrics: MetricsRow,
    pub trace: Vec<TraceRow>,
    pub grid_updated: usize,
}

/// Receives training events; file output lives with the caller.
pub trait TrainObserver {
    fn on_step(
        &mut self,
        _trainer: &Trainer,
        _report: &StepReport,
        _log_metrics: bool,
    ) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _trainer: &Trainer, _label: &str) -> Result<()> {
        Ok(())
    }
    /// Called with the failing state before a non-finite objective aborts.
    fn on_abort(&mut self, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

/// Observer that keeps the metrics log in memory.
#[derive(Debug, Default)]
pub struct MemoryObserver {
    pub metrics: Vec<MetricsRow>,
    pub trace: Vec<TraceRow>,
    pub checkpoints: Vec<String>,
    pub objectives: Vec<f64>,
}

impl TrainObserver for MemoryObserver {
    fn on_step(&mut self, _t: &Trainer, r: &StepReport, log: bool) -> Result<()> {
        self.objectives.push(r.objective);
        if log {
            self.metrics.push(r.metrics.clone());
            self.trace.extend(r.trace.iter().cloned());
        }
        Ok(())
    }
    fn on_checkpoint(&mut self, _t: &Trainer, label: &str) -> Result<()> {
        self.checkpoints.push(label.to_string());
        Ok(())
    }
}

/// Model, optimizer state and position in the run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: Config,
    pub model: Kaem,
    pub adam: AdamState,
    /// Updates completed so far.
    pub update: u64,
}

impl Trainer {
    pub fn new(config: Config, model: Kaem) -> Result<Self> {
        config.validate()?;
        let n = model.num_params();
        Ok(Self {
            config,
            model,
            adam: AdamState::new(n),
            update: 0,
        })
    }

    pub fn batches_per_epoch(&self, n_examples: usize) -> usize {
        n_examples.div_ceil(self.config.batch_size)
    }

    pub fn total_updates(&self, n_examples: usize) -> u64 {
        (self.config.epochs * self.batches_per_epoch(n_examples)) as u64
    }

    /// Example order for one epoch.
    pub fn epoch_order(&self, epoch: usize, n_examples: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n_examples).collect();
        idx.shuffle(&mut rng::stream(
            self.config.seed,
            &[tag::SHUFFLE, epoch as u64],
        ));
        idx
    }

    /// Schedule exponent for the next update (thermo only).
    pub fn current_exponent(&self, total: u64) -> Result<Option<f64>> {
        if self.config.criterion != Criterion::Thermo {
            return Ok(None);
        }
        let c = &self.config;
        anneal_exponent(
            (self.update + 1) as usize,
            total as usize,
            c.p_start,
            c.p_end,
            c.num_cycles,
        )
        .map(Some)
    }

    /// One optimizer update on the examples `batch`.
    pub fn step(&mut self, batch: &[&[f64]], total_updates: u64) -> Result<StepReport> {
        let c = self.config.clone();
        let update = self.update + 1;
        let ula = UlaConfig {
            eta: c.ula_eta,
            n_local: c.ula_steps,
        };
        let p_exp = self.current_exponent(total_updates)?;
        let mut temps = Vec::new();
        let bg = match c.criterion {
            Criterion::MleIs => mle_gradient(
                &self.model,
                batch,
                PosteriorSampler::Importance {
                    n: c.particles,
                    gamma: c.ess_threshold,
                },
                c.seed,
                update,
            )?,
            Criterion::MleUla => mle_gradient(
                &self.model,
                batch,
                PosteriorSampler::Ula {
                    n: c.particles,
                    cfg: ula,
                },
                c.seed,
                update,
            )?,
            Criterion::Thermo => {
                temps = power_schedule(c.num_temps, p_exp.unwrap_or(1.0))?;
                thermo_objective_and_gradients(
                    &self.model,
                    batch,
                    &temps,
                    c.particles,
                    ula,
                    c.seed,
                    update,
                )?
            }
        };
        if !bg.objective.is_finite() {
            return Err(KaemError::NonFiniteObjective {
                update: update as usize,
                detail: format!("objective = {}", bg.objective),
            });
        }
        let np = self.model.num_prior_params();
        let mut g = bg.prior.clone();
        g.extend_from_slice(&bg.generator);
        let grad_norm_prior = l2_norm(&g[..np]);
        let grad_norm_gen = l2_norm(&g[np..]);
        if !(grad_norm_prior.is_finite() && grad_norm_gen.is_finite()) {
            return Err(KaemError::NonFiniteObjective {
                update: update as usize,
                detail: format!("gradient norms {grad_norm_prior}, {grad_norm_gen}"),
            });
        }
        clip_global_norm(&mut g, c.clip);
        let mut params = self.model.params();
        adam_step(
            &mut params,
            &g,
            &mut self.adam,
            &AdamConfig::from_config(&c),
        )?;
        self.model.set_params(&params)?;
        self.update = update;

        let mut grid_updated = 0;
        if c.grid_frequency > 0 && update % c.grid_frequency as u64 == 0 {
            grid_updated = self.grid_update(&bg.latents)?;
        }

        let metrics = MetricsRow {
            update,
            objective: bg.objective,
            ess_mean: bg.ess_mean,
            swap_accept_mean: bg.swap_accept_mean,
            grad_norm_prior,
            grad_norm_gen,
            p_exponent: p_exp,
        };
        let mut trace = Vec::new();
        if let (Some(e), Some(rates)) = (&bg.e_k, &bg.swap_rates) {
            for (k, (&t, &ek)) in temps.iter().zip(e).enumerate() {
                trace.push(TraceRow {
                    update,
                    k,
                    t_k: t,
                    e_k: ek,
                    swap_rate: rates.get(k).copied(),
                });
            }
        }
        Ok(StepReport {
            update,
            objective: bg.objective,
            metrics,
            trace,
            grid_updated,
        })
    }

    /// Refit RBF grids to at most `grid.samples` of the step's latents.
    fn grid_update(&mut self, latents: &[Vec<f64>]) -> Result<usize> {
        let c = &self.config;
        if latents.is_empty() || c.grid_samples == 0 {
            return Ok(0);
        }
        let stride = latents.len().div_ceil(c.grid_samples).max(1);
        let picked: Vec<Vec<f64>> = latents.iter().step_by(stride).cloned().collect();
        let mut n = 0;
        if c.grid_update_prior && c.prior_basis == BasisKind::Rbf {
            n += self
                .model
                .prior
                .update_grids(&picked, c.grid_ratio, c.grid_decay)?;
        }
        let kan_rbf = matches!(&self.model.generator.arch, Architecture::Kan(_))
            && c.gen_basis == BasisKind::Rbf;
        if c.grid_update_gen && kan_rbf {
            n += self
                .model
                .generator
                .update_grids(&picked, c.grid_ratio, c.grid_decay)?;
        }
        Ok(n)
    }

    /// Run the remaining updates of the configured epochs, resuming at
    /// `self.update`.
    pub fn train(&mut self, data: &[Vec<f64>], obs: &mut dyn TrainObserver) -> Result<()> {
        self.train_until(data, obs, u64::MAX)
    }

    /// As [`Trainer::train`] but stop once `limit` updates are done. The
    /// final checkpoint is only emitted when the run is complete.
    pub fn train_until(
        &mut self,
        data: &[Vec<f64>],
        obs: &mut dyn TrainObserver,
        limit: u64,
    ) -> Result<()> {
        if data.is_empty() {
            return Err(KaemError::EmptyBatch);
        }
        let bpe = self.batches_per_epoch(data.len());
        let total = self.total_updates(data.len());
        let bs = self.config.batch_size;
        while self.update < total.min(limit) {
            let epoch = (self.update / bpe as u64) as usize;
            let order = self.epoch_order(epoch, data.len());
            let first = (self.update % bpe as u64) as usize;
            for b in first..bpe {
                if self.update >= limit {
                    return Ok(());
                }
                let idx = &order[b * bs..((b + 1) * bs).min(data.len())];
                let batch: Vec<&[f64]> = idx.iter().map(|&i| data[i].as_slice()).collect();
                let report = match self.step(&batch, total) {
                    Ok(r) => r,
                    Err(e @ KaemError::NonFiniteObjective { .. }) => {
                        obs.on_abort(self)?;
                        return Err(e);
                    }
                    Err(e) => return Err(e),
                };
                let log = report.update % self.config.metrics_every as u64 == 0;
                obs.on_step(self, &report, log)?;
                let every = self.config.checkpoint_every as u64;
                if every > 0 && report.update % every == 0 {
                    obs.on_checkpoint(self, &format!("update-{}", report.update))?;
                }
            }
            obs.on_checkpoint(self, &format!("epoch-{}", epoch + 1))?;
        }
        if self.update >= total {
            obs.on_checkpoint(self, "final")?;
        }
        Ok(())
    }
}
