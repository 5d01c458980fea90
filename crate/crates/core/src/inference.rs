//! Posterior samplers: importance sampling with residual resampling, ULA,
//! and tempered ULA populations with deterministic even-odd swaps.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{KaemError, Result};
use crate::generator::GeneratorNet;
use crate::prior::MixturePrior;
use crate::rng::StreamRng;

/// A latent posterior p(z|x) ∝ p(z)·p(x|z) seen through its two factors.
pub trait LatentTarget: Sync {
    fn dim(&self) -> usize;
    /// log p(z) and ∇_z log p(z).
    fn log_prior_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)>;
    /// log p(x|z) and ∇_z log p(x|z).
    fn log_lik_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)>;
    fn log_lik(&self, z: &[f64]) -> Result<f64> {
        Ok(self.log_lik_and_grad(z)?.0)
    }
    /// Exact prior draw.
    fn sample_prior(&self, rng: &mut StreamRng) -> Result<Vec<f64>>;
}

/// The model posterior for one observation.
pub struct PosteriorTarget<'a> {
    pub prior: &'a MixturePrior,
    pub generator: &'a GeneratorNet,
    pub x: &'a [f64],
}

impl LatentTarget for PosteriorTarget<'_> {
    fn dim(&self) -> usize {
        self.prior.latent_dim()
    }

    fn log_prior_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.prior.log_prior_and_grad_z(z)
    }

    fn log_lik_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.generator.log_likelihood_and_grad_z(self.x, z)
    }

    fn log_lik(&self, z: &[f64]) -> Result<f64> {
        self.generator.log_likelihood(self.x, z)
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> Result<Vec<f64>> {
        self.prior.sample_prior(rng)
    }
}

/// 1/Σw² for weights that sum to one.
pub fn ess(w: &[f64]) -> Result<f64> {
    let s: f64 = w.iter().sum();
    if w.is_empty() || (s - 1.0).abs() > 1e-9 || w.iter().any(|v| !(*v >= 0.0)) {
        return Err(KaemError::UnnormalizedWeights(s));
    }
    Ok(1.0 / w.iter().map(|v| v * v).sum::<f64>())
}

/// log((1/N)·Σ exp(v_i)) with the maximum factored out.
pub fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// Softmax of log-weights; fails when every weight underflows to zero.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    if log_w.iter().any(|v| v.is_nan()) {
        return Err(KaemError::WeightAnnihilation);
    }
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(KaemError::WeightAnnihilation);
    }
    let e: Vec<f64> = log_w.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// Residual resampling. Returns the ancestor index of every output slot;
/// particle s appears ⌊N·w_s⌋ times plus its share of the R residual draws.
pub fn residual_resample(w: &[f64], rng: &mut impl Rng) -> Result<Vec<usize>> {
    ess(w)?;
    let n = w.len();
    let nf = n as f64;
    let det: Vec<usize> = w.iter().map(|v| (nf * v).floor() as usize).collect();
    let mut idx = Vec::with_capacity(n);
    for (s, &c) in det.iter().enumerate() {
        idx.extend(std::iter::repeat_n(s, c));
    }
    let r = n - idx.len();
    if r > 0 {
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for (s, v) in w.iter().enumerate() {
            acc += (nf * v - det[s] as f64) / r as f64;
            cdf.push(acc);
        }
        let total = acc;
        for _ in 0..r {
            let u = rng.random::<f64>() * total;
            let j = cdf.partition_point(|&c| c <= u).min(n - 1);
            idx.push(j);
        }
    }
    Ok(idx)
}

/// Deterministic copy counts ⌊N·w_s⌋.
pub fn residual_deterministic_counts(w: &[f64]) -> Result<Vec<usize>> {
    ess(w)?;
    let nf = w.len() as f64;
    Ok(w.iter().map(|v| (nf * v).floor() as usize).collect())
}

#[derive(Debug, Clone)]
pub struct WeightedParticles {
    pub particles: Vec<Vec<f64>>,
    /// log p(x|z) of every particle (after any resampling).
    pub log_lik: Vec<f64>,
    pub weights: Vec<f64>,
    /// log((1/N)·Σ_s p(x|z_s)) over the prior draws.
    pub log_evidence: f64,
    /// ESS of the weights before any resampling.
    pub ess: f64,
    pub resampled: bool,
}

/// Draw `n` prior particles, weight them by the likelihood and residual
/// resample when ESS < γ·n.
pub fn importance_sample(
    target: &dyn LatentTarget,
    n: usize,
    gamma: f64,
    rng: &mut StreamRng,
) -> Result<WeightedParticles> {
    if n < 2 {
        return Err(KaemError::InvalidConfig(
            "importance sampling needs N ≥ 2".into(),
        ));
    }
    let mut particles = Vec::with_capacity(n);
    let mut log_lik = Vec::with_capacity(n);
    for _ in 0..n {
        let z = target.sample_prior(rng)?;
        log_lik.push(target.log_lik(&z)?);
        particles.push(z);
    }
    let weights = normalize_log_weights(&log_lik)?;
    let e = ess(&weights)?;
    let log_evidence = log_mean_exp(&log_lik);
    if e < gamma * n as f64 {
        let idx = residual_resample(&weights, rng)?;
        Ok(WeightedParticles {
            particles: idx.iter().map(|&i| particles[i].clone()).collect(),
            log_lik: idx.iter().map(|&i| log_lik[i]).collect(),
            weights: vec![1.0 / n as f64; n],
            log_evidence,
            ess: e,
            resampled: true,
        })
    } else {
        Ok(WeightedParticles {
            particles,
            log_lik,
            weights,
            log_evidence,
            ess: e,
            resampled: false,
        })
    }
}

/// Σ_s w_s ρ(z_s) under importance sampling.
pub fn importance_posterior_expectation(
    target: &dyn LatentTarget,
    n: usize,
    gamma: f64,
    rho: impl Fn(&[f64]) -> f64,
    rng: &mut StreamRng,
) -> Result<f64> {
    let wp = importance_sample(target, n, gamma, rng)?;
    Ok(wp
        .particles
        .iter()
        .zip(&wp.weights)
        .map(|(z, w)| w * rho(z))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UlaConfig {
    pub eta: f64,
    pub n_local: usize,
}

impl UlaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) || self.n_local == 0 {
            return Err(KaemError::InvalidConfig(format!(
                "ULA needs η ≥ 0 and N_local ≥ 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One Euler-Maruyama step z ← z + η∇ + √(2η)ξ in place.
#[inline]
fn ula_step(z: &mut [f64], grad: &[f64], eta: f64, rng: &mut impl Rng) {
    let sd = (2.0 * eta).sqrt();
    for (v, g) in z.iter_mut().zip(grad) {
        let n: f64 = StandardNormal.sample(rng);
        *v += eta * g + sd * n;
    }
}

fn check_grad(g: &[f64], iteration: usize) -> Result<()> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(KaemError::NonFiniteGradient { iteration })
    }
}

/// Run `n_local` ULA steps on a log-density from `z0`; returns the final state.
pub fn ula_chain(
    log_density_and_grad: impl Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
    z0: &[f64],
    cfg: UlaConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut z = z0.to_vec();
    for it in 0..cfg.n_local {
        let (_, g) = log_density_and_grad(&z)?;
        check_grad(&g, it)?;
        ula_step(&mut z, &g, cfg.eta, rng);
    }
    Ok(z)
}

/// t·log p(x|z) + log p(z), its latent gradient, and log p(x|z).
pub fn power_posterior_logdensity_and_grad(
    target: &dyn LatentTarget,
    t: f64,
    z: &[f64],
) -> Result<(f64, Vec<f64>, f64)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(KaemError::Invalid(format!(
            "temperature {t} outside [0, 1]"
        )));
    }
    let (lp, mut g) = target.log_prior_and_grad(z)?;
    let (ll, gl) = target.log_lik_and_grad(z)?;
    for (a, b) in g.iter_mut().zip(&gl) {
        *a += t * b;
    }
    Ok((lp + t * ll, g, ll))
}

/// Short-run posterior chains from fresh prior draws (t = 1).
pub fn ula_posterior_samples(
    target: &dyn LatentTarget,
    n: usize,
    cfg: UlaConfig,
    rng: &mut StreamRng,
) -> Result<Vec<Vec<f64>>> {
    (0..n)
        .map(|_| {
            let z0 = target.sample_prior(rng)?;
            ula_chain(
                |z| {
                    let (v, g, _) = power_posterior_logdensity_and_grad(target, 1.0, z)?;
                    Ok((v, g))
                },
                &z0,
                cfg,
                rng,
            )
        })
        .collect()
}

/// t_k = (k/N_t)^p for k = 0..N_t.
pub fn power_schedule(n_t: usize, p: f64) -> Result<Vec<f64>> {
    if n_t == 0 || !(p > 0.0 && p.is_finite()) {
        return Err(KaemError::InvalidConfig(format!(
            "schedule needs N_t ≥ 1 and p > 0, got N_t = {n_t}, p = {p}"
        )));
    }
    let mut t: Vec<f64> = (0..=n_t).map(|k| (k as f64 / n_t as f64).powf(p)).collect();
    t[0] = 0.0;
    t[n_t] = 1.0;
    Ok(t)
}

/// Cosine-annealed schedule exponent at update i (1-based).
pub fn anneal_exponent(
    i: usize,
    n_updates: usize,
    p_start: f64,
    p_end: f64,
    n_cycles: usize,
) -> Result<f64> {
    if i == 0 || i > n_updates {
        return Err(KaemError::Invalid(format!(
            "update {i} outside 1..={n_updates}"
        )));
    }
    let phase =
        2.0 * std::f64::consts::PI * (n_cycles as f64 + 0.5) * ((i - 1) as f64 / n_updates as f64);
    Ok(p_start + (p_end - p_start) * 0.5 * (1.0 - phase.cos()))
}

/// log r for swapping the states of adjacent temperatures.
#[inline]
pub fn swap_log_ratio(ll_k: f64, ll_k1: f64, t_k: f64, t_k1: f64) -> f64 {
    (t_k1 - t_k) * (ll_k - ll_k1)
}

/// One replica: state plus cached log-likelihood and gradients.
#[derive(Debug, Clone)]
pub struct Replica {
    pub z: Vec<f64>,
    pub log_lik: f64,
    grad_lik: Vec<f64>,
    grad_prior: Vec<f64>,
}

impl Replica {
    fn new(target: &dyn LatentTarget, z: Vec<f64>) -> Result<Self> {
        let (_, grad_prior) = target.log_prior_and_grad(&z)?;
        let (log_lik, grad_lik) = target.log_lik_and_grad(&z)?;
        Ok(Self {
            z,
            log_lik,
            grad_lik,
            grad_prior,
        })
    }
}

/// `replicas[k][s]`: particle s at temperature t_k.
#[derive(Debug, Clone)]
pub struct ReplicaPopulation {
    pub temps: Vec<f64>,
    pub replicas: Vec<Vec<Replica>>,
    pub swap_attempts: Vec<usize>,
    pub swap_accepts: Vec<usize>,
    fresh: bool,
}

impl ReplicaPopulation {
    /// Every replica from an independent prior draw.
    pub fn from_prior(
        target: &dyn LatentTarget,
        temps: &[f64],
        n: usize,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let replicas = temps
            .iter()
            .map(|_| {
                (0..n)
                    .map(|_| Replica::new(target, target.sample_prior(rng)?))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            temps: temps.to_vec(),
            replicas,
            swap_attempts: vec![0; temps.len().saturating_sub(1)],
            swap_accepts: vec![0; temps.len().saturating_sub(1)],
            fresh: true,
        })
    }

    /// Mark cached log-likelihoods as out of date.
    pub fn invalidate(&mut self) {
        self.fresh = false;
    }

    /// Recompute every cached quantity.
    pub fn refresh(&mut self, target: &dyn LatentTarget) -> Result<()> {
        for row in self.replicas.iter_mut() {
            for r in row.iter_mut() {
                *r = Replica::new(target, std::mem::take(&mut r.z))?;
            }
        }
        self.fresh = true;
        Ok(())
    }

    /// One ULA step for every replica at its own temperature.
    pub fn local_step(
        &mut self,
        target: &dyn LatentTarget,
        eta: f64,
        iteration: usize,
        rng: &mut StreamRng,
    ) -> Result<()> {
        let mut g = Vec::new();
        for (k, row) in self.replicas.iter_mut().enumerate() {
            let t = self.temps[k];
            for r in row.iter_mut() {
                g.clear();
                g.extend(r.grad_prior.iter().zip(&r.grad_lik).map(|(a, b)| a + t * b));
                check_grad(&g, iteration)?;
                ula_step(&mut r.z, &g, eta, rng);
                *r = Replica::new(target, std::mem::take(&mut r.z))?;
            }
        }
        self.fresh = true;
        Ok(())
    }

    /// Mean cached log-likelihood per temperature.
    pub fn expected_log_lik(&self) -> Vec<f64> {
        self.replicas
            .iter()
            .map(|row| row.iter().map(|r| r.log_lik).sum::<f64>() / row.len() as f64)
            .collect()
    }

    pub fn swap_rates(&self) -> Vec<f64> {
        self.swap_attempts
            .iter()
            .zip(&self.swap_accepts)
            .map(|(&a, &c)| if a == 0 { 0.0 } else { c as f64 / a as f64 })
            .collect()
    }

    /// States at temperature index k.
    pub fn states(&self, k: usize) -> Vec<Vec<f64>> {
        self.replicas[k].iter().map(|r| r.z.clone()).collect()
    }
}

/// Propose swaps on pairs (k, k+1) with k ≡ parity (mod 2); every particle
/// index accepts independently.
pub fn deo_sweep(pop: &mut ReplicaPopulation, parity: usize, rng: &mut impl Rng) -> Result<()> {
    if !pop.fresh {
        return Err(KaemError::StaleCache);
    }
    let n_temps = pop.temps.len();
    let mut k = parity % 2;
    while k + 1 < n_temps {
        let (lo, hi) = pop.replicas.split_at_mut(k + 1);
        let (row_k, row_k1) = (&mut lo[k], &mut hi[0]);
        let (t_k, t_k1) = (pop.temps[k], pop.temps[k + 1]);
        for (a, b) in row_k.iter_mut().zip(row_k1.iter_mut()) {
            let log_r = swap_log_ratio(a.log_lik, b.log_lik, t_k, t_k1);
            pop.swap_attempts[k] += 1;
            let u: f64 = rng.random();
            if log_r >= 0.0 || u.ln() < log_r {
                std::mem::swap(a, b);
                pop.swap_accepts[k] += 1;
            }
        }
        k += 2;
    }
    Ok(())
}

/// Tempered population: prior initialization, then `n_local` rounds of one
/// ULA step per replica followed by one DEO sweep. Returns the population
/// and E_k, the mean final log-likelihood at every temperature.
pub fn population_ula(
    target: &dyn LatentTarget,
    temps: &[f64],
    n_particles: usize,
    cfg: UlaConfig,
    rng: &mut StreamRng,
) -> Result<(ReplicaPopulation, Vec<f64>)> {
    cfg.validate()?;
    let mut pop = ReplicaPopulation::from_prior(target, temps, n_particles, rng)?;
    for it in 0..cfg.n_local {
        pop.local_step(target, cfg.eta, it, rng)?;
        deo_sweep(&mut pop, it, rng)?;
    }
    let e = pop.expected_log_lik();
    Ok((pop, e))
}
