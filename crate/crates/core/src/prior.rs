//! Exponentially tilted univariate priors and their factorized / mixture
//! products.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::{BaseActivation, BasisKind, UnivariateBasis};
use crate::error::{KaemError, Result};
use crate::quadrature::QuadratureRule;

/// Log-density returned outside a truncated support.
pub const OUT_OF_DOMAIN_LOG_DENSITY: f64 = -1e10;

/// Wavelets with |scale| below this fraction of the domain width get their
/// own quadrature panels.
const NARROW_FEATURE_FRACTION: f64 = 0.05;
const NARROW_PANEL_NODES: usize = 24;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseDensity {
    Gaussian,
    Uniform,
    None,
}

impl BaseDensity {
    #[inline]
    pub fn log_density(self, z: f64) -> f64 {
        match self {
            BaseDensity::Gaussian => -0.5 * z * z - LN_SQRT_2PI,
            BaseDensity::Uniform => {
                if (0.0..=1.0).contains(&z) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            BaseDensity::None => 0.0,
        }
    }

    #[inline]
    pub fn dlog_density(self, z: f64) -> f64 {
        match self {
            BaseDensity::Gaussian => -z,
            _ => 0.0,
        }
    }

    /// Initial support before any grid updating.
    pub fn default_domain(self) -> (f64, f64) {
        match self {
            BaseDensity::Uniform => (0.0, 1.0),
            BaseDensity::Gaussian => (-1.5, 1.5),
            BaseDensity::None => (-1.2, 1.2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseDensity::Gaussian => "gaussian",
            BaseDensity::Uniform => "uniform",
            BaseDensity::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(BaseDensity::Gaussian),
            "uniform" => Ok(BaseDensity::Uniform),
            "none" | "lebesgue" => Ok(BaseDensity::None),
            other => Err(KaemError::Parse(format!("unknown base density '{other}'"))),
        }
    }

    fn kinks(self) -> &'static [f64] {
        match self {
            BaseDensity::Uniform => &[0.0, 1.0],
            _ => &[],
        }
    }
}

/// One tilted density `exp(f(z))·π0(z)/Z` on a bounded domain.
#[derive(Debug, Clone)]
pub struct TiltedDensity1D {
    pub energy: UnivariateBasis,
    pub base: BaseDensity,
    pub n_quad: usize,
    quad: QuadratureRule,
    log_z: Option<f64>,
    cdf_knots: Vec<f64>,
    cdf: Vec<f64>,
    expected_grad: Vec<f64>,
}

impl TiltedDensity1D {
    pub fn new(energy: UnivariateBasis, base: BaseDensity, n_quad: usize) -> Self {
        Self {
            energy,
            base,
            n_quad,
            quad: QuadratureRule {
                nodes: Vec::new(),
                weights: Vec::new(),
            },
            log_z: None,
            cdf_knots: Vec::new(),
            cdf: Vec::new(),
            expected_grad: Vec::new(),
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        self.energy.domain
    }

    /// Truncated supports return a sentinel outside the domain; wavelet
    /// energies have global support and are evaluated everywhere.
    pub fn truncated(&self) -> bool {
        self.energy.kind() == BasisKind::Rbf || self.base == BaseDensity::Uniform
    }

    pub fn is_normalized(&self) -> bool {
        self.log_z.is_some()
    }

    pub fn log_partition(&self) -> Result<f64> {
        self.log_z.ok_or(KaemError::NotNormalized)
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quad
    }

    /// CDF table knots and values (C_0 = 0 … C_N = 1).
    pub fn cdf_table(&self) -> (&[f64], &[f64]) {
        (&self.cdf_knots, &self.cdf)
    }

    /// E_p[∂f/∂θ], i.e. ∂ log Z/∂θ, from the last normalization.
    pub fn expected_energy_grad(&self) -> &[f64] {
        &self.expected_grad
    }

    /// Mark stale after a parameter change.
    pub fn invalidate(&mut self) {
        self.log_z = None;
    }

    /// Recompute Z by quadrature, rebuild the CDF table and ∂ log Z/∂θ.
    pub fn normalize(&mut self) -> Result<()> {
        self.log_z = None;
        self.energy.validate()?;
        let (a, b) = self.domain();
        let mut breaks: Vec<f64> = self.base.kinks().to_vec();
        if let Some(k) = self.energy.activation.kink() {
            if self.energy.base_scale != 0.0 {
                breaks.push(k);
            }
        }
        let narrow = self
            .energy
            .narrow_features(NARROW_FEATURE_FRACTION * (b - a));
        self.quad = if narrow.is_empty() {
            QuadratureRule::composite(self.n_quad, a, b, &breaks)
        } else {
            breaks.extend(narrow);
            QuadratureRule::panels(self.n_quad, a, b, &breaks, NARROW_PANEL_NODES)
        };

        let logs: Vec<f64> = self
            .quad
            .nodes
            .iter()
            .map(|&z| self.energy.eval_unchecked(z) + self.base.log_density(z))
            .collect();
        if logs.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(KaemError::DegeneratePartition(f64::NAN));
        }
        let shift = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(KaemError::DegeneratePartition(shift));
        }
        let masses: Vec<f64> = logs
            .iter()
            .zip(&self.quad.weights)
            .map(|(l, w)| w * (l - shift).exp())
            .collect();
        let total: f64 = masses.iter().sum();
        let log_z = shift + total.ln();
        if !(total > 0.0 && log_z.is_finite()) {
            return Err(KaemError::DegeneratePartition(log_z));
        }

        let n = masses.len();
        self.cdf_knots = Vec::with_capacity(n + 1);
        self.cdf = Vec::with_capacity(n + 1);
        self.cdf_knots.push(a);
        self.cdf.push(0.0);
        let (mut pos, mut acc) = (a, 0.0);
        for (w, m) in self.quad.weights.iter().zip(&masses) {
            pos += w;
            acc += m / total;
            self.cdf_knots.push(pos);
            self.cdf.push(acc);
        }
        self.cdf_knots[n] = b;
        self.cdf[n] = 1.0;

        let mut eg = vec![0.0; self.energy.num_params()];
        for (&z, m) in self.quad.nodes.iter().zip(&masses) {
            self.energy.accumulate_grad_params(z, m / total, &mut eg);
        }
        self.expected_grad = eg;
        self.log_z = Some(log_z);
        Ok(())
    }

    fn in_domain(&self, z: f64) -> bool {
        let (a, b) = self.domain();
        z >= a && z <= b
    }

    pub fn log_density(&self, z: f64) -> Result<f64> {
        let log_z = self.log_partition()?;
        if !z.is_finite() {
            return Err(KaemError::NonFiniteInput(z));
        }
        if self.truncated() && !self.in_domain(z) {
            return Ok(OUT_OF_DOMAIN_LOG_DENSITY);
        }
        let lb = self.base.log_density(z);
        if lb == f64::NEG_INFINITY {
            return Ok(OUT_OF_DOMAIN_LOG_DENSITY);
        }
        Ok(self.energy.eval_unchecked(z) + lb - log_z)
    }

    /// Log-density and its derivative in z.
    pub fn log_density_and_dz(&self, z: f64) -> Result<(f64, f64)> {
        let log_z = self.log_partition()?;
        if !z.is_finite() {
            return Err(KaemError::NonFiniteInput(z));
        }
        if self.truncated() && !self.in_domain(z) {
            return Ok((OUT_OF_DOMAIN_LOG_DENSITY, 0.0));
        }
        let lb = self.base.log_density(z);
        if lb == f64::NEG_INFINITY {
            return Ok((OUT_OF_DOMAIN_LOG_DENSITY, 0.0));
        }
        let (f, df) = self.energy.eval_and_grad_input_unchecked(z);
        Ok((f + lb - log_z, df + self.base.dlog_density(z)))
    }

    /// Accumulate `scale · ∂ log p(z)/∂θ = scale·(∂f/∂θ(z) − E_p[∂f/∂θ])`.
    pub fn accumulate_score(&self, z: f64, scale: f64, out: &mut [f64]) -> Result<()> {
        self.log_partition()?;
        if self.truncated() && !self.in_domain(z) {
            return Ok(());
        }
        self.energy.accumulate_grad_params(z, scale, out);
        for (o, e) in out.iter_mut().zip(&self.expected_grad) {
            *o -= scale * e;
        }
        Ok(())
    }

    /// Inverse transform: smallest CDF bin with C_j ≥ u, then linear
    /// interpolation across that bin.
    pub fn its_sample(&self, u: f64) -> Result<f64> {
        self.log_partition()?;
        if !(0.0..=1.0).contains(&u) {
            return Err(KaemError::UniformOutOfRange(u));
        }
        let j = self.cdf.partition_point(|&c| c < u).max(1);
        let j = j.min(self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
        let t = if c1 > c0 {
            ((u - c0) / (c1 - c0)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        Ok((1.0 - t) * self.cdf_knots[j - 1] + t * self.cdf_knots[j])
    }

    /// The piecewise-linear CDF implied by the table (inverse of ITS).
    pub fn cdf(&self, z: f64) -> Result<f64> {
        self.log_partition()?;
        let k = &self.cdf_knots;
        if z <= k[0] {
            return Ok(0.0);
        }
        if z >= k[k.len() - 1] {
            return Ok(1.0);
        }
        let j = k.partition_point(|&x| x < z).max(1);
        let t = (z - k[j - 1]) / (k[j] - k[j - 1]);
        Ok(self.cdf[j - 1] + t * (self.cdf[j] - self.cdf[j - 1]))
    }

    /// π0 renormalized on the domain, for reference curves.
    pub fn base_density_on_domain(&self, z: f64) -> f64 {
        let (a, b) = self.domain();
        if z < a || z > b {
            return 0.0;
        }
        let log_z0 = match self.base {
            BaseDensity::Gaussian => {
                let q = QuadratureRule::gauss_legendre(self.n_quad.max(64), a, b);
                q.integrate(|x| self.base.log_density(x).exp()).ln()
            }
            BaseDensity::Uniform => (b.min(1.0) - a.max(0.0)).max(f64::MIN_POSITIVE).ln(),
            BaseDensity::None => (b - a).ln(),
        };
        (self.base.log_density(z) - log_z0).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PriorMode {
    /// Every (q, p) density is its own latent coordinate; dimension Q·P.
    Factorized,
    /// One mixture over p per coordinate q; dimension Q.
    Mixture,
}

impl PriorMode {
    pub fn name(self) -> &'static str {
        match self {
            PriorMode::Factorized => "factorized",
            PriorMode::Mixture => "mixture",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "factorized" | "univariate" => Ok(PriorMode::Factorized),
            "mixture" => Ok(PriorMode::Mixture),
            other => Err(KaemError::Parse(format!("unknown prior mode '{other}'"))),
        }
    }
}

/// Hyperparameters for building a prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub q: usize,
    pub p: usize,
    pub mode: PriorMode,
    pub basis: BasisKind,
    pub n_basis: usize,
    pub activation: BaseActivation,
    pub base: BaseDensity,
    pub domain: Option<(f64, f64)>,
    pub n_quad: usize,
    pub init_noise: f64,
    pub mu: f64,
    pub base_scale: f64,
    pub spline_scale: f64,
    pub tau: f64,
    pub tau_trainable: bool,
    pub lambda: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            q: 3,
            p: 1,
            mode: PriorMode::Factorized,
            basis: BasisKind::Rbf,
            n_basis: 20,
            activation: BaseActivation::Relu,
            base: BaseDensity::Gaussian,
            domain: None,
            n_quad: 200,
            init_noise: 0.1,
            mu: 1.0,
            base_scale: 1.0,
            spline_scale: 1.0,
            tau: 1.0,
            tau_trainable: true,
            lambda: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixturePrior {
    pub q: usize,
    pub p: usize,
    pub mode: PriorMode,
    /// Row-major: component (q, p) at index q·P + p.
    pub components: Vec<TiltedDensity1D>,
    pub logits: Vec<f64>,
    pub lambda: f64,
}

fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl MixturePrior {
    /// Build and normalize a prior; coefficient noise is drawn from `rng`.
    pub fn new(spec: &PriorSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.q == 0 || spec.p == 0 {
            return Err(KaemError::InvalidConfig(
                "prior needs Q ≥ 1 and P ≥ 1".into(),
            ));
        }
        let domain = spec.domain.unwrap_or_else(|| spec.base.default_domain());
        let mut components = Vec::with_capacity(spec.q * spec.p);
        for _ in 0..spec.q * spec.p {
            let mut basis = match spec.basis {
                BasisKind::Rbf => UnivariateBasis::rbf_uniform(domain, spec.n_basis, spec.mu),
                BasisKind::Morlet => UnivariateBasis::morlet_uniform(
                    domain,
                    spec.n_basis,
                    spec.tau,
                    spec.tau_trainable,
                ),
            };
            basis.activation = spec.activation;
            basis.base_scale = spec.base_scale;
            basis.spline_scale = spec.spline_scale;
            for c in basis.coefficients.iter_mut() {
                let n: f64 = StandardNormal.sample(rng);
                *c = spec.init_noise * n;
            }
            components.push(TiltedDensity1D::new(basis, spec.base, spec.n_quad));
        }
        let mut prior = Self {
            q: spec.q,
            p: spec.p,
            mode: spec.mode,
            components,
            logits: vec![0.0; spec.q * spec.p],
            lambda: spec.lambda,
        };
        prior.normalize_all()?;
        Ok(prior)
    }

    pub fn latent_dim(&self) -> usize {
        match self.mode {
            PriorMode::Factorized => self.q * self.p,
            PriorMode::Mixture => self.q,
        }
    }

    pub fn component(&self, q: usize, p: usize) -> &TiltedDensity1D {
        &self.components[q * self.p + p]
    }

    /// Softmax of the logits for coordinate q.
    pub fn alpha_row(&self, q: usize) -> Vec<f64> {
        let row = &self.logits[q * self.p..(q + 1) * self.p];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    /// log α for row `q` without allocating.
    fn log_alpha_row(&self, q: usize) -> impl Iterator<Item = f64> + '_ {
        let row = &self.logits[q * self.p..(q + 1) * self.p];
        let lse = logsumexp(row);
        row.iter().map(move |l| l - lse)
    }

    pub fn alpha(&self) -> Vec<f64> {
        (0..self.q).flat_map(|q| self.alpha_row(q)).collect()
    }

    /// λ·Σ|α|, subtracted from the objective.
    pub fn regularizer(&self) -> f64 {
        match self.mode {
            PriorMode::Mixture => self.lambda * self.alpha().iter().map(|a| a.abs()).sum::<f64>(),
            PriorMode::Factorized => 0.0,
        }
    }

    pub fn normalize_all(&mut self) -> Result<()> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            self.components
                .par_iter_mut()
                .map(|c| c.normalize())
                .collect::<Result<Vec<()>>>()?;
        }
        #[cfg(not(feature = "parallel"))]
        for c in self.components.iter_mut() {
            c.normalize()?;
        }
        Ok(())
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.latent_dim() {
            return Err(KaemError::DimensionMismatch {
                expected: self.latent_dim(),
                got: z.len(),
            });
        }
        Ok(())
    }

    /// Exact draw by inverse transform sampling.
    pub fn sample_prior(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        match self.mode {
            PriorMode::Factorized => self
                .components
                .iter()
                .map(|c| c.its_sample(rng.random::<f64>()))
                .collect(),
            PriorMode::Mixture => (0..self.q)
                .map(|q| {
                    let alpha = self.alpha_row(q);
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut chosen = self.p - 1;
                    for (p, a) in alpha.iter().enumerate() {
                        acc += a;
                        if u < acc {
                            chosen = p;
                            break;
                        }
                    }
                    self.component(q, chosen).its_sample(rng.random::<f64>())
                })
                .collect(),
        }
    }

    /// Per-coordinate component log-terms log α_{q,p} + log p_{q,p}(z_q).
    fn mixture_terms(&self, q: usize, zq: f64, alpha: &[f64]) -> Result<Vec<f64>> {
        (0..self.p)
            .map(|p| Ok(alpha[p].ln() + self.component(q, p).log_density(zq)?))
            .collect()
    }

    pub fn log_prior(&self, z: &[f64]) -> Result<f64> {
        self.check_dim(z)?;
        match self.mode {
            PriorMode::Factorized => {
                let mut s = 0.0;
                for (c, &v) in self.components.iter().zip(z) {
                    s += c.log_density(v)?;
                }
                Ok(s)
            }
            PriorMode::Mixture => {
                let mut s = 0.0;
                for (q, &zq) in z.iter().enumerate() {
                    let alpha = self.alpha_row(q);
                    s += logsumexp(&self.mixture_terms(q, zq, &alpha)?);
                }
                Ok(s)
            }
        }
    }

    /// log p(z) and ∇_z log p(z).
    pub fn log_prior_and_grad_z(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(z)?;
        let mut grad = vec![0.0; z.len()];
        let mut total = 0.0;
        match self.mode {
            PriorMode::Factorized => {
                for ((c, &v), g) in self.components.iter().zip(z).zip(grad.iter_mut()) {
                    let (l, d) = c.log_density_and_dz(v)?;
                    total += l;
                    *g = d;
                }
            }
            PriorMode::Mixture => {
                let mut terms = Vec::with_capacity(self.p);
                let mut derivs = Vec::with_capacity(self.p);
                for (q, &zq) in z.iter().enumerate() {
                    terms.clear();
                    derivs.clear();
                    let log_alpha = self.log_alpha_row(q);
                    for (p, la) in log_alpha.enumerate() {
                        let (l, d) = self.component(q, p).log_density_and_dz(zq)?;
                        terms.push(la + l);
                        derivs.push(d);
                    }
                    let lse = logsumexp(&terms);
                    total += lse;
                    grad[q] = terms
                        .iter()
                        .zip(&derivs)
                        .map(|(t, d)| (t - lse).exp() * d)
                        .sum();
                }
            }
        }
        Ok((total, grad))
    }

    pub fn num_params(&self) -> usize {
        let energies: usize = self.components.iter().map(|c| c.energy.num_params()).sum();
        match self.mode {
            PriorMode::Factorized => energies,
            PriorMode::Mixture => energies + self.logits.len(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for c in &self.components {
            c.energy.write_params(&mut out);
        }
        if self.mode == PriorMode::Mixture {
            out.extend_from_slice(&self.logits);
        }
        out
    }

    /// Overwrite parameters and renormalize every component.
    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(KaemError::DimensionMismatch {
                expected: self.num_params(),
                got: p.len(),
            });
        }
        let mut k = 0;
        for c in self.components.iter_mut() {
            k += c.energy.set_params(&p[k..]);
            c.invalidate();
        }
        if self.mode == PriorMode::Mixture {
            self.logits.copy_from_slice(&p[k..]);
        }
        self.normalize_all()
    }

    /// Offsets of each component's parameter block in the flat vector.
    pub fn param_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.components.len() + 1);
        let mut k = 0;
        for c in &self.components {
            offs.push(k);
            k += c.energy.num_params();
        }
        offs.push(k);
        offs
    }

    /// ∂/∂θ of `log p(z) − λΣ|α|`, exact through the quadrature partition
    /// functions, the logsumexp and the softmax.
    pub fn grad_log_prior_params(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.num_params()];
        self.accumulate_grad_log_prior_params(z, 1.0, &mut g)?;
        self.accumulate_regularizer_grad(1.0, &mut g);
        Ok(g)
    }

    /// Accumulate `scale·∇_θ log p(z)` (without the regularizer).
    pub fn accumulate_grad_log_prior_params(
        &self,
        z: &[f64],
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        self.check_dim(z)?;
        let offs = self.param_offsets();
        match self.mode {
            PriorMode::Factorized => {
                for (i, (c, &v)) in self.components.iter().zip(z).enumerate() {
                    c.accumulate_score(v, scale, &mut out[offs[i]..offs[i + 1]])?;
                }
            }
            PriorMode::Mixture => {
                let logit_off = offs[self.components.len()];
                for (q, &zq) in z.iter().enumerate() {
                    let alpha = self.alpha_row(q);
                    let terms = self.mixture_terms(q, zq, &alpha)?;
                    let lse = logsumexp(&terms);
                    for p in 0..self.p {
                        let r = (terms[p] - lse).exp();
                        let i = q * self.p + p;
                        self.components[i].accumulate_score(
                            zq,
                            scale * r,
                            &mut out[offs[i]..offs[i + 1]],
                        )?;
                        out[logit_off + i] += scale * (r - alpha[p]);
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulate `scale·∇_logits(−λΣ|α|)`.
    pub fn accumulate_regularizer_grad(&self, scale: f64, out: &mut [f64]) {
        if self.mode != PriorMode::Mixture || self.lambda == 0.0 {
            return;
        }
        let logit_off = self.num_params() - self.logits.len();
        for q in 0..self.q {
            let alpha = self.alpha_row(q);
            let signed: f64 = alpha.iter().map(|a| a.signum() * a).sum();
            for p in 0..self.p {
                // ∂α_j/∂l_p = α_j(δ_jp − α_p)
                let d = alpha[p].signum() * alpha[p] - alpha[p] * signed;
                out[logit_off + q * self.p + p] -= scale * self.lambda * d;
            }
        }
    }

    /// Accumulate `scale·∇_θ Σ_{q,p} f_{q,p}(z_{q,p})` (factorized layout).
    pub fn accumulate_energy_grad(&self, z: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        if self.mode != PriorMode::Factorized {
            return Err(KaemError::Invalid(
                "energy-sum gradients use the factorized layout".into(),
            ));
        }
        self.check_dim(z)?;
        let offs = self.param_offsets();
        for (i, (c, &v)) in self.components.iter().zip(z).enumerate() {
            if c.truncated() && (v < c.domain().0 || v > c.domain().1) {
                continue;
            }
            c.energy
                .accumulate_grad_params(v, scale, &mut out[offs[i]..offs[i + 1]]);
        }
        Ok(())
    }

    /// Contrastive-divergence prior gradient:
    /// mean_post ∇Σf − mean_prior ∇Σf.
    pub fn cd_prior_gradient(
        &self,
        posterior_samples: &[Vec<f64>],
        prior_samples: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        if posterior_samples.is_empty() || prior_samples.is_empty() {
            return Err(KaemError::EmptyBatch);
        }
        let mut g = vec![0.0; self.num_params()];
        let wp = 1.0 / posterior_samples.len() as f64;
        for z in posterior_samples {
            self.accumulate_energy_grad(z, wp, &mut g)?;
        }
        let wq = -1.0 / prior_samples.len() as f64;
        for z in prior_samples {
            self.accumulate_energy_grad(z, wq, &mut g)?;
        }
        Ok(g)
    }

    /// Marginal density of coordinate `dim`: the (q, p) component in
    /// factorized mode, the α-weighted mixture of row q otherwise.
    pub fn marginal_density(&self, dim: usize, z: f64) -> Result<f64> {
        match self.mode {
            PriorMode::Factorized => {
                let c = self
                    .components
                    .get(dim)
                    .ok_or_else(|| KaemError::Invalid(format!("no prior dimension {dim}")))?;
                Ok(c.log_density(z)?.exp())
            }
            PriorMode::Mixture => {
                if dim >= self.q {
                    return Err(KaemError::Invalid(format!("no prior dimension {dim}")));
                }
                let alpha = self.alpha_row(dim);
                let mut s = 0.0;
                for (p, a) in alpha.iter().enumerate() {
                    s += a * self.component(dim, p).log_density(z)?.exp();
                }
                Ok(s)
            }
        }
    }

    /// Domain and reference density of the given plotting dimension.
    pub fn marginal_reference(&self, dim: usize) -> Result<(&TiltedDensity1D, (f64, f64))> {
        let c = match self.mode {
            PriorMode::Factorized => self.components.get(dim),
            PriorMode::Mixture => {
                if dim < self.q {
                    Some(self.component(dim, 0))
                } else {
                    None
                }
            }
        }
        .ok_or_else(|| KaemError::Invalid(format!("no prior dimension {dim}")))?;
        Ok((c, c.domain()))
    }

    pub fn plot_dims(&self) -> usize {
        self.latent_dim()
    }

    /// Grid-dependent state (domains, RBF grids and bandwidths), flattened.
    pub fn structure(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &self.components {
            out.push(c.energy.domain.0);
            out.push(c.energy.domain.1);
            if let crate::basis::BasisFamily::Rbf { grid, bandwidths } = &c.energy.family {
                out.extend_from_slice(grid);
                out.extend_from_slice(bandwidths);
            }
        }
        out
    }

    pub fn set_structure(&mut self, s: &[f64]) -> Result<()> {
        let mut k = 0;
        for c in self.components.iter_mut() {
            if k + 2 > s.len() {
                return Err(KaemError::Truncated("prior structure".into()));
            }
            c.energy.domain = (s[k], s[k + 1]);
            k += 2;
            if let crate::basis::BasisFamily::Rbf { grid, bandwidths } = &mut c.energy.family {
                let n = grid.len();
                if k + 2 * n > s.len() {
                    return Err(KaemError::Truncated("prior structure".into()));
                }
                grid.copy_from_slice(&s[k..k + n]);
                bandwidths.copy_from_slice(&s[k + n..k + 2 * n]);
                k += 2 * n;
            }
            c.invalidate();
        }
        if k != s.len() {
            return Err(KaemError::Parse("prior structure length mismatch".into()));
        }
        self.normalize_all()
    }

    /// Apply the periodic grid update to every RBF component using the
    /// matching coordinate of `samples`.
    pub fn update_grids(&mut self, samples: &[Vec<f64>], ratio: f64, decay: f64) -> Result<usize> {
        let mut updated = 0;
        let dim = self.latent_dim();
        for i in 0..self.components.len() {
            if self.components[i].energy.kind() != BasisKind::Rbf {
                continue;
            }
            let coord = match self.mode {
                PriorMode::Factorized => i,
                PriorMode::Mixture => i / self.p,
            };
            debug_assert!(coord < dim);
            let xs: Vec<f64> = samples.iter().map(|z| z[coord]).collect();
            let up = self.components[i].energy.update_grid(&xs, ratio, decay)?;
            if !up.degenerate {
                self.components[i].energy = up.basis;
                self.components[i].invalidate();
                updated += 1;
            }
        }
        self.normalize_all()?;
        Ok(updated)
    }
}

/// log N(z; 0, 1), exposed for tests and oracles.
pub fn std_normal_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}
