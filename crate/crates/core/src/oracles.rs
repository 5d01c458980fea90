//! Brute-force and closed-form references.
//!
//! Nothing here calls into the prior, quadrature, or sampler code it is used
//! to check: grids use composite Simpson weights, conjugate quantities are
//! closed forms, and derivatives are central differences.

use std::f64::consts::PI;

use crate::basis::{BaseActivation, BasisFamily, UnivariateBasis};
use crate::error::{KaemError, Result};
use crate::prior::BaseDensity;

/// Central differences without error checking (test helper).
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = f(&p);
            p[i] = orig - step;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Central-difference gradient; fails on any non-finite evaluation.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, params: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = p[i];
        p[i] = orig + step;
        let up = f(&p);
        p[i] = orig - step;
        let down = f(&p);
        p[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(KaemError::Invalid(format!(
                "non-finite evaluation while differencing coordinate {i}"
            )));
        }
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Relative error with a floor relative to the scale of the whole vector.
pub fn max_relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(reference)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * scale.max(1e-12);
    analytic
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).abs() / a.abs().max(r.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// ‖analytic − reference‖∞ / ‖reference‖∞.
pub fn normwise_relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (a, r)| m.max((a - r).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Two-sided Kolmogorov-Smirnov distance between the empirical CDF of
/// `samples` and `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.len() < 100 {
        return Err(KaemError::Invalid(format!(
            "KS statistic needs at least 100 samples, got {}",
            samples.len()
        )));
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < s.len() {
        // ties: the empirical CDF jumps over the whole run at once
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        let f = cdf(s[i]);
        d = d.max(f - i as f64 / n).max((j + 1) as f64 / n - f);
        i = j + 1;
    }
    Ok(d)
}

/// Composite Simpson rule with `n` (rounded up to even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 1 { n + 1 } else { n.max(2) };
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + h * i as f64;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

fn simpson_weights(nodes: usize, a: f64, b: f64) -> Vec<f64> {
    let intervals = nodes - 1;
    let h = (b - a) / intervals as f64;
    (0..nodes)
        .map(|i| {
            let c = if i == 0 || i == intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

fn logsumexp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub const MAX_GRID_NODES: usize = 1_000_001;

/// A one-dimensional latent model tabulated on a grid.
#[derive(Debug, Clone)]
pub struct GridModel1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Log prior density, normalized so Σ w·exp(log_prior) = 1.
    pub log_prior: Vec<f64>,
    pub log_lik: Vec<f64>,
}

impl GridModel1D {
    /// Tabulate on `n` (odd) equally spaced nodes over [a, b]. The prior is
    /// renormalized on the grid.
    pub fn new(
        a: f64,
        b: f64,
        n: usize,
        log_prior: impl Fn(f64) -> f64,
        log_lik: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if n > MAX_GRID_NODES {
            return Err(KaemError::GridTooLarge(n));
        }
        if n < 3 || n % 2 == 0 || a.partial_cmp(&b) != Some(std::cmp::Ordering::Less) {
            return Err(KaemError::Invalid(format!(
                "grid needs an odd node count ≥ 3 over a < b (got n={n}, [{a}, {b}])"
            )));
        }
        let nodes: Vec<f64> = (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect();
        let weights = simpson_weights(n, a, b);
        let raw: Vec<f64> = nodes.iter().map(|&z| log_prior(z)).collect();
        let norm = logsumexp(raw.iter().zip(&weights).map(|(l, w)| l + w.ln()));
        let log_prior = raw.iter().map(|l| l - norm).collect();
        let log_lik = nodes.iter().map(|&z| log_lik(z)).collect();
        Ok(Self {
            nodes,
            weights,
            log_prior,
            log_lik,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// log Z_t = log Σ w·prior·lik^t.
    pub fn log_partition(&self, t: f64) -> f64 {
        logsumexp(
            self.weights
                .iter()
                .zip(&self.log_prior)
                .zip(&self.log_lik)
                .map(|((w, lp), ll)| w.ln() + lp + t * ll),
        )
    }

    pub fn grid_log_evidence(&self) -> f64 {
        self.log_partition(1.0)
    }

    /// Normalized power-posterior density values at the nodes.
    pub fn grid_power_posterior(&self, t: f64) -> Vec<f64> {
        let lz = self.log_partition(t);
        self.log_prior
            .iter()
            .zip(&self.log_lik)
            .map(|(lp, ll)| (lp + t * ll - lz).exp())
            .collect()
    }

    /// E_t[log-likelihood] under the power posterior.
    pub fn expected_log_lik(&self, t: f64) -> f64 {
        let dens = self.grid_power_posterior(t);
        dens.iter()
            .zip(&self.weights)
            .zip(&self.log_lik)
            .map(|((d, w), ll)| d * w * ll)
            .sum()
    }

    /// KL(p_a ‖ p_b) between two power posteriors.
    pub fn kl(&self, t_a: f64, t_b: f64) -> f64 {
        let za = self.log_partition(t_a);
        let zb = self.log_partition(t_b);
        let dens = self.grid_power_posterior(t_a);
        dens.iter()
            .zip(&self.weights)
            .zip(&self.log_lik)
            .map(|((d, w), ll)| d * w * ((t_a - t_b) * ll - za + zb))
            .sum()
    }

    /// Probability mass of the power posterior in each of `bins` equal bins
    /// over [lo, hi], by integrating the tabulated density with a fine
    /// trapezoid inside each bin.
    pub fn binned_power_posterior(&self, t: f64, lo: f64, hi: f64, bins: usize) -> Vec<f64> {
        let lz = self.log_partition(t);
        let dens = |z: f64| -> f64 {
            // linear interpolation of log density between nodes
            let a = self.nodes[0];
            let b = self.nodes[self.nodes.len() - 1];
            if z <= a || z >= b {
                return 0.0;
            }
            let pos = (z - a) / (b - a) * (self.nodes.len() - 1) as f64;
            let i = pos.floor() as usize;
            let f = pos - i as f64;
            let l0 = self.log_prior[i] + t * self.log_lik[i];
            let l1 = self.log_prior[i + 1] + t * self.log_lik[i + 1];
            ((1.0 - f) * l0 + f * l1 - lz).exp()
        };
        let width = (hi - lo) / bins as f64;
        (0..bins)
            .map(|k| {
                let a = lo + k as f64 * width;
                simpson(dens, a, a + width, 200)
            })
            .collect()
    }
}

/// Prior N(0, 1), likelihood N(x; a·z + b, σ²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateModel {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub x: f64,
}

impl ConjugateModel {
    pub fn log_lik(&self, z: f64) -> f64 {
        let r = self.x - self.a * z - self.b;
        -0.5 * (2.0 * PI * self.sigma * self.sigma).ln() - r * r / (2.0 * self.sigma * self.sigma)
    }

    pub fn dlog_lik(&self, z: f64) -> f64 {
        let r = self.x - self.a * z - self.b;
        self.a * r / (self.sigma * self.sigma)
    }

    /// log N(x; b, a² + σ²).
    pub fn log_evidence(&self) -> f64 {
        let v = self.a * self.a + self.sigma * self.sigma;
        let r = self.x - self.b;
        -0.5 * (2.0 * PI * v).ln() - r * r / (2.0 * v)
    }

    /// Mean and variance of the power posterior at temperature t.
    pub fn power_posterior(&self, t: f64) -> (f64, f64) {
        let s2 = self.sigma * self.sigma;
        let precision = 1.0 + t * self.a * self.a / s2;
        let mean = t * self.a * (self.x - self.b) / s2 / precision;
        (mean, 1.0 / precision)
    }

    pub fn expected_log_lik(&self, t: f64) -> f64 {
        let (m, v) = self.power_posterior(t);
        let s2 = self.sigma * self.sigma;
        let r = self.x - self.b - self.a * m;
        -0.5 * (2.0 * PI * s2).ln() - (r * r + self.a * self.a * v) / (2.0 * s2)
    }

    pub fn log_partition(&self, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        let beta = t / s2;
        let k = 1.0 + beta * self.a * self.a;
        let r = self.x - self.b;
        -0.5 * t * (2.0 * PI * s2).ln() - 0.5 * k.ln() - beta * r * r / (2.0 * k)
    }

    /// Grid over ±`span` around the origin (prior standard deviations).
    pub fn to_grid(&self, nodes: usize, span: f64) -> Result<GridModel1D> {
        let m = *self;
        GridModel1D::new(
            -span,
            span,
            nodes,
            |z| -0.5 * z * z - 0.5 * (2.0 * PI).ln(),
            move |z| m.log_lik(z),
        )
    }
}

/// Energy of a basis recomputed from its raw fields with local formulas.
pub fn reference_energy(b: &UnivariateBasis) -> impl Fn(f64) -> f64 + '_ {
    move |z| {
        let base = match b.activation {
            BaseActivation::Relu => z.max(0.0),
            BaseActivation::Identity => z,
            BaseActivation::None => 0.0,
        };
        let spline: f64 = match &b.family {
            BasisFamily::Rbf { grid, bandwidths } => (0..grid.len())
                .map(|i| {
                    let u = (z - grid[i]) / bandwidths[i];
                    b.coefficients[i] * (-u * u).exp()
                })
                .sum(),
            BasisFamily::Morlet {
                translations,
                scales,
                tau,
                ..
            } => (0..translations.len())
                .map(|i| {
                    let u = (z - translations[i]) / scales[i];
                    b.coefficients[i] * (tau * u).cos() * (-0.5 * u * u).exp()
                })
                .sum(),
        };
        b.base_scale * base + b.spline_scale * spline
    }
}

/// Unnormalized log reference density; −∞ outside the uniform support.
pub fn reference_log_base(base: BaseDensity, z: f64) -> f64 {
    match base {
        BaseDensity::Gaussian => -0.5 * z * z,
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

/// Sorted breakpoints of [a, b] at which a tilted integrand may have a kink
/// or a jump.
pub fn breakpoints(a: f64, b: f64, extra: &[f64]) -> Vec<f64> {
    let mut v = vec![a, b];
    v.extend(extra.iter().copied().filter(|&x| x > a && x < b));
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Σ over segments of a Simpson rule with `per_segment` intervals.
pub fn piecewise_simpson(f: impl Fn(f64) -> f64, breaks: &[f64], per_segment: usize) -> f64 {
    breaks
        .windows(2)
        .map(|w| simpson(&f, w[0], w[1], per_segment))
        .sum()
}

/// CDF of exp(log_unnorm) tabulated by cumulative trapezoids on a dense
/// piecewise-uniform grid.
#[derive(Debug, Clone)]
pub struct DenseCdf {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl DenseCdf {
    pub fn new(log_unnorm: impl Fn(f64) -> f64, breaks: &[f64], per_segment: usize) -> Self {
        let mut xs = Vec::new();
        for w in breaks.windows(2) {
            for i in 0..per_segment {
                xs.push(w[0] + (w[1] - w[0]) * i as f64 / per_segment as f64);
            }
        }
        xs.push(*breaks.last().unwrap());
        // one-sided values at the breaks keep jumps inside a single cell
        let lv: Vec<f64> = xs.iter().map(|&x| log_unnorm(x)).collect();
        let m = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let v: Vec<f64> = lv.iter().map(|l| (l - m).exp()).collect();
        let mut cdf = vec![0.0; xs.len()];
        for i in 1..xs.len() {
            cdf[i] = cdf[i - 1] + 0.5 * (xs[i] - xs[i - 1]) * (v[i] + v[i - 1]);
        }
        let total = cdf[cdf.len() - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { xs, cdf }
    }

    pub fn eval(&self, z: f64) -> f64 {
        if z <= self.xs[0] {
            return 0.0;
        }
        let n = self.xs.len();
        if z >= self.xs[n - 1] {
            return 1.0;
        }
        let j = self.xs.partition_point(|&x| x <= z);
        let (x0, x1) = (self.xs[j - 1], self.xs[j]);
        let f = (z - x0) / (x1 - x0);
        self.cdf[j - 1] + f * (self.cdf[j] - self.cdf[j - 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn normal_cdf(x: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26 is too coarse; integrate instead
        0.5 + simpson(|t| (-0.5 * t * t).exp() / (2.0 * PI).sqrt(), 0.0, x, 4000)
    }

    #[test]
    fn finite_difference_of_linear_is_exact() {
        let g = finite_difference(|p| 3.0 * p[0] - 2.0 * p[1] + 0.5, &[0.3, -1.2], 1e-3).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-10 && (g[1] + 2.0).abs() < 1e-10);
    }

    #[test]
    fn finite_difference_of_quadratic_at_origin_is_zero() {
        let g = finite_difference(|p| p[0] * p[0] + 4.0 * p[1] * p[1], &[0.0, 0.0], 1e-4).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn finite_difference_matches_exp_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x: f64 = rng.random_range(-3.0..3.0);
            let g = finite_difference(|p| p[0].exp(), &[x], 1e-5).unwrap();
            assert!(((g[0] - x.exp()) / x.exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn finite_difference_rejects_non_finite() {
        assert!(finite_difference(|p| p[0].ln(), &[0.0], 1e-3).is_err());
    }

    #[test]
    fn ks_rank_positions_are_within_one_over_n() {
        let n = 1000;
        // logistic distribution: closed-form inverse CDF
        let cdf = |x: f64| 1.0 / (1.0 + (-x).exp());
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                (u / (1.0 - u)).ln()
            })
            .collect();
        let d = ks_statistic(&samples, cdf).unwrap();
        assert!(d <= 1.0 / n as f64 + 1e-12, "{d}");
    }

    #[test]
    fn ks_degenerate_samples() {
        let z = 0.3;
        let d = ks_statistic(&[z; 200], normal_cdf).unwrap();
        let f = normal_cdf(z);
        assert!(d >= f.max(1.0 - f) - 1e-12);
        assert!(ks_statistic(&[0.0; 99], normal_cdf).is_err());
    }

    #[test]
    fn grid_evidence_of_constant_likelihood() {
        let g = GridModel1D::new(-8.0, 8.0, 2001, |z| -0.5 * z * z, |_| 0.0).unwrap();
        assert!(g.grid_log_evidence().abs() < 1e-12);
        let c = 0.37f64;
        let g = GridModel1D::new(-8.0, 8.0, 2001, |z| -0.5 * z * z, move |_| c.ln()).unwrap();
        assert!((g.grid_log_evidence() - c.ln()).abs() < 1e-12);
        let s: f64 = g
            .log_prior
            .iter()
            .zip(&g.weights)
            .map(|(l, w)| l.exp() * w)
            .sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn power_posterior_endpoints() {
        let m = ConjugateModel {
            a: 1.3,
            b: 0.2,
            sigma: 0.7,
            x: 0.9,
        };
        let g = m.to_grid(2001, 8.0).unwrap();
        let p0 = g.grid_power_posterior(0.0);
        for (d, lp) in p0.iter().zip(&g.log_prior) {
            assert!((d - lp.exp()).abs() < 1e-12);
        }
        let p1 = g.grid_power_posterior(1.0);
        let (mean, _) = m.power_posterior(1.0);
        let gm: f64 = p1
            .iter()
            .zip(&g.weights)
            .zip(&g.nodes)
            .map(|((d, w), z)| d * w * z)
            .sum();
        assert!((gm - mean).abs() < 1e-8);
    }

    #[test]
    fn conjugate_evidence_matches_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = ConjugateModel {
                a: rng.random_range(-2.0..2.0),
                b: rng.random_range(-1.0..1.0),
                sigma: rng.random_range(0.3..2.0),
                x: rng.random_range(-2.0..2.0),
            };
            let g = m.to_grid(2001, 8.0).unwrap();
            assert!((g.grid_log_evidence() - m.log_evidence()).abs() < 1e-6);
            for t in [0.0, 0.3, 1.0] {
                assert!((g.log_partition(t) - m.log_partition(t)).abs() < 1e-6);
                assert!((g.expected_log_lik(t) - m.expected_log_lik(t)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn grid_self_convergence() {
        let m = ConjugateModel {
            a: 0.8,
            b: -0.3,
            sigma: 0.6,
            x: 1.1,
        };
        let coarse = m.to_grid(2001, 8.0).unwrap().grid_log_evidence();
        let fine = m.to_grid(4001, 8.0).unwrap().grid_log_evidence();
        assert!((coarse - fine).abs() < 1e-8);
    }

    #[test]
    fn oversized_grid_is_rejected() {
        assert!(matches!(
            GridModel1D::new(0.0, 1.0, MAX_GRID_NODES + 2, |_| 0.0, |_| 0.0),
            Err(KaemError::GridTooLarge(_))
        ));
    }
}
