//! Univariate function families used for prior energies and KAN edges.
//!
//! A basis evaluates `σ_b·a(z) + σ_s·Σ_i c_i·φ_i(z)` where `a` is the base
//! activation and `φ_i` are either Gaussian radial bumps on a grid or Morlet
//! wavelets with their own translation and scale.

use nalgebra::{DMatrix, DVector};

use crate::error::{KaemError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisKind {
    Rbf,
    Morlet,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Rbf => "rbf",
            BasisKind::Morlet => "morlet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbf" => Ok(BasisKind::Rbf),
            "morlet" | "wavelet" | "morlet_wavelet" => Ok(BasisKind::Morlet),
            other => Err(KaemError::Parse(format!("unknown basis kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseActivation {
    Relu,
    Identity,
    None,
}

impl BaseActivation {
    #[inline]
    pub fn value(self, z: f64) -> f64 {
        match self {
            BaseActivation::Relu => z.max(0.0),
            BaseActivation::Identity => z,
            BaseActivation::None => 0.0,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            BaseActivation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            BaseActivation::Identity => 1.0,
            BaseActivation::None => 0.0,
        }
    }

    /// Location of a derivative discontinuity, if any.
    pub fn kink(self) -> Option<f64> {
        match self {
            BaseActivation::Relu => Some(0.0),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseActivation::Relu => "relu",
            BaseActivation::Identity => "identity",
            BaseActivation::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(BaseActivation::Relu),
            "identity" | "linear" => Ok(BaseActivation::Identity),
            "none" => Ok(BaseActivation::None),
            other => Err(KaemError::Parse(format!("unknown activation '{other}'"))),
        }
    }
}

/// Gaussian bump `exp(-((z - c)/h)^2)`.
#[inline]
pub fn rbf(z: f64, center: f64, bandwidth: f64) -> f64 {
    let u = (z - center) / bandwidth;
    (-u * u).exp()
}

/// Derivative of [`rbf`] in `z`.
#[inline]
pub fn rbf_dz(z: f64, center: f64, bandwidth: f64) -> f64 {
    let u = (z - center) / bandwidth;
    -2.0 * u / bandwidth * (-u * u).exp()
}

/// Morlet wavelet `cos(τu)·exp(-u²/2)` with its derivatives in `u` and `τ`.
#[inline]
pub fn morlet(u: f64, tau: f64) -> (f64, f64, f64) {
    let env = (-0.5 * u * u).exp();
    let (s, c) = (tau * u).sin_cos();
    let psi = c * env;
    let dpsi_du = (-tau * s - u * c) * env;
    let dpsi_dtau = -u * s * env;
    (psi, dpsi_du, dpsi_dtau)
}

#[derive(Debug, Clone, PartialEq)]
pub enum BasisFamily {
    Rbf {
        grid: Vec<f64>,
        /// One bandwidth per centre.
        bandwidths: Vec<f64>,
    },
    Morlet {
        translations: Vec<f64>,
        scales: Vec<f64>,
        tau: f64,
        tau_trainable: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateBasis {
    pub family: BasisFamily,
    pub coefficients: Vec<f64>,
    pub base_scale: f64,
    pub spline_scale: f64,
    pub activation: BaseActivation,
    pub domain: (f64, f64),
}

/// Result of [`UnivariateBasis::update_grid`].
#[derive(Debug, Clone)]
pub struct GridUpdate {
    pub basis: UnivariateBasis,
    /// Samples had no spread; the old grid was kept.
    pub degenerate: bool,
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

impl UnivariateBasis {
    /// RBF basis with `n_grid` uniformly spaced centres over `domain` and
    /// every bandwidth `mu` times the grid spacing. Coefficients start at zero.
    pub fn rbf_uniform(domain: (f64, f64), n_grid: usize, mu: f64) -> Self {
        let grid = linspace(domain.0, domain.1, n_grid);
        let spacing = (domain.1 - domain.0) / (n_grid.max(2) - 1) as f64;
        Self {
            family: BasisFamily::Rbf {
                grid,
                bandwidths: vec![mu * spacing; n_grid],
            },
            coefficients: vec![0.0; n_grid],
            base_scale: 1.0,
            spline_scale: 1.0,
            activation: BaseActivation::Relu,
            domain,
        }
    }

    /// Morlet basis with `n` wavelets whose translations tile the domain and
    /// whose scales equal the tile width.
    pub fn morlet_uniform(domain: (f64, f64), n: usize, tau: f64, tau_trainable: bool) -> Self {
        let translations = linspace(domain.0, domain.1, n);
        let width = if n > 1 {
            (domain.1 - domain.0) / (n - 1) as f64
        } else {
            domain.1 - domain.0
        };
        Self {
            family: BasisFamily::Morlet {
                translations,
                scales: vec![width; n],
                tau,
                tau_trainable,
            },
            coefficients: vec![0.0; n],
            base_scale: 1.0,
            spline_scale: 1.0,
            activation: BaseActivation::None,
            domain,
        }
    }

    pub fn kind(&self) -> BasisKind {
        match self.family {
            BasisFamily::Rbf { .. } => BasisKind::Rbf,
            BasisFamily::Morlet { .. } => BasisKind::Morlet,
        }
    }

    pub fn with_activation(mut self, activation: BaseActivation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_scales(mut self, base_scale: f64, spline_scale: f64) -> Self {
        self.base_scale = base_scale;
        self.spline_scale = spline_scale;
        self
    }

    pub fn with_coefficients(mut self, coefficients: Vec<f64>) -> Self {
        assert_eq!(coefficients.len(), self.coefficients.len());
        self.coefficients = coefficients;
        self
    }

    /// Cut points around wavelets narrower than `resolution`: each such
    /// wavelet contributes its centre and centre ± 6|s|.
    pub fn narrow_features(&self, resolution: f64) -> Vec<f64> {
        match &self.family {
            BasisFamily::Rbf { .. } => Vec::new(),
            BasisFamily::Morlet {
                translations,
                scales,
                ..
            } => translations
                .iter()
                .zip(scales)
                .zip(&self.coefficients)
                .filter(|((_, s), c)| s.abs() < resolution && **c != 0.0)
                .flat_map(|((&t, &s), _)| [t - 6.0 * s.abs(), t, t + 6.0 * s.abs()])
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.domain;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(KaemError::Invalid(format!("degenerate domain [{a}, {b}]")));
        }
        let scalars_ok = self.base_scale.is_finite()
            && self.spline_scale.is_finite()
            && self.coefficients.iter().all(|c| c.is_finite());
        if !scalars_ok {
            return Err(KaemError::Invalid("non-finite basis parameter".into()));
        }
        match &self.family {
            BasisFamily::Rbf { grid, bandwidths } => {
                if grid.len() < 2 {
                    return Err(KaemError::Invalid("RBF grid needs at least 2 nodes".into()));
                }
                if !grid.windows(2).all(|w| w[0] < w[1]) {
                    return Err(KaemError::Invalid(
                        "RBF grid must be strictly increasing".into(),
                    ));
                }
                if let Some(h) = bandwidths.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
                    return Err(KaemError::Invalid(format!("bad RBF bandwidth {h}")));
                }
                if bandwidths.len() != grid.len() {
                    return Err(KaemError::DimensionMismatch {
                        expected: grid.len(),
                        got: bandwidths.len(),
                    });
                }
                if grid.len() != self.coefficients.len() {
                    return Err(KaemError::DimensionMismatch {
                        expected: grid.len(),
                        got: self.coefficients.len(),
                    });
                }
            }
            BasisFamily::Morlet {
                translations,
                scales,
                tau,
                ..
            } => {
                if translations.len() != self.coefficients.len()
                    || scales.len() != self.coefficients.len()
                {
                    return Err(KaemError::DimensionMismatch {
                        expected: self.coefficients.len(),
                        got: translations.len().min(scales.len()),
                    });
                }
                if scales.iter().any(|s| !s.is_finite() || *s == 0.0) || !tau.is_finite() {
                    return Err(KaemError::Invalid("bad Morlet scale or tau".into()));
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn check(z: f64) -> Result<()> {
        if z.is_finite() {
            Ok(())
        } else {
            Err(KaemError::NonFiniteInput(z))
        }
    }

    /// Σ_i c_i φ_i(z), without the spline scale.
    fn spline_sum(&self, z: f64) -> f64 {
        match &self.family {
            BasisFamily::Rbf { grid, bandwidths } => grid
                .iter()
                .zip(bandwidths)
                .zip(&self.coefficients)
                .map(|((&g, &h), &c)| c * rbf(z, g, h))
                .sum(),
            BasisFamily::Morlet {
                translations,
                scales,
                tau,
                ..
            } => translations
                .iter()
                .zip(scales)
                .zip(&self.coefficients)
                .map(|((&t, &s), &c)| c * morlet((z - t) / s, *tau).0)
                .sum(),
        }
    }

    /// Evaluation without the finiteness check, for hot loops over trusted nodes.
    #[inline]
    pub fn eval_unchecked(&self, z: f64) -> f64 {
        self.base_scale * self.activation.value(z) + self.spline_scale * self.spline_sum(z)
    }

    pub fn eval(&self, z: f64) -> Result<f64> {
        Self::check(z)?;
        Ok(self.eval_unchecked(z))
    }

    pub fn grad_input_unchecked(&self, z: f64) -> f64 {
        let spline: f64 = match &self.family {
            BasisFamily::Rbf { grid, bandwidths } => grid
                .iter()
                .zip(bandwidths)
                .zip(&self.coefficients)
                .map(|((&g, &h), &c)| c * rbf_dz(z, g, h))
                .sum(),
            BasisFamily::Morlet {
                translations,
                scales,
                tau,
                ..
            } => translations
                .iter()
                .zip(scales)
                .zip(&self.coefficients)
                .map(|((&t, &s), &c)| c * morlet((z - t) / s, *tau).1 / s)
                .sum(),
        };
        self.base_scale * self.activation.derivative(z) + self.spline_scale * spline
    }

    /// `(f(z), f'(z))` in one pass over the basis.
    pub fn eval_and_grad_input_unchecked(&self, z: f64) -> (f64, f64) {
        let (mut v, mut d) = (0.0, 0.0);
        match &self.family {
            BasisFamily::Rbf { grid, bandwidths } => {
                for ((&g, &h), &c) in grid.iter().zip(bandwidths).zip(&self.coefficients) {
                    let u = (z - g) / h;
                    let e = c * (-u * u).exp();
                    v += e;
                    d -= 2.0 * u / h * e;
                }
            }
            BasisFamily::Morlet {
                translations,
                scales,
                tau,
                ..
            } => {
                for ((&t, &s), &c) in translations.iter().zip(scales).zip(&self.coefficients) {
                    let (psi, dpsi, _) = morlet((z - t) / s, *tau);
                    v += c * psi;
                    d += c * dpsi / s;
                }
            }
        }
        (
            self.base_scale * self.activation.value(z) + self.spline_scale * v,
            self.base_scale * self.activation.derivative(z) + self.spline_scale * d,
        )
    }

    pub fn grad_input(&self, z: f64) -> Result<f64> {
        Self::check(z)?;
        Ok(self.grad_input_unchecked(z))
    }

    pub fn num_params(&self) -> usize {
        let n = self.coefficients.len();
        match &self.family {
            BasisFamily::Rbf { .. } => n + 2,
            BasisFamily::Morlet { tau_trainable, .. } => 3 * n + 2 + usize::from(*tau_trainable),
        }
    }

    /// Trainable scalars, in the order used by [`Self::grad_params`].
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.write_params(&mut out);
        out
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.coefficients);
        if let BasisFamily::Morlet {
            translations,
            scales,
            ..
        } = &self.family
        {
            out.extend_from_slice(translations);
            out.extend_from_slice(scales);
        }
        out.push(self.base_scale);
        out.push(self.spline_scale);
        if let BasisFamily::Morlet {
            tau,
            tau_trainable: true,
            ..
        } = &self.family
        {
            out.push(*tau);
        }
    }

    /// Overwrite trainable scalars from `p`; returns the number consumed.
    pub fn set_params(&mut self, p: &[f64]) -> usize {
        let n = self.coefficients.len();
        let mut k = 0;
        self.coefficients.copy_from_slice(&p[k..k + n]);
        k += n;
        if let BasisFamily::Morlet {
            translations,
            scales,
            ..
        } = &mut self.family
        {
            translations.copy_from_slice(&p[k..k + n]);
            k += n;
            scales.copy_from_slice(&p[k..k + n]);
            k += n;
        }
        self.base_scale = p[k];
        self.spline_scale = p[k + 1];
        k += 2;
        if let BasisFamily::Morlet {
            tau,
            tau_trainable: true,
            ..
        } = &mut self.family
        {
            *tau = p[k];
            k += 1;
        }
        k
    }

    /// Accumulate `scale · ∂eval/∂θ` into `out` (length [`Self::num_params`]).
    pub fn accumulate_grad_params(&self, z: f64, scale: f64, out: &mut [f64]) {
        let n = self.coefficients.len();
        let ss = self.spline_scale;
        match &self.family {
            BasisFamily::Rbf { grid, bandwidths } => {
                let mut sum = 0.0;
                for i in 0..n {
                    let phi = rbf(z, grid[i], bandwidths[i]);
                    out[i] += scale * ss * phi;
                    sum += self.coefficients[i] * phi;
                }
                out[n] += scale * self.activation.value(z);
                out[n + 1] += scale * sum;
            }
            BasisFamily::Morlet {
                translations,
                scales,
                tau,
                tau_trainable,
            } => {
                let mut sum = 0.0;
                let mut dtau = 0.0;
                for i in 0..n {
                    let s = scales[i];
                    let u = (z - translations[i]) / s;
                    let (psi, dpsi_du, dpsi_dtau) = morlet(u, *tau);
                    let c = self.coefficients[i];
                    out[i] += scale * ss * psi;
                    out[n + i] += scale * ss * c * (-dpsi_du / s);
                    out[2 * n + i] += scale * ss * c * (-dpsi_du * u / s);
                    sum += c * psi;
                    dtau += c * dpsi_dtau;
                }
                out[3 * n] += scale * self.activation.value(z);
                out[3 * n + 1] += scale * sum;
                if *tau_trainable {
                    out[3 * n + 2] += scale * ss * dtau;
                }
            }
        }
    }

    pub fn grad_params(&self, z: f64) -> Result<Vec<f64>> {
        Self::check(z)?;
        let mut g = vec![0.0; self.num_params()];
        self.accumulate_grad_params(z, 1.0, &mut g);
        Ok(g)
    }

    /// Adapt the RBF grid to a sample cloud.
    ///
    /// The new grid blends a uniform grid over the sample range (weight
    /// `ratio`) with the sample quantiles; coefficients are refit by least
    /// squares to the old spline at the new nodes and midpoints, and the
    /// domain moves toward the new grid span by `1 - decay`.
    pub fn update_grid(&self, samples: &[f64], ratio: f64, decay: f64) -> Result<GridUpdate> {
        let (grid, bandwidths) = match &self.family {
            BasisFamily::Rbf { grid, bandwidths } => (grid, bandwidths),
            BasisFamily::Morlet { .. } => {
                return Err(KaemError::Invalid(
                    "grid updating applies to RBF bases only".into(),
                ))
            }
        };
        if samples.is_empty() {
            return Err(KaemError::EmptyBatch);
        }
        if let Some(&bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(KaemError::NonFiniteInput(bad));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        if hi - lo <= f64::EPSILON * (1.0 + lo.abs().max(hi.abs())) {
            return Ok(GridUpdate {
                basis: self.clone(),
                degenerate: true,
            });
        }

        let g = grid.len();
        let uniform = linspace(lo, hi, g);
        let mut new_grid: Vec<f64> = (0..g)
            .map(|i| {
                let q = quantile_sorted(&sorted, i as f64 / (g - 1) as f64);
                ratio * uniform[i] + (1.0 - ratio) * q
            })
            .collect();
        let min_gap = 1e-9 * (hi - lo);
        for i in 1..g {
            if new_grid[i] <= new_grid[i - 1] + min_gap {
                new_grid[i] = new_grid[i - 1] + min_gap;
            }
        }

        // keep the mean bandwidth-to-local-spacing ratio of the old grid
        let width_ratio = bandwidths
            .iter()
            .zip(local_spacing(grid))
            .map(|(h, s)| h / s)
            .sum::<f64>()
            / g as f64;
        let new_bandwidths: Vec<f64> = local_spacing(&new_grid)
            .into_iter()
            .map(|s| width_ratio * s)
            .collect();

        const FIT_PER_CELL: usize = 4;
        let mut fit_points = Vec::with_capacity(FIT_PER_CELL * (g - 1) + 1);
        for i in 0..g {
            fit_points.push(new_grid[i]);
            if i + 1 < g {
                for k in 1..FIT_PER_CELL {
                    let t = k as f64 / FIT_PER_CELL as f64;
                    fit_points.push((1.0 - t) * new_grid[i] + t * new_grid[i + 1]);
                }
            }
        }
        let coefficients = if self.spline_scale == 0.0 {
            self.coefficients.clone()
        } else {
            let design = DMatrix::from_fn(fit_points.len(), g, |r, c| {
                rbf(fit_points[r], new_grid[c], new_bandwidths[c])
            });
            let target = DVector::from_iterator(
                fit_points.len(),
                fit_points.iter().map(|&z| self.spline_sum(z)),
            );
            least_squares(design, target)?
        };

        let domain = (
            decay * self.domain.0 + (1.0 - decay) * new_grid[0],
            decay * self.domain.1 + (1.0 - decay) * new_grid[g - 1],
        );
        let basis = UnivariateBasis {
            family: BasisFamily::Rbf {
                grid: new_grid,
                bandwidths: new_bandwidths,
            },
            coefficients,
            base_scale: self.base_scale,
            spline_scale: self.spline_scale,
            activation: self.activation,
            domain,
        };
        basis.validate()?;
        Ok(GridUpdate {
            basis,
            degenerate: false,
        })
    }
}

/// Distance scale around each node: half the gap between its neighbours,
/// or the single adjacent gap at the ends.
pub fn local_spacing(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    (0..n)
        .map(|i| match (i, n) {
            (_, 0 | 1) => 1.0,
            (0, _) => grid[1] - grid[0],
            (i, n) if i == n - 1 => grid[n - 1] - grid[n - 2],
            (i, _) => 0.5 * (grid[i + 1] - grid[i - 1]),
        })
        .collect()
}

/// Linear-interpolated quantile of ascending `sorted` at level `q` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = pos.floor() as usize;
    if i + 1 >= n {
        return sorted[n - 1];
    }
    let frac = pos - i as f64;
    sorted[i] + frac * (sorted[i + 1] - sorted[i])
}

/// Minimum-norm least squares via SVD; singular values below `1e-8·σ_max`
/// are dropped.
pub(crate) fn least_squares(design: DMatrix<f64>, target: DVector<f64>) -> Result<Vec<f64>> {
    let svd = design.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let sol = svd
        .solve(&target, 1e-8 * smax)
        .map_err(|e| KaemError::Invalid(format!("least squares failed: {e}")))?;
    Ok(sol.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{central_difference, normwise_relative_error};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_basis(kind: BasisKind, seed: u64) -> UnivariateBasis {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = match kind {
            BasisKind::Rbf => UnivariateBasis::rbf_uniform((-1.5, 1.5), 8, 1.0),
            BasisKind::Morlet => UnivariateBasis::morlet_uniform((-1.5, 1.5), 5, 1.0, true),
        };
        let mut p = b.params();
        for v in p.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
        b.set_params(&p);
        b.with_activation(if rng.random::<bool>() {
            BaseActivation::Relu
        } else {
            BaseActivation::Identity
        })
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn zero_function_evaluates_to_zero() {
        let b = UnivariateBasis::rbf_uniform((-1.0, 1.0), 6, 1.0).with_scales(0.0, 1.0);
        for z in [-3.0, -0.2, 0.0, 0.7, 5.0] {
            assert_eq!(b.eval(z).unwrap(), 0.0);
            assert_eq!(b.grad_input(z).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_bump_peaks_at_centre() {
        let b = UnivariateBasis {
            family: BasisFamily::Rbf {
                grid: vec![-1.0, 0.0, 1.0],
                bandwidths: vec![0.4; 3],
            },
            coefficients: vec![0.0, 1.0, 0.0],
            base_scale: 0.0,
            spline_scale: 1.0,
            activation: BaseActivation::Relu,
            domain: (-1.0, 1.0),
        };
        assert_eq!(b.eval(0.0).unwrap(), 1.0);
        assert_eq!(b.grad_input(0.0).unwrap(), 0.0);
    }

    #[test]
    fn fused_value_and_slope_agree() {
        for kind in [BasisKind::Rbf, BasisKind::Morlet] {
            let b = random_basis(kind, 3);
            for i in 0..50 {
                let z = -1.4 + 2.8 * i as f64 / 49.0;
                let (v, d) = b.eval_and_grad_input_unchecked(z);
                assert!((v - b.eval_unchecked(z)).abs() < 1e-12);
                assert!((d - b.grad_input_unchecked(z)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn morlet_unit_wavelet_at_origin() {
        let b = UnivariateBasis {
            family: BasisFamily::Morlet {
                translations: vec![0.0],
                scales: vec![1.0],
                tau: 1.0,
                tau_trainable: true,
            },
            coefficients: vec![1.0],
            base_scale: 1.0,
            spline_scale: 1.0,
            activation: BaseActivation::None,
            domain: (-2.0, 2.0),
        };
        assert_eq!(b.eval(0.0).unwrap(), 1.0);
        // cos(1)·exp(-1/2)
        let v = b.eval(1.0).unwrap();
        assert!((v - 1f64.cos() * (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn coefficient_gradient_is_scaled_feature() {
        let b = random_basis(BasisKind::Rbf, 3);
        let g = b.grad_params(0.3).unwrap();
        if let BasisFamily::Rbf { grid, bandwidths } = &b.family {
            for i in 0..grid.len() {
                let want = b.spline_scale * rbf(0.3, grid[i], bandwidths[i]);
                assert!((g[i] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn coefficient_gradient_vanishes_far_from_grid() {
        let b = random_basis(BasisKind::Rbf, 5);
        let g = b.grad_params(1e3).unwrap();
        assert!(g[..8].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let b = random_basis(BasisKind::Morlet, 1);
        assert!(matches!(
            b.eval(f64::NAN),
            Err(KaemError::NonFiniteInput(_))
        ));
        assert!(b.grad_input(f64::INFINITY).is_err());
        assert!(b.grad_params(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in [BasisKind::Rbf, BasisKind::Morlet] {
            for seed in 0..10 {
                let b = random_basis(kind, seed);
                for _ in 0..10 {
                    let z: f64 = rng.random_range(-2.0..2.0);
                    if z.abs() < 1e-3 {
                        continue;
                    }
                    let fd = central_difference(|v| b.eval(v[0]).unwrap(), &[z], 1e-5);
                    assert!(rel_err(fd[0], b.grad_input(z).unwrap()) < 1e-6);

                    let p0 = b.params();
                    let fdp = central_difference(
                        |p| {
                            let mut c = b.clone();
                            c.set_params(p);
                            c.eval(z).unwrap()
                        },
                        &p0,
                        1e-5,
                    );
                    let g = b.grad_params(z).unwrap();
                    let err = normwise_relative_error(&g, &fdp);
                    assert!(err < 1e-6, "{kind:?}: {err}");
                }
            }
        }
    }

    #[test]
    fn params_round_trip() {
        for kind in [BasisKind::Rbf, BasisKind::Morlet] {
            let b = random_basis(kind, 9);
            let p = b.params();
            assert_eq!(p.len(), b.num_params());
            let mut c = UnivariateBasis {
                coefficients: vec![0.0; b.coefficients.len()],
                ..b.clone()
            };
            assert_eq!(c.set_params(&p), p.len());
            assert_eq!(c, b);
        }
    }

    #[test]
    fn grid_update_full_ratio_gives_uniform_grid() {
        let b = random_basis(BasisKind::Rbf, 2);
        let samples: Vec<f64> = linspace(-1.5, 1.5, 37);
        let up = b.update_grid(&samples, 1.0, 0.999).unwrap();
        assert!(!up.degenerate);
        if let BasisFamily::Rbf { grid, .. } = &up.basis.family {
            for (g, u) in grid.iter().zip(linspace(-1.5, 1.5, 8)) {
                assert!((g - u).abs() < 1e-12);
            }
        }
        assert!((up.basis.domain.0 + 1.5).abs() < 1e-12);
    }

    #[test]
    fn identity_refit_reproduces_nodes() {
        let b = random_basis(BasisKind::Rbf, 4);
        let grid = match &b.family {
            BasisFamily::Rbf { grid, .. } => grid.clone(),
            _ => unreachable!(),
        };
        let up = b.update_grid(&grid, 1.0, 0.999).unwrap();
        for &z in &grid {
            let d = (up.basis.eval(z).unwrap() - b.eval(z).unwrap()).abs();
            assert!(d < 1e-10, "{d}");
        }
    }

    /// Sup-norm change of a smooth RBF function after a grid update driven by
    /// `n` uniform samples over its domain.
    fn grid_update_drift(mu: f64, n: usize, seed: u64) -> f64 {
        let mut b = UnivariateBasis::rbf_uniform((-1.5, 1.5), 20, mu);
        let grid = linspace(-1.5, 1.5, 20);
        b.coefficients = grid.iter().map(|&z| 0.5 * (1.3 * z).sin()).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        samples.extend([-1.5, 1.5]);
        let up = b.update_grid(&samples, 0.05, 0.999).unwrap();
        let (lo, hi) = (
            up.basis.domain.0.max(b.domain.0),
            up.basis.domain.1.min(b.domain.1),
        );
        linspace(lo, hi, 4001)
            .into_iter()
            .map(|z| (up.basis.eval(z).unwrap() - b.eval(z).unwrap()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn grid_update_tracks_smooth_function() {
        let drift = grid_update_drift(2.0, 1000, 21);
        assert!(drift < 1e-3, "sup-norm drift {drift}");
    }

    #[test]
    fn degenerate_samples_keep_grid() {
        let b = random_basis(BasisKind::Rbf, 8);
        let up = b.update_grid(&[0.25; 10], 0.05, 0.999).unwrap();
        assert!(up.degenerate);
        assert_eq!(up.basis, b);
        assert!(b.update_grid(&[], 0.05, 0.999).is_err());
        let m = random_basis(BasisKind::Morlet, 8);
        assert!(m.update_grid(&[0.1, 0.2], 0.05, 0.999).is_err());
    }

    proptest! {
        #[test]
        fn eval_is_continuous(seed in 0u64..200, z in -3.0f64..3.0, morlet_kind in any::<bool>()) {
            let kind = if morlet_kind { BasisKind::Morlet } else { BasisKind::Rbf };
            let b = random_basis(kind, seed);
            let d = (b.eval(z + 1e-8).unwrap() - b.eval(z).unwrap()).abs();
            prop_assert!(d <= 1e-6 * (1.0 + b.grad_input(z).unwrap().abs()));
        }

        #[test]
        fn eval_is_finite_everywhere(seed in 0u64..200, z in -1e6f64..1e6) {
            for kind in [BasisKind::Rbf, BasisKind::Morlet] {
                let b = random_basis(kind, seed);
                prop_assert!(b.eval(z).unwrap().is_finite());
                prop_assert!(b.grad_input(z).unwrap().is_finite());
            }
        }
    }
}
