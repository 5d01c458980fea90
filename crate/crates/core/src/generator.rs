//! Latent-to-data maps with a Gaussian observation model.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::{morlet, rbf, rbf_dz, BaseActivation, BasisFamily, BasisKind, UnivariateBasis};
use crate::error::{KaemError, Result};

#[inline]
fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer, `w` stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn glorot(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let lim = (6.0 / (n_in + n_out) as f64).sqrt();
        Self {
            n_in,
            n_out,
            w: (0..n_in * n_out)
                .map(|_| rng.random_range(-lim..lim))
                .collect(),
            b: vec![0.0; n_out],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            out.push(self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }

    fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Tanh multilayer perceptron with a sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `widths` includes input and output, e.g. `[latent, 64, 64, data]`.
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(KaemError::InvalidConfig(format!(
                "bad MLP widths {widths:?}"
            )));
        }
        Ok(Self {
            layers: widths
                .windows(2)
                .map(|w| Dense::glorot(w[0], w[1], rng))
                .collect(),
        })
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].n_in];
        w.extend(self.layers.iter().map(|l| l.n_out));
        w
    }
}

/// Feature family shared by every edge leaving one KAN input.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeFeatures {
    Rbf {
        grid: Vec<f64>,
        bandwidths: Vec<f64>,
    },
    Morlet {
        translations: Vec<f64>,
        scales: Vec<f64>,
        tau: f64,
    },
}

impl EdgeFeatures {
    fn eval(&self, x: f64, phi: &mut [f64], dphi: &mut [f64]) {
        match self {
            EdgeFeatures::Rbf { grid, bandwidths } => {
                for g in 0..grid.len() {
                    phi[g] = rbf(x, grid[g], bandwidths[g]);
                    dphi[g] = rbf_dz(x, grid[g], bandwidths[g]);
                }
            }
            EdgeFeatures::Morlet {
                translations,
                scales,
                tau,
            } => {
                for g in 0..translations.len() {
                    let s = scales[g];
                    let (psi, dpsi, _) = morlet((x - translations[g]) / s, *tau);
                    phi[g] = psi;
                    dphi[g] = dpsi / s;
                }
            }
        }
    }
}

/// One KAN layer: every edge (o, i) is `σ_b·b(x_i) + σ_s·Σ_g c_g φ_{i,g}(x_i)`
/// where the features φ_{i,·} are shared by all edges leaving input i.
#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub n_basis: usize,
    pub activation: BaseActivation,
    pub features: Vec<EdgeFeatures>,
    pub domains: Vec<(f64, f64)>,
    /// Edge (o, i) coefficients at `((o·n_in + i)·n_basis ..)`.
    pub coefficients: Vec<f64>,
    pub base_scale: Vec<f64>,
    pub spline_scale: Vec<f64>,
}

impl KanLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_in: usize,
        n_out: usize,
        kind: BasisKind,
        n_basis: usize,
        activation: BaseActivation,
        domain: (f64, f64),
        mu: f64,
        tau: f64,
        init_noise: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let template = match kind {
            BasisKind::Rbf => UnivariateBasis::rbf_uniform(domain, n_basis, mu),
            BasisKind::Morlet => UnivariateBasis::morlet_uniform(domain, n_basis, tau, false),
        };
        let feat = match template.family {
            BasisFamily::Rbf { grid, bandwidths } => EdgeFeatures::Rbf { grid, bandwidths },
            BasisFamily::Morlet {
                translations,
                scales,
                tau,
                ..
            } => EdgeFeatures::Morlet {
                translations,
                scales,
                tau,
            },
        };
        let edges = n_in * n_out;
        let inv = 1.0 / (n_in as f64).sqrt();
        Self {
            n_in,
            n_out,
            n_basis,
            activation,
            features: vec![feat; n_in],
            domains: vec![domain; n_in],
            coefficients: (0..edges * n_basis)
                .map(|_| {
                    let n: f64 = StandardNormal.sample(rng);
                    init_noise * n * inv
                })
                .collect(),
            base_scale: (0..edges).map(|_| rng.random_range(-inv..inv)).collect(),
            spline_scale: vec![1.0; edges],
        }
    }

    fn edge(&self, o: usize, i: usize) -> usize {
        o * self.n_in + i
    }

    pub fn num_params(&self) -> usize {
        self.coefficients.len() + self.base_scale.len() + self.spline_scale.len()
    }

    /// The univariate function on edge (o, i) as a standalone basis.
    pub fn edge_basis(&self, o: usize, i: usize) -> UnivariateBasis {
        let e = self.edge(o, i);
        let family = match &self.features[i] {
            EdgeFeatures::Rbf { grid, bandwidths } => BasisFamily::Rbf {
                grid: grid.clone(),
                bandwidths: bandwidths.clone(),
            },
            EdgeFeatures::Morlet {
                translations,
                scales,
                tau,
            } => BasisFamily::Morlet {
                translations: translations.clone(),
                scales: scales.clone(),
                tau: *tau,
                tau_trainable: false,
            },
        };
        UnivariateBasis {
            family,
            coefficients: self.coefficients[e * self.n_basis..(e + 1) * self.n_basis].to_vec(),
            base_scale: self.base_scale[e],
            spline_scale: self.spline_scale[e],
            activation: self.activation,
            domain: self.domains[i],
        }
    }

    fn forward(&self, x: &[f64], cache: &mut KanLayerCache, out: &mut Vec<f64>) {
        let g = self.n_basis;
        cache.phi.resize(self.n_in * g, 0.0);
        cache.dphi.resize(self.n_in * g, 0.0);
        cache.act.clear();
        cache.dact.clear();
        for (i, &xi) in x.iter().enumerate() {
            self.features[i].eval(
                xi,
                &mut cache.phi[i * g..(i + 1) * g],
                &mut cache.dphi[i * g..(i + 1) * g],
            );
            cache.act.push(self.activation.value(xi));
            cache.dact.push(self.activation.derivative(xi));
        }
        out.clear();
        for o in 0..self.n_out {
            let mut y = 0.0;
            for i in 0..self.n_in {
                let e = self.edge(o, i);
                let c = &self.coefficients[e * g..(e + 1) * g];
                let phi = &cache.phi[i * g..(i + 1) * g];
                let s: f64 = c.iter().zip(phi).map(|(a, b)| a * b).sum();
                y += self.base_scale[e] * cache.act[i] + self.spline_scale[e] * s;
            }
            out.push(y);
        }
    }

    /// Back-propagate `dy`; accumulates `scale·∂/∂θ` into `pg` when given.
    fn backward(
        &self,
        cache: &KanLayerCache,
        dy: &[f64],
        mut pg: Option<(&mut [f64], f64)>,
        dx: &mut Vec<f64>,
    ) {
        let g = self.n_basis;
        let n_edges = self.n_in * self.n_out;
        let (off_base, off_spline) = (n_edges * g, n_edges * g + n_edges);
        dx.clear();
        dx.resize(self.n_in, 0.0);
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for i in 0..self.n_in {
                let e = self.edge(o, i);
                let c = &self.coefficients[e * g..(e + 1) * g];
                let phi = &cache.phi[i * g..(i + 1) * g];
                let dphi = &cache.dphi[i * g..(i + 1) * g];
                let ss = self.spline_scale[e];
                let mut s = 0.0;
                let mut ds = 0.0;
                for k in 0..g {
                    s += c[k] * phi[k];
                    ds += c[k] * dphi[k];
                }
                dx[i] += d * (self.base_scale[e] * cache.dact[i] + ss * ds);
                if let Some((buf, scale)) = pg.as_mut() {
                    let f = *scale * d;
                    let cg = &mut buf[e * g..(e + 1) * g];
                    for k in 0..g {
                        cg[k] += f * ss * phi[k];
                    }
                    buf[off_base + e] += f * cache.act[i];
                    buf[off_spline + e] += f * s;
                }
            }
        }
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.coefficients);
        out.extend_from_slice(&self.base_scale);
        out.extend_from_slice(&self.spline_scale);
    }

    fn set_params(&mut self, p: &[f64]) -> usize {
        let (nc, ne) = (self.coefficients.len(), self.base_scale.len());
        self.coefficients.copy_from_slice(&p[..nc]);
        self.base_scale.copy_from_slice(&p[nc..nc + ne]);
        self.spline_scale.copy_from_slice(&p[nc + ne..nc + 2 * ne]);
        nc + 2 * ne
    }

    /// Refit every RBF input from samples of that input; returns the number
    /// of inputs whose grid moved.
    pub fn update_grids(&mut self, inputs: &[Vec<f64>], ratio: f64, decay: f64) -> Result<usize> {
        let mut moved = 0;
        for i in 0..self.n_in {
            if !matches!(self.features[i], EdgeFeatures::Rbf { .. }) {
                continue;
            }
            let xs: Vec<f64> = inputs.iter().map(|x| x[i]).collect();
            let mut new_feat = None;
            for o in 0..self.n_out {
                let up = self.edge_basis(o, i).update_grid(&xs, ratio, decay)?;
                if up.degenerate {
                    break;
                }
                let e = self.edge(o, i);
                self.coefficients[e * self.n_basis..(e + 1) * self.n_basis]
                    .copy_from_slice(&up.basis.coefficients);
                if o == 0 {
                    if let BasisFamily::Rbf { grid, bandwidths } = up.basis.family {
                        new_feat = Some((EdgeFeatures::Rbf { grid, bandwidths }, up.basis.domain));
                    }
                }
            }
            if let Some((f, d)) = new_feat {
                self.features[i] = f;
                self.domains[i] = d;
                moved += 1;
            }
        }
        Ok(moved)
    }

    /// Grid-dependent state, flattened for checkpoints.
    fn structure(&self, out: &mut Vec<f64>) {
        for (f, d) in self.features.iter().zip(&self.domains) {
            out.push(d.0);
            out.push(d.1);
            match f {
                EdgeFeatures::Rbf { grid, bandwidths } => {
                    out.extend_from_slice(grid);
                    out.extend_from_slice(bandwidths);
                }
                EdgeFeatures::Morlet {
                    translations,
                    scales,
                    tau,
                } => {
                    out.extend_from_slice(translations);
                    out.extend_from_slice(scales);
                    out.push(*tau);
                }
            }
        }
    }

    fn set_structure(&mut self, s: &[f64]) -> Result<usize> {
        let g = self.n_basis;
        let mut k = 0;
        let need = |k: usize, n: usize| {
            if k + n > s.len() {
                Err(KaemError::Truncated("generator structure".into()))
            } else {
                Ok(())
            }
        };
        for (f, d) in self.features.iter_mut().zip(self.domains.iter_mut()) {
            need(k, 2)?;
            *d = (s[k], s[k + 1]);
            k += 2;
            match f {
                EdgeFeatures::Rbf { grid, bandwidths } => {
                    need(k, 2 * g)?;
                    grid.copy_from_slice(&s[k..k + g]);
                    bandwidths.copy_from_slice(&s[k + g..k + 2 * g]);
                    k += 2 * g;
                }
                EdgeFeatures::Morlet {
                    translations,
                    scales,
                    tau,
                } => {
                    need(k, 2 * g + 1)?;
                    translations.copy_from_slice(&s[k..k + g]);
                    scales.copy_from_slice(&s[k + g..k + 2 * g]);
                    *tau = s[k + 2 * g];
                    k += 2 * g + 1;
                }
            }
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, Default)]
struct KanLayerCache {
    phi: Vec<f64>,
    dphi: Vec<f64>,
    act: Vec<f64>,
    dact: Vec<f64>,
}

/// Hidden widths obeying L_1 = 2Q + 1, L_k = 2L_{k−1} + 1.
pub fn strict_kart_widths(q: usize, hidden_layers: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden_layers);
    let mut prev = q;
    for _ in 0..hidden_layers {
        prev = 2 * prev + 1;
        w.push(prev);
    }
    w
}

/// KAN generator whose first layer sees s_q = Σ_p z_{q,p}.
#[derive(Debug, Clone, PartialEq)]
pub struct StrictKan {
    pub q: usize,
    /// Latent coordinates summed into each first-layer input (P, or 1 for a
    /// mixture prior).
    pub p_sum: usize,
    pub layers: Vec<KanLayer>,
    /// Set when hidden widths were given explicitly rather than by the law.
    pub width_override: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanSpec {
    pub q: usize,
    pub p_sum: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_widths: Option<Vec<usize>>,
    pub basis: BasisKind,
    pub n_basis: usize,
    pub activation: BaseActivation,
    pub mu: f64,
    pub tau: f64,
    pub init_noise: f64,
    pub input_domain: (f64, f64),
    pub hidden_domain: (f64, f64),
}

impl StrictKan {
    pub fn new(spec: &KanSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.q == 0 || spec.p_sum == 0 || spec.output_dim == 0 {
            return Err(KaemError::InvalidConfig(
                "KAN dimensions must be positive".into(),
            ));
        }
        let hidden = match &spec.hidden_widths {
            Some(w) => w.clone(),
            None => strict_kart_widths(spec.q, spec.hidden_layers),
        };
        if hidden.contains(&0) {
            return Err(KaemError::InvalidConfig("zero KAN hidden width".into()));
        }
        let mut widths = vec![spec.q];
        widths.extend(&hidden);
        widths.push(spec.output_dim);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let domain = if l == 0 {
                    spec.input_domain
                } else {
                    spec.hidden_domain
                };
                KanLayer::new(
                    w[0],
                    w[1],
                    spec.basis,
                    spec.n_basis,
                    spec.activation,
                    domain,
                    spec.mu,
                    spec.tau,
                    spec.init_noise,
                    rng,
                )
            })
            .collect();
        let kan = Self {
            q: spec.q,
            p_sum: spec.p_sum,
            layers,
            width_override: spec.hidden_widths.is_some(),
        };
        if !kan.width_override {
            assert!(kan.obeys_width_law(), "strict-KART width law violated");
        }
        Ok(kan)
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.n_out)
            .collect()
    }

    pub fn obeys_width_law(&self) -> bool {
        let h = self.hidden_widths();
        h == strict_kart_widths(self.q, h.len())
    }

    /// s_q = Σ_p z_{q·P + p}.
    pub fn inner_sums(&self, z: &[f64]) -> Vec<f64> {
        z.chunks(self.p_sum).map(|c| c.iter().sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    Mlp(Mlp),
    Kan(StrictKan),
}

/// G_Φ with sigmoid output, generation noise and Gaussian likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    pub arch: Architecture,
    pub sigma_noise: f64,
    pub sigma_x: f64,
}

/// Intermediate values of one forward pass, reused by the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// Input of every layer (latent or inner sums first).
    inputs: Vec<Vec<f64>>,
    kan: Vec<KanLayerCache>,
    /// μ_Φ(z).
    pub output: Vec<f64>,
}

impl ForwardCache {
    /// Inputs seen by layer `l`, used for KAN grid updates.
    pub fn layer_input(&self, l: usize) -> &[f64] {
        &self.inputs[l]
    }
}

impl GeneratorNet {
    pub fn new(arch: Architecture, sigma_noise: f64, sigma_x: f64) -> Result<Self> {
        if !(sigma_noise > 0.0 && sigma_x > 0.0) {
            return Err(KaemError::InvalidConfig(format!(
                "σ_noise = {sigma_noise} and σ_x = {sigma_x} must be positive"
            )));
        }
        Ok(Self {
            arch,
            sigma_noise,
            sigma_x,
        })
    }

    pub fn input_dim(&self) -> usize {
        match &self.arch {
            Architecture::Mlp(m) => m.layers[0].n_in,
            Architecture::Kan(k) => k.q * k.p_sum,
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.arch {
            Architecture::Mlp(m) => m.layers.last().unwrap().n_out,
            Architecture::Kan(k) => k.layers.last().unwrap().n_out,
        }
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.input_dim() {
            return Err(KaemError::DimensionMismatch {
                expected: self.input_dim(),
                got: z.len(),
            });
        }
        if let Some(&bad) = z.iter().find(|v| !v.is_finite()) {
            return Err(KaemError::NonFiniteInput(bad));
        }
        Ok(())
    }

    fn check_data(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.output_dim() {
            return Err(KaemError::DimensionMismatch {
                expected: self.output_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, z: &[f64]) -> Result<ForwardCache> {
        self.check_latent(z)?;
        let mut cache = ForwardCache::default();
        match &self.arch {
            Architecture::Mlp(m) => {
                let mut h = z.to_vec();
                let last = m.layers.len() - 1;
                for (l, layer) in m.layers.iter().enumerate() {
                    let mut a = Vec::with_capacity(layer.n_out);
                    layer.apply(&h, &mut a);
                    cache.inputs.push(h);
                    h = if l == last {
                        a.into_iter().map(sigmoid).collect()
                    } else {
                        a.into_iter().map(f64::tanh).collect()
                    };
                }
                cache.output = h;
            }
            Architecture::Kan(k) => {
                let mut h = k.inner_sums(z);
                for layer in &k.layers {
                    let mut lc = KanLayerCache::default();
                    let mut y = Vec::with_capacity(layer.n_out);
                    layer.forward(&h, &mut lc, &mut y);
                    cache.inputs.push(h);
                    cache.kan.push(lc);
                    h = y;
                }
                cache.output = h.into_iter().map(sigmoid).collect();
            }
        }
        Ok(cache)
    }

    /// μ_Φ(z).
    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(z)?.output)
    }

    /// μ_Φ(z) + σ_noise·ε.
    pub fn generate(&self, z: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let mut x = self.forward(z)?;
        for v in x.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *v += self.sigma_noise * n;
        }
        Ok(x)
    }

    fn log_lik_from_mean(&self, x: &[f64], mu: &[f64]) -> f64 {
        let s2 = self.sigma_x * self.sigma_x;
        let sq: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
        -0.5 * x.len() as f64 * (2.0 * PI * s2).ln() - sq / (2.0 * s2)
    }

    /// log N(x; μ_Φ(z), σ_x² I), normalizing constant included.
    pub fn log_likelihood(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.check_data(x)?;
        let mu = self.forward(z)?;
        Ok(self.log_lik_from_mean(x, &mu))
    }

    /// Log-likelihood from a cached forward pass.
    pub fn log_likelihood_cached(&self, x: &[f64], cache: &ForwardCache) -> Result<f64> {
        self.check_data(x)?;
        Ok(self.log_lik_from_mean(x, &cache.output))
    }

    /// Reverse pass for log p(x|z): returns ∇_z and, when `param_grad` is
    /// given, accumulates `scale·∇_Φ` into it.
    pub fn backward(
        &self,
        x: &[f64],
        cache: &ForwardCache,
        param_grad: Option<(&mut [f64], f64)>,
    ) -> Result<Vec<f64>> {
        self.check_data(x)?;
        let s2 = self.sigma_x * self.sigma_x;
        // gradient w.r.t. the pre-sigmoid output
        let mut delta: Vec<f64> = x
            .iter()
            .zip(&cache.output)
            .map(|(xi, m)| (xi - m) / s2 * m * (1.0 - m))
            .collect();
        if let Some((buf, _)) = &param_grad {
            if buf.len() != self.num_params() {
                return Err(KaemError::DimensionMismatch {
                    expected: self.num_params(),
                    got: buf.len(),
                });
            }
        }
        match &self.arch {
            Architecture::Mlp(m) => {
                let mut pg = param_grad;
                let offsets = self.layer_offsets();
                for l in (0..m.layers.len()).rev() {
                    let layer = &m.layers[l];
                    let h = &cache.inputs[l];
                    if let Some((buf, scale)) = pg.as_mut() {
                        let off = offsets[l];
                        let wlen = layer.w.len();
                        for o in 0..layer.n_out {
                            let f = *scale * delta[o];
                            let row = &mut buf[off + o * layer.n_in..off + (o + 1) * layer.n_in];
                            for (g, v) in row.iter_mut().zip(h) {
                                *g += f * v;
                            }
                            buf[off + wlen + o] += f;
                        }
                    }
                    let mut dh = vec![0.0; layer.n_in];
                    for o in 0..layer.n_out {
                        let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                        for (d, w) in dh.iter_mut().zip(row) {
                            *d += delta[o] * w;
                        }
                    }
                    if l > 0 {
                        // h = tanh(a) for every hidden layer
                        for (d, v) in dh.iter_mut().zip(h) {
                            *d *= 1.0 - v * v;
                        }
                    }
                    delta = dh;
                }
                Ok(delta)
            }
            Architecture::Kan(k) => {
                let mut pg = param_grad;
                let offsets = self.layer_offsets();
                let mut dx = Vec::new();
                for l in (0..k.layers.len()).rev() {
                    let layer = &k.layers[l];
                    let sub = pg
                        .as_mut()
                        .map(|(buf, scale)| (&mut buf[offsets[l]..offsets[l + 1]], *scale));
                    layer.backward(&cache.kan[l], &delta, sub, &mut dx);
                    std::mem::swap(&mut delta, &mut dx);
                }
                // ∂s_q/∂z_{q,p} = 1
                Ok(delta
                    .iter()
                    .flat_map(|&d| std::iter::repeat_n(d, k.p_sum))
                    .collect())
            }
        }
    }

    /// log p(x|z), ∇_z log p(x|z).
    pub fn log_likelihood_and_grad_z(&self, x: &[f64], z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward_cached(z)?;
        let ll = self.log_likelihood_cached(x, &cache)?;
        Ok((ll, self.backward(x, &cache, None)?))
    }

    pub fn grad_loglik_params(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward_cached(z)?;
        let mut g = vec![0.0; self.num_params()];
        self.backward(x, &cache, Some((&mut g, 1.0)))?;
        Ok(g)
    }

    pub fn grad_loglik_latent(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.log_likelihood_and_grad_z(x, z)?.1)
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let sizes: Vec<usize> = match &self.arch {
            Architecture::Mlp(m) => m.layers.iter().map(Dense::num_params).collect(),
            Architecture::Kan(k) => k.layers.iter().map(KanLayer::num_params).collect(),
        };
        let mut offs = vec![0];
        for s in sizes {
            offs.push(offs.last().unwrap() + s);
        }
        offs
    }

    pub fn num_params(&self) -> usize {
        *self.layer_offsets().last().unwrap()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        match &self.arch {
            Architecture::Mlp(m) => {
                for l in &m.layers {
                    out.extend_from_slice(&l.w);
                    out.extend_from_slice(&l.b);
                }
            }
            Architecture::Kan(k) => {
                for l in &k.layers {
                    l.write_params(&mut out);
                }
            }
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(KaemError::DimensionMismatch {
                expected: self.num_params(),
                got: p.len(),
            });
        }
        let mut k = 0;
        match &mut self.arch {
            Architecture::Mlp(m) => {
                for l in m.layers.iter_mut() {
                    let (nw, nb) = (l.w.len(), l.b.len());
                    l.w.copy_from_slice(&p[k..k + nw]);
                    l.b.copy_from_slice(&p[k + nw..k + nw + nb]);
                    k += nw + nb;
                }
            }
            Architecture::Kan(kan) => {
                for l in kan.layers.iter_mut() {
                    k += l.set_params(&p[k..]);
                }
            }
        }
        Ok(())
    }

    /// Grid-dependent KAN state (empty for an MLP).
    pub fn structure(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Architecture::Kan(k) = &self.arch {
            for l in &k.layers {
                l.structure(&mut out);
            }
        }
        out
    }

    pub fn set_structure(&mut self, s: &[f64]) -> Result<()> {
        let mut k = 0;
        if let Architecture::Kan(kan) = &mut self.arch {
            for l in kan.layers.iter_mut() {
                k += l.set_structure(&s[k..])?;
            }
        }
        if k != s.len() {
            return Err(KaemError::Parse(
                "generator structure length mismatch".into(),
            ));
        }
        Ok(())
    }

    /// Grid update of every KAN layer from latent samples. No-op for MLPs.
    pub fn update_grids(&mut self, latents: &[Vec<f64>], ratio: f64, decay: f64) -> Result<usize> {
        let caches: Vec<ForwardCache> = latents
            .iter()
            .map(|z| self.forward_cached(z))
            .collect::<Result<_>>()?;
        let mut moved = 0;
        if let Architecture::Kan(k) = &mut self.arch {
            for (l, layer) in k.layers.iter_mut().enumerate() {
                let inputs: Vec<Vec<f64>> = caches.iter().map(|c| c.inputs[l].clone()).collect();
                moved += layer.update_grids(&inputs, ratio, decay)?;
            }
        }
        Ok(moved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{central_difference, max_relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn kan_spec(q: usize, p: usize, out: usize, basis: BasisKind) -> KanSpec {
        KanSpec {
            q,
            p_sum: p,
            output_dim: out,
            hidden_layers: 1,
            hidden_widths: None,
            basis,
            n_basis: 6,
            activation: if basis == BasisKind::Rbf {
                BaseActivation::Relu
            } else {
                BaseActivation::None
            },
            mu: 1.0,
            tau: 1.0,
            init_noise: 0.5,
            input_domain: (-3.0, 3.0),
            hidden_domain: (-2.0, 2.0),
        }
    }

    fn mlp_net(rng: &mut ChaCha8Rng) -> GeneratorNet {
        GeneratorNet::new(
            Architecture::Mlp(Mlp::new(&[3, 5, 4, 2], rng).unwrap()),
            0.1,
            0.3,
        )
        .unwrap()
    }

    fn kan_net(rng: &mut ChaCha8Rng, basis: BasisKind) -> GeneratorNet {
        let k = StrictKan::new(&kan_spec(2, 2, 3, basis), rng).unwrap();
        GeneratorNet::new(Architecture::Kan(k), 0.1, 0.3).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    }

    #[test]
    fn zero_weight_mlp_outputs_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = mlp_net(&mut rng);
        net.set_params(&vec![0.0; net.num_params()]).unwrap();
        assert_eq!(net.forward(&[0.3, -1.0, 2.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for net in [mlp_net(&mut rng), kan_net(&mut rng, BasisKind::Rbf)] {
            let z = random_vec(&mut rng, net.input_dim(), -2.0, 2.0);
            let a = net.forward(&z).unwrap();
            let b = net.forward(&z).unwrap();
            assert_eq!(a, b);
            assert!(a.iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn kan_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = KanSpec {
            hidden_layers: 0,
            ..kan_spec(3, 2, 4, BasisKind::Rbf)
        };
        let kan = StrictKan::new(&spec, &mut rng).unwrap();
        let net = GeneratorNet::new(Architecture::Kan(kan.clone()), 0.1, 1.0).unwrap();
        let z = random_vec(&mut rng, 6, -1.5, 1.5);
        let mu = net.forward(&z).unwrap();
        for o in 0..4 {
            let mut y = 0.0;
            for q in 0..3 {
                let s: f64 = (0..2).map(|p| z[q * 2 + p]).sum();
                y += kan.layers[0].edge_basis(o, q).eval(s).unwrap();
            }
            assert!((sigmoid(y) - mu[o]).abs() < 1e-14);
        }
    }

    #[test]
    fn width_law() {
        assert_eq!(strict_kart_widths(17, 2), vec![35, 71]);
        assert_eq!(strict_kart_widths(81, 1), vec![163]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = StrictKan::new(&kan_spec(3, 1, 2, BasisKind::Rbf), &mut rng).unwrap();
        assert_eq!(k.hidden_widths(), vec![7]);
        assert!(k.obeys_width_law());
        let spec = KanSpec {
            hidden_widths: Some(vec![6]),
            ..kan_spec(3, 1, 2, BasisKind::Rbf)
        };
        let k = StrictKan::new(&spec, &mut rng).unwrap();
        assert!(k.width_override && !k.obeys_width_law());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = mlp_net(&mut rng);
        assert!(matches!(
            net.forward(&[0.0; 2]),
            Err(KaemError::DimensionMismatch { .. })
        ));
        assert!(net.log_likelihood(&[0.5; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn likelihood_at_mode_is_normalizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = mlp_net(&mut rng);
        net.sigma_x = 1.0;
        let z = [0.1, 0.2, 0.3];
        let mu = net.forward(&z).unwrap();
        let ll = net.log_likelihood(&mu, &z).unwrap();
        assert!((ll + (2.0 * PI).ln()).abs() < 1e-12);
        assert!((ll + 1.837877).abs() < 1e-6);
        let g = net.grad_loglik_params(&mu, &z).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(net
            .grad_loglik_latent(&mu, &z)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn quadratic_form_and_mode_dominance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = mlp_net(&mut rng);
        let z = [0.4, -0.4, 1.0];
        let mu = net.forward(&z).unwrap();
        let at_mode = net.log_likelihood(&mu, &z).unwrap();
        let d = [0.2, -0.1];
        let x1: Vec<f64> = mu.iter().zip(&d).map(|(m, e)| m + e).collect();
        let x2: Vec<f64> = mu
            .iter()
            .zip(&d)
            .map(|(m, e)| m + std::f64::consts::SQRT_2 * e)
            .collect();
        let l1 = net.log_likelihood(&x1, &z).unwrap();
        let l2 = net.log_likelihood(&x2, &z).unwrap();
        let sq = 0.05;
        assert!((l1 - l2 - sq / (2.0 * 0.09)).abs() < 1e-12);
        assert!(l1 <= at_mode && l2 <= at_mode);
    }

    #[test]
    fn generation_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = mlp_net(&mut rng);
        let z = [0.1, 0.0, -0.3];
        let mu = net.forward(&z).unwrap();
        let n = 10_000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            let x = net.generate(&z, &mut rng).unwrap();
            mean[0] += x[0] / n as f64;
            mean[1] += x[1] / n as f64;
        }
        for i in 0..2 {
            assert!((mean[i] - mu[i]).abs() < 3.0 * net.sigma_noise / 100.0);
        }
        let a = net.generate(&z, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = net.generate(&z, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_ne!(a, b);
        net.sigma_noise = 0.0;
        assert_eq!(net.generate(&z, &mut rng).unwrap(), mu);
        assert!(GeneratorNet::new(net.arch.clone(), 0.0, 1.0).is_err());
    }

    #[test]
    fn affine_latent_gradient_by_hand() {
        // one dense layer, 2 → 2, sigmoid output
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = Mlp::new(&[2, 2], &mut rng).unwrap();
        m.layers[0].w = vec![0.5, -1.0, 2.0, 0.25];
        m.layers[0].b = vec![0.1, -0.2];
        let net = GeneratorNet::new(Architecture::Mlp(m), 0.1, 0.5).unwrap();
        let z = [0.3, -0.6];
        let x = [0.9, 0.2];
        let a = [0.5 * 0.3 - 1.0 * -0.6 + 0.1, 2.0 * 0.3 + 0.25 * -0.6 - 0.2];
        let mu = [sigmoid(a[0]), sigmoid(a[1])];
        let r: Vec<f64> = (0..2)
            .map(|i| (x[i] - mu[i]) / 0.25 * mu[i] * (1.0 - mu[i]))
            .collect();
        let want = [0.5 * r[0] + 2.0 * r[1], -1.0 * r[0] + 0.25 * r[1]];
        let got = net.grad_loglik_latent(&x, &z).unwrap();
        for i in 0..2 {
            assert!((got[i] - want[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for trial in 0..20 {
            let net = match trial % 3 {
                0 => mlp_net(&mut rng),
                1 => kan_net(&mut rng, BasisKind::Rbf),
                _ => kan_net(&mut rng, BasisKind::Morlet),
            };
            let z = random_vec(&mut rng, net.input_dim(), -1.5, 1.5);
            let x = random_vec(&mut rng, net.output_dim(), 0.0, 1.0);
            let gz = net.grad_loglik_latent(&x, &z).unwrap();
            let fdz = central_difference(|v| net.log_likelihood(&x, v).unwrap(), &z, 1e-5);
            assert!(max_relative_error(&gz, &fdz) < 1e-4, "trial {trial} latent");
            let gp = net.grad_loglik_params(&x, &z).unwrap();
            let p0 = net.params();
            let fdp = central_difference(
                |p| {
                    let mut n = net.clone();
                    n.set_params(p).unwrap();
                    n.log_likelihood(&x, &z).unwrap()
                },
                &p0,
                1e-5,
            );
            assert!(max_relative_error(&gp, &fdp) < 1e-4, "trial {trial} params");
        }
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = mlp_net(&mut rng);
        let mu = net.forward(&[0.0, 0.5, 1.0]).unwrap();
        let x = [0.3, 0.8];
        let a = net.log_lik_from_mean(&x, &mu);
        let b = net.log_lik_from_mean(&[x[1], x[0]], &[mu[1], mu[0]]);
        assert_eq!(a, b);
    }

    #[test]
    fn kan_grid_update_preserves_outputs_approximately() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut net = kan_net(&mut rng, BasisKind::Rbf);
        let zs: Vec<Vec<f64>> = (0..200)
            .map(|_| random_vec(&mut rng, 4, -1.0, 1.0))
            .collect();
        let before: Vec<Vec<f64>> = zs.iter().map(|z| net.forward(z).unwrap()).collect();
        let moved = net.update_grids(&zs, 0.05, 0.999).unwrap();
        assert!(moved > 0);
        let after: Vec<Vec<f64>> = zs.iter().map(|z| net.forward(z).unwrap()).collect();
        let drift = before
            .iter()
            .flatten()
            .zip(after.iter().flatten())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(drift < 0.1, "{drift}");
    }

    #[test]
    fn structure_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut net = kan_net(&mut rng, BasisKind::Rbf);
        let zs: Vec<Vec<f64>> = (0..50)
            .map(|_| random_vec(&mut rng, 4, -1.0, 1.0))
            .collect();
        net.update_grids(&zs, 0.05, 0.999).unwrap();
        let mut other = kan_net(&mut rng, BasisKind::Rbf);
        other.set_structure(&net.structure()).unwrap();
        other.set_params(&net.params()).unwrap();
        assert_eq!(other, net);
    }
}
