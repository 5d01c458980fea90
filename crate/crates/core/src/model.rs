//! A prior and a generator built together from one configuration.

use rand::Rng;

use crate::config::{Config, GeneratorKind};
use crate::error::{KaemError, Result};
use crate::generator::{Architecture, GeneratorNet, KanSpec, Mlp, StrictKan};
use crate::prior::{MixturePrior, PriorMode, PriorSpec};
use crate::rng::{self, tag, StreamRng};

#[derive(Debug, Clone)]
pub struct Kaem {
    pub prior: MixturePrior,
    pub generator: GeneratorNet,
}

/// Domain hidden KAN layers start from before any grid update.
pub const HIDDEN_DOMAIN: (f64, f64) = (-2.0, 2.0);

pub fn prior_spec(cfg: &Config) -> PriorSpec {
    PriorSpec {
        q: cfg.prior_q,
        p: cfg.prior_p,
        mode: cfg.prior_mode,
        basis: cfg.prior_basis,
        n_basis: cfg.prior_grid_size,
        activation: cfg.prior_activation,
        base: cfg.prior_reference,
        domain: cfg.prior_domain,
        n_quad: cfg.prior_quad_nodes,
        init_noise: cfg.prior_eps_init,
        mu: cfg.prior_mu,
        base_scale: cfg.prior_base_scale,
        spline_scale: cfg.prior_spline_scale,
        tau: cfg.prior_tau,
        tau_trainable: cfg.prior_tau_trainable,
        lambda: cfg.prior_lambda,
    }
}

/// Interval covering Σ_p z_{q,p} when every z lies in `domain`: the centre
/// is scaled by P and the half-width by √P.
pub fn inner_sum_domain(domain: (f64, f64), p: usize) -> (f64, f64) {
    let pf = p as f64;
    let c = 0.5 * (domain.0 + domain.1) * pf;
    let h = 0.5 * (domain.1 - domain.0) * pf.sqrt();
    (c - h, c + h)
}

impl Kaem {
    /// Fresh model for data of dimension `output_dim`. Initialization draws
    /// come from the `INIT` stream of `cfg.seed`.
    pub fn new(cfg: &Config, output_dim: usize) -> Result<Self> {
        cfg.validate()?;
        if output_dim == 0 {
            return Err(KaemError::InvalidConfig("data dimension is zero".into()));
        }
        let mut r: StreamRng = rng::stream(cfg.seed, &[tag::INIT]);
        let spec = prior_spec(cfg);
        let prior = MixturePrior::new(&spec, &mut r)?;
        let generator = build_generator(cfg, &prior, output_dim, &mut r)?;
        Ok(Self { prior, generator })
    }

    pub fn latent_dim(&self) -> usize {
        self.prior.latent_dim()
    }

    pub fn num_prior_params(&self) -> usize {
        self.prior.num_params()
    }

    pub fn num_params(&self) -> usize {
        self.prior.num_params() + self.generator.num_params()
    }

    /// Prior parameters followed by generator parameters.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.prior.params();
        p.extend(self.generator.params());
        p
    }

    /// Inverse of [`Kaem::params`]; renormalizes the prior.
    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(KaemError::DimensionMismatch {
                expected: self.num_params(),
                got: p.len(),
            });
        }
        let np = self.prior.num_params();
        self.prior.set_params(&p[..np])?;
        self.generator.set_params(&p[np..])
    }

    /// Prior draws pushed through the generator with observation noise.
    pub fn sample(&self, n: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut zs = Vec::with_capacity(n);
        let mut xs = Vec::with_capacity(n);
        for i in 0..n {
            let mut r = rng::stream(seed, &[tag::GENERATE, i as u64]);
            let z = self.prior.sample_prior(&mut r)?;
            xs.push(self.generator.generate(&z, &mut r)?);
            zs.push(z);
        }
        Ok((zs, xs))
    }
}

fn build_generator(
    cfg: &Config,
    prior: &MixturePrior,
    output_dim: usize,
    r: &mut impl Rng,
) -> Result<GeneratorNet> {
    let latent = prior.latent_dim();
    let arch = match cfg.gen_kind {
        GeneratorKind::Mlp => {
            let mut widths = vec![latent];
            widths.extend(cfg.gen_hidden.clone().unwrap_or_else(|| vec![64, 64]));
            widths.push(output_dim);
            Architecture::Mlp(Mlp::new(&widths, r)?)
        }
        GeneratorKind::Kan => {
            let (q, p_sum) = match prior.mode {
                PriorMode::Factorized => (prior.q, prior.p),
                PriorMode::Mixture => (prior.q, 1),
            };
            let per_coord = prior.components[0].domain();
            let spec = KanSpec {
                q,
                p_sum,
                output_dim,
                hidden_layers: cfg.gen_hidden_layers,
                hidden_widths: cfg.gen_hidden.clone(),
                basis: cfg.gen_basis,
                n_basis: cfg.gen_grid_size,
                activation: cfg.gen_activation,
                mu: cfg.gen_mu,
                tau: cfg.gen_tau,
                init_noise: cfg.gen_eps_init,
                input_domain: inner_sum_domain(per_coord, p_sum),
                hidden_domain: HIDDEN_DOMAIN,
            };
            Architecture::Kan(StrictKan::new(&spec, r)?)
        }
    };
    GeneratorNet::new(arch, cfg.gen_noise, cfg.gen_sigma_llhood)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Config {
        Config {
            prior_q: 5,
            prior_p: 2,
            gen_grid_size: 6,
            prior_grid_size: 8,
            prior_quad_nodes: 64,
            ..Config::default()
        }
    }

    #[test]
    fn kan_model_shapes() {
        let m = Kaem::new(&small(), 9).unwrap();
        assert_eq!(m.latent_dim(), 10);
        assert_eq!(m.generator.input_dim(), 10);
        assert_eq!(m.generator.output_dim(), 9);
        match &m.generator.arch {
            Architecture::Kan(k) => assert_eq!(k.hidden_widths(), vec![11]),
            _ => panic!(),
        }
    }

    #[test]
    fn params_round_trip_and_seeded_init() {
        let cfg = small();
        let mut a = Kaem::new(&cfg, 4).unwrap();
        let b = Kaem::new(&cfg, 4).unwrap();
        assert_eq!(a.params(), b.params());
        let p = a.params();
        a.set_params(&p).unwrap();
        assert_eq!(a.params(), p);
        let c = Kaem::new(&Config { seed: 1, ..cfg }, 4).unwrap();
        assert_ne!(c.params(), p);
    }

    #[test]
    fn mixture_mlp_model() {
        let cfg = Config {
            prior_q: 2,
            prior_p: 8,
            prior_mode: PriorMode::Mixture,
            gen_kind: GeneratorKind::Mlp,
            gen_hidden: Some(vec![16]),
            ..small()
        };
        let m = Kaem::new(&cfg, 2).unwrap();
        assert_eq!(m.latent_dim(), 2);
        let (zs, xs) = m.sample(5, 3).unwrap();
        assert_eq!((zs.len(), xs[0].len()), (5, 2));
        assert_eq!(m.sample(5, 3).unwrap().1, xs);
    }

    #[test]
    fn inner_sum_interval() {
        assert_eq!(inner_sum_domain((-1.5, 1.5), 4), (-3.0, 3.0));
        assert_eq!(inner_sum_domain((0.0, 1.0), 1), (0.0, 1.0));
    }
}
