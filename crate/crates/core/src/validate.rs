//! Oracle-backed checks shared by the `validate` subcommand and the
//! acceptance tests. Each check returns a report rather than panicking.

use std::fmt;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::{BaseActivation, BasisFamily, BasisKind, UnivariateBasis};
use crate::config::{Config, Criterion, GeneratorKind};
use crate::error::{KaemError, Result};
use crate::generator::{Architecture, GeneratorNet, KanSpec, Mlp, StrictKan};
use crate::inference::{
    ess, normalize_log_weights, population_ula, power_posterior_logdensity_and_grad,
    power_schedule, residual_deterministic_counts, residual_resample, ula_chain, LatentTarget,
    PosteriorTarget, UlaConfig,
};
use crate::io::data::rings8_mean;
use crate::io::synth2d;
use crate::model::Kaem;
use crate::oracles::{
    breakpoints, finite_difference, ks_statistic, max_relative_error, piecewise_simpson,
    reference_energy, reference_log_base, ConjugateModel, DenseCdf, GridModel1D,
};
use crate::prior::{BaseDensity, MixturePrior, PriorMode, PriorSpec, TiltedDensity1D};
use crate::rng::{self, tag, StreamRng};
use crate::trainer::{
    kl_corrected_logml, steppingstone_logml, thermo_trapezoid, MemoryObserver, Trainer,
};

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: {} ({:.1} s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn report(id: u32, name: &'static str, start: Instant, r: Result<(bool, String)>) -> CheckReport {
    let (pass, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckReport {
        id,
        name,
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Random tilted density of the given kind with a cycled reference density.
pub fn random_tilted(kind: BasisKind, i: usize, r: &mut StreamRng) -> Result<TiltedDensity1D> {
    let base = [
        BaseDensity::Gaussian,
        BaseDensity::Uniform,
        BaseDensity::None,
    ][i % 3];
    let domain = base.default_domain();
    let mut b = match kind {
        BasisKind::Rbf => {
            UnivariateBasis::rbf_uniform(domain, 20, 1.0).with_activation(BaseActivation::Relu)
        }
        BasisKind::Morlet => {
            UnivariateBasis::morlet_uniform(domain, 10, r.random_range(0.5..2.0), true)
        }
    };
    for c in b.coefficients.iter_mut() {
        let n: f64 = StandardNormal.sample(r);
        *c = n;
    }
    b.base_scale = r.random_range(-1.0..1.0);
    let mut d = TiltedDensity1D::new(b, base, 200);
    d.normalize()?;
    Ok(d)
}

/// Breakpoints of a tilted integrand: ReLU kink and uniform-support edges.
fn density_breaks(d: &TiltedDensity1D) -> Vec<f64> {
    let (a, b) = d.domain();
    let mut extra = vec![0.0, 1.0];
    if let BasisFamily::Morlet {
        translations,
        scales,
        ..
    } = &d.energy.family
    {
        for (t, s) in translations.iter().zip(scales) {
            extra.extend([t - 6.0 * s.abs(), t + 6.0 * s.abs()]);
        }
    }
    breakpoints(a, b, &extra)
}

/// Criterion 1: KS distance between ITS draws and an independent dense CDF.
pub fn its_exactness(seed: u64, draws: usize) -> CheckReport {
    let start = Instant::now();
    let res = (|| {
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for (ki, kind) in [BasisKind::Rbf, BasisKind::Morlet].into_iter().enumerate() {
            for i in 0..10 {
                let mut r = rng::stream(seed, &[tag::VALIDATE, 1, ki as u64, i as u64]);
                let d = random_tilted(kind, i, &mut r)?;
                let f = reference_energy(&d.energy);
                let base = d.base;
                let cdf = DenseCdf::new(
                    |z| f(z) + reference_log_base(base, z),
                    &density_breaks(&d),
                    20_000,
                );
                let xs: Vec<f64> = (0..draws)
                    .map(|_| d.its_sample(r.random::<f64>()))
                    .collect::<Result<_>>()?;
                worst = worst.max(ks_statistic(&xs, |z| cdf.eval(z))?);
                count += 1;
            }
        }
        Ok((
            worst < 0.01,
            format!("max KS {worst:.5} over {count} densities × {draws} draws (bound 0.01)"),
        ))
    })();
    report(1, "its-exactness", start, res)
}

/// ∫ p over the domain by piecewise Simpson, independent of the main rule.
pub fn dense_mass(d: &TiltedDensity1D) -> Result<f64> {
    let v = piecewise_simpson(
        |z| d.log_density(z).map(f64::exp).unwrap_or(f64::NAN),
        &density_breaks(d),
        20_000,
    );
    if v.is_finite() {
        Ok(v)
    } else {
        Err(KaemError::Invalid("density integral is not finite".into()))
    }
}

fn worst_mass_error(prior: &MixturePrior) -> Result<f64> {
    let mut w: f64 = 0.0;
    for c in &prior.components {
        w = w.max((dense_mass(c)? - 1.0).abs());
    }
    Ok(w)
}

fn normalization_configs(seed: u64) -> Vec<Config> {
    let small = Config {
        seed,
        prior_q: 3,
        prior_p: 2,
        gen_kind: GeneratorKind::Mlp,
        gen_hidden: Some(vec![16]),
        criterion: Criterion::MleIs,
        batch_size: 20,
        particles: 20,
        epochs: 1,
        lr: 0.01,
        grid_frequency: 25,
        grid_samples: 100,
        metrics_every: 10,
        ..Config::default()
    };
    vec![
        small.clone(),
        Config {
            prior_reference: BaseDensity::Uniform,
            ..small.clone()
        },
        Config {
            prior_mode: PriorMode::Mixture,
            prior_basis: BasisKind::Morlet,
            prior_activation: BaseActivation::None,
            prior_reference: BaseDensity::None,
            ..small
        },
    ]
}

/// Criterion 2: every component integrates to one before and after 100
/// optimizer steps.
pub fn normalization(seed: u64) -> CheckReport {
    let start = Instant::now();
    let res = (|| {
        let data = synth2d("rings8", 2000, &mut rng::stream(seed, &[tag::DATA]))?;
        let mut before: f64 = 0.0;
        let mut after: f64 = 0.0;
        let mut moved = 0.0;
        for cfg in normalization_configs(seed) {
            let model = Kaem::new(&cfg, 2)?;
            before = before.max(worst_mass_error(&model.prior)?);
            let p0 = model.prior.params();
            let mut t = Trainer::new(cfg, model)?;
            t.train(&data.examples, &mut MemoryObserver::default())?;
            if t.update != 100 {
                return Err(KaemError::Invalid(format!(
                    "ran {} updates, expected 100",
                    t.update
                )));
            }
            after = after.max(worst_mass_error(&t.model.prior)?);
            let p1 = t.model.prior.params();
            moved += p0.iter().zip(&p1).map(|(a, b)| (a - b).abs()).sum::<f64>();
        }
        Ok((
            before <= 1e-6 && after <= 1e-6 && moved > 0.0,
            format!("max |∫p − 1| before {before:.2e}, after 100 steps {after:.2e} (bound 1e-6)"),
        ))
    })();
    report(2, "normalization", start, res)
}

fn random_prior(i: usize, r: &mut StreamRng) -> Result<MixturePrior> {
    let mode = if i % 2 == 0 {
        PriorMode::Factorized
    } else {
        PriorMode::Mixture
    };
    let basis = if (i / 2) % 2 == 0 {
        BasisKind::Rbf
    } else {
        BasisKind::Morlet
    };
    let base = [
        BaseDensity::Gaussian,
        BaseDensity::Uniform,
        BaseDensity::None,
    ][i % 3];
    let spec = PriorSpec {
        q: 2,
        p: 2,
        mode,
        basis,
        n_basis: if basis == BasisKind::Rbf { 12 } else { 6 },
        activation: if basis == BasisKind::Rbf {
            BaseActivation::Relu
        } else {
            BaseActivation::None
        },
        base,
        n_quad: 100,
        init_noise: 0.5,
        ..PriorSpec::default()
    };
    let mut p = MixturePrior::new(&spec, r)?;
    if mode == PriorMode::Mixture {
        for l in p.logits.iter_mut() {
            *l = r.random_range(-1.0..1.0);
        }
    }
    Ok(p)
}

fn random_generator(
    i: usize,
    latent: usize,
    q: usize,
    out: usize,
    r: &mut StreamRng,
) -> Result<GeneratorNet> {
    let arch = match i % 3 {
        0 => Architecture::Mlp(Mlp::new(&[latent, 6, out], r)?),
        k => {
            let basis = if k == 1 {
                BasisKind::Rbf
            } else {
                BasisKind::Morlet
            };
            let spec = KanSpec {
                q,
                p_sum: latent / q,
                output_dim: out,
                hidden_layers: 1,
                hidden_widths: None,
                basis,
                n_basis: 6,
                activation: BaseActivation::Relu,
                mu: 1.0,
                tau: 1.0,
                init_noise: 0.5,
                input_domain: (-3.0, 3.0),
                hidden_domain: (-2.0, 2.0),
            };
            Architecture::Kan(StrictKan::new(&spec, r)?)
        }
    };
    GeneratorNet::new(arch, 0.1, r.random_range(0.2..0.6))
}

const FD_STEP: f64 = 1e-5;

/// Central differences of a fallible function; a failed evaluation becomes
/// NaN, which the difference routine rejects.
fn fd_result(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], step: f64) -> Result<Vec<f64>> {
    finite_difference(|v| f(v).unwrap_or(f64::NAN), x, step)
}
const GRAD_TOL: f64 = 1e-4;

/// Criterion 3: analytic gradients against central differences.
pub fn gradient_suite(seed: u64) -> CheckReport {
    let start = Instant::now();
    let res = (|| {
        let n = 20;
        let mut worst = [0.0f64; 4];
        for i in 0..n {
            let mut r = rng::stream(seed, &[tag::VALIDATE, 3, i as u64]);
            // basis: input and parameter gradients
            for kind in [BasisKind::Rbf, BasisKind::Morlet] {
                let d = random_tilted(kind, i, &mut r)?;
                let b = d.energy.clone();
                let (lo, hi) = b.domain;
                let z = r.random_range(lo..hi);
                let g = b.grad_input(z)?;
                let fd = fd_result(|x| b.eval(x[0]), &[z], FD_STEP)?;
                worst[0] = worst[0].max(max_relative_error(&[g], &fd));
                let gp = b.grad_params(z)?;
                let p0 = b.params();
                let fd = fd_result(
                    |p| {
                        let mut c = b.clone();
                        c.set_params(p);
                        c.eval(z)
                    },
                    &p0,
                    FD_STEP,
                )?;
                worst[0] = worst[0].max(max_relative_error(&gp, &fd));
            }
            // prior: parameters and latent
            let prior = random_prior(i, &mut r)?;
            let z = prior.sample_prior(&mut r)?;
            let g = prior.grad_log_prior_params(&z)?;
            let p0 = prior.params();
            let fd = fd_result(
                |p: &[f64]| {
                    let mut c = prior.clone();
                    c.set_params(p)?;
                    Ok(c.log_prior(&z)? - c.regularizer())
                },
                &p0,
                FD_STEP,
            )?;
            worst[1] = worst[1].max(max_relative_error(&g, &fd));
            let (_, gz) = prior.log_prior_and_grad_z(&z)?;
            let fd = fd_result(|x| prior.log_prior(x), &z, FD_STEP)?;
            worst[1] = worst[1].max(max_relative_error(&gz, &fd));
            // generator: parameters and latent
            let latent = prior.latent_dim();
            let gen = random_generator(i, latent, prior.q, 3, &mut r)?;
            let x: Vec<f64> = (0..3).map(|_| r.random::<f64>()).collect();
            let gp = gen.grad_loglik_params(&x, &z)?;
            let p0 = gen.params();
            let fd = fd_result(
                |p| {
                    let mut c = gen.clone();
                    c.set_params(p)?;
                    c.log_likelihood(&x, &z)
                },
                &p0,
                FD_STEP,
            )?;
            worst[2] = worst[2].max(max_relative_error(&gp, &fd));
            let gz = gen.grad_loglik_latent(&x, &z)?;
            let fd = fd_result(|v| gen.log_likelihood(&x, v), &z, FD_STEP)?;
            worst[2] = worst[2].max(max_relative_error(&gz, &fd));
            // power posterior in the latent
            let target = PosteriorTarget {
                prior: &prior,
                generator: &gen,
                x: &x,
            };
            let t = r.random::<f64>();
            let (_, g, _) = power_posterior_logdensity_and_grad(&target, t, &z)?;
            let fd = fd_result(
                |v| Ok(power_posterior_logdensity_and_grad(&target, t, v)?.0),
                &z,
                FD_STEP,
            )?;
            worst[3] = worst[3].max(max_relative_error(&g, &fd));
        }
        let pass = worst.iter().all(|w| *w <= GRAD_TOL);
        Ok((
            pass,
            format!(
                "max rel. err basis {:.1e}, prior {:.1e}, generator {:.1e}, power posterior {:.1e} over {n} instances each (bound 1e-4)",
                worst[0], worst[1], worst[2], worst[3]
            ),
        ))
    })();
    report(3, "gradient-suite", start, res)
}

/// Criterion 4: the prior score has zero mean under ITS draws.
pub fn score_identity(seed: u64, draws: usize) -> CheckReport {
    let start = Instant::now();
    let res = (|| {
        let specs = [
            PriorSpec {
                q: 1,
                p: 2,
                init_noise: 0.5,
                ..PriorSpec::default()
            },
            PriorSpec {
                q: 1,
                p: 1,
                basis: BasisKind::Morlet,
                n_basis: 8,
                activation: BaseActivation::None,
                base: BaseDensity::None,
                init_noise: 0.5,
                ..PriorSpec::default()
            },
            PriorSpec {
                q: 1,
                p: 3,
                mode: PriorMode::Mixture,
                init_noise: 0.5,
                ..PriorSpec::default()
            },
        ];
        let mut checked = 0;
        let mut failed = 0;
        let mut worst: f64 = 0.0;
        for (si, spec) in specs.iter().enumerate() {
            let mut r = rng::stream(seed, &[tag::VALIDATE, 4, si as u64]);
            let mut prior = MixturePrior::new(spec, &mut r)?;
            if prior.mode == PriorMode::Mixture {
                prior.logits = vec![0.4, -0.3, 0.1];
            }
            let np = prior.num_params();
            let mut sum = vec![0.0; np];
            let mut sq = vec![0.0; np];
            for _ in 0..draws {
                let z = prior.sample_prior(&mut r)?;
                let mut g = vec![0.0; np];
                prior.accumulate_grad_log_prior_params(&z, 1.0, &mut g)?;
                for j in 0..np {
                    sum[j] += g[j];
                    sq[j] += g[j] * g[j];
                }
            }
            let n = draws as f64;
            for j in 0..np {
                let mean = sum[j] / n;
                let var = (sq[j] / n - mean * mean).max(0.0);
                let se = (var / n).sqrt();
                checked += 1;
                let z = if se > 0.0 {
                    mean.abs() / se
                } else if mean == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                worst = worst.max(z);
                if z > 3.0 {
                    failed += 1;
                }
            }
        }
        Ok((
            failed == 0,
            format!("{failed}/{checked} parameters beyond 3 SE; max |mean|/SE = {worst:.2} ({draws} draws)"),
        ))
    })();
    report(4, "score-identity", start, res)
}

/// Conjugate model as a sampling target with N(0, 1) prior.
pub struct ConjugateTarget(pub ConjugateModel);

impl LatentTarget for ConjugateTarget {
    fn dim(&self) -> usize {
        1
    }
    fn log_prior_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((crate::prior::std_normal_log_pdf(z[0]), vec![-z[0]]))
    }
    fn log_lik_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.0.log_lik(z[0]), vec![self.0.dlog_lik(z[0])]))
    }
    fn log_lik(&self, z: &[f64]) -> Result<f64> {
        Ok(self.0.log_lik(z[0]))
    }
    fn sample_prior(&self, r: &mut StreamRng) -> Result<Vec<f64>> {
        Ok(vec![StandardNormal.sample(r)])
    }
}

pub fn random_conjugate(r: &mut StreamRng) -> ConjugateModel {
    ConjugateModel {
        a: r.random_range(0.3..1.5) * if r.random::<bool>() { 1.0 } else { -1.0 },
        b: r.random_range(-1.0..1.0),
        sigma: r.random_range(0.5..1.5),
        x: r.random_range(-2.0..2.0),
    }
}

/// Sampler settings for the evidence check.
pub const EVIDENCE_ULA: UlaConfig = UlaConfig {
    eta: 0.002,
    n_local: 1500,
};

/// Criterion 5: thermodynamic and steppingstone evidence estimates, the
/// trapezoid convergence rate and the KL-corrected identity.
pub fn evidence_estimation(seed: u64) -> CheckReport {
    let start = Instant::now();
    let res = (|| {
        let temps = power_schedule(20, 2.0)?;
        let temps2 = power_schedule(40, 2.0)?;
        let mut worst_ti: f64 = 0.0;
        let mut worst_ss: f64 = 0.0;
        let mut worst_ratio = f64::INFINITY;
        let mut worst_kl: f64 = 0.0;
        for i in 0..20 {
            let mut r = rng::stream(seed, &[tag::VALIDATE, 5, i]);
            let m = random_conjugate(&mut r);
            let exact = m.log_evidence();
            let target = ConjugateTarget(m);
            let (pop, e) = population_ula(&target, &temps, 512, EVIDENCE_ULA, &mut r)?;
            let ti = thermo_trapezoid(&e, &temps)?;
            let lls: Vec<Vec<f64>> = pop
                .replicas
                .iter()
                .map(|row| row.iter().map(|x| x.log_lik).collect())
                .collect();
            let ss = steppingstone_logml(&lls, &temps)?;
            worst_ti = worst_ti.max((ti - exact).abs());
            worst_ss = worst_ss.max((ss - exact).abs());
            // discretization bias with exact E_k
            let bias = |ts: &[f64]| -> Result<f64> {
                let ek: Vec<f64> = ts.iter().map(|&t| m.expected_log_lik(t)).collect();
                Ok((thermo_trapezoid(&ek, ts)? - exact).abs())
            };
            worst_ratio = worst_ratio.min(bias(&temps)? / bias(&temps2)?);
            let g = m.to_grid(2001, 8.0)?;
            let kl = kl_corrected_logml(&g, &power_schedule(5, 2.0)?)?;
            worst_kl = worst_kl.max((kl - g.grid_log_evidence()).abs());
        }
        Ok((
            worst_ti <= 0.05 && worst_ss <= 0.05 && worst_ratio >= 3.0 && worst_kl <= 1e-8,
            format!(
                "max |TI − log p(x)| {worst_ti:.4}, max |SS − log p(x)| {worst_ss:.4} (bound 0.05); min bias ratio N_t 20→40 {worst_ratio:.2} (≥ 3); KL identity err {worst_kl:.1e} (≤ 1e-8)"
            ),
        ))
    })();
    report(5, "evidence-estimation", start, res)
}

/// N(0, 1) prior with a two-mode likelihood: peaks at ±1.5, weights 0.9 and
/// 0.1, width 0.3.
pub struct BimodalTarget;

impl BimodalTarget {
    const W: f64 = 0.3;

    fn lik_parts(z: f64) -> (f64, f64) {
        let c = -0.5 * (2.0 * std::f64::consts::PI * Self::W * Self::W).ln();
        let a = 0.9f64.ln() + c - (z - 1.5).powi(2) / (2.0 * Self::W * Self::W);
        let b = 0.1f64.ln() + c - (z + 1.5).powi(2) / (2.0 * Self::W * Self::W);
        (a, b)
    }

    pub fn log_lik_value(z: f64) -> f64 {
        let (a, b) = Self::lik_parts(z);
        let m = a.max(b);
        m + ((a - m).exp() + (b - m).exp()).ln()
    }

    pub fn grid() -> Result<GridModel1D> {
        GridModel1D::new(
            -8.0,
            8.0,
            4001,
            crate::prior::std_normal_log_pdf,
            Self::log_lik_value,
        )
    }
}

impl LatentTarget for BimodalTarget {
    fn dim(&self) -> usize {
        1
    }
    fn log_prior_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((crate::prior::std_normal_log_pdf(z[0]), vec![-z[0]]))
    }
    fn log_lik_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = Self::lik_parts(z[0]);
        let ll = Self::log_lik_value(z[0]);
        let w2 = Self::W * Self::W;
        let g = (a - ll).exp() * (-(z[0] - 1.5) / w2) + (b - ll).exp() * (-(z[0] + 1.5) / w2);
        Ok((ll, vec![g]))
    }
    fn sample_prior(&self, r: &mut StreamRng) -> Result<Vec<f64>> {
        Ok(vec![StandardNormal.sample(r)])
    }
}

/// Total variation between a sample histogram and grid bin masses on
/// `bins` bins over [lo, hi]; mass outside counts fully.
pub fn histogram_tv(samples: &[f64], reference: &[f64], lo: f64, hi: f64) -> f64 {
    let bins = reference.len();
    let mut h = vec![0.0; bins];
    let mut outside = 0.0;
    let w = 1.0 / samples.len() as f64;
    for &x in samples {
        if x < lo || x >= hi {
            outside += w;
        } else {
            let k = (((x - lo) / (hi - lo)) * bins as f64) as usize;
            h[k.min(bins - 1)] += w;
        }
    }
    let ref_out = 1.0 - reference.iter().sum::<f64>();
    0.5 * (h
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        + (outside - ref_out).abs())
}

pub const SAMPLER_TEMPS: usize = 10;
pub const SAMPLER_ULA: UlaConfig = UlaConfig {
    eta: 0.005,
    n_local: 600,
};

/// Criterion 6: tempered population marginals against grid power
/// posteriors, and single-chain ULA at the same gradient budget.
pub fn sampler_correctness(seed: u64, particles: usize) -> CheckReport {
    let start = Instant::now();
    let res = (|| {
        let grid = BimodalTarget::grid()?;
        let temps = power_schedule(SAMPLER_TEMPS, 2.0)?;
        let (lo, hi, bins) = (-4.0, 4.0, 40);
        let mut r = rng::stream(seed, &[tag::VALIDATE, 6, 0]);
        let (pop, _) = population_ula(&BimodalTarget, &temps, particles, SAMPLER_ULA, &mut r)?;
        let mut tv_max: f64 = 0.0;
        for (k, &t) in temps.iter().enumerate() {
            let xs: Vec<f64> = pop.replicas[k].iter().map(|rep| rep.z[0]).collect();
            let reference = grid.binned_power_posterior(t, lo, hi, bins);
            tv_max = tv_max.max(histogram_tv(&xs, &reference, lo, hi));
        }
        let tv_tempered = {
            let xs: Vec<f64> = pop.replicas[SAMPLER_TEMPS]
                .iter()
                .map(|rep| rep.z[0])
                .collect();
            histogram_tv(&xs, &grid.binned_power_posterior(1.0, lo, hi, bins), lo, hi)
        };
        // one chain per particle with the gradient budget of a whole ladder
        let budget = UlaConfig {
            eta: SAMPLER_ULA.eta,
            n_local: SAMPLER_ULA.n_local * (SAMPLER_TEMPS + 1),
        };
        let mut r = rng::stream(seed, &[tag::VALIDATE, 6, 1]);
        let single: Vec<f64> = (0..particles)
            .map(|_| {
                let z0 = BimodalTarget.sample_prior(&mut r)?;
                let z = ula_chain(
                    |z| {
                        let (v, g, _) =
                            power_posterior_logdensity_and_grad(&BimodalTarget, 1.0, z)?;
                        Ok((v, g))
                    },
                    &z0,
                    budget,
                    &mut r,
                )?;
                Ok(z[0])
            })
            .collect::<Result<_>>()?;
        let tv_single = histogram_tv(
            &single,
            &grid.binned_power_posterior(1.0, lo, hi, bins),
            lo,
            hi,
        );
        Ok((
            tv_max < 0.05 && tv_single > tv_tempered,
            format!(
                "max TV over {} temperatures {tv_max:.4} (bound 0.05); at t=1 tempered {tv_tempered:.4} vs single-chain {tv_single:.4}",
                temps.len()
            ),
        ))
    })();
    report(6, "sampler-correctness", start, res)
}

/// Criterion 7: residual resampling counts, unbiasedness and ESS.
pub fn resampling(seed: u64, trials: usize) -> CheckReport {
    let start = Instant::now();
    let res = (|| {
        let mut r = rng::stream(seed, &[tag::VALIDATE, 7, 0]);
        let mut det_ok = true;
        for _ in 0..50 {
            let n = r.random_range(2..40);
            let lw: Vec<f64> = (0..n)
                .map(|_| 3.0 * Distribution::<f64>::sample(&StandardNormal, &mut r))
                .collect::<Vec<f64>>();
            let w = normalize_log_weights(&lw)?;
            let counts = residual_deterministic_counts(&w)?;
            det_ok &= counts
                .iter()
                .zip(&w)
                .all(|(&c, &wi)| c == (n as f64 * wi).floor() as usize);
            // every deterministic copy appears in the resampled output
            let idx = residual_resample(&w, &mut r)?;
            let mut seen = vec![0; n];
            for i in idx {
                seen[i] += 1;
            }
            det_ok &= seen.iter().zip(&counts).all(|(s, c)| s >= c);
        }
        let w = normalize_log_weights(&[0.3, -1.2, 2.0, 0.0, 0.7, -0.4, 1.1, -2.5])?;
        let n = w.len();
        let counts = residual_deterministic_counts(&w)?;
        let rem = n - counts.iter().sum::<usize>();
        let mut tally = vec![0.0; n];
        for _ in 0..trials {
            for i in residual_resample(&w, &mut r)? {
                tally[i] += 1.0;
            }
        }
        let mut worst_sigma: f64 = 0.0;
        for s in 0..n {
            let mean = tally[s] / trials as f64;
            let m = (n as f64 * w[s] - counts[s] as f64) / rem as f64;
            let sd = (rem as f64 * m * (1.0 - m) / trials as f64).sqrt();
            let dev = (mean - n as f64 * w[s]).abs();
            let z = if sd > 0.0 {
                dev / sd
            } else if dev < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            worst_sigma = worst_sigma.max(z);
        }
        let hand = [
            (vec![0.25; 4], 4.0),
            (vec![1.0, 0.0, 0.0], 1.0),
            (vec![0.5, 0.25, 0.25], 1.0 / 0.375),
            (vec![0.1; 10], 10.0),
        ];
        let ess_ok = hand
            .iter()
            .all(|(w, e)| (ess(w).map(|v| (v - e).abs() < 1e-12)).unwrap_or(false));
        Ok((
            det_ok && worst_sigma <= 3.0 && ess_ok,
            format!(
                "deterministic counts exact: {det_ok}; max deviation {worst_sigma:.2}σ over {trials} trials; ESS hand cases exact: {ess_ok}"
            ),
        ))
    })();
    report(7, "resampling", start, res)
}

/// Number of rings8 modes that receive at least `min_frac` of the samples
/// within `radius` of their centre.
pub fn rings8_mode_coverage(samples: &[Vec<f64>], radius: f64, min_frac: f64) -> usize {
    let mut counts = [0usize; 8];
    for x in samples {
        for (j, c) in counts.iter_mut().enumerate() {
            let (mx, my) = rings8_mean(j);
            if (x[0] - mx).hypot(x[1] - my) <= radius {
                *c += 1;
                break;
            }
        }
    }
    let need = (min_frac * samples.len() as f64).ceil() as usize;
    counts.iter().filter(|&&c| c >= need.max(1)).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Its,
    Gradients,
    Ti,
    Resampling,
    All,
}

impl Suite {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "its" => Ok(Suite::Its),
            "gradients" => Ok(Suite::Gradients),
            "ti" => Ok(Suite::Ti),
            "resampling" => Ok(Suite::Resampling),
            "all" => Ok(Suite::All),
            other => Err(KaemError::Parse(format!("unknown suite '{other}'"))),
        }
    }
}

/// Run a named suite; `all` covers every oracle check (criteria 1 to 7).
pub fn run_suite(suite: Suite, seed: u64) -> Vec<CheckReport> {
    match suite {
        Suite::Its => vec![its_exactness(seed, 100_000)],
        Suite::Gradients => vec![gradient_suite(seed)],
        Suite::Ti => vec![evidence_estimation(seed)],
        Suite::Resampling => vec![resampling(seed, 10_000)],
        Suite::All => vec![
            its_exactness(seed, 100_000),
            normalization(seed),
            gradient_suite(seed),
            score_identity(seed, 10_000),
            evidence_estimation(seed),
            sampler_correctness(seed, 20_000),
            resampling(seed, 10_000),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bimodal_gradient() {
        for z in [-2.0, -0.3, 0.0, 1.1, 1.6] {
            let (_, g) = BimodalTarget.log_lik_and_grad(&[z]).unwrap();
            let fd = fd_result(|v| Ok(BimodalTarget::log_lik_value(v[0])), &[z], 1e-6).unwrap();
            assert!((g[0] - fd[0]).abs() < 1e-5 * (1.0 + g[0].abs()));
        }
    }

    #[test]
    fn tv_of_exact_bins_is_small() {
        let reference = vec![0.25; 4];
        let xs = [0.1, 0.3, 0.6, 0.9];
        assert!(histogram_tv(&xs, &reference, 0.0, 1.0) < 1e-12);
        assert!((histogram_tv(&[2.0; 4], &reference, 0.0, 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quick_resampling_check() {
        assert!(resampling(1, 2000).pass);
    }
}
