//! Flat `key = value` run configuration.
//!
//! Keys are grouped by prefix (`prior.`, `gen.`, `train.`, `ula.`, `thermo.`,
//! `grid.`). Printing then parsing returns an identical configuration.

use std::fmt::Write as _;
use std::path::Path;

use crate::basis::{BaseActivation, BasisKind};
use crate::error::{KaemError, Result};
use crate::prior::{BaseDensity, PriorMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    MleIs,
    MleUla,
    Thermo,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::MleIs => "mle-is",
            Criterion::MleUla => "mle-ula",
            Criterion::Thermo => "thermo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "mle-is" | "is" => Ok(Criterion::MleIs),
            "mle-ula" | "ula" => Ok(Criterion::MleUla),
            "thermo" | "ti" => Ok(Criterion::Thermo),
            other => Err(KaemError::Parse(format!("unknown criterion '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Kan,
    Mlp,
}

impl GeneratorKind {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::Kan => "kan",
            GeneratorKind::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kan" => Ok(GeneratorKind::Kan),
            "mlp" => Ok(GeneratorKind::Mlp),
            other => Err(KaemError::Parse(format!("unknown generator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,

    pub prior_q: usize,
    pub prior_p: usize,
    pub prior_mode: PriorMode,
    pub prior_basis: BasisKind,
    pub prior_grid_size: usize,
    pub prior_activation: BaseActivation,
    pub prior_reference: BaseDensity,
    /// `None` picks the reference density's default interval.
    pub prior_domain: Option<(f64, f64)>,
    pub prior_quad_nodes: usize,
    pub prior_eps_init: f64,
    pub prior_mu: f64,
    pub prior_base_scale: f64,
    pub prior_spline_scale: f64,
    pub prior_tau: f64,
    pub prior_tau_trainable: bool,
    pub prior_lambda: f64,

    pub gen_kind: GeneratorKind,
    /// `None` follows the strict-KART width law (KAN only).
    pub gen_hidden: Option<Vec<usize>>,
    pub gen_hidden_layers: usize,
    pub gen_basis: BasisKind,
    pub gen_grid_size: usize,
    pub gen_activation: BaseActivation,
    pub gen_mu: f64,
    pub gen_tau: f64,
    pub gen_eps_init: f64,
    pub gen_noise: f64,
    pub gen_sigma_llhood: f64,

    pub criterion: Criterion,
    pub batch_size: usize,
    pub particles: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip: f64,
    pub ess_threshold: f64,
    /// Extra checkpoint cadence in updates; 0 writes one per epoch only.
    pub checkpoint_every: usize,
    pub metrics_every: usize,

    pub ula_steps: usize,
    pub ula_eta: f64,

    pub num_temps: usize,
    pub p_start: f64,
    pub p_end: f64,
    pub num_cycles: usize,

    pub grid_update_prior: bool,
    pub grid_update_gen: bool,
    pub grid_samples: usize,
    pub grid_frequency: usize,
    pub grid_decay: f64,
    pub grid_ratio: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            prior_q: 81,
            prior_p: 40,
            prior_mode: PriorMode::Factorized,
            prior_basis: BasisKind::Rbf,
            prior_grid_size: 20,
            prior_activation: BaseActivation::Relu,
            prior_reference: BaseDensity::Gaussian,
            prior_domain: None,
            prior_quad_nodes: 200,
            prior_eps_init: 0.1,
            prior_mu: 1.0,
            prior_base_scale: 1.0,
            prior_spline_scale: 1.0,
            prior_tau: 1.0,
            prior_tau_trainable: true,
            prior_lambda: 1e-4,
            gen_kind: GeneratorKind::Kan,
            gen_hidden: None,
            gen_hidden_layers: 1,
            gen_basis: BasisKind::Rbf,
            gen_grid_size: 20,
            gen_activation: BaseActivation::Relu,
            gen_mu: 1.0,
            gen_tau: 1.0,
            gen_eps_init: 0.1,
            gen_noise: 0.1,
            gen_sigma_llhood: 0.1,
            criterion: Criterion::MleIs,
            batch_size: 100,
            particles: 100,
            epochs: 10,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-3,
            clip: 100.0,
            ess_threshold: 0.5,
            checkpoint_every: 0,
            metrics_every: 10,
            ula_steps: 40,
            ula_eta: 0.01,
            num_temps: 20,
            p_start: 2.0,
            p_end: 0.5,
            num_cycles: 0,
            grid_update_prior: true,
            grid_update_gen: true,
            grid_samples: 100,
            grid_frequency: 100,
            grid_decay: 0.999,
            grid_ratio: 0.05,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| KaemError::Parse(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(KaemError::Parse(format!(
            "{key}: expected true/false, got '{v}'"
        ))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl Config {
    /// Every key with its current value, in print order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let domain = |d: Option<(f64, f64)>| match d {
            Some((a, b)) => format!("{a},{b}"),
            None => "auto".to_string(),
        };
        vec![
            ("seed", self.seed.to_string()),
            ("prior.q", self.prior_q.to_string()),
            ("prior.p", self.prior_p.to_string()),
            ("prior.mode", self.prior_mode.name().into()),
            ("prior.basis", self.prior_basis.name().into()),
            ("prior.grid_size", self.prior_grid_size.to_string()),
            ("prior.activation", self.prior_activation.name().into()),
            ("prior.reference", self.prior_reference.name().into()),
            ("prior.domain", domain(self.prior_domain)),
            ("prior.quad_nodes", self.prior_quad_nodes.to_string()),
            ("prior.eps_init", self.prior_eps_init.to_string()),
            ("prior.mu", self.prior_mu.to_string()),
            ("prior.base_scale", self.prior_base_scale.to_string()),
            ("prior.spline_scale", self.prior_spline_scale.to_string()),
            ("prior.tau", self.prior_tau.to_string()),
            ("prior.tau_trainable", self.prior_tau_trainable.to_string()),
            ("prior.lambda", self.prior_lambda.to_string()),
            ("gen.kind", self.gen_kind.name().into()),
            (
                "gen.hidden",
                self.gen_hidden.as_deref().map_or("auto".into(), join),
            ),
            ("gen.hidden_layers", self.gen_hidden_layers.to_string()),
            ("gen.basis", self.gen_basis.name().into()),
            ("gen.grid_size", self.gen_grid_size.to_string()),
            ("gen.activation", self.gen_activation.name().into()),
            ("gen.mu", self.gen_mu.to_string()),
            ("gen.tau", self.gen_tau.to_string()),
            ("gen.eps_init", self.gen_eps_init.to_string()),
            ("gen.noise", self.gen_noise.to_string()),
            ("gen.sigma_llhood", self.gen_sigma_llhood.to_string()),
            ("train.criterion", self.criterion.name().into()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.particles", self.particles.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.lr", self.lr.to_string()),
            ("train.beta1", self.beta1.to_string()),
            ("train.beta2", self.beta2.to_string()),
            ("train.eps", self.adam_eps.to_string()),
            ("train.clip", self.clip.to_string()),
            ("train.ess_threshold", self.ess_threshold.to_string()),
            ("train.checkpoint_every", self.checkpoint_every.to_string()),
            ("train.metrics_every", self.metrics_every.to_string()),
            ("ula.steps", self.ula_steps.to_string()),
            ("ula.eta", self.ula_eta.to_string()),
            ("thermo.num_temps", self.num_temps.to_string()),
            ("thermo.p_start", self.p_start.to_string()),
            ("thermo.p_end", self.p_end.to_string()),
            ("thermo.num_cycles", self.num_cycles.to_string()),
            ("grid.update_prior", self.grid_update_prior.to_string()),
            ("grid.update_gen", self.grid_update_gen.to_string()),
            ("grid.samples", self.grid_samples.to_string()),
            ("grid.frequency", self.grid_frequency.to_string()),
            ("grid.decay", self.grid_decay.to_string()),
            ("grid.ratio", self.grid_ratio.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "prior.q" => self.prior_q = parse_num(key, v)?,
            "prior.p" => self.prior_p = parse_num(key, v)?,
            "prior.mode" => self.prior_mode = PriorMode::parse(v)?,
            "prior.basis" => self.prior_basis = BasisKind::parse(v)?,
            "prior.grid_size" => self.prior_grid_size = parse_num(key, v)?,
            "prior.activation" => self.prior_activation = BaseActivation::parse(v)?,
            "prior.reference" => self.prior_reference = BaseDensity::parse(v)?,
            "prior.domain" => {
                self.prior_domain = if v == "auto" {
                    None
                } else {
                    let (a, b) = v
                        .split_once(',')
                        .ok_or_else(|| KaemError::Parse(format!("{key}: expected 'min,max'")))?;
                    Some((parse_num(key, a.trim())?, parse_num(key, b.trim())?))
                }
            }
            "prior.quad_nodes" => self.prior_quad_nodes = parse_num(key, v)?,
            "prior.eps_init" => self.prior_eps_init = parse_num(key, v)?,
            "prior.mu" => self.prior_mu = parse_num(key, v)?,
            "prior.base_scale" => self.prior_base_scale = parse_num(key, v)?,
            "prior.spline_scale" => self.prior_spline_scale = parse_num(key, v)?,
            "prior.tau" => self.prior_tau = parse_num(key, v)?,
            "prior.tau_trainable" => self.prior_tau_trainable = parse_bool(key, v)?,
            "prior.lambda" => self.prior_lambda = parse_num(key, v)?,
            "gen.kind" => self.gen_kind = GeneratorKind::parse(v)?,
            "gen.hidden" => {
                self.gen_hidden = if v == "auto" {
                    None
                } else {
                    Some(parse_list(key, v)?)
                }
            }
            "gen.hidden_layers" => self.gen_hidden_layers = parse_num(key, v)?,
            "gen.basis" => self.gen_basis = BasisKind::parse(v)?,
            "gen.grid_size" => self.gen_grid_size = parse_num(key, v)?,
            "gen.activation" => self.gen_activation = BaseActivation::parse(v)?,
            "gen.mu" => self.gen_mu = parse_num(key, v)?,
            "gen.tau" => self.gen_tau = parse_num(key, v)?,
            "gen.eps_init" => self.gen_eps_init = parse_num(key, v)?,
            "gen.noise" => self.gen_noise = parse_num(key, v)?,
            "gen.sigma_llhood" => self.gen_sigma_llhood = parse_num(key, v)?,
            "train.criterion" => self.criterion = Criterion::parse(v)?,
            "train.batch_size" => self.batch_size = parse_num(key, v)?,
            "train.particles" => self.particles = parse_num(key, v)?,
            "train.epochs" => self.epochs = parse_num(key, v)?,
            "train.lr" => self.lr = parse_num(key, v)?,
            "train.beta1" => self.beta1 = parse_num(key, v)?,
            "train.beta2" => self.beta2 = parse_num(key, v)?,
            "train.eps" => self.adam_eps = parse_num(key, v)?,
            "train.clip" => self.clip = parse_num(key, v)?,
            "train.ess_threshold" => self.ess_threshold = parse_num(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "train.metrics_every" => self.metrics_every = parse_num(key, v)?,
            "ula.steps" => self.ula_steps = parse_num(key, v)?,
            "ula.eta" => self.ula_eta = parse_num(key, v)?,
            "thermo.num_temps" => self.num_temps = parse_num(key, v)?,
            "thermo.p_start" => self.p_start = parse_num(key, v)?,
            "thermo.p_end" => self.p_end = parse_num(key, v)?,
            "thermo.num_cycles" => self.num_cycles = parse_num(key, v)?,
            "grid.update_prior" => self.grid_update_prior = parse_bool(key, v)?,
            "grid.update_gen" => self.grid_update_gen = parse_bool(key, v)?,
            "grid.samples" => self.grid_samples = parse_num(key, v)?,
            "grid.frequency" => self.grid_frequency = parse_num(key, v)?,
            "grid.decay" => self.grid_decay = parse_num(key, v)?,
            "grid.ratio" => self.grid_ratio = parse_num(key, v)?,
            other => return Err(KaemError::Parse(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse text on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                KaemError::Parse(format!("line {}: expected 'key = value'", n + 1))
            })?;
            c.set(k.trim(), v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(KaemError::InvalidConfig(m.to_string()));
        let counts = [
            ("prior.q", self.prior_q),
            ("prior.p", self.prior_p),
            ("prior.quad_nodes", self.prior_quad_nodes),
            ("train.batch_size", self.batch_size),
            ("train.particles", self.particles),
            ("train.epochs", self.epochs),
            ("ula.steps", self.ula_steps),
            ("thermo.num_temps", self.num_temps),
            ("train.metrics_every", self.metrics_every),
        ];
        for (k, v) in counts {
            if v == 0 {
                return bad(&format!("{k} must be positive"));
            }
        }
        if self.prior_basis == BasisKind::Rbf && self.prior_grid_size < 2 {
            return bad("prior.grid_size must be at least 2");
        }
        if self.gen_kind == GeneratorKind::Kan && self.gen_grid_size < 2 {
            return bad("gen.grid_size must be at least 2");
        }
        for (k, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(&format!("{k} must lie in (0, 1)"));
            }
        }
        if let Some((a, b)) = self.prior_domain {
            if !(a < b) {
                return bad("prior.domain must have min < max");
            }
        }
        if let Some(h) = &self.gen_hidden {
            if h.contains(&0) {
                return bad("gen.hidden widths must be positive");
            }
        }
        let positive = [
            ("train.lr", self.lr),
            ("train.eps", self.adam_eps),
            ("gen.noise", self.gen_noise),
            ("gen.sigma_llhood", self.gen_sigma_llhood),
            ("thermo.p_start", self.p_start),
            ("thermo.p_end", self.p_end),
        ];
        for (k, v) in positive {
            if !(v.is_finite() && v >= 0.0) || (k != "train.lr" && v == 0.0) {
                return bad(&format!("{k} must be positive, got {v}"));
            }
        }
        if !(self.ula_eta >= 0.0) || !(self.clip >= 0.0) {
            return bad("ula.eta and train.clip must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.ess_threshold) {
            return bad("train.ess_threshold must lie in [0, 1]");
        }
        if self.criterion == Criterion::MleIs && self.particles < 2 {
            return bad("importance sampling needs train.particles ≥ 2");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn edited_round_trip() {
        let text = "
            # small synthetic run
            seed = 17
            prior.q = 2
            prior.p = 8
            prior.mode = mixture
            prior.basis = morlet
            prior.domain = -1.25,2.5
            gen.kind = mlp
            gen.hidden = 64,64
            train.criterion = thermo
            train.lr = 0.000123456789
            grid.update_prior = false
        ";
        let c = Config::parse(text).unwrap();
        assert_eq!(c.seed, 17);
        assert_eq!(c.prior_domain, Some((-1.25, 2.5)));
        assert_eq!(c.gen_hidden, Some(vec![64, 64]));
        assert_eq!(c.criterion, Criterion::Thermo);
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Config::parse("train.bogus = 1").is_err());
        assert!(Config::parse("train.beta1 = 1.0").is_err());
        assert!(Config::parse("train.batch_size = 0").is_err());
        assert!(Config::parse("just words").is_err());
        assert!(Config::parse("prior.domain = 1,0").is_err());
    }

    proptest::proptest! {
        #[test]
        fn float_fields_round_trip(lr in 1e-9f64..1.0, eta in 0.0f64..1.0, seed in proptest::prelude::any::<u64>()) {
            let c = Config { lr, ula_eta: eta, seed, ..Config::default() };
            proptest::prop_assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        }
    }
}
