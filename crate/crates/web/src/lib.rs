//! Browser demo: prior density and ITS explorer, temperature schedule and
//! exponent annealing, and power posteriors of a bimodal toy model.
//!
//! Every export returns a flat `Float64Array` so the page can draw it on a
//! canvas without any serialization layer.

use rand::Rng;
use wasm_bindgen::prelude::*;

use kaem::basis::BasisKind;
use kaem::inference::{anneal_exponent, population_ula, power_schedule, UlaConfig};
use kaem::prior::TiltedDensity1D;
use kaem::rng::{self, tag};
use kaem::validate::{random_tilted, BimodalTarget};
use kaem::KaemError;

fn js(e: KaemError) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// A random tilted density; `reference` cycles gaussian, uniform, none.
fn density(basis: &str, reference: u32, seed: u64) -> kaem::Result<TiltedDensity1D> {
    let kind = BasisKind::parse(basis)?;
    let mut r = rng::stream(seed, &[tag::INIT]);
    random_tilted(kind, reference as usize, &mut r)
}

/// Curve rows `[z, p(z), π0(z)/∫π0, cdf(z)]` on `points` nodes.
pub fn prior_curve(
    basis: &str,
    reference: u32,
    seed: u64,
    points: usize,
) -> kaem::Result<Vec<f64>> {
    let d = density(basis, reference, seed)?;
    let (a, b) = d.domain();
    let base_mass = kaem::oracles::simpson(|z| d.base.log_density(z).exp(), a, b, 2000);
    let mut out = Vec::with_capacity(points * 4);
    let mut cdf = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..points {
        let z = a + (b - a) * i as f64 / (points - 1).max(1) as f64;
        let p = d.log_density(z)?.exp();
        if let Some((pz, pp)) = prev {
            cdf += 0.5 * (z - pz) * (p + pp);
        }
        prev = Some((z, p));
        out.extend([z, p, d.base.log_density(z).exp() / base_mass, cdf]);
    }
    Ok(out)
}

/// Histogram density of `n` ITS draws on `bins` equal bins of the domain.
pub fn its_histogram(
    basis: &str,
    reference: u32,
    seed: u64,
    n: usize,
    bins: usize,
) -> kaem::Result<Vec<f64>> {
    let d = density(basis, reference, seed)?;
    let (a, b) = d.domain();
    let mut r = rng::stream(seed, &[tag::PRIOR_DRAW]);
    let mut h = vec![0.0; bins];
    let width = (b - a) / bins as f64;
    for _ in 0..n {
        let z = d.its_sample(r.random::<f64>())?;
        let k = (((z - a) / width) as usize).min(bins - 1);
        h[k] += 1.0 / (n as f64 * width);
    }
    Ok(h)
}

/// Temperatures t_k = (k/N_t)^p.
pub fn schedule(n_t: usize, p: f64) -> kaem::Result<Vec<f64>> {
    power_schedule(n_t, p)
}

/// Exponent p(i) for i = 1..=n_updates.
pub fn anneal_curve(
    n_updates: usize,
    p_start: f64,
    p_end: f64,
    n_cycles: usize,
) -> kaem::Result<Vec<f64>> {
    (1..=n_updates)
        .map(|i| anneal_exponent(i, n_updates, p_start, p_end, n_cycles))
        .collect()
}

const VIEW: (f64, f64) = (-4.0, 4.0);

/// Grid power posterior of the bimodal model binned on `bins` cells of
/// [-4, 4], as densities.
pub fn grid_power_posterior(t: f64, bins: usize) -> kaem::Result<Vec<f64>> {
    let g = BimodalTarget::grid()?;
    let width = (VIEW.1 - VIEW.0) / bins as f64;
    Ok(g.binned_power_posterior(t, VIEW.0, VIEW.1, bins)
        .into_iter()
        .map(|m| m / width)
        .collect())
}

/// Tempered population on the bimodal model. Returns, for each of the
/// `n_t + 1` temperatures, `bins` histogram densities followed by the swap
/// acceptance rate into the next temperature (0 for the last).
pub fn population_histograms(
    n_t: usize,
    p: f64,
    particles: usize,
    steps: usize,
    eta: f64,
    bins: usize,
    seed: u64,
) -> kaem::Result<Vec<f64>> {
    let temps = power_schedule(n_t, p)?;
    let cfg = UlaConfig {
        eta,
        n_local: steps,
    };
    cfg.validate()?;
    let mut r = rng::stream(seed, &[tag::ULA]);
    let (pop, _) = population_ula(&BimodalTarget, &temps, particles, cfg, &mut r)?;
    let rates = pop.swap_rates();
    let width = (VIEW.1 - VIEW.0) / bins as f64;
    let mut out = Vec::with_capacity(temps.len() * (bins + 1));
    for k in 0..temps.len() {
        let mut h = vec![0.0; bins];
        for rep in &pop.replicas[k] {
            let z = rep.z[0];
            if z >= VIEW.0 && z < VIEW.1 {
                h[((z - VIEW.0) / width) as usize] += 1.0 / (particles as f64 * width);
            }
        }
        out.extend(h);
        out.push(rates.get(k).copied().unwrap_or(0.0));
    }
    Ok(out)
}

#[wasm_bindgen(js_name = priorCurve)]
pub fn prior_curve_js(
    basis: &str,
    reference: u32,
    seed: u32,
    points: usize,
) -> Result<Vec<f64>, JsValue> {
    prior_curve(basis, reference, seed as u64, points).map_err(js)
}

#[wasm_bindgen(js_name = itsHistogram)]
pub fn its_histogram_js(
    basis: &str,
    reference: u32,
    seed: u32,
    n: usize,
    bins: usize,
) -> Result<Vec<f64>, JsValue> {
    its_histogram(basis, reference, seed as u64, n, bins).map_err(js)
}

#[wasm_bindgen(js_name = temperatureSchedule)]
pub fn schedule_js(n_t: usize, p: f64) -> Result<Vec<f64>, JsValue> {
    schedule(n_t, p).map_err(js)
}

#[wasm_bindgen(js_name = annealCurve)]
pub fn anneal_curve_js(
    n_updates: usize,
    p_start: f64,
    p_end: f64,
    n_cycles: usize,
) -> Result<Vec<f64>, JsValue> {
    anneal_curve(n_updates, p_start, p_end, n_cycles).map_err(js)
}

#[wasm_bindgen(js_name = gridPowerPosterior)]
pub fn grid_power_posterior_js(t: f64, bins: usize) -> Result<Vec<f64>, JsValue> {
    grid_power_posterior(t, bins).map_err(js)
}

#[wasm_bindgen(js_name = populationHistograms)]
pub fn population_histograms_js(
    n_t: usize,
    p: f64,
    particles: usize,
    steps: usize,
    eta: f64,
    bins: usize,
    seed: u32,
) -> Result<Vec<f64>, JsValue> {
    population_histograms(n_t, p, particles, steps, eta, bins, seed as u64).map_err(js)
}
