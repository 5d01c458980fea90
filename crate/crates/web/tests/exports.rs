use kaem_web::*;

#[test]
fn prior_curve_is_a_density() {
    for basis in ["rbf", "morlet"] {
        for reference in 0..3 {
            let c = prior_curve(basis, reference, 3, 801).unwrap();
            let cdf_end = c[c.len() - 1];
            assert!(
                (cdf_end - 1.0).abs() < 1e-3,
                "{basis} {reference}: {cdf_end}"
            );
            assert!(c.chunks(4).all(|r| r[1] >= 0.0 && r[2] >= 0.0));
        }
    }
    assert!(prior_curve("spline", 0, 1, 10).is_err());
}

#[test]
fn its_histogram_tracks_the_curve() {
    let h = its_histogram("rbf", 0, 5, 200_000, 20).unwrap();
    let c = prior_curve("rbf", 0, 5, 2001).unwrap();
    let (a, b) = (c[0], c[c.len() - 4]);
    let w = (b - a) / 20.0;
    let mass: f64 = h.iter().map(|v| v * w).sum();
    assert!((mass - 1.0).abs() < 1e-9);
    // cell masses from the curve's CDF column
    for (k, hv) in h.iter().enumerate() {
        let at = |z: f64| {
            let i = (((z - a) / (b - a)) * 2000.0).round() as usize;
            c[4 * i.min(2000) + 3]
        };
        let m = at(a + (k + 1) as f64 * w) - at(a + k as f64 * w);
        assert!((hv * w - m).abs() < 0.01, "bin {k}: {} vs {m}", hv * w);
    }
}

#[test]
fn schedules() {
    let t = schedule(4, 2.0).unwrap();
    assert_eq!(t, vec![0.0, 1.0 / 16.0, 0.25, 9.0 / 16.0, 1.0]);
    let p = anneal_curve(100, 2.0, 0.5, 0).unwrap();
    assert_eq!(p[0], 2.0);
    assert!(p.windows(2).all(|w| w[1] <= w[0]));
    assert!(schedule(0, 1.0).is_err());
}

#[test]
fn population_matches_grid_at_t1() {
    let bins = 40;
    let out = population_histograms(6, 2.0, 4000, 300, 0.005, bins, 1).unwrap();
    assert_eq!(out.len(), 7 * (bins + 1));
    let grid = grid_power_posterior(1.0, bins).unwrap();
    let last = &out[6 * (bins + 1)..6 * (bins + 1) + bins];
    let w = 8.0 / bins as f64;
    let tv: f64 = 0.5
        * last
            .iter()
            .zip(&grid)
            .map(|(a, b)| (a - b).abs() * w)
            .sum::<f64>();
    assert!(tv < 0.08, "tv {tv}");
}
