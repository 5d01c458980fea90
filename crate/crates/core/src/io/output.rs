//! CSV, SVG and PNG emission plus latent interpolation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::basis::linspace;
use crate::error::{KaemError, Result};
use crate::prior::{MixturePrior, PriorMode};

pub const PLOT_POINTS: usize = 512;

/// Plotting interval of a latent coordinate: the component domain, or the
/// union over the mixture row.
fn plot_domain(prior: &MixturePrior, dim: usize) -> Result<(f64, f64)> {
    let (_, d) = prior.marginal_reference(dim)?;
    if prior.mode == PriorMode::Factorized {
        return Ok(d);
    }
    Ok((0..prior.p).fold(d, |(a, b), p| {
        let (c, e) = prior.component(dim, p).domain();
        (a.min(c), b.max(e))
    }))
}

/// Rows (z, learned density, base density) on 512 evenly spaced points.
pub fn prior_curve(prior: &MixturePrior, dim: usize) -> Result<Vec<(f64, f64, f64)>> {
    let (reference, _) = prior.marginal_reference(dim)?;
    let (a, b) = plot_domain(prior, dim)?;
    linspace(a, b, PLOT_POINTS)
        .into_iter()
        .map(|z| {
            Ok((
                z,
                prior.marginal_density(dim, z)?,
                reference.base_density_on_domain(z),
            ))
        })
        .collect()
}

pub fn prior_plot_csv(prior: &MixturePrior, dim: usize) -> Result<String> {
    let mut s = String::from("z,learned_density,base_density\n");
    for (z, l, r) in prior_curve(prior, dim)? {
        let _ = writeln!(s, "{z},{l},{r}");
    }
    Ok(s)
}

/// Standalone SVG: learned density as a filled area, base density dashed.
pub fn prior_plot_svg(prior: &MixturePrior, dim: usize) -> Result<String> {
    let rows = prior_curve(prior, dim)?;
    let (w, h, pad) = (640.0, 400.0, 40.0);
    let (z0, z1) = (rows[0].0, rows[rows.len() - 1].0);
    let ymax = rows
        .iter()
        .map(|r| r.1.max(r.2))
        .fold(0.0, f64::max)
        .max(1e-12)
        * 1.05;
    let px = |z: f64| pad + (z - z0) / (z1 - z0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - y / ymax * (h - 2.0 * pad);
    let points = |f: &dyn Fn(&(f64, f64, f64)) -> f64| {
        rows.iter()
            .map(|r| format!("{:.2},{:.2}", px(r.0), py(f(r))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let learned = points(&|r| r.1);
    let base = points(&|r| r.2);
    let (q, p) = match prior.mode {
        PriorMode::Factorized => (dim / prior.p, dim % prior.p),
        PriorMode::Mixture => (dim, 0),
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<polygon points="{:.2},{:.2} {learned} {:.2},{:.2}" fill="steelblue" fill-opacity="0.35" stroke="steelblue" stroke-width="1.5"/>"#,
        px(z0),
        py(0.0),
        px(z1),
        py(0.0)
    );
    let _ = writeln!(
        s,
        r#"<polyline points="{base}" fill="none" stroke="black" stroke-width="1.5" stroke-dasharray="6,4"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad
    );
    let title = match prior.mode {
        PriorMode::Factorized => format!("component q={q}, p={p}"),
        PriorMode::Mixture => format!("mixture marginal q={q}"),
    };
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="24" font-family="sans-serif" font-size="14">{title}</text>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="{:.0}" font-family="sans-serif" font-size="12">{z0:.3}</text>"#,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.0}" y="{:.0}" font-family="sans-serif" font-size="12" text-anchor="end">{z1:.3}</text>"#,
        w - pad,
        h - 12.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// Write `prior_dim{d}.csv` and `prior_dim{d}.svg` for each requested
/// dimension; returns the written paths.
pub fn emit_prior_plot(prior: &MixturePrior, dims: &[usize], out: &Path) -> Result<Vec<PathBuf>> {
    for &d in dims {
        if d >= prior.plot_dims() {
            return Err(KaemError::Invalid(format!(
                "prior has {} plottable dimensions, requested {d}",
                prior.plot_dims()
            )));
        }
    }
    std::fs::create_dir_all(out)?;
    let mut paths = Vec::new();
    for &d in dims {
        let csv = out.join(format!("prior_dim{d}.csv"));
        std::fs::write(&csv, prior_plot_csv(prior, d)?)?;
        let svg = out.join(format!("prior_dim{d}.svg"));
        std::fs::write(&svg, prior_plot_svg(prior, d)?)?;
        paths.push(csv);
        paths.push(svg);
    }
    Ok(paths)
}

/// Spherical interpolation at t = 0, 1/(steps−1), …, 1.
pub fn slerp(a: &[f64], b: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
    if a.len() != b.len() {
        return Err(KaemError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if steps < 2 {
        return Err(KaemError::Invalid("slerp needs at least 2 steps".into()));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(KaemError::Invalid(
            "slerp endpoint is the zero vector".into(),
        ));
    }
    let cos = (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    let s = omega.sin();
    if s.abs() < 1e-12 && cos < 0.0 {
        return Err(KaemError::Invalid("slerp endpoints are antipodal".into()));
    }
    Ok((0..steps)
        .map(|i| {
            let t = i as f64 / (steps - 1) as f64;
            if i == 0 {
                return a.to_vec();
            }
            if i == steps - 1 {
                return b.to_vec();
            }
            if s.abs() < 1e-12 {
                // parallel endpoints: the formula tends to linear interpolation
                return a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (1.0 - t) * x + t * y)
                    .collect();
            }
            let ca = ((1.0 - t) * omega).sin() / s;
            let cb = (t * omega).sin() / s;
            a.iter().zip(b).map(|(x, y)| ca * x + cb * y).collect()
        })
        .collect())
}

/// One row per sample.
pub fn samples_csv(samples: &[Vec<f64>]) -> String {
    let mut s = String::new();
    if let Some(first) = samples.first() {
        let header: Vec<String> = (0..first.len()).map(|i| format!("x{i}")).collect();
        s.push_str(&header.join(","));
        s.push('\n');
    }
    for x in samples {
        let row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Tile images (row-major, channels last, values in [0, 1]) into a PNG.
/// `channels` is 1 (grayscale) or 3 (RGB).
pub fn write_png_grid(
    path: &Path,
    images: &[Vec<f64>],
    height: usize,
    width: usize,
    channels: usize,
    cols: usize,
) -> Result<()> {
    if images.is_empty() || cols == 0 {
        return Err(KaemError::EmptyBatch);
    }
    if channels != 1 && channels != 3 {
        return Err(KaemError::Invalid(format!(
            "unsupported channel count {channels}"
        )));
    }
    let per = height * width * channels;
    if let Some(bad) = images.iter().find(|im| im.len() != per) {
        return Err(KaemError::DimensionMismatch {
            expected: per,
            got: bad.len(),
        });
    }
    let gap = 1;
    let rows = images.len().div_ceil(cols);
    let gw = cols * (width + gap) + gap;
    let gh = rows * (height + gap) + gap;
    let mut buf = vec![0u8; gw * gh * channels];
    for (n, im) in images.iter().enumerate() {
        let (r, c) = (n / cols, n % cols);
        let (oy, ox) = (gap + r * (height + gap), gap + c * (width + gap));
        for y in 0..height {
            for x in 0..width {
                for ch in 0..channels {
                    let v = im[(y * width + x) * channels + ch].clamp(0.0, 1.0);
                    buf[((oy + y) * gw + ox + x) * channels + ch] = (v * 255.0).round() as u8;
                }
            }
        }
    }
    let file = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), gw as u32, gh as u32);
    enc.set_color(if channels == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc
        .write_header()
        .map_err(|e| KaemError::Invalid(format!("png: {e}")))?;
    w.write_image_data(&buf)
        .map_err(|e| KaemError::Invalid(format!("png: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::PriorSpec;
    use crate::rng::stream;

    fn prior(noise: f64, mode: PriorMode) -> MixturePrior {
        let spec = PriorSpec {
            q: 2,
            p: 2,
            mode,
            init_noise: noise,
            ..PriorSpec::default()
        };
        MixturePrior::new(&spec, &mut stream(3, &[0])).unwrap()
    }

    fn trapezoid(rows: &[(f64, f64, f64)]) -> f64 {
        rows.windows(2)
            .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
            .sum()
    }

    #[test]
    fn curve_integrates_to_one() {
        for mode in [PriorMode::Factorized, PriorMode::Mixture] {
            let p = prior(0.5, mode);
            for d in 0..p.plot_dims() {
                let rows = prior_curve(&p, d).unwrap();
                assert_eq!(rows.len(), 512);
                assert!((trapezoid(&rows) - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn flat_energy_matches_base() {
        let mut p = prior(0.0, PriorMode::Factorized);
        for c in p.components.iter_mut() {
            c.energy.base_scale = 0.0;
            c.invalidate();
        }
        p.normalize_all().unwrap();
        for (_, l, r) in prior_curve(&p, 1).unwrap() {
            assert!((l - r).abs() < 1e-6);
        }
    }

    #[test]
    fn svg_is_well_formed_and_missing_dim_errors() {
        let p = prior(0.3, PriorMode::Factorized);
        let svg = prior_plot_svg(&p, 0).unwrap();
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        // every opened element is closed
        assert_eq!(svg.matches("<svg").count(), 1);
        assert_eq!(svg.matches("<text").count(), svg.matches("</text>").count());
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_prior_plot(&p, &[9], dir.path()).is_err());
        assert_eq!(emit_prior_plot(&p, &[0, 3], dir.path()).unwrap().len(), 4);
    }

    #[test]
    fn slerp_properties() {
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0];
        let path = slerp(&a, &b, 3).unwrap();
        assert_eq!(path[0], a.to_vec());
        assert_eq!(path[2], b.to_vec());
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((path[1][0] - h).abs() < 1e-15 && (path[1][1] - h).abs() < 1e-15);

        let a = [0.3, -1.2, 0.8, 2.0];
        let b = [-1.0, 0.5, 1.9, -0.7];
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let b: Vec<f64> = b.iter().map(|v| v * na / nb).collect();
        for z in slerp(&a, &b, 11).unwrap() {
            let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - na).abs() < 1e-9);
        }
        assert!(slerp(&[1.0, 0.0], &[-1.0, 0.0], 4).is_err());
        assert!(slerp(&[0.0, 0.0], &[1.0, 0.0], 4).is_err());
    }

    #[test]
    fn png_grid_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let ims: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0; 4 * 3]).collect();
        write_png_grid(&p, &ims, 4, 3, 1, 3).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
        assert!(write_png_grid(&p, &ims, 4, 4, 1, 3).is_err());
    }
}
