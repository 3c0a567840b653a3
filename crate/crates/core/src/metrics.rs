//! Image quality measures.
//!
//! Both metrics clamp their inputs to the displayable range first, the way
//! 8-bit outputs are scored.

use std::fmt;

use crate::{Error, Image, Result};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

/// Mean squared difference over all values, accumulated in `f64`.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(peak^2 / MSE)` after clamping both images to `[0, peak]`;
/// `+inf` when they agree exactly.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    check_pair(a, b)?;
    if !(peak > 0.0) {
        return Err(Error::ShapeMismatch(format!("peak must be positive, got {peak}")));
    }
    let clamp = |v: f32| f64::from(v).clamp(0.0, peak);
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (clamp(x) - clamp(y)).powi(2))
        .sum();
    let mse = sum / a.data().len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.map(|v| v / total)
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| kernel[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| kernel[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over all 11x11 windows (Gaussian weights,
/// sigma 1.5, K1 = 0.01, K2 = 0.03, peak 1). Color images are scored per
/// channel and averaged.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::ImageTooSmall(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    let window = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let (h, w) = (a.height(), a.width());
    let (pa, pb) = (a.clamped().to_planes(), b.clamped().to_planes());
    let mut total = 0.0;
    for ch in 0..a.channels() {
        let x: Vec<f64> = pa[ch * h * w..(ch + 1) * h * w].iter().map(|&v| f64::from(v)).collect();
        let y: Vec<f64> = pb[ch * h * w..(ch + 1) * h * w].iter().map(|&v| f64::from(v)).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, h, w, &window);
        let my = filter_valid(&y, h, w, &window);
        let sxx = filter_valid(&xx, h, w, &window);
        let syy = filter_valid(&yy, h, w, &window);
        let sxy = filter_valid(&xy, h, w, &window);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (mu_x, mu_y) = (mx[i], my[i]);
            let var_x = sxx[i] - mu_x * mu_x;
            let var_y = syy[i] - mu_y * mu_y;
            let cov = sxy[i] - mu_x * mu_y;
            sum += ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
                / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / a.channels() as f64)
}

/// Mean absolute 4-neighbour Laplacian over interior pixels: a sharpness /
/// residual-noise proxy (smooth images score low).
pub fn mean_abs_laplacian(img: &Image) -> f64 {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    if h < 3 || w < 3 {
        return 0.0;
    }
    let mut sum = 0.0;
    for r in 1..h - 1 {
        for col in 1..w - 1 {
            for ch in 0..c {
                let v = |rr: usize, cc: usize| f64::from(img.get(rr, cc, ch));
                let lap = v(r - 1, col) + v(r + 1, col) + v(r, col - 1) + v(r, col + 1) - 4.0 * v(r, col);
                sum += lap.abs();
            }
        }
    }
    sum / ((h - 2) * (w - 2) * c) as f64
}

/// PSNR and SSIM of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Mean PSNR/SSIM with a per-image breakdown.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub per_image: Vec<ImageScore>,
}

impl MetricReport {
    pub fn from_scores(per_image: Vec<ImageScore>) -> Self {
        let n = per_image.len().max(1) as f64;
        Self {
            psnr_db: per_image.iter().map(|s| s.psnr_db).sum::<f64>() / n,
            ssim: per_image.iter().map(|s| s.ssim).sum::<f64>() / n,
            per_image,
        }
    }

    /// Scores `(name, reference, candidate)` triples.
    pub fn evaluate<'a>(pairs: impl IntoIterator<Item = (String, &'a Image, &'a Image)>) -> Result<Self> {
        let scores = pairs
            .into_iter()
            .map(|(name, clean, test)| {
                Ok(ImageScore {
                    name,
                    psnr_db: psnr(clean, test, 1.0)?,
                    ssim: ssim(clean, test)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_scores(scores))
    }
}

/// Formats a score as `PSNR/SSIM` with `%.2f/%.3f`; infinite PSNR prints `∞`.
pub fn format_score(psnr_db: f64, ssim: f64) -> String {
    if psnr_db.is_infinite() && psnr_db > 0.0 {
        format!("∞/{ssim:.3}")
    } else {
        format!("{psnr_db:.2}/{ssim:.3}")
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.per_image {
            writeln!(f, "{}\t{}", s.name, format_score(s.psnr_db, s.ssim))?;
        }
        write!(f, "mean\t{}", format_score(self.psnr_db, self.ssim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{apply_noise, NoiseModel};
    use crate::seeded_rng;
    use crate::textures::scene;

    #[test]
    fn psnr_identical_is_infinite() {
        let a = Image::filled(4, 4, 1, 0.3).unwrap();
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Image::filled(8, 8, 3, 0.4).unwrap();
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-5);
        // MSE = 0.01 from a +-0.1 alternating pattern
        let c = Image::from_fn(8, 8, 1, |r, c, _| if (r + c) % 2 == 0 { 0.6 } else { 0.4 }).unwrap();
        let d = Image::filled(8, 8, 1, 0.5).unwrap();
        assert!((psnr(&c, &d, 1.0).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn psnr_clamps_before_comparing() {
        let a = Image::filled(4, 4, 1, 1.0).unwrap();
        let b = Image::filled(4, 4, 1, 1.5).unwrap();
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Image::filled(4, 4, 1, 0.0).unwrap();
        let b = Image::filled(4, 5, 1, 0.0).unwrap();
        assert!(psnr(&a, &b, 1.0).is_err());
        assert!(ssim(&a, &b).is_err());
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = scene(32, 32, 3, &mut seeded_rng(1));
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_constants_closed_form() {
        let (c, d) = (0.3f64, 0.7f64);
        let a = Image::filled(16, 16, 1, c as f32).unwrap();
        let b = Image::filled(16, 16, 1, d as f32).unwrap();
        let c1 = 0.01f64.powi(2);
        let (cf, df) = (f64::from(c as f32), f64::from(d as f32));
        let expected = (2.0 * cf * df + c1) / (cf * cf + df * df + c1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded() {
        let a = scene(24, 24, 1, &mut seeded_rng(2));
        let b = apply_noise(&a, &NoiseModel::GaussianFixed { sigma: 40.0 }, &mut seeded_rng(3)).unwrap();
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!((ab - ba).abs() < 1e-12);
        assert!((-1.0..1.0).contains(&ab));
        let inverted = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inverted).unwrap() < 0.5);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::filled(10, 20, 1, 0.5).unwrap();
        assert!(matches!(ssim(&a, &a), Err(Error::ImageTooSmall(_))));
    }

    #[test]
    fn psnr_decreases_with_noise_level() {
        let clean = scene(64, 64, 1, &mut seeded_rng(4));
        let mut last = f64::INFINITY;
        for sigma in [5.0, 10.0, 25.0, 50.0] {
            let noisy = apply_noise(&clean, &NoiseModel::GaussianFixed { sigma }, &mut seeded_rng(5)).unwrap();
            let p = psnr(&clean, &noisy, 1.0).unwrap();
            assert!(p < last, "sigma {sigma}: {p} >= {last}");
            last = p;
        }
    }

    #[test]
    fn laplacian_of_affine_image_is_zero() {
        let ramp = Image::from_fn(8, 8, 1, |r, c, _| (r as f32 + 2.0 * c as f32) / 32.0).unwrap();
        assert!(mean_abs_laplacian(&ramp) < 1e-6);
        let checker = Image::from_fn(8, 8, 1, |r, c, _| ((r + c) % 2) as f32).unwrap();
        assert!((mean_abs_laplacian(&checker) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn report_formatting() {
        assert_eq!(format_score(f64::INFINITY, 1.0), "∞/1.000");
        assert_eq!(format_score(32.0812, 0.87949), "32.08/0.879");
        let a = scene(16, 16, 1, &mut seeded_rng(0));
        let report = MetricReport::evaluate([("a".to_string(), &a, &a)]).unwrap();
        assert_eq!(report.to_string(), "a\t∞/1.000\nmean\t∞/1.000");
    }
}
