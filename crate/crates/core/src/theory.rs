//! Monte-Carlo checks of the two identities the training objective rests on.
//!
//! The gap-corrected identity: for independent `y | x` and `z | x` with
//! `E[y|x] = x` and `E[z|x] = x + eps`,
//!
//! ```text
//! E||f(y) - x||^2 = E||f(y) - z||^2 - s_z^2 + 2 eps . E(f(y) - x)
//! ```
//!
//! where `s_z^2 = E||z - x||^2` is the second moment of `z` about `x` (not
//! about its mean `x + eps`; that reading is off by exactly `||eps||^2`).
//!
//! The ideal-denoiser constraint: for `f*(y) = x` and `f*(g(y)) = g(x)`,
//! `E[f*(g1(y)) - g2(y) - (g1(f*(y)) - g2(f*(y)))] = 0` per pixel.
//!
//! Trials are split into fixed-size chunks, each with its own random stream,
//! and reduced in chunk order, so results do not depend on the thread count.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::noise::PixelNoise;
use crate::subsampler::Half;
use crate::{substream, Error, Image, NoiseModel, Result, SamplerKind, SubSampler};

const CHUNK: usize = 8192;
const EQ4_CHUNK: usize = 1024;

/// Pass threshold in standard errors.
pub const SIGMA_THRESHOLD: f64 = 3.0;

/// A denoiser family with a closed form.
#[derive(Clone, Debug, PartialEq)]
pub enum Denoiser {
    Identity,
    Constant(f64),
    /// Returns the clean counterpart of whatever it is given.
    Oracle,
    /// 3x3 convolution with clamped borders, kernel in row-major order.
    LinearBlur([f64; 9]),
}

impl Denoiser {
    pub fn box_blur() -> Self {
        Denoiser::LinearBlur([1.0 / 9.0; 9])
    }

    /// Applies the denoiser to planar `channels x h x w` data. `clean` is the
    /// noise-free counterpart of `input`, consulted only by the oracle.
    pub fn apply(&self, input: &[f64], clean: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
        match self {
            Denoiser::Identity => input.to_vec(),
            Denoiser::Constant(c) => vec![*c; input.len()],
            Denoiser::Oracle => clean.to_vec(),
            Denoiser::LinearBlur(kernel) => {
                let mut out = vec![0.0; input.len()];
                for ch in 0..channels {
                    let plane = &input[ch * h * w..(ch + 1) * h * w];
                    for r in 0..h {
                        for c in 0..w {
                            let mut s = 0.0;
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let rr = (r + ky).saturating_sub(1).min(h - 1);
                                    let cc = (c + kx).saturating_sub(1).min(w - 1);
                                    s += kernel[ky * 3 + kx] * plane[rr * w + cc];
                                }
                            }
                            out[ch * h * w + r * w + c] = s;
                        }
                    }
                }
                out
            }
        }
    }
}

impl fmt::Display for Denoiser {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Denoiser::Identity => write!(f, "identity"),
            Denoiser::Constant(c) => write!(f, "constant({c})"),
            Denoiser::Oracle => write!(f, "oracle"),
            Denoiser::LinearBlur(_) => write!(f, "blur3x3"),
        }
    }
}

/// A clean field `x` (single channel, `height x width`), the noise on `y`,
/// the noise on `z` around the shifted mean `x + epsilon`, and a denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct TheoremScenario {
    pub height: usize,
    pub width: usize,
    pub x: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub noise_y: PixelNoise,
    pub noise_z: PixelNoise,
    pub denoiser: Denoiser,
}

impl TheoremScenario {
    /// One-pixel scenario.
    pub fn scalar(x: f64, epsilon: f64, noise_y: PixelNoise, noise_z: PixelNoise, denoiser: Denoiser) -> Self {
        Self {
            height: 1,
            width: 1,
            x: vec![x],
            epsilon: vec![epsilon],
            noise_y,
            noise_z,
            denoiser,
        }
    }

    /// Scenario over the first channel of `image` with a uniform shift.
    pub fn from_image(
        image: &Image,
        epsilon: f64,
        noise_y: PixelNoise,
        noise_z: PixelNoise,
        denoiser: Denoiser,
    ) -> Self {
        let (h, w) = (image.height(), image.width());
        let x = image.to_planes()[..h * w].iter().map(|&v| f64::from(v)).collect();
        Self {
            height: h,
            width: w,
            x,
            epsilon: vec![epsilon; h * w],
            noise_y,
            noise_z,
            denoiser,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if n == 0 || self.x.len() != n || self.epsilon.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "scenario {}x{} with {} values and {} shifts",
                self.height,
                self.width,
                self.x.len(),
                self.epsilon.len()
            )));
        }
        if matches!(self.noise_z, PixelNoise::Poisson { .. })
            && self.x.iter().zip(&self.epsilon).any(|(x, e)| x + e < 0.0)
        {
            return Err(Error::InvalidNoise("Poisson z needs x + epsilon >= 0".into()));
        }
        Ok(())
    }
}

/// Both sides of the gap-corrected identity, estimated from the same trials.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityReport {
    /// Estimate of `E||f(y) - x||^2`.
    pub lhs: f64,
    /// Estimate of `E||f(y) - z||^2 - s_z^2 + 2 eps . E(f(y) - x)`.
    pub rhs: f64,
    /// Estimate of `s_z^2 = E||z - x||^2`.
    pub sigma_z2: f64,
    /// Standard error of `lhs - rhs`, from the per-trial paired differences.
    pub standard_error: f64,
    pub trials: usize,
}

impl IdentityReport {
    pub fn diff(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }

    pub fn passed(&self) -> bool {
        self.diff() <= SIGMA_THRESHOLD * self.standard_error
    }
}

/// Running mean and sum of squared deviations, mergeable across chunks.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if self.n == 0.0 {
            return o;
        }
        if o.n == 0.0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * o.n / n,
            m2: self.m2 + o.m2 + d * d * self.n * o.n / n,
        }
    }

    fn standard_error(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

#[derive(Clone, Copy, Default)]
struct TheoremChunk {
    lhs: Moments,
    rhs: Moments,
    sz2: Moments,
    diff: Moments,
}

fn theorem_chunk(s: &TheoremScenario, seed: u64, chunk: usize, trials: usize) -> TheoremChunk {
    let mut rng = substream(seed, chunk as u64);
    let n = s.x.len();
    let mut out = TheoremChunk::default();
    let mut y = vec![0.0; n];
    for _ in 0..trials {
        for (yi, &xi) in y.iter_mut().zip(&s.x) {
            *yi = s.noise_y.perturb(xi, &mut rng);
        }
        let f = s.denoiser.apply(&y, &s.x, 1, s.height, s.width);
        let (mut a, mut fz, mut zx, mut corr) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let (xi, ei) = (s.x[i], s.epsilon[i]);
            let z = s.noise_z.perturb(xi + ei, &mut rng);
            let z_prime = s.noise_z.perturb(xi + ei, &mut rng);
            a += (f[i] - xi).powi(2);
            fz += (f[i] - z).powi(2);
            zx += (z_prime - xi).powi(2);
            corr += 2.0 * ei * (f[i] - xi);
        }
        let b = fz - zx + corr;
        out.lhs.push(a);
        out.rhs.push(b);
        out.sz2.push(zx);
        out.diff.push(a - b);
    }
    out
}

/// Estimates both sides of the identity over `trials` draws of `(y, z, z')`.
/// `z'` is an independent copy of `z` used for `s_z^2`, so every term is an
/// unbiased per-trial estimate and their difference has a plain standard
/// error.
pub fn verify_theorem1<R: Rng + ?Sized>(s: &TheoremScenario, trials: usize, rng: &mut R) -> Result<IdentityReport> {
    if trials < 10_000 {
        return Err(Error::InvalidConfig(format!("need at least 10^4 trials, got {trials}")));
    }
    s.validate()?;
    let seed = rng.next_u64();
    let chunks = trials.div_ceil(CHUNK);
    let parts: Vec<TheoremChunk> = (0..chunks)
        .into_par_iter()
        .map(|c| theorem_chunk(s, seed, c, CHUNK.min(trials - c * CHUNK)))
        .collect();
    let total = parts.into_iter().fold(TheoremChunk::default(), |acc, p| TheoremChunk {
        lhs: acc.lhs.merge(p.lhs),
        rhs: acc.rhs.merge(p.rhs),
        sz2: acc.sz2.merge(p.sz2),
        diff: acc.diff.merge(p.diff),
    });
    Ok(IdentityReport {
        lhs: total.lhs.mean,
        rhs: total.rhs.mean,
        sigma_z2: total.sz2.mean,
        standard_error: total.diff.standard_error(),
        trials,
    })
}

/// Per-value Monte-Carlo estimate of the constraint expression.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintReport {
    pub denoiser: Denoiser,
    /// Planar `channels x cells_h x cells_w` means.
    pub mean: Vec<f64>,
    pub standard_error: Vec<f64>,
    /// Largest `|mean| / s.e.`; values with zero s.e. and zero mean count as 0.
    pub max_z: f64,
    pub failing: usize,
    pub trials: usize,
}

impl ConstraintReport {
    pub fn passed(&self) -> bool {
        self.failing == 0
    }
}

fn to_planes_f64(img: &Image) -> Vec<f64> {
    img.to_planes().into_iter().map(f64::from).collect()
}

fn noisy_planes<R: Rng + ?Sized>(x: &[f64], noise: &NoiseModel, rng: &mut R) -> Vec<f64> {
    let pixel = noise.at_level(noise.sample_level(rng));
    x.iter().map(|&v| pixel.perturb(v, rng)).collect()
}

/// Draws `y | x` and a fresh sampler per trial and accumulates
/// `f(g1(y)) - g2(y) - (g1(f(y)) - g2(f(y)))` per output value.
pub fn verify_constraint<R: Rng + ?Sized>(
    x: &Image,
    kind: SamplerKind,
    k: usize,
    noise: &NoiseModel,
    denoiser: &Denoiser,
    trials: usize,
    rng: &mut R,
) -> Result<ConstraintReport> {
    noise.validate()?;
    if trials < 2 {
        return Err(Error::InvalidConfig("need at least 2 trials".into()));
    }
    let (h, w, ch) = (x.height(), x.width(), x.channels());
    // Validates the geometry once up front.
    SubSampler::generate(kind, h, w, k, &mut crate::seeded_rng(0))?;
    let (ch_h, ch_w) = (h / k, w / k);
    let m = ch * ch_h * ch_w;
    let xp = to_planes_f64(x);
    let seed = rng.next_u64();
    let chunks = trials.div_ceil(EQ4_CHUNK);
    let parts: Vec<Result<Vec<Moments>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, c as u64);
            let mut acc = vec![Moments::default(); m];
            let gather = |g: &SubSampler, src: &[f64], half: Half| -> Result<Vec<f64>> {
                let mut out = Vec::with_capacity(m);
                g.gather_planes(src, ch, h, w, half, &mut out)?;
                Ok(out)
            };
            for _ in 0..EQ4_CHUNK.min(trials - c * EQ4_CHUNK) {
                let y = noisy_planes(&xp, noise, &mut rng);
                let g = SubSampler::generate(kind, h, w, k, &mut rng)?;
                let (g1y, g2y) = (gather(&g, &y, Half::First)?, gather(&g, &y, Half::Second)?);
                let g1x = gather(&g, &xp, Half::First)?;
                let f_g1y = denoiser.apply(&g1y, &g1x, ch, ch_h, ch_w);
                let fy = denoiser.apply(&y, &xp, ch, h, w);
                let (g1f, g2f) = (gather(&g, &fy, Half::First)?, gather(&g, &fy, Half::Second)?);
                for i in 0..m {
                    acc[i].push(f_g1y[i] - g2y[i] - (g1f[i] - g2f[i]));
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![Moments::default(); m];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part?) {
            *t = t.merge(p);
        }
    }
    let mean: Vec<f64> = total.iter().map(|v| v.mean).collect();
    let standard_error: Vec<f64> = total.iter().map(Moments::standard_error).collect();
    let mut max_z: f64 = 0.0;
    let mut failing = 0;
    for (&mu, &se) in mean.iter().zip(&standard_error) {
        let z = if se > 0.0 {
            mu.abs() / se
        } else if mu == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        max_z = max_z.max(z);
        if z > SIGMA_THRESHOLD {
            failing += 1;
        }
    }
    Ok(ConstraintReport {
        denoiser: denoiser.clone(),
        mean,
        standard_error,
        max_z,
        failing,
        trials,
    })
}

/// The pure sub-sampled objective (no regularizer) at the ideal denoiser,
/// split into the part a perfect denoiser cannot remove and the part caused
/// by the neighbours not being the same pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveBreakdown {
    /// `E||f*(g1(y)) - g2(y)||^2 = E||g1(x) - g2(y)||^2`, per value.
    pub total: f64,
    /// `E||g2(y) - g2(x)||^2`, per value.
    pub noise_floor: f64,
    /// `E||g1(x) - g2(x)||^2`, per value.
    pub gap: f64,
    /// Standard error of `total - noise_floor - gap`.
    pub standard_error: f64,
    pub trials: usize,
}

pub fn oracle_objective_breakdown<R: Rng + ?Sized>(
    x: &Image,
    kind: SamplerKind,
    k: usize,
    noise: &NoiseModel,
    trials: usize,
    rng: &mut R,
) -> Result<ObjectiveBreakdown> {
    noise.validate()?;
    let (h, w, ch) = (x.height(), x.width(), x.channels());
    let xp = to_planes_f64(x);
    let (mut total, mut floor, mut gap, mut resid) =
        (Moments::default(), Moments::default(), Moments::default(), Moments::default());
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let (mut c, mut d) = (Vec::new(), Vec::new());
    for _ in 0..trials {
        let y = noisy_planes(&xp, noise, rng);
        let g = SubSampler::generate(kind, h, w, k, rng)?;
        for v in [&mut a, &mut b, &mut c, &mut d] {
            v.clear();
        }
        g.gather_planes(&xp, ch, h, w, Half::First, &mut a)?;
        g.gather_planes(&xp, ch, h, w, Half::Second, &mut b)?;
        g.gather_planes(&y, ch, h, w, Half::Second, &mut c)?;
        let n = a.len() as f64;
        let t: f64 = a.iter().zip(&c).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n;
        let fl: f64 = c.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n;
        let gp: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n;
        total.push(t);
        floor.push(fl);
        gap.push(gp);
        resid.push(t - fl - gp);
    }
    Ok(ObjectiveBreakdown {
        total: total.mean,
        noise_floor: floor.mean,
        gap: gap.mean,
        standard_error: resid.standard_error(),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use crate::textures::scene;

    fn gauss(std: f64) -> PixelNoise {
        PixelNoise::Gaussian { std }
    }

    #[test]
    fn scalar_scenario_matches_closed_form() {
        let s = TheoremScenario::scalar(1.0, 0.5, gauss(0.3), gauss(0.2), Denoiser::Constant(0.0));
        let r = verify_theorem1(&s, 200_000, &mut seeded_rng(1)).unwrap();
        assert_eq!(r.lhs, 1.0);
        assert!((r.sigma_z2 - 0.29).abs() < 0.01, "{r:?}");
        assert!((r.rhs - 1.0).abs() < 3.0 * r.standard_error, "{r:?}");
        assert!(r.passed());
    }

    #[test]
    fn variance_about_the_mean_breaks_the_identity() {
        // Using Var(z) = 0.04 in place of s_z^2 shifts rhs by eps^2 = 0.25.
        let s = TheoremScenario::scalar(1.0, 0.5, gauss(0.3), gauss(0.2), Denoiser::Constant(0.0));
        let r = verify_theorem1(&s, 100_000, &mut seeded_rng(2)).unwrap();
        let wrong_rhs = r.rhs + r.sigma_z2 - 0.04;
        assert!((wrong_rhs - 1.25).abs() < 0.02, "{wrong_rhs}");
    }

    #[test]
    fn identity_denoiser_gaussian_closed_form() {
        let s = TheoremScenario::scalar(0.4, 0.0, gauss(0.1), gauss(0.3), Denoiser::Identity);
        let r = verify_theorem1(&s, 100_000, &mut seeded_rng(3)).unwrap();
        assert!((r.lhs - 0.01).abs() < 3e-4, "{r:?}");
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn field_scenarios_pass() {
        let x = scene(8, 8, 1, &mut seeded_rng(4));
        for denoiser in [Denoiser::Identity, Denoiser::box_blur(), Denoiser::Oracle, Denoiser::Constant(0.5)] {
            for (ny, nz) in [
                (gauss(0.1), gauss(0.05)),
                (PixelNoise::Poisson { lambda: 30.0 }, PixelNoise::Poisson { lambda: 20.0 }),
            ] {
                let s = TheoremScenario::from_image(&x, 0.05, ny, nz, denoiser.clone());
                let r = verify_theorem1(&s, 20_000, &mut seeded_rng(5)).unwrap();
                assert!(r.passed(), "{denoiser} {ny:?}: {r:?}");
            }
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let s = TheoremScenario::scalar(1.0, 0.5, gauss(0.3), gauss(0.2), Denoiser::Constant(0.0));
        let a = verify_theorem1(&s, 30_000, &mut seeded_rng(6)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| verify_theorem1(&s, 30_000, &mut seeded_rng(6)).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_trials_rejected() {
        let s = TheoremScenario::scalar(1.0, 0.0, gauss(0.1), gauss(0.1), Denoiser::Identity);
        assert!(verify_theorem1(&s, 100, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn constraint_zero_noise_is_exactly_zero() {
        let x = scene(16, 16, 1, &mut seeded_rng(7));
        let noise = NoiseModel::GaussianFixed { sigma: 0.0 };
        let r = verify_constraint(&x, SamplerKind::Neighbor, 2, &noise, &Denoiser::Oracle, 50, &mut seeded_rng(8))
            .unwrap();
        assert!(r.mean.iter().all(|&v| v == 0.0));
        assert!(r.passed());
    }

    #[test]
    fn constraint_identity_denoiser_cancels_exactly() {
        let x = scene(16, 16, 1, &mut seeded_rng(7));
        let noise = NoiseModel::GaussianFixed { sigma: 25.0 };
        let r = verify_constraint(&x, SamplerKind::Neighbor, 2, &noise, &Denoiser::Identity, 50, &mut seeded_rng(8))
            .unwrap();
        assert!(r.mean.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn constant_zero_denoiser_fails_constraint() {
        let x = scene(16, 16, 1, &mut seeded_rng(9)).map(|v| 0.2 + 0.6 * v);
        let noise = NoiseModel::GaussianFixed { sigma: 25.0 };
        let r = verify_constraint(
            &x,
            SamplerKind::Neighbor,
            2,
            &noise,
            &Denoiser::Constant(0.0),
            2000,
            &mut seeded_rng(10),
        )
        .unwrap();
        assert!(!r.passed());
        // The expectation is -g2(x); its mean over cells sits near -mean(x).
        let avg: f64 = r.mean.iter().sum::<f64>() / r.mean.len() as f64;
        let xmean: f64 = x.data().iter().map(|&v| f64::from(v)).sum::<f64>() / x.data().len() as f64;
        assert!((avg + xmean).abs() < 0.05, "{avg} vs {xmean}");
    }

    #[test]
    fn oracle_objective_splits_into_floor_and_gap() {
        let x = scene(16, 16, 1, &mut seeded_rng(11));
        let noise = NoiseModel::GaussianFixed { sigma: 25.0 };
        let b = oracle_objective_breakdown(&x, SamplerKind::Neighbor, 2, &noise, 2000, &mut seeded_rng(12)).unwrap();
        let std = 25.0f64 / 255.0;
        assert!((b.noise_floor - std * std).abs() < 0.05 * std * std, "{b:?}");
        assert!(b.gap > 0.0);
        assert!((b.total - b.noise_floor - b.gap).abs() <= 3.0 * b.standard_error + 1e-12, "{b:?}");
    }
}
