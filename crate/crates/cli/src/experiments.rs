//! Train-then-score runs shared by the ablation commands.

use rayon::prelude::*;

use n2n_core::metrics::{format_score, mean_abs_laplacian, psnr, ssim};
use n2n_core::training::{denoise_image, init_network, train, EpochLog, ValidationPair};
use n2n_core::{Image, Network};

use crate::config::RunSettings;
use crate::CliResult;

/// Held-out quality of a denoiser.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub psnr: f64,
    pub ssim: f64,
    /// Mean absolute Laplacian of the clamped outputs; lower is smoother.
    pub laplacian: f64,
}

impl Score {
    pub fn row(&self, label: &str) -> String {
        format!("{label}\t{}\t{:.4}", format_score(self.psnr, self.ssim), self.laplacian)
    }
}

pub const TABLE_HEADER: &str = "setting\tPSNR/SSIM\tlaplacian";

fn score_outputs(pairs: &[ValidationPair], outputs: &[Image]) -> CliResult<Score> {
    let per: Vec<(f64, f64, f64)> = pairs
        .par_iter()
        .zip(outputs.par_iter())
        .map(|(p, out)| {
            let out = out.clamped();
            Ok((psnr(&p.clean, &out, 1.0)?, ssim(&p.clean, &out)?, mean_abs_laplacian(&out)))
        })
        .collect::<CliResult<_>>()?;
    let n = per.len().max(1) as f64;
    Ok(Score {
        psnr: per.iter().map(|v| v.0).sum::<f64>() / n,
        ssim: per.iter().map(|v| v.1).sum::<f64>() / n,
        laplacian: per.iter().map(|v| v.2).sum::<f64>() / n,
    })
}

/// Scores the noisy inputs themselves.
pub fn noisy_score(pairs: &[ValidationPair]) -> CliResult<Score> {
    let noisy: Vec<Image> = pairs.iter().map(|p| p.noisy.clone()).collect();
    score_outputs(pairs, &noisy)
}

/// Denoises every held-out image and scores the results.
pub fn score(net: &Network<f32>, pairs: &[ValidationPair]) -> CliResult<Score> {
    let outputs: Vec<Image> = pairs
        .par_iter()
        .map(|p| denoise_image(net, &p.noisy))
        .collect::<Result<_, _>>()?;
    score_outputs(pairs, &outputs)
}

pub struct TrainedRun {
    pub net: Network<f32>,
    pub log: Vec<EpochLog>,
    pub score: Score,
}

/// Trains from a seeded initialization, then scores on `val` (which is not
/// used during training).
pub fn train_and_score(
    images: &[Image],
    channels: usize,
    val: &[ValidationPair],
    settings: &RunSettings,
    on_epoch: impl FnMut(&EpochLog, &Network<f32>, &n2n_core::training::TrainState) -> n2n_core::Result<()>,
) -> CliResult<TrainedRun> {
    let net = init_network(settings.arch(channels), settings.train.seed)?;
    let outcome = train(images, &[], &settings.train, net, None, on_epoch)?;
    let score = score(&outcome.net, val)?;
    Ok(TrainedRun {
        net: outcome.net,
        log: outcome.log,
        score,
    })
}
