use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use n2n_core::imaging::{load_image, load_image_any, save_float_image, save_image};
use n2n_core::metrics::MetricReport;
use n2n_core::network::{gradient_check, load_checkpoint, save_checkpoint};
use n2n_core::noise::{apply_noise_with_level, PixelNoise};
use n2n_core::textures::scene;
use n2n_core::theory::{
    verify_constraint, verify_theorem1, ConstraintReport, Denoiser, IdentityReport, TheoremScenario,
    SIGMA_THRESHOLD,
};
use n2n_core::training::{denoise_image, init_network, load_state, save_state, train, EpochLog};
use n2n_core::{seeded_rng, substream, ArchDescriptor, Image, Network, NoiseModel, SamplerKind, SubSampler, Tensor4};

use crate::args::*;
use crate::config::{resolve, RunSettings};
use crate::dataset::{list_images, load_uniform, pair_dirs, validation_pairs};
use crate::experiments::{noisy_score, train_and_score, TABLE_HEADER};
use crate::manifest::RunManifest;
use crate::{CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const STATE_FILE: &str = "model.state";
pub const LOG_FILE: &str = "train.log";

fn out_err(e: std::io::Error) -> CliError {
    CliError::io("<stdout>", e)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn parse_noise(s: &str) -> CliResult<NoiseModel> {
    s.parse().map_err(|e: n2n_core::Error| CliError::Usage(e.to_string()))
}

fn parse_kind(s: &str) -> CliResult<SamplerKind> {
    s.parse().map_err(|e: n2n_core::Error| CliError::Usage(e.to_string()))
}

pub fn run(command: Command, argv: &[String], out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Synthesize(a) => synthesize(&a, argv, out),
        Command::Train(a) => train_cmd(&a, argv, out),
        Command::Denoise(a) => denoise(&a, argv, out),
        Command::Eval(a) => eval(&a, out),
        Command::AblateGamma(a) => ablate_gamma(&a, argv, out),
        Command::AblateSampler(a) => ablate_sampler(&a, argv, out),
        Command::VerifyTheorem(a) => verify_theorem(&a, out),
        Command::Gradcheck(a) => gradcheck(&a, out),
        Command::DumpSampler(a) => dump_sampler(&a, out),
        Command::GenTextures(a) => gen_textures(&a, argv, out),
    }
}

/// Writes a noisy copy of every image (8-bit, clamped) plus an unclamped
/// `.n2nf` sidecar. Image `i` in stem order uses stream `i` of the seed.
pub fn synthesize(a: &SynthesizeArgs, argv: &[String], out: &mut dyn Write) -> CliResult<()> {
    let noise = parse_noise(&a.noise)?;
    let entries: Vec<_> = list_images(&a.input)?
        .into_iter()
        .filter_map(|(stem, e)| e.image.map(|p| (stem, p)))
        .collect();
    if entries.is_empty() {
        return Err(CliError::Data(format!("no images in {}", a.input.display())));
    }
    create_dir(&a.output)?;
    let mut manifest = RunManifest::start("synthesize", argv);
    manifest.seed = Some(a.seed);
    manifest.config.insert("noise".into(), noise.to_string());
    let mut levels = Vec::new();
    for (i, (stem, path)) in entries.iter().enumerate() {
        let clean = load_image(path)?;
        let (noisy, level) = apply_noise_with_level(&clean, &noise, &mut substream(a.seed, i as u64))?;
        let name = path.file_name().expect("listed files have names");
        let image_path = a.output.join(name);
        let float_path = a.output.join(format!("{stem}.{}", n2n_core::imaging::FLOAT_EXTENSION));
        save_image(&noisy, &image_path)?;
        save_float_image(&noisy, &float_path)?;
        manifest.add_output(&image_path)?;
        manifest.add_output(&float_path)?;
        writeln!(out, "{stem}\t{level}").map_err(out_err)?;
        levels.push(json!({ "file": name.to_string_lossy(), "level": level }));
    }
    manifest.details = json!({ "levels": levels });
    manifest.finish(&a.output)
}

fn settings_details(settings: &RunSettings, manifest: &mut RunManifest) {
    manifest.config = settings.to_map();
    manifest.seed = Some(settings.train.seed);
}

pub fn train_cmd(a: &TrainArgs, argv: &[String], out: &mut dyn Write) -> CliResult<()> {
    let settings = resolve(&a.opts)?;
    let (images, channels) = load_uniform(&a.data)?;
    let arch = settings.arch(channels);
    let val = match &a.val {
        Some(dir) => {
            let (clean, c) = load_uniform(dir)?;
            if c != channels {
                return Err(CliError::Data("validation and training images differ in channels".into()));
            }
            validation_pairs(clean, &settings.train.noise, settings.train.seed)?
        }
        None => Vec::new(),
    };
    let (net, resume) = match &a.resume {
        Some(dir) => {
            let net = load_checkpoint(dir.join(CHECKPOINT_FILE))?;
            if *net.descriptor() != arch {
                return Err(CliError::Usage(format!(
                    "checkpoint holds {}, settings describe {arch}",
                    net.descriptor()
                )));
            }
            (net, Some(load_state(dir.join(STATE_FILE))?))
        }
        None => (init_network(arch, settings.train.seed)?, None),
    };
    settings.train.validate(&net)?;
    create_dir(&a.output)?;
    let mut manifest = RunManifest::start("train", argv);
    settings_details(&settings, &mut manifest);
    let (ckpt, state_path, log_path) = (
        a.output.join(CHECKPOINT_FILE),
        a.output.join(STATE_FILE),
        a.output.join(LOG_FILE),
    );
    let mut log_text = format!("{}\n", EpochLog::HEADER);
    writeln!(out, "{}", EpochLog::HEADER).map_err(out_err)?;
    let every = a.checkpoint_every.unwrap_or(0);
    let outcome = train(&images, &val, &settings.train, net, resume, |entry, net, state| {
        let line = entry.to_string();
        log_text.push_str(&line);
        log_text.push('\n');
        let _ = writeln!(out, "{line}");
        if every > 0 && state.epoch % every == 0 {
            save_checkpoint(net, &ckpt)?;
            save_state(state, &state_path)?;
        }
        Ok(())
    });
    let outcome = match outcome {
        Err(n2n_core::Error::NonFiniteLoss { epoch }) => {
            let _ = std::fs::write(&log_path, &log_text);
            return Err(CliError::Numeric(format!("loss became non-finite in epoch {epoch}")));
        }
        other => other?,
    };
    save_checkpoint(&outcome.net, &ckpt)?;
    save_state(&outcome.state, &state_path)?;
    std::fs::write(&log_path, &log_text).map_err(|e| CliError::io(&log_path, e))?;
    for p in [&ckpt, &state_path, &log_path] {
        manifest.add_output(p)?;
    }
    manifest.details = json!({
        "architecture": outcome.net.descriptor().to_string(),
        "parameters": outcome.net.parameter_count(),
        "training_images": images.len(),
        "validation_images": val.len(),
        "resumed_from": a.resume,
        "final_psnr_val": outcome.log.last().and_then(|l| l.psnr_val),
    });
    manifest.finish(&a.output)
}

fn output_name(stem: &str, input: &Path) -> String {
    match input.extension().map(|e| e.to_string_lossy().to_ascii_lowercase()) {
        Some(ext) if ext == "pgm" || ext == "ppm" || ext == "png" => format!("{stem}.{ext}"),
        _ => format!("{stem}.png"),
    }
}

/// Denoises each image once at full resolution. Float sidecars take
/// precedence over 8-bit files with the same stem.
pub fn denoise(a: &DenoiseArgs, argv: &[String], out: &mut dyn Write) -> CliResult<()> {
    let net = load_checkpoint(&a.checkpoint)?;
    let entries: Vec<(String, PathBuf)> = list_images(&a.input)?
        .into_iter()
        .map(|(stem, e)| (stem, e.pick(true).to_path_buf()))
        .collect();
    if entries.is_empty() {
        return Err(CliError::Data(format!("no images in {}", a.input.display())));
    }
    create_dir(&a.output)?;
    let written: Vec<PathBuf> = entries
        .par_iter()
        .map(|(stem, path)| {
            let img = load_image_any(path)?;
            let den = denoise_image(&net, &img)?;
            let target = a.output.join(output_name(stem, path));
            save_image(&den, &target)?;
            Ok(target)
        })
        .collect::<CliResult<_>>()?;
    let mut manifest = RunManifest::start("denoise", argv);
    manifest.config.insert("checkpoint".into(), a.checkpoint.display().to_string());
    manifest.config.insert("architecture".into(), net.descriptor().to_string());
    for p in &written {
        manifest.add_output(p)?;
        writeln!(out, "{}", p.display()).map_err(out_err)?;
    }
    manifest.finish(&a.output)
}

/// Per-image and mean PSNR/SSIM; 8-bit files take precedence over sidecars.
pub fn eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let pairs = pair_dirs(&a.clean, &a.test)?;
    let loaded: Vec<(String, Image, Image)> = pairs
        .par_iter()
        .map(|(stem, c, t)| Ok((stem.clone(), load_image_any(c.pick(false))?, load_image_any(t.pick(false))?)))
        .collect::<CliResult<_>>()?;
    let report = MetricReport::evaluate(loaded.iter().map(|(s, c, t)| (s.clone(), c, t)))?;
    writeln!(out, "image\tPSNR/SSIM\n{report}").map_err(out_err)
}

struct AblationData {
    images: Vec<Image>,
    channels: usize,
    val: Vec<n2n_core::training::ValidationPair>,
}

fn ablation_data(data: &Path, val: &Path, settings: &RunSettings) -> CliResult<AblationData> {
    let (images, channels) = load_uniform(data)?;
    let (clean, c) = load_uniform(val)?;
    if c != channels {
        return Err(CliError::Data("validation and training images differ in channels".into()));
    }
    let val = validation_pairs(clean, &settings.train.noise, settings.train.seed)?;
    Ok(AblationData { images, channels, val })
}

fn run_rows(
    rows: Vec<(String, String, RunSettings)>,
    data: &AblationData,
    output: &Path,
    argv: &[String],
    command: &str,
    out: &mut dyn Write,
) -> CliResult<()> {
    create_dir(output)?;
    let mut manifest = RunManifest::start(command, argv);
    settings_details(&rows[0].2, &mut manifest);
    writeln!(out, "{TABLE_HEADER}").map_err(out_err)?;
    let noisy = noisy_score(&data.val)?;
    writeln!(out, "{}", noisy.row("noisy input")).map_err(out_err)?;
    let mut results = vec![json!({ "setting": "noisy input", "psnr": noisy.psnr, "ssim": noisy.ssim, "laplacian": noisy.laplacian })];
    for (label, file_tag, settings) in rows {
        let run = train_and_score(&data.images, data.channels, &data.val, &settings, |entry, _, _| {
            eprintln!("[{label}] {entry}");
            Ok(())
        })?;
        let ckpt = output.join(format!("{file_tag}.ckpt"));
        save_checkpoint(&run.net, &ckpt)?;
        manifest.add_output(&ckpt)?;
        writeln!(out, "{}", run.score.row(&label)).map_err(out_err)?;
        results.push(json!({
            "setting": label,
            "config": settings.to_map(),
            "psnr": run.score.psnr,
            "ssim": run.score.ssim,
            "laplacian": run.score.laplacian,
        }));
    }
    manifest.details = json!({ "rows": results });
    manifest.finish(output)
}

pub fn ablate_gamma(a: &AblateGammaArgs, argv: &[String], out: &mut dyn Write) -> CliResult<()> {
    let base = resolve(&a.opts)?;
    if a.gammas.is_empty() {
        return Err(CliError::Usage("no gamma values given".into()));
    }
    let data = ablation_data(&a.data, &a.val, &base)?;
    let rows = a
        .gammas
        .iter()
        .map(|&g| {
            let mut s = base.clone();
            s.train.gamma = g;
            (format!("gamma={g}"), format!("gamma-{g}"), s)
        })
        .collect();
    run_rows(rows, &data, &a.output, argv, "ablate-gamma", out)
}

pub fn ablate_sampler(a: &AblateSamplerArgs, argv: &[String], out: &mut dyn Write) -> CliResult<()> {
    let base = resolve(&a.opts)?;
    let data = ablation_data(&a.data, &a.val, &base)?;
    let rows = [("Fix-location", SamplerKind::FixLocation), ("Random", SamplerKind::Neighbor)]
        .into_iter()
        .map(|(label, kind)| {
            let mut s = base.clone();
            s.train.sampler_kind = kind;
            (label.to_string(), kind.to_string(), s)
        })
        .collect();
    run_rows(rows, &data, &a.output, argv, "ablate-sampler", out)
}

/// Gap-corrected identity scenarios: the scalar closed form plus identity,
/// blur, oracle and constant denoisers on a small field under Gaussian and
/// Poisson noise, with and without a mean shift.
pub fn theorem_scenarios(field: &Image) -> Vec<(String, TheoremScenario)> {
    let gauss = |sigma: f64| PixelNoise::Gaussian { std: sigma / 255.0 };
    let poisson = PixelNoise::Poisson { lambda: 30.0 };
    let mut out = vec![(
        "scalar x=1 f=0 eps=0.5 var_z=0.04".to_string(),
        TheoremScenario::scalar(
            1.0,
            0.5,
            PixelNoise::Gaussian { std: 0.1 },
            PixelNoise::Gaussian { std: 0.2 },
            Denoiser::Constant(0.0),
        ),
    )];
    let denoisers = [Denoiser::Identity, Denoiser::box_blur(), Denoiser::Oracle, Denoiser::Constant(0.5)];
    for d in &denoisers {
        for (noise_name, ny, nz) in [("gauss25", gauss(25.0), gauss(25.0)), ("poisson30", poisson, poisson)] {
            for eps in [0.0, 0.05] {
                out.push((
                    format!("{d} {noise_name} eps={eps}"),
                    TheoremScenario::from_image(field, eps, ny, nz, d.clone()),
                ));
            }
        }
    }
    out
}

fn constraint_field(a: &VerifyTheoremArgs) -> CliResult<Image> {
    match &a.image {
        Some(path) => {
            let img = load_image_any(path)?;
            if img.height() < 32 || img.width() < 32 {
                return Err(CliError::Data(format!("{} is smaller than 32x32", path.display())));
            }
            let crop = img.window(0, 0, 32, 32)?;
            let planes = crop.to_planes();
            Ok(Image::from_planes(32, 32, 1, &planes[..32 * 32])?)
        }
        None => Ok(scene(32, 32, 1, &mut substream(a.seed, 1))),
    }
}

fn identity_row(name: &str, r: &IdentityReport) -> String {
    format!(
        "{name}\t{:.6}\t{:.6}\t{:.2e}\t{:.2e}\t{}",
        r.lhs,
        r.rhs,
        r.diff(),
        SIGMA_THRESHOLD * r.standard_error,
        if r.passed() { "PASS" } else { "FAIL" }
    )
}

fn constraint_row(r: &ConstraintReport) -> String {
    format!(
        "{}\t{:.3}\t{}/{}\t{}",
        r.denoiser,
        r.max_z,
        r.failing,
        r.mean.len(),
        if r.passed() { "PASS" } else { "FAIL" }
    )
}

pub fn verify_theorem(a: &VerifyTheoremArgs, out: &mut dyn Write) -> CliResult<()> {
    let field = scene(8, 8, 1, &mut substream(a.seed, 0));
    writeln!(out, "scenario\tlhs\trhs\t|diff|\t3*s.e.\tresult").map_err(out_err)?;
    for (i, (name, s)) in theorem_scenarios(&field).into_iter().enumerate() {
        let trials = if i == 0 { a.trials } else { a.field_trials };
        let r = verify_theorem1(&s, trials, &mut substream(a.seed, 100 + i as u64))?;
        writeln!(out, "{}", identity_row(&name, &r)).map_err(out_err)?;
    }
    let x = constraint_field(a)?;
    let noise = NoiseModel::GaussianFixed { sigma: 25.0 };
    writeln!(out, "\nconstraint denoiser\tmax|z|\tfailing\tresult").map_err(out_err)?;
    for (i, d) in [Denoiser::Oracle, Denoiser::Constant(0.0), Denoiser::Identity].iter().enumerate() {
        let r = verify_constraint(
            &x,
            SamplerKind::Neighbor,
            2,
            &noise,
            d,
            a.constraint_trials,
            &mut substream(a.seed, 200 + i as u64),
        )?;
        writeln!(out, "{}", constraint_row(&r)).map_err(out_err)?;
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> CliResult<()> {
    let descriptor = if a.linear {
        ArchDescriptor {
            input_channels: a.channels,
            depth: 0,
            base_width: 0,
            tail_1x1: 0,
        }
    } else {
        ArchDescriptor {
            input_channels: a.channels,
            depth: a.depth,
            base_width: a.width,
            tail_1x1: a.tail,
        }
    };
    let mut rng = seeded_rng(a.seed);
    let mut net = Network::<f64>::build(descriptor, &mut rng)?;
    let data: Vec<f64> = (0..a.channels * a.size * a.size)
        .map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0))
        .collect();
    let x = Tensor4::new(1, a.channels, a.size, a.size, data)?;
    let samples = if a.samples == 0 { net.parameter_count() } else { a.samples };
    let r = gradient_check(&mut net, &x, a.h, a.tol, samples, &mut rng)?;
    writeln!(
        out,
        "network\t{descriptor}\nparameters\t{}\nchecked\t{}\nskipped_at_kinks\t{}\nmax_relative_error\t{:.3e}\nmax_absolute_error\t{:.3e}\nresult\t{}",
        net.parameter_count(),
        r.checked,
        r.skipped_at_kinks,
        r.max_relative_error,
        r.max_absolute_error,
        if r.passed { "PASS" } else { "FAIL" }
    )
    .map_err(out_err)?;
    if r.passed {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            r.max_relative_error, a.tol
        )))
    }
}

pub fn dump_sampler(a: &DumpSamplerArgs, out: &mut dyn Write) -> CliResult<()> {
    let kind = parse_kind(&a.kind)?;
    let g = SubSampler::generate(kind, a.height, a.width, a.k, &mut seeded_rng(a.seed))?;
    out.write_all(g.dump().as_bytes()).map_err(out_err)
}

pub fn gen_textures(a: &GenTexturesArgs, argv: &[String], out: &mut dyn Write) -> CliResult<()> {
    if a.count == 0 || a.size == 0 {
        return Err(CliError::Usage("count and size must be positive".into()));
    }
    if a.channels != 1 && a.channels != 3 {
        return Err(CliError::Usage(format!("channels must be 1 or 3, got {}", a.channels)));
    }
    create_dir(&a.output)?;
    let mut manifest = RunManifest::start("gen-textures", argv);
    manifest.seed = Some(a.seed);
    let paths: Vec<PathBuf> = (0..a.count)
        .into_par_iter()
        .map(|i| {
            let img = scene(a.size, a.size, a.channels, &mut substream(a.seed, i as u64));
            let path = a.output.join(format!("scene_{i:04}.png"));
            save_image(&img, &path)?;
            Ok(path)
        })
        .collect::<CliResult<_>>()?;
    for p in &paths {
        manifest.add_output(p)?;
    }
    writeln!(out, "wrote {} scenes to {}", paths.len(), a.output.display()).map_err(out_err)?;
    manifest.finish(&a.output)
}
