//! Losses, optimizer and the training loop.
//!
//! Each batch item is a random crop with freshly drawn noise and its own
//! freshly drawn sub-sampler `G = (g1, g2)`. The network maps `g1(y)` to
//! `g2(y)`; the regularizer compares that residual with the same residual
//! of the denoised full crop, `g1(f(y)) - g2(f(y))`, which is computed
//! without gradient tracking and enters as a constant.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::imaging::random_crop;
use crate::network::{ArchDescriptor, Scalar, Tensor4};
use crate::noise::apply_noise;
use crate::subsampler::Half;
use crate::{container, substream, Error, Image, Network, NoiseModel, Result, SamplerKind, SubSampler};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Epochs over which `gamma` ramps up linearly; 0 keeps it constant.
    pub gamma_ramp_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub crop: usize,
    pub lr: f64,
    /// Multiply the learning rate by `lr_decay_factor` every this many
    /// epochs; 0 disables decay.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub noise: NoiseModel,
    pub sampler_kind: SamplerKind,
    pub k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            gamma_ramp_epochs: 10,
            epochs: 100,
            batch_size: 4,
            crop: 256,
            lr: 3e-4,
            lr_decay_every: 20,
            lr_decay_factor: 0.5,
            seed: 0,
            noise: NoiseModel::GaussianFixed { sigma: 25.0 },
            sampler_kind: SamplerKind::Neighbor,
            k: 2,
        }
    }
}

impl TrainConfig {
    /// Desk-scale settings: 64-pixel crops, 20 epochs.
    pub fn desk() -> Self {
        Self {
            crop: 64,
            epochs: 20,
            ..Self::default()
        }
    }

    /// Checks the configuration against a network's size constraints.
    pub fn validate(&self, net: &Network<f32>) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!("lr_decay_factor must be in (0, 1], got {}", self.lr_decay_factor));
        }
        if self.k < 2 {
            return Err(Error::InvalidCellSize(self.k));
        }
        let multiple = self.k * net.descriptor().size_multiple();
        if self.crop == 0 || self.crop % multiple != 0 {
            return bad(format!("crop {} must be a positive multiple of {multiple}", self.crop));
        }
        self.noise.validate()
    }
}

/// `gamma * min(1, (epoch + 1) / ramp)`.
pub fn gamma_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.gamma_ramp_epochs == 0 || epoch + 1 >= cfg.gamma_ramp_epochs {
        cfg.gamma
    } else {
        cfg.gamma * (epoch + 1) as f64 / cfg.gamma_ramp_epochs as f64
    }
}

/// Step decay: `lr * factor^(epoch / every)`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.lr_decay_every == 0 {
        cfg.lr
    } else {
        cfg.lr * cfg.lr_decay_factor.powi((epoch / cfg.lr_decay_every) as i32)
    }
}

fn check_same<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean squared difference between output and target.
pub fn loss_rec<T: Scalar>(out: &Tensor4<T>, target: &Tensor4<T>) -> Result<f64> {
    check_same(out, target, "loss_rec")?;
    let sum: f64 = out
        .data
        .iter()
        .zip(&target.data)
        .map(|(&o, &t)| (o - t).to_f64().powi(2))
        .sum();
    Ok(sum / out.len() as f64)
}

/// Mean of `(out - target - den_sub1 + den_sub2)^2`.
pub fn loss_reg<T: Scalar>(
    out: &Tensor4<T>,
    target: &Tensor4<T>,
    den_sub1: &Tensor4<T>,
    den_sub2: &Tensor4<T>,
) -> Result<f64> {
    check_same(out, target, "loss_reg")?;
    check_same(out, den_sub1, "loss_reg")?;
    check_same(out, den_sub2, "loss_reg")?;
    let sum: f64 = (0..out.len())
        .map(|i| (out.data[i] - target.data[i] - den_sub1.data[i] + den_sub2.data[i]).to_f64().powi(2))
        .sum();
    Ok(sum / out.len() as f64)
}

/// Loss values and the gradient of `rec + gamma * reg` with respect to `out`.
#[derive(Clone, Debug)]
pub struct Objective<T: Scalar> {
    pub rec: f64,
    pub reg: f64,
    pub total: f64,
    pub grad: Tensor4<T>,
}

/// Evaluates the training objective. `den_sub1`/`den_sub2` are constants:
/// they shift the regularizer residual but contribute no gradient path.
pub fn objective<T: Scalar>(
    out: &Tensor4<T>,
    target: &Tensor4<T>,
    den_sub1: &Tensor4<T>,
    den_sub2: &Tensor4<T>,
    gamma: f64,
) -> Result<Objective<T>> {
    let rec = loss_rec(out, target)?;
    let reg = loss_reg(out, target, den_sub1, den_sub2)?;
    let scale = 2.0 / out.len() as f64;
    let grad = Tensor4 {
        batch: out.batch,
        channels: out.channels,
        height: out.height,
        width: out.width,
        data: (0..out.len())
            .map(|i| {
                let diff = (out.data[i] - target.data[i]).to_f64();
                let res = diff - den_sub1.data[i].to_f64() + den_sub2.data[i].to_f64();
                T::from_f64(scale * (diff + gamma * res))
            })
            .collect(),
    };
    Ok(Objective {
        rec,
        reg,
        total: rec + gamma * reg,
        grad,
    })
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl AdamState {
    pub fn new(parameters: usize) -> Self {
        Self {
            m: vec![0.0; parameters],
            v: vec![0.0; parameters],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update; clears the gradients afterwards.
pub fn adam_step(net: &mut Network<f32>, st: &mut AdamState, lr: f64) -> Result<()> {
    if st.m.len() != net.parameter_count() || st.v.len() != net.parameter_count() {
        return Err(Error::ShapeMismatch(format!(
            "optimizer state for {} parameters, network has {}",
            st.m.len(),
            net.parameter_count()
        )));
    }
    st.t += 1;
    let t = st.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let (params, grads) = net.params_and_grads_mut();
    for i in 0..params.len() {
        let g = f64::from(grads[i]);
        let m = ADAM_BETA1 * f64::from(st.m[i]) + (1.0 - ADAM_BETA1) * g;
        let v = ADAM_BETA2 * f64::from(st.v[i]) + (1.0 - ADAM_BETA2) * g * g;
        st.m[i] = m as f32;
        st.v[i] = v as f32;
        let update = lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS);
        params[i] = (f64::from(params[i]) - update) as f32;
        grads[i] = 0.0;
    }
    Ok(())
}

/// Random stream reserved for weight initialization; epochs use `2e` and
/// `2e + 1`.
pub const INIT_STREAM: u64 = u64::MAX;

/// Builds a freshly initialized network from the run seed.
pub fn init_network(descriptor: ArchDescriptor, seed: u64) -> Result<Network<f32>> {
    Network::build(descriptor, &mut substream(seed, INIT_STREAM))
}

/// Where a run stands: the next epoch to execute and the optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub adam: AdamState,
}

impl TrainState {
    pub fn fresh(net: &Network<f32>) -> Self {
        Self {
            epoch: 0,
            adam: AdamState::new(net.parameter_count()),
        }
    }
}

const STATE_TAG: &str = "adam";

pub fn save_state(state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    let desc = format!("{STATE_TAG} epoch={} t={}", state.epoch, state.adam.t);
    let mut values = Vec::with_capacity(state.adam.m.len() * 2);
    values.extend_from_slice(&state.adam.m);
    values.extend_from_slice(&state.adam.v);
    container::write(path.as_ref(), &desc, &values)
}

pub fn load_state(path: impl AsRef<Path>) -> Result<TrainState> {
    let (desc, values) = container::read(path.as_ref())?;
    let bad = || Error::Checkpoint(format!("cannot parse optimizer state {desc:?}"));
    let mut fields = desc.split_whitespace();
    if fields.next() != Some(STATE_TAG) || values.len() % 2 != 0 {
        return Err(bad());
    }
    let mut field = |key: &str| -> Result<u64> {
        let (k, v) = fields.next().and_then(|f| f.split_once('=')).ok_or_else(bad)?;
        if k != key {
            return Err(bad());
        }
        v.parse().map_err(|_| bad())
    };
    let epoch = field("epoch")? as usize;
    let t = field("t")?;
    let half = values.len() / 2;
    Ok(TrainState {
        epoch,
        adam: AdamState {
            m: values[..half].to_vec(),
            v: values[half..].to_vec(),
            t,
        },
    })
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub gamma: f64,
    pub loss_rec: f64,
    pub loss_reg: f64,
    pub psnr_val: Option<f64>,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\tlr\tgamma\tloss_rec\tloss_reg\tpsnr_val";
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.6e}\t{:.4}\t{:.6e}\t{:.6e}\t",
            self.epoch, self.lr, self.gamma, self.loss_rec, self.loss_reg
        )?;
        match self.psnr_val {
            Some(p) => write!(f, "{p:.4}"),
            None => write!(f, "-"),
        }
    }
}

/// A held-out `(clean, noisy)` pair.
#[derive(Clone, Debug)]
pub struct ValidationPair {
    pub clean: Image,
    pub noisy: Image,
}

/// Mean PSNR of the denoised validation images against their clean versions.
pub fn validation_psnr(net: &Network<f32>, pairs: &[ValidationPair]) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        let out = denoise_image(net, &p.noisy)?;
        total += crate::metrics::psnr(&p.clean, &out, 1.0)?;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// Runs the network once on the full image. Sizes that are not a multiple
/// of the network's pooling factor are mirror-padded at the bottom/right and
/// cropped back.
pub fn denoise_image(net: &Network<f32>, img: &Image) -> Result<Image> {
    let m = net.descriptor().size_multiple();
    let (h, w) = (img.height(), img.width());
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let padded;
    let input = if (ph, pw) == (h, w) {
        img
    } else {
        padded = img.reflect_pad(ph, pw)?;
        &padded
    };
    let x = Tensor4::<f32>::from_images(std::slice::from_ref(input))?;
    let out = net.infer(&x)?.to_image(0)?;
    if (ph, pw) == (h, w) {
        Ok(out)
    } else {
        out.window(0, 0, h, w)
    }
}

pub struct TrainOutcome {
    pub net: Network<f32>,
    pub log: Vec<EpochLog>,
    pub state: TrainState,
}

fn gather_batch<T: Scalar>(samplers: &[SubSampler], t: &Tensor4<T>, half: Half) -> Result<Tensor4<T>> {
    let (ch, h, w) = (t.channels, t.height, t.width);
    let k = samplers[0].k();
    let mut data = Vec::with_capacity(t.len() / (k * k));
    for (b, g) in samplers.iter().enumerate() {
        g.gather_planes(t.item(b), ch, h, w, half, &mut data)?;
    }
    Tensor4::new(t.batch, ch, h / k, w / k, data)
}

/// Per-batch losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub rec: f64,
    pub reg: f64,
    pub total: f64,
}

/// One optimizer step on a batch of noisy crops with their samplers.
pub fn train_step(
    net: &mut Network<f32>,
    adam: &mut AdamState,
    noisy: &Tensor4<f32>,
    samplers: &[SubSampler],
    gamma: f64,
    lr: f64,
) -> Result<StepLoss> {
    if samplers.len() != noisy.batch || samplers.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} samplers for a batch of {}",
            samplers.len(),
            noisy.batch
        )));
    }
    let denoised = net.infer(noisy)?;
    let den_sub1 = gather_batch(samplers, &denoised, Half::First)?;
    let den_sub2 = gather_batch(samplers, &denoised, Half::Second)?;
    let input = gather_batch(samplers, noisy, Half::First)?;
    let target = gather_batch(samplers, noisy, Half::Second)?;
    let out = net.forward(&input)?;
    let obj = objective(&out, &target, &den_sub1, &den_sub2, gamma)?;
    net.backward(&obj.grad)?;
    adam_step(net, adam, lr)?;
    Ok(StepLoss {
        rec: obj.rec,
        reg: obj.reg,
        total: obj.total,
    })
}

/// Trains `net` on `images` from `resume` (or from scratch) up to
/// `cfg.epochs`. Every epoch visits each image once in a shuffled order,
/// one random crop per visit; the last batch may be short. Epoch `e` draws
/// its order, crops and noise from stream `2e` of `cfg.seed` and its
/// samplers from stream `2e + 1`. A resumed run therefore matches an
/// uninterrupted one, and runs that differ only in sampler kind see the same
/// data. `on_epoch` runs after each epoch with the
/// log line and the state to resume from.
pub fn train(
    images: &[Image],
    validation: &[ValidationPair],
    cfg: &TrainConfig,
    mut net: Network<f32>,
    resume: Option<TrainState>,
    mut on_epoch: impl FnMut(&EpochLog, &Network<f32>, &TrainState) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate(&net)?;
    if images.is_empty() {
        return Err(Error::InvalidConfig("no training images".into()));
    }
    let channels = net.descriptor().input_channels;
    for img in images {
        if img.channels() != channels {
            return Err(Error::ShapeMismatch(format!(
                "network expects {channels} channels, training image has {}",
                img.channels()
            )));
        }
        if img.height() < cfg.crop || img.width() < cfg.crop {
            return Err(Error::CropTooLarge {
                size: cfg.crop,
                height: img.height(),
                width: img.width(),
            });
        }
    }
    let mut state = resume.unwrap_or_else(|| TrainState::fresh(&net));
    net.zero_grad();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..images.len()).collect();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let mut rng = substream(cfg.seed, 2 * epoch as u64);
        let mut sampler_rng = substream(cfg.seed, 2 * epoch as u64 + 1);
        let (lr, gamma) = (lr_at(cfg, epoch), gamma_at(cfg, epoch));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut rec_sum, mut reg_sum) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut crops = Vec::with_capacity(batch.len());
            let mut samplers = Vec::with_capacity(batch.len());
            for &i in batch {
                let clean = random_crop(&images[i], cfg.crop, &mut rng)?;
                crops.push(apply_noise(&clean, &cfg.noise, &mut rng)?);
                samplers.push(SubSampler::generate(
                    cfg.sampler_kind,
                    cfg.crop,
                    cfg.crop,
                    cfg.k,
                    &mut sampler_rng,
                )?);
            }
            let noisy = Tensor4::from_images(&crops)?;
            let loss = train_step(&mut net, &mut state.adam, &noisy, &samplers, gamma, lr)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            rec_sum += loss.rec * batch.len() as f64;
            reg_sum += loss.reg * batch.len() as f64;
        }
        let psnr_val = if validation.is_empty() {
            None
        } else {
            Some(validation_psnr(&net, validation)?)
        };
        let entry = EpochLog {
            epoch,
            lr,
            gamma,
            loss_rec: rec_sum / images.len() as f64,
            loss_reg: reg_sum / images.len() as f64,
            psnr_val,
        };
        state.epoch += 1;
        on_epoch(&entry, &net, &state)?;
        log.push(entry);
    }
    Ok(TrainOutcome { net, log, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use crate::textures::scenes;
    use rand::Rng;

    fn random_tensor<T: Scalar>(shape: [usize; 4], seed: u64) -> Tensor4<T> {
        let mut rng = seeded_rng(seed);
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(rng.random_range(-1.0..1.0))).collect();
        Tensor4::new(shape[0], shape[1], shape[2], shape[3], data).unwrap()
    }

    #[test]
    fn loss_rec_closed_forms() {
        let a = random_tensor::<f64>([2, 1, 4, 4], 1);
        assert_eq!(loss_rec(&a, &a).unwrap(), 0.0);
        let shifted = a.map(|v| v + 0.25);
        assert!((loss_rec(&shifted, &a).unwrap() - 0.0625).abs() < 1e-12);
        let b = random_tensor::<f64>([2, 1, 4, 4], 2);
        assert_eq!(loss_rec(&a, &b).unwrap(), loss_rec(&b, &a).unwrap());
        let c = random_tensor::<f64>([2, 1, 4, 2], 2);
        assert!(loss_rec(&a, &c).is_err());
    }

    #[test]
    fn loss_reg_collapses() {
        let out = random_tensor::<f64>([1, 3, 4, 4], 3);
        let target = random_tensor::<f64>([1, 3, 4, 4], 4);
        let d = random_tensor::<f64>([1, 3, 4, 4], 5);
        assert_eq!(loss_reg(&out, &target, &out, &target).unwrap(), 0.0);
        let rec = loss_rec(&out, &target).unwrap();
        assert!((loss_reg(&out, &target, &d, &d).unwrap() - rec).abs() < 1e-12);
    }

    #[test]
    fn identity_network_has_zero_regularizer() {
        let net = Network::<f32>::identity(1).unwrap();
        let mut rng = seeded_rng(6);
        let y = random_tensor::<f32>([2, 1, 16, 16], 7);
        let samplers: Vec<_> = (0..2).map(|_| SubSampler::neighbor(16, 16, 2, &mut rng).unwrap()).collect();
        let fy = net.infer(&y).unwrap();
        let input = gather_batch(&samplers, &y, Half::First).unwrap();
        let target = gather_batch(&samplers, &y, Half::Second).unwrap();
        let out = net.infer(&input).unwrap();
        let d1 = gather_batch(&samplers, &fy, Half::First).unwrap();
        let d2 = gather_batch(&samplers, &fy, Half::Second).unwrap();
        assert!(loss_reg(&out, &target, &d1, &d2).unwrap() < 1e-12);
        assert!(loss_rec(&out, &target).unwrap() > 0.01);
    }

    #[test]
    fn gamma_zero_total_is_reconstruction_bit_exactly() {
        let out = random_tensor::<f32>([2, 1, 8, 8], 8);
        let target = random_tensor::<f32>([2, 1, 8, 8], 9);
        let d1 = random_tensor::<f32>([2, 1, 8, 8], 10);
        let d2 = random_tensor::<f32>([2, 1, 8, 8], 11);
        let obj = objective(&out, &target, &d1, &d2, 0.0).unwrap();
        assert_eq!(obj.total.to_bits(), obj.rec.to_bits());
        assert!(obj.reg > 0.0);
    }

    /// Analytic parameter gradients of `rec + gamma * reg` against central
    /// differences of the same loss with the regularizer targets frozen.
    #[test]
    fn regularizer_targets_carry_no_gradient() {
        let d = ArchDescriptor {
            input_channels: 1,
            depth: 1,
            base_width: 4,
            tail_1x1: 2,
        };
        let mut net = Network::<f64>::build(d, &mut seeded_rng(12)).unwrap();
        let y = random_tensor::<f64>([1, 1, 8, 8], 13).map(|v| 0.5 + 0.3 * v);
        let g = vec![SubSampler::neighbor(8, 8, 2, &mut seeded_rng(14)).unwrap()];
        let fy = net.infer(&y).unwrap();
        let gather = |t: &Tensor4<f64>, half| gather_batch(&g, t, half).unwrap();
        let (input, target) = (gather(&y, Half::First), gather(&y, Half::Second));
        let (d1, d2) = (gather(&fy, Half::First), gather(&fy, Half::Second));
        let gamma = 2.0;
        let loss = |n: &Network<f64>| {
            let out = n.infer(&input).unwrap();
            objective(&out, &target, &d1, &d2, gamma).unwrap().total
        };
        let out = net.forward(&input).unwrap();
        let obj = objective(&out, &target, &d1, &d2, gamma).unwrap();
        net.backward(&obj.grad).unwrap();
        let analytic = net.grads().to_vec();
        let h = 1e-6;
        let mut rng = seeded_rng(15);
        let mut max_err: f64 = 0.0;
        for _ in 0..40 {
            let i = rng.random_range(0..net.parameter_count());
            let base = net.params()[i];
            net.params_mut()[i] = base + h;
            let up = loss(&net);
            net.params_mut()[i] = base - h;
            let down = loss(&net);
            net.params_mut()[i] = base;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-8);
            max_err = max_err.max(err);
        }
        assert!(max_err < 1e-4, "max relative error {max_err}");
    }

    #[test]
    fn schedules() {
        let cfg = TrainConfig {
            gamma: 2.0,
            gamma_ramp_epochs: 10,
            ..TrainConfig::default()
        };
        assert_eq!(gamma_at(&cfg, 4), 1.0);
        assert_eq!(gamma_at(&cfg, 9), 2.0);
        assert_eq!(gamma_at(&cfg, 50), 2.0);
        let flat = TrainConfig {
            gamma_ramp_epochs: 0,
            ..cfg.clone()
        };
        assert!((0..30).all(|e| gamma_at(&flat, e) == 2.0));
        let gammas: Vec<f64> = (0..30).map(|e| gamma_at(&cfg, e)).collect();
        assert!(gammas.windows(2).all(|w| w[0] <= w[1]));

        assert_eq!(lr_at(&cfg, 0), 3e-4);
        assert_eq!(lr_at(&cfg, 19), 3e-4);
        assert_eq!(lr_at(&cfg, 20), 1.5e-4);
        assert_eq!(lr_at(&cfg, 40), 0.75e-4);
        let lrs: Vec<f64> = (0..100).map(|e| lr_at(&cfg, e)).collect();
        assert!(lrs.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut net = Network::<f32>::zeroed(ArchDescriptor::single_1x1(1)).unwrap();
        let mut st = AdamState::new(net.parameter_count());
        net.params_and_grads_mut().1.copy_from_slice(&[0.5, -2.0]);
        adam_step(&mut net, &mut st, 1e-3).unwrap();
        let g = [0.5f64, -2.0];
        for (p, g) in net.params().iter().zip(g) {
            let expected = -1e-3 * g / (g.abs() + ADAM_EPS);
            assert!((f64::from(*p) - expected).abs() < 1e-9);
        }
        assert!(net.grads().iter().all(|&g| g == 0.0));
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = Network::<f32>::build(ArchDescriptor::single_1x1(3), &mut seeded_rng(16)).unwrap();
        let before = net.params().to_vec();
        let mut st = AdamState::new(net.parameter_count());
        adam_step(&mut net, &mut st, 1e-3).unwrap();
        assert_eq!(net.params(), &before[..]);
        assert_eq!(st.t, 1);
    }

    fn tiny() -> (Vec<Image>, TrainConfig, Network<f32>) {
        let images = scenes(3, 24, 24, 1, &mut seeded_rng(17));
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            crop: 16,
            gamma_ramp_epochs: 2,
            lr: 1e-3,
            lr_decay_every: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let d = ArchDescriptor {
            input_channels: 1,
            depth: 1,
            base_width: 4,
            tail_1x1: 2,
        };
        (images, cfg, Network::build(d, &mut seeded_rng(18)).unwrap())
    }

    #[test]
    fn training_is_deterministic() {
        let (images, cfg, net) = tiny();
        let a = train(&images, &[], &cfg, net.clone(), None, |_, _, _| Ok(())).unwrap();
        let b = train(&images, &[], &cfg, net, None, |_, _, _| Ok(())).unwrap();
        assert_eq!(a.net.params(), b.net.params());
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 3);
        assert_eq!(a.state.adam.t, 6);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (images, cfg, net) = tiny();
        let full = train(&images, &[], &cfg, net.clone(), None, |_, _, _| Ok(())).unwrap();
        let first = TrainConfig { epochs: 1, ..cfg.clone() };
        let part = train(&images, &[], &first, net, None, |_, _, _| Ok(())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (ckpt, state) = (dir.path().join("m.ckpt"), dir.path().join("m.state"));
        crate::network::save_checkpoint(&part.net, &ckpt).unwrap();
        save_state(&part.state, &state).unwrap();
        let net = crate::network::load_checkpoint(&ckpt).unwrap();
        let st = load_state(&state).unwrap();
        assert_eq!(st, part.state);
        let rest = train(&images, &[], &cfg, net, Some(st), |_, _, _| Ok(())).unwrap();
        assert_eq!(rest.net.params(), full.net.params());
        assert_eq!(rest.log[..], full.log[1..]);
    }

    #[test]
    fn validation_and_errors() {
        let (images, cfg, net) = tiny();
        let too_big = TrainConfig { crop: 32, ..cfg.clone() };
        assert!(matches!(
            train(&images, &[], &too_big, net.clone(), None, |_, _, _| Ok(())),
            Err(Error::CropTooLarge { .. })
        ));
        let odd = TrainConfig { crop: 10, ..cfg.clone() };
        assert!(matches!(odd.validate(&net), Err(Error::InvalidConfig(_))));
        assert!(train(&[], &[], &cfg, net.clone(), None, |_, _, _| Ok(())).is_err());
        let val = vec![ValidationPair {
            clean: images[0].clone(),
            noisy: images[0].clone(),
        }];
        let out = train(&images, &val, &cfg, net, None, |_, _, _| Ok(())).unwrap();
        assert!(out.log.iter().all(|l| l.psnr_val.is_some()));
        assert!(out.log[0].to_string().split('\t').count() == 6);
    }

    #[test]
    fn denoise_pads_and_crops_back() {
        let net = Network::<f32>::build(ArchDescriptor::desk(1), &mut seeded_rng(19)).unwrap();
        let img = crate::textures::scene(65, 65, 1, &mut seeded_rng(20));
        let out = denoise_image(&net, &img).unwrap();
        assert_eq!((out.height(), out.width()), (65, 65));
        assert_eq!(out, denoise_image(&net, &img).unwrap());
        let id = Network::<f32>::identity(1).unwrap();
        assert_eq!(denoise_image(&id, &img).unwrap(), img);
    }
}
