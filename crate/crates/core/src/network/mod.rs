//! Differentiable convolutional denoiser.
//!
//! The architecture is a U-Net with `depth` down/up levels followed by a
//! tail of 1x1 convolutions:
//!
//! ```text
//! encoder level:  conv3x3 -> lrelu -> conv3x3 -> lrelu -> (skip) -> maxpool2
//! bottleneck:     conv3x3 -> lrelu                       (depth > 0 only)
//! decoder level:  upsample2 -> concat(skip) -> conv3x3 -> lrelu -> conv3x3 -> lrelu
//! head:           tail_1x1 == 0: conv3x3 -> input_channels (linear)
//!                 otherwise:     (conv1x1 -> lrelu) x (tail_1x1 - 1), conv1x1 -> input_channels
//! ```
//!
//! Every level uses `base_width` channels. Leaky-ReLU slope is 0.1 and
//! 3x3 convolutions are zero-padded, so the output has the input's shape.
//!
//! Parameters live in one flat vector, ordered by layer in construction
//! order (encoder, bottleneck, decoder, head); each layer stores its weights
//! as `[out][in][ky][kx]` followed by `out` biases.

mod checkpoint;
mod ops;
mod tensor;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use ops::LEAKY_SLOPE;
pub use tensor::{Scalar, Tensor4};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArchDescriptor {
    pub input_channels: usize,
    pub depth: usize,
    pub base_width: usize,
    pub tail_1x1: usize,
}

impl ArchDescriptor {
    /// Desk-scale default: depth 2, 24 channels, three 1x1 tail layers.
    pub fn desk(input_channels: usize) -> Self {
        Self {
            input_channels,
            depth: 2,
            base_width: 24,
            tail_1x1: 3,
        }
    }

    /// A single 1x1 convolution, `input_channels -> input_channels`.
    pub fn single_1x1(input_channels: usize) -> Self {
        Self {
            input_channels,
            depth: 0,
            base_width: input_channels,
            tail_1x1: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::InvalidArchitecture("input_channels must be positive".into()));
        }
        if self.base_width == 0 && (self.depth > 0 || self.tail_1x1 > 1) {
            return Err(Error::InvalidArchitecture("base_width must be positive".into()));
        }
        if self.depth > 8 {
            return Err(Error::InvalidArchitecture(format!("depth {} is too large", self.depth)));
        }
        Ok(())
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn parameter_count(&self) -> usize {
        build_graph(self).1.iter().map(ConvLayer::parameter_count).sum()
    }
}

impl fmt::Display for ArchDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "unet in={} depth={} width={} tail={}",
            self.input_channels, self.depth, self.base_width, self.tail_1x1
        )
    }
}

impl FromStr for ArchDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArchitecture(format!("cannot parse descriptor {s:?}"));
        let mut fields = s.split_whitespace();
        if fields.next() != Some("unet") {
            return Err(bad());
        }
        let mut values = [0usize; 4];
        for (slot, key) in values.iter_mut().zip(["in", "depth", "width", "tail"]) {
            let (k, v) = fields.next().and_then(|f| f.split_once('=')).ok_or_else(bad)?;
            if k != key {
                return Err(bad());
            }
            *slot = v.parse().map_err(|_| bad())?;
        }
        if fields.next().is_some() {
            return Err(bad());
        }
        let d = ArchDescriptor {
            input_channels: values[0],
            depth: values[1],
            base_width: values[2],
            tail_1x1: values[3],
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    offset: usize,
}

impl ConvLayer {
    fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel
    }

    fn parameter_count(&self) -> usize {
        self.weight_len() + self.out_ch
    }

    fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Node {
    Input,
    Conv { layer: usize, src: usize },
    LeakyRelu { src: usize },
    MaxPool { src: usize },
    Upsample { src: usize },
    Concat { first: usize, second: usize },
}

impl Node {
    fn sources(&self) -> [Option<usize>; 2] {
        match *self {
            Node::Input => [None, None],
            Node::Conv { src, .. } | Node::LeakyRelu { src } | Node::MaxPool { src } | Node::Upsample { src } => {
                [Some(src), None]
            }
            Node::Concat { first, second } => [Some(first), Some(second)],
        }
    }
}

struct GraphBuilder {
    nodes: Vec<Node>,
    layers: Vec<ConvLayer>,
    params: usize,
}

impl GraphBuilder {
    fn push(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    fn conv(&mut self, src: usize, in_ch: usize, out_ch: usize, kernel: usize) -> usize {
        let layer = ConvLayer {
            in_ch,
            out_ch,
            kernel,
            offset: self.params,
        };
        self.params += layer.parameter_count();
        self.layers.push(layer);
        let layer = self.layers.len() - 1;
        self.push(Node::Conv { layer, src })
    }

    fn conv_act(&mut self, src: usize, in_ch: usize, out_ch: usize, kernel: usize) -> usize {
        let c = self.conv(src, in_ch, out_ch, kernel);
        self.push(Node::LeakyRelu { src: c })
    }
}

fn build_graph(d: &ArchDescriptor) -> (Vec<Node>, Vec<ConvLayer>) {
    let mut g = GraphBuilder {
        nodes: vec![Node::Input],
        layers: Vec::new(),
        params: 0,
    };
    let w = d.base_width;
    let mut x = 0;
    let mut ch = d.input_channels;
    let mut skips = Vec::with_capacity(d.depth);
    for _ in 0..d.depth {
        x = g.conv_act(x, ch, w, 3);
        x = g.conv_act(x, w, w, 3);
        skips.push(x);
        x = g.push(Node::MaxPool { src: x });
        ch = w;
    }
    if d.depth > 0 {
        x = g.conv_act(x, w, w, 3);
    }
    for &skip in skips.iter().rev() {
        let up = g.push(Node::Upsample { src: x });
        x = g.push(Node::Concat { first: up, second: skip });
        x = g.conv_act(x, 2 * w, w, 3);
        x = g.conv_act(x, w, w, 3);
    }
    if d.tail_1x1 == 0 {
        g.conv(x, ch, d.input_channels, 3);
    } else {
        for _ in 1..d.tail_1x1 {
            x = g.conv_act(x, ch, w, 1);
            ch = w;
        }
        g.conv(x, ch, d.input_channels, 1);
    }
    (g.nodes, g.layers)
}

struct Tape<T> {
    values: Vec<Tensor4<T>>,
    argmax: Vec<Vec<u8>>,
}

/// The denoiser `f_theta`: architecture, flat parameters and their gradients.
///
/// A network records at most one forward pass at a time; [`Network::forward`]
/// followed by [`Network::backward`] accumulates into the gradient buffer.
/// [`Network::infer`] evaluates without recording.
pub struct Network<T: Scalar = f32> {
    descriptor: ArchDescriptor,
    nodes: Vec<Node>,
    layers: Vec<ConvLayer>,
    params: Vec<T>,
    grads: Vec<T>,
    tape: Option<Tape<T>>,
}

impl<T: Scalar> Clone for Network<T> {
    fn clone(&self) -> Self {
        Self {
            descriptor: self.descriptor,
            nodes: self.nodes.clone(),
            layers: self.layers.clone(),
            params: self.params.clone(),
            grads: self.grads.clone(),
            tape: None,
        }
    }
}

impl<T: Scalar> fmt::Debug for Network<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Network")
            .field("descriptor", &self.descriptor)
            .field("parameters", &self.params.len())
            .finish()
    }
}

impl<T: Scalar> Network<T> {
    /// Builds the network with He-style uniform weights (bound
    /// `sqrt(6 / ((1 + 0.1^2) fan_in))`) and zero biases.
    pub fn build<R: Rng + ?Sized>(descriptor: ArchDescriptor, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeroed(descriptor)?;
        for layer in &net.layers {
            let bound = (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * layer.fan_in() as f64)).sqrt();
            for p in &mut net.params[layer.offset..layer.offset + layer.weight_len()] {
                *p = T::from_f64(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    /// All parameters zero.
    pub fn zeroed(descriptor: ArchDescriptor) -> Result<Self> {
        descriptor.validate()?;
        let (nodes, layers) = build_graph(&descriptor);
        let count = layers.iter().map(ConvLayer::parameter_count).sum();
        Ok(Self {
            descriptor,
            nodes,
            layers,
            params: vec![T::ZERO; count],
            grads: vec![T::ZERO; count],
            tape: None,
        })
    }

    /// Builds a network with explicit parameters in the documented order.
    pub fn with_params(descriptor: ArchDescriptor, params: Vec<T>) -> Result<Self> {
        let mut net = Self::zeroed(descriptor)?;
        net.set_params(params)?;
        Ok(net)
    }

    /// The network computing `f(y) = y`: a single 1x1 convolution with
    /// identity weights.
    pub fn identity(channels: usize) -> Result<Self> {
        let d = ArchDescriptor::single_1x1(channels);
        let mut params = vec![T::ZERO; channels * channels + channels];
        for c in 0..channels {
            params[c * channels + c] = T::ONE;
        }
        Self::with_params(d, params)
    }

    pub fn descriptor(&self) -> &ArchDescriptor {
        &self.descriptor
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<T>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters given, {} expected for {}",
                params.len(),
                self.params.len(),
                self.descriptor
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn grads(&self) -> &[T] {
        &self.grads
    }

    /// Parameters and gradients, borrowed together for optimizer updates.
    pub fn params_and_grads_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.params, &mut self.grads)
    }

    pub fn zero_grad(&mut self) {
        self.grads.fill(T::ZERO);
    }

    /// Copy of this network in another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            descriptor: self.descriptor,
            nodes: self.nodes.clone(),
            layers: self.layers.clone(),
            params: self.params.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            grads: self.grads.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            tape: None,
        }
    }

    pub fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let m = self.descriptor.size_multiple();
        if x.channels != self.descriptor.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} channels, input has {}",
                self.descriptor.input_channels, x.channels
            )));
        }
        if x.height == 0 || x.width == 0 || x.height % m != 0 || x.width % m != 0 || x.batch == 0 {
            return Err(Error::ShapeMismatch(format!(
                "input {}x{} must be a positive multiple of {m}",
                x.height, x.width
            )));
        }
        Ok(())
    }

    /// Forward pass that records activations for [`Network::backward`].
    pub fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let tape = self.evaluate(x, true);
        let out = tape.values.last().expect("graph has an output").clone();
        self.tape = Some(tape);
        Ok(out)
    }

    /// Forward pass without recording; does not disturb a pending tape.
    pub fn infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let mut tape = self.evaluate(x, false);
        Ok(tape.values.pop().expect("graph has an output"))
    }

    fn evaluate(&self, x: &Tensor4<T>, record: bool) -> Tape<T> {
        let n = self.nodes.len();
        // last node reading each value, so inference can release buffers early
        let mut last_use = vec![0usize; n];
        for (i, node) in self.nodes.iter().enumerate() {
            for s in node.sources().into_iter().flatten() {
                last_use[s] = i;
            }
        }
        let mut values: Vec<Tensor4<T>> = Vec::with_capacity(n);
        let mut argmax: Vec<Vec<u8>> = vec![Vec::new(); n];
        let mut col = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let value = match *node {
                Node::Input => x.clone(),
                Node::Conv { layer, src } => {
                    let l = &self.layers[layer];
                    let input = &values[src];
                    let mut out = Tensor4::zeros(input.batch, l.out_ch, input.height, input.width);
                    let (weight, bias) = self.params[l.offset..l.offset + l.parameter_count()].split_at(l.weight_len());
                    for b in 0..input.batch {
                        ops::conv_forward(
                            input.item(b),
                            l.in_ch,
                            input.height,
                            input.width,
                            weight,
                            bias,
                            l.out_ch,
                            l.kernel,
                            out.item_mut(b),
                            &mut col,
                        );
                    }
                    out
                }
                Node::LeakyRelu { src } => values[src].map(ops::leaky),
                Node::MaxPool { src } => {
                    let input = &values[src];
                    let mut out = Tensor4::zeros(input.batch, input.channels, input.height / 2, input.width / 2);
                    let mut idx = vec![0u8; out.len()];
                    let per = out.item_len();
                    for b in 0..input.batch {
                        ops::maxpool_forward(
                            input.item(b),
                            input.channels,
                            input.height,
                            input.width,
                            out.item_mut(b),
                            &mut idx[b * per..(b + 1) * per],
                        );
                    }
                    if record {
                        argmax[i] = idx;
                    }
                    out
                }
                Node::Upsample { src } => {
                    let input = &values[src];
                    let mut out = Tensor4::zeros(input.batch, input.channels, input.height * 2, input.width * 2);
                    for b in 0..input.batch {
                        ops::upsample_forward(input.item(b), input.channels, input.height, input.width, out.item_mut(b));
                    }
                    out
                }
                Node::Concat { first, second } => {
                    let (a, c) = (&values[first], &values[second]);
                    let mut out = Tensor4::zeros(a.batch, a.channels + c.channels, a.height, a.width);
                    for b in 0..a.batch {
                        let dst = out.item_mut(b);
                        let (lo, hi) = dst.split_at_mut(a.item_len());
                        lo.copy_from_slice(a.item(b));
                        hi.copy_from_slice(c.item(b));
                    }
                    out
                }
            };
            values.push(value);
            if !record {
                for s in node.sources().into_iter().flatten() {
                    if last_use[s] == i {
                        values[s] = Tensor4::zeros(0, 0, 0, 0);
                    }
                }
            }
        }
        Tape { values, argmax }
    }

    /// Branch taken at every non-smooth point of the pass: the sign of each
    /// leaky-ReLU input and the winner of each max-pool window. Two parameter
    /// settings with equal patterns lie on the same smooth piece.
    pub fn kink_pattern(&self, x: &Tensor4<T>) -> Result<Vec<u8>> {
        self.check_input(x)?;
        let tape = self.evaluate(x, true);
        let mut pattern = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                Node::LeakyRelu { src } => {
                    pattern.extend(tape.values[src].data.iter().map(|&v| u8::from(v > T::ZERO)));
                }
                Node::MaxPool { .. } => pattern.extend_from_slice(&tape.argmax[i]),
                _ => {}
            }
        }
        Ok(pattern)
    }

    /// Back-propagates `upstream = dL/d(output)` through the recorded pass,
    /// accumulating parameter gradients. Returns `dL/d(input)`.
    pub fn backward(&mut self, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
        let tape = self.tape.take().ok_or(Error::BackwardWithoutForward)?;
        let out_shape = tape.values.last().expect("graph has an output").shape();
        if upstream.shape() != out_shape {
            self.tape = Some(tape);
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient {:?} vs output {:?}",
                upstream.shape(),
                out_shape
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor4<T>>> = (0..n).map(|_| None).collect();
        grads[n - 1] = Some(upstream.clone());
        let (mut col, mut dcol) = (Vec::new(), Vec::new());

        fn accumulate<'a, T: Scalar>(slot: &'a mut Option<Tensor4<T>>, like: &Tensor4<T>) -> &'a mut Tensor4<T> {
            slot.get_or_insert_with(|| Tensor4::zeros(like.batch, like.channels, like.height, like.width))
        }

        for i in (1..n).rev() {
            let Some(dy) = grads[i].take() else { continue };
            match self.nodes[i] {
                Node::Input => unreachable!("input is node 0"),
                Node::Conv { layer, src } => {
                    let l = &self.layers[layer];
                    let x = &tape.values[src];
                    let (weight, _) = self.params[l.offset..l.offset + l.parameter_count()].split_at(l.weight_len());
                    let (dweight, dbias) =
                        self.grads[l.offset..l.offset + l.parameter_count()].split_at_mut(l.weight_len());
                    let dx = accumulate(&mut grads[src], x);
                    for b in 0..x.batch {
                        ops::conv_backward(
                            x.item(b),
                            l.in_ch,
                            x.height,
                            x.width,
                            weight,
                            l.out_ch,
                            l.kernel,
                            dy.item(b),
                            dweight,
                            dbias,
                            dx.item_mut(b),
                            &mut col,
                            &mut dcol,
                        );
                    }
                }
                Node::LeakyRelu { src } => {
                    let x = &tape.values[src];
                    let dx = accumulate(&mut grads[src], x);
                    for ((d, &g), &v) in dx.data.iter_mut().zip(&dy.data).zip(&x.data) {
                        *d += g * ops::leaky_grad(v);
                    }
                }
                Node::MaxPool { src } => {
                    let x = &tape.values[src];
                    let dx = accumulate(&mut grads[src], x);
                    let per = dy.item_len();
                    for b in 0..x.batch {
                        ops::maxpool_backward(
                            dy.item(b),
                            &tape.argmax[i][b * per..(b + 1) * per],
                            x.channels,
                            x.height,
                            x.width,
                            dx.item_mut(b),
                        );
                    }
                }
                Node::Upsample { src } => {
                    let x = &tape.values[src];
                    let dx = accumulate(&mut grads[src], x);
                    for b in 0..x.batch {
                        ops::upsample_backward(dy.item(b), x.channels, x.height, x.width, dx.item_mut(b));
                    }
                }
                Node::Concat { first, second } => {
                    for (src, offset) in [(first, 0), (second, tape.values[first].item_len())] {
                        let x = &tape.values[src];
                        let len = x.item_len();
                        let dx = accumulate(&mut grads[src], x);
                        for b in 0..x.batch {
                            for (d, &g) in dx.item_mut(b).iter_mut().zip(&dy.item(b)[offset..offset + len]) {
                                *d += g;
                            }
                        }
                    }
                }
            }
        }
        Ok(grads[0]
            .take()
            .unwrap_or_else(|| Tensor4::zeros(0, 0, 0, 0)))
    }
}

/// Result of comparing analytic gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Parameters compared.
    pub checked: usize,
    /// Parameters drawn but skipped because `theta +- h` straddles a kink.
    pub skipped_at_kinks: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// Index of the parameter with the largest relative error.
    pub worst_parameter: usize,
    pub passed: bool,
}

/// Denominator floor for the relative error, so parameters whose true
/// gradient is zero compare by absolute error.
pub const GRADCHECK_FLOOR: f64 = 1e-8;

/// Checks `dL/dtheta` for `L(theta) = ||f_theta(x)||^2 / 2` against
/// `(L(theta + h) - L(theta - h)) / 2h`, with losses summed in `f64`.
///
/// Parameters are visited in random order until `samples` of them have been
/// compared. A parameter is skipped when the leaky-ReLU signs or max-pool
/// winners differ between `theta + h` and `theta - h`: the central
/// difference then spans a kink and does not estimate the derivative.
/// `passed` requires `max_relative_error < tol` and `samples` comparisons
/// (or every parameter, for smaller networks).
pub fn gradient_check<T: Scalar, R: Rng + ?Sized>(
    net: &mut Network<T>,
    x: &Tensor4<T>,
    h: f64,
    tol: f64,
    samples: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let half_square = |t: &Tensor4<T>| t.data.iter().map(|v| 0.5 * v.to_f64() * v.to_f64()).sum::<f64>();

    net.zero_grad();
    let out = net.forward(x)?;
    net.backward(&out)?;
    let analytic: Vec<f64> = net.grads().iter().map(|g| g.to_f64()).collect();
    net.zero_grad();

    let count = net.parameter_count();
    let order = rand::seq::index::sample(rng, count, count).into_vec();

    let mut report = GradCheckReport {
        checked: 0,
        skipped_at_kinks: 0,
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        worst_parameter: 0,
        passed: false,
    };
    for i in order {
        if report.checked >= samples {
            break;
        }
        let original = net.params[i];
        net.params[i] = T::from_f64(original.to_f64() + h);
        let plus = half_square(&net.infer(x)?);
        let plus_pattern = net.kink_pattern(x)?;
        net.params[i] = T::from_f64(original.to_f64() - h);
        let minus = half_square(&net.infer(x)?);
        let minus_pattern = net.kink_pattern(x)?;
        net.params[i] = original;
        if plus_pattern != minus_pattern {
            report.skipped_at_kinks += 1;
            continue;
        }
        report.checked += 1;
        let numeric = (plus - minus) / (2.0 * h);
        let abs = (analytic[i] - numeric).abs();
        let rel = abs / analytic[i].abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
        report.max_absolute_error = report.max_absolute_error.max(abs);
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_parameter = i;
        }
    }
    let enough = report.checked >= samples.min(count - report.skipped_at_kinks.min(count));
    report.passed = enough && report.checked > 0 && report.max_relative_error < tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor4<f64> {
        let mut rng = seeded_rng(seed);
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                // keep away from exact zeros (leaky-ReLU kink)
                let v: f64 = rng.random_range(-1.0..1.0);
                if v.abs() < 1e-3 { 0.5 } else { v }
            })
            .collect();
        Tensor4::new(shape[0], shape[1], shape[2], shape[3], data).unwrap()
    }

    /// Per-layer arithmetic for `in=1, depth=1, width=8, tail=3`.
    #[test]
    fn parameter_count_depth1() {
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
        let expected = conv(1, 8, 3) + conv(8, 8, 3) // encoder
            + conv(8, 8, 3) // bottleneck
            + conv(16, 8, 3) + conv(8, 8, 3) // decoder
            + conv(8, 8, 1) + conv(8, 8, 1) + conv(8, 1, 1); // tail
        assert_eq!(expected, 3145);
        let d = ArchDescriptor { input_channels: 1, depth: 1, base_width: 8, tail_1x1: 3 };
        assert_eq!(d.parameter_count(), expected);
    }

    #[test]
    fn parameter_count_single_conv() {
        for c in [1, 3] {
            let d = ArchDescriptor { input_channels: c, depth: 0, base_width: c, tail_1x1: 0 };
            assert_eq!(d.parameter_count(), 9 * c * c + c);
        }
    }

    #[test]
    fn build_is_deterministic() {
        let d = ArchDescriptor::desk(3);
        let a = Network::<f32>::build(d, &mut seeded_rng(4)).unwrap();
        let b = Network::<f32>::build(d, &mut seeded_rng(4)).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.parameter_count(), d.parameter_count());
        let c = Network::<f32>::build(d, &mut seeded_rng(5)).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn descriptor_round_trips_through_text() {
        let d = ArchDescriptor::desk(3);
        assert_eq!(d.to_string(), "unet in=3 depth=2 width=24 tail=3");
        assert_eq!(d.to_string().parse::<ArchDescriptor>().unwrap(), d);
        assert!("unet in=3 depth=2".parse::<ArchDescriptor>().is_err());
        assert!("mlp in=3 depth=2 width=4 tail=1".parse::<ArchDescriptor>().is_err());
    }

    #[test]
    fn identity_network_is_identity() {
        let mut net = Network::<f64>::identity(3).unwrap();
        let x = random_tensor([2, 3, 5, 7], 1);
        assert_eq!(net.infer(&x).unwrap(), x);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn delta_through_single_conv() {
        let d = ArchDescriptor { input_channels: 1, depth: 0, base_width: 1, tail_1x1: 0 };
        let mut params = vec![1.0f64; 9];
        params.push(0.0);
        let net = Network::with_params(d, params).unwrap();
        let mut x = Tensor4::zeros(1, 1, 5, 5);
        x.data[12] = 1.0;
        let out = net.infer(&x).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                let expected = if (1..=3).contains(&r) && (1..=3).contains(&c) { 1.0 } else { 0.0 };
                assert_eq!(out.data[r * 5 + c], expected);
            }
        }
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let net = Network::<f32>::zeroed(ArchDescriptor::desk(1)).unwrap();
        let x = random_tensor([1, 1, 16, 16], 2).cast::<f32>();
        assert!(net.infer(&x).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_matches_input() {
        for depth in 0..=3 {
            for tail in 0..=3 {
                let d = ArchDescriptor { input_channels: 3, depth, base_width: 4, tail_1x1: tail };
                let net = Network::<f32>::build(d, &mut seeded_rng(0)).unwrap();
                let x = Tensor4::<f32>::zeros(2, 3, 16, 24);
                assert_eq!(net.infer(&x).unwrap().shape(), [2, 3, 16, 24]);
            }
        }
    }

    #[test]
    fn shape_violations_are_rejected() {
        let mut net = Network::<f32>::build(ArchDescriptor::desk(1), &mut seeded_rng(0)).unwrap();
        assert!(net.infer(&Tensor4::zeros(1, 1, 10, 16)).is_err());
        assert!(net.forward(&Tensor4::zeros(1, 3, 16, 16)).is_err());
    }

    #[test]
    fn backward_requires_forward() {
        let mut net = Network::<f64>::identity(1).unwrap();
        let g = Tensor4::zeros(1, 1, 2, 2);
        assert!(matches!(net.backward(&g), Err(Error::BackwardWithoutForward)));
        net.forward(&g).unwrap();
        net.backward(&g).unwrap();
        assert!(matches!(net.backward(&g), Err(Error::BackwardWithoutForward)));
    }

    #[test]
    fn sum_loss_on_identity_conv() {
        // L = sum(out): dL/dW[o][i] = sum of input channel i, dL/db[o] = pixel count
        let mut net = Network::<f64>::identity(2).unwrap();
        let x = random_tensor([1, 2, 3, 4], 3);
        let out = net.forward(&x).unwrap();
        let ones = out.map(|_| 1.0);
        let dx = net.backward(&ones).unwrap();
        let sums: Vec<f64> = (0..2).map(|c| x.data[c * 12..(c + 1) * 12].iter().sum()).collect();
        let g = net.grads();
        for o in 0..2 {
            for i in 0..2 {
                assert!((g[o * 2 + i] - sums[i]).abs() < 1e-12);
            }
            assert_eq!(g[4 + o], 12.0);
        }
        assert!(dx.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_upstream_adds_nothing() {
        let mut net = Network::<f64>::build(ArchDescriptor { input_channels: 1, depth: 1, base_width: 4, tail_1x1: 2 }, &mut seeded_rng(1)).unwrap();
        let x = random_tensor([1, 1, 8, 8], 4);
        let out = net.forward(&x).unwrap();
        net.backward(&out.map(|_| 0.0)).unwrap();
        assert!(net.grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn inference_is_bit_reproducible_and_leaves_tape() {
        let mut net = Network::<f32>::build(ArchDescriptor::desk(1), &mut seeded_rng(2)).unwrap();
        let x = random_tensor([2, 1, 16, 16], 5).cast::<f32>();
        let a = net.infer(&x).unwrap();
        let b = net.infer(&x).unwrap();
        assert_eq!(a, b);
        let f = net.forward(&x).unwrap();
        assert_eq!(f, a);
        net.infer(&random_tensor([1, 1, 8, 8], 6).cast::<f32>()).unwrap();
        assert!(net.backward(&f).is_ok());
    }

    #[test]
    fn gradcheck_linear_network() {
        let d = ArchDescriptor { input_channels: 2, depth: 0, base_width: 2, tail_1x1: 0 };
        let mut net = Network::<f64>::build(d, &mut seeded_rng(7)).unwrap();
        let x = random_tensor([2, 2, 6, 6], 8);
        let report = gradient_check(&mut net, &x, 1e-4, 1e-6, 1000, &mut seeded_rng(0)).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.max_relative_error < 1e-9, "{report:?}");
    }

    #[test]
    fn gradcheck_two_layer_leaky() {
        let d = ArchDescriptor { input_channels: 1, depth: 0, base_width: 6, tail_1x1: 2 };
        let mut net = Network::<f64>::build(d, &mut seeded_rng(9)).unwrap();
        let x = random_tensor([1, 1, 8, 8], 10);
        let report = gradient_check(&mut net, &x, 1e-4, 1e-3, 200, &mut seeded_rng(1)).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn gradcheck_unet_with_pooling_and_skips() {
        let d = ArchDescriptor { input_channels: 2, depth: 2, base_width: 4, tail_1x1: 3 };
        let mut net = Network::<f64>::build(d, &mut seeded_rng(11)).unwrap();
        let x = random_tensor([2, 2, 8, 8], 12);
        let report = gradient_check(&mut net, &x, 1e-4, 1e-3, 300, &mut seeded_rng(2)).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn gradcheck_zero_input_gives_zero_gradients() {
        // linear net: the loss is even in every parameter at zero input
        let d = ArchDescriptor { input_channels: 1, depth: 0, base_width: 1, tail_1x1: 0 };
        let mut net = Network::<f64>::build(d, &mut seeded_rng(3)).unwrap();
        let x = Tensor4::zeros(1, 1, 8, 8);
        let report = gradient_check(&mut net, &x, 1e-4, 1e-3, 200, &mut seeded_rng(3)).unwrap();
        assert_eq!(report.max_absolute_error, 0.0);

        let d = ArchDescriptor { input_channels: 1, depth: 1, base_width: 4, tail_1x1: 3 };
        let mut net = Network::<f64>::build(d, &mut seeded_rng(3)).unwrap();
        let out = net.forward(&x).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
        net.backward(&out).unwrap();
        assert!(net.grads().iter().all(|&g| g == 0.0));
    }
}
