//! Per-item kernels. Buffers are planar `channels x height x width`.

use super::tensor::Scalar;

pub const LEAKY_SLOPE: f64 = 0.1;

/// Unfolds a zero-padded 3x3 neighbourhood: `col[(ci*9 + ky*3 + kx) * hw + p]`.
pub fn im2col3<T: Scalar>(x: &[T], channels: usize, h: usize, w: usize, col: &mut Vec<T>) {
    let hw = h * w;
    col.clear();
    col.resize(channels * 9 * hw, T::ZERO);
    for ci in 0..channels {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y + ky;
                    if sy < 1 || sy > h {
                        continue;
                    }
                    let src = &plane[(sy - 1) * w..sy * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: accumulates `col` back into `dx`.
pub fn col2im3<T: Scalar>(col: &[T], channels: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..channels {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y + ky;
                    if sy < 1 || sy > h {
                        continue;
                    }
                    let dst = &mut plane[(sy - 1) * w..sy * w];
                    let src = &row[y * w..(y + 1) * w];
                    let (d, s) = match kx {
                        0 => (&mut dst[..w - 1], &src[1..]),
                        1 => (&mut dst[..], src),
                        _ => (&mut dst[1..], &src[..w - 1]),
                    };
                    for (a, &b) in d.iter_mut().zip(s) {
                        *a += b;
                    }
                }
            }
        }
    }
}

/// Convolution of one item: `out = W * unfold(x) + b`. Weights are
/// `[out][in][ky][kx]`; `kernel` is 1 or 3 (zero padding 1).
#[allow(clippy::too_many_arguments)]
pub fn conv_forward<T: Scalar>(
    x: &[T],
    in_ch: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
    out_ch: usize,
    kernel: usize,
    out: &mut [T],
    col: &mut Vec<T>,
) {
    let hw = h * w;
    let kk = in_ch * kernel * kernel;
    for (o, row) in out.chunks_exact_mut(hw).enumerate() {
        row.fill(bias[o]);
    }
    let unfolded: &[T] = if kernel == 1 {
        x
    } else {
        im2col3(x, in_ch, h, w, col);
        col
    };
    T::gemm(out_ch, kk, hw, T::ONE, weight, (kk, 1), unfolded, (hw, 1), T::ONE, out, (hw, 1));
}

/// Backward of [`conv_forward`] for one item. Accumulates into `dweight`,
/// `dbias` and `dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    x: &[T],
    in_ch: usize,
    h: usize,
    w: usize,
    weight: &[T],
    out_ch: usize,
    kernel: usize,
    dy: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    dx: &mut [T],
    col: &mut Vec<T>,
    dcol: &mut Vec<T>,
) {
    let hw = h * w;
    let kk = in_ch * kernel * kernel;
    for (db, row) in dbias.iter_mut().zip(dy.chunks_exact(hw)) {
        let s: f64 = row.iter().map(|v| v.to_f64()).sum();
        *db += T::from_f64(s);
    }
    if kernel == 1 {
        T::gemm(out_ch, hw, kk, T::ONE, dy, (hw, 1), x, (1, hw), T::ONE, dweight, (kk, 1));
        T::gemm(kk, out_ch, hw, T::ONE, weight, (1, kk), dy, (hw, 1), T::ONE, dx, (hw, 1));
    } else {
        im2col3(x, in_ch, h, w, col);
        T::gemm(out_ch, hw, kk, T::ONE, dy, (hw, 1), col, (1, hw), T::ONE, dweight, (kk, 1));
        dcol.clear();
        dcol.resize(kk * hw, T::ZERO);
        T::gemm(kk, out_ch, hw, T::ONE, weight, (1, kk), dy, (hw, 1), T::ZERO, dcol, (hw, 1));
        col2im3(dcol, in_ch, h, w, dx);
    }
}

#[inline]
pub fn leaky<T: Scalar>(v: T) -> T {
    if v > T::ZERO {
        v
    } else {
        v * T::from_f64(LEAKY_SLOPE)
    }
}

/// Derivative of [`leaky`] at `v`; the slope 0.1 branch is taken at zero.
#[inline]
pub fn leaky_grad<T: Scalar>(v: T) -> T {
    if v > T::ZERO {
        T::ONE
    } else {
        T::from_f64(LEAKY_SLOPE)
    }
}

/// 2x2 max-pool with stride 2. `argmax` holds the winning offset `dy*2+dx`
/// (first maximum in scan order).
pub fn maxpool_forward<T: Scalar>(x: &[T], channels: usize, h: usize, w: usize, out: &mut [T], argmax: &mut [u8]) {
    let (oh, ow) = (h / 2, w / 2);
    for c in 0..channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let base = 2 * y * w + 2 * xo;
                let cands = [plane[base], plane[base + 1], plane[base + w], plane[base + w + 1]];
                let mut best = 0;
                for i in 1..4 {
                    if cands[i] > cands[best] {
                        best = i;
                    }
                }
                let o = c * oh * ow + y * ow + xo;
                out[o] = cands[best];
                argmax[o] = best as u8;
            }
        }
    }
}

pub fn maxpool_backward<T: Scalar>(dy: &[T], argmax: &[u8], channels: usize, h: usize, w: usize, dx: &mut [T]) {
    let (oh, ow) = (h / 2, w / 2);
    for c in 0..channels {
        for y in 0..oh {
            for xo in 0..ow {
                let o = c * oh * ow + y * ow + xo;
                let a = argmax[o] as usize;
                dx[c * h * w + (2 * y + a / 2) * w + 2 * xo + a % 2] += dy[o];
            }
        }
    }
}

/// Nearest-neighbour 2x upsampling from `h x w` to `2h x 2w`.
pub fn upsample_forward<T: Scalar>(x: &[T], channels: usize, h: usize, w: usize, out: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    for c in 0..channels {
        for y in 0..oh {
            let src = &x[c * h * w + (y / 2) * w..][..w];
            let dst = &mut out[c * oh * ow + y * ow..][..ow];
            for (xo, d) in dst.iter_mut().enumerate() {
                *d = src[xo / 2];
            }
        }
    }
}

pub fn upsample_backward<T: Scalar>(dy: &[T], channels: usize, h: usize, w: usize, dx: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    for c in 0..channels {
        for y in 0..oh {
            let src = &dy[c * oh * ow + y * ow..][..ow];
            let dst = &mut dx[c * h * w + (y / 2) * w..][..w];
            for (xo, &g) in src.iter().enumerate() {
                dst[xo / 2] += g;
            }
        }
    }
}
