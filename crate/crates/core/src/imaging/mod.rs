//! Image container, file I/O and crops.
//!
//! Pixels are stored as `f32` in row-major `height x width x channels`
//! order (channels interleaved). Displayable images live in `[0, 1]`;
//! noisy intermediates are allowed to leave that range and are only
//! clamped when written to an 8-bit file.

mod io;

pub use io::{
    load_float_image, load_image, load_image_any, quantize, save_float_image, save_image, FLOAT_EXTENSION,
};

use rand::Rng;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::ShapeMismatch(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Builds an image from planar (`channels x height x width`) data.
    pub fn from_planes(height: usize, width: usize, channels: usize, planes: &[f32]) -> Result<Self> {
        if planes.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "planar buffer of {} values for {height}x{width}x{channels}",
                planes.len()
            )));
        }
        let plane = height * width;
        Self::from_fn(height, width, channels, |r, c, ch| planes[ch * plane + r * width + c])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Copies the data out in planar `channels x height x width` order.
    pub fn to_planes(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.data.len()];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * plane + i] = v;
            }
        }
        out
    }

    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Values clamped to `[0, 1]`.
    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Extracts the `height x width` window whose top-left corner is `(top, left)`.
    pub fn window(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "window {height}x{width} at ({top},{left}) outside {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for r in top..top + height {
            let start = (r * self.width + left) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Image::new(height, width, self.channels, data)
    }

    /// Pads by mirror reflection (edge pixel not repeated) on the bottom and
    /// right. Padding wider than the image keeps folding back and forth; a
    /// single row or column is repeated.
    pub fn reflect_pad(&self, height: usize, width: usize) -> Result<Image> {
        if height < self.height || width < self.width {
            return Err(Error::ShapeMismatch("reflect_pad cannot shrink".into()));
        }
        let reflect = |i: usize, n: usize| {
            if n == 1 {
                return 0;
            }
            let m = i % (2 * (n - 1));
            if m < n { m } else { 2 * (n - 1) - m }
        };
        Image::from_fn(height, width, self.channels, |r, c, ch| {
            self.get(reflect(r, self.height), reflect(c, self.width), ch)
        })
    }
}

/// Draws a `size x size` crop at an offset uniform over all valid positions.
pub fn random_crop<R: Rng + ?Sized>(img: &Image, size: usize, rng: &mut R) -> Result<Image> {
    let (top, left) = random_crop_offset(img.height, img.width, size, rng)?;
    img.window(top, left, size, size)
}

/// The offset [`random_crop`] would use, drawn from the same stream.
pub fn random_crop_offset<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    size: usize,
    rng: &mut R,
) -> Result<(usize, usize)> {
    if size == 0 || size > height || size > width {
        return Err(Error::CropTooLarge {
            size,
            height,
            width,
        });
    }
    let top = rng.random_range(0..=height - size);
    let left = rng.random_range(0..=width - size);
    Ok((top, left))
}
