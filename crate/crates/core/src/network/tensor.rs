use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::{Error, Image, Result};

/// Element type of network parameters and activations.
///
/// Training runs in `f32`; gradient checks instantiate the same network in
/// `f64`.
pub trait Scalar:
    Copy
    + Default
    + Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;

    /// `c = alpha * a * b + beta * c` on strided row/column views.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );
}

/// Largest index touched by an `rows x cols` view with the given strides.
fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                (rsa, csa): (usize, usize),
                b: &[Self],
                (rsb, csb): (usize, usize),
                beta: Self,
                c: &mut [Self],
                (rsc, csc): (usize, usize),
            ) {
                assert!(extent(m, k, rsa, csa) <= a.len(), "gemm: lhs out of bounds");
                assert!(extent(k, n, rsb, csb) <= b.len(), "gemm: rhs out of bounds");
                assert!(extent(m, n, rsc, csc) <= c.len(), "gemm: output out of bounds");
                // SAFETY: every index the kernel touches lies inside the
                // checked extents above, and `c` does not alias `a` or `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dense `batch x channels x height x width` tensor, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T = f32> {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != batch * channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "tensor {batch}x{channels}x{height}x{width} needs {} values, got {}",
                batch * channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
            data: vec![T::ZERO; batch * channels * height * width],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elements of one batch item.
    pub fn item_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn item(&self, b: usize) -> &[T] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.item_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    /// Stacks equally shaped images into a batch.
    pub fn from_images(images: &[Image]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::ShapeMismatch("empty image batch".into()))?;
        let mut data = Vec::with_capacity(images.len() * first.data().len());
        for img in images {
            if !img.same_shape(first) {
                return Err(Error::ShapeMismatch("images in a batch differ in shape".into()));
            }
            data.extend(img.to_planes().into_iter().map(|v| T::from_f64(f64::from(v))));
        }
        Self::new(images.len(), first.channels(), first.height(), first.width(), data)
    }

    pub fn to_image(&self, b: usize) -> Result<Image> {
        let planes: Vec<f32> = self.item(b).iter().map(|v| v.to_f64() as f32).collect();
        Image::from_planes(self.height, self.width, self.channels, &planes)
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor4<U> {
        Tensor4 {
            batch: self.batch,
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        self.map(|v| U::from_f64(v.to_f64()))
    }
}
