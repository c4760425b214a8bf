//! Image containers, the centered orthonormal DFT and seeded noise streams.

mod fft;
mod rng;

pub use fft::{dft_centered, fft_shift, ifft_shift, Direction};
pub use rng::{gaussian_noise, gaussian_noise_complex, Rng};

pub use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// A dense `height x width` grid of complex samples stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<C64>,
}

/// A dense `height x width` grid of real samples stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RealImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 {
        return Err(Error::UnsupportedSize(height));
    }
    if width == 0 {
        return Err(Error::UnsupportedSize(width));
    }
    Ok(())
}

macro_rules! image_common {
    ($ty:ident, $elem:ty) => {
        impl $ty {
            pub fn zeros(height: usize, width: usize) -> Self {
                Self::filled(height, width, <$elem>::default())
            }

            pub fn filled(height: usize, width: usize, value: $elem) -> Self {
                assert!(height > 0 && width > 0, "image dimensions must be positive");
                Self {
                    height,
                    width,
                    data: vec![value; height * width],
                }
            }

            pub fn from_vec(height: usize, width: usize, data: Vec<$elem>) -> Result<Self> {
                check_dims(height, width)?;
                if data.len() != height * width {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{} samples", height * width),
                        got: format!("{} samples", data.len()),
                    });
                }
                Ok(Self {
                    height,
                    width,
                    data,
                })
            }

            pub fn from_fn(
                height: usize,
                width: usize,
                mut f: impl FnMut(usize, usize) -> $elem,
            ) -> Self {
                assert!(height > 0 && width > 0, "image dimensions must be positive");
                let mut data = Vec::with_capacity(height * width);
                for r in 0..height {
                    for c in 0..width {
                        data.push(f(r, c));
                    }
                }
                Self {
                    height,
                    width,
                    data,
                }
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn shape(&self) -> (usize, usize) {
                (self.height, self.width)
            }

            pub fn len(&self) -> usize {
                self.data.len()
            }

            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            pub fn data(&self) -> &[$elem] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [$elem] {
                &mut self.data
            }

            pub fn into_vec(self) -> Vec<$elem> {
                self.data
            }

            pub fn get(&self, row: usize, col: usize) -> $elem {
                self.data[row * self.width + col]
            }

            pub fn set(&mut self, row: usize, col: usize, value: $elem) {
                self.data[row * self.width + col] = value;
            }

            pub fn ensure_shape(&self, shape: (usize, usize)) -> Result<()> {
                if self.shape() != shape {
                    return Err(Error::shape(shape, self.shape()));
                }
                Ok(())
            }

            /// `self += alpha * other`
            pub fn axpy(&mut self, alpha: f64, other: &Self) {
                debug_assert_eq!(self.shape(), other.shape());
                for (a, b) in self.data.iter_mut().zip(&other.data) {
                    *a += *b * alpha;
                }
            }

            pub fn scale(&mut self, alpha: f64) {
                for a in &mut self.data {
                    *a *= alpha;
                }
            }

            pub fn transpose(&self) -> Self {
                Self::from_fn(self.width, self.height, |r, c| self.get(c, r))
            }
        }
    };
}

image_common!(ComplexImage, C64);
image_common!(RealImage, f64);

impl ComplexImage {
    pub fn from_real(re: &RealImage) -> Self {
        Self::from_parts(re, None)
    }

    pub fn from_parts(re: &RealImage, im: Option<&RealImage>) -> Self {
        let data = match im {
            Some(im) => {
                assert_eq!(re.shape(), im.shape());
                re.data
                    .iter()
                    .zip(&im.data)
                    .map(|(&a, &b)| C64::new(a, b))
                    .collect()
            }
            None => re.data.iter().map(|&a| C64::new(a, 0.0)).collect(),
        };
        Self {
            height: re.height,
            width: re.width,
            data,
        }
    }

    pub fn re(&self) -> RealImage {
        self.map_real(|z| z.re)
    }

    pub fn im(&self) -> RealImage {
        self.map_real(|z| z.im)
    }

    pub fn magnitude(&self) -> RealImage {
        self.map_real(|z| z.norm())
    }

    fn map_real(&self, f: impl Fn(C64) -> f64) -> RealImage {
        RealImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Inner product `<self, other> = sum conj(self) * other`.
    pub fn dot(&self, other: &Self) -> C64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// Pixelwise product.
    pub fn mul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    /// Pixelwise `conj(self) * other`.
    pub fn conj_mul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a.conj() * b)
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl RealImage {
    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(RealImage::from_vec(2, 3, vec![0.0; 5]).is_err());
        assert!(ComplexImage::from_vec(0, 3, vec![]).is_err());
        assert!(RealImage::from_vec(2, 3, vec![0.0; 6]).is_ok());
    }

    #[test]
    fn parts_roundtrip() {
        let re = RealImage::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        let im = re.map(|v| -v);
        let z = ComplexImage::from_parts(&re, Some(&im));
        assert_eq!(z.re(), re);
        assert_eq!(z.im(), im);
        assert_eq!(z.get(1, 2), C64::new(6.0, -6.0));
    }

    #[test]
    fn dot_is_conjugate_linear_in_first_argument() {
        let a = ComplexImage::filled(2, 2, C64::new(0.0, 1.0));
        let b = ComplexImage::filled(2, 2, C64::new(1.0, 0.0));
        assert_eq!(a.dot(&b), C64::new(0.0, -4.0));
        assert_eq!(a.dot(&a), C64::new(4.0, 0.0));
    }
}
