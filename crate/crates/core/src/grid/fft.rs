use std::cell::RefCell;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use super::{ComplexImage, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: Direction) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        match direction {
            Direction::Forward => p.plan_fft_forward(len),
            Direction::Inverse => p.plan_fft_inverse(len),
        }
    })
}

/// Centered, orthonormal 2D DFT.
///
/// The zero frequency sits at index `(height / 2, width / 2)` and both
/// directions are scaled by `1 / sqrt(height * width)`, so the transform is
/// unitary. Centering is an index permutation (`fftshift` / `ifftshift`)
/// around an ordinary DFT. Every positive size is supported; powers of two
/// take the fastest path.
pub fn dft_centered(img: &ComplexImage, direction: Direction) -> ComplexImage {
    let (h, w) = img.shape();
    let src = img.data();

    // ifftshift while copying: buf[r][c] = x[(r + h/2) % h][(c + w/2) % w]
    let mut buf = vec![C64::default(); h * w];
    for r in 0..h {
        let sr = (r + h / 2) % h;
        let row = &src[sr * w..(sr + 1) * w];
        let dst = &mut buf[r * w..(r + 1) * w];
        let split = w - w / 2;
        // dst[c] = row[(c + w/2) % w]
        dst[..split].copy_from_slice(&row[w / 2..]);
        dst[split..].copy_from_slice(&row[..w / 2]);
    }

    let row_fft = plan(w, direction);
    let mut scratch = vec![C64::default(); row_fft.get_inplace_scratch_len()];
    row_fft.process_with_scratch(&mut buf, &mut scratch);

    let mut cols = vec![C64::default(); h * w];
    for r in 0..h {
        for c in 0..w {
            cols[c * h + r] = buf[r * w + c];
        }
    }
    let col_fft = plan(h, direction);
    scratch.resize(col_fft.get_inplace_scratch_len(), C64::default());
    col_fft.process_with_scratch(&mut cols, &mut scratch);

    // fftshift while transposing back: out[r][c] = spec[(r - h/2) mod h][(c - w/2) mod w]
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![C64::default(); h * w];
    for r in 0..h {
        let sr = (r + h - h / 2) % h;
        for c in 0..w {
            let sc = (c + w - w / 2) % w;
            out[r * w + c] = cols[sc * h + sr] * scale;
        }
    }
    ComplexImage::from_vec(h, w, out).expect("shape preserved")
}

/// Moves index 0 to the center (`n / 2`) along both axes.
pub fn fft_shift(img: &ComplexImage) -> ComplexImage {
    let (h, w) = img.shape();
    ComplexImage::from_fn(h, w, |r, c| {
        img.get((r + h - h / 2) % h, (c + w - w / 2) % w)
    })
}

/// Inverse of [`fft_shift`].
pub fn ifft_shift(img: &ComplexImage) -> ComplexImage {
    let (h, w) = img.shape();
    ComplexImage::from_fn(h, w, |r, c| img.get((r + h / 2) % h, (c + w / 2) % w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{gaussian_noise_complex, Rng};

    /// Textbook O(n^2) centered DFT, used as an independent reference.
    fn naive_centered(img: &ComplexImage, sign: f64) -> ComplexImage {
        let (h, w) = img.shape();
        let x = ifft_shift(img);
        let mut out = ComplexImage::zeros(h, w);
        for u in 0..h {
            for v in 0..w {
                let mut acc = C64::default();
                for r in 0..h {
                    for c in 0..w {
                        let phase = sign
                            * 2.0
                            * std::f64::consts::PI
                            * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
                        acc += x.get(r, c) * C64::from_polar(1.0, phase);
                    }
                }
                out.set(u, v, acc / ((h * w) as f64).sqrt());
            }
        }
        fft_shift(&out)
    }

    #[test]
    fn shifts_are_inverse_for_odd_and_even_sizes() {
        let mut rng = Rng::new(3, 0);
        for &(h, w) in &[(4, 6), (5, 7), (1, 3)] {
            let x = gaussian_noise_complex(&mut rng, h, w);
            assert_eq!(ifft_shift(&fft_shift(&x)), x);
            assert_eq!(fft_shift(&ifft_shift(&x)), x);
        }
    }

    #[test]
    fn centered_impulse_has_flat_spectrum() {
        let mut x = ComplexImage::zeros(8, 8);
        x.set(4, 4, C64::new(1.0, 0.0));
        let k = dft_centered(&x, Direction::Forward);
        for z in k.data() {
            assert!((z - C64::new(0.125, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn matches_naive_transform_on_odd_and_even_sizes() {
        let mut rng = Rng::new(11, 2);
        for &(h, w) in &[(8, 8), (6, 10), (5, 7), (9, 4)] {
            let x = gaussian_noise_complex(&mut rng, h, w);
            let fast = dft_centered(&x, Direction::Forward);
            let slow = naive_centered(&x, -1.0);
            assert!(fast.sub(&slow).norm() < 1e-12 * x.norm(), "{h}x{w}");
            let fast_inv = dft_centered(&x, Direction::Inverse);
            let slow_inv = naive_centered(&x, 1.0);
            assert!(fast_inv.sub(&slow_inv).norm() < 1e-12 * x.norm(), "{h}x{w}");
        }
    }

    #[test]
    fn inverse_undoes_forward_on_128() {
        let mut rng = Rng::new(1, 0);
        let x = gaussian_noise_complex(&mut rng, 128, 128);
        let back = dft_centered(&dft_centered(&x, Direction::Forward), Direction::Inverse);
        assert!(back.sub(&x).norm() <= 1e-6 * x.norm());
    }

    #[test]
    fn parseval_and_unitarity() {
        let mut rng = Rng::new(5, 9);
        let x = gaussian_noise_complex(&mut rng, 32, 64);
        let y = gaussian_noise_complex(&mut rng, 32, 64);
        let fx = dft_centered(&x, Direction::Forward);
        let fy = dft_centered(&y, Direction::Forward);
        assert!((fx.norm() - x.norm()).abs() <= 1e-6 * x.norm());
        assert!((fx.dot(&fy) - x.dot(&y)).norm() <= 1e-6 * x.norm() * y.norm());
    }
}
