//! The forward model `A = P_Omega F S`, its adjoint, data consistency, masks,
//! coil maps and phantoms.

mod mask;
mod phantom;
mod sens;

pub use mask::{make_mask, MaskKind, SamplingMask};
pub use phantom::{
    jittered_shepp_logan, random_phantom, render_ellipses, shepp_logan, Ellipse, PhaseKind,
    SHEPP_LOGAN,
};
pub use sens::{normalize_sensitivities, simulate_sensitivities, support_from_image, SensitivityMaps};

use crate::error::{Error, Result};
use crate::grid::{dft_centered, gaussian_noise_complex, ComplexImage, Direction, Rng, C64};

/// Per-coil k-space, zero-filled outside the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiCoilKspace {
    data: Vec<ComplexImage>,
    mask: SamplingMask,
}

impl MultiCoilKspace {
    pub fn new(data: Vec<ComplexImage>, mask: SamplingMask) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::param("coils", "need at least one coil"));
        }
        for k in &data {
            k.ensure_shape(mask.shape())?;
            let leaks = k
                .data()
                .iter()
                .zip(mask.keep())
                .any(|(z, &keep)| !keep && *z != C64::default());
            if leaks {
                return Err(Error::Config("k-space is nonzero outside its mask".into()));
            }
        }
        Ok(Self { data, mask })
    }

    pub fn coils(&self) -> usize {
        self.data.len()
    }

    pub fn coil(&self, k: usize) -> &ComplexImage {
        &self.data[k]
    }

    pub fn data(&self) -> &[ComplexImage] {
        &self.data
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.shape()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|k| k.norm_sqr()).sum::<f64>().sqrt()
    }

    /// The single-coil measurement for coil `k` (operator `P_Omega F`).
    pub fn single(&self, k: usize) -> MultiCoilKspace {
        MultiCoilKspace {
            data: vec![self.data[k].clone()],
            mask: self.mask.clone(),
        }
    }
}

fn check_maps(
    shape: (usize, usize),
    coils: usize,
    maps: Option<&SensitivityMaps>,
) -> Result<()> {
    match maps {
        Some(m) => {
            if m.shape() != shape {
                return Err(Error::shape(shape, m.shape()));
            }
            if m.coils() != coils {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} coils", m.coils()),
                    got: format!("{coils} coils"),
                });
            }
        }
        None if coils != 1 => {
            return Err(Error::Config(format!(
                "{coils}-coil data needs sensitivity maps"
            )))
        }
        None => {}
    }
    Ok(())
}

/// `P F (S_k x)` for one coil.
fn forward_coil(x: &ComplexImage, mask: &SamplingMask, map: Option<&ComplexImage>) -> ComplexImage {
    let weighted = match map {
        Some(s) => s.mul(x),
        None => x.clone(),
    };
    mask.apply(&dft_centered(&weighted, Direction::Forward))
}

/// `A x`; single coil (`P F`) when `maps` is `None`.
pub fn forward(
    x: &ComplexImage,
    mask: &SamplingMask,
    maps: Option<&SensitivityMaps>,
) -> Result<MultiCoilKspace> {
    x.ensure_shape(mask.shape())?;
    let data = match maps {
        Some(m) => {
            check_maps(mask.shape(), m.coils(), maps)?;
            m.maps()
                .iter()
                .map(|s| forward_coil(x, mask, Some(s)))
                .collect()
        }
        None => vec![forward_coil(x, mask, None)],
    };
    Ok(MultiCoilKspace {
        data,
        mask: mask.clone(),
    })
}

/// `A* y = sum_k conj(S_k) F^-1 (P y_k)`.
pub fn adjoint(y: &MultiCoilKspace, maps: Option<&SensitivityMaps>) -> Result<ComplexImage> {
    check_maps(y.shape(), y.coils(), maps)?;
    let (h, w) = y.shape();
    let mut out = ComplexImage::zeros(h, w);
    for (k, yk) in y.data.iter().enumerate() {
        let img = dft_centered(&y.mask.apply(yk), Direction::Inverse);
        let contrib = match maps {
            Some(m) => m.map(k).conj_mul(&img),
            None => img,
        };
        out.axpy(1.0, &contrib);
    }
    Ok(out)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::param("lambda", format!("{lambda} outside [0, 1]")));
    }
    Ok(())
}

/// Single-coil data consistency `x + lambda F^-1 P (y - F x)`, computed in
/// k-space so that `lambda = 1` writes `y` into the sampled entries exactly.
pub fn dc_single_coil(
    x: &ComplexImage,
    y: &ComplexImage,
    mask: &SamplingMask,
    lambda: f64,
) -> ComplexImage {
    let mut k = dft_centered(x, Direction::Forward);
    for ((kv, &yv), &keep) in k.data_mut().iter_mut().zip(y.data()).zip(mask.keep()) {
        if keep {
            *kv = if lambda == 1.0 { yv } else { *kv + (yv - *kv) * lambda };
        }
    }
    dft_centered(&k, Direction::Inverse)
}

/// `x + lambda A*(y - A x)` for `lambda` in `[0, 1]`.
pub fn data_consistency(
    x: &ComplexImage,
    y: &MultiCoilKspace,
    maps: Option<&SensitivityMaps>,
    lambda: f64,
) -> Result<ComplexImage> {
    check_lambda(lambda)?;
    x.ensure_shape(y.shape())?;
    check_maps(y.shape(), y.coils(), maps)?;
    if lambda == 0.0 {
        return Ok(x.clone());
    }
    match maps {
        None => Ok(dc_single_coil(x, &y.data[0], &y.mask, lambda)),
        Some(m) => {
            let (h, w) = y.shape();
            let mut correction = ComplexImage::zeros(h, w);
            for (k, yk) in y.data.iter().enumerate() {
                let residual = yk.sub(&forward_coil(x, &y.mask, Some(m.map(k))));
                let back = dft_centered(&residual, Direction::Inverse);
                correction.axpy(1.0, &m.map(k).conj_mul(&back));
            }
            let mut out = x.clone();
            out.axpy(lambda, &correction);
            Ok(out)
        }
    }
}

/// `||A x - y|| / ||y||` (absolute norm when `y` is zero).
pub fn kspace_residual(
    x: &ComplexImage,
    y: &MultiCoilKspace,
    maps: Option<&SensitivityMaps>,
) -> Result<f64> {
    let ax = forward(x, &y.mask, maps)?;
    let num: f64 = ax
        .data
        .iter()
        .zip(&y.data)
        .map(|(a, b)| a.sub(b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let den = y.norm();
    Ok(if den > 0.0 { num / den } else { num })
}

const POWER_MIN_ITERS: usize = 50;
const POWER_MAX_ITERS: usize = 2000;
const POWER_TOL: f64 = 1e-8;

/// Power-iteration estimate of the spectral norm `||I - lambda A*A||`.
///
/// Runs at least 50 iterations and stops once successive estimates agree to
/// `1e-8`. The starting vector comes from a fixed internal seed.
pub fn nonexpansive_bound(
    mask: &SamplingMask,
    maps: Option<&SensitivityMaps>,
    lambda: f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    let coils = maps.map_or(1, |m| m.coils());
    check_maps(mask.shape(), coils, maps)?;
    let (h, w) = mask.shape();
    let zero_y = MultiCoilKspace {
        data: vec![ComplexImage::zeros(h, w); coils],
        mask: mask.clone(),
    };
    let mut v = gaussian_noise_complex(&mut Rng::new(0x5eed, 0), h, w);
    v.scale(1.0 / v.norm());
    let mut estimate = 0.0;
    for it in 0..POWER_MAX_ITERS {
        // (I - lambda A*A) v = v + lambda A*(0 - A v)
        let bv = data_consistency(&v, &zero_y, maps, lambda)?;
        let next = bv.norm() / v.norm();
        let done = it + 1 >= POWER_MIN_ITERS && (next - estimate).abs() <= POWER_TOL;
        estimate = next;
        if done || next == 0.0 {
            break;
        }
        v = bv;
        v.scale(1.0 / next);
    }
    Ok(estimate)
}
