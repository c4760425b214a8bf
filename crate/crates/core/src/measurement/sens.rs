use crate::error::{Error, Result};
use crate::grid::{ComplexImage, Rng, C64};

/// Coil sensitivity maps with the support they are defined on.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityMaps {
    maps: Vec<ComplexImage>,
    support: Vec<bool>,
}

impl SensitivityMaps {
    pub fn new(maps: Vec<ComplexImage>, support: Vec<bool>) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::param("coils", "need at least one coil"))?;
        let shape = first.shape();
        for m in &maps {
            m.ensure_shape(shape)?;
        }
        if support.len() != shape.0 * shape.1 {
            return Err(Error::ShapeMismatch {
                expected: format!("{} support entries", shape.0 * shape.1),
                got: format!("{}", support.len()),
            });
        }
        Ok(Self { maps, support })
    }

    /// Support inferred as the pixels where any coil is nonzero.
    pub fn from_maps(maps: Vec<ComplexImage>) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::param("coils", "need at least one coil"))?;
        let n = first.len();
        let support = (0..n)
            .map(|i| maps.iter().any(|m| m.data().get(i).is_some_and(|z| z.norm_sqr() > 0.0)))
            .collect();
        Self::new(maps, support)
    }

    pub fn coils(&self) -> usize {
        self.maps.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.maps[0].shape()
    }

    pub fn maps(&self) -> &[ComplexImage] {
        &self.maps
    }

    pub fn map(&self, coil: usize) -> &ComplexImage {
        &self.maps[coil]
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    /// Largest deviation of `sum_k |S_k|^2` from 1 on the support, and of
    /// `|S_k|` from 0 off it.
    pub fn normalization_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, &inside) in self.support.iter().enumerate() {
            let energy: f64 = self.maps.iter().map(|m| m.data()[i].norm_sqr()).sum();
            let err = if inside { (energy - 1.0).abs() } else { energy.sqrt() };
            worst = worst.max(err);
        }
        worst
    }
}

/// Rescales every pixel so that `sum_k |S_k(p)|^2 = 1` on the support and
/// zeroes the maps outside it. Coil phases are preserved.
pub fn normalize_sensitivities(maps: &SensitivityMaps) -> Result<SensitivityMaps> {
    let (_, w) = maps.shape();
    let mut out: Vec<ComplexImage> = maps.maps.clone();
    for (i, &inside) in maps.support.iter().enumerate() {
        if !inside {
            for m in &mut out {
                m.data_mut()[i] = C64::default();
            }
            continue;
        }
        let energy: f64 = maps.maps.iter().map(|m| m.data()[i].norm_sqr()).sum();
        if !(energy > 0.0) {
            return Err(Error::DegeneratePixel {
                row: i / w,
                col: i % w,
            });
        }
        let inv = 1.0 / energy.sqrt();
        for m in &mut out {
            m.data_mut()[i] *= inv;
        }
    }
    SensitivityMaps::new(out, maps.support.clone())
}

/// Pixels with nonzero magnitude, dilated by a disc of `radius` pixels.
pub fn support_from_image(img: &ComplexImage, radius: usize) -> Vec<bool> {
    let (h, w) = img.shape();
    let r = radius as isize;
    let mut out = vec![false; h * w];
    for row in 0..h {
        for col in 0..w {
            if img.get(row, col).norm_sqr() == 0.0 {
                continue;
            }
            for dr in -r..=r {
                for dc in -r..=r {
                    if dr * dr + dc * dc > r * r {
                        continue;
                    }
                    let (nr, nc) = (row as isize + dr, col as isize + dc);
                    if nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w {
                        out[nr as usize * w + nc as usize] = true;
                    }
                }
            }
        }
    }
    out
}

/// Synthetic smooth coil maps: Gaussian magnitude bumps centered at
/// equispaced angles around the field of view with small random linear phase
/// ramps, normalized on `support` (whole grid when `None`). A single coil is
/// the identity map.
pub fn simulate_sensitivities(
    coils: usize,
    height: usize,
    width: usize,
    support: Option<&[bool]>,
    rng: &mut Rng,
) -> Result<SensitivityMaps> {
    if coils == 0 {
        return Err(Error::param("coils", "need at least one coil"));
    }
    if height == 0 || width == 0 {
        return Err(Error::UnsupportedSize(height.min(width)));
    }
    let support = match support {
        Some(s) => s.to_vec(),
        None => vec![true; height * width],
    };
    let maps = if coils == 1 {
        vec![ComplexImage::filled(height, width, C64::new(1.0, 0.0))]
    } else {
        let (ch, cw) = (height as f64 / 2.0, width as f64 / 2.0);
        let spread = 0.4 * height.max(width) as f64;
        (0..coils)
            .map(|k| {
                let angle = 2.0 * std::f64::consts::PI * (k as f64 + 0.1 * (rng.uniform() - 0.5))
                    / coils as f64;
                let (cr, cc) = (ch + 0.45 * height as f64 * angle.sin(), cw + 0.45 * width as f64 * angle.cos());
                let slope_r = (rng.uniform() - 0.5) * 2.0;
                let slope_c = (rng.uniform() - 0.5) * 2.0;
                let offset = (rng.uniform() - 0.5) * std::f64::consts::PI;
                ComplexImage::from_fn(height, width, |r, c| {
                    let (dr, dc) = (r as f64 - cr, c as f64 - cc);
                    let mag = (-(dr * dr + dc * dc) / (2.0 * spread * spread)).exp();
                    let phase = offset
                        + slope_r * (r as f64 - ch) / height as f64
                        + slope_c * (c as f64 - cw) / width as f64;
                    C64::from_polar(mag, phase)
                })
            })
            .collect()
    };
    normalize_sensitivities(&SensitivityMaps::new(maps, support)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_coil_normalizes_to_ones() {
        let maps = SensitivityMaps::new(
            vec![ComplexImage::filled(8, 8, C64::new(0.7, 0.0))],
            vec![true; 64],
        )
        .unwrap();
        let n = normalize_sensitivities(&maps).unwrap();
        for z in n.map(0).data() {
            assert!((z - C64::new(1.0, 0.0)).norm() < 1e-15);
        }
        let sim = simulate_sensitivities(1, 16, 16, None, &mut Rng::new(0, 0)).unwrap();
        assert!(sim.map(0).data().iter().all(|z| *z == C64::new(1.0, 0.0)));
    }

    #[test]
    fn normalization_preserves_phase() {
        let mut rng = Rng::new(2, 0);
        let raw: Vec<ComplexImage> = (0..4)
            .map(|_| ComplexImage::from_fn(16, 16, |_, _| C64::new(rng.normal(), rng.normal())))
            .collect();
        let maps = SensitivityMaps::new(raw.clone(), vec![true; 256]).unwrap();
        let n = normalize_sensitivities(&maps).unwrap();
        assert!(n.normalization_error() < 1e-6);
        for (a, b) in raw.iter().zip(n.maps()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x.arg() - y.arg()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_pixel_is_reported() {
        let mut raw = vec![ComplexImage::filled(4, 4, C64::new(1.0, 0.0)); 3];
        for m in &mut raw {
            m.set(2, 1, C64::default());
        }
        let maps = SensitivityMaps::new(raw.clone(), vec![true; 16]).unwrap();
        assert!(matches!(
            normalize_sensitivities(&maps),
            Err(Error::DegeneratePixel { row: 2, col: 1 })
        ));
        // outside the support the zero pixel is fine
        let mut support = vec![true; 16];
        support[2 * 4 + 1] = false;
        assert!(normalize_sensitivities(&SensitivityMaps::new(raw, support).unwrap()).is_ok());
    }

    #[test]
    fn simulated_maps_satisfy_invariants_and_are_deterministic() {
        let mut support = vec![true; 128 * 128];
        for v in support.iter_mut().take(500) {
            *v = false;
        }
        let a = simulate_sensitivities(8, 128, 128, Some(&support), &mut Rng::new(4, 0)).unwrap();
        assert_eq!(a.coils(), 8);
        assert!(a.normalization_error() < 1e-6);
        for m in a.maps() {
            assert!(m.data()[..500].iter().all(|z| *z == C64::default()));
        }
        let b = simulate_sensitivities(8, 128, 128, Some(&support), &mut Rng::new(4, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn support_dilation() {
        let mut img = ComplexImage::zeros(9, 9);
        img.set(4, 4, C64::new(1.0, 0.0));
        let s = support_from_image(&img, 2);
        assert_eq!(s.iter().filter(|&&v| v).count(), 13);
        assert!(s[2 * 9 + 4] && !s[2 * 9 + 3]);
    }
}
