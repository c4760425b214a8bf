use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexImage, RealImage, Rng, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseKind {
    None,
    Smooth,
}

impl std::str::FromStr for PhaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PhaseKind::None),
            "smooth" => Ok(PhaseKind::Smooth),
            other => Err(Error::param("phase", format!("unknown phase `{other}`"))),
        }
    }
}

/// Ellipse `(intensity, semi-axis x, semi-axis y, center x, center y, angle in degrees)`
/// on the `[-1, 1]^2` field of view.
#[derive(Clone, Copy, Debug)]
pub struct Ellipse {
    pub intensity: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    pub theta_deg: f64,
}

const fn e(intensity: f64, a: f64, b: f64, x0: f64, y0: f64, theta_deg: f64) -> Ellipse {
    Ellipse {
        intensity,
        a,
        b,
        x0,
        y0,
        theta_deg,
    }
}

/// Modified (high-contrast) Shepp-Logan table.
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    e(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    e(-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    e(-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    e(-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    e(0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    e(0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    e(0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    e(0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    e(0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    e(0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

fn coords(h: usize, w: usize, r: usize, c: usize) -> (f64, f64) {
    let x = (c as f64 - (w as f64 - 1.0) / 2.0) / (w as f64 / 2.0);
    let y = -(r as f64 - (h as f64 - 1.0) / 2.0) / (h as f64 / 2.0);
    (x, y)
}

/// Sum of ellipse indicators, clamped to `[0, 1]`.
pub fn render_ellipses(height: usize, width: usize, ellipses: &[Ellipse]) -> RealImage {
    RealImage::from_fn(height, width, |r, c| {
        let (x, y) = coords(height, width, r, c);
        let mut v = 0.0;
        for el in ellipses {
            let (s, co) = el.theta_deg.to_radians().sin_cos();
            let (dx, dy) = (x - el.x0, y - el.y0);
            let xr = dx * co + dy * s;
            let yr = -dx * s + dy * co;
            if (xr / el.a).powi(2) + (yr / el.b).powi(2) <= 1.0 {
                v += el.intensity;
            }
        }
        v.clamp(0.0, 1.0)
    })
}

/// Low-order polynomial phase in radians.
fn smooth_phase(x: f64, y: f64) -> f64 {
    0.4 * x - 0.3 * y + 0.2 * x * y + 0.15 * (x * x - y * y)
}

pub fn shepp_logan(height: usize, width: usize, phase: PhaseKind) -> Result<ComplexImage> {
    if height < 32 || width < 32 {
        return Err(Error::UnsupportedSize(height.min(width)));
    }
    let mag = render_ellipses(height, width, &SHEPP_LOGAN);
    Ok(ComplexImage::from_fn(height, width, |r, c| {
        let m = mag.get(r, c);
        match phase {
            PhaseKind::None => C64::new(m, 0.0),
            PhaseKind::Smooth => {
                let (x, y) = coords(height, width, r, c);
                C64::from_polar(m, smooth_phase(x, y))
            }
        }
    }))
}

/// A random head-like ellipse phantom: bright skull ring, darker brain and a
/// handful of random interior ellipses. Training data for the learned score.
pub fn random_phantom(height: usize, width: usize, rng: &mut Rng) -> RealImage {
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.uniform();
    let (a, b) = (u(0.6, 0.75), u(0.75, 0.95));
    let (x0, y0, th) = (u(-0.05, 0.05), u(-0.05, 0.05), u(-10.0, 10.0));
    let mut ellipses = vec![
        e(1.0, a, b, x0, y0, th),
        e(-u(0.6, 0.9), 0.95 * a, 0.95 * b, x0, y0, th),
    ];
    let count = 3 + (u(0.0, 9.0) as usize);
    for _ in 0..count {
        ellipses.push(e(
            u(-0.3, 0.4),
            u(0.02, 0.3),
            u(0.02, 0.3),
            u(-0.45, 0.45),
            u(-0.6, 0.6),
            u(0.0, 180.0),
        ));
    }
    render_ellipses(height, width, &ellipses)
}

/// The Shepp-Logan table with every ellipse jittered by a relative amount
/// `jitter`.
pub fn jittered_shepp_logan(height: usize, width: usize, jitter: f64, rng: &mut Rng) -> RealImage {
    let ellipses: Vec<Ellipse> = SHEPP_LOGAN
        .iter()
        .map(|el| {
            let intensity = if el.intensity.abs() < 0.5 {
                el.intensity * (1.0 + jitter * rng.normal())
            } else {
                el.intensity
            };
            e(
                intensity,
                el.a * (1.0 + jitter * rng.normal()),
                el.b * (1.0 + jitter * rng.normal()),
                el.x0 + 0.2 * jitter * rng.normal(),
                el.y0 + 0.2 * jitter * rng.normal(),
                el.theta_deg + 100.0 * jitter * rng.normal(),
            )
        })
        .collect();
    render_ellipses(height, width, &ellipses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_phantom_has_no_imaginary_part() {
        let p = shepp_logan(64, 64, PhaseKind::None).unwrap();
        assert!(p.data().iter().all(|z| z.im == 0.0));
    }

    #[test]
    fn smooth_phase_keeps_magnitude() {
        let a = shepp_logan(64, 48, PhaseKind::None).unwrap();
        let b = shepp_logan(64, 48, PhaseKind::Smooth).unwrap();
        assert!(a.magnitude().sub(&b.magnitude()).data().iter().all(|d| d.abs() < 1e-6));
        assert!(b.data().iter().any(|z| z.im.abs() > 1e-3));
    }

    #[test]
    fn intensity_range_at_128() {
        let p = shepp_logan(128, 128, PhaseKind::None).unwrap().re();
        assert!((0.9..=1.0).contains(&p.max()));
        assert_eq!(p.get(0, 0), 0.0);
        assert_eq!(p.get(127, 127), 0.0);
        assert_eq!(p.get(64, 0), 0.0);
        assert!(p.min() >= 0.0);
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(shepp_logan(16, 64, PhaseKind::None).is_err());
    }

    #[test]
    fn random_phantoms_in_range() {
        let mut rng = Rng::new(1, 0);
        for _ in 0..5 {
            let p = random_phantom(64, 64, &mut rng);
            assert!(p.min() >= 0.0 && p.max() <= 1.0 && p.max() > 0.5);
        }
    }
}
