use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexImage, Rng, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Uniform1d,
    Gaussian1d,
    Gaussian2d,
    PoissonVd,
    Full,
}

impl MaskKind {
    pub const ALL: [MaskKind; 5] = [
        MaskKind::Uniform1d,
        MaskKind::Gaussian1d,
        MaskKind::Gaussian2d,
        MaskKind::PoissonVd,
        MaskKind::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskKind::Uniform1d => "uniform1d",
            MaskKind::Gaussian1d => "gaussian1d",
            MaskKind::Gaussian2d => "gaussian2d",
            MaskKind::PoissonVd => "poisson_vd",
            MaskKind::Full => "full",
        }
    }

    /// Column masks: constant along the readout (height) axis.
    pub fn is_1d(self) -> bool {
        matches!(self, MaskKind::Uniform1d | MaskKind::Gaussian1d)
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::param("kind", format!("unknown mask kind `{s}`")))
    }
}

/// Binary k-space selector `P_Omega`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    keep: Vec<bool>,
    kind: MaskKind,
    requested_accel: f64,
    acs_fraction: f64,
}

impl SamplingMask {
    /// Wraps an existing keep pattern, checking the shape and that the ACS
    /// region implied by `kind` and `acs_fraction` is fully kept.
    pub fn from_keep(
        height: usize,
        width: usize,
        keep: Vec<bool>,
        kind: MaskKind,
        requested_accel: f64,
        acs_fraction: f64,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::UnsupportedSize(height.min(width)));
        }
        if !(0.0..=1.0).contains(&acs_fraction) {
            return Err(Error::param("acs_fraction", format!("{acs_fraction} outside [0, 1]")));
        }
        if !(requested_accel >= 1.0 && requested_accel.is_finite()) {
            return Err(Error::param("accel", format!("{requested_accel} must be >= 1")));
        }
        if keep.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{} mask entries", height * width),
                got: format!("{}", keep.len()),
            });
        }
        let mask = Self {
            height,
            width,
            keep,
            kind,
            requested_accel,
            acs_fraction,
        };
        if mask.acs_region().iter().any(|&i| !mask.keep[i]) {
            return Err(Error::Config("ACS region is not fully kept".into()));
        }
        if kind.is_1d() {
            for r in 1..height {
                if mask.keep[r * width..(r + 1) * width] != mask.keep[..width] {
                    return Err(Error::Config("1D mask varies along the readout axis".into()));
                }
            }
        }
        Ok(mask)
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            keep: vec![true; height * width],
            kind: MaskKind::Full,
            requested_accel: 1.0,
            acs_fraction: 0.0,
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

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn requested_accel(&self) -> f64 {
        self.requested_accel
    }

    pub fn acs_fraction(&self) -> f64 {
        self.acs_fraction
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn is_kept(&self, row: usize, col: usize) -> bool {
        self.keep[row * self.width + col]
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    /// `HW / #kept`
    pub fn measured_accel(&self) -> f64 {
        (self.height * self.width) as f64 / self.kept_count() as f64
    }

    /// Zeroes every unsampled location.
    pub fn apply(&self, k: &ComplexImage) -> ComplexImage {
        let mut out = k.clone();
        for (z, &keep) in out.data_mut().iter_mut().zip(&self.keep) {
            if !keep {
                *z = C64::default();
            }
        }
        out
    }

    /// Flat indices of the autocalibration region for this mask's kind.
    pub fn acs_region(&self) -> Vec<usize> {
        acs_region(self.kind, self.height, self.width, self.acs_fraction)
    }
}

fn acs_columns(width: usize, acs_fraction: f64) -> std::ops::Range<usize> {
    let n = (acs_fraction * width as f64).floor() as usize;
    let start = width / 2 - n / 2;
    start..start + n
}

fn acs_region(kind: MaskKind, h: usize, w: usize, acs_fraction: f64) -> Vec<usize> {
    match kind {
        MaskKind::Full => Vec::new(),
        MaskKind::Uniform1d | MaskKind::Gaussian1d => {
            let cols = acs_columns(w, acs_fraction);
            (0..h)
                .flat_map(|r| cols.clone().map(move |c| r * w + c))
                .collect()
        }
        MaskKind::Gaussian2d => {
            let side = acs_fraction.sqrt();
            let sh = (side * h as f64).round() as usize;
            let sw = (side * w as f64).round() as usize;
            let (r0, c0) = (h / 2 - sh / 2, w / 2 - sw / 2);
            (r0..r0 + sh)
                .flat_map(|r| (c0..c0 + sw).map(move |c| r * w + c))
                .collect()
        }
        MaskKind::PoissonVd => {
            let radius = (acs_fraction * (h * w) as f64 / std::f64::consts::PI).sqrt();
            let (ch, cw) = ((h / 2) as f64, (w / 2) as f64);
            let mut out = Vec::new();
            for r in 0..h {
                for c in 0..w {
                    let d = ((r as f64 - ch).powi(2) + (c as f64 - cw).powi(2)).sqrt();
                    if d <= radius {
                        out.push(r * w + c);
                    }
                }
            }
            out
        }
    }
}

/// Standard deviation of the Gaussian sampling density, as a fraction of the
/// axis length.
const DENSITY_WIDTH: f64 = 1.0 / 6.0;

/// Generates a sampling mask.
///
/// * `uniform1d`: centered ACS columns plus equispaced columns among the rest.
/// * `gaussian1d` / `gaussian2d`: ACS block plus draws without replacement
///   with probability proportional to a Gaussian centered at DC (std = axis/6).
/// * `poisson_vd`: ACS disc plus variable-density dart throwing with radius
///   `r0 * (1 + 2|k| / k_max)`, `r0` tuned by bisection.
/// * `full`: every location, `accel` must be 1.
///
/// Random kinds hit `round(HW / R)` samples (`round(W / R)` columns for 1D
/// kinds) exactly.
pub fn make_mask(
    kind: MaskKind,
    height: usize,
    width: usize,
    accel: f64,
    acs_fraction: f64,
    rng: &mut Rng,
) -> Result<SamplingMask> {
    if height == 0 || width == 0 {
        return Err(Error::UnsupportedSize(height.min(width)));
    }
    if !(accel >= 1.0 && accel.is_finite()) {
        return Err(Error::param("accel", format!("{accel} must be >= 1")));
    }
    if !(0.0..=0.5).contains(&acs_fraction) {
        return Err(Error::param("acs", format!("{acs_fraction} outside [0, 0.5]")));
    }
    if kind == MaskKind::Full {
        if accel != 1.0 {
            return Err(Error::param("accel", "full mask requires accel = 1"));
        }
        return Ok(SamplingMask::full(height, width));
    }

    let acs = acs_region(kind, height, width, acs_fraction);
    let keep = if kind.is_1d() {
        let budget = (width as f64 / accel).round() as usize;
        let acs_cols = acs_columns(width, acs_fraction);
        if acs_cols.len() > budget {
            return Err(Error::Config(format!(
                "ACS needs {} columns but the budget at R={accel} is {budget}",
                acs_cols.len()
            )));
        }
        let mut cols = vec![false; width];
        for c in acs_cols {
            cols[c] = true;
        }
        let free: Vec<usize> = (0..width).filter(|&c| !cols[c]).collect();
        let extra = budget - (width - free.len());
        let chosen = if kind == MaskKind::Uniform1d {
            equispaced(&free, extra)
        } else {
            let center = (width / 2) as f64;
            let sd = DENSITY_WIDTH * width as f64;
            let weights: Vec<f64> = free
                .iter()
                .map(|&c| gaussian_weight((c as f64 - center) / sd))
                .collect();
            weighted_without_replacement(&free, &weights, extra, rng)
        };
        for c in chosen {
            cols[c] = true;
        }
        (0..height).flat_map(|_| cols.iter().copied()).collect()
    } else {
        let total = height * width;
        let budget = (total as f64 / accel).round() as usize;
        if acs.len() > budget {
            return Err(Error::Config(format!(
                "ACS needs {} samples but the budget at R={accel} is {budget}",
                acs.len()
            )));
        }
        let mut keep = vec![false; total];
        for &i in &acs {
            keep[i] = true;
        }
        let extra = budget - acs.len();
        if kind == MaskKind::Gaussian2d {
            let free: Vec<usize> = (0..total).filter(|&i| !keep[i]).collect();
            let (ch, cw) = ((height / 2) as f64, (width / 2) as f64);
            let (sh, sw) = (DENSITY_WIDTH * height as f64, DENSITY_WIDTH * width as f64);
            let weights: Vec<f64> = free
                .iter()
                .map(|&i| {
                    let (r, c) = ((i / width) as f64, (i % width) as f64);
                    gaussian_weight(((r - ch) / sh).hypot((c - cw) / sw))
                })
                .collect();
            for i in weighted_without_replacement(&free, &weights, extra, rng) {
                keep[i] = true;
            }
        } else {
            poisson_variable_density(&mut keep, height, width, extra, rng);
        }
        keep
    };
    SamplingMask::from_keep(height, width, keep, kind, accel, acs_fraction)
}

fn gaussian_weight(z: f64) -> f64 {
    (-0.5 * z * z).exp()
}

fn equispaced(items: &[usize], count: usize) -> Vec<usize> {
    let n = items.len();
    (0..count)
        .map(|j| items[((j as f64 + 0.5) * n as f64 / count as f64).floor() as usize])
        .collect()
}

/// Efraimidis-Spirakis: keep the `count` largest `ln(u) / w` keys.
fn weighted_without_replacement(
    items: &[usize],
    weights: &[f64],
    count: usize,
    rng: &mut Rng,
) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = items
        .iter()
        .zip(weights)
        .map(|(&i, &w)| {
            let u = 1.0 - rng.uniform(); // (0, 1]
            (u.ln() / w, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.truncate(count);
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Variable-density dart throwing over the pixels not yet kept.
fn poisson_variable_density(
    keep: &mut [bool],
    height: usize,
    width: usize,
    extra: usize,
    rng: &mut Rng,
) {
    let mut order: Vec<usize> = (0..keep.len()).filter(|&i| !keep[i]).collect();
    // Fisher-Yates
    for i in (1..order.len()).rev() {
        let j = rng.below(i + 1);
        order.swap(i, j);
    }
    let (ch, cw) = ((height / 2) as f64, (width / 2) as f64);
    let k_max = ch.hypot(cw).max(1.0);
    let radial: Vec<f64> = order
        .iter()
        .map(|&i| {
            let (r, c) = ((i / width) as f64, (i % width) as f64);
            1.0 + 2.0 * (r - ch).hypot(c - cw) / k_max
        })
        .collect();

    let throw = |r0: f64| -> Vec<usize> {
        let cell = r0.max(1.0);
        let gw = (width as f64 / cell).ceil() as usize + 1;
        let gh = (height as f64 / cell).ceil() as usize + 1;
        let mut grid: Vec<Vec<(f64, f64)>> = vec![Vec::new(); gw * gh];
        let mut accepted = Vec::new();
        for (idx, &i) in order.iter().enumerate() {
            let (r, c) = ((i / width) as f64, (i % width) as f64);
            let rad = r0 * radial[idx];
            let reach = (rad / cell).ceil() as isize;
            let (gr, gc) = ((r / cell) as isize, (c / cell) as isize);
            let mut ok = true;
            'scan: for dr in -reach..=reach {
                for dc in -reach..=reach {
                    let (nr, nc) = (gr + dr, gc + dc);
                    if nr < 0 || nc < 0 || nr >= gh as isize || nc >= gw as isize {
                        continue;
                    }
                    for &(qr, qc) in &grid[nr as usize * gw + nc as usize] {
                        if (qr - r).hypot(qc - c) < rad {
                            ok = false;
                            break 'scan;
                        }
                    }
                }
            }
            if ok {
                grid[gr as usize * gw + gc as usize].push((r, c));
                accepted.push(idx);
            }
        }
        accepted
    };

    let (mut lo, mut hi) = (0.0_f64, height.max(width) as f64);
    let mut best = throw(lo);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let got = throw(mid);
        if got.len().abs_diff(extra) < best.len().abs_diff(extra) {
            best = got.clone();
        }
        if got.len() > extra {
            lo = mid;
        } else {
            hi = mid;
        }
        if best.len() == extra || hi - lo < 1e-6 {
            break;
        }
    }

    // Trim or pad (in throw order) to hit the budget exactly.
    let mut chosen = vec![false; order.len()];
    for &idx in &best {
        chosen[idx] = true;
    }
    let mut count = best.len();
    for idx in (0..order.len()).rev() {
        if count <= extra {
            break;
        }
        if chosen[idx] {
            chosen[idx] = false;
            count -= 1;
        }
    }
    for flag in chosen.iter_mut() {
        if count >= extra {
            break;
        }
        if !*flag {
            *flag = true;
            count += 1;
        }
    }
    for (idx, &c) in chosen.iter().enumerate() {
        if c {
            keep[order[idx]] = true;
        }
    }
}
