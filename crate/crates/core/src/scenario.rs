//! World geometry: base-station placement, angle-of-departure computation,
//! angular uncertainty sectors and randomized training scenes.
//!
//! Angles of departure are measured from the array broadside, i.e. the
//! direction perpendicular to the array axis. A BS at `q` with orientation
//! `psi` sees a UE at `p` under `atan2(p.x - q.x, p.y - q.y) - psi`, so a UE
//! straight "in front" (along +y) of an unrotated BS has AoD zero.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{wrap_angle, Error, Point2, Result};

/// Axis-aligned rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point2,
    pub max: Point2,
}

impl Rect {
    pub fn new(min: Point2, max: Point2) -> Result<Self> {
        if !(min[0] < max[0] && min[1] < max[1]) {
            return Err(Error::domain(format!(
                "rectangle corners must satisfy min < max, got {min:?} / {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    /// Square of the given side length centered at `center`.
    pub fn centered_square(center: Point2, side: f64) -> Result<Self> {
        let h = side / 2.0;
        Self::new([center[0] - h, center[1] - h], [center[0] + h, center[1] + h])
    }

    pub fn centroid(&self) -> Point2 {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        ]
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1])
    }

    pub fn contains(&self, p: Point2) -> bool {
        (self.min[0]..=self.max[0]).contains(&p[0]) && (self.min[1]..=self.max[1]).contains(&p[1])
    }

    pub fn corners(&self) -> [Point2; 4] {
        [
            self.min,
            [self.max[0], self.min[1]],
            self.max,
            [self.min[0], self.max[1]],
        ]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point2 {
        [
            rng.random_range(self.min[0]..self.max[0]),
            rng.random_range(self.min[1]..self.max[1]),
        ]
    }
}

/// Everything the simulation needs to know about the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub bs_positions: Vec<Point2>,
    /// Array orientations in radians.
    pub bs_orientations: Vec<f64>,
    pub n_tx: usize,
    pub n_transmissions: usize,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    /// Prior region known to contain the UE. Also the training region of the
    /// positioning autoencoder and the search region of the ML position
    /// estimator.
    pub prior_region: Rect,
}

impl Default for Scenario {
    /// Two BSs at `[-5, 0]` and `[3, 0]` oriented at 0 and 10 degrees, 32
    /// antennas, 20 transmissions, 28 GHz carrier, and a 10 m^2 square prior
    /// region centered on `[0.5, 5]`.
    fn default() -> Self {
        Self {
            bs_positions: vec![[-5.0, 0.0], [3.0, 0.0]],
            bs_orientations: vec![0.0, 10f64.to_radians()],
            n_tx: 32,
            n_transmissions: 20,
            wavelength: 10.7e-3,
            prior_region: Rect::centered_square([0.5, 5.0], 10f64.sqrt())
                .expect("static region is valid"),
        }
    }
}

impl Scenario {
    pub fn n_bs(&self) -> usize {
        self.bs_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.n_bs() < 2 {
            return cfg(format!("need at least 2 base stations, got {}", self.n_bs()));
        }
        if self.bs_orientations.len() != self.n_bs() {
            return cfg(format!(
                "{} orientations given for {} base stations",
                self.bs_orientations.len(),
                self.n_bs()
            ));
        }
        if let Some(psi) = self
            .bs_orientations
            .iter()
            .find(|psi| !(-FRAC_PI_2..=FRAC_PI_2).contains(*psi))
        {
            return cfg(format!("orientation {psi} rad outside [-pi/2, pi/2]"));
        }
        if self.n_tx < 2 {
            return cfg(format!("n_tx must be at least 2, got {}", self.n_tx));
        }
        if self.n_transmissions < 2 || self.n_transmissions % 2 != 0 {
            return cfg(format!(
                "n_transmissions must be even and at least 2, got {}",
                self.n_transmissions
            ));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return cfg(format!("wavelength must be positive, got {}", self.wavelength));
        }
        Rect::new(self.prior_region.min, self.prior_region.max)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Local AoD of position `p` seen from BS `bs`.
    pub fn aod(&self, bs: usize, p: Point2) -> Result<f64> {
        aod_from_position(p, self.bs_positions[bs], self.bs_orientations[bs])
    }
}

/// Uncertainty sector `[theta_min, theta_max]` known to contain the AoD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularSector {
    theta_min: f64,
    theta_max: f64,
}

impl AngularSector {
    pub fn new(theta_min: f64, theta_max: f64) -> Result<Self> {
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&theta_min)
            || !(-FRAC_PI_2..=FRAC_PI_2).contains(&theta_max)
            || theta_min >= theta_max
        {
            return Err(Error::domain(format!(
                "invalid sector [{theta_min}, {theta_max}] rad"
            )));
        }
        Ok(Self {
            theta_min,
            theta_max,
        })
    }

    pub fn from_degrees(min_deg: f64, max_deg: f64) -> Result<Self> {
        Self::new(min_deg.to_radians(), max_deg.to_radians())
    }

    pub fn theta_min(&self) -> f64 {
        self.theta_min
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    pub fn width(&self) -> f64 {
        self.theta_max - self.theta_min
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.theta_min + self.theta_max)
    }

    pub fn contains(&self, theta: f64) -> bool {
        (self.theta_min..=self.theta_max).contains(&theta)
    }

    /// `n` evenly spaced angles spanning the sector, endpoints included.
    /// A single point lands on the midpoint.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![self.mid()],
            _ => {
                let step = self.width() / (n - 1) as f64;
                (0..n)
                    .map(|g| {
                        if g == n - 1 {
                            self.theta_max
                        } else {
                            self.theta_min + step * g as f64
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Over-determined sector encoding fed to the beamformer network:
/// `[theta_min, theta_max, (theta_max - theta_min) / 2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorParameterization {
    pub xi: [f64; 3],
}

pub fn sector_parameterization(u: &AngularSector) -> SectorParameterization {
    SectorParameterization {
        xi: [u.theta_min, u.theta_max, (u.theta_max - u.theta_min) / 2.0],
    }
}

impl From<&AngularSector> for SectorParameterization {
    fn from(u: &AngularSector) -> Self {
        sector_parameterization(u)
    }
}

fn check_distinct(p: Point2, q: Point2) -> Result<(f64, f64)> {
    let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::domain(format!("UE and BS coincide at {p:?}")));
    }
    Ok((dx, dy))
}

/// Local AoD from BS at `q` with orientation `psi` towards `p`, wrapped to
/// `(-pi, pi]`.
pub fn aod_from_position(p: Point2, q: Point2, psi: f64) -> Result<f64> {
    let (dx, dy) = check_distinct(p, q)?;
    Ok(wrap_angle(dx.atan2(dy) - psi))
}

/// Gradient of [`aod_from_position`] with respect to `p`, in rad/m.
pub fn aod_gradient(p: Point2, q: Point2) -> Result<[f64; 2]> {
    let (dx, dy) = check_distinct(p, q)?;
    let r2 = dx * dx + dy * dy;
    Ok([dy / r2, -dx / r2])
}

/// Draws one AoD training case: a sector of random width and mean, and a
/// true AoD uniform inside it.
///
/// The admissible mean range is shrunk so the sector never leaves
/// `[-pi/2, pi/2]`.
pub fn sample_aod_training_case<R: Rng + ?Sized>(
    rng: &mut R,
    width_range: [f64; 2],
    mean_range: [f64; 2],
) -> Result<(f64, AngularSector)> {
    if !(0.0 < width_range[0] && width_range[0] <= width_range[1] && width_range[1] < PI) {
        return Err(Error::domain(format!("invalid width range {width_range:?}")));
    }
    if mean_range[0] > mean_range[1] {
        return Err(Error::domain(format!("invalid mean range {mean_range:?}")));
    }
    let width = uniform(rng, width_range[0], width_range[1]);
    let lo = mean_range[0].max(-FRAC_PI_2 + width / 2.0);
    let hi = mean_range[1].min(FRAC_PI_2 - width / 2.0);
    if lo > hi {
        return Err(Error::domain(format!(
            "mean range {mean_range:?} cannot host a sector of width {width}"
        )));
    }
    let mean = uniform(rng, lo, hi);
    let sector = AngularSector::new(mean - width / 2.0, mean + width / 2.0)?;
    let theta = uniform(rng, sector.theta_min, sector.theta_max);
    Ok((theta, sector))
}

/// Prior knowledge model for positioning scenes: each BS knows its AoD up to
/// a sector of half-width `half_width` whose center is offset from the truth
/// by at most `max_offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionPrior {
    pub half_width: f64,
    pub max_offset: f64,
}

impl Default for PositionPrior {
    fn default() -> Self {
        Self {
            half_width: 15f64.to_radians(),
            max_offset: 15f64.to_radians(),
        }
    }
}

/// Draws a UE position uniformly over the scenario's prior region, and one
/// uncertainty sector per BS.
///
/// Sector centers are clamped so the sector stays inside `[-pi/2, pi/2]`.
pub fn sample_position_training_case<R: Rng + ?Sized>(
    rng: &mut R,
    scenario: &Scenario,
) -> Result<(Point2, Vec<AngularSector>)> {
    sample_position_training_case_with(rng, scenario, &PositionPrior::default())
}

pub fn sample_position_training_case_with<R: Rng + ?Sized>(
    rng: &mut R,
    scenario: &Scenario,
    prior: &PositionPrior,
) -> Result<(Point2, Vec<AngularSector>)> {
    if prior.max_offset > prior.half_width {
        return Err(Error::Config(
            "sector offset larger than its half-width cannot guarantee coverage".into(),
        ));
    }
    let p = scenario.prior_region.sample(rng);
    let mut sectors = Vec::with_capacity(scenario.n_bs());
    let mid_limit = FRAC_PI_2 - prior.half_width;
    for bs in 0..scenario.n_bs() {
        let theta = scenario.aod(bs, p)?;
        if theta.abs() > FRAC_PI_2 {
            return Err(Error::Config(format!(
                "training region leaves the field of view of BS {bs} (AoD {:.2} deg)",
                theta.to_degrees()
            )));
        }
        let offset = uniform(rng, -prior.max_offset, prior.max_offset);
        // Shifting the center back inside keeps the width and still covers
        // theta, since |theta| <= pi/2.
        let mid = (theta + offset).clamp(-mid_limit, mid_limit);
        sectors.push(AngularSector::new(mid - prior.half_width, mid + prior.half_width)?);
    }
    Ok((p, sectors))
}

/// Checks that every corner of the prior region lies in front of every BS.
pub fn check_region_visibility(scenario: &Scenario) -> Result<()> {
    let limit = FRAC_PI_2;
    for bs in 0..scenario.n_bs() {
        for c in scenario.prior_region.corners() {
            let theta = scenario.aod(bs, c)?;
            if theta.abs() > limit {
                return Err(Error::Config(format!(
                    "prior region corner {c:?} at {:.2} deg is outside the field of view of BS {bs}",
                    theta.to_degrees()
                )));
            }
        }
    }
    Ok(())
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}
