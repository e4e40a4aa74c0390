//! Per-point spherical geometry and area partitions.
//!
//! A partition splits a scan into `m` areas numbered `1..=m`. Deterministic
//! kinds bin one scalar per point (inclination, azimuth or planar radius)
//! against `m + 1` evenly spaced boundaries. The random kinds are the
//! MixUp-like (per-point) and CutMix-like (rectangles in azimuth/radius)
//! baselines.

use alloc::vec::Vec;
use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::math;
use crate::rng;
use crate::sensor::SensorConfig;

/// Elevation angle in degrees, in `[-90, 90]`.
pub fn inclination(p: [f64; 3]) -> f64 {
    let h = math::sqrt(p[0] * p[0] + p[1] * p[1]);
    if h == 0.0 {
        return if p[2] > 0.0 {
            90.0
        } else if p[2] < 0.0 {
            -90.0
        } else {
            0.0
        };
    }
    math::to_deg(math::atan(p[2] / h))
}

/// Horizontal bearing in degrees, in `[-180, 180)`.
pub fn azimuth(p: [f64; 3]) -> f64 {
    if p[0] == 0.0 && p[1] == 0.0 {
        return 0.0;
    }
    let a = math::to_deg(math::atan2(p[1], p[0]));
    if a >= 180.0 {
        a - 360.0
    } else {
        a
    }
}

/// Distance to the origin in the X-Y plane.
pub fn radius(p: [f64; 3]) -> f64 {
    math::sqrt(p[0] * p[0] + p[1] * p[1])
}

/// `m + 1` evenly spaced values from `lo` to `hi`; both endpoints exact.
pub fn make_boundaries(lo: f64, hi: f64, m: usize) -> Result<Vec<f64>> {
    if m < 1 {
        return Err(Error::arg("number of areas must be >= 1"));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::arg(alloc::format!(
            "boundary range [{lo}, {hi}] is empty"
        )));
    }
    let step = (hi - lo) / m as f64;
    let mut b: Vec<f64> = (0..=m).map(|i| lo + i as f64 * step).collect();
    b[m] = hi;
    Ok(b)
}

/// Area (1-based) of `value` against `boundaries`: half-open bins, the last
/// bin closed on top, out-of-range values clamped to the edge areas.
#[inline]
pub fn bin_area(value: f64, boundaries: &[f64]) -> u16 {
    let m = boundaries.len() - 1;
    let inner = &boundaries[1..m];
    (inner.partition_point(|&b| b <= value) + 1) as u16
}

/// A uniform integer in `lo..=hi`.
pub fn sample_num_areas<R: RngCore + ?Sized>(rng: &mut R, lo: usize, hi: usize) -> usize {
    assert!(lo <= hi, "empty area-count range {lo}..={hi}");
    rng::int_inclusive(rng, lo as u64, hi as u64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Inclination,
    Azimuth,
    Radius,
    RandomPoint,
    RandomArea,
}

impl PartitionKind {
    pub const ALL: [PartitionKind; 5] = [
        PartitionKind::Inclination,
        PartitionKind::Azimuth,
        PartitionKind::Radius,
        PartitionKind::RandomPoint,
        PartitionKind::RandomArea,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PartitionKind::Inclination => "inclination",
            PartitionKind::Azimuth => "azimuth",
            PartitionKind::Radius => "radius",
            PartitionKind::RandomPoint => "random_point",
            PartitionKind::RandomArea => "random_area",
        }
    }
}

/// Partition parameters.
///
/// `lo`/`hi` are the boundary range: degrees for inclination and azimuth,
/// meters for radius. `RandomArea` samples its rectangles over azimuth
/// `[-180, 180)` and radius `[lo, hi]`; `RandomPoint` ignores them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub m: usize,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PartitionSpec {
    pub fn laser(sensor: &SensorConfig, m: usize) -> Self {
        let (lo, hi) = sensor.inclination_range();
        PartitionSpec {
            kind: PartitionKind::Inclination,
            m,
            lo,
            hi,
            seed: 0,
        }
    }

    /// Spec of `kind` with the natural range for `sensor`.
    pub fn for_sensor(kind: PartitionKind, sensor: &SensorConfig, m: usize, seed: u64) -> Self {
        let (lo, hi) = match kind {
            PartitionKind::Inclination => sensor.inclination_range(),
            PartitionKind::Azimuth => (-180.0, 180.0),
            PartitionKind::Radius | PartitionKind::RandomArea | PartitionKind::RandomPoint => {
                (0.0, sensor.max_range)
            }
        };
        PartitionSpec {
            kind,
            m,
            lo,
            hi,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 || self.m > u16::MAX as usize {
            return Err(Error::arg(alloc::format!(
                "area count {} out of range",
                self.m
            )));
        }
        if self.kind != PartitionKind::RandomPoint {
            make_boundaries(self.lo, self.hi, self.m)?;
        }
        Ok(())
    }

    /// Boundaries for the deterministic kinds.
    pub fn boundaries(&self) -> Result<Vec<f64>> {
        make_boundaries(self.lo, self.hi, self.m)
    }
}

/// One CutMix-like rectangle in (azimuth, radius) space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaRegion {
    pub az_center: f64,
    pub az_width: f64,
    pub r_lo: f64,
    pub r_hi: f64,
}

impl AreaRegion {
    pub fn contains(&self, az: f64, r: f64) -> bool {
        let d = math::rem_euclid(az - self.az_center + 540.0, 360.0) - 180.0;
        let half = 0.5 * self.az_width;
        d >= -half && d < half && r >= self.r_lo && r < self.r_hi
    }
}

/// The `m` rectangles of a `RandomArea` spec, index `i` holding area `i + 1`.
pub fn random_area_regions(spec: &PartitionSpec) -> Vec<AreaRegion> {
    let mut g = rng::seeded(spec.seed);
    (0..spec.m)
        .map(|_| {
            let az_center = rng::uniform(&mut g, -180.0, 180.0);
            let az_width = 360.0 * rng::uniform(&mut g, 0.15, 0.5);
            let r_width = (spec.hi - spec.lo) * rng::uniform(&mut g, 0.3, 0.8);
            let r_lo = rng::uniform(&mut g, spec.lo, spec.hi - r_width);
            AreaRegion {
                az_center,
                az_width,
                r_lo,
                r_hi: r_lo + r_width,
            }
        })
        .collect()
}

/// Content hash of a point; the MixUp-like partition keys on it so a point's
/// area does not depend on its position in the cloud.
fn point_hash(seed: u64, p: [f32; 3]) -> u64 {
    let mut h = rng::mix64(seed);
    for v in p {
        h = rng::mix64(h ^ v.to_bits() as u64);
    }
    h
}

/// Per-point area index in `1..=m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AreaAssignment {
    pub area_of: Vec<u16>,
    pub m: usize,
}

impl AreaAssignment {
    pub fn len(&self) -> usize {
        self.area_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.area_of.is_empty()
    }

    /// Point count per area; entry `0` is area 1.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = alloc::vec![0; self.m];
        for &a in &self.area_of {
            c[a as usize - 1] += 1;
        }
        c
    }

    /// Indices of points in `area` (1-based), ascending.
    pub fn members(&self, area: u16) -> Vec<usize> {
        self.area_of
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == area)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn assign_areas(cloud: &PointCloud, spec: &PartitionSpec) -> Result<AreaAssignment> {
    spec.validate()?;
    let n = cloud.len();
    let area_of: Vec<u16> = match spec.kind {
        PartitionKind::Inclination | PartitionKind::Azimuth | PartitionKind::Radius => {
            let b = spec.boundaries()?;
            let f = match spec.kind {
                PartitionKind::Inclination => inclination,
                PartitionKind::Azimuth => azimuth,
                _ => radius,
            };
            (0..n).map(|i| bin_area(f(cloud.point(i)), &b)).collect()
        }
        PartitionKind::RandomPoint => cloud
            .coords()
            .iter()
            .map(|&p| 1 + rng::scale_below(point_hash(spec.seed, p), spec.m as u64) as u16)
            .collect(),
        PartitionKind::RandomArea => {
            let regions = random_area_regions(spec);
            (0..n)
                .map(|i| {
                    let p = cloud.point(i);
                    let (az, r) = (azimuth(p), radius(p));
                    regions
                        .iter()
                        .rposition(|reg| reg.contains(az, r))
                        .map_or(1, |k| k as u16 + 1)
                })
                .collect()
        }
    };
    Ok(AreaAssignment { area_of, m: spec.m })
}
