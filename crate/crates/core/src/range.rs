//! Range-view projection.
//!
//! A point maps to column `u = ½·(1 − atan2(y, x)/π)·w` and row
//! `v = (1 − (asin(z/r) + φ_down)/ξ)·h`, with `ξ` the vertical field of view
//! and `r` the 3D range. Indices are floored and clamped into the image.
//! When several points land on one pixel the nearest wins, ties going to the
//! lower point index; the rest are counted as shadowed.

use alloc::vec::Vec;

use crate::cloud::{ClassId, PointCloud};
use crate::error::{Error, Result};
use crate::math;
use crate::sensor::SensorConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub h: usize,
    pub w: usize,
    /// Meters; `-1` for empty pixels.
    pub range: Vec<f32>,
    pub intensity: Vec<f32>,
    pub label: Vec<ClassId>,
    /// Index of the winning point; `-1` for empty pixels.
    pub point_index: Vec<i64>,
    /// Exact coordinates of the winning point, kept for unprojection.
    pub xyz: Vec<[f32; 3]>,
}

impl RangeImage {
    pub fn empty(h: usize, w: usize) -> Self {
        let n = h * w;
        RangeImage {
            h,
            w,
            range: alloc::vec![-1.0; n],
            intensity: alloc::vec![0.0; n],
            label: alloc::vec![ClassId::IGNORED; n],
            point_index: alloc::vec![-1; n],
            xyz: alloc::vec![[0.0; 3]; n],
        }
    }

    #[inline]
    pub fn is_occupied(&self, pixel: usize) -> bool {
        self.point_index[pixel] >= 0
    }

    pub fn occupied_count(&self) -> usize {
        self.point_index.iter().filter(|&&i| i >= 0).count()
    }
}

/// How every input point was accounted for; the three tallies sum to N.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub occupied: usize,
    /// Points that lost a pixel collision.
    pub shadowed: usize,
    /// Points at the sensor origin.
    pub dropped: usize,
}

/// Flat pixel index (`row * w + col`) of a point, `None` at the origin.
pub fn pixel_of(p: [f64; 3], sensor: &SensorConfig, h: usize, w: usize) -> Option<usize> {
    let r = math::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    if r == 0.0 {
        return None;
    }
    let u = 0.5 * (1.0 - math::atan2(p[1], p[0]) / math::PI) * w as f64;
    let pitch = math::asin((p[2] / r).clamp(-1.0, 1.0));
    let v =
        (1.0 - (pitch + math::to_rad(sensor.incl_down)) / math::to_rad(sensor.fov())) * h as f64;
    let col = clamp_index(u, w);
    let row = clamp_index(v, h);
    Some(row * w + col)
}

#[inline]
fn clamp_index(x: f64, n: usize) -> usize {
    let f = math::floor(x);
    if !(f > 0.0) {
        0
    } else if f >= (n - 1) as f64 {
        n - 1
    } else {
        f as usize
    }
}

fn check_dims(h: usize, w: usize, sensor: &SensorConfig) -> Result<()> {
    if h < 1 || w < 1 {
        return Err(Error::arg("range image dimensions must be >= 1"));
    }
    sensor.validate()
}

/// Pixel of every point (see [`pixel_of`]).
pub fn pixel_indices(
    cloud: &PointCloud,
    sensor: &SensorConfig,
    h: usize,
    w: usize,
) -> Vec<Option<usize>> {
    (0..cloud.len())
        .map(|i| pixel_of(cloud.point(i), sensor, h, w))
        .collect()
}

pub fn range_project(
    cloud: &PointCloud,
    sensor: &SensorConfig,
    h: usize,
    w: usize,
) -> Result<(RangeImage, ProjectionStats)> {
    check_dims(h, w, sensor)?;
    // Index computation is independent per point; resolution below is a
    // sequential pass in point order so the outcome is deterministic.
    let pixels = pixel_indices(cloud, sensor, h, w);
    let mut img = RangeImage::empty(h, w);
    let mut best = alloc::vec![f64::INFINITY; h * w];
    let mut stats = ProjectionStats::default();
    for (i, pix) in pixels.into_iter().enumerate() {
        let Some(pix) = pix else {
            stats.dropped += 1;
            continue;
        };
        let p = cloud.point(i);
        let r = math::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        if img.point_index[pix] >= 0 {
            stats.shadowed += 1;
            if !(r < best[pix]) {
                continue;
            }
        } else {
            stats.occupied += 1;
        }
        best[pix] = r;
        img.range[pix] = r as f32;
        img.intensity[pix] = cloud.intensity()[i];
        img.label[pix] = cloud.labels().map_or(ClassId::IGNORED, |l| l[i]);
        img.point_index[pix] = i as i64;
        img.xyz[pix] = cloud.coords()[i];
    }
    Ok((img, stats))
}

/// One point per occupied pixel, in ascending source-point order. Labels are
/// attached when any pixel carries a non-ignored label.
pub fn range_unproject(img: &RangeImage) -> PointCloud {
    let mut occ: Vec<usize> = (0..img.h * img.w).filter(|&p| img.is_occupied(p)).collect();
    occ.sort_by_key(|&p| img.point_index[p]);
    let coords = occ.iter().map(|&p| img.xyz[p]).collect();
    let intensity = occ.iter().map(|&p| img.intensity[p]).collect();
    let cloud = PointCloud::new(coords, intensity).expect("range image holds finite points");
    if occ.iter().any(|&p| !img.label[p].is_ignored()) {
        let labels = occ.iter().map(|&p| img.label[p]).collect();
        cloud.attach_labels(labels).expect("one label per point")
    } else {
        cloud
    }
}
