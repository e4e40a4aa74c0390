use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// LiDAR sensor geometry. Angles in degrees; `incl_down` is stored as a
/// positive magnitude, so the vertical field of view is
/// `[-incl_down, incl_up]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    pub num_beams: usize,
    pub incl_up: f64,
    pub incl_down: f64,
    /// Horizontal steps per revolution.
    pub width: usize,
    pub max_range: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SensorConfig {
    /// 64 beams over `[-25°, 3°]`, 64×2048 range images.
    pub fn semantic_kitti() -> Self {
        SensorConfig {
            num_beams: 64,
            incl_up: 3.0,
            incl_down: 25.0,
            width: 2048,
            max_range: 80.0,
        }
    }

    /// 32 beams over `[-30°, 10°]`, 32×1920 range images.
    pub fn nuscenes() -> Self {
        SensorConfig {
            num_beams: 32,
            incl_up: 10.0,
            incl_down: 30.0,
            width: 1920,
            max_range: 70.0,
        }
    }

    /// nuScenes field of view at a desk-scale horizontal resolution.
    pub fn desk() -> Self {
        SensorConfig {
            width: 128,
            ..Self::nuscenes()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_beams < 1 {
            return Err(Error::arg("num_beams must be >= 1"));
        }
        if self.width < 1 {
            return Err(Error::arg("width must be >= 1"));
        }
        if !(self.incl_up.is_finite() && self.incl_down.is_finite())
            || self.incl_up <= -self.incl_down
        {
            return Err(Error::arg("incl_up must exceed -incl_down"));
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(Error::arg("max_range must be positive"));
        }
        Ok(())
    }

    /// Total vertical field of view in degrees.
    pub fn fov(&self) -> f64 {
        self.incl_up + self.incl_down
    }

    /// Inclination range `(lo, hi)` used for laser partitions.
    pub fn inclination_range(&self) -> (f64, f64) {
        (-self.incl_down, self.incl_up)
    }

    /// Inclination of beam `k` in degrees, `k = 0` being the lowest beam.
    pub fn beam_inclination(&self, k: usize) -> f64 {
        if self.num_beams == 1 {
            return -self.incl_down + 0.5 * self.fov();
        }
        -self.incl_down + self.fov() * k as f64 / (self.num_beams - 1) as f64
    }
}
