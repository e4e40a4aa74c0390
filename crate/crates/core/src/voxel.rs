//! Cylindrical voxelization with majority-vote labels.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::cloud::{ClassId, PointCloud};
use crate::error::{Error, Result};
use crate::partition::{azimuth, radius};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelResolution {
    pub n_rho: usize,
    pub n_alpha: usize,
    pub n_z: usize,
}

impl Default for VoxelResolution {
    fn default() -> Self {
        VoxelResolution {
            n_rho: 240,
            n_alpha: 180,
            n_z: 20,
        }
    }
}

impl VoxelResolution {
    pub fn len(&self) -> usize {
        self.n_rho * self.n_alpha * self.n_z
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Grid extent: planar radius and height in meters, azimuth in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylBounds {
    pub rho: (f64, f64),
    pub alpha: (f64, f64),
    pub z: (f64, f64),
}

impl Default for CylBounds {
    fn default() -> Self {
        CylBounds {
            rho: (0.0, 50.0),
            alpha: (-180.0, 180.0),
            z: (-5.0, 3.0),
        }
    }
}

impl CylBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("rho", self.rho), ("alpha", self.alpha), ("z", self.z)] {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::arg(alloc::format!(
                    "empty {name} bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub resolution: VoxelResolution,
    pub bounds: CylBounds,
    /// Majority label per voxel; IGNORED for empty voxels.
    pub labels: Vec<ClassId>,
    pub counts: Vec<u32>,
}

impl VoxelGrid {
    #[inline]
    pub fn flat(&self, i_rho: usize, i_alpha: usize, i_z: usize) -> usize {
        (i_rho * self.resolution.n_alpha + i_alpha) * self.resolution.n_z + i_z
    }

    /// `(i_rho, i_alpha, i_z, label, count)` for every non-empty voxel, in flat order.
    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize, usize, ClassId, u32)> + '_ {
        let r = self.resolution;
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(move |(f, &c)| {
                let i_z = f % r.n_z;
                let i_alpha = (f / r.n_z) % r.n_alpha;
                let i_rho = f / (r.n_z * r.n_alpha);
                (i_rho, i_alpha, i_z, self.labels[f], c)
            })
    }
}

#[inline]
fn cell(v: f64, (lo, hi): (f64, f64), n: usize) -> usize {
    let t = (v - lo) / (hi - lo) * n as f64;
    if !(t > 0.0) {
        0
    } else if t >= (n - 1) as f64 {
        (t as usize).min(n - 1)
    } else {
        t as usize
    }
}

/// Voxel coordinates of a point; out-of-bounds values clamp to edge voxels.
pub fn voxel_of(p: [f64; 3], res: &VoxelResolution, bounds: &CylBounds) -> (usize, usize, usize) {
    (
        cell(radius(p), bounds.rho, res.n_rho),
        cell(azimuth(p), bounds.alpha, res.n_alpha),
        cell(p[2], bounds.z, res.n_z),
    )
}

/// Majority label among `labels`, smallest id on ties; IGNORED votes only
/// when nothing else is present.
pub fn majority(labels: &mut [ClassId]) -> ClassId {
    labels.sort_unstable();
    let mut best = ClassId::IGNORED;
    let mut best_count = 0usize;
    let mut i = 0;
    while i < labels.len() {
        let mut j = i;
        while j < labels.len() && labels[j] == labels[i] {
            j += 1;
        }
        if !labels[i].is_ignored() && j - i > best_count {
            best = labels[i];
            best_count = j - i;
        }
        i = j;
    }
    best
}

pub fn cylindrical_voxelize(
    cloud: &PointCloud,
    res: VoxelResolution,
    bounds: CylBounds,
) -> Result<VoxelGrid> {
    if res.n_rho == 0 || res.n_alpha == 0 || res.n_z == 0 {
        return Err(Error::arg("voxel resolution must be positive"));
    }
    bounds.validate()?;
    let mut grid = VoxelGrid {
        resolution: res,
        bounds,
        labels: alloc::vec![ClassId::IGNORED; res.len()],
        counts: alloc::vec![0; res.len()],
    };
    let mut members: Vec<(usize, ClassId)> = (0..cloud.len())
        .map(|i| {
            let (a, b, c) = voxel_of(cloud.point(i), &res, &bounds);
            let label = cloud.labels().map_or(ClassId::IGNORED, |l| l[i]);
            (grid.flat(a, b, c), label)
        })
        .collect();
    members.sort_unstable();
    let mut i = 0;
    while i < members.len() {
        let v = members[i].0;
        let mut j = i;
        while j < members.len() && members[j].0 == v {
            j += 1;
        }
        let mut labels: Vec<ClassId> = members[i..j].iter().map(|m| m.1).collect();
        grid.counts[v] = (j - i) as u32;
        grid.labels[v] = majority(&mut labels);
        i = j;
    }
    Ok(grid)
}
