//! Ray-cast synthetic LiDAR scenes.
//!
//! Scenes are laid out so the class of a point depends strongly on where it
//! is: road everywhere on the ground, cars at mid range, trees further out
//! and buildings at the edge of the world. Rays leave the sensor at
//! `(0, 0, sensor_height)`; emitted points are expressed in the sensor frame.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::cloud::{ClassId, PointCloud};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, Rng};
use crate::sensor::SensorConfig;

pub const ROAD: ClassId = ClassId(0);
pub const CAR: ClassId = ClassId(1);
pub const BUILDING: ClassId = ClassId(2);
pub const TRUNK: ClassId = ClassId(3);
pub const VEGETATION: ClassId = ClassId(4);
pub const NUM_CLASSES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    /// The plane `z = 0`, limited to the scene's world radius.
    GroundPlane { class: ClassId },
    /// Box of full size `extent`, rotated by `yaw` radians about its vertical axis.
    Box {
        center: [f64; 3],
        extent: [f64; 3],
        yaw: f64,
        class: ClassId,
    },
    /// Vertical rectangle over the segment `a`–`b`, from `z = 0` to `height`.
    Wall {
        a: [f64; 2],
        b: [f64; 2],
        height: f64,
        class: ClassId,
    },
    /// Vertical cylinder standing on `center` (`center[2]` is its base height).
    Cylinder {
        center: [f64; 3],
        radius: f64,
        height: f64,
        class: ClassId,
    },
}

impl Primitive {
    pub fn class(&self) -> ClassId {
        match self {
            Primitive::GroundPlane { class }
            | Primitive::Box { class, .. }
            | Primitive::Wall { class, .. }
            | Primitive::Cylinder { class, .. } => *class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub world_radius: f64,
}

/// Inclusive `[min, max]` range.
pub type Span = (f64, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub world_radius: f64,
    pub cars: (usize, usize),
    pub car_radius: Span,
    pub walls: (usize, usize),
    pub wall_radius: Span,
    pub wall_length: Span,
    pub wall_height: Span,
    pub trees: (usize, usize),
    pub tree_radius: Span,
    pub max_retries: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            world_radius: 60.0,
            cars: (4, 10),
            car_radius: (6.0, 22.0),
            walls: (5, 9),
            wall_radius: (28.0, 50.0),
            wall_length: (12.0, 30.0),
            wall_height: (5.0, 14.0),
            trees: (6, 14),
            tree_radius: (14.0, 40.0),
            max_retries: 200,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let spans = [
            ("car_radius", self.car_radius),
            ("wall_radius", self.wall_radius),
            ("wall_length", self.wall_length),
            ("wall_height", self.wall_height),
            ("tree_radius", self.tree_radius),
        ];
        for (name, (lo, hi)) in spans {
            if !(lo < hi) || lo < 0.0 {
                return Err(Error::arg(alloc::format!(
                    "degenerate range {name} = [{lo}, {hi}]"
                )));
            }
        }
        for (name, (lo, hi)) in [
            ("cars", self.cars),
            ("walls", self.walls),
            ("trees", self.trees),
        ] {
            if lo > hi {
                return Err(Error::arg(alloc::format!("empty count range {name}")));
            }
        }
        if self.car_radius.0 < 3.0 {
            return Err(Error::arg("cars must stay at least 3 m from the sensor"));
        }
        Ok(())
    }
}

/// Sensor mounting and noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    pub sensor_height: f64,
    /// Standard deviation of Gaussian range noise in meters.
    pub range_noise: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            sensor_height: 1.8,
            range_noise: 0.02,
        }
    }
}

fn count(g: &mut Rng, (lo, hi): (usize, usize)) -> usize {
    rng::int_inclusive(g, lo as u64, hi as u64) as usize
}

fn polar(g: &mut Rng, radius: Span) -> ([f64; 2], f64) {
    let r = rng::uniform(g, radius.0, radius.1);
    let th = rng::uniform(g, -math::PI, math::PI);
    ([r * math::cos(th), r * math::sin(th)], th)
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1])
}

pub fn generate_scene(params: &SceneParams, g: &mut Rng) -> Result<Scene> {
    params.validate()?;
    let mut prims = alloc::vec![Primitive::GroundPlane { class: ROAD }];
    let mut cars: Vec<[f64; 2]> = Vec::new();
    for _ in 0..count(g, params.cars) {
        let mut placed = false;
        for _ in 0..params.max_retries {
            let (c, _) = polar(g, params.car_radius);
            if cars.iter().all(|o| dist2(*o, c) >= 5.5 * 5.5) {
                let yaw = rng::uniform(g, -math::PI, math::PI);
                let extent = [
                    rng::uniform(g, 3.8, 4.8),
                    rng::uniform(g, 1.7, 2.0),
                    rng::uniform(g, 1.4, 1.8),
                ];
                prims.push(Primitive::Box {
                    center: [c[0], c[1], 0.5 * extent[2]],
                    extent,
                    yaw,
                    class: CAR,
                });
                cars.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(alloc::format!(
                "could not place car {} without overlap",
                cars.len()
            )));
        }
    }
    for _ in 0..count(g, params.walls) {
        let (c, th) = polar(g, params.wall_radius);
        let half = 0.5 * rng::uniform(g, params.wall_length.0, params.wall_length.1);
        let t = [-math::sin(th), math::cos(th)];
        prims.push(Primitive::Wall {
            a: [c[0] - half * t[0], c[1] - half * t[1]],
            b: [c[0] + half * t[0], c[1] + half * t[1]],
            height: rng::uniform(g, params.wall_height.0, params.wall_height.1),
            class: BUILDING,
        });
    }
    let mut trees: Vec<[f64; 2]> = Vec::new();
    for _ in 0..count(g, params.trees) {
        let mut placed = false;
        for _ in 0..params.max_retries {
            let (c, _) = polar(g, params.tree_radius);
            if cars.iter().all(|o| dist2(*o, c) >= 4.0 * 4.0)
                && trees.iter().all(|o| dist2(*o, c) >= 3.0 * 3.0)
            {
                let trunk_h = rng::uniform(g, 2.0, 3.5);
                prims.push(Primitive::Cylinder {
                    center: [c[0], c[1], 0.0],
                    radius: rng::uniform(g, 0.2, 0.45),
                    height: trunk_h,
                    class: TRUNK,
                });
                prims.push(Primitive::Cylinder {
                    center: [c[0], c[1], trunk_h],
                    radius: rng::uniform(g, 1.5, 3.0),
                    height: rng::uniform(g, 2.0, 4.5),
                    class: VEGETATION,
                });
                trees.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(alloc::format!(
                "could not place tree {}",
                trees.len()
            )));
        }
    }
    Ok(Scene {
        primitives: prims,
        world_radius: params.world_radius,
    })
}

const EPS: f64 = 1e-9;

/// Distance along a unit ray to the first hit with `prim`, if any.
pub fn intersect(prim: &Primitive, o: [f64; 3], d: [f64; 3], world_radius: f64) -> Option<f64> {
    match *prim {
        Primitive::GroundPlane { .. } => {
            if d[2] >= 0.0 {
                return None;
            }
            let t = -o[2] / d[2];
            let (x, y) = (o[0] + t * d[0], o[1] + t * d[1]);
            (t > EPS && x * x + y * y <= world_radius * world_radius).then_some(t)
        }
        Primitive::Box {
            center,
            extent,
            yaw,
            ..
        } => {
            let (s, c) = (math::sin(yaw), math::cos(yaw));
            let rel = [o[0] - center[0], o[1] - center[1], o[2] - center[2]];
            // Rotate into the box frame by -yaw.
            let lo = [c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1], rel[2]];
            let ld = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
            let mut t0 = f64::NEG_INFINITY;
            let mut t1 = f64::INFINITY;
            for i in 0..3 {
                let half = 0.5 * extent[i];
                if ld[i].abs() < 1e-15 {
                    if lo[i].abs() > half {
                        return None;
                    }
                    continue;
                }
                let ta = (-half - lo[i]) / ld[i];
                let tb = (half - lo[i]) / ld[i];
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
            if t0 > t1 || t1 <= EPS {
                return None;
            }
            Some(if t0 > EPS { t0 } else { t1 })
        }
        Primitive::Wall { a, b, height, .. } => {
            let e = [b[0] - a[0], b[1] - a[1]];
            let n = [-e[1], e[0]];
            let denom = n[0] * d[0] + n[1] * d[1];
            if denom.abs() < 1e-15 {
                return None;
            }
            let t = (n[0] * (a[0] - o[0]) + n[1] * (a[1] - o[1])) / denom;
            if t <= EPS {
                return None;
            }
            let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
            let s = ((p[0] - a[0]) * e[0] + (p[1] - a[1]) * e[1]) / (e[0] * e[0] + e[1] * e[1]);
            ((0.0..=1.0).contains(&s) && (0.0..=height).contains(&p[2])).then_some(t)
        }
        Primitive::Cylinder {
            center,
            radius,
            height,
            ..
        } => {
            let (z0, z1) = (center[2], center[2] + height);
            let mut best: Option<f64> = None;
            let mut consider = |t: f64| {
                if t > EPS && best.is_none_or(|b| t < b) {
                    best = Some(t);
                }
            };
            let (px, py) = (o[0] - center[0], o[1] - center[1]);
            let a = d[0] * d[0] + d[1] * d[1];
            if a > 1e-15 {
                let bq = 2.0 * (px * d[0] + py * d[1]);
                let cq = px * px + py * py - radius * radius;
                let disc = bq * bq - 4.0 * a * cq;
                if disc >= 0.0 {
                    let sq = math::sqrt(disc);
                    for t in [(-bq - sq) / (2.0 * a), (-bq + sq) / (2.0 * a)] {
                        let z = o[2] + t * d[2];
                        if (z0..=z1).contains(&z) {
                            consider(t);
                        }
                    }
                }
            }
            if d[2].abs() > 1e-15 {
                for zc in [z0, z1] {
                    let t = (zc - o[2]) / d[2];
                    let (x, y) = (px + t * d[0], py + t * d[1]);
                    if x * x + y * y <= radius * radius {
                        consider(t);
                    }
                }
            }
            best
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub class: ClassId,
    pub primitive: usize,
}

/// Nearest hit within `max_range`; ties go to the earlier primitive.
pub fn cast_ray(scene: &Scene, o: [f64; 3], d: [f64; 3], max_range: f64) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (i, prim) in scene.primitives.iter().enumerate() {
        if let Some(t) = intersect(prim, o, d, scene.world_radius) {
            if t <= max_range && best.is_none_or(|b| t < b.t) {
                best = Some(Hit {
                    t,
                    class: prim.class(),
                    primitive: i,
                });
            }
        }
    }
    best
}

/// Unit direction of beam `k` (0 = lowest) at column `col`. Column azimuths
/// sit at pixel centers of the range projection, so each column maps to its
/// own image column.
pub fn ray_direction(sensor: &SensorConfig, k: usize, col: usize) -> [f64; 3] {
    let incl = math::to_rad(sensor.beam_inclination(k));
    let az = math::PI * (1.0 - 2.0 * (col as f64 + 0.5) / sensor.width as f64);
    let (ci, si) = (math::cos(incl), math::sin(incl));
    [ci * math::cos(az), ci * math::sin(az), si]
}

/// One labeled scan: every beam at every azimuth step; rays with no hit
/// within range emit nothing. Points are ordered beam by beam, bottom first.
pub fn simulate_scan(
    scene: &Scene,
    sensor: &SensorConfig,
    opts: &SimOptions,
    g: &mut Rng,
) -> Result<PointCloud> {
    sensor.validate()?;
    let origin = [0.0, 0.0, opts.sensor_height];
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    for k in 0..sensor.num_beams {
        for col in 0..sensor.width {
            let d = ray_direction(sensor, k, col);
            if let Some(hit) = cast_ray(scene, origin, d, sensor.max_range) {
                let r = if opts.range_noise > 0.0 {
                    hit.t + opts.range_noise * rng::normal(g)
                } else {
                    hit.t
                };
                coords.push([(r * d[0]) as f32, (r * d[1]) as f32, (r * d[2]) as f32]);
                labels.push(hit.class);
            }
        }
    }
    PointCloud::from_coords(coords)?.attach_labels(labels)
}

/// Sizes and split of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_eval: usize,
    pub labeled_fraction: f64,
    /// Seeds scene generation.
    pub seed: u64,
    /// Seeds the choice of labeled scans.
    pub split_seed: u64,
}

impl DatasetSpec {
    pub fn n_labeled(&self) -> usize {
        (math::round(self.labeled_fraction * self.n_train as f64) as usize).min(self.n_train)
    }
}

/// Ground truth of the unlabeled scans, reachable only through
/// [`SealedLabels::reveal_for_evaluation`].
#[derive(Debug, Clone, PartialEq)]
pub struct SealedLabels(Vec<Vec<ClassId>>);

impl SealedLabels {
    pub fn reveal_for_evaluation(&self) -> &[Vec<ClassId>] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub labeled: Vec<PointCloud>,
    pub unlabeled: Vec<PointCloud>,
    pub unlabeled_truth: SealedLabels,
    pub eval: Vec<PointCloud>,
    /// Training-scan index of each labeled scan.
    pub labeled_ids: Vec<usize>,
    pub unlabeled_ids: Vec<usize>,
}

/// Scan `index` of a dataset seeded with `seed`; a pure function of its arguments.
pub fn generate_scan(
    params: &SceneParams,
    sensor: &SensorConfig,
    opts: &SimOptions,
    seed: u64,
    index: usize,
) -> Result<(Scene, PointCloud)> {
    let mut g = rng::stream(seed, index as u64);
    let scene = generate_scene(params, &mut g)?;
    let scan = simulate_scan(&scene, sensor, opts, &mut g)?;
    Ok((scene, scan))
}

const SPLIT_STREAM: u64 = 1 << 48;

/// Labeled training-scan indices (ascending) for a split.
pub fn labeled_split(spec: &DatasetSpec) -> Vec<usize> {
    let mut g = rng::stream(spec.split_seed, SPLIT_STREAM);
    let mut ids = rng::permutation(&mut g, spec.n_train);
    ids.truncate(spec.n_labeled());
    ids.sort_unstable();
    ids
}

pub fn make_dataset(
    spec: &DatasetSpec,
    params: &SceneParams,
    sensor: &SensorConfig,
    opts: &SimOptions,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&spec.labeled_fraction) {
        return Err(Error::arg("labeled_fraction must lie in [0, 1]"));
    }
    let labeled_ids = labeled_split(spec);
    let mut ds = Dataset {
        labeled: Vec::new(),
        unlabeled: Vec::new(),
        unlabeled_truth: SealedLabels(Vec::new()),
        eval: Vec::new(),
        labeled_ids: labeled_ids.clone(),
        unlabeled_ids: Vec::new(),
    };
    for i in 0..spec.n_train {
        let (_, scan) = generate_scan(params, sensor, opts, spec.seed, i)?;
        if labeled_ids.binary_search(&i).is_ok() {
            ds.labeled.push(scan);
        } else {
            ds.unlabeled_truth
                .0
                .push(scan.labels().expect("simulated scans are labeled").to_vec());
            ds.unlabeled.push(scan.without_labels());
            ds.unlabeled_ids.push(i);
        }
    }
    for i in 0..spec.n_eval {
        ds.eval
            .push(generate_scan(params, sensor, opts, spec.seed, spec.n_train + i)?.1);
    }
    Ok(ds)
}
