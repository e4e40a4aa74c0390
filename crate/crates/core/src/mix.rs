//! The intertwined mixing operator.
//!
//! Both scans are partitioned with the same spec. The first output takes
//! odd-indexed areas from the first scan and even-indexed areas from the
//! second; the second output is the complement. Labels travel with their
//! points, so mixing a labeled pair mixes the labels in the same way.

use alloc::vec::Vec;
use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::cloud::{ClassId, PointCloud};
use crate::error::{Error, Result};
use crate::partition::{
    assign_areas, sample_num_areas, AreaAssignment, PartitionKind, PartitionSpec,
};
use crate::rng;
use crate::sensor::SensorConfig;

/// How area indices are mapped before the odd/even interleave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixOrder {
    OddEven,
    /// Area `j` is treated as area `m + 1 - j`.
    Reversed,
    /// Area indices go through a permutation drawn from the seed.
    Shuffled(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    First,
    Second,
}

/// Where a mixed point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub source: Source,
    /// Index of the point in its source cloud.
    pub index: u32,
    /// Area of the point in its source cloud (1-based, before reordering).
    pub area: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixResult {
    pub mixed_a: PointCloud,
    pub mixed_b: PointCloud,
    pub provenance_a: Vec<Provenance>,
    pub provenance_b: Vec<Provenance>,
}

/// Effective index of each area after applying `order`; entry `j - 1` is
/// the index used for area `j`.
pub fn area_order(order: MixOrder, m: usize) -> Vec<usize> {
    match order {
        MixOrder::OddEven => (1..=m).collect(),
        MixOrder::Reversed => (1..=m).map(|j| m + 1 - j).collect(),
        MixOrder::Shuffled(seed) => {
            let mut g = rng::seeded(seed);
            rng::permutation(&mut g, m)
                .into_iter()
                .map(|k| k + 1)
                .collect()
        }
    }
}

fn bucket(areas: &AreaAssignment) -> Vec<Vec<usize>> {
    let mut b = alloc::vec![Vec::new(); areas.m];
    for (i, &a) in areas.area_of.iter().enumerate() {
        b[a as usize - 1].push(i);
    }
    b
}

fn gather(x1: &PointCloud, x2: &PointCloud, prov: &[Provenance]) -> Result<PointCloud> {
    let pick = |p: &Provenance| match p.source {
        Source::First => (x1, p.index as usize),
        Source::Second => (x2, p.index as usize),
    };
    let coords = prov.iter().map(|p| {
        let (c, i) = pick(p);
        c.coords()[i]
    });
    let intensity = prov.iter().map(|p| {
        let (c, i) = pick(p);
        c.intensity()[i]
    });
    let cloud = PointCloud::new(coords.collect(), intensity.collect())?;
    match (x1.labels(), x2.labels()) {
        (Some(l1), Some(l2)) => {
            let labels = prov
                .iter()
                .map(|p| match p.source {
                    Source::First => l1[p.index as usize],
                    Source::Second => l2[p.index as usize],
                })
                .collect();
            cloud.attach_labels(labels)
        }
        _ => Ok(cloud),
    }
}

/// Mix two scans area by area.
///
/// Within each output, points are ordered by (area, source, original index).
pub fn laser_mix(
    x1: &PointCloud,
    x2: &PointCloud,
    spec: &PartitionSpec,
    order: MixOrder,
) -> Result<MixResult> {
    if x1.is_labeled() != x2.is_labeled() {
        return Err(Error::arg("both scans must be labeled or both unlabeled"));
    }
    let a1 = assign_areas(x1, spec)?;
    let a2 = assign_areas(x2, spec)?;
    let eff = area_order(order, spec.m);
    let (b1, b2) = (bucket(&a1), bucket(&a2));

    let mut prov_a = Vec::with_capacity(x1.len());
    let mut prov_b = Vec::with_capacity(x2.len());
    let tag = |source, area: usize, idx: &usize| Provenance {
        source,
        index: *idx as u32,
        area: area as u16,
    };
    for area in 1..=spec.m {
        let first_to_a = eff[area - 1] % 2 == 1;
        let (to_a, to_b) = if first_to_a {
            (&b1[area - 1], &b2[area - 1])
        } else {
            (&b2[area - 1], &b1[area - 1])
        };
        let (src_a, src_b) = if first_to_a {
            (Source::First, Source::Second)
        } else {
            (Source::Second, Source::First)
        };
        prov_a.extend(to_a.iter().map(|i| tag(src_a, area, i)));
        prov_b.extend(to_b.iter().map(|i| tag(src_b, area, i)));
    }
    Ok(MixResult {
        mixed_a: gather(x1, x2, &prov_a)?,
        mixed_b: gather(x1, x2, &prov_b)?,
        provenance_a: prov_a,
        provenance_b: prov_b,
    })
}

/// The CutOut-like degradation: each output keeps only its own scan's
/// contribution, so the other scan's areas are deleted instead of filled.
pub fn cut_out(
    x1: &PointCloud,
    x2: &PointCloud,
    spec: &PartitionSpec,
    order: MixOrder,
) -> Result<MixResult> {
    let full = laser_mix(x1, x2, spec, order)?;
    let keep = |prov: &[Provenance], s: Source| -> Vec<Provenance> {
        prov.iter().copied().filter(|p| p.source == s).collect()
    };
    let prov_a = keep(&full.provenance_a, Source::First);
    let prov_b = keep(&full.provenance_b, Source::Second);
    Ok(MixResult {
        mixed_a: gather(x1, x2, &prov_a)?,
        mixed_b: gather(x1, x2, &prov_b)?,
        provenance_a: prov_a,
        provenance_b: prov_b,
    })
}

/// Labels for a mixed cloud looked up through its provenance.
pub fn transport_labels(
    prov: &[Provenance],
    first: &[ClassId],
    second: &[ClassId],
) -> Vec<ClassId> {
    prov.iter()
        .map(|p| match p.source {
            Source::First => first[p.index as usize],
            Source::Second => second[p.index as usize],
        })
        .collect()
}

/// How training pairs are mixed: the partition kind, area ordering, the
/// range `m` is drawn from, and whether the other scan's areas are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixPlan {
    pub kind: PartitionKind,
    pub order: MixOrder,
    pub m_lo: usize,
    pub m_hi: usize,
    #[serde(default)]
    pub cut_out: bool,
}

impl MixPlan {
    pub fn laser(m_lo: usize, m_hi: usize) -> Self {
        MixPlan {
            kind: PartitionKind::Inclination,
            order: MixOrder::OddEven,
            m_lo,
            m_hi,
            cut_out: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_lo < 1 || self.m_lo > self.m_hi {
            return Err(Error::arg(alloc::format!(
                "invalid area range {}..={}",
                self.m_lo,
                self.m_hi
            )));
        }
        Ok(())
    }

    /// Draw the partition and ordering for one pair.
    pub fn sample<R: RngCore + ?Sized>(
        &self,
        sensor: &SensorConfig,
        g: &mut R,
    ) -> (PartitionSpec, MixOrder) {
        let m = sample_num_areas(g, self.m_lo, self.m_hi);
        let seed = g.next_u64();
        let order = match self.order {
            MixOrder::Shuffled(s) => MixOrder::Shuffled(rng::mix64(s ^ g.next_u64())),
            o => o,
        };
        (PartitionSpec::for_sensor(self.kind, sensor, m, seed), order)
    }

    pub fn apply(
        &self,
        x1: &PointCloud,
        x2: &PointCloud,
        spec: &PartitionSpec,
        order: MixOrder,
    ) -> Result<MixResult> {
        if self.cut_out {
            cut_out(x1, x2, spec, order)
        } else {
            laser_mix(x1, x2, spec, order)
        }
    }
}

/// Mix a ground-truth-labeled scan with a pseudo-labeled scan, drawing the
/// number of areas from the plan.
pub fn mix_pair_for_training<R: RngCore + ?Sized>(
    labeled: &PointCloud,
    unlabeled: &PointCloud,
    sensor: &SensorConfig,
    plan: &MixPlan,
    g: &mut R,
) -> Result<MixResult> {
    if !labeled.is_labeled() || !unlabeled.is_labeled() {
        return Err(Error::arg(
            "training pairs need labels (ground truth or pseudo-labels) on both scans",
        ));
    }
    plan.validate()?;
    let (spec, order) = plan.sample(sensor, g);
    plan.apply(labeled, unlabeled, &spec, order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_band(z_low: f32, z_high: f32, label: u16) -> PointCloud {
        PointCloud::from_coords(alloc::vec![[10.0, 0.0, z_low], [10.0, 0.0, z_high]])
            .unwrap()
            .attach_labels(alloc::vec![ClassId(label), ClassId(label + 1)])
            .unwrap()
    }

    fn spec(m: usize) -> PartitionSpec {
        PartitionSpec {
            kind: PartitionKind::Inclination,
            m,
            lo: -30.0,
            hi: 10.0,
            seed: 0,
        }
    }

    #[test]
    fn single_area_is_identity() {
        let x1 = two_band(-3.0, 1.0, 0);
        let x2 = two_band(-2.0, 0.5, 2);
        let r = laser_mix(&x1, &x2, &spec(1), MixOrder::OddEven).unwrap();
        assert_eq!(r.mixed_a, x1);
        assert_eq!(r.mixed_b, x2);
    }

    #[test]
    fn two_areas_expand() {
        // Boundary at -10 degrees: z = -3 at 10 m is -16.7 deg (area 1), z = 1 is 5.7 deg (area 2).
        let x1 = two_band(-3.0, 1.0, 0);
        let x2 = two_band(-2.9, 0.9, 2);
        let r = laser_mix(&x1, &x2, &spec(2), MixOrder::OddEven).unwrap();
        assert_eq!(r.mixed_a.coords(), &[x1.coords()[0], x2.coords()[1]]);
        assert_eq!(r.mixed_b.coords(), &[x2.coords()[0], x1.coords()[1]]);
        assert_eq!(r.mixed_a.labels().unwrap(), &[ClassId(0), ClassId(3)]);
    }

    #[test]
    fn reversed_swaps_for_even_m() {
        let x1 = two_band(-3.0, 1.0, 0);
        let x2 = two_band(-2.9, 0.9, 2);
        let r = laser_mix(&x1, &x2, &spec(2), MixOrder::Reversed).unwrap();
        assert_eq!(r.mixed_a.coords(), &[x2.coords()[0], x1.coords()[1]]);
    }

    #[test]
    fn label_presence_mismatch() {
        let x1 = two_band(-3.0, 1.0, 0);
        let x2 = two_band(-3.0, 1.0, 0).without_labels();
        assert!(matches!(
            laser_mix(&x1, &x2, &spec(2), MixOrder::OddEven),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn area_order_is_permutation() {
        for m in 1..8 {
            let mut o = area_order(MixOrder::Shuffled(m as u64), m);
            o.sort_unstable();
            assert_eq!(o, (1..=m).collect::<Vec<_>>());
        }
        assert_eq!(area_order(MixOrder::Reversed, 4), [4, 3, 2, 1]);
    }

    #[test]
    fn cut_out_drops_other_scan() {
        let x1 = two_band(-3.0, 1.0, 0);
        let x2 = two_band(-2.9, 0.9, 2);
        let r = cut_out(&x1, &x2, &spec(2), MixOrder::OddEven).unwrap();
        assert_eq!(r.mixed_a.coords(), &[x1.coords()[0]]);
        assert_eq!(r.mixed_b.coords(), &[x2.coords()[0]]);
    }

    #[test]
    fn training_pair_needs_labels() {
        let x1 = two_band(-3.0, 1.0, 0);
        let x2 = x1.clone().without_labels();
        let mut g = rng::seeded(0);
        let plan = MixPlan::laser(2, 6);
        assert!(mix_pair_for_training(&x1, &x2, &SensorConfig::desk(), &plan, &mut g).is_err());
    }

    #[test]
    fn pseudo_ignored_rides_along() {
        let x1 = two_band(-3.0, 1.0, 0);
        let x2 = two_band(-2.9, 0.9, 0)
            .attach_labels(alloc::vec![ClassId::IGNORED; 2])
            .unwrap();
        let mut g = rng::seeded(5);
        let plan = MixPlan {
            m_lo: 2,
            m_hi: 2,
            ..MixPlan::laser(2, 2)
        };
        let r = mix_pair_for_training(&x1, &x2, &SensorConfig::desk(), &plan, &mut g).unwrap();
        for (p, l) in r.provenance_a.iter().zip(r.mixed_a.labels().unwrap()) {
            assert_eq!(p.source == Source::Second, l.is_ignored());
        }
    }
}
