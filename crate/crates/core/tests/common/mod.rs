#![allow(dead_code)]

use lasermix_core::rng::{self, Rng};
use lasermix_core::{ClassId, PointCloud};
use proptest::prelude::*;

/// A point inside a 60 m sensor neighborhood.
pub fn point() -> impl Strategy<Value = [f32; 3]> {
    (-60.0f32..60.0, -60.0f32..60.0, -6.0f32..8.0).prop_map(|(x, y, z)| [x, y, z])
}

pub fn cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec((point(), 0.0f32..1.0), 0..max).prop_map(|v| {
        let (c, i): (Vec<_>, Vec<_>) = v.into_iter().unzip();
        PointCloud::new(c, i).unwrap()
    })
}

pub fn labeled_cloud(max: usize, k: u16) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec((point(), 0.0f32..1.0, 0..k), 0..max).prop_map(|v| {
        let mut coords = Vec::new();
        let mut inten = Vec::new();
        let mut labels = Vec::new();
        for (p, i, l) in v {
            coords.push(p);
            inten.push(i);
            labels.push(ClassId(l));
        }
        PointCloud::new(coords, inten)
            .unwrap()
            .attach_labels(labels)
            .unwrap()
    })
}

/// A seeded random cloud, for loops that want many clouds cheaply.
pub fn random_cloud(g: &mut Rng, n: usize, labeled: bool) -> PointCloud {
    let coords: Vec<[f32; 3]> = (0..n)
        .map(|_| {
            [
                rng::uniform(g, -60.0, 60.0) as f32,
                rng::uniform(g, -60.0, 60.0) as f32,
                rng::uniform(g, -6.0, 8.0) as f32,
            ]
        })
        .collect();
    let inten = (0..n).map(|_| rng::unit(g) as f32).collect();
    let c = PointCloud::new(coords, inten).unwrap();
    if labeled {
        let l = (0..n).map(|_| ClassId(rng::below(g, 5) as u16)).collect();
        c.attach_labels(l).unwrap()
    } else {
        c
    }
}

/// Points as sortable bit patterns, for multiset comparisons.
pub fn point_keys(c: &PointCloud) -> Vec<(u32, u32, u32, u32, u16)> {
    let labels = c.labels();
    let mut v: Vec<_> = (0..c.len())
        .map(|i| {
            let p = c.coords()[i];
            let l = labels.map_or(0, |l| l[i].0);
            (
                p[0].to_bits(),
                p[1].to_bits(),
                p[2].to_bits(),
                c.intensity()[i].to_bits(),
                l,
            )
        })
        .collect();
    v.sort_unstable();
    v
}
