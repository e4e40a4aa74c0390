mod common;

use common::{cloud, labeled_cloud};
use lasermix_core::partition::{assign_areas, PartitionKind, PartitionSpec};
use lasermix_core::range::{range_project, range_unproject};
use lasermix_core::synth::{self, SceneParams, SimOptions};
use lasermix_core::voxel::{cylindrical_voxelize, CylBounds, VoxelResolution};
use lasermix_core::{ClassId, PointCloud, SensorConfig};
use proptest::prelude::*;

/// Voxel index computed from first principles, clamped to the grid.
fn oracle_index(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    let t = ((v - lo) / (hi - lo) * n as f64).floor();
    if t < 0.0 {
        0
    } else {
        (t as usize).min(n - 1)
    }
}

/// Brute-force grid: gather each voxel's labels by scanning every point, then vote.
fn oracle_grid(c: &PointCloud, res: VoxelResolution, b: CylBounds) -> (Vec<u32>, Vec<ClassId>) {
    let n = res.n_rho * res.n_alpha * res.n_z;
    let mut members: Vec<Vec<ClassId>> = vec![Vec::new(); n];
    for i in 0..c.len() {
        let p = c.point(i);
        let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
        let mut alpha = p[1].atan2(p[0]).to_degrees();
        if alpha >= 180.0 {
            alpha -= 360.0;
        }
        if p[0] == 0.0 && p[1] == 0.0 {
            alpha = 0.0;
        }
        let ir = oracle_index(rho, b.rho.0, b.rho.1, res.n_rho);
        let ia = oracle_index(alpha, b.alpha.0, b.alpha.1, res.n_alpha);
        let iz = oracle_index(p[2], b.z.0, b.z.1, res.n_z);
        let label = c.labels().map_or(ClassId::IGNORED, |l| l[i]);
        members[(ir * res.n_alpha + ia) * res.n_z + iz].push(label);
    }
    let counts = members.iter().map(|m| m.len() as u32).collect();
    let labels = members
        .iter()
        .map(|m| {
            let mut best = ClassId::IGNORED;
            let mut best_n = 0;
            for cand in 0..64u16 {
                let k = m.iter().filter(|&&l| l == ClassId(cand)).count();
                if k > best_n {
                    best = ClassId(cand);
                    best_n = k;
                }
            }
            best
        })
        .collect();
    (counts, labels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn projection_accounts_for_every_point(c in cloud(300), h in 1usize..40, w in 1usize..200) {
        let (img, st) = range_project(&c, &SensorConfig::desk(), h, w).unwrap();
        prop_assert_eq!(st.occupied + st.shadowed + st.dropped, c.len());
        prop_assert_eq!(img.occupied_count(), st.occupied);
        prop_assert_eq!(range_unproject(&img).len(), st.occupied);
    }

    #[test]
    fn nearest_point_wins(c in labeled_cloud(200, 5)) {
        let s = SensorConfig::desk();
        let (img, _) = range_project(&c, &s, 8, 16).unwrap();
        let pix = lasermix_core::range::pixel_indices(&c, &s, 8, 16);
        for (i, p) in pix.iter().enumerate() {
            if let Some(p) = *p {
                let q = c.point(i);
                let r = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
                let w = img.point_index[p] as usize;
                let qw = c.point(w);
                let rw = (qw[0] * qw[0] + qw[1] * qw[1] + qw[2] * qw[2]).sqrt();
                prop_assert!(rw < r || (rw == r && w <= i));
            }
        }
    }

    #[test]
    fn voxelizer_matches_brute_force(
        c in labeled_cloud(300, 5),
        nr in 1usize..12,
        na in 1usize..12,
        nz in 1usize..6,
    ) {
        let res = VoxelResolution { n_rho: nr, n_alpha: na, n_z: nz };
        let b = CylBounds { rho: (0.0, 50.0), alpha: (-180.0, 180.0), z: (-5.0, 3.0) };
        let grid = cylindrical_voxelize(&c, res, b).unwrap();
        let (counts, labels) = oracle_grid(&c, res, b);
        prop_assert_eq!(&grid.counts, &counts);
        prop_assert_eq!(&grid.labels, &labels);
    }
}

#[test]
fn voxelizer_on_synthetic_scan() {
    let (_, scan) = synth::generate_scan(
        &SceneParams::default(),
        &SensorConfig::desk(),
        &SimOptions::default(),
        3,
        0,
    )
    .unwrap();
    let res = VoxelResolution {
        n_rho: 48,
        n_alpha: 36,
        n_z: 8,
    };
    let b = CylBounds::default();
    let grid = cylindrical_voxelize(&scan, res, b).unwrap();
    let (counts, labels) = oracle_grid(&scan, res, b);
    assert_eq!(grid.counts, counts);
    assert_eq!(grid.labels, labels);
    assert_eq!(
        grid.counts.iter().map(|&c| c as usize).sum::<usize>(),
        scan.len()
    );
}

/// On an aligned scan every beam fills one row, and laser areas occupy
/// disjoint bands of whole rows ordered from the bottom up.
#[test]
fn row_band_lemma() {
    let sensor = SensorConfig::desk();
    let opts = SimOptions {
        range_noise: 0.0,
        ..SimOptions::default()
    };
    for seed in 0..5 {
        let (_, scan) =
            synth::generate_scan(&SceneParams::default(), &sensor, &opts, seed, 0).unwrap();
        let (img, st) = range_project(&scan, &sensor, sensor.num_beams, sensor.width).unwrap();
        assert_eq!(st.shadowed, 0);
        assert_eq!(st.occupied, scan.len());
        for m in 1..=8 {
            let spec = PartitionSpec::for_sensor(PartitionKind::Inclination, &sensor, m, 0);
            let areas = assign_areas(&scan, &spec).unwrap();
            let mut row_area = vec![None; img.h];
            for p in 0..img.h * img.w {
                if img.is_occupied(p) {
                    let a = areas.area_of[img.point_index[p] as usize];
                    let row = p / img.w;
                    assert!(
                        row_area[row].is_none_or(|x| x == a),
                        "row {row} spans two areas"
                    );
                    row_area[row] = Some(a);
                }
            }
            let seen: Vec<u16> = row_area.iter().flatten().copied().collect();
            assert!(
                seen.windows(2).all(|w| w[0] >= w[1]),
                "areas not banded: {seen:?}"
            );
            // Rows of one area form a contiguous run.
            for a in 1..=m as u16 {
                let rows: Vec<usize> = (0..img.h).filter(|&r| row_area[r] == Some(a)).collect();
                if let (Some(f), Some(l)) = (rows.first(), rows.last()) {
                    assert!((*f..=*l).all(|r| row_area[r].is_none_or(|x| x == a)));
                }
            }
        }
    }
}
