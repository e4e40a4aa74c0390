#![allow(dead_code)]

use std::path::{Path, PathBuf};

use lasermix::io;
use lasermix_core::rng::{self, Rng};
use lasermix_core::LabelMap;

pub fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// Random finite `f32` bit patterns, including subnormals and signed zeros.
pub fn finite_f32(g: &mut Rng) -> f32 {
    loop {
        let v = f32::from_bits(rng::below(g, 1 << 32) as u32);
        if v.is_finite() {
            return v;
        }
    }
}

/// Scan and label bytes for `n` random records.
pub fn random_files(g: &mut Rng, n: usize, map: &LabelMap) -> (Vec<u8>, Vec<u8>) {
    let mut scan = Vec::with_capacity(16 * n);
    let mut labels = Vec::with_capacity(4 * n);
    let raws: Vec<u32> = map
        .classes
        .iter()
        .map(|e| e.raw)
        .chain([map.ignored_id])
        .collect();
    for _ in 0..n {
        for _ in 0..4 {
            scan.extend_from_slice(&finite_f32(g).to_le_bytes());
        }
        let raw = raws[rng::below(g, raws.len() as u64) as usize];
        labels.extend_from_slice(&raw.to_le_bytes());
    }
    (scan, labels)
}

/// Decodes and re-encodes `trials` random scans; returns the first mismatch.
pub fn round_trip(trials: usize, seed: u64) -> Result<(), String> {
    let map = LabelMap::synthetic();
    let mut g = rng::seeded(seed);
    for t in 0..trials {
        let n = rng::below(&mut g, 300) as usize;
        let (scan, labels) = random_files(&mut g, n, &map);
        let cloud = io::read_scan_bin(&scan).map_err(|e| format!("trial {t}: {e}"))?;
        let l = io::read_labels_bin(&labels, &map).map_err(|e| format!("trial {t}: {e}"))?;
        let cloud = cloud
            .attach_labels(l)
            .map_err(|e| format!("trial {t}: {e}"))?;
        if io::write_scan_bin(&cloud) != scan {
            return Err(format!("trial {t}: scan bytes differ"));
        }
        if io::write_labels_bin(cloud.labels().unwrap(), &map) != labels {
            return Err(format!("trial {t}: label bytes differ"));
        }
    }
    Ok(())
}

/// Checks the golden files against their documented byte layout.
pub fn golden_layout() -> Result<(), String> {
    let map = LabelMap::synthetic();
    let scan = std::fs::read(golden("three.bin")).map_err(|e| e.to_string())?;
    let ring = std::fs::read(golden("three_ring.bin")).map_err(|e| e.to_string())?;
    let labels = std::fs::read(golden("three.label")).map_err(|e| e.to_string())?;
    if scan.len() != 48 || ring.len() != 60 || labels.len() != 12 {
        return Err("golden sizes".into());
    }
    // 1.0f32 little-endian opens the first record.
    if scan[..4] != [0x00, 0x00, 0x80, 0x3f] {
        return Err("first float bytes".into());
    }
    let want = [[1.0, -2.5, 0.25], [100.0, 0.0, -1.75], [0.125, 3.0, 2.0]];
    let want_i = [0.5, 0.0, 1.0];
    for bytes in [&scan[..], &ring[..]] {
        let stride = bytes.len() / 12;
        let c = io::read_scan_bin_stride(bytes, stride).map_err(|e| e.to_string())?;
        if c.coords() != want || c.intensity() != want_i {
            return Err(format!("stride {stride} decode {:?}", c.coords()));
        }
        if io::write_scan_bin(&c) != scan {
            return Err(format!("stride {stride} re-encode"));
        }
    }
    let l = io::read_labels_bin(&labels, &map).map_err(|e| e.to_string())?;
    let expect = [
        lasermix_core::ClassId(0),
        lasermix_core::ClassId(1),
        lasermix_core::ClassId::IGNORED,
    ];
    if l != expect {
        return Err(format!("labels {l:?}"));
    }
    // Instance bits are dropped and the unknown raw id comes back as the ignored id.
    let back = io::write_labels_bin(&l, &map);
    let words: Vec<u32> = back
        .chunks_exact(4)
        .map(|w| u32::from_le_bytes(w.try_into().unwrap()))
        .collect();
    if words != [40, 10, 0] {
        return Err(format!("label re-encode {words:?}"));
    }
    Ok(())
}
