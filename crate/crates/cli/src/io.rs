//! `.bin` scans, `.label` files and label-map JSON.
//!
//! A scan record is `stride` little-endian `f32`s: x, y, z, intensity and,
//! for stride 5, a ring index that is read and dropped. Writers always emit
//! 16-byte records. A label record is a little-endian `u32` whose low 16 bits
//! hold the raw semantic id and high 16 bits an instance id (discarded).

use std::fs;
use std::path::Path;

use anyhow::Context;
use lasermix_core::{ClassId, LabelMap, PointCloud};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("{len} bytes is not a multiple of the {record}-byte record size")]
    Length { len: usize, record: usize },
    #[error("record {record}: field {field} is not finite")]
    NonFinite { record: usize, field: usize },
    #[error("unsupported record stride {0} (expected 4 or 5 floats)")]
    Stride(usize),
    #[error("label count {labels} does not match point count {points}")]
    Count { labels: usize, points: usize },
}

pub const SCAN_RECORD: usize = 16;
pub const LABEL_RECORD: usize = 4;

fn f32_at(bytes: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"))
}

pub fn read_scan_bin(bytes: &[u8]) -> Result<PointCloud, FormatError> {
    read_scan_bin_stride(bytes, 4)
}

/// Reads records of `stride` floats (4, or 5 with a trailing ring field).
pub fn read_scan_bin_stride(bytes: &[u8], stride: usize) -> Result<PointCloud, FormatError> {
    if stride != 4 && stride != 5 {
        return Err(FormatError::Stride(stride));
    }
    let record = 4 * stride;
    if !bytes.len().is_multiple_of(record) {
        return Err(FormatError::Length {
            len: bytes.len(),
            record,
        });
    }
    let n = bytes.len() / record;
    let mut coords = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for (i, r) in bytes.chunks_exact(record).enumerate() {
        let v = [f32_at(r, 0), f32_at(r, 4), f32_at(r, 8), f32_at(r, 12)];
        if let Some(field) = v.iter().position(|x| !x.is_finite()) {
            return Err(FormatError::NonFinite { record: i, field });
        }
        coords.push([v[0], v[1], v[2]]);
        intensity.push(v[3]);
    }
    Ok(PointCloud::new(coords, intensity).expect("validated above"))
}

pub fn write_scan_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * SCAN_RECORD);
    for (p, i) in cloud.coords().iter().zip(cloud.intensity()) {
        for v in [p[0], p[1], p[2], *i] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Raw ids that the map does not know become IGNORED; their count is logged.
pub fn read_labels_bin(bytes: &[u8], map: &LabelMap) -> Result<Vec<ClassId>, FormatError> {
    if !bytes.len().is_multiple_of(LABEL_RECORD) {
        return Err(FormatError::Length {
            len: bytes.len(),
            record: LABEL_RECORD,
        });
    }
    let mut unmapped = 0usize;
    let labels = bytes
        .chunks_exact(LABEL_RECORD)
        .map(|r| {
            let raw = u32::from_le_bytes(r.try_into().expect("4 bytes")) & 0xFFFF;
            map.lookup(raw).unwrap_or_else(|| {
                unmapped += 1;
                ClassId::IGNORED
            })
        })
        .collect();
    if unmapped > 0 {
        log::warn!("{unmapped} labels with unmapped raw ids routed to ignored");
    }
    Ok(labels)
}

/// Emits each class's smallest raw id with a zero instance id.
pub fn write_labels_bin(labels: &[ClassId], map: &LabelMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.len() * LABEL_RECORD);
    for &l in labels {
        out.extend_from_slice(&(map.raw_of(l) & 0xFFFF).to_le_bytes());
    }
    out
}

pub fn load_label_map(path: &Path) -> anyhow::Result<LabelMap> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let map: LabelMap =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    map.validate()?;
    Ok(map)
}

pub fn read_scan_file(path: &Path, stride: usize) -> anyhow::Result<PointCloud> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    read_scan_bin_stride(&bytes, stride).with_context(|| format!("decoding {}", path.display()))
}

/// A scan with its labels attached.
pub fn read_labeled_scan(
    scan: &Path,
    labels: &Path,
    stride: usize,
    map: &LabelMap,
) -> anyhow::Result<PointCloud> {
    let cloud = read_scan_file(scan, stride)?;
    let bytes = fs::read(labels).with_context(|| format!("reading {}", labels.display()))?;
    let l =
        read_labels_bin(&bytes, map).with_context(|| format!("decoding {}", labels.display()))?;
    if l.len() != cloud.len() {
        return Err(FormatError::Count {
            labels: l.len(),
            points: cloud.len(),
        })
        .with_context(|| format!("pairing {} with {}", scan.display(), labels.display()));
    }
    Ok(cloud.attach_labels(l)?)
}

/// Writes `<stem>.bin` and, for labeled clouds, `<stem>.label`.
pub fn write_scan_files(
    dir: &Path,
    stem: &str,
    cloud: &PointCloud,
    map: &LabelMap,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{stem}.bin")), write_scan_bin(cloud))?;
    if let Some(l) = cloud.labels() {
        fs::write(dir.join(format!("{stem}.label")), write_labels_bin(l, map))?;
    }
    Ok(())
}
