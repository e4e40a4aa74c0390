mod common;

use lasermix::io::{self, FormatError};
use lasermix_core::LabelMap;

#[test]
fn golden_files_match_layout() {
    common::golden_layout().unwrap();
}

#[test]
fn thousand_clouds_round_trip_bytewise() {
    common::round_trip(1000, 11).unwrap();
}

#[test]
fn truncated_and_non_finite_input_is_rejected() {
    let scan = std::fs::read(common::golden("three.bin")).unwrap();
    assert_eq!(
        io::read_scan_bin(&scan[..47]).unwrap_err(),
        FormatError::Length {
            len: 47,
            record: 16
        }
    );
    let mut nan = scan.clone();
    nan[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
    assert_eq!(
        io::read_scan_bin(&nan).unwrap_err(),
        FormatError::NonFinite {
            record: 1,
            field: 1
        }
    );
    assert_eq!(
        io::read_scan_bin_stride(&scan, 3).unwrap_err(),
        FormatError::Stride(3)
    );
    let labels = std::fs::read(common::golden("three.label")).unwrap();
    assert!(io::read_labels_bin(&labels[..10], &LabelMap::synthetic()).is_err());
}

#[test]
fn label_count_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("two.label"), [40u8, 0, 0, 0, 10, 0, 0, 0]).unwrap();
    let err = io::read_labeled_scan(
        &common::golden("three.bin"),
        &dir.path().join("two.label"),
        4,
        &LabelMap::synthetic(),
    )
    .unwrap_err();
    assert!(format!("{err:#}").contains("does not match"));
}
