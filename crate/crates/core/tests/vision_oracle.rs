mod common;

use common::*;
use lsacpid::vision::{five_points, VisionConfig};

#[test]
fn growth_matches_flood_trace_on_fifty_frames() {
    let forks = vision_oracle(2024).unwrap();
    assert!(forks >= 10);
}

#[test]
fn growth_matches_flood_trace_other_seeds() {
    for seed in [1, 2, 3] {
        vision_oracle(seed).unwrap();
    }
}

#[test]
fn fork_frames_split_into_two_branches() {
    let cfg = VisionConfig::default();
    for sf in frame_suite(7).iter().filter(|f| f.kind == FrameKind::Fork) {
        check_growth(sf, &cfg).unwrap();
    }
}

#[test]
fn quantile_rows_by_hand() {
    for (rows, want) in QUANTILE_CASES {
        let got = five_points(&vertical_path(rows.clone(), 9)).map(|p| p.py);
        assert_eq!(got, want, "rows {rows:?}");
    }
}
