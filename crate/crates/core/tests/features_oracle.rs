mod common;

use agitation::features::{self, stat_features, FeatureCatalog, FeatureMatrix, RowLabel, STAT_NAMES};
use agitation::preprocess::{self, Stream};
use agitation::seed;
use agitation::synth::{self, EpisodeSpec, SessionSpec};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn assert_stats(window: &[f64], got: &[f64; 22], tag: &str) {
    let want = common::stats_oracle(window);
    for k in 0..22 {
        assert!(close(got[k], want[k], 1e-9), "{tag} {}: got {} want {}", STAT_NAMES[k], got[k], want[k]);
    }
}

#[test]
fn svd_oracle_recovers_known_spectrum() {
    // Columns of an orthogonal matrix scaled by 1, 4 and 9.
    let q = [[2.0 / 3.0, -2.0 / 3.0, 1.0 / 3.0], [2.0 / 3.0, 1.0 / 3.0, -2.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]];
    let d = [1.0, 4.0, 9.0];
    let cols: Vec<Vec<f64>> = (0..3).map(|k| (0..3).map(|i| q[i][k] * d[k]).collect()).collect();
    let mut sv = common::jacobi_singular_values(cols);
    sv.sort_by(f64::total_cmp);
    for (s, w) in sv.iter().zip(d) {
        assert!((s - w).abs() < 1e-12);
    }
}

#[test]
fn hundred_random_windows_match_the_oracle() {
    let mut rng = seed::rng(seed::derive_named(7, "feature-windows"));
    for w in 0..100 {
        let lo: f64 = rng.random_range(-50.0..50.0);
        let span: f64 = rng.random_range(0.01..20.0);
        let window: Vec<f64> = (0..240).map(|_| lo + span * rng.random::<f64>()).collect();
        assert_stats(&window, &stat_features(&window, &[false; 240]), &format!("window {w}"));
    }
}

#[test]
fn gap_samples_are_excluded() {
    let mut rng = seed::rng(3);
    let window: Vec<f64> = (0..240).map(|_| rng.random_range(-1.0..1.0)).collect();
    let gaps: Vec<bool> = (0..240).map(|i| (60..150).contains(&i)).collect();
    let kept: Vec<f64> = window.iter().zip(&gaps).filter(|(_, &g)| !g).map(|(&v, _)| v).collect();
    assert_stats(&kept, &stat_features(&window, &gaps), "gapped");

    let mostly_gap: Vec<bool> = (0..240).map(|i| i < 121).collect();
    assert!(stat_features(&window, &mostly_gap).iter().all(|v| v.is_nan()));
}

#[test]
fn catalog_has_198_stream_major_columns() {
    let names = FeatureCatalog::default().column_names();
    assert_eq!(names.len(), 198);
    for (i, s) in Stream::ALL.iter().enumerate() {
        for (k, stat) in STAT_NAMES.iter().enumerate() {
            assert_eq!(names[22 * i + k], format!("{}.{}", s.as_str(), stat));
        }
    }
}

fn synthetic_matrix() -> FeatureMatrix {
    let spec = SessionSpec::new("P01", "S1", 600.0, vec![EpisodeSpec::new(120.0, 300.0)]);
    let s = synth::generate_session(11, &spec).unwrap();
    let aligned = preprocess::align_session(&s.recording).unwrap();
    let m = features::extract_features(&aligned, &Default::default(), &FeatureCatalog::default()).unwrap();
    features::label_windows(&m, &s.labels, &Default::default()).unwrap()
}

#[test]
fn extracted_rows_match_the_oracle_per_stream() {
    let spec = SessionSpec::new("P01", "S1", 300.0, Vec::new());
    let s = synth::generate_session(5, &spec).unwrap();
    let aligned = preprocess::align_session(&s.recording).unwrap();
    let m = features::extract_features(&aligned, &Default::default(), &FeatureCatalog::default()).unwrap();
    assert_eq!(m.ncols(), 198);
    assert_eq!(m.nrows(), aligned.len() / 240);
    for r in 0..m.nrows() {
        for (i, s) in Stream::ALL.iter().enumerate() {
            let window = &aligned.stream(*s)[r * 240..(r + 1) * 240];
            let got: [f64; 22] = std::array::from_fn(|k| m.values[[r, 22 * i + k]]);
            assert_stats(window, &got, &format!("row {r} {}", s.as_str()));
        }
    }
}

#[test]
fn five_minute_episode_labels_five_windows() {
    let m = synthetic_matrix();
    assert_eq!(m.nrows(), 10);
    let agitation: Vec<usize> = (0..10).filter(|&i| m.row_labels[i] == RowLabel::Agitation).collect();
    assert_eq!(agitation, vec![2, 3, 4, 5, 6]);
}

#[test]
fn column_filter_removes_exactly_the_scanned_columns() {
    let mut m = synthetic_matrix();
    // A constant stream makes its skewness and kurtosis undefined.
    let temp = Stream::ALL.iter().position(|s| *s == Stream::Temp).unwrap();
    for r in 0..m.nrows() {
        for k in 0..22 {
            m.values[[r, 22 * temp + k]] = common::stats_oracle(&[33.0; 240])[k];
        }
    }
    let scanned: Vec<String> = (0..m.ncols())
        .filter(|&j| m.values.column(j).iter().any(|v| !v.is_finite()))
        .map(|j| m.column_names[j].clone())
        .collect();
    assert_eq!(scanned, vec!["TEMP.skewness".to_string(), "TEMP.kurtosis".to_string()]);
    let f = features::drop_invalid_columns(&m).unwrap();
    assert_eq!(f.removed_columns, scanned);
    assert_eq!(f.ncols(), 196);
    assert_eq!(f.nrows(), m.nrows());
    assert_eq!(f.row_labels, m.row_labels);
}

fn arb_matrix() -> impl Strategy<Value = Array2<f64>> {
    (1usize..6, 1usize..8).prop_flat_map(|(r, c)| {
        proptest::collection::vec(
            prop_oneof![8 => -1e3f64..1e3, 1 => Just(f64::NAN), 1 => Just(f64::INFINITY)],
            r * c,
        )
        .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

proptest! {
    #[test]
    fn filter_keeps_rows_and_only_finite_columns(values in arb_matrix()) {
        let n = values.nrows();
        let m = common::matrix(values.clone(), vec![RowLabel::Unlabeled; n]);
        let bad: Vec<usize> = (0..values.ncols()).filter(|&j| values.column(j).iter().any(|v| !v.is_finite())).collect();
        match features::drop_invalid_columns(&m) {
            Ok(f) => {
                prop_assert_eq!(f.nrows(), n);
                prop_assert_eq!(f.ncols() + bad.len(), values.ncols());
                prop_assert!(f.values.iter().all(|v| v.is_finite()));
                let removed: Vec<String> = bad.iter().map(|&j| format!("f{j}")).collect();
                prop_assert_eq!(f.removed_columns, removed);
            }
            Err(_) => prop_assert_eq!(bad.len(), values.ncols()),
        }
    }

    #[test]
    fn stats_are_shift_consistent(v in proptest::collection::vec(-10.0f64..10.0, 240), c in -100.0f64..100.0) {
        // Moments and ranges ignore a constant shift.
        let a = stat_features(&v, &[false; 240]);
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let b = stat_features(&shifted, &[false; 240]);
        for k in [1usize, 4, 7, 8, 9, 11, 15, 16, 20] {
            prop_assert!(close(a[k], b[k], 1e-6), "{}: {} vs {}", STAT_NAMES[k], a[k], b[k]);
        }
    }
}
