use trajgrid::data::{
    build_dataset, build_windows, generate_scenarios, read_jsonl, resample_track, split_by_track,
    write_jsonl, Manifest, ScenarioKind, ScenarioMix, ScenarioSpec, Track,
};
use trajgrid::grid::{CellLabel, GridGeometry, GridIndex};
use trajgrid::Execution;

fn spec(n: usize) -> ScenarioSpec {
    ScenarioSpec {
        n_tracks: n,
        ..ScenarioSpec::default()
    }
}

fn resampled(n: usize, seed: u64) -> Vec<Track> {
    generate_scenarios(&spec(n), seed)
        .unwrap()
        .iter()
        .map(|s| resample_track(&s.track).unwrap())
        .collect()
}

/// Label by direct floor arithmetic on the default geometry.
fn label_oracle(x: f64, y: f64) -> CellLabel {
    let ix = (x / 5.0).floor() + 1.0;
    let iy = ((y + 9.1875) / 0.875).floor() + 1.0;
    if (1.0..=36.0).contains(&ix) && (1.0..=21.0).contains(&iy) {
        CellLabel::InGrid(GridIndex::new(ix as usize, iy as usize))
    } else {
        CellLabel::OutOfBoundary
    }
}

#[test]
fn labels_match_an_independent_lookup() {
    let g = GridGeometry::default();
    for track in resampled(8, 21) {
        for delta in [0.5, 1.0, 2.0] {
            for w in build_windows(&track.samples, delta, 20, &g).unwrap() {
                let target = w.t_end + delta;
                let label = track
                    .samples
                    .iter()
                    .find(|s| (s.t - target).abs() < 1e-6)
                    .expect("label sample exists");
                assert_eq!(w.label_point, (label.x, label.y));
                assert_eq!(w.label_grid, label_oracle(label.x, label.y));
                assert!(w.t_label > w.t_end);
            }
        }
    }
}

#[test]
fn generated_jsonl_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, seed: u64| {
        let tracks: Vec<Track> = generate_scenarios(&spec(10), seed)
            .unwrap()
            .into_iter()
            .map(|s| s.track)
            .collect();
        let path = dir.path().join(name);
        write_jsonl(&path, &tracks).unwrap();
        std::fs::read(path).unwrap()
    };
    assert_eq!(write("a.jsonl", 4), write("b.jsonl", 4));
    assert_ne!(write("c.jsonl", 4), write("d.jsonl", 5));
}

#[test]
fn resampled_round_trip_through_jsonl() {
    let tracks = resampled(5, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    write_jsonl(&path, &tracks).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), tracks);
}

#[test]
fn split_keeps_vehicles_whole() {
    let g = GridGeometry::default();
    let windows = build_dataset(&resampled(40, 6), 1.0, 20, &g, Execution::default()).unwrap();
    let split = split_by_track(windows, 0.85, 6).unwrap();
    let train: std::collections::BTreeSet<_> = split.train.iter().map(|w| &w.track_id).collect();
    let val: std::collections::BTreeSet<_> = split.validation.iter().map(|w| &w.track_id).collect();
    assert!(train.is_disjoint(&val));
    assert_eq!(train.len() + val.len(), 40);
    assert_eq!(val.len(), 6);
}

#[test]
fn sequential_and_parallel_datasets_agree() {
    let g = GridGeometry::default();
    let tracks = resampled(12, 3);
    let a = build_dataset(&tracks, 0.5, 20, &g, Execution::Sequential).unwrap();
    let b = build_dataset(&tracks, 0.5, 20, &g, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn every_default_track_is_long_enough_for_two_second_labels() {
    let g = GridGeometry::default();
    for track in resampled(30, 9) {
        assert!(!build_windows(&track.samples, 2.0, 20, &g).unwrap().is_empty());
    }
}

#[test]
fn lane_change_mix_generates_only_lane_changes() {
    let spec = ScenarioSpec {
        n_tracks: 15,
        mix: ScenarioMix::only(ScenarioKind::LaneChange),
        ..ScenarioSpec::default()
    };
    let scenarios = generate_scenarios(&spec, 1).unwrap();
    let manifest = Manifest::new(&spec, 1, &scenarios);
    assert_eq!(manifest.counts["lane_change"], 15);
    assert!(scenarios.iter().all(|s| s.params.maneuver.is_some()));
}

#[test]
fn evaluation_metrics_match_an_independent_recomputation() {
    use trajgrid::eval::{evaluate, evaluate_grid, metrics_csv};
    use trajgrid::grid::OccupancyMap;
    use trajgrid::kalman::KfConfig;
    use trajgrid::neural::{Architecture, HeadKind, NetworkParams, Normalization};

    let g = GridGeometry::default();
    let windows = build_dataset(&resampled(10, 8), 1.0, 20, &g, Execution::default()).unwrap();
    let rows: Vec<[f64; 6]> = windows
        .iter()
        .flat_map(|w| w.features.iter().map(|f| f.to_array()))
        .collect();
    let arch = Architecture {
        input_fc: vec![8],
        lstm: vec![8, 8],
        output_fc: vec![16],
        head: HeadKind::Grid,
    };
    let params = NetworkParams::init(
        &arch,
        g,
        1.0,
        Normalization::fit(6, rows.iter().map(|r| &r[..])),
        Normalization::identity(2),
        3,
    )
    .unwrap();
    let kf = KfConfig::default();
    let e = evaluate_grid(&params, &windows, &kf, Execution::default()).unwrap();

    // Expected index distance, normalized by in-grid mass, written out per map.
    let recompute = |maps: &[OccupancyMap]| -> [f64; 3] {
        let mut acc = [0.0; 3];
        for (map, label) in maps.iter().zip(&e.labels) {
            let CellLabel::InGrid(t) = label else { panic!("OOB label scored") };
            let mass: f64 = map.p.iter().sum();
            for ix in 1..=g.m_x {
                for iy in 1..=g.m_y {
                    let p = map.get(GridIndex::new(ix, iy)) / mass;
                    let dx = ix as f64 - t.i_x as f64;
                    let dy = iy as f64 - t.i_y as f64;
                    acc[0] += p * dx.abs();
                    acc[1] += p * dy.abs();
                    acc[2] += p * (dx * dx + dy * dy).sqrt();
                }
            }
        }
        acc.map(|v| v / maps.len() as f64)
    };
    let csv = metrics_csv(&evaluate(&params, &windows, &kf, Execution::default()).unwrap());
    let table: Vec<Vec<String>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect();
    assert_eq!(table.len(), 2);
    for (row, maps) in table.iter().zip([&e.lstm_maps, &e.kf_maps]) {
        let expected = recompute(maps);
        for (k, v) in row[2..].iter().enumerate() {
            let v: f64 = v.parse().unwrap();
            assert!((v - expected[k]).abs() < 1e-9, "{} column {k}: {v} vs {}", row[0], expected[k]);
        }
    }
    assert_eq!(e.labels.len() + e.excluded_out_of_boundary, windows.len());
}
