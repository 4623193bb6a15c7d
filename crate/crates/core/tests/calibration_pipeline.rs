use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use skisim_core::calibration::{
    calibrate, demand_from_first_swipes, filter_tracks, fit_speed_model, map_match, match_tracks, read_gps_csv,
    read_level_usage, swipe_rmse, CalibrationProblem, GpsRecord, GpsTrack, LevelUsage, ObservedSwipes, SearchConfig,
    SearchStart, SlopeGeometry, SlopeLine, MIN_ACTIVE_S,
};
use skisim_core::population::sample_speed;
use skisim_core::{CalibrationError, Color, Level, PerColor, PerLevel, Scenario, SpeedModel, UtilityParams};

fn line(id: &str, color: Color, points: &[[f64; 2]]) -> SlopeLine {
    SlopeLine { slope_id: id.into(), color, points: points.to_vec() }
}

fn track(id: &str, points: impl IntoIterator<Item = (f64, f64, f64)>) -> GpsTrack {
    GpsTrack {
        skier_id: id.into(),
        records: points.into_iter().map(|(t, x, y)| GpsRecord { timestamp_s: t, x_m: x, y_m: y }).collect(),
    }
}

#[test]
fn match_by_distance_and_tolerance() {
    let geo = SlopeGeometry::new(vec![
        line("b", Color::Red, &[[0.0, 40.0], [1000.0, 40.0]]),
        line("a", Color::Blue, &[[0.0, 0.0], [1000.0, 0.0]]),
    ])
    .unwrap();
    let t = track("s", [(0.0, 500.0, 5.0), (1.0, 500.0, -45.0), (2.0, 500.0, 20.0), (3.0, 500.0, 35.0)]);
    let got = map_match(&t, &geo, 30.0);
    let id = |m: Option<usize>| m.map(|i| geo.lines()[i].slope_id.as_str());
    // 5 m from a; 45 m from everything; equidistant (20 m) goes to the
    // lower id; 5 m from b.
    assert_eq!(got.into_iter().map(id).collect::<Vec<_>>(), vec![Some("a"), None, Some("a"), Some("b")]);
}

#[test]
fn empty_geometry_is_an_error() {
    assert_eq!(SlopeGeometry::new(vec![]).unwrap_err(), CalibrationError::EmptyGeometry);
    assert_eq!(SlopeGeometry::from_geojson(r#"{"features": []}"#).unwrap_err(), CalibrationError::EmptyGeometry);
}

#[test]
fn geojson_is_read() {
    let text = r#"{"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {"slope_id": "S2", "color": "black"},
         "geometry": {"type": "LineString", "coordinates": [[0, 0], [0, 100]]}},
        {"type": "Feature", "properties": {"slope_id": "S1", "color": "green"},
         "geometry": {"type": "LineString", "coordinates": [[0, 0], [100, 0], [100, 100]]}}]}"#;
    let geo = SlopeGeometry::from_geojson(text).unwrap();
    assert_eq!(geo.lines()[0].slope_id, "S1");
    assert_eq!(geo.lines()[1].color, Color::Black);
    assert_eq!(geo.distance(0, [50.0, 10.0]), 10.0);
}

#[test]
fn noisy_track_stays_on_its_slope() {
    // True slope runs along y = 0; a parallel run 90 m away. Noise 10 m.
    let geo = SlopeGeometry::new(vec![
        line("true", Color::Blue, &[[0.0, 0.0], [1500.0, 0.0], [3000.0, -300.0]]),
        line("other", Color::Red, &[[0.0, 90.0], [1500.0, 90.0], [3000.0, -210.0]]),
    ])
    .unwrap();
    let truth = geo.lines().iter().position(|l| l.slope_id == "true").unwrap();
    let noise = Normal::new(0.0, 10.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let points = (0..2000).map(|i| {
        let s = i as f64 * 1.5;
        let (x, y) = if s <= 1500.0 { (s, 0.0) } else { (s, -(s - 1500.0) * 0.2) };
        (i as f64 * 2.0, x + noise.sample(&mut rng), y + noise.sample(&mut rng))
    });
    let t = track("s", points);
    let hits = map_match(&t, &geo, 30.0).iter().filter(|m| **m == Some(truth)).count();
    assert!(hits as f64 >= 0.95 * 2000.0, "{hits} of 2000");
}

#[test]
fn activity_filter_keeps_exactly_the_active() {
    // 1986 skiers, 1259 of them with more than 30 minutes on slopes.
    let geo = SlopeGeometry::new(vec![line("S", Color::Blue, &[[0.0, 0.0], [100_000.0, 0.0]])]).unwrap();
    let mut ids: Vec<usize> = (0..1986).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let active: BTreeSet<String> = ids[..1259].iter().map(|i| format!("skier{i:04}")).collect();
    let tracks: Vec<GpsTrack> = (0..1986)
        .map(|i| {
            let id = format!("skier{i:04}");
            // 30 s fixes: 62 segments are 31 min, 58 are 29 min.
            let n = if active.contains(&id) { 63 } else { 59 };
            track(&id, (0..n).map(|k| (k as f64 * 30.0, k as f64 * 90.0, 0.0)))
        })
        .collect();
    let kept = filter_tracks(match_tracks(tracks, &geo, 30.0), MIN_ACTIVE_S);
    let kept_ids: BTreeSet<String> = kept.iter().map(|t| t.track.skier_id.clone()).collect();
    assert_eq!(kept.len(), 1259);
    assert_eq!(kept_ids, active);
}

#[test]
fn gaps_and_slope_changes_do_not_count() {
    let geo = SlopeGeometry::new(vec![
        line("A", Color::Blue, &[[0.0, 0.0], [10_000.0, 0.0]]),
        line("B", Color::Red, &[[0.0, 1000.0], [10_000.0, 1000.0]]),
    ])
    .unwrap();
    let t = track("s", [(0.0, 0.0, 0.0), (30.0, 100.0, 0.0), (200.0, 200.0, 0.0), (230.0, 300.0, 1000.0), (250.0, 9000.0, 500.0)]);
    let m = &match_tracks(vec![t], &geo, 30.0)[0];
    // Only the first pair: 130 s gap, then a slope change, then off-slope.
    assert_eq!(m.segments().collect::<Vec<_>>(), vec![(0, 30.0, 100.0)]);
}

/// One slope per color and survey usage that ties each level to one color,
/// so the level of every track is known.
fn diagonal_setup() -> (SlopeGeometry, PerLevel<LevelUsage>) {
    let geo = SlopeGeometry::new(
        Color::ALL
            .iter()
            .enumerate()
            .map(|(i, &c)| line(&format!("S{i}"), c, &[[0.0, i as f64 * 1000.0], [1e6, i as f64 * 1000.0]]))
            .collect(),
    )
    .unwrap();
    let usage = PerLevel::from_fn(|l| LevelUsage {
        population_share: 0.25,
        usage: PerColor::from_fn(|c| if c.index() == l.index() { 1.0 } else { 0.0 }),
    });
    (geo, usage)
}

fn track_on(color: Color, id: &str, speeds: &[f64], dt: f64) -> GpsTrack {
    let y = color.index() as f64 * 1000.0;
    let mut x = 0.0;
    let mut pts = vec![(0.0, x, y)];
    for (k, v) in speeds.iter().enumerate() {
        x += v * dt;
        pts.push(((k + 1) as f64 * dt, x, y));
    }
    track(id, pts)
}

#[test]
fn constant_speed_gives_zero_spread() {
    let (geo, usage) = diagonal_setup();
    let tracks: Vec<GpsTrack> = Color::ALL
        .iter()
        .map(|&c| track_on(c, c.name(), &vec![2.0 + c.index() as f64; 50], 10.0))
        .collect();
    let fit = fit_speed_model(&match_tracks(tracks, &geo, 30.0), &geo, &usage, 0.3, 0).unwrap();
    for (level, color) in Level::ALL.into_iter().zip(Color::ALL) {
        let law = fit.model.cell(level, color).unwrap();
        assert!((law.mean - (2.0 + color.index() as f64)).abs() < 1e-9);
        assert!(law.sd < 1e-9);
    }
    assert_eq!(fit.tracks_used, 4);
    assert_eq!(fit.insufficient.len(), 12);
}

#[test]
fn single_sample_cell_is_left_missing() {
    let (geo, usage) = diagonal_setup();
    let mut tracks: Vec<GpsTrack> = Color::ALL.iter().map(|&c| track_on(c, c.name(), &[3.0; 20], 10.0)).collect();
    tracks[0] = track_on(Color::Green, "one", &[3.0], 10.0);
    let fit = fit_speed_model(&match_tracks(tracks, &geo, 30.0), &geo, &usage, 0.3, 0);
    // The only beginner cell has one sample, so the beginner level is empty.
    assert_eq!(fit.unwrap_err(), CalibrationError::LevelWithoutData(Level::Beginner));

    let mut usage = usage;
    usage.beginner.usage.blue = 1e-9;
    let mut tracks: Vec<GpsTrack> = Color::ALL.iter().map(|&c| track_on(c, c.name(), &[3.0; 20], 10.0)).collect();
    tracks.push(track_on(Color::Green, "one", &[3.0], 10.0));
    let fit = fit_speed_model(&match_tracks(tracks, &geo, 30.0), &geo, &usage, 0.3, 0).unwrap();
    assert_eq!(fit.samples.beginner.green, 1 + 20);
}

#[test]
fn gps_pipeline_recovers_a_truncated_law() {
    // 100 expert tracks on the blue slope, 100 segments each, segment
    // speeds drawn from the expert/blue law.
    let (geo, usage) = diagonal_setup();
    let truth = SpeedModel::gps_survey();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tracks: Vec<GpsTrack> = (0..100)
        .map(|i| {
            let v: Vec<f64> = (0..100).map(|_| sample_speed(&truth, Level::Expert, Color::Blue, &mut rng)).collect();
            let mut t = track_on(Color::Blue, &format!("e{i}"), &v, 10.0);
            for r in &mut t.records {
                r.y_m = 1000.0 * Color::Black.index() as f64;
            }
            t
        })
        .collect();
    let fit = fit_speed_model(&match_tracks(tracks, &geo, 30.0), &geo, &usage, 0.3, 1).unwrap_err();
    // Only the expert level has data here.
    assert_eq!(fit, CalibrationError::LevelWithoutData(Level::Beginner));

    let mut tracks = Vec::new();
    for i in 0..100 {
        let v: Vec<f64> = (0..100).map(|_| sample_speed(&truth, Level::Expert, Color::Blue, &mut rng)).collect();
        tracks.push(track_on(Color::Black, &format!("e{i}"), &v, 10.0));
    }
    for c in [Color::Green, Color::Blue, Color::Red] {
        tracks.push(track_on(c, c.name(), &[3.0; 10], 10.0));
    }
    let fit = fit_speed_model(&match_tracks(tracks, &geo, 30.0), &geo, &usage, 0.3, 1).unwrap();
    let law = fit.model.cell(Level::Expert, Color::Black).unwrap();
    assert_eq!(fit.samples.expert.black, 10_000);
    assert!((law.mean - 4.39).abs() / 4.39 <= 0.05, "{law:?}");
    assert!((law.sd - 5.15).abs() / 5.15 <= 0.10, "{law:?}");
}

#[test]
fn gps_csv_drops_bad_records() {
    let csv = "skier_id,timestamp_s,x_m,y_m\na,0,0,0\na,10,5,0\na,10,6,0\nb,3,1,1\na,5,1,0\na,20,NaN,0\na,30,9,0\n";
    let (tracks, dropped) = read_gps_csv(csv.as_bytes()).unwrap();
    assert_eq!(dropped, 3);
    assert_eq!(tracks.len(), 2);
    assert_eq!(tracks[0].records.iter().map(|r| r.timestamp_s).collect::<Vec<_>>(), vec![0.0, 10.0, 30.0]);
    let err = read_gps_csv("skier_id,timestamp_s,x_m,y_m\na,0,0,0\na,x,1,1\n".as_bytes()).unwrap_err();
    assert!(matches!(&err, CalibrationError::Csv(m) if m.contains("line 3")), "{err:?}");
}

#[test]
fn usage_table_needs_every_level() {
    let ok = "level,population_share,green,blue,red,black\nbeginner,0.1,0.7,0.3,0,0\nmedium,0.3,0.2,0.5,0.3,0\ngood,0.4,0.1,0.4,0.4,0.1\nexpert,0.2,0,0.3,0.4,0.3\n";
    let u = read_level_usage(ok.as_bytes()).unwrap();
    assert_eq!(u.good.usage.black, 0.1);
    let missing: String = ok.lines().take(4).map(|l| format!("{l}\n")).collect();
    assert!(matches!(read_level_usage(missing.as_bytes()), Err(CalibrationError::InvalidInput(_))));
}

#[test]
fn first_swipes_conserve_totals_across_generators() {
    // 9 generators with 3 lifts each; 40,167 first swipes in total.
    let mut rng = ChaCha8Rng::seed_from_u64(40167);
    let mut mapping = BTreeMap::new();
    let mut first = ObservedSwipes::default();
    let mut per_generator = BTreeMap::new();
    let mut left = 40_167u64;
    for g in 0..9 {
        for l in 0..3 {
            let lift = format!("G{g}L{l}");
            mapping.insert(lift.clone(), format!("G{g}"));
            for step in 16..22 {
                let last = g == 8 && l == 2 && step == 21;
                let n = if last { left } else { rng.random_range(0..=left.min(400)) };
                left -= n;
                first.counts.insert((lift.clone(), step), n as f64);
                *per_generator.entry(format!("G{g}")).or_insert(0.0) += n as f64;
            }
        }
    }
    let profile = demand_from_first_swipes(&first, &mapping).unwrap();
    assert_eq!(profile.total(), 40_167.0);
    for (g, n) in per_generator {
        assert_eq!(profile.generator_total(&g), n);
    }
    mapping.remove("G4L1");
    assert_eq!(demand_from_first_swipes(&first, &mapping).unwrap_err(), CalibrationError::UnmappedLift("G4L1".into()));
}

#[test]
fn observed_swipes_csv() {
    let text = "lift_id,step,count\nL2,18,4\nL1,18,10\nL1,18,2\n";
    let o = ObservedSwipes::from_csv(text.as_bytes()).unwrap();
    assert_eq!(o.counts[&("L1".to_string(), 18)], 12.0);
    assert_eq!(ObservedSwipes::from_csv(o.to_csv().as_bytes()).unwrap(), o);
    assert!(matches!(
        ObservedSwipes::from_csv("lift_id,step,count\nL1,18,-1\n".as_bytes()),
        Err(CalibrationError::InvalidObserved(_))
    ));
    let err = ObservedSwipes::from_csv("lift_id,step,count\nL1,18,1\nL1,eighteen,2\n".as_bytes()).unwrap_err();
    assert!(matches!(&err, CalibrationError::Csv(m) if m.contains("line 3")), "{err:?}");
}

#[test]
fn objective_ignores_row_order() {
    let rows = ["L1,17,10", "L2,17,3", "L3,18,7", "L1,18,12", "L2,19,1"];
    let mut shuffled = rows;
    shuffled.reverse();
    let read = |rows: &[&str]| ObservedSwipes::from_csv(format!("lift_id,step,count\n{}\n", rows.join("\n")).as_bytes()).unwrap();
    let sim: BTreeMap<(String, u32), f64> =
        [(("L1".to_string(), 17), 9.0), (("L3".to_string(), 18), 8.0), (("L4".to_string(), 20), 2.0)].into();
    let a = swipe_rmse(&sim, &read(&rows).counts);
    let b = swipe_rmse(&sim, &read(&shuffled).counts);
    assert_eq!(a, b);
    // Cells: L1/17 1, L2/17 3, L3/18 1, L1/18 12, L2/19 1, L4/20 2.
    assert!((a - ((1.0 + 9.0 + 1.0 + 144.0 + 1.0 + 4.0) / 6.0f64).sqrt()).abs() < 1e-12);
}

#[test]
fn annealing_trace_and_self_match() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy/scenario.json");
    let sc = Scenario::load(&path).unwrap();
    let truth = UtilityParams::default();
    let empty = ObservedSwipes::default();
    let problem = |observed| CalibrationProblem {
        area: &sc.area,
        population: &sc.population,
        closures: &sc.closures,
        sim: &sc.sim,
        base_params: &truth,
        observed,
    };
    let observed = ObservedSwipes { counts: problem(&empty).simulate(&truth, 10, 77).unwrap() };
    let p = problem(&observed);
    let search = SearchConfig { budget: 12, final_replications: 3, ..SearchConfig::default() };
    let given = calibrate(&p, &search, 1).unwrap();
    let random = calibrate(&p, &SearchConfig { start: SearchStart::Random, ..search.clone() }, 1).unwrap();
    for r in [&given, &random] {
        assert_eq!(r.trace.len(), r.evaluations);
        assert!(r.evaluations <= 12 && r.budget_exhausted);
        assert!(r.trace.windows(2).all(|w| w[1].best_rmse <= w[0].best_rmse));
        assert_eq!(r.trace.last().unwrap().best_rmse, r.best_search_rmse);
        assert!(r.params.validate().is_ok());
    }
    // Starting at the truth, only replication noise is left.
    assert!(given.initial_rmse < random.initial_rmse, "{} vs {}", given.initial_rmse, random.initial_rmse);
}

#[test]
fn calibration_is_reproducible() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy/scenario.json");
    let sc = Scenario::load(&path).unwrap();
    let truth = UtilityParams::default();
    let observed = ObservedSwipes::from_csv("lift_id,step,count\nLA1,18,100\nLB1,18,80\n".as_bytes()).unwrap();
    let p = CalibrationProblem {
        area: &sc.area,
        population: &sc.population,
        closures: &sc.closures,
        sim: &sc.sim,
        base_params: &truth,
        observed: &observed,
    };
    let search = SearchConfig { budget: 4, replications: 1, final_replications: 1, ..SearchConfig::default() };
    assert_eq!(calibrate(&p, &search, 9).unwrap(), calibrate(&p, &search, 9).unwrap());
    let bad = SearchConfig { budget: 0, ..search };
    assert!(matches!(calibrate(&p, &bad, 9), Err(CalibrationError::InvalidConfig(_))));
}
