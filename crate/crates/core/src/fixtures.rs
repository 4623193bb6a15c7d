//! Small hand-built areas and populations used by tests, benches and the
//! example scenarios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Connector, LiftArc, NetworkFile, NodeKind, NodeRec, SlopeArc};
use crate::population::{DemandProfile, PopulationSpec, ScheduleConfig, SegmentTable, SpeedModel};
use crate::types::Color;

fn node(id: &str, altitude: f64, kind: NodeKind) -> NodeRec {
    NodeRec { id: id.into(), altitude, kind, position: [0.0, 0.0] }
}

fn slope(id: &str, tail: &str, head: &str, length: f64, color: Color, enjoyment: f64) -> SlopeArc {
    SlopeArc { id: id.into(), tail: tail.into(), head: head.into(), length, color, enjoyment }
}

fn lift(id: &str, tail: &str, head: &str, capacity: u32, headway: f64, ride: f64, enjoyment: f64) -> LiftArc {
    LiftArc {
        id: id.into(),
        tail: tail.into(),
        head: head.into(),
        vehicle_capacity: capacity,
        headway,
        ride_time: ride,
        enjoyment,
    }
}

fn connector(id: &str, tail: &str, head: &str) -> Connector {
    Connector { id: id.into(), tail: tail.into(), head: head.into() }
}

const H: f64 = 3600.0;

/// One lift up, one blue slope down; "bottom" is the generator.
pub fn two_node() -> NetworkFile {
    NetworkFile {
        nodes: vec![node("top", 2000.0, NodeKind::Junction), node("bottom", 1500.0, NodeKind::Generator)],
        slopes: vec![slope("S", "top", "bottom", 1000.0, Color::Blue, 0.5)],
        lifts: vec![lift("L", "bottom", "top", 4, 10.0, 200.0, 0.7)],
        connectors: vec![],
        opening_time: 9.0 * H,
        closing_time: 17.0 * H,
        safety_margin_s: 1800.0,
    }
}

/// Village, base, a mid-station restaurant, a summit and a side valley.
pub fn five_node() -> NetworkFile {
    NetworkFile {
        nodes: vec![
            node("village", 1400.0, NodeKind::Generator),
            node("base", 1500.0, NodeKind::Junction),
            node("mid", 1900.0, NodeKind::Restaurant),
            node("top", 2400.0, NodeKind::Junction),
            node("valley", 1300.0, NodeKind::Junction),
        ],
        slopes: vec![
            slope("S1", "top", "mid", 1500.0, Color::Red, 0.7),
            slope("S2", "mid", "base", 2000.0, Color::Blue, 0.6),
            slope("S3", "top", "base", 3000.0, Color::Black, 0.8),
            slope("S4", "mid", "valley", 2500.0, Color::Green, 0.4),
            slope("S5", "top", "valley", 4000.0, Color::Red, 0.9),
        ],
        lifts: vec![
            lift("L1", "base", "mid", 6, 12.0, 300.0, 0.6),
            lift("L2", "mid", "top", 4, 15.0, 420.0, 0.8),
            lift("L3", "valley", "mid", 2, 20.0, 600.0, 0.3),
        ],
        connectors: vec![connector("C1", "village", "base"), connector("C2", "base", "village")],
        opening_time: 8.5 * H,
        closing_time: 17.0 * H,
        safety_margin_s: 1800.0,
    }
}

/// The five-node area without the only lift out of the valley.
pub fn five_node_dead_end() -> NetworkFile {
    let mut net = five_node();
    net.lifts.retain(|l| l.id != "L3");
    net
}

/// "probe" is served by one lift gaining 400 m at 1200 skiers/h and one
/// 2000 m blue slope.
pub fn destination_probe() -> NetworkFile {
    NetworkFile {
        nodes: vec![node("low", 1000.0, NodeKind::Generator), node("probe", 1400.0, NodeKind::Junction)],
        slopes: vec![slope("S", "probe", "low", 2000.0, Color::Blue, 0.5)],
        lifts: vec![lift("L", "low", "probe", 4, 12.0, 300.0, 0.5)],
        connectors: vec![],
        opening_time: 9.0 * H,
        closing_time: 17.0 * H,
        safety_margin_s: 1800.0,
    }
}

/// "shelf" is reached only by a slope from the summit and only black
/// slopes leave it.
pub fn black_shelf() -> NetworkFile {
    NetworkFile {
        nodes: vec![
            node("base", 1000.0, NodeKind::Generator),
            node("top", 2000.0, NodeKind::Junction),
            node("shelf", 1500.0, NodeKind::Junction),
        ],
        slopes: vec![
            slope("S1", "top", "shelf", 1200.0, Color::Red, 0.5),
            slope("S2", "shelf", "base", 1500.0, Color::Black, 0.9),
            slope("S3", "top", "base", 2500.0, Color::Blue, 0.5),
        ],
        lifts: vec![lift("L", "base", "top", 4, 10.0, 400.0, 0.5)],
        connectors: vec![],
        opening_time: 9.0 * H,
        closing_time: 17.0 * H,
        safety_margin_s: 1800.0,
    }
}

/// Morning arrivals at `generator`, mostly between 9 and 10.
pub fn morning_demand(generator: &str, skiers: f64) -> DemandProfile {
    let mut d = DemandProfile::default();
    for (step, share) in [(17u32, 0.05), (18, 0.4), (19, 0.4), (20, 0.1), (21, 0.05)] {
        d.add(generator, step, skiers * share);
    }
    d
}

pub fn population(total_skiers: u64, demand: DemandProfile) -> PopulationSpec {
    PopulationSpec {
        total_skiers,
        segments: SegmentTable::resort_survey(),
        demand,
        schedule: ScheduleConfig::default(),
        speeds: SpeedModel::gps_survey(),
    }
}

pub fn five_node_population(total_skiers: u64) -> PopulationSpec {
    population(total_skiers, morning_demand("village", total_skiers as f64))
}

/// Random valid area with `n >= 2` nodes: node 0 is the lowest and the
/// only generator. Every node has a slope from a higher node and a slope
/// to a lower one, and a lift joins the lowest node to the highest, so the
/// graph is strongly connected.
pub fn random_area(n: usize, seed: u64) -> NetworkFile {
    assert!(n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alts: Vec<f64> = (0..n).map(|i| 1000.0 + 150.0 * i as f64 + rng.random_range(0.0..100.0)).collect();
    alts.sort_by(f64::total_cmp);
    let id = |i: usize| format!("n{i}");
    let nodes = (0..n)
        .map(|i| {
            let kind = if i == 0 {
                NodeKind::Generator
            } else if i % 4 == 2 {
                NodeKind::Restaurant
            } else {
                NodeKind::Junction
            };
            NodeRec { id: id(i), altitude: alts[i], kind, position: [rng.random_range(0.0..5000.0), 0.0] }
        })
        .collect();
    let colors = [Color::Green, Color::Blue, Color::Red, Color::Black];
    let mut slopes = Vec::new();
    let mut add_slope = |rng: &mut ChaCha8Rng, from: usize, to: usize| {
        let drop = alts[from] - alts[to];
        slopes.push(SlopeArc {
            id: format!("S{}", slopes.len()),
            tail: id(from),
            head: id(to),
            length: drop * rng.random_range(3.0..8.0),
            color: colors[rng.random_range(0..4)],
            enjoyment: rng.random_range(0.0..1.0),
        });
    };
    for i in 1..n {
        let lower = rng.random_range(0..i);
        add_slope(&mut rng, i, lower);
    }
    for i in 0..n - 1 {
        let higher = rng.random_range(i + 1..n);
        add_slope(&mut rng, higher, i);
    }
    let mut lifts = Vec::new();
    let mut add_lift = |rng: &mut ChaCha8Rng, from: usize, to: usize| {
        lifts.push(LiftArc {
            id: format!("L{}", lifts.len()),
            tail: id(from),
            head: id(to),
            vehicle_capacity: [1, 2, 4, 6, 8][rng.random_range(0..5)],
            headway: rng.random_range(6.0..30.0),
            ride_time: (alts[to] - alts[from]) * rng.random_range(0.5..1.5),
            enjoyment: rng.random_range(0.0..1.0),
        });
    };
    add_lift(&mut rng, 0, n - 1);
    for i in 1..n - 1 {
        if rng.random_bool(0.5) {
            let higher = rng.random_range(i + 1..n);
            add_lift(&mut rng, i, higher);
        }
    }
    NetworkFile {
        nodes,
        slopes,
        lifts,
        connectors: vec![],
        opening_time: 8.5 * H,
        closing_time: 17.0 * H,
        safety_margin_s: 1800.0,
    }
}
