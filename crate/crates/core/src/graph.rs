//! Ski-area network: nodes, descending slopes, ascending lifts and zero-time
//! connectors out of (and back into) skier generators.
//!
//! The area is validated once by [`build_area`] and is immutable afterwards,
//! so one [`SkiArea`] can be shared read-only by every replication. This
//! module also owns the static tables derived from the network before a
//! simulation starts: the shortest-time matrix, the access index and the
//! lookahead enjoyment of every option.

use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::cmp::Reverse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Color, OrdF64, SpeedTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("network has no {0}")]
    Empty(&'static str),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("arc `{arc}` references unknown node `{node}`")]
    DanglingEndpoint { arc: String, node: String },
    #[error("slope `{slope}` does not descend ({tail_alt} m -> {head_alt} m)")]
    NonDescendingSlope { slope: String, tail_alt: f64, head_alt: f64 },
    #[error("lift `{lift}` does not ascend ({tail_alt} m -> {head_alt} m)")]
    NonAscendingLift { lift: String, tail_alt: f64, head_alt: f64 },
    #[error("arc `{arc}`: {reason}")]
    InvalidArc { arc: String, reason: String },
    #[error("generator `{0}` has no way into the network")]
    GeneratorWithoutExit(String),
    #[error("network is not strongly connected: `{to}` is unreachable from `{from}`")]
    NotStronglyConnected { from: String, to: String },
    #[error("no lift with id `{0}`")]
    UnknownLift(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Junction,
    Generator,
    Restaurant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRec {
    pub id: String,
    pub altitude: f64,
    pub kind: NodeKind,
    /// Planar coordinates in meters; used only for map matching and display.
    #[serde(default)]
    pub position: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeArc {
    pub id: String,
    /// Top node.
    pub tail: String,
    /// Bottom node.
    pub head: String,
    pub length: f64,
    pub color: Color,
    /// Precombined static and dynamic attractiveness, in [0, 1].
    pub enjoyment: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftArc {
    pub id: String,
    /// Bottom node.
    pub tail: String,
    /// Top node.
    pub head: String,
    pub vehicle_capacity: u32,
    /// Seconds between two vehicles.
    pub headway: f64,
    pub ride_time: f64,
    pub enjoyment: f64,
}

impl LiftArc {
    /// Skiers per hour, always derived from capacity and headway.
    pub fn throughput(&self) -> f64 {
        self.vehicle_capacity as f64 * 3600.0 / self.headway
    }
}

/// Zero-time virtual arc linking a generator with the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Connector {
    pub id: String,
    pub tail: String,
    pub head: String,
}

fn default_opening() -> f64 {
    8.5 * 3600.0
}

/// On-disk network document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub nodes: Vec<NodeRec>,
    #[serde(default)]
    pub slopes: Vec<SlopeArc>,
    #[serde(default)]
    pub lifts: Vec<LiftArc>,
    #[serde(default)]
    pub connectors: Vec<Connector>,
    /// Seconds since midnight at which lifts start running.
    #[serde(default = "default_opening")]
    pub opening_time: f64,
    /// Area closing time, seconds since midnight.
    pub closing_time: f64,
    /// Return safety margin, seconds.
    pub safety_margin_s: f64,
}

impl NetworkFile {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeIdx(pub usize);

/// Reference to one arc of the area, by kind and position in its list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArcId {
    Slope(usize),
    Lift(usize),
    Connector(usize),
}

/// Validated, immutable ski area.
#[derive(Clone, Debug)]
pub struct SkiArea {
    pub nodes: Vec<NodeRec>,
    pub slopes: Vec<SlopeArc>,
    pub lifts: Vec<LiftArc>,
    pub connectors: Vec<Connector>,
    pub opening_time: f64,
    pub closing_time: f64,
    pub safety_margin: f64,
    node_index: HashMap<String, NodeIdx>,
    slope_ends: Vec<(NodeIdx, NodeIdx)>,
    lift_ends: Vec<(NodeIdx, NodeIdx)>,
    connector_ends: Vec<(NodeIdx, NodeIdx)>,
    out_arcs: Vec<Vec<ArcId>>,
    in_arcs: Vec<Vec<ArcId>>,
}

/// Validates a network document and builds the area.
pub fn build_area(network: NetworkFile) -> Result<SkiArea, GraphError> {
    let NetworkFile {
        nodes,
        slopes,
        lifts,
        connectors,
        opening_time,
        closing_time,
        safety_margin_s,
    } = network;

    if nodes.is_empty() {
        return Err(GraphError::Empty("nodes"));
    }
    if slopes.is_empty() {
        return Err(GraphError::Empty("slopes"));
    }
    if lifts.is_empty() {
        return Err(GraphError::Empty("lifts"));
    }

    let mut node_index = HashMap::with_capacity(nodes.len());
    for (i, n) in nodes.iter().enumerate() {
        if node_index.insert(n.id.clone(), NodeIdx(i)).is_some() {
            return Err(GraphError::DuplicateId(n.id.clone()));
        }
    }
    let mut arc_ids = HashSet::new();
    let all_arc_ids = slopes
        .iter()
        .map(|s| &s.id)
        .chain(lifts.iter().map(|l| &l.id))
        .chain(connectors.iter().map(|c| &c.id));
    for id in all_arc_ids {
        if !arc_ids.insert(id.as_str()) {
            return Err(GraphError::DuplicateId(id.clone()));
        }
    }

    let resolve = |arc: &str, node: &str| -> Result<NodeIdx, GraphError> {
        node_index
            .get(node)
            .copied()
            .ok_or_else(|| GraphError::DanglingEndpoint { arc: arc.to_string(), node: node.to_string() })
    };
    let slope_ends = slopes
        .iter()
        .map(|s| Ok((resolve(&s.id, &s.tail)?, resolve(&s.id, &s.head)?)))
        .collect::<Result<Vec<_>, GraphError>>()?;
    let lift_ends = lifts
        .iter()
        .map(|l| Ok((resolve(&l.id, &l.tail)?, resolve(&l.id, &l.head)?)))
        .collect::<Result<Vec<_>, GraphError>>()?;
    let connector_ends = connectors
        .iter()
        .map(|c| Ok((resolve(&c.id, &c.tail)?, resolve(&c.id, &c.head)?)))
        .collect::<Result<Vec<_>, GraphError>>()?;

    let invalid = |arc: &str, reason: &str| GraphError::InvalidArc { arc: arc.to_string(), reason: reason.to_string() };
    for (s, &(t, h)) in slopes.iter().zip(&slope_ends) {
        let (ta, ha) = (nodes[t.0].altitude, nodes[h.0].altitude);
        if ta <= ha {
            return Err(GraphError::NonDescendingSlope { slope: s.id.clone(), tail_alt: ta, head_alt: ha });
        }
        if !(s.length > 0.0) {
            return Err(invalid(&s.id, "length must be > 0"));
        }
        if !(0.0..=1.0).contains(&s.enjoyment) {
            return Err(invalid(&s.id, "enjoyment must lie in [0, 1]"));
        }
    }
    for (l, &(t, h)) in lifts.iter().zip(&lift_ends) {
        let (ta, ha) = (nodes[t.0].altitude, nodes[h.0].altitude);
        if ha <= ta {
            return Err(GraphError::NonAscendingLift { lift: l.id.clone(), tail_alt: ta, head_alt: ha });
        }
        if l.vehicle_capacity < 1 {
            return Err(invalid(&l.id, "vehicle_capacity must be >= 1"));
        }
        if !(l.headway > 0.0) || !(l.ride_time > 0.0) {
            return Err(invalid(&l.id, "headway and ride_time must be > 0"));
        }
        if !(0.0..=1.0).contains(&l.enjoyment) {
            return Err(invalid(&l.id, "enjoyment must lie in [0, 1]"));
        }
    }

    let n = nodes.len();
    let mut out_arcs = vec![Vec::new(); n];
    let mut in_arcs = vec![Vec::new(); n];
    let ends = slope_ends
        .iter()
        .enumerate()
        .map(|(i, &e)| (ArcId::Slope(i), e))
        .chain(lift_ends.iter().enumerate().map(|(i, &e)| (ArcId::Lift(i), e)))
        .chain(connector_ends.iter().enumerate().map(|(i, &e)| (ArcId::Connector(i), e)));
    for (arc, (t, h)) in ends {
        out_arcs[t.0].push(arc);
        in_arcs[h.0].push(arc);
    }

    for (i, node) in nodes.iter().enumerate() {
        if node.kind == NodeKind::Generator && out_arcs[i].is_empty() {
            return Err(GraphError::GeneratorWithoutExit(node.id.clone()));
        }
    }

    let area = SkiArea {
        nodes,
        slopes,
        lifts,
        connectors,
        opening_time,
        closing_time,
        safety_margin: safety_margin_s,
        node_index,
        slope_ends,
        lift_ends,
        connector_ends,
        out_arcs,
        in_arcs,
    };
    area.check_connected(&[])?;
    Ok(area)
}

impl SkiArea {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, idx: NodeIdx) -> &NodeRec {
        &self.nodes[idx.0]
    }

    pub fn node_idx(&self, id: &str) -> Option<NodeIdx> {
        self.node_index.get(id).copied()
    }

    pub fn lift_idx(&self, id: &str) -> Option<usize> {
        self.lifts.iter().position(|l| l.id == id)
    }

    pub fn tail(&self, arc: ArcId) -> NodeIdx {
        self.ends(arc).0
    }

    pub fn head(&self, arc: ArcId) -> NodeIdx {
        self.ends(arc).1
    }

    pub fn ends(&self, arc: ArcId) -> (NodeIdx, NodeIdx) {
        match arc {
            ArcId::Slope(i) => self.slope_ends[i],
            ArcId::Lift(i) => self.lift_ends[i],
            ArcId::Connector(i) => self.connector_ends[i],
        }
    }

    pub fn arc_id(&self, arc: ArcId) -> &str {
        match arc {
            ArcId::Slope(i) => &self.slopes[i].id,
            ArcId::Lift(i) => &self.lifts[i].id,
            ArcId::Connector(i) => &self.connectors[i].id,
        }
    }

    /// Total number of arcs of all kinds.
    pub fn arc_count(&self) -> usize {
        self.slopes.len() + self.lifts.len() + self.connectors.len()
    }

    /// Dense index of an arc in `0..arc_count()`.
    pub fn arc_index(&self, arc: ArcId) -> usize {
        match arc {
            ArcId::Slope(i) => i,
            ArcId::Lift(i) => self.slopes.len() + i,
            ArcId::Connector(i) => self.slopes.len() + self.lifts.len() + i,
        }
    }

    pub fn out_arcs(&self, node: NodeIdx) -> &[ArcId] {
        &self.out_arcs[node.0]
    }

    pub fn in_arcs(&self, node: NodeIdx) -> &[ArcId] {
        &self.in_arcs[node.0]
    }

    /// Altitude gain along the arc, head minus tail (negative on slopes).
    pub fn altitude_gain(&self, arc: ArcId) -> f64 {
        let (t, h) = self.ends(arc);
        self.nodes[h.0].altitude - self.nodes[t.0].altitude
    }

    pub fn generators(&self) -> impl Iterator<Item = NodeIdx> + '_ {
        self.nodes_of_kind(NodeKind::Generator)
    }

    pub fn nodes_of_kind(&self, kind: NodeKind) -> impl Iterator<Item = NodeIdx> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.kind == kind)
            .map(|(i, _)| NodeIdx(i))
    }

    /// Free-flow travel time of one arc for the given speeds: slope length
    /// over speed, lift ride time plus half a headway, zero for connectors.
    pub fn arc_time(&self, arc: ArcId, speeds: &SpeedTable) -> f64 {
        match arc {
            ArcId::Slope(i) => {
                let s = &self.slopes[i];
                s.length / speeds[s.color]
            }
            ArcId::Lift(i) => {
                let l = &self.lifts[i];
                l.ride_time + l.headway / 2.0
            }
            ArcId::Connector(_) => 0.0,
        }
    }

    /// Checks that every node reaches every other node when the given lifts
    /// are removed.
    pub fn check_connected(&self, excluded_lifts: &[usize]) -> Result<(), GraphError> {
        let usable = |arc: ArcId| !matches!(arc, ArcId::Lift(i) if excluded_lifts.contains(&i));
        let root = NodeIdx(0);
        let forward = self.reach(root, true, &usable);
        if let Some(v) = forward.iter().position(|r| !r) {
            return Err(GraphError::NotStronglyConnected {
                from: self.nodes[root.0].id.clone(),
                to: self.nodes[v].id.clone(),
            });
        }
        let backward = self.reach(root, false, &usable);
        if let Some(v) = backward.iter().position(|r| !r) {
            return Err(GraphError::NotStronglyConnected {
                from: self.nodes[v].id.clone(),
                to: self.nodes[root.0].id.clone(),
            });
        }
        Ok(())
    }

    fn reach(&self, root: NodeIdx, forward: bool, usable: &dyn Fn(ArcId) -> bool) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        seen[root.0] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            let arcs = if forward { &self.out_arcs[u.0] } else { &self.in_arcs[u.0] };
            for &arc in arcs {
                if !usable(arc) {
                    continue;
                }
                let v = if forward { self.head(arc) } else { self.tail(arc) };
                if !seen[v.0] {
                    seen[v.0] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}

/// Single-source minimal times over arcs whose cost is `Some`. Unreachable
/// nodes get `f64::INFINITY`.
pub fn times_from(area: &SkiArea, source: NodeIdx, cost: impl Fn(ArcId) -> Option<f64>) -> Vec<f64> {
    dijkstra(area, source, true, cost)
}

/// Minimal times from every node to `target`.
pub fn times_to(area: &SkiArea, target: NodeIdx, cost: impl Fn(ArcId) -> Option<f64>) -> Vec<f64> {
    dijkstra(area, target, false, cost)
}

fn dijkstra(area: &SkiArea, root: NodeIdx, forward: bool, cost: impl Fn(ArcId) -> Option<f64>) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; area.node_count()];
    dist[root.0] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((OrdF64(0.0), root.0)));
    while let Some(Reverse((OrdF64(d), u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        let arcs = if forward { &area.out_arcs[u] } else { &area.in_arcs[u] };
        for &arc in arcs {
            let Some(c) = cost(arc) else { continue };
            let v = if forward { area.head(arc) } else { area.tail(arc) };
            let nd = d + c;
            if nd < dist[v.0] {
                dist[v.0] = nd;
                heap.push(Reverse((OrdF64(nd), v.0)));
            }
        }
    }
    dist
}

/// All-pairs minimal travel times, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeMatrix {
    n: usize,
    data: Vec<f64>,
}

impl TimeMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, from: NodeIdx, to: NodeIdx) -> f64 {
        self.data[from.0 * self.n + to.0]
    }

    pub fn row(&self, from: NodeIdx) -> &[f64] {
        &self.data[from.0 * self.n..(from.0 + 1) * self.n]
    }
}

/// Minimal free-flow times between all node pairs for one speed table.
/// Queue waits are excluded; each lift costs its ride time plus half a
/// headway.
pub fn shortest_time_matrix(area: &SkiArea, speeds: &SpeedTable) -> TimeMatrix {
    let n = area.node_count();
    let mut data = Vec::with_capacity(n * n);
    for a in 0..n {
        data.extend(times_from(area, NodeIdx(a), |arc| Some(area.arc_time(arc, speeds))));
    }
    TimeMatrix { n, data }
}

/// Normalized closeness of every node to the rest of the network. An option
/// takes the value of the node it leads to.
#[derive(Clone, Debug, PartialEq)]
pub struct AccessIndexTable {
    node_values: Vec<f64>,
    /// Total distance from each node to all nodes.
    pub totals: Vec<f64>,
    /// All totals were equal, so every node got 1.
    pub degenerate: bool,
}

impl AccessIndexTable {
    pub fn node(&self, node: NodeIdx) -> f64 {
        self.node_values[node.0]
    }

    pub fn option(&self, area: &SkiArea, arc: ArcId) -> f64 {
        self.node_values[area.head(arc).0]
    }

    pub fn values(&self) -> &[f64] {
        &self.node_values
    }
}

/// Access index computed from the shortest-time matrix of a reference speed
/// table: `u = (max D - D) / (max D - min D)`, `D` being a node's summed
/// time to every node.
pub fn access_index(area: &SkiArea, reference_speeds: &SpeedTable) -> AccessIndexTable {
    let matrix = shortest_time_matrix(area, reference_speeds);
    access_index_from_matrix(&matrix)
}

pub fn access_index_from_matrix(matrix: &TimeMatrix) -> AccessIndexTable {
    let totals: Vec<f64> = (0..matrix.size()).map(|a| matrix.row(NodeIdx(a)).iter().sum()).collect();
    let max = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let span = max - min;
    let degenerate = !(span > 0.0);
    let node_values = totals
        .iter()
        .map(|&d| if degenerate { 1.0 } else { ((max - d) / span).clamp(0.0, 1.0) })
        .collect();
    AccessIndexTable { node_values, totals, degenerate }
}

/// Anticipated enjoyment of each option.
///
/// A slope is worth the best lift reachable from the slopes below it without
/// riding a lift; a lift is worth the summed enjoyment of the slopes leaving
/// its top node. Connectors are worth 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Lookahead {
    pub slopes: Vec<f64>,
    pub lifts: Vec<f64>,
    /// Slopes whose downhill tree reaches no lift; they score 0.
    pub terminal_slopes: Vec<usize>,
}

impl Lookahead {
    pub fn option(&self, arc: ArcId) -> f64 {
        match arc {
            ArcId::Slope(i) => self.slopes[i],
            ArcId::Lift(i) => self.lifts[i],
            ArcId::Connector(_) => 0.0,
        }
    }
}

pub fn lookahead_enjoyment(area: &SkiArea) -> Lookahead {
    let lifts = area
        .lift_ends
        .iter()
        .map(|&(_, top)| {
            area.out_arcs(top)
                .iter()
                .filter_map(|&arc| match arc {
                    ArcId::Slope(s) => Some(area.slopes[s].enjoyment),
                    _ => None,
                })
                .sum()
        })
        .collect();

    let mut terminal_slopes = Vec::new();
    let slopes = (0..area.slopes.len())
        .map(|s| {
            let below = slope_tree(area, area.slope_ends[s].1);
            let best = below
                .iter()
                .flat_map(|&n| area.out_arcs(n))
                .filter_map(|&arc| match arc {
                    ArcId::Lift(l) => Some(area.lifts[l].enjoyment),
                    _ => None,
                })
                .fold(None, |acc: Option<f64>, e| Some(acc.map_or(e, |a| a.max(e))));
            best.unwrap_or_else(|| {
                terminal_slopes.push(s);
                0.0
            })
        })
        .collect();

    Lookahead { slopes, lifts, terminal_slopes }
}

/// Nodes reachable from `start` using slopes only, `start` included.
fn slope_tree(area: &SkiArea, start: NodeIdx) -> Vec<NodeIdx> {
    let mut seen = vec![false; area.node_count()];
    seen[start.0] = true;
    let mut stack = vec![start];
    let mut out = Vec::new();
    while let Some(u) = stack.pop() {
        out.push(u);
        for &arc in area.out_arcs(u) {
            if let ArcId::Slope(_) = arc {
                let v = area.head(arc);
                if !seen[v.0] {
                    seen[v.0] = true;
                    stack.push(v);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn minimal() -> NetworkFile {
        NetworkFile {
            nodes: vec![
                NodeRec { id: "top".into(), altitude: 2000.0, kind: NodeKind::Junction, position: [0.0, 0.0] },
                NodeRec { id: "bottom".into(), altitude: 1500.0, kind: NodeKind::Generator, position: [0.0, 0.0] },
            ],
            slopes: vec![SlopeArc {
                id: "s".into(),
                tail: "top".into(),
                head: "bottom".into(),
                length: 1000.0,
                color: Color::Blue,
                enjoyment: 0.5,
            }],
            lifts: vec![LiftArc {
                id: "l".into(),
                tail: "bottom".into(),
                head: "top".into(),
                vehicle_capacity: 4,
                headway: 10.0,
                ride_time: 200.0,
                enjoyment: 0.7,
            }],
            connectors: vec![],
            opening_time: 9.0 * 3600.0,
            closing_time: 17.0 * 3600.0,
            safety_margin_s: 1800.0,
        }
    }

    #[test]
    fn minimal_cycle_is_valid() {
        let area = build_area(minimal()).unwrap();
        assert_eq!(area.node_count(), 2);
        assert_eq!(area.lifts[0].throughput(), 1440.0);
    }

    #[test]
    fn rising_slope_is_rejected() {
        let mut net = minimal();
        net.nodes[1].altitude = 2100.0;
        net.lifts.clear();
        net.lifts.push(LiftArc {
            id: "l".into(),
            tail: "top".into(),
            head: "bottom".into(),
            vehicle_capacity: 4,
            headway: 10.0,
            ride_time: 200.0,
            enjoyment: 0.7,
        });
        assert!(matches!(build_area(net), Err(GraphError::NonDescendingSlope { .. })));
    }

    #[test]
    fn duplicate_and_dangling_ids() {
        let mut net = minimal();
        net.lifts[0].id = "s".into();
        assert_eq!(build_area(net).unwrap_err(), GraphError::DuplicateId("s".into()));

        let mut net = minimal();
        net.slopes[0].head = "nowhere".into();
        assert!(matches!(build_area(net), Err(GraphError::DanglingEndpoint { .. })));
    }

    #[test]
    fn bad_lift_parameters() {
        let mut net = minimal();
        net.lifts[0].vehicle_capacity = 0;
        assert!(matches!(build_area(net), Err(GraphError::InvalidArc { .. })));
        let mut net = minimal();
        net.lifts[0].headway = 0.0;
        assert!(matches!(build_area(net), Err(GraphError::InvalidArc { .. })));
    }

    #[test]
    fn single_slope_time() {
        let area = build_area(minimal()).unwrap();
        let speeds = SpeedTable::splat(4.0);
        let m = shortest_time_matrix(&area, &speeds);
        assert_eq!(m.get(NodeIdx(0), NodeIdx(1)), 250.0);
        assert_eq!(m.get(NodeIdx(1), NodeIdx(0)), 205.0);
        for a in 0..2 {
            assert_eq!(m.get(NodeIdx(a), NodeIdx(a)), 0.0);
        }
    }

    #[test]
    fn two_node_access_is_degenerate_free() {
        // 250 s vs 205 s totals: top is farther from the rest.
        let area = build_area(minimal()).unwrap();
        let table = access_index(&area, &SpeedTable::splat(4.0));
        assert!(!table.degenerate);
        assert_eq!(table.node(NodeIdx(0)), 0.0);
        assert_eq!(table.node(NodeIdx(1)), 1.0);
        assert_eq!(table.option(&area, ArcId::Lift(0)), 0.0);
    }

    #[test]
    fn equal_totals_give_uniform_one() {
        let mut net = minimal();
        // Make both directions cost the same: slope 205 s at 4 m/s.
        net.slopes[0].length = 820.0;
        let area = build_area(net).unwrap();
        let table = access_index(&area, &SpeedTable::splat(4.0));
        assert!(table.degenerate);
        assert!(table.values().iter().all(|&u| u == 1.0));
    }

    #[test]
    fn lookahead_single_slope_and_lift() {
        let area = build_area(minimal()).unwrap();
        let la = lookahead_enjoyment(&area);
        assert_eq!(la.lifts, vec![0.5]);
        assert_eq!(la.slopes, vec![0.7]);
        assert!(la.terminal_slopes.is_empty());
    }

    #[test]
    fn lookahead_takes_best_lift_below() {
        let area = build_area(fixtures::five_node()).unwrap();
        let la = lookahead_enjoyment(&area);
        // S4 mid->valley: tree {valley}; only L3 leaves the valley.
        let s4 = area.slopes.iter().position(|s| s.id == "S4").unwrap();
        assert_eq!(la.slopes[s4], area.lifts[area.lift_idx("L3").unwrap()].enjoyment);
    }

    #[test]
    fn removing_the_only_exit_breaks_connectivity() {
        let area = build_area(fixtures::five_node()).unwrap();
        let l3 = area.lift_idx("L3").unwrap();
        assert!(matches!(
            area.check_connected(&[l3]),
            Err(GraphError::NotStronglyConnected { .. })
        ));
    }
}
