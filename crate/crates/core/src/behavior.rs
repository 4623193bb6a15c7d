//! Choice intelligence of a group at a node.
//!
//! Free mode scores every outgoing option with a linear utility and samples
//! from the logit probabilities. Guided mode follows a minimal-time path to
//! a destination drawn from per-level node weights. A group always discards
//! options that would not let it get back to its origin before closing minus
//! the safety margin.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{access_index, lookahead_enjoyment, AccessIndexTable, ArcId, Lookahead, NodeIdx, NodeKind, SkiArea};
use crate::types::{Level, PerColor, PerLevel, SpeedTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BehaviorError {
    #[error("utility parameter {name} = {value} is outside [0, 1]")]
    OutOfRange { name: String, value: f64 },
    #[error("destination `{0}` is unreachable")]
    Unreachable(String),
}

/// Reference scales dividing each raw term before its coefficient applies.
pub mod scales {
    /// Meters of altitude gain.
    pub const ALTITUDE: f64 = 500.0;
    /// Seconds of travel time.
    pub const TRAVEL_TIME: f64 = 600.0;
    /// Seconds of expected wait.
    pub const WAIT: f64 = 600.0;
    /// Previous visits of the same arc.
    pub const FAMILIARITY: f64 = 5.0;
}

/// Coefficients of the utility for one arc kind and ability level, each in
/// [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub altitude: f64,
    pub familiarity: f64,
    pub enjoyment: f64,
    pub travel_time: f64,
    pub wait: f64,
    pub access: f64,
    pub lookahead: f64,
}

impl Coefficients {
    pub const ZERO: Coefficients = Coefficients {
        altitude: 0.0,
        familiarity: 0.0,
        enjoyment: 0.0,
        travel_time: 0.0,
        wait: 0.0,
        access: 0.0,
        lookahead: 0.0,
    };

    pub const NAMES: [&'static str; 7] =
        ["altitude", "familiarity", "enjoyment", "travel_time", "wait", "access", "lookahead"];

    pub fn get(&self, i: usize) -> f64 {
        self.as_array()[i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let slot = match i {
            0 => &mut self.altitude,
            1 => &mut self.familiarity,
            2 => &mut self.enjoyment,
            3 => &mut self.travel_time,
            4 => &mut self.wait,
            5 => &mut self.access,
            6 => &mut self.lookahead,
            _ => panic!("coefficient index {i} out of range"),
        };
        *slot = value;
    }

    pub fn as_array(&self) -> [f64; 7] {
        [
            self.altitude,
            self.familiarity,
            self.enjoyment,
            self.travel_time,
            self.wait,
            self.access,
            self.lookahead,
        ]
    }
}

fn default_omega() -> f64 {
    3.0
}

/// Full parameter set of the choice model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityParams {
    pub slope: PerLevel<Coefficients>,
    pub lift: PerLevel<Coefficients>,
    /// Logit scale.
    #[serde(default = "default_omega")]
    pub omega: f64,
    /// Interest of each level in each slope color, used by destination
    /// weights.
    pub gamma: PerColor<PerLevel<f64>>,
    /// When false the enjoyment term is subtracted; when true it is added.
    #[serde(default)]
    pub enjoyment_attracts: bool,
    /// Extend the familiarity penalty to lifts.
    #[serde(default)]
    pub familiarity_on_lifts: bool,
}

impl Default for UtilityParams {
    fn default() -> Self {
        let slope = Coefficients {
            altitude: 0.3,
            familiarity: 0.3,
            enjoyment: 0.2,
            travel_time: 0.3,
            wait: 0.0,
            access: 0.4,
            lookahead: 0.4,
        };
        let lift = Coefficients { familiarity: 0.0, wait: 0.6, ..slope };
        UtilityParams {
            slope: PerLevel::splat(slope),
            lift: PerLevel::splat(lift),
            omega: default_omega(),
            gamma: PerColor {
                green: PerLevel { beginner: 1.0, medium: 0.5, good: 0.2, expert: 0.1 },
                blue: PerLevel { beginner: 0.6, medium: 1.0, good: 0.6, expert: 0.4 },
                red: PerLevel { beginner: 0.1, medium: 0.6, good: 1.0, expert: 0.8 },
                black: PerLevel { beginner: 0.0, medium: 0.1, good: 0.6, expert: 1.0 },
            },
            enjoyment_attracts: false,
            familiarity_on_lifts: false,
        }
    }
}

impl UtilityParams {
    /// Every coefficient set to zero; only `omega` and `gamma` remain.
    pub fn zero() -> Self {
        UtilityParams {
            slope: PerLevel::splat(Coefficients::ZERO),
            lift: PerLevel::splat(Coefficients::ZERO),
            ..UtilityParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), BehaviorError> {
        for (kind, table) in [("slope", &self.slope), ("lift", &self.lift)] {
            for (level, c) in table.iter() {
                for (name, v) in Coefficients::NAMES.iter().zip(c.as_array()) {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(BehaviorError::OutOfRange { name: format!("{kind}.{level}.{name}"), value: v });
                    }
                }
            }
        }
        for (color, row) in self.gamma.iter() {
            for (level, v) in row.iter() {
                if !(*v >= 0.0) {
                    return Err(BehaviorError::OutOfRange { name: format!("gamma.{color}.{level}"), value: *v });
                }
            }
        }
        if !self.omega.is_finite() {
            return Err(BehaviorError::OutOfRange { name: "omega".into(), value: self.omega });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptionKind {
    Slope,
    Lift,
    Connector,
}

/// Raw, unscaled inputs of the utility of one option.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptionInputs {
    pub kind: OptionKind,
    /// Head altitude minus tail altitude, meters.
    pub altitude_gain: f64,
    /// Times the group already used this arc.
    pub visits: u32,
    pub enjoyment: f64,
    /// Seconds; slope length over the group's speed, or lift ride time.
    pub travel_time: f64,
    /// Seconds, lifts only.
    pub expected_wait: f64,
    pub access: f64,
    pub lookahead: f64,
}

/// Deterministic utility of one option.
///
/// `V = b*a - r*f - e*j - t*T - d*w + u*A + m*J` with the familiarity term on
/// slopes only (unless extended to lifts), the wait term on lifts only, and
/// `a, f, T, w` divided by the reference [`scales`]. Connectors score 0.
pub fn option_utility(params: &UtilityParams, level: Level, inputs: &OptionInputs) -> f64 {
    let c = match inputs.kind {
        OptionKind::Slope => &params.slope[level],
        OptionKind::Lift => &params.lift[level],
        OptionKind::Connector => return 0.0,
    };
    let familiarity_applies = inputs.kind == OptionKind::Slope || params.familiarity_on_lifts;
    let enjoyment_sign = if params.enjoyment_attracts { 1.0 } else { -1.0 };
    let mut v = c.altitude * inputs.altitude_gain / scales::ALTITUDE;
    if familiarity_applies {
        v -= c.familiarity * inputs.visits as f64 / scales::FAMILIARITY;
    }
    v += enjoyment_sign * c.enjoyment * inputs.enjoyment;
    v -= c.travel_time * inputs.travel_time / scales::TRAVEL_TIME;
    if inputs.kind == OptionKind::Lift {
        v -= c.wait * inputs.expected_wait / scales::WAIT;
    }
    v + c.access * inputs.access + c.lookahead * inputs.lookahead
}

/// Logit probabilities `exp(w*U_i) / sum exp(w*U_j)`, computed with the
/// maximum subtracted first.
pub fn choice_probabilities(utilities: &[f64], omega: f64) -> Vec<f64> {
    assert!(!utilities.is_empty(), "choice set must not be empty");
    let scaled: Vec<f64> = utilities.iter().map(|u| omega * u).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index drawn from a probability vector with one uniform.
pub fn sample_index(probabilities: &[f64], rng: &mut impl Rng) -> usize {
    let mut x: f64 = rng.random();
    for (i, p) in probabilities.iter().enumerate() {
        if x < *p {
            return i;
        }
        x -= p;
    }
    probabilities.iter().rposition(|p| *p > 0.0).unwrap_or(probabilities.len() - 1)
}

/// How many times a group used each arc, indexed by [`SkiArea::arc_index`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisitCounts(Vec<u32>);

impl VisitCounts {
    pub fn new(area: &SkiArea) -> Self {
        VisitCounts(vec![0; area.arc_count()])
    }

    pub fn get(&self, area: &SkiArea, arc: ArcId) -> u32 {
        self.0[area.arc_index(arc)]
    }

    pub fn record(&mut self, area: &SkiArea, arc: ArcId) {
        self.0[area.arc_index(arc)] += 1;
    }
}

/// Static tables derived from the area once, shared by all groups.
#[derive(Clone, Debug)]
pub struct BehaviorModel {
    pub params: UtilityParams,
    pub access: AccessIndexTable,
    pub lookahead: Lookahead,
    pub destinations: PerLevel<DestinationWeights>,
}

impl BehaviorModel {
    pub fn new(area: &SkiArea, params: UtilityParams, reference_speeds: &SpeedTable) -> Self {
        let access = access_index(area, reference_speeds);
        let lookahead = lookahead_enjoyment(area);
        let destinations = PerLevel::from_fn(|level| destination_weights(area, level, &params));
        BehaviorModel { params, access, lookahead, destinations }
    }
}

/// Everything a group knows when choosing at a node.
pub struct ChoiceContext<'a> {
    pub area: &'a SkiArea,
    pub model: &'a BehaviorModel,
    pub level: Level,
    pub speeds: &'a SpeedTable,
    pub node: NodeIdx,
    pub clock: f64,
    /// Expected wait per lift, from the previous metrics step.
    pub expected_waits: &'a [f64],
}

impl ChoiceContext<'_> {
    pub fn inputs(&self, arc: ArcId, visits: &VisitCounts) -> OptionInputs {
        let area = self.area;
        let (kind, enjoyment, travel_time, expected_wait) = match arc {
            ArcId::Slope(i) => {
                let s = &area.slopes[i];
                (OptionKind::Slope, s.enjoyment, s.length / self.speeds[s.color], 0.0)
            }
            ArcId::Lift(i) => {
                let l = &area.lifts[i];
                (OptionKind::Lift, l.enjoyment, l.ride_time, self.expected_waits[i])
            }
            ArcId::Connector(_) => (OptionKind::Connector, 0.0, 0.0, 0.0),
        };
        OptionInputs {
            kind,
            altitude_gain: area.altitude_gain(arc),
            visits: visits.get(area, arc),
            enjoyment,
            travel_time,
            expected_wait,
            access: self.model.access.option(area, arc),
            lookahead: self.model.lookahead.option(arc),
        }
    }

    pub fn utilities(&self, options: &[ArcId], visits: &VisitCounts) -> Vec<f64> {
        options
            .iter()
            .map(|&arc| option_utility(&self.model.params, self.level, &self.inputs(arc, visits)))
            .collect()
    }
}

/// Samples one option by logit and records the visit.
pub fn choose_free(
    ctx: &ChoiceContext<'_>,
    options: &[ArcId],
    visits: &mut VisitCounts,
    rng: &mut impl Rng,
) -> ArcId {
    let chosen = if options.len() == 1 {
        options[0]
    } else {
        let probs = choice_probabilities(&ctx.utilities(options, visits), ctx.model.params.omega);
        options[sample_index(&probs, rng)]
    };
    visits.record(ctx.area, chosen);
    chosen
}

/// Per-node destination weights for one level.
#[derive(Clone, Debug, PartialEq)]
pub struct DestinationWeights {
    pub weights: Vec<f64>,
    /// All formula weights were zero; junctions got weight 1.
    pub fallback_uniform: bool,
}

/// `phi_n = sum over lifts arriving at n of (altitude gain * skiers/hour)
/// + sum over slopes leaving n of (gamma[color][level] * length)`.
pub fn destination_weights(area: &SkiArea, level: Level, params: &UtilityParams) -> DestinationWeights {
    let weights: Vec<f64> = (0..area.node_count())
        .map(|n| {
            let node = NodeIdx(n);
            let lifts: f64 = area
                .in_arcs(node)
                .iter()
                .filter_map(|&arc| match arc {
                    ArcId::Lift(i) => Some(area.altitude_gain(arc) * area.lifts[i].throughput()),
                    _ => None,
                })
                .sum();
            let slopes: f64 = area
                .out_arcs(node)
                .iter()
                .filter_map(|&arc| match arc {
                    ArcId::Slope(i) => {
                        let s = &area.slopes[i];
                        Some(params.gamma[s.color][level] * s.length)
                    }
                    _ => None,
                })
                .sum();
            lifts + slopes
        })
        .collect();
    with_fallback(area, weights)
}

fn with_fallback(area: &SkiArea, weights: Vec<f64>) -> DestinationWeights {
    if weights.iter().any(|w| *w > 0.0) {
        return DestinationWeights { weights, fallback_uniform: false };
    }
    let weights = area.nodes.iter().map(|n| if n.kind == NodeKind::Junction { 1.0 } else { 0.0 }).collect();
    DestinationWeights { weights, fallback_uniform: true }
}

pub fn sample_destination(weights: &DestinationWeights, rng: &mut impl Rng) -> NodeIdx {
    let total: f64 = weights.weights.iter().sum();
    let probs: Vec<f64> = weights.weights.iter().map(|w| w / total).collect();
    NodeIdx(sample_index(&probs, rng))
}

/// First arc of a minimal-time path from `node`, given each node's minimal
/// time to the destination. Ties go to the first option in adjacency order.
pub fn guided_next_arc(
    area: &SkiArea,
    node: NodeIdx,
    times_to_destination: &[f64],
    arc_cost: impl Fn(ArcId) -> Option<f64>,
) -> Result<ArcId, BehaviorError> {
    let mut best: Option<(f64, ArcId)> = None;
    for &arc in area.out_arcs(node) {
        let Some(c) = arc_cost(arc) else { continue };
        let total = c + times_to_destination[area.head(arc).0];
        if total.is_finite() && best.is_none_or(|(b, _)| total < b) {
            best = Some((total, arc));
        }
    }
    best.map(|(_, arc)| arc).ok_or_else(|| BehaviorError::Unreachable(area.node(node).id.clone()))
}

/// Keeps the options after which the group can still be back at its
/// origin by `deadline`; if none can, keeps the one returning earliest.
pub fn filter_return_feasible(
    area: &SkiArea,
    options: &[ArcId],
    clock: f64,
    deadline: f64,
    times_to_origin: &[f64],
    arc_cost: impl Fn(ArcId) -> f64,
) -> Vec<ArcId> {
    let arrival = |arc: ArcId| clock + arc_cost(arc) + times_to_origin[area.head(arc).0];
    let feasible: Vec<ArcId> = options.iter().copied().filter(|&a| arrival(a) <= deadline).collect();
    if !feasible.is_empty() {
        return feasible;
    }
    options
        .iter()
        .copied()
        .min_by(|&a, &b| arrival(a).total_cmp(&arrival(b)))
        .into_iter()
        .collect()
}
