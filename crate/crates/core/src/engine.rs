//! Discrete-event day simulator.
//!
//! Events are processed in time order; simultaneous events are ordered by
//! kind priority, then by insertion sequence, so a run is fully determined
//! by its seed. Vehicles are only scheduled while someone waits, always on
//! the fixed headway grid started at opening. Metrics are aggregated per
//! 30-minute step.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{
    choose_free, filter_return_feasible, guided_next_arc, sample_destination, BehaviorModel, ChoiceContext,
    VisitCounts,
};
use crate::graph::{times_from, times_to, ArcId, NodeIdx, NodeKind, SkiArea};
use crate::population::{Group, OperatingDay, PopulationError, PopulationSpec};
use crate::queue::{next_departure, Boarding, LiftQueue, WaitAccum};
use crate::types::{step_of, OrdF64, SpeedTable, STEP_SECONDS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("group {group} made no progress since t={since:.0}s (now t={now:.0}s, state {state})")]
    StalledAgent { group: u32, since: f64, now: f64, state: String },
    #[error("group {group} has unknown origin `{origin}`")]
    UnknownOrigin { group: u32, origin: String },
    #[error("metrics steps differ: {base} s vs {variant} s")]
    MismatchedSteps { base: f64, variant: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Population(#[from] PopulationError),
}

fn default_step() -> f64 {
    STEP_SECONDS
}

fn default_watchdog() -> f64 {
    2.0 * 3600.0
}

fn default_true() -> bool {
    true
}

fn default_replications() -> u32 {
    10
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Kind priority, then insertion order.
    #[default]
    KindThenSequence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: u32,
    #[serde(default = "default_step")]
    pub metrics_step_s: f64,
    #[serde(default)]
    pub tie_break: TieBreak,
    /// Let later groups fill seats left by the head group.
    #[serde(default)]
    pub topoff: bool,
    /// Groups get a destination as soon as they enter the area.
    #[serde(default = "default_true")]
    pub initial_destination: bool,
    #[serde(default = "default_watchdog")]
    pub watchdog_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            replications: default_replications(),
            metrics_step_s: STEP_SECONDS,
            tie_break: TieBreak::default(),
            topoff: false,
            initial_destination: true,
            watchdog_s: default_watchdog(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.replications < 1 {
            return Err(EngineError::InvalidConfig("replications must be >= 1".into()));
        }
        if self.metrics_step_s != STEP_SECONDS {
            return Err(EngineError::InvalidConfig(format!("metrics step must be {STEP_SECONDS} s")));
        }
        if !(self.watchdog_s > 0.0) {
            return Err(EngineError::InvalidConfig("watchdog must be > 0".into()));
        }
        Ok(())
    }

    /// Seed of one replication, mixed so neighbouring indices are unrelated.
    pub fn replication_seed(&self, replication: u32) -> u64 {
        splitmix64(self.seed ^ splitmix64(replication as u64 + 1))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// A lift out of service between `start` and `end` (seconds since midnight).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftClosure {
    pub lift: usize,
    pub start: f64,
    pub end: f64,
}

/// Event kinds, in tie-break priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    LiftClosureChange,
    VehicleDispatch,
    GroupAlightsLift,
    GroupReachesNode,
    GroupArrivesInArea,
    LunchStart,
    LunchEnd,
    Watchdog,
    AreaClose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Payload {
    Arrive(u32),
    Reach(u32, NodeIdx),
    Dispatch(usize),
    Alight(u32, usize),
    LunchStart(u32),
    LunchEnd(u32),
    ClosureStart(usize),
    ClosureEnd(usize),
    Watchdog,
    AreaClose,
}

impl Payload {
    fn kind(self) -> EventKind {
        match self {
            Payload::Arrive(_) => EventKind::GroupArrivesInArea,
            Payload::Reach(..) => EventKind::GroupReachesNode,
            Payload::Dispatch(_) => EventKind::VehicleDispatch,
            Payload::Alight(..) => EventKind::GroupAlightsLift,
            Payload::LunchStart(_) => EventKind::LunchStart,
            Payload::LunchEnd(_) => EventKind::LunchEnd,
            Payload::ClosureStart(_) | Payload::ClosureEnd(_) => EventKind::LiftClosureChange,
            Payload::Watchdog => EventKind::Watchdog,
            Payload::AreaClose => EventKind::AreaClose,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Event {
    time: OrdF64,
    kind: EventKind,
    seq: u64,
    payload: Payload,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.kind, self.seq).cmp(&(other.time, other.kind, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Where a group is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AgentState {
    NotArrived,
    AtNode,
    OnSlope,
    InQueue,
    OnLift,
    Lunching,
    Exited,
}

impl AgentState {
    pub const ALL: [AgentState; 7] = [
        AgentState::NotArrived,
        AgentState::AtNode,
        AgentState::OnSlope,
        AgentState::InQueue,
        AgentState::OnLift,
        AgentState::Lunching,
        AgentState::Exited,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Number of groups in each state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Census([u32; 7]);

impl Census {
    pub fn get(&self, state: AgentState) -> u32 {
        self.0[state.index()]
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Mode {
    Free { since: f64 },
    Guided { destination: NodeIdx, lunch: bool },
    Returning,
}

#[derive(Clone, Debug)]
struct RouteCache {
    target: NodeIdx,
    epoch: u64,
    step: Option<u32>,
    times: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeBudget {
    pub ski: f64,
    pub wait: f64,
    pub ride: f64,
    pub lunch: f64,
}

impl TimeBudget {
    pub fn total(&self) -> f64 {
        self.ski + self.wait + self.ride + self.lunch
    }
}

#[derive(Clone, Debug)]
struct Agent {
    origin: NodeIdx,
    state: AgentState,
    node: NodeIdx,
    mode: Mode,
    visits: VisitCounts,
    lunch_pending: bool,
    budget: TimeBudget,
    enqueue_time: f64,
    queue_lift: usize,
    last_progress: f64,
    lifts_entered: u32,
    traveled: bool,
    exit_time: Option<f64>,
    route: Option<RouteCache>,
    home: Option<RouteCache>,
    same_instant: (f64, u32),
}

/// Hooks into a running replication, for tests and diagnostics.
pub trait SimObserver {
    fn on_event(&mut self, _time: f64, _kind: EventKind, _census: &Census) {}
    fn on_dispatch(&mut self, _lift: usize, _time: f64, _boardings: &[Boarding], _queue: &LiftQueue) {}
    fn on_enqueue(&mut self, _lift: usize, _group: u32, _time: f64) {}
    fn on_exit(&mut self, _group: &Group, _node: NodeIdx, _time: f64) {}
}

pub struct NoopObserver;

impl SimObserver for NoopObserver {}

/// Per-group outcome of one day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub group_id: u32,
    pub size: u32,
    pub origin: String,
    pub arrival: f64,
    pub exit: f64,
    /// Node where the group left the area.
    pub exit_node: String,
    pub budget: TimeBudget,
    pub lifts_entered: u32,
}

/// Everything measured in one replication.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsLog {
    pub lift_ids: Vec<String>,
    /// (lift, step) -> skiers swiping at line entry.
    pub swipes: BTreeMap<(usize, u32), u64>,
    /// (lift, step) -> waits of skiers boarding in that step.
    pub waits: BTreeMap<(usize, u32), WaitAccum>,
    pub groups: Vec<GroupRecord>,
    pub closing_time: f64,
    pub groups_in_area_at_close: u32,
}

impl MetricsLog {
    pub fn skiers(&self) -> u64 {
        self.groups.iter().map(|g| g.size as u64).sum()
    }

    pub fn total_swipes(&self) -> u64 {
        self.swipes.values().sum()
    }

    /// Lift entries per skier counted from the groups' own tallies.
    pub fn lifts_per_skier_from_groups(&self) -> f64 {
        let entries: u64 = self.groups.iter().map(|g| g.lifts_entered as u64 * g.size as u64).sum();
        entries as f64 / self.skiers() as f64
    }

    /// Lift entries per skier counted from the swipe table.
    pub fn lifts_per_skier_from_swipes(&self) -> f64 {
        self.total_swipes() as f64 / self.skiers() as f64
    }

    pub fn summary(&self) -> Summary {
        let skiers = self.skiers();
        let (wait_sum, boarded) =
            self.waits.values().fold((0.0, 0u64), |(w, n), a| (w + a.total_wait, n + a.skiers));
        let weighted = |f: fn(&TimeBudget) -> f64| -> f64 {
            self.groups.iter().map(|g| g.size as f64 * f(&g.budget)).sum()
        };
        let in_area = weighted(TimeBudget::total);
        let share = |x: f64| if in_area > 0.0 { x / in_area } else { 0.0 };
        Summary {
            skiers: skiers as f64,
            groups: self.groups.len() as f64,
            lifts_per_skier: self.lifts_per_skier_from_swipes(),
            mean_wait_s: if boarded > 0 { wait_sum / boarded as f64 } else { 0.0 },
            ski_share: share(weighted(|b| b.ski)),
            wait_share: share(weighted(|b| b.wait)),
            ride_share: share(weighted(|b| b.ride)),
            lunch_share: share(weighted(|b| b.lunch)),
            late_groups: self.groups.iter().filter(|g| g.exit > self.closing_time).count() as f64,
        }
    }
}

/// Headline figures of a run; means over replications when aggregated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub skiers: f64,
    pub groups: f64,
    pub lifts_per_skier: f64,
    pub mean_wait_s: f64,
    pub ski_share: f64,
    pub wait_share: f64,
    pub ride_share: f64,
    pub lunch_share: f64,
    pub late_groups: f64,
}

/// Static inputs of a simulation, shared by all replications.
pub struct SimInputs<'a> {
    pub area: &'a SkiArea,
    pub model: &'a BehaviorModel,
    pub closures: &'a [LiftClosure],
    pub config: &'a SimConfig,
}

/// Time to ski down a slope at the group's speed for its color.
pub fn slope_traversal_time(area: &SkiArea, speeds: &SpeedTable, slope: usize) -> f64 {
    let s = &area.slopes[slope];
    s.length / speeds[s.color]
}

const MAX_DECISIONS_PER_INSTANT: u32 = 10_000;
const RNG_STREAM_CHOICES: u64 = 7;

struct Simulation<'a, O: SimObserver> {
    area: &'a SkiArea,
    model: &'a BehaviorModel,
    closures: &'a [LiftClosure],
    config: &'a SimConfig,
    observer: &'a mut O,
    groups: &'a [Group],
    agents: Vec<Agent>,
    queues: Vec<LiftQueue>,
    last_dispatch: Vec<f64>,
    closed: Vec<u32>,
    epoch: u64,
    heap: BinaryHeap<Reverse<Event>>,
    seq: u64,
    rng: ChaCha8Rng,
    swipes: BTreeMap<(usize, u32), u64>,
    census: Census,
    waits_step: Option<u32>,
    expected_waits: Vec<f64>,
    remaining: usize,
    in_area_at_close: u32,
}

/// Simulates one day for a given population and seed.
pub fn run_day(
    inputs: &SimInputs<'_>,
    groups: &[Group],
    seed: u64,
    observer: &mut impl SimObserver,
) -> Result<MetricsLog, EngineError> {
    inputs.config.validate()?;
    let area = inputs.area;
    let mut agents = Vec::with_capacity(groups.len());
    for g in groups {
        let origin = area
            .node_idx(&g.origin)
            .ok_or_else(|| EngineError::UnknownOrigin { group: g.id, origin: g.origin.clone() })?;
        agents.push(Agent {
            origin,
            state: AgentState::NotArrived,
            node: origin,
            mode: Mode::Free { since: g.arrival_time },
            visits: VisitCounts::new(area),
            lunch_pending: false,
            budget: TimeBudget::default(),
            enqueue_time: 0.0,
            queue_lift: 0,
            last_progress: g.arrival_time,
            lifts_entered: 0,
            traveled: false,
            exit_time: None,
            route: None,
            home: None,
            same_instant: (f64::NAN, 0),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(RNG_STREAM_CHOICES);
    let mut census = Census::default();
    census.0[AgentState::NotArrived.index()] = groups.len() as u32;
    let mut sim = Simulation {
        area,
        model: inputs.model,
        closures: inputs.closures,
        config: inputs.config,
        observer,
        groups,
        agents,
        queues: (0..area.lifts.len()).map(LiftQueue::new).collect(),
        last_dispatch: vec![f64::NEG_INFINITY; area.lifts.len()],
        closed: vec![0; area.lifts.len()],
        epoch: 0,
        heap: BinaryHeap::new(),
        seq: 0,
        rng,
        swipes: BTreeMap::new(),
        census,
        waits_step: None,
        expected_waits: vec![0.0; area.lifts.len()],
        remaining: groups.len(),
        in_area_at_close: 0,
    };
    sim.run()?;
    Ok(sim.into_log())
}

impl<O: SimObserver> Simulation<'_, O> {
    fn push(&mut self, time: f64, payload: Payload) {
        self.seq += 1;
        self.heap.push(Reverse(Event { time: OrdF64(time), kind: payload.kind(), seq: self.seq, payload }));
    }

    fn set_state(&mut self, g: u32, state: AgentState) {
        let a = &mut self.agents[g as usize];
        self.census.0[a.state.index()] -= 1;
        self.census.0[state.index()] += 1;
        a.state = state;
    }

    fn run(&mut self) -> Result<(), EngineError> {
        for (i, g) in self.groups.iter().enumerate() {
            self.seq += 1;
            let p = Payload::Arrive(i as u32);
            self.heap.push(Reverse(Event { time: OrdF64(g.arrival_time), kind: p.kind(), seq: self.seq, payload: p }));
            if let Some(l) = g.lunch {
                self.seq += 1;
                let p = Payload::LunchStart(i as u32);
                self.heap.push(Reverse(Event { time: OrdF64(l.start), kind: p.kind(), seq: self.seq, payload: p }));
            }
        }
        for (i, c) in self.closures.iter().enumerate() {
            self.push(c.start, Payload::ClosureStart(i));
            self.push(c.end, Payload::ClosureEnd(i));
        }
        self.push(self.area.closing_time, Payload::AreaClose);
        if let Some(first) = self.groups.iter().map(|g| g.arrival_time).min_by(f64::total_cmp) {
            self.push((step_of(first) + 1) as f64 * STEP_SECONDS, Payload::Watchdog);
        }

        while let Some(Reverse(ev)) = self.heap.pop() {
            let t = ev.time.0;
            match ev.payload {
                Payload::Arrive(g) => {
                    self.set_state(g, AgentState::AtNode);
                    let a = &mut self.agents[g as usize];
                    a.node = a.origin;
                    a.last_progress = t;
                    if self.config.initial_destination {
                        let level = self.groups[g as usize].level;
                        let dest = sample_destination(&self.model.destinations[level], &mut self.rng);
                        self.agents[g as usize].mode = Mode::Guided { destination: dest, lunch: false };
                    }
                    self.decide(g, t)?;
                }
                Payload::Reach(g, node) => {
                    self.set_state(g, AgentState::AtNode);
                    self.agents[g as usize].node = node;
                    self.decide(g, t)?;
                }
                Payload::Alight(g, lift) => {
                    self.set_state(g, AgentState::AtNode);
                    self.agents[g as usize].node = self.area.head(ArcId::Lift(lift));
                    self.decide(g, t)?;
                }
                Payload::Dispatch(lift) => self.dispatch(lift, t),
                Payload::LunchStart(g) => {
                    let a = &mut self.agents[g as usize];
                    if a.state != AgentState::Exited && !matches!(a.mode, Mode::Returning) {
                        a.lunch_pending = true;
                    }
                }
                Payload::LunchEnd(g) => {
                    self.set_state(g, AgentState::AtNode);
                    self.agents[g as usize].mode = Mode::Free { since: t };
                    self.decide(g, t)?;
                }
                Payload::ClosureStart(i) => self.close_lift(i, t)?,
                Payload::ClosureEnd(i) => {
                    let lift = self.closures[i].lift;
                    self.closed[lift] -= 1;
                    self.epoch += 1;
                    if self.closed[lift] == 0 {
                        self.schedule_dispatch(lift, t);
                    }
                }
                Payload::Watchdog => {
                    self.check_stalls(t)?;
                    if self.remaining > 0 {
                        self.push(t + STEP_SECONDS, Payload::Watchdog);
                    }
                }
                Payload::AreaClose => {
                    self.in_area_at_close = self.groups.len() as u32
                        - self.census.get(AgentState::Exited)
                        - self.census.get(AgentState::NotArrived);
                }
            }
            self.observer.on_event(t, ev.kind, &self.census);
            if self.remaining == 0 {
                break;
            }
        }
        Ok(())
    }

    fn check_stalls(&self, t: f64) -> Result<(), EngineError> {
        let late = t > self.area.closing_time + self.config.watchdog_s;
        for (i, a) in self.agents.iter().enumerate() {
            // A long line is fine as long as its lift keeps loading.
            let stuck_in_line = a.state == AgentState::InQueue
                && t - a.last_progress.max(self.last_dispatch[a.queue_lift]) > self.config.watchdog_s;
            let still_out = late && !matches!(a.state, AgentState::Exited);
            if stuck_in_line || still_out {
                return Err(EngineError::StalledAgent {
                    group: self.groups[i].id,
                    since: a.last_progress,
                    now: t,
                    state: format!("{:?} at `{}`", a.state, self.area.node(a.node).id),
                });
            }
        }
        Ok(())
    }

    fn is_closed(&self, arc: ArcId) -> bool {
        matches!(arc, ArcId::Lift(l) if self.closed[l] > 0)
    }

    /// Open arcs out of `node` usable by group `g`: groups never walk into
    /// another group's village.
    fn usable_arcs(&self, g: u32, node: NodeIdx) -> Vec<ArcId> {
        let area = self.area;
        let origin = self.agents[g as usize].origin;
        area.out_arcs(node)
            .iter()
            .copied()
            .filter(|&a| !self.is_closed(a))
            .filter(|&a| {
                let head = area.head(a);
                !matches!(a, ArcId::Connector(_)) || head == origin || area.node(head).kind != NodeKind::Generator
            })
            .collect()
    }

    /// Time until the group is at the head of `arc`, using the current
    /// line for a lift it would join now.
    fn option_cost(&self, g: u32, arc: ArcId, t: f64) -> f64 {
        let area = self.area;
        match arc {
            ArcId::Lift(l) => {
                let lift = &area.lifts[l];
                let size = self.groups[g as usize].size;
                let line = self.queues[l].predicted_wait(size, lift.vehicle_capacity, lift.headway, area.opening_time, t);
                line.max(self.expected_waits[l]) + lift.ride_time
            }
            _ => area.arc_time(arc, &self.groups[g as usize].speeds),
        }
    }

    fn returns_in_time(&self, g: u32, arc: ArcId, t: f64, home: &[f64]) -> bool {
        let area = self.area;
        t + self.option_cost(g, arc, t) + home[area.head(arc).0] <= area.closing_time - area.safety_margin
    }

    fn refresh_expected_waits(&mut self, t: f64) {
        let step = step_of(t);
        if self.waits_step != Some(step) {
            for (l, q) in self.queues.iter().enumerate() {
                self.expected_waits[l] = q.expected_wait(t);
            }
            self.waits_step = Some(step);
        }
    }

    /// Minimal times from every node to `target` for group `g`, cached until
    /// the target or the set of open lifts changes. Times home also count
    /// the expected wait at each lift, so they change every metrics step.
    fn route_times(&mut self, g: u32, target: NodeIdx, home: bool, t: f64) -> Vec<f64> {
        let step = if home {
            self.refresh_expected_waits(t);
            self.waits_step
        } else {
            None
        };
        let a = &self.agents[g as usize];
        let cache = if home { &a.home } else { &a.route };
        if let Some(c) = cache {
            if c.target == target && c.epoch == self.epoch && c.step == step {
                return c.times.clone();
            }
        }
        let speeds = self.groups[g as usize].speeds;
        let area = self.area;
        let closed = &self.closed;
        let waits = &self.expected_waits;
        let times = times_to(area, target, |arc| match arc {
            ArcId::Lift(l) if closed[l] > 0 => None,
            ArcId::Lift(l) if home => Some(area.arc_time(arc, &speeds) + waits[l]),
            _ => Some(area.arc_time(arc, &speeds)),
        });
        let entry = Some(RouteCache { target, epoch: self.epoch, step, times: times.clone() });
        let a = &mut self.agents[g as usize];
        if home {
            a.home = entry;
        } else {
            a.route = entry;
        }
        times
    }

    fn nearest_restaurant(&self, g: u32, from: NodeIdx) -> Option<NodeIdx> {
        let speeds = self.groups[g as usize].speeds;
        let area = self.area;
        let times = times_from(area, from, |arc| match arc {
            ArcId::Lift(l) if self.closed[l] > 0 => None,
            _ => Some(area.arc_time(arc, &speeds)),
        });
        area.nodes_of_kind(NodeKind::Restaurant)
            .filter(|n| times[n.0].is_finite())
            .min_by(|a, b| times[a.0].total_cmp(&times[b.0]).then(a.cmp(b)))
    }

    fn decide(&mut self, g: u32, t: f64) -> Result<(), EngineError> {
        let gi = g as usize;
        let group = &self.groups[gi];
        {
            let a = &mut self.agents[gi];
            a.last_progress = t;
            if a.same_instant.0 == t {
                a.same_instant.1 += 1;
                if a.same_instant.1 > MAX_DECISIONS_PER_INSTANT {
                    return Err(EngineError::StalledAgent {
                        group: group.id,
                        since: t,
                        now: t,
                        state: format!("looping at `{}`", self.area.node(a.node).id),
                    });
                }
            } else {
                a.same_instant = (t, 0);
            }
            if t >= group.departure_decision_time {
                a.mode = Mode::Returning;
                a.lunch_pending = false;
            }
        }
        if matches!(self.agents[gi].mode, Mode::Returning) {
            return self.step_home(g, t);
        }
        let node = self.agents[gi].node;
        let speeds = group.speeds;
        let area = self.area;

        if self.agents[gi].lunch_pending {
            let heading_to_lunch = matches!(self.agents[gi].mode, Mode::Guided { lunch: true, .. });
            if !heading_to_lunch {
                let spot = self.nearest_restaurant(g, node).unwrap_or(node);
                self.agents[gi].mode = Mode::Guided { destination: spot, lunch: true };
            }
            if let Mode::Guided { destination, lunch: true } = self.agents[gi].mode {
                if destination == node {
                    // Lunch is cut short so the group can still get home.
                    let origin = self.agents[gi].origin;
                    let home = self.route_times(g, origin, true, t);
                    let slack = area.closing_time - area.safety_margin - t - home[node.0];
                    let duration = group.lunch.map_or(0.0, |l| l.duration).min(slack.max(0.0));
                    self.agents[gi].lunch_pending = false;
                    if duration > 0.0 {
                        self.agents[gi].budget.lunch += duration;
                        self.set_state(g, AgentState::Lunching);
                        self.push(t + duration, Payload::LunchEnd(g));
                        return Ok(());
                    }
                    self.agents[gi].mode = Mode::Free { since: t };
                }
            }
        }

        if let Mode::Guided { destination, lunch: false } = self.agents[gi].mode {
            if destination == node {
                self.agents[gi].mode = Mode::Free { since: t };
            }
        }
        if let Mode::Free { since } = self.agents[gi].mode {
            if t - since >= group.free_mode_budget {
                let dest = sample_destination(&self.model.destinations[group.level], &mut self.rng);
                self.agents[gi].mode =
                    if dest == node { Mode::Free { since: t } } else { Mode::Guided { destination: dest, lunch: false } };
            }
        }

        // Options that still allow getting home in time; outside the
        // returning phase this only bites for slow groups late in the day.
        let origin = self.agents[gi].origin;
        let home = self.route_times(g, origin, true, t);

        if let Mode::Guided { destination, .. } = self.agents[gi].mode {
            let times = self.route_times(g, destination, false, t);
            let closed = &self.closed;
            let routed = guided_next_arc(area, node, &times, |arc| match arc {
                ArcId::Lift(l) if closed[l] > 0 => None,
                _ => Some(area.arc_time(arc, &speeds)),
            });
            match routed {
                Ok(arc) if self.returns_in_time(g, arc, t, &home) => {
                    self.agents[gi].visits.record(area, arc);
                    return self.take(g, arc, t);
                }
                Ok(_) => return self.start_home(g, t),
                // Destination cut off by a closure: wander instead.
                Err(_) => self.agents[gi].mode = Mode::Free { since: t },
            }
        }

        let open = self.usable_arcs(g, node);
        let mut options: Vec<ArcId> =
            open.iter().copied().filter(|&a| !matches!(a, ArcId::Connector(_)) && self.returns_in_time(g, a, t, &home)).collect();
        if options.is_empty() && open.iter().all(|&a| matches!(a, ArcId::Connector(_))) {
            options = open.into_iter().filter(|&a| self.returns_in_time(g, a, t, &home)).collect();
        }
        if options.is_empty() {
            return self.start_home(g, t);
        }
        let arc = self.choose_among(g, node, t, &options);
        self.take(g, arc, t)
    }

    fn start_home(&mut self, g: u32, t: f64) -> Result<(), EngineError> {
        let a = &mut self.agents[g as usize];
        a.mode = Mode::Returning;
        a.lunch_pending = false;
        self.step_home(g, t)
    }

    /// Returning phase: only options that get the group home before the
    /// deadline; at the origin the group leaves once it has skied or once
    /// nothing fits any more.
    fn step_home(&mut self, g: u32, t: f64) -> Result<(), EngineError> {
        let gi = g as usize;
        let area = self.area;
        let node = self.agents[gi].node;
        let origin = self.agents[gi].origin;
        let home = self.route_times(g, origin, true, t);
        let deadline = area.closing_time - area.safety_margin;
        let options = self.usable_arcs(g, node);
        let cost = |arc: ArcId| self.option_cost(g, arc, t);
        let any_feasible = options.iter().any(|&arc| t + cost(arc) + home[area.head(arc).0] <= deadline);
        if node == origin && (self.agents[gi].traveled || !any_feasible) {
            self.exit(g, t);
            return Ok(());
        }
        let options = filter_return_feasible(area, &options, t, deadline, &home, cost);
        let arc = self.choose_among(g, node, t, &options);
        self.take(g, arc, t)
    }

    fn choose_among(&mut self, g: u32, node: NodeIdx, t: f64, options: &[ArcId]) -> ArcId {
        assert!(!options.is_empty(), "validated areas always leave an open option");
        self.refresh_expected_waits(t);
        let gi = g as usize;
        let group = &self.groups[gi];
        let ctx = ChoiceContext {
            area: self.area,
            model: self.model,
            level: group.level,
            speeds: &group.speeds,
            node,
            clock: t,
            expected_waits: &self.expected_waits,
        };
        choose_free(&ctx, options, &mut self.agents[gi].visits, &mut self.rng)
    }

    fn take(&mut self, g: u32, arc: ArcId, t: f64) -> Result<(), EngineError> {
        let gi = g as usize;
        let area = self.area;
        if area.tail(arc) != area.head(arc) {
            self.agents[gi].traveled = true;
        }
        match arc {
            ArcId::Slope(s) => {
                let dt = slope_traversal_time(area, &self.groups[gi].speeds, s);
                self.agents[gi].budget.ski += dt;
                self.set_state(g, AgentState::OnSlope);
                self.push(t + dt, Payload::Reach(g, area.head(arc)));
            }
            ArcId::Connector(_) => {
                self.set_state(g, AgentState::OnSlope);
                self.push(t, Payload::Reach(g, area.head(arc)));
            }
            ArcId::Lift(l) => {
                let size = self.groups[gi].size;
                self.queues[l].enqueue(g, size, t);
                *self.swipes.entry((l, step_of(t))).or_insert(0) += size as u64;
                let a = &mut self.agents[gi];
                a.lifts_entered += 1;
                a.enqueue_time = t;
                a.queue_lift = l;
                self.set_state(g, AgentState::InQueue);
                self.observer.on_enqueue(l, g, t);
                self.schedule_dispatch(l, t);
            }
        }
        Ok(())
    }

    fn schedule_dispatch(&mut self, lift: usize, t: f64) {
        let q = &self.queues[lift];
        if q.is_empty() || q.next_vehicle_time.is_some() {
            return;
        }
        let l = &self.area.lifts[lift];
        let when = next_departure(self.area.opening_time, l.headway, t);
        self.queues[lift].next_vehicle_time = Some(when);
        self.push(when, Payload::Dispatch(lift));
    }

    fn dispatch(&mut self, lift: usize, t: f64) {
        self.queues[lift].next_vehicle_time = None;
        let split_head = self.queues[lift].line().next().is_some_and(|w| w.is_split());
        if self.closed[lift] > 0 && !split_head {
            return;
        }
        let l = &self.area.lifts[lift];
        let boardings = self.queues[lift].dispatch_vehicle(l.vehicle_capacity, t, self.config.topoff);
        self.last_dispatch[lift] = t;
        for b in &boardings {
            let gi = b.group as usize;
            self.agents[gi].last_progress = t;
            if b.completes_group {
                let a = &mut self.agents[gi];
                a.budget.wait += t - a.enqueue_time;
                a.budget.ride += l.ride_time;
                self.set_state(b.group, AgentState::OnLift);
                self.push(t + l.ride_time, Payload::Alight(b.group, lift));
            }
        }
        self.observer.on_dispatch(lift, t, &boardings, &self.queues[lift]);
        if !self.queues[lift].is_empty() {
            let next = t + l.headway;
            self.queues[lift].next_vehicle_time = Some(next);
            self.push(next, Payload::Dispatch(lift));
        }
    }

    fn close_lift(&mut self, i: usize, t: f64) -> Result<(), EngineError> {
        let lift = self.closures[i].lift;
        self.closed[lift] += 1;
        self.epoch += 1;
        let released = self.queues[lift].withdraw_unstarted();
        for w in released {
            let a = &mut self.agents[w.group as usize];
            a.budget.wait += t - a.enqueue_time;
            a.node = self.area.tail(ArcId::Lift(lift));
            self.set_state(w.group, AgentState::AtNode);
            self.decide(w.group, t)?;
        }
        Ok(())
    }

    fn exit(&mut self, g: u32, t: f64) {
        let a = &mut self.agents[g as usize];
        a.exit_time = Some(t);
        let node = a.node;
        self.set_state(g, AgentState::Exited);
        self.remaining -= 1;
        self.observer.on_exit(&self.groups[g as usize], node, t);
    }

    fn into_log(self) -> MetricsLog {
        let mut waits = BTreeMap::new();
        for (l, q) in self.queues.iter().enumerate() {
            for (step, acc) in q.waits_by_step().iter().enumerate() {
                if acc.skiers > 0 {
                    waits.insert((l, step as u32), *acc);
                }
            }
        }
        let groups = self
            .groups
            .iter()
            .zip(&self.agents)
            .map(|(g, a)| GroupRecord {
                group_id: g.id,
                size: g.size,
                origin: g.origin.clone(),
                arrival: g.arrival_time,
                exit: a.exit_time.unwrap_or(f64::NAN),
                exit_node: self.area.node(a.node).id.clone(),
                budget: a.budget,
                lifts_entered: a.lifts_entered,
            })
            .collect();
        MetricsLog {
            lift_ids: self.area.lifts.iter().map(|l| l.id.clone()).collect(),
            swipes: self.swipes,
            waits,
            groups,
            closing_time: self.area.closing_time,
            groups_in_area_at_close: self.in_area_at_close,
        }
    }
}

/// Means over replications, keyed by lift id so that runs on edited
/// networks stay comparable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub replications: u32,
    pub step_seconds: f64,
    pub summary: Summary,
    /// (lift id, step) -> mean swipes.
    pub swipes: BTreeMap<(String, u32), f64>,
    /// (lift id, step) -> (pooled mean wait, mean boarded skiers).
    pub waits: BTreeMap<(String, u32), (f64, f64)>,
    /// Lift id -> pooled mean wait over the day and all replications.
    pub lift_mean_wait: BTreeMap<String, f64>,
}

pub fn aggregate(logs: &[MetricsLog]) -> AggregateMetrics {
    let r = logs.len() as f64;
    let mut summary = Summary::default();
    let mut swipes: BTreeMap<(String, u32), f64> = BTreeMap::new();
    let mut wait_acc: BTreeMap<(String, u32), WaitAccum> = BTreeMap::new();
    let mut lift_acc: BTreeMap<String, WaitAccum> = BTreeMap::new();
    for log in logs {
        let s = log.summary();
        summary.skiers += s.skiers / r;
        summary.groups += s.groups / r;
        summary.lifts_per_skier += s.lifts_per_skier / r;
        summary.mean_wait_s += s.mean_wait_s / r;
        summary.ski_share += s.ski_share / r;
        summary.wait_share += s.wait_share / r;
        summary.ride_share += s.ride_share / r;
        summary.lunch_share += s.lunch_share / r;
        summary.late_groups += s.late_groups / r;
        for (&(l, step), &n) in &log.swipes {
            *swipes.entry((log.lift_ids[l].clone(), step)).or_insert(0.0) += n as f64 / r;
        }
        for (&(l, step), acc) in &log.waits {
            let id = &log.lift_ids[l];
            let e = wait_acc.entry((id.clone(), step)).or_default();
            e.total_wait += acc.total_wait;
            e.skiers += acc.skiers;
            let e = lift_acc.entry(id.clone()).or_default();
            e.total_wait += acc.total_wait;
            e.skiers += acc.skiers;
        }
    }
    AggregateMetrics {
        replications: logs.len() as u32,
        step_seconds: STEP_SECONDS,
        summary,
        swipes,
        waits: wait_acc.into_iter().map(|(k, a)| (k, (a.mean(), a.skiers as f64 / r))).collect(),
        lift_mean_wait: lift_acc.into_iter().map(|(k, a)| (k, a.mean())).collect(),
    }
}

/// Runs every replication (in parallel, each with its own seed and
/// population) and aggregates them in replication order.
pub fn run_replications(
    inputs: &SimInputs<'_>,
    population: &PopulationSpec,
) -> Result<(Vec<MetricsLog>, AggregateMetrics), EngineError> {
    inputs.config.validate()?;
    let day = OperatingDay { opening: inputs.area.opening_time, closing: inputs.area.closing_time };
    let logs = (0..inputs.config.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = inputs.config.replication_seed(rep);
            let groups = population.generate(day, seed)?;
            run_day(inputs, &groups, seed, &mut NoopObserver)
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    let agg = aggregate(&logs);
    Ok((logs, agg))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub base: f64,
    pub variant: f64,
    pub delta: f64,
}

impl Delta {
    fn new(base: f64, variant: f64) -> Self {
        Delta { base, variant, delta: variant - base }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftWaitDelta {
    pub lift_id: String,
    pub base: Option<f64>,
    pub variant: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub step: u32,
    pub base: f64,
    pub variant: f64,
}

/// Differences between two aggregated runs (variant minus base).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub mean_wait_s: Delta,
    pub lifts_per_skier: Delta,
    pub skiers: Delta,
    pub ski_share: Delta,
    pub wait_share: Delta,
    pub ride_share: Delta,
    pub lunch_share: Delta,
    pub per_lift: Vec<LiftWaitDelta>,
    pub swipe_profile: Vec<ProfilePoint>,
}

pub fn compare_scenarios(base: &AggregateMetrics, variant: &AggregateMetrics) -> Result<DeltaReport, EngineError> {
    if base.step_seconds != variant.step_seconds {
        return Err(EngineError::MismatchedSteps { base: base.step_seconds, variant: variant.step_seconds });
    }
    let (b, v) = (&base.summary, &variant.summary);
    let mut lifts: Vec<&String> = base.lift_mean_wait.keys().chain(variant.lift_mean_wait.keys()).collect();
    lifts.sort();
    lifts.dedup();
    let per_lift = lifts
        .into_iter()
        .map(|id| {
            let bw = base.lift_mean_wait.get(id).copied();
            let vw = variant.lift_mean_wait.get(id).copied();
            LiftWaitDelta { lift_id: id.clone(), base: bw, variant: vw, delta: bw.zip(vw).map(|(x, y)| y - x) }
        })
        .collect();
    let totals = |m: &AggregateMetrics| {
        let mut out: BTreeMap<u32, f64> = BTreeMap::new();
        for ((_, step), n) in &m.swipes {
            *out.entry(*step).or_insert(0.0) += n;
        }
        out
    };
    let (bt, vt) = (totals(base), totals(variant));
    let mut steps: Vec<u32> = bt.keys().chain(vt.keys()).copied().collect();
    steps.sort_unstable();
    steps.dedup();
    let swipe_profile = steps
        .into_iter()
        .map(|s| ProfilePoint {
            step: s,
            base: bt.get(&s).copied().unwrap_or(0.0),
            variant: vt.get(&s).copied().unwrap_or(0.0),
        })
        .collect();
    Ok(DeltaReport {
        mean_wait_s: Delta::new(b.mean_wait_s, v.mean_wait_s),
        lifts_per_skier: Delta::new(b.lifts_per_skier, v.lifts_per_skier),
        skiers: Delta::new(b.skiers, v.skiers),
        ski_share: Delta::new(b.ski_share, v.ski_share),
        wait_share: Delta::new(b.wait_share, v.wait_share),
        ride_share: Delta::new(b.ride_share, v.ride_share),
        lunch_share: Delta::new(b.lunch_share, v.lunch_share),
        per_lift,
        swipe_profile,
    })
}
