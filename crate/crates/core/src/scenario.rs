//! Scenario files: a network, a population and parameters, plus edits
//! describing a planning variant (closures, capacity changes, new demand,
//! new lifts or slopes).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{BehaviorError, BehaviorModel, UtilityParams};
use crate::engine::{run_replications, AggregateMetrics, EngineError, LiftClosure, MetricsLog, SimConfig, SimInputs};
use crate::graph::{build_area, GraphError, LiftArc, NetworkFile, NodeKind, SkiArea, SlopeArc};
use crate::population::{DemandProfile, OperatingDay, PopulationError, PopulationSpec, ScheduleConfig, SegmentTable, SpeedModel};
use crate::types::{Level, STEP_SECONDS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Json { path: String, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("edits `{op}` on `{entity}` conflict")]
    ConflictingEdits { op: String, entity: String },
    #[error("unknown lift `{0}`")]
    UnknownLift(String),
    #[error("`{0}` is not a generator node")]
    UnknownGenerator(String),
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("demand for `{generator}` in step {step} starts after closing")]
    DemandAfterClosing { generator: String, step: u32 },
}

/// A table given inline or as a path relative to the scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(String),
    Inline(T),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileShape {
    /// Follow the generator's own arrival profile (the area's if it has none).
    #[default]
    Same,
    /// Spread evenly over the steps in which the area has arrivals.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    CloseLift { lift: String, window: [f64; 2] },
    SetCapacity { lift: String, seats: u32 },
    SetHeadway { lift: String, seconds: f64 },
    AddDemand {
        generator: String,
        skiers: u64,
        #[serde(default)]
        profile_shape: ProfileShape,
    },
    AddLift { def: LiftArc },
    AddSlope { def: SlopeArc },
}

impl Edit {
    fn key(&self) -> (&'static str, &str) {
        match self {
            Edit::CloseLift { lift, .. } => ("close_lift", lift),
            Edit::SetCapacity { lift, .. } => ("set_capacity", lift),
            Edit::SetHeadway { lift, .. } => ("set_headway", lift),
            Edit::AddDemand { generator, .. } => ("add_demand", generator),
            Edit::AddLift { def } => ("add_lift", &def.id),
            Edit::AddSlope { def } => ("add_slope", &def.id),
        }
    }

    /// Additions first, then changes to existing entities, so edits on
    /// distinct entities commute.
    fn phase(&self) -> u8 {
        match self {
            Edit::AddSlope { .. } | Edit::AddLift { .. } => 0,
            Edit::SetCapacity { .. } | Edit::SetHeadway { .. } => 1,
            Edit::CloseLift { .. } => 2,
            Edit::AddDemand { .. } => 3,
        }
    }
}

fn default_segments() -> Source<SegmentTable> {
    Source::Inline(SegmentTable::resort_survey())
}

fn default_speeds() -> Source<SpeedModel> {
    Source::Inline(SpeedModel::gps_survey())
}

/// On-disk scenario description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub network: String,
    /// CSV `generator_id,step_index,skiers`.
    pub demand: String,
    /// Skiers of the day; defaults to the rounded demand total.
    #[serde(default)]
    pub total_skiers: Option<u64>,
    #[serde(default = "default_segments")]
    pub segments: Source<SegmentTable>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default = "default_speeds")]
    pub speeds: Source<SpeedModel>,
    #[serde(default)]
    pub utility: UtilityParams,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub edits: Vec<Edit>,
}

/// A validated scenario ready to simulate.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub area: SkiArea,
    pub population: PopulationSpec,
    pub params: UtilityParams,
    pub sim: SimConfig,
    pub closures: Vec<LiftClosure>,
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })
}

fn json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError::Json { path: path.display().to_string(), message: e.to_string() })
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        json(path, &read(path)?)
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let file = ScenarioFile::load(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Scenario::from_file(&file, &dir)
    }

    /// Resolves paths against `dir`, applies the edits and validates.
    pub fn from_file(file: &ScenarioFile, dir: &Path) -> Result<Self, ScenarioError> {
        let resolve = |p: &str| -> PathBuf { dir.join(p) };
        let net_path = resolve(&file.network);
        let mut network: NetworkFile = json(&net_path, &read(&net_path)?)?;
        let demand_path = resolve(&file.demand);
        let mut demand = DemandProfile::from_csv(read(&demand_path)?.as_bytes()).map_err(|e| match e {
            PopulationError::Csv(m) => ScenarioError::Io { path: demand_path.display().to_string(), message: m },
            other => other.into(),
        })?;
        let segments = match &file.segments {
            Source::Inline(t) => t.clone(),
            Source::Path(p) => {
                let path = resolve(p);
                SegmentTable::from_csv(read(&path)?.as_bytes()).map_err(|e| match e {
                    PopulationError::Csv(m) => ScenarioError::Io { path: path.display().to_string(), message: m },
                    other => other.into(),
                })?
            }
        };
        let speeds = match &file.speeds {
            Source::Inline(m) => m.clone(),
            Source::Path(p) => {
                let path = resolve(p);
                json(&path, &read(&path)?)?
            }
        };
        let mut total_skiers = file.total_skiers.unwrap_or_else(|| demand.total().round() as u64);

        let mut seen = BTreeSet::new();
        for e in &file.edits {
            let (op, entity) = e.key();
            if !seen.insert((op, entity.to_string())) {
                return Err(ScenarioError::ConflictingEdits { op: op.into(), entity: entity.into() });
            }
        }
        let mut edits: Vec<&Edit> = file.edits.iter().collect();
        edits.sort_by_key(|e| e.phase());
        let mut closures_by_id = Vec::new();
        for e in edits {
            match e {
                Edit::AddSlope { def } => network.slopes.push(def.clone()),
                Edit::AddLift { def } => network.lifts.push(def.clone()),
                Edit::SetCapacity { lift, seats } => lift_mut(&mut network, lift)?.vehicle_capacity = *seats,
                Edit::SetHeadway { lift, seconds } => lift_mut(&mut network, lift)?.headway = *seconds,
                Edit::CloseLift { lift, window: [start, end] } => {
                    lift_mut(&mut network, lift)?;
                    if !(start < end) {
                        return Err(ScenarioError::InvalidEdit(format!("close_lift `{lift}`: empty window")));
                    }
                    closures_by_id.push((lift.clone(), *start, *end));
                }
                Edit::AddDemand { generator, skiers, profile_shape } => {
                    add_demand(&mut demand, total_skiers, generator, *skiers, *profile_shape)?;
                    total_skiers += skiers;
                }
            }
        }

        let area = build_area(network)?;
        let closures: Vec<LiftClosure> = closures_by_id
            .iter()
            .map(|(id, start, end)| LiftClosure { lift: area.lift_idx(id).expect("checked"), start: *start, end: *end })
            .collect();
        let closed: Vec<usize> = closures.iter().map(|c| c.lift).collect();
        area.check_connected(&closed)?;
        for (generator, step) in demand.cells.keys() {
            match area.node_idx(generator) {
                Some(n) if area.node(n).kind == NodeKind::Generator => {}
                _ => return Err(ScenarioError::UnknownGenerator(generator.clone())),
            }
            if *step as f64 * STEP_SECONDS >= area.closing_time {
                return Err(ScenarioError::DemandAfterClosing { generator: generator.clone(), step: *step });
            }
        }
        file.utility.validate()?;
        file.sim.validate()?;
        let day = OperatingDay { opening: area.opening_time, closing: area.closing_time };
        file.schedule.validate(day)?;
        let population = PopulationSpec { total_skiers, segments, demand, schedule: file.schedule.clone(), speeds };
        Ok(Scenario { area, population, params: file.utility.clone(), sim: file.sim.clone(), closures })
    }

    pub fn model(&self) -> BehaviorModel {
        BehaviorModel::new(&self.area, self.params.clone(), &self.population.speeds.mean_table(Level::Medium))
    }

    /// All replications with `seed` as the base seed.
    pub fn run(&self, seed: u64) -> Result<(Vec<MetricsLog>, AggregateMetrics), EngineError> {
        let model = self.model();
        let config = SimConfig { seed, ..self.sim.clone() };
        let inputs = SimInputs { area: &self.area, model: &model, closures: &self.closures, config: &config };
        run_replications(&inputs, &self.population)
    }
}

fn lift_mut<'a>(network: &'a mut NetworkFile, id: &str) -> Result<&'a mut LiftArc, ScenarioError> {
    network.lifts.iter_mut().find(|l| l.id == id).ok_or_else(|| ScenarioError::UnknownLift(id.to_string()))
}

/// Adds `skiers` arrivals at `generator`. Demand cells are in the same
/// units as the existing profile, i.e. scaled by demand total / skiers.
fn add_demand(
    demand: &mut DemandProfile,
    total_skiers: u64,
    generator: &str,
    skiers: u64,
    shape: ProfileShape,
) -> Result<(), ScenarioError> {
    let unit = if total_skiers > 0 { demand.total() / total_skiers as f64 } else { 1.0 };
    let own: Vec<(u32, f64)> =
        demand.cells.iter().filter(|((g, _), _)| g == generator).map(|((_, s), v)| (*s, *v)).collect();
    let mut all: std::collections::BTreeMap<u32, f64> = std::collections::BTreeMap::new();
    for ((_, s), v) in &demand.cells {
        *all.entry(*s).or_insert(0.0) += v;
    }
    let weights: Vec<(u32, f64)> = match shape {
        ProfileShape::Same if own.iter().any(|(_, v)| *v > 0.0) => own,
        ProfileShape::Same => all.into_iter().collect(),
        ProfileShape::Uniform => all.into_iter().filter(|(_, v)| *v > 0.0).map(|(s, _)| (s, 1.0)).collect(),
    };
    let sum: f64 = weights.iter().map(|(_, w)| w).sum();
    if !(sum > 0.0) {
        return Err(ScenarioError::InvalidEdit(format!("add_demand `{generator}`: no arrival profile to follow")));
    }
    for (s, w) in weights {
        demand.add(generator, s, skiers as f64 * unit * w / sum);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demand() -> DemandProfile {
        let mut d = DemandProfile::default();
        d.add("A", 18, 30.0);
        d.add("A", 19, 10.0);
        d.add("B", 19, 60.0);
        d
    }

    #[test]
    fn add_demand_follows_own_profile() {
        let mut d = demand();
        add_demand(&mut d, 100, "A", 20, ProfileShape::Same).unwrap();
        assert_eq!(d.cells[&("A".to_string(), 18)], 45.0);
        assert_eq!(d.cells[&("A".to_string(), 19)], 15.0);
        assert_eq!(d.total(), 120.0);
    }

    #[test]
    fn add_demand_scales_to_profile_units() {
        // Profile sums to 100 for 200 skiers: 20 new skiers are 10 units.
        let mut d = demand();
        add_demand(&mut d, 200, "B", 20, ProfileShape::Uniform).unwrap();
        assert_eq!(d.cells[&("B".to_string(), 18)], 5.0);
        assert_eq!(d.cells[&("B".to_string(), 19)], 65.0);
    }

    #[test]
    fn new_generator_uses_area_shape() {
        let mut d = demand();
        add_demand(&mut d, 100, "C", 10, ProfileShape::Same).unwrap();
        assert_eq!(d.cells[&("C".to_string(), 18)], 3.0);
        assert_eq!(d.cells[&("C".to_string(), 19)], 7.0);
    }

    #[test]
    fn edits_parse_by_op() {
        let e: Edit = serde_json::from_str(r#"{"op":"close_lift","lift":"L1","window":[36000,39600]}"#).unwrap();
        assert_eq!(e, Edit::CloseLift { lift: "L1".into(), window: [36000.0, 39600.0] });
        let e: Edit = serde_json::from_str(r#"{"op":"add_demand","generator":"v","skiers":1617}"#).unwrap();
        assert_eq!(e.key(), ("add_demand", "v"));
    }
}
