//! Synthetic population of skier groups.
//!
//! Groups are drawn from a skier-weighted segment table (group size x
//! ability level), spread over generators and 30-minute steps following a
//! demand profile, then given per-color speeds and a daily schedule.

use std::collections::BTreeMap;
use std::io::Read;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::types::{Color, Level, PerColor, PerLevel, SpeedTable, STEP_SECONDS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PopulationError {
    #[error("segment table: {0}")]
    InvalidSegments(String),
    #[error("no segment with a positive share fits within {total} skiers")]
    InfeasibleSegments { total: u64 },
    #[error("demand profile is empty or sums to zero")]
    EmptyDemand,
    #[error("demand profile: {0}")]
    InvalidDemand(String),
    #[error("speed model: {0}")]
    InvalidSpeedModel(String),
    #[error("schedule window `{0}` lies outside the operating day")]
    WindowOutsideDay(&'static str),
    #[error("total skier count must be at least 1")]
    NoSkiers,
    #[error("{0}")]
    Csv(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub group_size: u32,
    pub level: Level,
    /// Fraction of skiers (not of groups) in this segment.
    pub share: f64,
}

/// Skier-weighted distribution of group size and level.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SegmentTable {
    rows: Vec<SegmentRow>,
}

impl<'de> Deserialize<'de> for SegmentTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<SegmentRow>::deserialize(d)?;
        SegmentTable::new(rows).map_err(serde::de::Error::custom)
    }
}

impl SegmentTable {
    pub fn new(rows: Vec<SegmentRow>) -> Result<Self, PopulationError> {
        if rows.is_empty() {
            return Err(PopulationError::InvalidSegments("no rows".into()));
        }
        for r in &rows {
            if r.group_size < 1 {
                return Err(PopulationError::InvalidSegments("group sizes must be >= 1".into()));
            }
            if !(r.share >= 0.0) {
                return Err(PopulationError::InvalidSegments("shares must be >= 0".into()));
            }
        }
        let total: f64 = rows.iter().map(|r| r.share).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(PopulationError::InvalidSegments(format!("shares sum to {total}, expected 1")));
        }
        Ok(SegmentTable { rows })
    }

    /// The survey-derived mix of a large resort: sizes 2 to 16, four levels.
    pub fn resort_survey() -> Self {
        const SIZES: [u32; 6] = [2, 4, 6, 8, 12, 16];
        const PERCENT: [[f64; 4]; 6] = [
            [1.3, 3.7, 6.3, 3.5],
            [4.1, 11.3, 15.8, 3.7],
            [1.8, 6.2, 10.1, 2.2],
            [1.2, 3.3, 5.8, 1.7],
            [0.8, 3.3, 4.2, 1.3],
            [0.4, 3.0, 3.6, 1.4],
        ];
        let mut rows = Vec::with_capacity(24);
        for (size, row) in SIZES.iter().zip(PERCENT) {
            for (level, pct) in Level::ALL.into_iter().zip(row) {
                rows.push(SegmentRow { group_size: *size, level, share: pct / 100.0 });
            }
        }
        // Printed percentages sum to exactly 100.0; renormalize away float dust.
        let total: f64 = rows.iter().map(|r| r.share).sum();
        rows.iter_mut().for_each(|r| r.share /= total);
        SegmentTable { rows }
    }

    pub fn rows(&self) -> &[SegmentRow] {
        &self.rows
    }

    pub fn max_size(&self) -> u32 {
        self.rows.iter().map(|r| r.group_size).max().unwrap_or(1)
    }

    /// Skier-weighted mean group size, `sum(share * size)`.
    pub fn skier_weighted_mean_size(&self) -> f64 {
        self.rows.iter().map(|r| r.share * r.group_size as f64).sum()
    }

    /// Group-weighted mean group size, `1 / sum(share / size)`.
    pub fn group_weighted_mean_size(&self) -> f64 {
        1.0 / self.rows.iter().map(|r| r.share / r.group_size as f64).sum::<f64>()
    }

    /// Reads `group_size,level,share` rows.
    pub fn from_csv(reader: impl Read) -> Result<Self, PopulationError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let rows = rdr
            .deserialize::<SegmentRow>()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| PopulationError::Csv(crate::csv_error_message(&e)))?;
        SegmentTable::new(rows)
    }
}

/// Normal law parameters, meters per second.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalLaw {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SpeedCellRecord {
    level: Level,
    color: Color,
    mean: f64,
    sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SpeedModelRecord {
    cells: Vec<SpeedCellRecord>,
    #[serde(default = "default_floors")]
    floor: PerLevel<f64>,
}

fn default_floors() -> PerLevel<f64> {
    PerLevel::splat(SpeedModel::DEFAULT_FLOOR)
}

/// Per (level, color) normal speed laws, truncated below at a per-level
/// floor. Cells may be missing; they resolve to the hardest color the same
/// level has data for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpeedModelRecord", into = "SpeedModelRecord")]
pub struct SpeedModel {
    cells: PerLevel<PerColor<Option<NormalLaw>>>,
    floor: PerLevel<f64>,
}

impl TryFrom<SpeedModelRecord> for SpeedModel {
    type Error = PopulationError;

    fn try_from(rec: SpeedModelRecord) -> Result<Self, Self::Error> {
        let mut cells = PerLevel::splat(PerColor::splat(None));
        for c in rec.cells {
            cells[c.level][c.color] = Some(NormalLaw { mean: c.mean, sd: c.sd });
        }
        SpeedModel::new(cells, rec.floor)
    }
}

impl From<SpeedModel> for SpeedModelRecord {
    fn from(m: SpeedModel) -> Self {
        let mut cells = Vec::new();
        for level in Level::ALL {
            for color in Color::ALL {
                if let Some(law) = m.cells[level][color] {
                    cells.push(SpeedCellRecord { level, color, mean: law.mean, sd: law.sd });
                }
            }
        }
        SpeedModelRecord { cells, floor: m.floor }
    }
}

impl SpeedModel {
    pub const DEFAULT_FLOOR: f64 = 0.3;

    pub fn new(
        cells: PerLevel<PerColor<Option<NormalLaw>>>,
        floor: PerLevel<f64>,
    ) -> Result<Self, PopulationError> {
        for level in Level::ALL {
            if !(floor[level] > 0.0) {
                return Err(PopulationError::InvalidSpeedModel(format!("floor for {level} must be > 0")));
            }
            let row = &cells[level];
            if row.iter().all(|(_, c)| c.is_none()) {
                return Err(PopulationError::InvalidSpeedModel(format!("no speed law for {level}")));
            }
            for (color, cell) in row.iter() {
                if let Some(law) = cell {
                    if !(law.sd >= 0.0) || !(law.mean > 0.0) {
                        return Err(PopulationError::InvalidSpeedModel(format!(
                            "{level}/{color}: need mean > 0 and sd >= 0"
                        )));
                    }
                }
            }
        }
        Ok(SpeedModel { cells, floor })
    }

    /// Speed laws measured by GPS at a large resort. Beginners have no red
    /// or black cell and mediums no black cell.
    pub fn gps_survey() -> Self {
        let law = |mean, sd| Some(NormalLaw { mean, sd });
        let cells = PerLevel {
            beginner: PerColor { green: law(1.47, 1.21), blue: law(2.72, 3.39), red: None, black: None },
            medium: PerColor { green: law(3.38, 4.06), blue: law(3.18, 2.79), red: law(5.49, 3.08), black: None },
            good: PerColor {
                green: law(1.88, 2.70),
                blue: law(3.84, 4.19),
                red: law(3.86, 3.81),
                black: law(3.35, 3.31),
            },
            expert: PerColor {
                green: law(2.87, 2.99),
                blue: law(4.39, 5.15),
                red: law(4.26, 4.46),
                black: law(2.39, 1.87),
            },
        };
        SpeedModel::new(cells, default_floors()).expect("built-in speed model is valid")
    }

    /// Measured cell, if any.
    pub fn cell(&self, level: Level, color: Color) -> Option<NormalLaw> {
        self.cells[level][color]
    }

    /// Law used for sampling: the cell itself, else the hardest color the
    /// level has data for.
    pub fn resolved(&self, level: Level, color: Color) -> NormalLaw {
        self.cells[level][color].unwrap_or_else(|| {
            Color::ALL
                .iter()
                .rev()
                .find_map(|&c| self.cells[level][c])
                .expect("validated: every level has a cell")
        })
    }

    pub fn floor(&self, level: Level) -> f64 {
        self.floor[level]
    }

    /// Mean of each resolved law, floored. Used as the reference speed table
    /// for level-independent precomputations.
    pub fn mean_table(&self, level: Level) -> SpeedTable {
        PerColor::from_fn(|c| self.resolved(level, c).mean.max(self.floor[level]))
    }
}

/// Draws a speed from the resolved law of `(level, color)`, truncated below
/// at the level's floor. Uses inverse-CDF sampling, one uniform per draw.
pub fn sample_speed(model: &SpeedModel, level: Level, color: Color, rng: &mut impl Rng) -> f64 {
    let law = model.resolved(level, color);
    let floor = model.floor(level);
    truncated_normal(law, floor, rng)
}

pub(crate) fn truncated_normal(law: NormalLaw, floor: f64, rng: &mut impl Rng) -> f64 {
    if law.sd == 0.0 {
        return law.mean.max(floor);
    }
    let normal = Normal::new(law.mean, law.sd).expect("sd > 0");
    let p_lo = normal.cdf(floor);
    if p_lo >= 1.0 - 1e-12 {
        return floor;
    }
    let u: f64 = rng.random_range(p_lo..1.0);
    normal.inverse_cdf(u).max(floor)
}

/// Expected number of arriving skiers per generator and 30-minute step.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct DemandProfile {
    /// (generator id, step index since midnight) -> expected skiers.
    pub cells: BTreeMap<(String, u32), f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DemandRecord {
    generator_id: String,
    step_index: u32,
    skiers: f64,
}

impl DemandProfile {
    pub fn total(&self) -> f64 {
        self.cells.values().sum()
    }

    pub fn add(&mut self, generator: &str, step: u32, skiers: f64) {
        *self.cells.entry((generator.to_string(), step)).or_insert(0.0) += skiers;
    }

    pub fn generator_total(&self, generator: &str) -> f64 {
        self.cells.iter().filter(|((g, _), _)| g == generator).map(|(_, v)| v).sum()
    }

    pub fn validate(&self) -> Result<(), PopulationError> {
        if let Some(((g, s), v)) = self.cells.iter().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(PopulationError::InvalidDemand(format!("{g} step {s}: {v} is not a non-negative count")));
        }
        if !(self.total() > 0.0) {
            return Err(PopulationError::EmptyDemand);
        }
        Ok(())
    }

    /// Reads `generator_id,step_index,skiers` rows; repeated cells add up.
    pub fn from_csv(reader: impl Read) -> Result<Self, PopulationError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut profile = DemandProfile::default();
        for rec in rdr.deserialize::<DemandRecord>() {
            let rec = rec.map_err(|e| PopulationError::Csv(crate::csv_error_message(&e)))?;
            profile.add(&rec.generator_id, rec.step_index, rec.skiers);
        }
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        for ((g, s), v) in &self.cells {
            wtr.serialize(DemandRecord { generator_id: g.clone(), step_index: *s, skiers: *v })
                .expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory write")).expect("utf8")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lunch {
    pub start: f64,
    pub duration: f64,
}

/// Simulated agent: an indivisible group of skiers.
///
/// Runtime state (position, mode, visit counts) lives with the engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub id: u32,
    pub size: u32,
    pub level: Level,
    /// Generator node id; the group starts and ends its day there.
    pub origin: String,
    /// Seconds since midnight.
    pub arrival_time: f64,
    pub lunch: Option<Lunch>,
    /// Seconds spent in free mode before a new destination is drawn.
    pub free_mode_budget: f64,
    /// Time from which the group starts heading back to its origin.
    pub departure_decision_time: f64,
    pub speeds: SpeedTable,
}

/// Draws group compositions and arrival times.
///
/// The total is split over (generator, step) cells with a multinomial draw
/// proportional to demand, which is the law of independent Poisson counts
/// conditioned on their sum. Groups are sampled from the segment table with
/// probability proportional to `share / size` until the skier total is
/// reached, then laid end to end over the cells. Arrival times are uniform
/// within a cell's step. Speeds and schedule are left at defaults.
pub fn synthesize_population(
    total_skiers: u64,
    segments: &SegmentTable,
    demand: &DemandProfile,
    seed: u64,
) -> Result<Vec<Group>, PopulationError> {
    if total_skiers < 1 {
        return Err(PopulationError::NoSkiers);
    }
    demand.validate()?;
    let feasible: Vec<&SegmentRow> = segments
        .rows()
        .iter()
        .filter(|r| r.share > 0.0 && r.group_size as u64 <= total_skiers)
        .collect();
    if feasible.is_empty() {
        return Err(PopulationError::InfeasibleSegments { total: total_skiers });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SYNTHESIS);

    let weights: Vec<f64> = feasible.iter().map(|r| r.share / r.group_size as f64).collect();
    let weight_sum: f64 = weights.iter().sum();
    let mut drawn: Vec<&SegmentRow> = Vec::new();
    let mut skiers = 0u64;
    while skiers < total_skiers {
        let row = feasible[pick_weighted(&weights, weight_sum, &mut rng)];
        skiers += row.group_size as u64;
        drawn.push(row);
    }

    let cells: Vec<(&(String, u32), f64)> = demand.cells.iter().map(|(k, v)| (k, *v)).collect();
    let counts = multinomial(total_skiers, &cells.iter().map(|c| c.1).collect::<Vec<_>>(), &mut rng);

    let mut groups = Vec::with_capacity(drawn.len());
    let mut cell = 0usize;
    let mut cell_end = counts[0];
    let mut start = 0u64;
    for row in drawn {
        while start >= cell_end {
            cell += 1;
            cell_end += counts[cell];
        }
        let (generator, step) = cells[cell].0;
        let step_start = *step as f64 * STEP_SECONDS;
        let arrival_time = step_start + rng.random::<f64>() * STEP_SECONDS;
        groups.push(Group {
            id: 0,
            size: row.group_size,
            level: row.level,
            origin: generator.clone(),
            arrival_time,
            lunch: None,
            free_mode_budget: 0.0,
            departure_decision_time: f64::INFINITY,
            speeds: SpeedTable::splat(1.0),
        });
        start += row.group_size as u64;
    }
    groups.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time));
    for (i, g) in groups.iter_mut().enumerate() {
        g.id = i as u32;
    }
    Ok(groups)
}

const STREAM_SYNTHESIS: u64 = 1;
const STREAM_ATTRIBUTES: u64 = 2;

fn pick_weighted(weights: &[f64], total: f64, rng: &mut impl RngCore) -> usize {
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}

/// Multinomial draw by sequential conditional binomials.
fn multinomial(n: u64, weights: &[f64], rng: &mut impl RngCore) -> Vec<u64> {
    let mut suffix = vec![0.0; weights.len() + 1];
    for i in (0..weights.len()).rev() {
        suffix[i] = suffix[i + 1] + weights[i];
    }
    let mut remaining = n;
    let mut out = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let k = if remaining == 0 || w <= 0.0 {
            0
        } else if suffix[i + 1] <= 0.0 {
            remaining
        } else {
            let p = (w / suffix[i]).clamp(0.0, 1.0);
            Binomial::new(remaining, p).expect("p in [0,1]").sample(rng)
        };
        remaining -= k;
        out.push(k);
    }
    out
}

/// Lunch and departure settings shared by all groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Window for the lunch start, seconds since midnight.
    pub lunch_start: [f64; 2],
    /// Window for the lunch duration, seconds.
    pub lunch_duration: [f64; 2],
    /// Probability that a group skips lunch entirely.
    pub no_lunch_probability: f64,
    /// Free-mode time before a new destination is drawn, per level.
    pub free_mode_budget: PerLevel<f64>,
    /// Time from which groups head home; defaults to closing minus 90 min.
    #[serde(default)]
    pub departure_decision_time: Option<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            lunch_start: [12.0 * 3600.0, 13.0 * 3600.0],
            lunch_duration: [30.0 * 60.0, 60.0 * 60.0],
            no_lunch_probability: 0.2,
            free_mode_budget: PerLevel { beginner: 2700.0, medium: 3600.0, good: 3600.0, expert: 4500.0 },
            departure_decision_time: None,
        }
    }
}

/// Opening hours of the area, seconds since midnight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingDay {
    pub opening: f64,
    pub closing: f64,
}

impl ScheduleConfig {
    pub const DEFAULT_DEPARTURE_LEAD: f64 = 90.0 * 60.0;

    pub fn validate(&self, day: OperatingDay) -> Result<(), PopulationError> {
        let [s0, s1] = self.lunch_start;
        if !(s0 <= s1) || s0 < 0.0 || s1 > day.closing {
            return Err(PopulationError::WindowOutsideDay("lunch_start"));
        }
        let [d0, d1] = self.lunch_duration;
        if !(0.0 <= d0 && d0 <= d1) || s1 + d1 > day.closing {
            return Err(PopulationError::WindowOutsideDay("lunch_duration"));
        }
        if !(0.0..=1.0).contains(&self.no_lunch_probability) {
            return Err(PopulationError::WindowOutsideDay("no_lunch_probability"));
        }
        if let Some(h) = self.departure_decision_time {
            if h > day.closing {
                return Err(PopulationError::WindowOutsideDay("departure_decision_time"));
            }
        }
        if self.free_mode_budget.iter().any(|(_, b)| !(*b > 0.0)) {
            return Err(PopulationError::WindowOutsideDay("free_mode_budget"));
        }
        Ok(())
    }
}

/// Fills lunch, free-mode budget and departure decision time.
///
/// A group arriving after the lunch window skips lunch; one arriving inside
/// it starts lunch no earlier than its arrival.
pub fn assign_schedule(
    mut group: Group,
    config: &ScheduleConfig,
    day: OperatingDay,
    rng: &mut impl Rng,
) -> Result<Group, PopulationError> {
    config.validate(day)?;
    let takes_lunch = rng.random::<f64>() >= config.no_lunch_probability;
    let start = uniform(config.lunch_start, rng);
    let duration = uniform(config.lunch_duration, rng);
    group.lunch = if takes_lunch && duration > 0.0 && group.arrival_time <= config.lunch_start[1] {
        Some(Lunch { start: start.max(group.arrival_time), duration })
    } else {
        None
    };
    group.free_mode_budget = config.free_mode_budget[group.level];
    let departure = config
        .departure_decision_time
        .unwrap_or(day.closing - ScheduleConfig::DEFAULT_DEPARTURE_LEAD);
    group.departure_decision_time = departure.max(group.arrival_time);
    Ok(group)
}

fn uniform([lo, hi]: [f64; 2], rng: &mut impl Rng) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Everything needed to generate one replication's population.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationSpec {
    pub total_skiers: u64,
    pub segments: SegmentTable,
    pub demand: DemandProfile,
    pub schedule: ScheduleConfig,
    pub speeds: SpeedModel,
}

impl PopulationSpec {
    /// Full population for one seed: composition and arrivals, then
    /// per-color speeds (fixed for the day) and schedules.
    pub fn generate(&self, day: OperatingDay, seed: u64) -> Result<Vec<Group>, PopulationError> {
        self.schedule.validate(day)?;
        let groups = synthesize_population(self.total_skiers, &self.segments, &self.demand, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_ATTRIBUTES);
        groups
            .into_iter()
            .map(|mut g| {
                g.speeds = PerColor::from_fn(|c| sample_speed(&self.speeds, g.level, c, &mut rng));
                assign_schedule(g, &self.schedule, day, &mut rng)
            })
            .collect()
    }
}

/// Skiers generated by new beds at the observed skiers-per-bed ratio.
pub fn skiers_from_beds(beds: u64) -> u64 {
    (SKIERS_PER_BED * beds as f64).round() as u64
}

pub const SKIERS_PER_BED: f64 = 0.66;
