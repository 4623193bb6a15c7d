//! Fitting model inputs from data: GPS speed laws, demand from first
//! swipes, and utility coefficients from per-lift swipe counts.

use std::collections::BTreeMap;
use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as GaussianNoise};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::behavior::{BehaviorModel, Coefficients, UtilityParams};
use crate::engine::{run_replications, EngineError, LiftClosure, SimConfig, SimInputs};
use crate::graph::SkiArea;
use crate::population::{DemandProfile, NormalLaw, PopulationSpec, SpeedModel};
use crate::types::{Color, Level, PerColor, PerLevel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("slope geometry is empty")]
    EmptyGeometry,
    #[error("{level}/{color}: {samples} speed samples, need at least {MIN_SAMPLES}")]
    InsufficientData { level: Level, color: Color, samples: usize },
    #[error("no fitted speed law for level {0}")]
    LevelWithoutData(Level),
    #[error("lift `{0}` is not mapped to a generator")]
    UnmappedLift(String),
    #[error("invalid observed swipes: {0}")]
    InvalidObserved(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("json: {0}")]
    Json(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl CalibrationError {
    pub fn is_validation(&self) -> bool {
        match self {
            CalibrationError::Engine(e) => !matches!(e, EngineError::StalledAgent { .. }),
            _ => true,
        }
    }
}

fn csv_err(e: csv::Error) -> CalibrationError {
    CalibrationError::Csv(crate::csv_error_message(&e))
}

pub const MAP_MATCH_TOLERANCE_M: f64 = 30.0;
pub const MIN_ACTIVE_S: f64 = 30.0 * 60.0;
/// Longer gaps between records on one slope are breaks, not skiing.
pub const MAX_SEGMENT_GAP_S: f64 = 60.0;
pub const MIN_SAMPLES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpsRecord {
    pub timestamp_s: f64,
    pub x_m: f64,
    pub y_m: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpsTrack {
    pub skier_id: String,
    /// Strictly increasing timestamps.
    pub records: Vec<GpsRecord>,
}

#[derive(Debug, Deserialize)]
struct GpsRow {
    skier_id: String,
    timestamp_s: f64,
    x_m: f64,
    y_m: f64,
}

/// Tracks read from `skier_id,timestamp_s,x_m,y_m` rows, plus the number of
/// records dropped for non-finite values or non-increasing timestamps.
pub fn read_gps_csv(reader: impl Read) -> Result<(Vec<GpsTrack>, usize), CalibrationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut by_skier: BTreeMap<String, Vec<GpsRecord>> = BTreeMap::new();
    let mut dropped = 0;
    for row in rdr.deserialize::<GpsRow>() {
        let row = row.map_err(csv_err)?;
        let rec = GpsRecord { timestamp_s: row.timestamp_s, x_m: row.x_m, y_m: row.y_m };
        let records = by_skier.entry(row.skier_id).or_default();
        let finite = rec.timestamp_s.is_finite() && rec.x_m.is_finite() && rec.y_m.is_finite();
        let increasing = records.last().is_none_or(|last| rec.timestamp_s > last.timestamp_s);
        if finite && increasing {
            records.push(rec);
        } else {
            dropped += 1;
        }
    }
    let tracks = by_skier.into_iter().map(|(skier_id, records)| GpsTrack { skier_id, records }).collect();
    Ok((tracks, dropped))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlopeLine {
    pub slope_id: String,
    pub color: Color,
    pub points: Vec<[f64; 2]>,
}

/// Slope polylines, sorted by slope id.
#[derive(Clone, Debug, PartialEq)]
pub struct SlopeGeometry {
    lines: Vec<SlopeLine>,
}

#[derive(Deserialize)]
struct FeatureCollection {
    features: Vec<Feature>,
}

#[derive(Deserialize)]
struct Feature {
    properties: FeatureProps,
    geometry: LineString,
}

#[derive(Deserialize)]
struct FeatureProps {
    slope_id: String,
    color: Color,
}

#[derive(Deserialize)]
struct LineString {
    coordinates: Vec<[f64; 2]>,
}

impl SlopeGeometry {
    pub fn new(mut lines: Vec<SlopeLine>) -> Result<Self, CalibrationError> {
        lines.retain(|l| !l.points.is_empty());
        if lines.is_empty() {
            return Err(CalibrationError::EmptyGeometry);
        }
        lines.sort_by(|a, b| a.slope_id.cmp(&b.slope_id));
        if let Some(w) = lines.windows(2).find(|w| w[0].slope_id == w[1].slope_id) {
            return Err(CalibrationError::InvalidInput(format!("slope `{}` appears twice", w[0].slope_id)));
        }
        Ok(SlopeGeometry { lines })
    }

    /// GeoJSON-style feature collection of LineStrings with `slope_id` and
    /// `color` properties, in a planar frame in meters.
    pub fn from_geojson(text: &str) -> Result<Self, CalibrationError> {
        let fc: FeatureCollection = serde_json::from_str(text).map_err(|e| CalibrationError::Json(e.to_string()))?;
        SlopeGeometry::new(
            fc.features
                .into_iter()
                .map(|f| SlopeLine { slope_id: f.properties.slope_id, color: f.properties.color, points: f.geometry.coordinates })
                .collect(),
        )
    }

    pub fn lines(&self) -> &[SlopeLine] {
        &self.lines
    }

    /// Distance from a point to one polyline.
    pub fn distance(&self, line: usize, p: [f64; 2]) -> f64 {
        let pts = &self.lines[line].points;
        if pts.len() == 1 {
            return dist(p, pts[0]);
        }
        pts.windows(2).map(|w| point_segment_distance(p, w[0], w[1])).fold(f64::INFINITY, f64::min)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

/// Nearest slope (index into [`SlopeGeometry::lines`]) of each record
/// within `tolerance`; ties go to the lower slope id.
pub fn map_match(track: &GpsTrack, geometry: &SlopeGeometry, tolerance: f64) -> Vec<Option<usize>> {
    track
        .records
        .iter()
        .map(|r| {
            let p = [r.x_m, r.y_m];
            let mut best: Option<(usize, f64)> = None;
            for i in 0..geometry.lines.len() {
                let d = geometry.distance(i, p);
                if d <= tolerance && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
            best.map(|(i, _)| i)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchedTrack {
    pub track: GpsTrack,
    pub slopes: Vec<Option<usize>>,
}

impl MatchedTrack {
    /// Consecutive record pairs on one slope with a gap of at most
    /// [`MAX_SEGMENT_GAP_S`]: (slope, seconds, meters).
    pub fn segments(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        let r = &self.track.records;
        (1..r.len()).filter_map(move |i| match (self.slopes[i - 1], self.slopes[i]) {
            (Some(a), Some(b)) if a == b => {
                let dt = r[i].timestamp_s - r[i - 1].timestamp_s;
                let dd = dist([r[i - 1].x_m, r[i - 1].y_m], [r[i].x_m, r[i].y_m]);
                (dt > 0.0 && dt <= MAX_SEGMENT_GAP_S).then_some((a, dt, dd))
            }
            _ => None,
        })
    }

    pub fn slope_time(&self) -> f64 {
        self.segments().map(|(_, dt, _)| dt).sum()
    }

    /// Seconds on slopes of each color.
    pub fn time_by_color(&self, geometry: &SlopeGeometry) -> PerColor<f64> {
        let mut out = PerColor::splat(0.0);
        for (s, dt, _) in self.segments() {
            out[geometry.lines[s].color] += dt;
        }
        out
    }
}

pub fn match_tracks(tracks: Vec<GpsTrack>, geometry: &SlopeGeometry, tolerance: f64) -> Vec<MatchedTrack> {
    tracks
        .into_iter()
        .map(|track| {
            let slopes = map_match(&track, geometry, tolerance);
            MatchedTrack { track, slopes }
        })
        .collect()
}

/// Tracks with at least `min_active` seconds of slope-assigned time.
pub fn filter_tracks(tracks: Vec<MatchedTrack>, min_active: f64) -> Vec<MatchedTrack> {
    tracks.into_iter().filter(|t| t.slope_time() >= min_active).collect()
}

/// Survey row: share of the population at a level and how that level
/// splits its slope time over colors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelUsage {
    pub population_share: f64,
    pub usage: PerColor<f64>,
}

#[derive(Debug, Deserialize)]
struct UsageRow {
    level: Level,
    population_share: f64,
    green: f64,
    blue: f64,
    red: f64,
    black: f64,
}

/// Reads `level,population_share,green,blue,red,black` rows.
pub fn read_level_usage(reader: impl Read) -> Result<PerLevel<LevelUsage>, CalibrationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out: PerLevel<Option<LevelUsage>> = PerLevel::splat(None);
    for row in rdr.deserialize::<UsageRow>() {
        let r = row.map_err(csv_err)?;
        let values = [r.population_share, r.green, r.blue, r.red, r.black];
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(CalibrationError::InvalidInput(format!("{}: shares must be >= 0", r.level)));
        }
        if out[r.level].is_some() {
            return Err(CalibrationError::InvalidInput(format!("{} listed twice", r.level)));
        }
        out[r.level] = Some(LevelUsage {
            population_share: r.population_share,
            usage: PerColor { green: r.green, blue: r.blue, red: r.red, black: r.black },
        });
    }
    let missing = out.iter().find(|(_, u)| u.is_none()).map(|(l, _)| l);
    if let Some(level) = missing {
        return Err(CalibrationError::InvalidInput(format!("no usage row for {level}")));
    }
    Ok(PerLevel::from_fn(|l| out[l].expect("checked")))
}

/// Level drawn for a track with probability proportional to
/// `population_share * sum_c usage[c] * time_on[c]`; `None` without slope time.
pub fn assign_level(
    time_by_color: &PerColor<f64>,
    usage: &PerLevel<LevelUsage>,
    rng: &mut impl Rng,
) -> Option<Level> {
    let weights: Vec<f64> = Level::ALL
        .iter()
        .map(|&l| {
            let u = &usage[l];
            u.population_share * Color::ALL.iter().map(|&c| u.usage[c] * time_by_color[c]).sum::<f64>()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return Some(Level::ALL[i]);
        }
        x -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).map(|i| Level::ALL[i])
}

/// Normal law whose truncation below `floor` has the sample's mean and
/// variance. Falls back to the sample moments when no truncated normal
/// matches; constant samples give `sd = 0`.
pub fn fit_truncated_normal(samples: &[f64], floor: f64) -> NormalLaw {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 { samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    if var <= 1e-18 * mean.abs().max(1.0) {
        return NormalLaw { mean, sd: 0.0 };
    }
    let excess = mean - floor;
    if excess <= 0.0 {
        return NormalLaw { mean, sd: var.sqrt() };
    }
    let target = var / (excess * excess);
    // ratio(alpha) rises from 0 (no truncation) to 1 (exponential tail).
    let ratio = |alpha: f64| {
        let lambda = inverse_mills(alpha);
        (1.0 + alpha * lambda - lambda * lambda) / (lambda - alpha).powi(2)
    };
    let (mut lo, mut hi) = (-30.0_f64, 25.0_f64);
    if target <= ratio(lo) || target >= ratio(hi) {
        return NormalLaw { mean, sd: var.sqrt() };
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let sd = excess / (inverse_mills(alpha) - alpha);
    NormalLaw { mean: floor - alpha * sd, sd }
}

/// `phi(a) / (1 - Phi(a))` for the standard normal.
fn inverse_mills(a: f64) -> f64 {
    let z = Normal::standard();
    let sf = z.sf(a);
    if sf > 1e-300 {
        z.pdf(a) / sf
    } else {
        // Asymptotic expansion deep in the tail.
        a + 1.0 / a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedFit {
    pub model: SpeedModel,
    /// Samples per (level, color), including unfitted cells.
    pub samples: PerLevel<PerColor<usize>>,
    /// Cells left missing, with the reason.
    pub insufficient: Vec<String>,
    pub tracks_used: usize,
}

/// Fits per (level, color) truncated normal speed laws from filtered,
/// map-matched tracks, each track assigned a sampled level.
pub fn fit_speed_model(
    tracks: &[MatchedTrack],
    geometry: &SlopeGeometry,
    usage: &PerLevel<LevelUsage>,
    floor: f64,
    seed: u64,
) -> Result<SpeedFit, CalibrationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples: PerLevel<PerColor<Vec<f64>>> = PerLevel::from_fn(|_| PerColor::from_fn(|_| Vec::new()));
    let mut tracks_used = 0;
    for t in tracks {
        let Some(level) = assign_level(&t.time_by_color(geometry), usage, &mut rng) else {
            continue;
        };
        tracks_used += 1;
        for (s, dt, dd) in t.segments() {
            samples[level][geometry.lines[s].color].push(dd / dt);
        }
    }
    let mut cells = PerLevel::splat(PerColor::splat(None));
    let mut insufficient = Vec::new();
    for level in Level::ALL {
        for color in Color::ALL {
            let xs = &samples[level][color];
            if xs.len() < MIN_SAMPLES {
                insufficient.push(CalibrationError::InsufficientData { level, color, samples: xs.len() }.to_string());
                continue;
            }
            let law = fit_truncated_normal(xs, floor);
            if law.mean > 0.0 {
                cells[level][color] = Some(law);
            } else {
                insufficient.push(format!("{level}/{color}: fitted mean {} is not positive", law.mean));
            }
        }
        if cells[level].iter().all(|(_, c)| c.is_none()) {
            return Err(CalibrationError::LevelWithoutData(level));
        }
    }
    let model = SpeedModel::new(cells, PerLevel::splat(floor))
        .map_err(|e| CalibrationError::InvalidInput(e.to_string()))?;
    Ok(SpeedFit {
        model,
        samples: PerLevel::from_fn(|l| PerColor::from_fn(|c| samples[l][c].len())),
        insufficient,
        tracks_used,
    })
}

/// Swipe counts per (lift id, 30-minute step).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservedSwipes {
    pub counts: BTreeMap<(String, u32), f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SwipeRow {
    lift_id: String,
    step: u32,
    count: f64,
}

impl ObservedSwipes {
    /// Reads `lift_id,step,count` rows; repeated cells add up.
    pub fn from_csv(reader: impl Read) -> Result<Self, CalibrationError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut out = ObservedSwipes::default();
        for row in rdr.deserialize::<SwipeRow>() {
            let r = row.map_err(csv_err)?;
            if !(r.count >= 0.0) || !r.count.is_finite() {
                return Err(CalibrationError::InvalidObserved(format!("{} step {}: count {}", r.lift_id, r.step, r.count)));
            }
            *out.counts.entry((r.lift_id, r.step)).or_insert(0.0) += r.count;
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for ((lift_id, step), count) in &self.counts {
            w.serialize(SwipeRow { lift_id: lift_id.clone(), step: *step, count: *count }).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf8")
    }

    pub fn total(&self) -> f64 {
        self.counts.values().sum()
    }
}

/// Demand per generator and step: the first swipes of each lift go to its
/// generator.
pub fn demand_from_first_swipes(
    first: &ObservedSwipes,
    lift_to_generator: &BTreeMap<String, String>,
) -> Result<DemandProfile, CalibrationError> {
    let mut profile = DemandProfile::default();
    for ((lift, step), n) in &first.counts {
        let generator = lift_to_generator.get(lift).ok_or_else(|| CalibrationError::UnmappedLift(lift.clone()))?;
        profile.add(generator, *step, *n);
    }
    Ok(profile)
}

/// Root mean square difference over the union of cells; a cell missing on
/// one side counts as 0.
pub fn swipe_rmse(simulated: &BTreeMap<(String, u32), f64>, observed: &BTreeMap<(String, u32), f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (k, v) in simulated {
        let o = observed.get(k).copied().unwrap_or(0.0);
        sum += (v - o).powi(2);
        n += 1;
    }
    for (k, o) in observed {
        if !simulated.contains_key(k) {
            sum += o * o;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Names of the searched coordinates: slope coefficients (no wait term),
/// lift coefficients (no familiarity term), then omega. Shared by all levels.
pub const PARAM_NAMES: [&str; 13] = [
    "slope.altitude",
    "slope.familiarity",
    "slope.enjoyment",
    "slope.travel_time",
    "slope.access",
    "slope.lookahead",
    "lift.altitude",
    "lift.enjoyment",
    "lift.travel_time",
    "lift.wait",
    "lift.access",
    "lift.lookahead",
    "omega",
];

const SLOPE_COORDS: [usize; 6] = [0, 1, 2, 3, 5, 6];
const LIFT_COORDS: [usize; 6] = [0, 2, 3, 4, 5, 6];

/// Search vector of `params`, read from the medium level.
pub fn params_to_vector(params: &UtilityParams) -> Vec<f64> {
    let s = params.slope.medium.as_array();
    let l = params.lift.medium.as_array();
    let mut x: Vec<f64> = SLOPE_COORDS.iter().map(|&i| s[i]).collect();
    x.extend(LIFT_COORDS.iter().map(|&i| l[i]));
    x.push(params.omega);
    x
}

/// `base` with every level's searched coefficients replaced by `x`.
pub fn vector_to_params(base: &UtilityParams, x: &[f64]) -> UtilityParams {
    assert_eq!(x.len(), PARAM_NAMES.len());
    let mut p = base.clone();
    for level in Level::ALL {
        let s: &mut Coefficients = &mut p.slope[level];
        for (k, &i) in SLOPE_COORDS.iter().enumerate() {
            s.set(i, x[k]);
        }
        let l = &mut p.lift[level];
        for (k, &i) in LIFT_COORDS.iter().enumerate() {
            l.set(i, x[6 + k]);
        }
    }
    p.omega = x[12];
    p
}

fn default_budget() -> usize {
    200
}
fn default_search_reps() -> u32 {
    3
}
fn default_final_reps() -> u32 {
    10
}
fn default_t0() -> f64 {
    0.05
}
fn default_cooling() -> f64 {
    0.98
}
fn default_step() -> f64 {
    0.2
}
fn default_omega_bounds() -> [f64; 2] {
    [0.5, 10.0]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStart {
    /// Start from the scenario's parameters.
    #[default]
    Given,
    /// Start from a uniform draw inside the bounds.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Candidate evaluations, the initial point included.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_search_reps")]
    pub replications: u32,
    #[serde(default = "default_final_reps")]
    pub final_replications: u32,
    /// Initial temperature as a fraction of the initial objective.
    #[serde(default = "default_t0")]
    pub initial_temperature: f64,
    /// Geometric cooling factor per evaluation.
    #[serde(default = "default_cooling")]
    pub cooling: f64,
    /// Proposal standard deviation as a fraction of each coordinate's range.
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_omega_bounds")]
    pub omega_bounds: [f64; 2],
    #[serde(default)]
    pub start: SearchStart,
    /// Stop once the temperature falls below this fraction of the initial one.
    #[serde(default)]
    pub min_temperature: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            budget: default_budget(),
            replications: default_search_reps(),
            final_replications: default_final_reps(),
            initial_temperature: default_t0(),
            cooling: default_cooling(),
            step: default_step(),
            omega_bounds: default_omega_bounds(),
            start: SearchStart::default(),
            min_temperature: 0.0,
        }
    }
}

impl SearchConfig {
    fn validate(&self) -> Result<(), CalibrationError> {
        let bad = |m: &str| Err(CalibrationError::InvalidConfig(m.to_string()));
        if self.budget < 1 {
            return bad("budget must be >= 1");
        }
        if self.replications < 1 || self.final_replications < 1 {
            return bad("replications must be >= 1");
        }
        if !(self.cooling > 0.0 && self.cooling <= 1.0) {
            return bad("cooling must be in (0, 1]");
        }
        if !(self.initial_temperature >= 0.0) || !(self.step > 0.0) {
            return bad("temperature must be >= 0 and step > 0");
        }
        let [lo, hi] = self.omega_bounds;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad("omega bounds must satisfy 0 <= lo <= hi");
        }
        Ok(())
    }

    fn bounds(&self) -> Vec<[f64; 2]> {
        let mut b = vec![[0.0, 1.0]; PARAM_NAMES.len() - 1];
        b.push(self.omega_bounds);
        b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub evaluation: usize,
    pub candidate_rmse: f64,
    pub current_rmse: f64,
    pub best_rmse: f64,
    pub accepted: bool,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: UtilityParams,
    pub vector: BTreeMap<String, f64>,
    pub initial_rmse: f64,
    /// Best objective found during the search.
    pub best_search_rmse: f64,
    /// Best parameters re-evaluated with the final replication count.
    pub final_rmse: f64,
    pub evaluations: usize,
    pub budget_exhausted: bool,
    pub trace: Vec<TracePoint>,
}

/// Everything a candidate evaluation needs besides the parameters.
pub struct CalibrationProblem<'a> {
    pub area: &'a SkiArea,
    pub population: &'a PopulationSpec,
    pub closures: &'a [LiftClosure],
    pub sim: &'a SimConfig,
    pub base_params: &'a UtilityParams,
    pub observed: &'a ObservedSwipes,
}

impl CalibrationProblem<'_> {
    /// Mean simulated swipes over `replications` seeded runs.
    pub fn simulate(
        &self,
        params: &UtilityParams,
        replications: u32,
        seed: u64,
    ) -> Result<BTreeMap<(String, u32), f64>, CalibrationError> {
        let model = BehaviorModel::new(self.area, params.clone(), &self.population.speeds.mean_table(Level::Medium));
        let config = SimConfig { replications, seed, ..self.sim.clone() };
        let inputs = SimInputs { area: self.area, model: &model, closures: self.closures, config: &config };
        let (_, agg) = run_replications(&inputs, self.population)?;
        Ok(agg.swipes)
    }

    pub fn objective(&self, params: &UtilityParams, replications: u32, seed: u64) -> Result<f64, CalibrationError> {
        Ok(swipe_rmse(&self.simulate(params, replications, seed)?, &self.observed.counts))
    }
}

/// Simulated annealing over [`PARAM_NAMES`]. Every candidate is simulated
/// with the same seeds, so objective differences reflect the parameters.
pub fn calibrate(
    problem: &CalibrationProblem<'_>,
    search: &SearchConfig,
    seed: u64,
) -> Result<CalibrationResult, CalibrationError> {
    search.validate()?;
    problem.base_params.validate().map_err(|e| CalibrationError::InvalidConfig(e.to_string()))?;
    if problem.observed.counts.is_empty() {
        return Err(CalibrationError::InvalidObserved("no swipe counts".into()));
    }
    let bounds = search.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(11);
    let sim_seed = rng.random::<u64>();
    let mut x = match search.start {
        SearchStart::Given => {
            let mut x = params_to_vector(problem.base_params);
            for (v, b) in x.iter_mut().zip(&bounds) {
                *v = v.clamp(b[0], b[1]);
            }
            x
        }
        SearchStart::Random => bounds.iter().map(|b| rng.random_range(b[0]..=b[1])).collect(),
    };
    let eval = |x: &[f64]| problem.objective(&vector_to_params(problem.base_params, x), search.replications, sim_seed);

    let mut fx = eval(&x)?;
    let initial_rmse = fx;
    let (mut best_x, mut best_f) = (x.clone(), fx);
    let t0 = search.initial_temperature * fx.max(f64::MIN_POSITIVE);
    let mut temperature = t0;
    let mut trace = vec![TracePoint {
        evaluation: 1,
        candidate_rmse: fx,
        current_rmse: fx,
        best_rmse: fx,
        accepted: true,
        temperature,
    }];
    let mut evaluations = 1;
    let mut cooled = false;
    while evaluations < search.budget {
        if search.min_temperature > 0.0 && temperature < search.min_temperature * t0 {
            cooled = true;
            break;
        }
        let i = (evaluations - 1) % x.len();
        let [lo, hi] = bounds[i];
        let noise = GaussianNoise::new(0.0, search.step * (hi - lo).max(1e-12)).expect("positive sd");
        let mut y = x.clone();
        y[i] = (x[i] + noise.sample(&mut rng)).clamp(lo, hi);
        let fy = eval(&y)?;
        evaluations += 1;
        let accepted =
            fy <= fx || (temperature > 0.0 && rng.random::<f64>() < ((fx - fy) / temperature).exp());
        if accepted {
            x = y;
            fx = fy;
            if fx < best_f {
                best_f = fx;
                best_x = x.clone();
            }
        }
        trace.push(TracePoint {
            evaluation: evaluations,
            candidate_rmse: fy,
            current_rmse: fx,
            best_rmse: best_f,
            accepted,
            temperature,
        });
        temperature *= search.cooling;
    }
    let params = vector_to_params(problem.base_params, &best_x);
    let final_rmse = problem.objective(&params, search.final_replications, sim_seed)?;
    Ok(CalibrationResult {
        vector: PARAM_NAMES.iter().map(|n| n.to_string()).zip(best_x.iter().copied()).collect(),
        params,
        initial_rmse,
        best_search_rmse: best_f,
        final_rmse,
        evaluations,
        budget_exhausted: !cooled,
        trace,
    })
}
