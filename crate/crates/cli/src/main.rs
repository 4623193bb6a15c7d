use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use skisim_core::calibration::{
    calibrate, filter_tracks, fit_speed_model, match_tracks, read_gps_csv, read_level_usage, CalibrationProblem,
    ObservedSwipes, SearchConfig, SearchStart, SlopeGeometry, MAP_MATCH_TOLERANCE_M, MIN_ACTIVE_S,
};
use skisim_core::population::skiers_from_beds;
use skisim_core::report;
use skisim_core::scenario::{Edit, ProfileShape, ScenarioFile};
use skisim_core::{compare_scenarios, Error, Scenario, SpeedModel};

#[derive(Parser)]
#[command(name = "skisim", version, about = "Skier flow simulation and calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write swipes, waits, budgets and a summary.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Simulate two scenarios with the same seeds and write their differences.
    Compare {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        variant: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// New beds; adds their skiers to `--generator` in the variant.
        #[arg(long, requires = "generator")]
        beds: Option<u64>,
        #[arg(long, requires = "beds")]
        generator: Option<String>,
    },
    /// Fit utility coefficients to observed swipe counts.
    Calibrate {
        #[arg(long)]
        scenario: PathBuf,
        /// CSV `lift_id,step,count`.
        #[arg(long)]
        observed: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Candidate evaluations.
        #[arg(long, default_value_t = 200)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Search settings as JSON; `--budget` overrides its budget.
        #[arg(long)]
        search: Option<PathBuf>,
        /// Start from a random point instead of the scenario's parameters.
        #[arg(long)]
        random_start: bool,
    },
    /// Estimate speed laws from GPS tracks.
    FitSpeeds {
        /// CSV `skier_id,timestamp_s,x_m,y_m`.
        #[arg(long)]
        gps: PathBuf,
        /// GeoJSON-style slope polylines.
        #[arg(long)]
        geometry: PathBuf,
        /// CSV `level,population_share,green,blue,red,black`.
        #[arg(long)]
        shares: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = MAP_MATCH_TOLERANCE_M)]
        tolerance: f64,
        #[arg(long, default_value_t = SpeedModel::DEFAULT_FLOOR)]
        floor: f64,
    },
}

impl Command {
    fn out_dir(&self) -> &Path {
        match self {
            Command::Run { out, .. }
            | Command::Compare { out, .. }
            | Command::Calibrate { out, .. }
            | Command::FitSpeeds { out, .. } => out,
        }
    }
}

fn read_file(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })
}

fn with_path<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> Error + '_ {
    move |e| Error::Io { path: path.display().to_string(), message: e.to_string() }
}

fn scenario_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn run(cmd: &Command) -> Result<(), Error> {
    match cmd {
        Command::Run { scenario, out, seed } => {
            let sc = Scenario::load(scenario)?;
            let (logs, agg) = sc.run(*seed)?;
            report::write_run(out, *seed, &logs, &agg)
        }
        Command::Compare { base, variant, out, seed, beds, generator } => {
            let base_sc = Scenario::load(base)?;
            let mut variant_file = ScenarioFile::load(variant)?;
            if let (Some(beds), Some(generator)) = (beds, generator) {
                variant_file.edits.push(Edit::AddDemand {
                    generator: generator.clone(),
                    skiers: skiers_from_beds(*beds),
                    profile_shape: ProfileShape::Same,
                });
            }
            let variant_sc = Scenario::from_file(&variant_file, &scenario_dir(variant))?;
            let (base_logs, base_agg) = base_sc.run(*seed)?;
            let (variant_logs, variant_agg) = variant_sc.run(*seed)?;
            let delta = compare_scenarios(&base_agg, &variant_agg)?;
            report::write_run(&out.join("base"), *seed, &base_logs, &base_agg)?;
            report::write_run(&out.join("variant"), *seed, &variant_logs, &variant_agg)?;
            report::write_compare(out, &delta)
        }
        Command::Calibrate { scenario, observed, out, budget, seed, search, random_start } => {
            let sc = Scenario::load(scenario)?;
            let observed_swipes =
                ObservedSwipes::from_csv(read_file(observed)?.as_bytes()).map_err(|e| match e {
                    skisim_core::CalibrationError::Csv(m) => Error::Io { path: observed.display().to_string(), message: m },
                    other => other.into(),
                })?;
            let mut config = match search {
                Some(p) => serde_json::from_str::<SearchConfig>(&read_file(p)?).map_err(with_path(p))?,
                None => SearchConfig::default(),
            };
            config.budget = *budget;
            if *random_start {
                config.start = SearchStart::Random;
            }
            let problem = CalibrationProblem {
                area: &sc.area,
                population: &sc.population,
                closures: &sc.closures,
                sim: &sc.sim,
                base_params: &sc.params,
                observed: &observed_swipes,
            };
            let result = calibrate(&problem, &config, *seed)?;
            report::write_calibration(out, &result)
        }
        Command::FitSpeeds { gps, geometry, shares, out, seed, tolerance, floor } => {
            let (tracks, dropped) = read_gps_csv(read_file(gps)?.as_bytes()).map_err(|e| relabel(e, gps))?;
            let geometry_lines = SlopeGeometry::from_geojson(&read_file(geometry)?).map_err(|e| relabel(e, geometry))?;
            let usage = read_level_usage(read_file(shares)?.as_bytes()).map_err(|e| relabel(e, shares))?;
            let n_tracks = tracks.len();
            let matched = filter_tracks(match_tracks(tracks, &geometry_lines, *tolerance), MIN_ACTIVE_S);
            let fit = fit_speed_model(&matched, &geometry_lines, &usage, *floor, *seed)?;
            report::write_speed_fit(out, &fit)?;
            report::write_json(
                &out.join("tracks.json"),
                &json!({ "tracks_read": n_tracks, "records_dropped": dropped, "tracks_kept": matched.len() }),
            )
        }
    }
}

fn relabel(e: skisim_core::CalibrationError, path: &Path) -> Error {
    use skisim_core::CalibrationError as C;
    match e {
        C::Csv(m) | C::Json(m) => Error::Io { path: path.display().to_string(), message: m },
        other => other.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code: u8 = if e.is_validation() { 2 } else { 3 };
            let report = json!({ "error": e.kind(), "message": e.to_string(), "exit_code": code });
            let out = cli.command.out_dir();
            if std::fs::create_dir_all(out).is_ok() {
                let _ = report::write_json(&out.join("error.json"), &report);
            }
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}
