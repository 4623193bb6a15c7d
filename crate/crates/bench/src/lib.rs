//! Inputs shared by the benchmarks.

use skisim_core::fixtures;
use skisim_core::{build_area, PopulationSpec, SkiArea};

/// A random area of `nodes` nodes with a morning population at its
/// generator.
pub fn random_setup(nodes: usize, skiers: u64, seed: u64) -> (SkiArea, PopulationSpec) {
    let area = build_area(fixtures::random_area(nodes, seed)).expect("generated areas are valid");
    let generator = area.nodes[0].id.clone();
    let population = fixtures::population(skiers, fixtures::morning_demand(&generator, skiers as f64));
    (area, population)
}
