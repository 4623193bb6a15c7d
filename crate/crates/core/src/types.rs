//! Small domain vocabulary shared by every module: ability levels, slope
//! colors, and lookup tables keyed by either.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Ability level of a group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Beginner,
    Medium,
    Good,
    Expert,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Beginner, Level::Medium, Level::Good, Level::Expert];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Beginner => "beginner",
            Level::Medium => "medium",
            Level::Good => "good",
            Level::Expert => "expert",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "beginner" => Ok(Level::Beginner),
            "medium" => Ok(Level::Medium),
            "good" => Ok(Level::Good),
            "expert" => Ok(Level::Expert),
            other => Err(format!("unknown ability level `{other}`")),
        }
    }
}

/// Slope difficulty class, ordered from easiest to hardest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Green,
    Blue,
    Red,
    Black,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Green, Color::Blue, Color::Red, Color::Black];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Red => "red",
            Color::Black => "black",
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Color {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "green" => Ok(Color::Green),
            "blue" => Ok(Color::Blue),
            "red" => Ok(Color::Red),
            "black" => Ok(Color::Black),
            other => Err(format!("unknown slope color `{other}`")),
        }
    }
}

/// One value per ability level. Serialized as an object keyed by level name.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerLevel<T> {
    pub beginner: T,
    pub medium: T,
    pub good: T,
    pub expert: T,
}

impl<T> PerLevel<T> {
    pub fn from_fn(mut f: impl FnMut(Level) -> T) -> Self {
        PerLevel {
            beginner: f(Level::Beginner),
            medium: f(Level::Medium),
            good: f(Level::Good),
            expert: f(Level::Expert),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Level, &T)> {
        Level::ALL.into_iter().map(move |l| (l, &self[l]))
    }
}

impl<T: Clone> PerLevel<T> {
    pub fn splat(value: T) -> Self {
        PerLevel::from_fn(|_| value.clone())
    }
}

impl<T> Index<Level> for PerLevel<T> {
    type Output = T;

    fn index(&self, level: Level) -> &T {
        match level {
            Level::Beginner => &self.beginner,
            Level::Medium => &self.medium,
            Level::Good => &self.good,
            Level::Expert => &self.expert,
        }
    }
}

impl<T> IndexMut<Level> for PerLevel<T> {
    fn index_mut(&mut self, level: Level) -> &mut T {
        match level {
            Level::Beginner => &mut self.beginner,
            Level::Medium => &mut self.medium,
            Level::Good => &mut self.good,
            Level::Expert => &mut self.expert,
        }
    }
}

/// One value per slope color. Serialized as an object keyed by color name.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerColor<T> {
    pub green: T,
    pub blue: T,
    pub red: T,
    pub black: T,
}

impl<T> PerColor<T> {
    pub fn from_fn(mut f: impl FnMut(Color) -> T) -> Self {
        PerColor {
            green: f(Color::Green),
            blue: f(Color::Blue),
            red: f(Color::Red),
            black: f(Color::Black),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Color, &T)> {
        Color::ALL.into_iter().map(move |c| (c, &self[c]))
    }
}

impl<T: Clone> PerColor<T> {
    pub fn splat(value: T) -> Self {
        PerColor::from_fn(|_| value.clone())
    }
}

impl<T> Index<Color> for PerColor<T> {
    type Output = T;

    fn index(&self, color: Color) -> &T {
        match color {
            Color::Green => &self.green,
            Color::Blue => &self.blue,
            Color::Red => &self.red,
            Color::Black => &self.black,
        }
    }
}

impl<T> IndexMut<Color> for PerColor<T> {
    fn index_mut(&mut self, color: Color) -> &mut T {
        match color {
            Color::Green => &mut self.green,
            Color::Blue => &mut self.blue,
            Color::Red => &mut self.red,
            Color::Black => &mut self.black,
        }
    }
}

/// Skiing speed in meters per second for each slope color, for one group
/// or one reference ability level.
pub type SpeedTable = PerColor<f64>;

/// Length of a metrics and demand step, in seconds.
pub const STEP_SECONDS: f64 = 1800.0;

/// Index of the 30-minute step containing `time` (seconds since midnight).
pub fn step_of(time: f64) -> u32 {
    if time <= 0.0 {
        0
    } else {
        (time / STEP_SECONDS).floor() as u32
    }
}

/// Total order on `f64` for use inside priority queues.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct OrdF64(pub f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
