//! Semantic-density schedules over the denoising steps `t = T, T-1, ..., 1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `D * T / (T + 1 - t)`: opaque early, settling on `D` at the last step.
    #[default]
    InverseProportional,
    /// `D * T` at every step.
    FixedOpaque,
    /// `D` at every step.
    FixedDensity,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 3] = [
        ScheduleKind::InverseProportional,
        ScheduleKind::FixedOpaque,
        ScheduleKind::FixedDensity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::InverseProportional => "inverse_proportional",
            ScheduleKind::FixedOpaque => "fixed_opaque",
            ScheduleKind::FixedDensity => "fixed_density",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScheduleKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown schedule kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySchedule {
    pub kind: ScheduleKind,
    /// Target density `D >= 0`.
    pub density: f64,
    /// Total steps `T >= 1`.
    pub steps: u32,
}

impl DensitySchedule {
    pub fn new(kind: ScheduleKind, density: f64, steps: u32) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(density >= 0.0 && density.is_finite()) {
            return Err(Error::Range {
                what: "target density",
                value: density,
                range: "[0, inf)",
            });
        }
        Ok(Self { kind, density, steps })
    }

    pub fn inverse_proportional(density: f64, steps: u32) -> Result<Self> {
        Self::new(ScheduleKind::InverseProportional, density, steps)
    }

    /// Density at step `t`, where `t` counts down from `T` to 1.
    pub fn sigma_at(&self, t: u32) -> Result<f64> {
        if t < 1 || t > self.steps {
            return Err(Error::Range {
                what: "step",
                value: f64::from(t),
                range: "[1, T]",
            });
        }
        let total = f64::from(self.steps);
        // The ratio is formed first so that t = 1 scales D by exactly 1.
        Ok(match self.kind {
            ScheduleKind::InverseProportional => self.density * (total / f64::from(self.steps + 1 - t)),
            ScheduleKind::FixedOpaque => self.density * total,
            ScheduleKind::FixedDensity => self.density,
        })
    }

    /// Densities for `t = T` down to `t = 1`.
    pub fn descending(&self) -> Vec<f64> {
        (1..=self.steps)
            .rev()
            .map(|t| self.sigma_at(t).expect("t within [1, T]"))
            .collect()
    }
}

/// One row per schedule, one column per step from `t = T` down to `t = 1`.
pub fn schedule_table(schedules: &[DensitySchedule], steps: u32) -> Result<Vec<Vec<f64>>> {
    if steps == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if let Some(bad) = schedules.iter().find(|s| s.steps != steps) {
        return Err(Error::Config(format!(
            "schedule has {} steps but the table was requested for {steps}",
            bad.steps
        )));
    }
    Ok(schedules.iter().map(DensitySchedule::descending).collect())
}
