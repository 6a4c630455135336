//! Serialization of results: pretty JSON records and CSV tables.
//!
//! Every record is wrapped in a [`Record`] carrying the tool version, seed and
//! the measure conventions in force. Nothing time-dependent is written, so two
//! runs with the same configuration and seed produce identical bytes.
//!
//! Record:
//!
//! ```json
//! {
//!   "tool_version": "0.1.0",
//!   "command": "coarea verify",
//!   "seed": 1,
//!   "convention": "balanced",
//!   "g_convention": "frames-orthonormal",
//!   "omega_normalization": "unit-ball-volume",
//!   "hausdorff_metric": "d2-spherical",
//!   "result": { ... }
//! }
//! ```
//!
//! CSV tables have one header row; floats use the shortest representation
//! that round-trips.

use std::io;

use serde::Serialize;

use crate::classify::{Census, PointClass};
use crate::coarea::{SliceRecord, TubeMass};
use crate::measures::{ConventionMode, MeasureConvention, G_CONVENTION, HAUSDORFF_METRIC};

#[derive(Debug, Clone, Serialize)]
pub struct Record<T> {
    pub tool_version: &'static str,
    pub command: String,
    pub seed: u64,
    pub convention: &'static str,
    pub g_convention: &'static str,
    pub omega_normalization: &'static str,
    pub hausdorff_metric: &'static str,
    pub result: T,
}

impl<T: Serialize> Record<T> {
    pub fn new(command: impl Into<String>, seed: u64, convention: MeasureConvention, result: T) -> Self {
        Self {
            tool_version: crate::VERSION,
            command: command.into(),
            seed,
            convention: convention.mode.tag(),
            g_convention: G_CONVENTION,
            omega_normalization: convention.normalization.tag(),
            hausdorff_metric: HAUSDORFF_METRIC,
            result,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("records serialize");
        s.push('\n');
        s
    }
}

/// A record for commands that do not depend on a convention still names the
/// default one, so every record has the same tags.
pub fn default_convention() -> MeasureConvention {
    MeasureConvention::new(ConventionMode::default())
}

fn table(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> io::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Columns `t` (or `t1..tÑ`), `level_measure_sr`, `level_measure_riem`,
/// `excised_mass`.
pub fn slices_csv(slices: &[SliceRecord]) -> io::Result<String> {
    let dims = slices.first().map_or(1, |s| s.t.len());
    let mut header: Vec<String> = if dims == 1 {
        vec!["t".into()]
    } else {
        (1..=dims).map(|k| format!("t{k}")).collect()
    };
    header.extend(["level_measure_sr", "level_measure_riem", "excised_mass"].map(String::from));
    table(
        &header,
        slices.iter().map(|s| {
            let mut row: Vec<String> = s.t.iter().copied().map(num).collect();
            row.extend([s.level_measure_sr, s.level_measure_riem, s.excised_mass].map(num));
            row
        }),
    )
}

/// Characteristic lattice points: columns `u1..uN`, `kind`, `nu0`.
pub fn characteristic_csv(dim: usize, census: &Census) -> io::Result<String> {
    let mut header: Vec<String> = (1..=dim).map(|i| format!("u{i}")).collect();
    header.extend(["kind", "nu0"].map(String::from));
    let rows = census
        .points
        .iter()
        .filter(|(_, c): &&(Vec<f64>, PointClass)| c.kind == crate::classify::PointKind::Characteristic)
        .map(|(x, c)| {
            let mut row: Vec<String> = x.iter().copied().map(num).collect();
            row.push(c.kind.label().to_string());
            row.push(c.nu0.map_or_else(String::new, |v| v.to_string()));
            row
        });
    table(&header, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasureRow {
    pub r: f64,
    pub tangent_measure: f64,
    /// `None` where the level-set measure is undefined (non-regular point).
    pub level_measure: Option<f64>,
    pub theorem_prediction: Option<f64>,
}

/// Columns `r`, `tangent_measure`, `level_measure`, `theorem_prediction`;
/// undefined values are left empty.
pub fn measure_csv(rows: &[MeasureRow]) -> io::Result<String> {
    let header = ["r", "tangent_measure", "level_measure", "theorem_prediction"].map(String::from);
    let opt = |v: Option<f64>| v.map_or_else(String::new, num);
    table(
        &header,
        rows.iter()
            .map(|r| vec![num(r.r), num(r.tangent_measure), opt(r.level_measure), opt(r.theorem_prediction)]),
    )
}

/// Columns `epsilon`, `lhs_mass`, `rhs_mass`, `lhs_error`, `rhs_error`,
/// `samples`.
pub fn tube_csv(rows: &[TubeMass]) -> io::Result<String> {
    let header = ["epsilon", "lhs_mass", "rhs_mass", "lhs_error", "rhs_error", "samples"].map(String::from);
    table(
        &header,
        rows.iter().map(|t| {
            vec![
                num(t.epsilon),
                num(t.lhs_mass),
                num(t.rhs_mass),
                num(t.lhs_error),
                num(t.rhs_error),
                t.samples.to_string(),
            ]
        }),
    )
}
