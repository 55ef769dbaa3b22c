//! Run configuration: a flat `key = value` text format with documented
//! keys, hard errors on unknown keys, and defaults applied on parse.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::elliptic::SolverConfig;
use crate::evolution::{
    standing_wave, traveling_wave_linear, EvolutionParams, SurfaceState,
};
use crate::geometry::MapParams;
use crate::spectral::{Grid, RealField};

/// Configuration failures; these map to CLI exit code 2.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}: {what}")]
    Parse { line: usize, what: String },
    #[error("invalid value for `{key}`: {reason}")]
    Validation { key: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Initial-condition descriptor.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialCondition {
    StandingWave { amplitude: f64, wavenumber: f64 },
    TravelingWaveLinear { amplitude: f64, wavenumber: f64 },
    CustomFile { path: PathBuf },
}

/// How bulk fields are persisted alongside snapshots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BulkOutput {
    Off,
    Text,
    Binary,
}

/// Fully validated run configuration with defaults applied.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub n_x: usize,
    pub n_z: usize,
    pub length: f64,
    pub g: f64,
    pub h_b: f64,
    /// `None` means the amplitude-based default rule.
    pub delta: Option<f64>,
    /// `None` means the linear-stability default.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub snapshot_stride: usize,
    pub dealias: bool,
    pub cg_tol: f64,
    pub cg_max_iter: Option<usize>,
    pub ic: InitialCondition,
    /// `None` means `g / 2`.
    pub taylor_threshold: Option<f64>,
    pub output_path: PathBuf,
    pub bulk_output: BulkOutput,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_x: 128,
            n_z: 64,
            length: 2.0 * std::f64::consts::PI,
            g: 1.0,
            h_b: 1.0,
            delta: None,
            dt: None,
            t_end: 1.0,
            snapshot_stride: 1,
            dealias: true,
            cg_tol: 1e-10,
            cg_max_iter: None,
            ic: InitialCondition::StandingWave {
                amplitude: 1e-3,
                wavenumber: 2.0,
            },
            taylor_threshold: None,
            output_path: PathBuf::from("snapshots.txt"),
            bulk_output: BulkOutput::Off,
            seed: 0,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "n_x",
    "n_z",
    "length",
    "g",
    "h_b",
    "delta",
    "dt",
    "t_end",
    "snapshot_stride",
    "dealias",
    "cg_tol",
    "cg_max_iter",
    "ic_kind",
    "ic_amplitude",
    "ic_wavenumber",
    "ic_file",
    "taylor_threshold",
    "output_path",
    "bulk_output",
    "seed",
];

impl RunConfig {
    pub fn parse_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_str(&text)
    }

    /// Parse `key = value` lines; `#` starts a comment, blank lines are
    /// skipped, unknown or repeated keys are hard errors.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut ic_kind: Option<String> = None;
        let mut ic_amplitude: Option<f64> = None;
        let mut ic_wavenumber: Option<f64> = None;
        let mut ic_file: Option<PathBuf> = None;
        let mut seen: BTreeSet<String> = BTreeSet::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: line_no,
                what: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(ConfigError::Parse {
                    line: line_no,
                    what: format!("unknown key `{key}`"),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Parse {
                    line: line_no,
                    what: format!("repeated key `{key}`"),
                });
            }
            match key {
                "n_x" => cfg.n_x = parse_num(key, value)?,
                "n_z" => cfg.n_z = parse_num(key, value)?,
                "length" => cfg.length = parse_float(key, value)?,
                "g" => cfg.g = parse_float(key, value)?,
                "h_b" => cfg.h_b = parse_float(key, value)?,
                "delta" => cfg.delta = Some(parse_float(key, value)?),
                "dt" => cfg.dt = Some(parse_float(key, value)?),
                "t_end" => cfg.t_end = parse_float(key, value)?,
                "snapshot_stride" => cfg.snapshot_stride = parse_num(key, value)?,
                "dealias" => cfg.dealias = parse_bool(key, value)?,
                "cg_tol" => cfg.cg_tol = parse_float(key, value)?,
                "cg_max_iter" => cfg.cg_max_iter = Some(parse_num(key, value)?),
                "ic_kind" => ic_kind = Some(value.to_string()),
                "ic_amplitude" => ic_amplitude = Some(parse_float(key, value)?),
                "ic_wavenumber" => ic_wavenumber = Some(parse_float(key, value)?),
                "ic_file" => ic_file = Some(PathBuf::from(value)),
                "taylor_threshold" => cfg.taylor_threshold = Some(parse_float(key, value)?),
                "output_path" => cfg.output_path = PathBuf::from(value),
                "bulk_output" => {
                    cfg.bulk_output = match value {
                        "off" => BulkOutput::Off,
                        "text" => BulkOutput::Text,
                        "binary" => BulkOutput::Binary,
                        other => {
                            return Err(ConfigError::Validation {
                                key: key.to_string(),
                                reason: format!("expected off|text|binary, got `{other}`"),
                            })
                        }
                    }
                }
                "seed" => cfg.seed = parse_num(key, value)? as u64,
                _ => unreachable!("key list checked above"),
            }
        }

        let kind = ic_kind.unwrap_or_else(|| "standing_wave".to_string());
        cfg.ic = match kind.as_str() {
            "standing_wave" => InitialCondition::StandingWave {
                amplitude: ic_amplitude.unwrap_or(1e-3),
                wavenumber: ic_wavenumber.unwrap_or(2.0),
            },
            "traveling_wave_linear" => InitialCondition::TravelingWaveLinear {
                amplitude: ic_amplitude.unwrap_or(1e-3),
                wavenumber: ic_wavenumber.unwrap_or(2.0),
            },
            "custom_file" => InitialCondition::CustomFile {
                path: ic_file.ok_or_else(|| ConfigError::Validation {
                    key: "ic_file".to_string(),
                    reason: "custom_file initial condition needs ic_file".to_string(),
                })?,
            },
            other => {
                return Err(ConfigError::Validation {
                    key: "ic_kind".to_string(),
                    reason: format!(
                        "expected standing_wave|traveling_wave_linear|custom_file, got `{other}`"
                    ),
                })
            }
        };

        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, reason: String| {
            Err(ConfigError::Validation {
                key: key.to_string(),
                reason,
            })
        };
        if self.n_x < 8 || self.n_x % 2 != 0 {
            return bad("n_x", format!("must be even and >= 8, got {}", self.n_x));
        }
        if self.n_z < 8 {
            return bad("n_z", format!("must be >= 8, got {}", self.n_z));
        }
        if !(self.length > 0.0) || !self.length.is_finite() {
            return bad("length", format!("must be positive, got {}", self.length));
        }
        if !(self.g > 0.0) || !self.g.is_finite() {
            return bad("g", format!("must be positive, got {}", self.g));
        }
        if !(self.h_b > 0.0) || !self.h_b.is_finite() {
            return bad("h_b", format!("must be positive, got {}", self.h_b));
        }
        if let Some(d) = self.delta {
            if !(d >= 0.0) || !d.is_finite() {
                return bad("delta", format!("must be >= 0, got {d}"));
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return bad("dt", format!("must be positive, got {dt}"));
            }
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return bad("t_end", format!("must be positive, got {}", self.t_end));
        }
        if self.snapshot_stride == 0 {
            return bad("snapshot_stride", "must be >= 1".to_string());
        }
        if !(self.cg_tol > 0.0 && self.cg_tol <= 1e-4) {
            return bad(
                "cg_tol",
                format!("must lie in (0, 1e-4], got {}", self.cg_tol),
            );
        }
        if let Some(it) = self.cg_max_iter {
            if it == 0 {
                return bad("cg_max_iter", "must be >= 1".to_string());
            }
        }
        match &self.ic {
            InitialCondition::StandingWave {
                amplitude,
                wavenumber,
            }
            | InitialCondition::TravelingWaveLinear {
                amplitude,
                wavenumber,
            } => {
                if !amplitude.is_finite() {
                    return bad("ic_amplitude", "must be finite".to_string());
                }
                // Strip-safe bound: the surface must stay above the margin.
                if amplitude.abs() >= 0.9 * self.h_b {
                    return bad(
                        "ic_amplitude",
                        format!(
                            "|amplitude| = {} leaves no strip above the bottom (h_b = {})",
                            amplitude.abs(),
                            self.h_b
                        ),
                    );
                }
                let k_scale = 2.0 * std::f64::consts::PI / self.length;
                let max_k = (self.n_x as f64 / 2.0 - 1.0) * k_scale;
                if !(*wavenumber > 0.0) || *wavenumber > max_k {
                    return bad(
                        "ic_wavenumber",
                        format!("must lie in (0, {max_k}], got {wavenumber}"),
                    );
                }
            }
            InitialCondition::CustomFile { .. } => {}
        }
        if let Some(c) = self.taylor_threshold {
            if !c.is_finite() {
                return bad("taylor_threshold", "must be finite".to_string());
            }
        }
        Ok(())
    }

    /// Resolved smoothing parameter (the default rule needs the initial surface).
    pub fn resolved_delta(&self, eta0: &RealField) -> f64 {
        self.delta.unwrap_or_else(|| MapParams::default_delta(eta0))
    }

    pub fn resolved_dt(&self, grid: &Grid) -> f64 {
        self.dt
            .unwrap_or_else(|| EvolutionParams::default_dt(grid, self.g, self.h_b))
    }

    pub fn resolved_taylor_threshold(&self) -> f64 {
        self.taylor_threshold.unwrap_or(self.g / 2.0)
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        Grid::new(self.n_x, self.length).map_err(|e| ConfigError::Validation {
            key: "n_x".to_string(),
            reason: e.to_string(),
        })
    }

    /// Build the initial state described by the config.
    pub fn initial_state(&self, grid: &Grid) -> Result<SurfaceState, ConfigError> {
        match &self.ic {
            InitialCondition::StandingWave {
                amplitude,
                wavenumber,
            } => Ok(standing_wave(grid, *amplitude, *wavenumber)),
            InitialCondition::TravelingWaveLinear {
                amplitude,
                wavenumber,
            } => Ok(traveling_wave_linear(
                grid,
                *amplitude,
                *wavenumber,
                self.g,
                self.h_b,
            )),
            InitialCondition::CustomFile { path } => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                let mut rows = Vec::new();
                for line in text.lines() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let vals: Result<Vec<f64>, _> =
                        line.split_whitespace().map(|t| t.parse::<f64>()).collect();
                    rows.push(vals.map_err(|e| ConfigError::Validation {
                        key: "ic_file".to_string(),
                        reason: format!("bad number: {e}"),
                    })?);
                }
                if rows.len() != 2 {
                    return Err(ConfigError::Validation {
                        key: "ic_file".to_string(),
                        reason: format!("expected 2 data lines (eta, psi), got {}", rows.len()),
                    });
                }
                let psi_row = rows.pop().expect("two rows");
                let eta_row = rows.pop().expect("one row");
                let eta =
                    RealField::from_values(grid, eta_row).map_err(|e| ConfigError::Validation {
                        key: "ic_file".to_string(),
                        reason: e.to_string(),
                    })?;
                let psi =
                    RealField::from_values(grid, psi_row).map_err(|e| ConfigError::Validation {
                        key: "ic_file".to_string(),
                        reason: e.to_string(),
                    })?;
                Ok(SurfaceState { t: 0.0, eta, psi })
            }
        }
    }

    /// Evolution parameters with every default resolved against the
    /// initial surface.
    pub fn evolution_params(
        &self,
        grid: &Grid,
        eta0: &RealField,
    ) -> EvolutionParams {
        let mut map = MapParams::new(self.h_b, self.resolved_delta(eta0), self.n_z);
        map.strip_margin = self.h_b / 10.0;
        EvolutionParams {
            grid: grid.clone(),
            map,
            solver: SolverConfig {
                cg_tol: self.cg_tol,
                max_iter: self.cg_max_iter,
            },
            g: self.g,
            dt: self.resolved_dt(grid),
            t_end: self.t_end,
            dealias_on: self.dealias,
        }
    }

    /// Echo of the effective configuration (defaults resolved where they
    /// do not depend on the initial data), for reproducible reports.
    pub fn effective_lines(&self, grid: &Grid, eta0: &RealField) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_x = {}", self.n_x);
        let _ = writeln!(s, "n_z = {}", self.n_z);
        let _ = writeln!(s, "length = {}", self.length);
        let _ = writeln!(s, "g = {}", self.g);
        let _ = writeln!(s, "h_b = {}", self.h_b);
        let _ = writeln!(s, "delta = {}", self.resolved_delta(eta0));
        let _ = writeln!(s, "dt = {}", self.resolved_dt(grid));
        let _ = writeln!(s, "t_end = {}", self.t_end);
        let _ = writeln!(s, "snapshot_stride = {}", self.snapshot_stride);
        let _ = writeln!(s, "dealias = {}", self.dealias);
        let _ = writeln!(s, "cg_tol = {}", self.cg_tol);
        let _ = writeln!(
            s,
            "cg_max_iter = {}",
            self.cg_max_iter.unwrap_or(10 * self.n_x * self.n_z)
        );
        match &self.ic {
            InitialCondition::StandingWave {
                amplitude,
                wavenumber,
            } => {
                let _ = writeln!(s, "ic_kind = standing_wave");
                let _ = writeln!(s, "ic_amplitude = {amplitude}");
                let _ = writeln!(s, "ic_wavenumber = {wavenumber}");
            }
            InitialCondition::TravelingWaveLinear {
                amplitude,
                wavenumber,
            } => {
                let _ = writeln!(s, "ic_kind = traveling_wave_linear");
                let _ = writeln!(s, "ic_amplitude = {amplitude}");
                let _ = writeln!(s, "ic_wavenumber = {wavenumber}");
            }
            InitialCondition::CustomFile { path } => {
                let _ = writeln!(s, "ic_kind = custom_file");
                let _ = writeln!(s, "ic_file = {}", path.display());
            }
        }
        let _ = writeln!(s, "taylor_threshold = {}", self.resolved_taylor_threshold());
        let _ = writeln!(s, "output_path = {}", self.output_path.display());
        let _ = writeln!(
            s,
            "bulk_output = {}",
            match self.bulk_output {
                BulkOutput::Off => "off",
                BulkOutput::Text => "text",
                BulkOutput::Binary => "binary",
            }
        );
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

fn parse_num(key: &str, value: &str) -> Result<usize, ConfigError> {
    value.parse::<usize>().map_err(|e| ConfigError::Validation {
        key: key.to_string(),
        reason: format!("expected a nonnegative integer, got `{value}` ({e})"),
    })
}

fn parse_float(key: &str, value: &str) -> Result<f64, ConfigError> {
    value.parse::<f64>().map_err(|e| ConfigError::Validation {
        key: key.to_string(),
        reason: format!("expected a number, got `{value}` ({e})"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        other => Err(ConfigError::Validation {
            key: key.to_string(),
            reason: format!("expected true|false, got `{other}`"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = RunConfig::parse_str("n_x = 128\nh_b = 1\n").unwrap();
        assert_eq!(cfg.n_x, 128);
        assert_eq!(cfg.n_z, 64);
        assert_eq!(cfg.cg_tol, 1e-10);
        assert!(cfg.dealias);
        assert_eq!(cfg.snapshot_stride, 1);
        assert!(matches!(cfg.ic, InitialCondition::StandingWave { .. }));
        assert_eq!(cfg.resolved_taylor_threshold(), 0.5);
    }

    #[test]
    fn negative_dt_is_validation_error() {
        let err = RunConfig::parse_str("dt = -0.1\n").unwrap_err();
        match err {
            ConfigError::Validation { key, .. } => assert_eq!(key, "dt"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_parse_error_naming_the_key() {
        let err = RunConfig::parse_str("n_x = 64\nvisc = 1\n").unwrap_err();
        match err {
            ConfigError::Parse { line, what } => {
                assert_eq!(line, 2);
                assert!(what.contains("visc"), "message: {what}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn repeated_key_is_rejected() {
        let err = RunConfig::parse_str("g = 1\ng = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 2, .. }));
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = RunConfig::parse_str("# header\n\nn_x = 64 # trailing\n").unwrap();
        assert_eq!(cfg.n_x, 64);
    }

    #[test]
    fn oversized_amplitude_is_rejected() {
        let err = RunConfig::parse_str("ic_amplitude = 0.95\nh_b = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Validation { .. }));
    }

    #[test]
    fn odd_n_x_is_rejected() {
        assert!(RunConfig::parse_str("n_x = 63\n").is_err());
    }
}
