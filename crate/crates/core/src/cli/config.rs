//! Flat `section.key = value` experiment configuration.
//!
//! Values are stored in the units named by each key suffix so that
//! serializing and re-parsing reproduces the struct exactly; conversion to
//! SI happens in the builder methods.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{LangevinParams, RenderSpec};
use crate::fiber_modes::{Direction, ModeSpec, StepIndex};
use crate::materials::{MediumSpec, PermittivityTable};
use crate::tracking::{AnalysisParams, LinkParams, PeakParams};
use crate::trap_model::{FiberGeometry, ParticleSpec, TrapSetup};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: `{key}` {message}")]
    Invalid {
        line: usize,
        key: String,
        message: String,
    },
    #[error("`{key}` (default) {message}")]
    InvalidDefault { key: String, message: String },
}

/// `auto` defers to a value derived from the rest of the config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AutoOr {
    Auto,
    Value(f64),
}

impl AutoOr {
    fn render(&self) -> String {
        match self {
            AutoOr::Auto => "auto".into(),
            AutoOr::Value(v) => fmt_num(*v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeConfig {
    pub wavelength_nm: f64,
    pub power_mw: f64,
    pub direction: i32,
    pub polarization_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub waist_diameter_nm: f64,
    pub taper_length_mm: f64,
    pub waist_half_length_mm: f64,

    pub mode1: ModeConfig,
    pub mode2: ModeConfig,

    pub particle_radius_nm: f64,
    pub particle_material: String,
    pub particle_density_kg_m3: f64,

    pub medium_refractive_index: f64,
    pub medium_viscosity_pa_s: f64,
    pub medium_temperature_k: f64,
    pub core_index: f64,

    pub probe_offset_nm: f64,
    pub diameter_min_nm: f64,
    pub diameter_max_nm: f64,
    pub z_step_um: f64,
    pub force_scale: f64,

    pub sweep_r: Vec<f64>,

    pub dt_s: f64,
    pub duration_s: f64,
    pub seed: u64,
    pub gamma_kg_s: AutoOr,
    pub injection_z_um: Vec<f64>,
    pub injection_t_s: Vec<f64>,
    pub frame_rate_hz: f64,
    pub pixel_pitch_um: f64,
    pub z_min_um: f64,
    pub z_max_um: f64,
    pub psf_sigma_um: f64,
    pub noise_sigma: f64,
    pub particle_intensity: f64,
    pub record_every: usize,

    pub delta_um: f64,
    pub threshold_rel: f64,
    pub threshold_abs: f64,
    pub smoothing_um: f64,
    pub min_separation_um: f64,
    pub max_jump_um: f64,
    pub min_length: usize,
    pub max_gap: usize,
    pub min_dwell_s: f64,
    pub scan_step_um: f64,
    pub min_monotonicity: f64,
    pub cp: AutoOr,

    lines: KeyLines,
}

/// Line on which each key was set, for validation messages. Not part of the
/// config's value, so it never affects equality.
#[derive(Debug, Clone, Default)]
struct KeyLines(BTreeMap<String, usize>);

impl PartialEq for KeyLines {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            waist_diameter_nm: 400.0,
            taper_length_mm: 1.0,
            waist_half_length_mm: 0.25,
            mode1: ModeConfig {
                wavelength_nm: 640.0,
                power_mw: 1.0,
                direction: 1,
                polarization_deg: 0.0,
            },
            mode2: ModeConfig {
                wavelength_nm: 785.0,
                power_mw: 1.0,
                direction: -1,
                polarization_deg: 0.0,
            },
            particle_radius_nm: 75.0,
            particle_material: "gold".into(),
            particle_density_kg_m3: 19300.0,
            medium_refractive_index: 1.33,
            medium_viscosity_pa_s: 1e-3,
            medium_temperature_k: 293.0,
            core_index: 1.45,
            probe_offset_nm: 0.0,
            diameter_min_nm: 400.0,
            diameter_max_nm: 1000.0,
            z_step_um: 1.0,
            force_scale: 1.0,
            sweep_r: vec![1.0],
            dt_s: 1e-4,
            duration_s: 30.0,
            seed: 1,
            gamma_kg_s: AutoOr::Auto,
            injection_z_um: vec![0.0],
            injection_t_s: vec![0.0],
            frame_rate_hz: 30.0,
            pixel_pitch_um: 2.0,
            z_min_um: 0.0,
            z_max_um: 1600.0,
            psf_sigma_um: 23.0,
            noise_sigma: 0.1,
            particle_intensity: 1.0,
            record_every: 10,
            delta_um: 23.0,
            threshold_rel: 0.3,
            threshold_abs: 0.3,
            smoothing_um: 11.5,
            min_separation_um: 6.0,
            max_jump_um: 50.0,
            min_length: 10,
            max_gap: 2,
            min_dwell_s: 2.0,
            scan_step_um: 1.0,
            min_monotonicity: 0.9,
            cp: AutoOr::Auto,
            lines: KeyLines::default(),
        }
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(", ")
}

/// Every key in canonical order.
pub const KEYS: [&str; 55] = [
    "geometry.waist_diameter_nm",
    "geometry.taper_length_mm",
    "geometry.waist_half_length_mm",
    "mode1.wavelength_nm",
    "mode1.power_mW",
    "mode1.direction",
    "mode1.polarization_deg",
    "mode2.wavelength_nm",
    "mode2.power_mW",
    "mode2.direction",
    "mode2.polarization_deg",
    "particle.radius_nm",
    "particle.material",
    "particle.density_kg_m3",
    "medium.refractive_index",
    "medium.viscosity_Pa_s",
    "medium.temperature_K",
    "fiber.core_index",
    "model.probe_offset_nm",
    "model.diameter_min_nm",
    "model.diameter_max_nm",
    "model.z_step_um",
    "model.force_scale",
    "sweep.R",
    "dynamics.dt_s",
    "dynamics.duration_s",
    "dynamics.seed",
    "dynamics.gamma_kg_s",
    "dynamics.injection_z_um",
    "dynamics.injection_t_s",
    "dynamics.frame_rate_Hz",
    "dynamics.pixel_pitch_um",
    "dynamics.z_min_um",
    "dynamics.z_max_um",
    "dynamics.psf_sigma_um",
    "dynamics.noise_sigma",
    "dynamics.particle_intensity",
    "dynamics.record_every",
    "analysis.delta_um",
    "analysis.threshold_rel",
    "analysis.threshold_abs",
    "analysis.smoothing_um",
    "analysis.min_separation_um",
    "analysis.max_jump_um",
    "analysis.min_length",
    "analysis.max_gap",
    "analysis.min_dwell_s",
    "analysis.scan_step_um",
    "analysis.min_monotonicity",
    "analysis.cp",
    // sweep range helpers expand into sweep.R
    "sweep.R_start",
    "sweep.R_stop",
    "sweep.R_step",
    // accepted for readability; must match the injection list length
    "dynamics.n_particles",
    "meta.name",
];

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("expected a number, found `{s}`"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a finite number, found `{s}`"))
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|t| parse_f64(t.trim())).collect()
}

fn parse_auto(s: &str) -> std::result::Result<AutoOr, String> {
    if s == "auto" {
        Ok(AutoOr::Auto)
    } else {
        parse_f64(s).map(AutoOr::Value)
    }
}

fn parse_usize(s: &str) -> std::result::Result<usize, String> {
    s.parse().map_err(|_| format!("expected a non-negative integer, found `{s}`"))
}

fn parse_direction(s: &str) -> std::result::Result<i32, String> {
    match s {
        "+1" | "1" => Ok(1),
        "-1" => Ok(-1),
        _ => Err(format!("direction must be +1 or -1, found `{s}`")),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut range: [Option<(f64, usize)>; 3] = [None; 3];
        let mut n_particles: Option<(usize, usize)> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("expected `section.key = value`, found `{content}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("unknown key `{key}`"),
                });
            }
            if cfg.lines.0.insert(key.to_string(), line).is_some() {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            let err = |message: String| ConfigError::Invalid {
                line,
                key: key.to_string(),
                message,
            };
            let f = || parse_f64(value).map_err(err);
            match key {
                "geometry.waist_diameter_nm" => cfg.waist_diameter_nm = f()?,
                "geometry.taper_length_mm" => cfg.taper_length_mm = f()?,
                "geometry.waist_half_length_mm" => cfg.waist_half_length_mm = f()?,
                "mode1.wavelength_nm" => cfg.mode1.wavelength_nm = f()?,
                "mode1.power_mW" => cfg.mode1.power_mw = f()?,
                "mode1.direction" => cfg.mode1.direction = parse_direction(value).map_err(err)?,
                "mode1.polarization_deg" => cfg.mode1.polarization_deg = f()?,
                "mode2.wavelength_nm" => cfg.mode2.wavelength_nm = f()?,
                "mode2.power_mW" => cfg.mode2.power_mw = f()?,
                "mode2.direction" => cfg.mode2.direction = parse_direction(value).map_err(err)?,
                "mode2.polarization_deg" => cfg.mode2.polarization_deg = f()?,
                "particle.radius_nm" => cfg.particle_radius_nm = f()?,
                "particle.material" => {
                    if value.is_empty() {
                        return Err(err("must name `gold` or a permittivity file".into()));
                    }
                    cfg.particle_material = value.to_string()
                }
                "particle.density_kg_m3" => cfg.particle_density_kg_m3 = f()?,
                "medium.refractive_index" => cfg.medium_refractive_index = f()?,
                "medium.viscosity_Pa_s" => cfg.medium_viscosity_pa_s = f()?,
                "medium.temperature_K" => cfg.medium_temperature_k = f()?,
                "fiber.core_index" => cfg.core_index = f()?,
                "model.probe_offset_nm" => cfg.probe_offset_nm = f()?,
                "model.diameter_min_nm" => cfg.diameter_min_nm = f()?,
                "model.diameter_max_nm" => cfg.diameter_max_nm = f()?,
                "model.z_step_um" => cfg.z_step_um = f()?,
                "model.force_scale" => cfg.force_scale = f()?,
                "sweep.R" => cfg.sweep_r = parse_list(value).map_err(err)?,
                "sweep.R_start" => range[0] = Some((f()?, line)),
                "sweep.R_stop" => range[1] = Some((f()?, line)),
                "sweep.R_step" => range[2] = Some((f()?, line)),
                "dynamics.dt_s" => cfg.dt_s = f()?,
                "dynamics.duration_s" => cfg.duration_s = f()?,
                "dynamics.seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| err(format!("expected a non-negative integer, found `{value}`")))?
                }
                "dynamics.gamma_kg_s" => cfg.gamma_kg_s = parse_auto(value).map_err(err)?,
                "dynamics.injection_z_um" => cfg.injection_z_um = parse_list(value).map_err(err)?,
                "dynamics.injection_t_s" => cfg.injection_t_s = parse_list(value).map_err(err)?,
                "dynamics.frame_rate_Hz" => cfg.frame_rate_hz = f()?,
                "dynamics.pixel_pitch_um" => cfg.pixel_pitch_um = f()?,
                "dynamics.z_min_um" => cfg.z_min_um = f()?,
                "dynamics.z_max_um" => cfg.z_max_um = f()?,
                "dynamics.psf_sigma_um" => cfg.psf_sigma_um = f()?,
                "dynamics.noise_sigma" => cfg.noise_sigma = f()?,
                "dynamics.particle_intensity" => cfg.particle_intensity = f()?,
                "dynamics.record_every" => cfg.record_every = parse_usize(value).map_err(err)?,
                "dynamics.n_particles" => n_particles = Some((parse_usize(value).map_err(err)?, line)),
                "analysis.delta_um" => cfg.delta_um = f()?,
                "analysis.threshold_rel" => cfg.threshold_rel = f()?,
                "analysis.threshold_abs" => cfg.threshold_abs = f()?,
                "analysis.smoothing_um" => cfg.smoothing_um = f()?,
                "analysis.min_separation_um" => cfg.min_separation_um = f()?,
                "analysis.max_jump_um" => cfg.max_jump_um = f()?,
                "analysis.min_length" => cfg.min_length = parse_usize(value).map_err(err)?,
                "analysis.max_gap" => cfg.max_gap = parse_usize(value).map_err(err)?,
                "analysis.min_dwell_s" => cfg.min_dwell_s = f()?,
                "analysis.scan_step_um" => cfg.scan_step_um = f()?,
                "analysis.min_monotonicity" => cfg.min_monotonicity = f()?,
                "analysis.cp" => cfg.cp = parse_auto(value).map_err(err)?,
                "meta.name" => {}
                _ => unreachable!("key list and match arms disagree"),
            }
        }
        match range {
            [None, None, None] => {}
            [Some((a, _)), Some((b, _)), Some((s, ls))] => {
                if cfg.lines.0.contains_key("sweep.R") {
                    return Err(ConfigError::Syntax {
                        line: ls,
                        message: "give either sweep.R or sweep.R_start/R_stop/R_step, not both".into(),
                    });
                }
                if !(s > 0.0 && b >= a) {
                    return Err(ConfigError::Invalid {
                        line: ls,
                        key: "sweep.R_step".into(),
                        message: "needs R_step > 0 and R_stop >= R_start".into(),
                    });
                }
                let n = ((b - a) / s + 1e-9).floor() as usize;
                cfg.sweep_r = (0..=n).map(|i| a + s * i as f64).collect();
                cfg.lines.0.insert("sweep.R".into(), ls);
            }
            _ => {
                let line = range.iter().flatten().map(|r| r.1).max().unwrap_or(0);
                return Err(ConfigError::Syntax {
                    line,
                    message: "sweep.R_start, sweep.R_stop and sweep.R_step must be given together".into(),
                });
            }
        }
        if let Some((n, line)) = n_particles {
            if n != cfg.injection_z_um.len() {
                return Err(ConfigError::Invalid {
                    line,
                    key: "dynamics.n_particles".into(),
                    message: format!(
                        "is {n} but dynamics.injection_z_um lists {} positions",
                        cfg.injection_z_um.len()
                    ),
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, super::CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            super::CliError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text).map_err(|e| super::CliError::config(format!("{}: {e}", path.display())))
    }

    fn fail(&self, key: &str, message: impl Into<String>) -> ConfigError {
        match self.lines.0.get(key) {
            Some(&line) => ConfigError::Invalid {
                line,
                key: key.into(),
                message: message.into(),
            },
            None => ConfigError::InvalidDefault {
                key: key.into(),
                message: message.into(),
            },
        }
    }

    /// Checks every physical constraint before anything runs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive: [(&str, f64); 24] = [
            ("geometry.waist_diameter_nm", self.waist_diameter_nm),
            ("geometry.taper_length_mm", self.taper_length_mm),
            ("mode1.wavelength_nm", self.mode1.wavelength_nm),
            ("mode2.wavelength_nm", self.mode2.wavelength_nm),
            ("particle.radius_nm", self.particle_radius_nm),
            ("particle.density_kg_m3", self.particle_density_kg_m3),
            ("medium.refractive_index", self.medium_refractive_index),
            ("medium.viscosity_Pa_s", self.medium_viscosity_pa_s),
            ("medium.temperature_K", self.medium_temperature_k),
            ("fiber.core_index", self.core_index),
            ("model.diameter_min_nm", self.diameter_min_nm),
            ("model.diameter_max_nm", self.diameter_max_nm),
            ("model.z_step_um", self.z_step_um),
            ("model.force_scale", self.force_scale),
            ("dynamics.dt_s", self.dt_s),
            ("dynamics.duration_s", self.duration_s),
            ("dynamics.frame_rate_Hz", self.frame_rate_hz),
            ("dynamics.pixel_pitch_um", self.pixel_pitch_um),
            ("dynamics.psf_sigma_um", self.psf_sigma_um),
            ("dynamics.particle_intensity", self.particle_intensity),
            ("analysis.delta_um", self.delta_um),
            ("analysis.max_jump_um", self.max_jump_um),
            ("analysis.min_dwell_s", self.min_dwell_s),
            ("analysis.scan_step_um", self.scan_step_um),
        ];
        for (key, v) in positive {
            if !(v > 0.0) {
                return Err(self.fail(key, format!("must be > 0, got {v}")));
            }
        }
        let non_negative: [(&str, f64); 6] = [
            ("geometry.waist_half_length_mm", self.waist_half_length_mm),
            ("mode1.power_mW", self.mode1.power_mw),
            ("mode2.power_mW", self.mode2.power_mw),
            ("model.probe_offset_nm", self.probe_offset_nm),
            ("dynamics.noise_sigma", self.noise_sigma),
            ("analysis.threshold_abs", self.threshold_abs),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0) {
                return Err(self.fail(key, format!("must be >= 0, got {v}")));
            }
        }
        for (key, m) in [("mode1.wavelength_nm", &self.mode1), ("mode2.wavelength_nm", &self.mode2)] {
            if !(400.0..=1000.0).contains(&m.wavelength_nm) {
                return Err(self.fail(key, "must lie in 400-1000 nm"));
            }
        }
        if self.mode1.direction == self.mode2.direction {
            return Err(self.fail("mode2.direction", "must be opposite to mode1.direction"));
        }
        if self.mode1.wavelength_nm >= self.mode2.wavelength_nm {
            return Err(self.fail("mode2.wavelength_nm", "must be longer than mode1.wavelength_nm"));
        }
        if self.core_index <= self.medium_refractive_index {
            return Err(self.fail("fiber.core_index", "must exceed medium.refractive_index"));
        }
        if self.diameter_min_nm < self.waist_diameter_nm {
            return Err(self.fail("model.diameter_min_nm", "must be >= geometry.waist_diameter_nm"));
        }
        if !(self.diameter_max_nm > self.diameter_min_nm && self.diameter_max_nm <= 2000.0) {
            return Err(self.fail(
                "model.diameter_max_nm",
                "must exceed model.diameter_min_nm and not exceed 2000",
            ));
        }
        if self.waist_diameter_nm < 200.0 {
            return Err(self.fail("geometry.waist_diameter_nm", "must be >= 200"));
        }
        if self.sweep_r.is_empty() {
            return Err(self.fail("sweep.R", "needs at least one power ratio"));
        }
        if let Some(r) = self.sweep_r.iter().find(|r| !(**r > 0.0)) {
            return Err(self.fail("sweep.R", format!("values must be > 0, got {r}")));
        }
        if let AutoOr::Value(g) = self.gamma_kg_s {
            if !(g > 0.0) {
                return Err(self.fail("dynamics.gamma_kg_s", "must be > 0 or `auto`"));
            }
        }
        if let AutoOr::Value(c) = self.cp {
            if !(c > 0.0 && c <= 1.0) {
                return Err(self.fail("analysis.cp", "must lie in (0, 1] or be `auto`"));
            }
        }
        if self.injection_z_um.len() != self.injection_t_s.len() {
            return Err(self.fail(
                "dynamics.injection_t_s",
                format!(
                    "lists {} times for {} positions",
                    self.injection_t_s.len(),
                    self.injection_z_um.len()
                ),
            ));
        }
        if self.injection_t_s.iter().any(|t| !(*t >= 0.0 && *t < self.duration_s)) {
            return Err(self.fail("dynamics.injection_t_s", "times must lie in [0, duration)"));
        }
        if !(self.z_max_um > self.z_min_um) {
            return Err(self.fail("dynamics.z_max_um", "must exceed dynamics.z_min_um"));
        }
        if self.record_every == 0 {
            return Err(self.fail("dynamics.record_every", "must be >= 1"));
        }
        if !(self.threshold_rel > 0.0 && self.threshold_rel <= 1.0) {
            return Err(self.fail("analysis.threshold_rel", "must lie in (0, 1]"));
        }
        if !(self.smoothing_um >= 0.0 && self.min_separation_um >= 0.0) {
            return Err(self.fail("analysis.smoothing_um", "smoothing and separation must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.min_monotonicity) {
            return Err(self.fail("analysis.min_monotonicity", "must lie in [0, 1]"));
        }
        if self.min_length < 2 {
            return Err(self.fail("analysis.min_length", "must be >= 2"));
        }
        if self.particle_material != "gold" && !Path::new(&self.particle_material).exists() {
            return Err(self.fail(
                "particle.material",
                format!("`{}` is neither `gold` nor a readable file", self.particle_material),
            ));
        }
        Ok(())
    }

    /// Canonical text form listing every key.
    pub fn serialize(&self) -> String {
        let m = |c: &ModeConfig| {
            [
                fmt_num(c.wavelength_nm),
                fmt_num(c.power_mw),
                if c.direction > 0 { "+1".into() } else { "-1".into() },
                fmt_num(c.polarization_deg),
            ]
        };
        let [w1, p1, d1, a1] = m(&self.mode1);
        let [w2, p2, d2, a2] = m(&self.mode2);
        let pairs: Vec<(&str, String)> = vec![
            ("geometry.waist_diameter_nm", fmt_num(self.waist_diameter_nm)),
            ("geometry.taper_length_mm", fmt_num(self.taper_length_mm)),
            ("geometry.waist_half_length_mm", fmt_num(self.waist_half_length_mm)),
            ("mode1.wavelength_nm", w1),
            ("mode1.power_mW", p1),
            ("mode1.direction", d1),
            ("mode1.polarization_deg", a1),
            ("mode2.wavelength_nm", w2),
            ("mode2.power_mW", p2),
            ("mode2.direction", d2),
            ("mode2.polarization_deg", a2),
            ("particle.radius_nm", fmt_num(self.particle_radius_nm)),
            ("particle.material", self.particle_material.clone()),
            ("particle.density_kg_m3", fmt_num(self.particle_density_kg_m3)),
            ("medium.refractive_index", fmt_num(self.medium_refractive_index)),
            ("medium.viscosity_Pa_s", fmt_num(self.medium_viscosity_pa_s)),
            ("medium.temperature_K", fmt_num(self.medium_temperature_k)),
            ("fiber.core_index", fmt_num(self.core_index)),
            ("model.probe_offset_nm", fmt_num(self.probe_offset_nm)),
            ("model.diameter_min_nm", fmt_num(self.diameter_min_nm)),
            ("model.diameter_max_nm", fmt_num(self.diameter_max_nm)),
            ("model.z_step_um", fmt_num(self.z_step_um)),
            ("model.force_scale", fmt_num(self.force_scale)),
            ("sweep.R", fmt_list(&self.sweep_r)),
            ("dynamics.dt_s", fmt_num(self.dt_s)),
            ("dynamics.duration_s", fmt_num(self.duration_s)),
            ("dynamics.seed", self.seed.to_string()),
            ("dynamics.gamma_kg_s", self.gamma_kg_s.render()),
            ("dynamics.injection_z_um", fmt_list(&self.injection_z_um)),
            ("dynamics.injection_t_s", fmt_list(&self.injection_t_s)),
            ("dynamics.frame_rate_Hz", fmt_num(self.frame_rate_hz)),
            ("dynamics.pixel_pitch_um", fmt_num(self.pixel_pitch_um)),
            ("dynamics.z_min_um", fmt_num(self.z_min_um)),
            ("dynamics.z_max_um", fmt_num(self.z_max_um)),
            ("dynamics.psf_sigma_um", fmt_num(self.psf_sigma_um)),
            ("dynamics.noise_sigma", fmt_num(self.noise_sigma)),
            ("dynamics.particle_intensity", fmt_num(self.particle_intensity)),
            ("dynamics.record_every", self.record_every.to_string()),
            ("analysis.delta_um", fmt_num(self.delta_um)),
            ("analysis.threshold_rel", fmt_num(self.threshold_rel)),
            ("analysis.threshold_abs", fmt_num(self.threshold_abs)),
            ("analysis.smoothing_um", fmt_num(self.smoothing_um)),
            ("analysis.min_separation_um", fmt_num(self.min_separation_um)),
            ("analysis.max_jump_um", fmt_num(self.max_jump_um)),
            ("analysis.min_length", self.min_length.to_string()),
            ("analysis.max_gap", self.max_gap.to_string()),
            ("analysis.min_dwell_s", fmt_num(self.min_dwell_s)),
            ("analysis.scan_step_um", fmt_num(self.scan_step_um)),
            ("analysis.min_monotonicity", fmt_num(self.min_monotonicity)),
            ("analysis.cp", self.cp.render()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.serialize().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn geometry(&self) -> crate::Result<FiberGeometry> {
        FiberGeometry::new(
            self.waist_diameter_nm * 1e-9,
            self.taper_length_mm * 1e-3,
            self.waist_half_length_mm * 1e-3,
        )
    }

    fn mode(c: &ModeConfig) -> crate::Result<ModeSpec> {
        Ok(ModeSpec::new(c.wavelength_nm * 1e-9, c.power_mw * 1e-3, Direction::from_sign(c.direction)?)?
            .with_polarization(c.polarization_deg.to_radians()))
    }

    pub fn modes(&self) -> crate::Result<[ModeSpec; 2]> {
        Ok([Self::mode(&self.mode1)?, Self::mode(&self.mode2)?])
    }

    pub fn medium(&self) -> crate::Result<MediumSpec> {
        MediumSpec::new(
            self.medium_refractive_index,
            self.medium_viscosity_pa_s,
            self.medium_temperature_k,
        )
    }

    pub fn media(&self) -> crate::Result<StepIndex> {
        StepIndex::new(self.core_index, self.medium_refractive_index)
    }

    pub fn particle(&self) -> crate::Result<ParticleSpec> {
        let table = if self.particle_material == "gold" {
            PermittivityTable::gold()
        } else {
            PermittivityTable::from_file(Path::new(&self.particle_material))?
        };
        ParticleSpec::new(
            self.particle_radius_nm * 1e-9,
            table,
            self.particle_density_kg_m3,
            self.medium()?,
        )
    }

    pub fn trap_setup(&self) -> crate::Result<TrapSetup> {
        let [short, long] = self.modes()?;
        Ok(TrapSetup {
            geometry: self.geometry()?,
            short,
            long,
            particle: self.particle()?,
            media: self.media()?,
            probe_offset: self.probe_offset_nm * 1e-9,
            diameter_range: (self.diameter_min_nm * 1e-9, self.diameter_max_nm * 1e-9),
            z_step: self.z_step_um * 1e-6,
            force_scale: self.force_scale,
        })
    }

    /// Drag used for dynamics: Stokes unless overridden.
    pub fn gamma(&self) -> crate::Result<f64> {
        Ok(match self.gamma_kg_s {
            AutoOr::Value(g) => g,
            AutoOr::Auto => self.particle()?.stokes_drag(),
        })
    }

    pub fn langevin(&self) -> crate::Result<LangevinParams> {
        Ok(LangevinParams::new(
            self.gamma()?,
            self.medium_temperature_k,
            self.dt_s,
            0,
            self.seed,
        )
        .record_every(self.record_every))
    }

    pub fn render_spec(&self, seed: u64) -> RenderSpec {
        let pitch = self.pixel_pitch_um * 1e-6;
        let frame_interval = 1.0 / self.frame_rate_hz;
        RenderSpec {
            frames: (self.duration_s / frame_interval).floor() as usize + 1,
            pixels: ((self.z_max_um - self.z_min_um) * 1e-6 / pitch).ceil() as usize + 1,
            pixel_pitch: pitch,
            frame_interval,
            psf_sigma: self.psf_sigma_um * 1e-6,
            z_origin: self.z_min_um * 1e-6,
            t_origin: 0.0,
            intensity_per_particle: self.particle_intensity,
            noise_sigma: self.noise_sigma,
            seed,
        }
    }

    /// Analysis settings; `pixel_pitch` converts the micron-valued peak
    /// parameters into pixels.
    pub fn analysis_params(&self, pixel_pitch: f64, gamma: Option<f64>, cp: Option<f64>) -> AnalysisParams {
        AnalysisParams {
            peaks: PeakParams {
                threshold_rel: self.threshold_rel,
                threshold_abs: self.threshold_abs,
                min_separation_px: self.min_separation_um * 1e-6 / pixel_pitch,
                smoothing_px: self.smoothing_um * 1e-6 / pixel_pitch,
            },
            link: LinkParams {
                max_jump: self.max_jump_um * 1e-6,
                min_length: self.min_length,
                max_gap: self.max_gap,
            },
            delta: self.delta_um * 1e-6,
            scan_step: self.scan_step_um * 1e-6,
            min_dwell: self.min_dwell_s,
            min_monotonicity: self.min_monotonicity,
            gamma,
            cp,
        }
    }
}
