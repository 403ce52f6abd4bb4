//! Python bindings: config handling, mode intensities, the trap model,
//! Langevin runs and kymograph analysis.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use tapertrap::cli::ExperimentConfig;
use tapertrap::dynamics::{self, Harmonic, Injection, LangevinParams};
use tapertrap::fiber_modes::{self, Direction, ModeSpec, StepIndex};
use tapertrap::trap_model::{self, ParticleSpec, TrapSolution};
use tapertrap::{tracking, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::Parse { .. } | Error::WavelengthOutOfRange { .. } | Error::InvalidTable(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn direction(sign: i32) -> PyResult<Direction> {
    Direction::from_sign(sign).map_err(py_err)
}

/// Parsed `section.key = value` experiment configuration.
#[pyclass(name = "ExperimentConfig", module = "tapertrap_py", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        ExperimentConfig::parse(text)
            .map(|inner| Self { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        ExperimentConfig::from_file(std::path::Path::new(path))
            .map(|inner| Self { inner })
            .map_err(|e| PyValueError::new_err(e.message))
    }

    fn serialize(&self) -> String {
        self.inner.serialize()
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    #[getter]
    fn sweep(&self) -> Vec<f64> {
        self.inner.sweep_r.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn gamma(&self) -> PyResult<f64> {
        self.inner.gamma().map_err(py_err)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("ExperimentConfig(sha256={})", &self.inner.digest()[..12])
    }
}

/// Trap location and strength for one power ratio.
#[pyclass(name = "TrapSolution", module = "tapertrap_py", get_all, frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySolution {
    z0: f64,
    diameter_at_trap: f64,
    stiffness: f64,
    axial_depth: f64,
    axial_depth_kbt: f64,
    stable: bool,
    rayleigh_valid: bool,
}

impl From<TrapSolution> for PySolution {
    fn from(s: TrapSolution) -> Self {
        Self {
            z0: s.z0,
            diameter_at_trap: s.diameter_at_trap,
            stiffness: s.stiffness,
            axial_depth: s.axial_depth,
            axial_depth_kbt: s.axial_depth_kbt,
            stable: s.stable,
            rayleigh_valid: s.rayleigh_valid,
        }
    }
}

#[pymethods]
impl PySolution {
    fn __repr__(&self) -> String {
        format!(
            "TrapSolution(z0={:.4e}, stiffness={:.3e}, depth_kbt={:.1}, stable={})",
            self.z0,
            self.stiffness,
            self.axial_depth_kbt,
            if self.stable { "True" } else { "False" }
        )
    }
}

/// Tabulated two-color trap built from a config.
#[pyclass(name = "TrapModel", module = "tapertrap_py", frozen)]
struct PyTrapModel {
    inner: trap_model::TrapModel,
}

#[pymethods]
impl PyTrapModel {
    #[new]
    fn new(py: Python<'_>, config: &PyConfig) -> PyResult<Self> {
        let setup = config.inner.trap_setup().map_err(py_err)?;
        let inner = py.detach(|| trap_model::TrapModel::new(setup)).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn power_ratio(&self) -> f64 {
        self.inner.setup().power_ratio()
    }

    fn z_domain(&self) -> (f64, f64) {
        self.inner.z_domain()
    }

    #[pyo3(signature = (ratio = None))]
    fn find_trap(&self, py: Python<'_>, ratio: Option<f64>) -> PyResult<PySolution> {
        let model = match ratio {
            Some(r) => self.inner.with_power_ratio(r),
            None => self.inner.clone(),
        };
        py.detach(|| model.find_trap()).map(PySolution::from).map_err(py_err)
    }

    fn scan(&self, py: Python<'_>, ratios: Vec<f64>) -> PyResult<Vec<(f64, PySolution)>> {
        let out = py.detach(|| self.inner.scan_power_ratios(&ratios)).map_err(py_err)?;
        Ok(out.into_iter().map(|(r, s)| (r, s.into())).collect())
    }

    fn net_force(&self, z: f64) -> PyResult<f64> {
        self.inner.net_force(z).map_err(py_err)
    }

    /// Potential on a uniform ascending grid, shifted so its minimum is 0.
    fn axial_potential(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner
            .axial_potential(&z)
            .map(|u| trap_model::normalize_potential(&u))
            .map_err(py_err)
    }

    /// Overdamped trajectories for injections `[(t, z), ...]`, as lists of
    /// `(t, z)` samples. `ratio` overrides the configured power ratio.
    #[pyo3(signature = (injections, gamma, duration, temperature = 293.0, dt = 1e-4, seed = 0, record_every = 10, ratio = None))]
    #[allow(clippy::too_many_arguments)]
    fn simulate(
        &self,
        py: Python<'_>,
        injections: Vec<(f64, f64)>,
        gamma: f64,
        duration: f64,
        temperature: f64,
        dt: f64,
        seed: u64,
        record_every: usize,
        ratio: Option<f64>,
    ) -> PyResult<Vec<Vec<(f64, f64)>>> {
        let model = match ratio {
            Some(r) => self.inner.with_power_ratio(r),
            None => self.inner.clone(),
        };
        let inj: Vec<Injection> = injections.iter().map(|&(time, z)| Injection { time, z }).collect();
        let params = LangevinParams::new(gamma, temperature, dt, 0, seed).record_every(record_every);
        let trajs = py
            .detach(|| dynamics::simulate_injections(&model, &params, &inj, duration))
            .map_err(py_err)?;
        Ok(trajs.into_iter().map(|t| t.samples).collect())
    }
}

/// Surface intensity (W/m^2) at the top of the fiber, `offset` beyond the surface.
#[pyfunction]
#[pyo3(signature = (diameter, wavelength, power, offset = 0.0, direction = 1))]
fn top_intensity(diameter: f64, wavelength: f64, power: f64, offset: f64, direction: i32) -> PyResult<f64> {
    let spec = ModeSpec::new(wavelength, power, self::direction(direction)?).map_err(py_err)?;
    fiber_modes::solve_he11(diameter, &spec, StepIndex::default())
        .and_then(|m| m.top_intensity(offset))
        .map_err(py_err)
}

#[pyfunction]
fn effective_index(diameter: f64, wavelength: f64) -> PyResult<f64> {
    let spec = ModeSpec::new(wavelength, 1e-3, Direction::Forward).map_err(py_err)?;
    fiber_modes::solve_he11(diameter, &spec, StepIndex::default())
        .map(|m| m.effective_index())
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (diameter, short_wavelength, long_wavelength, angle, probe_offset = 0.0))]
fn polarization_correction(
    diameter: f64,
    short_wavelength: f64,
    long_wavelength: f64,
    angle: f64,
    probe_offset: f64,
) -> PyResult<f64> {
    fiber_modes::polarization_correction(
        diameter,
        short_wavelength,
        long_wavelength,
        angle,
        probe_offset,
        StepIndex::default(),
    )
    .map_err(py_err)
}

/// Polarizability volume (m^3) of a gold sphere in water.
#[pyfunction]
fn gold_polarizability(radius: f64, wavelength: f64) -> PyResult<(f64, f64)> {
    trap_model::polarizability(&ParticleSpec::gold_in_water(radius), wavelength)
        .map(|a| (a.re, a.im))
        .map_err(py_err)
}

#[pyfunction]
fn estimate_gamma(velocity: f64, force: f64) -> PyResult<f64> {
    tracking::estimate_gamma(velocity, force).map_err(py_err)
}

/// Overdamped Brownian motion in `F = -k z`; returns `(t, z)` samples.
#[pyfunction]
#[pyo3(signature = (stiffness, gamma, n_steps, temperature = 293.0, dt = 1e-4, seed = 0, z0 = 0.0))]
#[allow(clippy::too_many_arguments)]
fn simulate_harmonic(
    py: Python<'_>,
    stiffness: f64,
    gamma: f64,
    n_steps: usize,
    temperature: f64,
    dt: f64,
    seed: u64,
    z0: f64,
) -> PyResult<Vec<(f64, f64)>> {
    let field = Harmonic {
        stiffness,
        center: 0.0,
    };
    let params = LangevinParams::new(gamma, temperature, dt, n_steps, seed);
    py.detach(|| dynamics::simulate_overdamped(&field, &params, z0))
        .map(|t| t.samples)
        .map_err(py_err)
}

/// Runs the tracking pipeline on kymograph text; returns the result as JSON.
#[pyfunction]
#[pyo3(signature = (kymograph_text, config = None, gamma = None))]
fn analyze_kymograph(
    py: Python<'_>,
    kymograph_text: &str,
    config: Option<&PyConfig>,
    gamma: Option<f64>,
) -> PyResult<String> {
    let kymo = dynamics::Kymograph::from_text(kymograph_text).map_err(py_err)?;
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let params = cfg.analysis_params(kymo.pixel_pitch, gamma, None);
    let result = py
        .detach(|| tracking::analyze_kymograph(&kymo, &params))
        .map_err(py_err)?;
    serde_json::to_string(&result).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Renders `(t, z)` trajectories into kymograph text for `[z_min, z_max]`.
#[pyfunction]
#[pyo3(signature = (trajectories, z_min, z_max, duration, noise_sigma = 0.0, seed = 0))]
fn render_kymograph(
    trajectories: Vec<Vec<(f64, f64)>>,
    z_min: f64,
    z_max: f64,
    duration: f64,
    noise_sigma: f64,
    seed: u64,
) -> PyResult<String> {
    let trajs = trajectories
        .into_iter()
        .enumerate()
        .map(|(i, s)| dynamics::Trajectory::new(i as u32, s))
        .collect::<tapertrap::Result<Vec<_>>>()
        .map_err(py_err)?;
    let mut spec = dynamics::RenderSpec::covering(z_min, z_max, duration);
    spec.noise_sigma = noise_sigma;
    spec.seed = seed;
    dynamics::render_kymograph(&trajs, &spec)
        .map(|k| k.to_text(&[]))
        .map_err(py_err)
}

#[pymodule]
fn tapertrap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PySolution>()?;
    m.add_class::<PyTrapModel>()?;
    m.add_function(wrap_pyfunction!(top_intensity, m)?)?;
    m.add_function(wrap_pyfunction!(effective_index, m)?)?;
    m.add_function(wrap_pyfunction!(polarization_correction, m)?)?;
    m.add_function(wrap_pyfunction!(gold_polarizability, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_harmonic, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_kymograph, m)?)?;
    m.add_function(wrap_pyfunction!(render_kymograph, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
