//! Rayleigh-regime optical forces on a nanosphere riding the evanescent
//! field of a tapered fiber, and the axial trap they form when two colors
//! counter-propagate.
//!
//! Conventions: the shorter wavelength propagates toward +z, the longer one
//! toward -z, and the taper diameter grows with z on the +z side of the
//! waist. The axial potential is `U(z) = -int F dz`, so a stable trap is a
//! potential minimum.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{BOLTZMANN, SPEED_OF_LIGHT};
use crate::error::{invalid, Error, Result};
use crate::fiber_modes::{solve_he11, ModeSpec, StepIndex, MAX_DIAMETER};
use crate::materials::{MediumSpec, PermittivityTable, GOLD_DENSITY};

/// Central-difference half step for the stiffness.
pub const STIFFNESS_STEP: f64 = 10e-6;
/// Offset on either side of the trap at which the axial depth is taken.
pub const DEPTH_OFFSET: f64 = 100e-6;
/// Default z resolution for scans and potential integration.
pub const DEFAULT_Z_STEP: f64 = 1e-6;

/// Waist of constant diameter flanked by exponential tapers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberGeometry {
    pub waist_diameter: f64,
    pub taper_length: f64,
    pub waist_half_length: f64,
}

impl FiberGeometry {
    pub fn new(waist_diameter: f64, taper_length: f64, waist_half_length: f64) -> Result<Self> {
        if !(waist_diameter > 0.0 && taper_length > 0.0 && waist_half_length >= 0.0) {
            return Err(invalid(format!(
                "taper geometry needs D0 > 0, L0 > 0, waist half-length >= 0 (got {waist_diameter}, {taper_length}, {waist_half_length})"
            )));
        }
        Ok(Self {
            waist_diameter,
            taper_length,
            waist_half_length,
        })
    }

    pub fn diameter_at(&self, z: f64) -> f64 {
        let excess = z.abs() - self.waist_half_length;
        if excess <= 0.0 {
            self.waist_diameter
        } else {
            self.waist_diameter * (excess / self.taper_length).exp()
        }
    }

    /// Position on the +z taper where the diameter equals `diameter`.
    pub fn z_of_diameter(&self, diameter: f64) -> Result<f64> {
        if !(diameter >= self.waist_diameter) {
            return Err(invalid(format!(
                "diameter {:.1} nm is thinner than the waist ({:.1} nm)",
                diameter * 1e9,
                self.waist_diameter * 1e9
            )));
        }
        Ok(self.waist_half_length + self.taper_length * (diameter / self.waist_diameter).ln())
    }
}

impl Default for FiberGeometry {
    /// 400 nm waist, 1 mm taper length, 0.25 mm waist half-length.
    fn default() -> Self {
        Self {
            waist_diameter: 400e-9,
            taper_length: 1e-3,
            waist_half_length: 0.25e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSpec {
    pub radius: f64,
    pub material: Arc<PermittivityTable>,
    pub density: f64,
    pub medium: MediumSpec,
}

impl ParticleSpec {
    pub fn new(
        radius: f64,
        material: PermittivityTable,
        density: f64,
        medium: MediumSpec,
    ) -> Result<Self> {
        if !(radius > 0.0 && density > 0.0) {
            return Err(invalid(format!(
                "particle radius {radius} and density {density} must be > 0"
            )));
        }
        Ok(Self {
            radius,
            material: Arc::new(material),
            density,
            medium,
        })
    }

    /// Gold sphere of the given radius in room-temperature water.
    pub fn gold_in_water(radius: f64) -> Self {
        Self::new(
            radius,
            PermittivityTable::gold(),
            GOLD_DENSITY,
            MediumSpec::water(),
        )
        .expect("positive radius")
    }

    pub fn mass(&self) -> f64 {
        self.density * 4.0 / 3.0 * PI * self.radius.powi(3)
    }

    /// Stokes drag `6 pi eta a`.
    pub fn stokes_drag(&self) -> f64 {
        6.0 * PI * self.medium.viscosity() * self.radius
    }

    /// Rayleigh treatment holds while the diameter stays below lambda/5.
    pub fn rayleigh_valid(&self, wavelength: f64) -> bool {
        2.0 * self.radius <= wavelength / 5.0
    }
}

/// Volume polarizability `a^3 (eps_p/eps_m - 1)/(eps_p/eps_m + 2)`, m^3.
pub fn polarizability(particle: &ParticleSpec, wavelength: f64) -> Result<Complex64> {
    let eps_p = particle.material.permittivity_at(wavelength)?;
    polarizability_from_permittivity(particle.radius, eps_p, particle.medium.permittivity())
}

pub fn polarizability_from_permittivity(
    radius: f64,
    eps_particle: Complex64,
    eps_medium: f64,
) -> Result<Complex64> {
    let rel = eps_particle / eps_medium;
    let denom = rel + 2.0;
    if denom.norm() < 1e-9 {
        return Err(Error::ResonanceSingularity(denom.norm()));
    }
    Ok(radius.powi(3) * (rel - 1.0) / denom)
}

/// Scattering plus absorption force magnitude along the propagation
/// direction for surface intensity `intensity` (W/m^2).
pub fn radiation_pressure_force(
    particle: &ParticleSpec,
    intensity: f64,
    wavelength: f64,
) -> Result<f64> {
    if !(intensity >= 0.0) {
        return Err(invalid(format!("intensity {intensity} must be >= 0")));
    }
    let alpha = polarizability(particle, wavelength)?;
    Ok(intensity * force_per_intensity(alpha, particle.medium.permittivity(), wavelength))
}

/// Force per unit intensity, N per (W/m^2).
fn force_per_intensity(alpha: Complex64, eps_medium: f64, wavelength: f64) -> f64 {
    let c = SPEED_OF_LIGHT;
    let scatt = 8.0 * PI.powi(3) * eps_medium * alpha.norm_sqr() / (3.0 * c * wavelength.powi(4));
    let abs = 2.0 * PI * eps_medium * alpha.im / (wavelength * c);
    scatt + abs
}

/// Signed net axial force at `z`, solving both modes at the local diameter.
pub fn net_axial_force(
    z: f64,
    geometry: &FiberGeometry,
    modes: &[ModeSpec; 2],
    particle: &ParticleSpec,
    probe_offset: f64,
    media: StepIndex,
) -> Result<f64> {
    let d = geometry.diameter_at(z);
    let mut total = 0.0;
    for spec in modes {
        let mode = solve_he11(d, spec, media)?;
        let intensity = mode.top_intensity(probe_offset)?;
        total += spec.direction.sign() * radiation_pressure_force(particle, intensity, spec.wavelength)?;
    }
    Ok(total)
}

/// `U(z) = -int_{z_0}^{z} F dz'` by the trapezoid rule, shifted so its
/// minimum is zero.
pub fn integrate_potential(z_grid: &[f64], forces: &[f64]) -> Result<Vec<f64>> {
    if z_grid.len() < 3 {
        return Err(invalid(format!(
            "potential grid needs at least 3 points, got {}",
            z_grid.len()
        )));
    }
    if z_grid.len() != forces.len() {
        return Err(invalid("force and grid lengths differ"));
    }
    let dz0 = z_grid[1] - z_grid[0];
    if !(dz0 > 0.0)
        || z_grid
            .windows(2)
            .any(|w| ((w[1] - w[0]) - dz0).abs() > 1e-6 * dz0)
    {
        return Err(invalid("z grid must be ascending and uniform"));
    }
    let mut u = Vec::with_capacity(z_grid.len());
    u.push(0.0);
    for i in 1..z_grid.len() {
        let dz = z_grid[i] - z_grid[i - 1];
        let prev = u[i - 1];
        u.push(prev - 0.5 * dz * (forces[i] + forces[i - 1]));
    }
    let min = u.iter().cloned().fold(f64::INFINITY, f64::min);
    u.iter_mut().for_each(|v| *v -= min);
    Ok(u)
}

/// Rescales a min-shifted potential so its maximum is one.
pub fn normalize_potential(potential: &[f64]) -> Vec<f64> {
    let max = potential.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        potential.iter().map(|v| v / max).collect()
    } else {
        potential.to_vec()
    }
}

/// Unit-power intensity at the fiber top versus diameter, on a uniform
/// grid with cubic (Catmull-Rom) interpolation between nodes.
#[derive(Debug, Clone)]
pub struct IntensityTable {
    d_min: f64,
    step: f64,
    values: Vec<f64>,
}

impl IntensityTable {
    pub const DEFAULT_STEP: f64 = 1e-9;

    pub fn build(
        spec: &ModeSpec,
        media: StepIndex,
        probe_offset: f64,
        d_min: f64,
        d_max: f64,
        step: f64,
    ) -> Result<Self> {
        if !(d_max > d_min && step > 0.0) {
            return Err(invalid("intensity table needs d_max > d_min and step > 0"));
        }
        let unit = spec.with_power(1.0);
        // one extra node on each side for the cubic stencil
        let lo = d_min - step;
        let n = ((d_max - d_min) / step).ceil() as usize + 3;
        let values = (0..n)
            .into_par_iter()
            .map(|i| {
                let d = lo + step * i as f64;
                solve_he11(d, &unit, media)?.top_intensity(probe_offset)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            d_min: lo,
            step,
            values,
        })
    }

    pub fn span(&self) -> (f64, f64) {
        (
            self.d_min + self.step,
            self.d_min + self.step * (self.values.len() - 2) as f64,
        )
    }

    /// Intensity per watt at `diameter`.
    pub fn at(&self, diameter: f64) -> Result<f64> {
        let (lo, hi) = self.span();
        if !(diameter >= lo - 1e-15 && diameter <= hi + 1e-15) {
            return Err(invalid(format!(
                "diameter {:.2} nm outside tabulated range [{:.2}, {:.2}] nm",
                diameter * 1e9,
                lo * 1e9,
                hi * 1e9
            )));
        }
        let x = (diameter - self.d_min) / self.step;
        let i = (x.floor() as usize).clamp(1, self.values.len() - 3);
        let t = x - i as f64;
        let (p0, p1, p2, p3) = (
            self.values[i - 1],
            self.values[i],
            self.values[i + 1],
            self.values[i + 2],
        );
        let t2 = t * t;
        let t3 = t2 * t;
        Ok(0.5
            * (2.0 * p1
                + (p2 - p0) * t
                + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2
                + (3.0 * (p1 - p2) + p3 - p0) * t3))
    }
}

/// Everything that defines a two-color taper trap.
#[derive(Debug, Clone)]
pub struct TrapSetup {
    pub geometry: FiberGeometry,
    /// Shorter wavelength, propagating +z.
    pub short: ModeSpec,
    /// Longer wavelength, propagating -z.
    pub long: ModeSpec,
    pub particle: ParticleSpec,
    pub media: StepIndex,
    /// Distance from the fiber surface at which the intensity is sampled.
    pub probe_offset: f64,
    /// Diameter window searched for the trap.
    pub diameter_range: (f64, f64),
    pub z_step: f64,
    /// Multiplier on every radiation-pressure force. 1 applies the Rayleigh
    /// expressions as written; other values calibrate absolute magnitudes
    /// (e.g. to full-wave results) without moving the trap.
    pub force_scale: f64,
}

impl TrapSetup {
    pub fn modes(&self) -> [ModeSpec; 2] {
        [self.short, self.long]
    }

    /// `P_short / P_long`.
    pub fn power_ratio(&self) -> f64 {
        self.short.power / self.long.power
    }

    /// Sets the short-wavelength power to `ratio * P_long`.
    pub fn with_power_ratio(mut self, ratio: f64) -> Self {
        self.short.power = ratio * self.long.power;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.short.validate()?;
        self.long.validate()?;
        if self.short.direction == self.long.direction {
            return Err(invalid("the two modes must counter-propagate"));
        }
        let (lo, hi) = self.diameter_range;
        if !(lo >= self.geometry.waist_diameter * (1.0 - 1e-12) && hi > lo) {
            return Err(invalid(format!(
                "diameter search range [{:.1}, {:.1}] nm must start at or above the waist",
                lo * 1e9,
                hi * 1e9
            )));
        }
        if !(self.z_step > 0.0) {
            return Err(invalid("z step must be > 0"));
        }
        if !(self.force_scale > 0.0 && self.force_scale.is_finite()) {
            return Err(invalid("force scale must be finite and > 0"));
        }
        if !(self.probe_offset >= 0.0) {
            return Err(invalid("probe offset must be >= 0"));
        }
        Ok(())
    }

    /// Human-readable warnings for configurations outside the Rayleigh regime.
    pub fn validity_warnings(&self) -> Vec<String> {
        [self.short.wavelength, self.long.wavelength]
            .iter()
            .filter(|&&l| !self.particle.rayleigh_valid(l))
            .map(|&l| {
                format!(
                    "particle diameter {:.0} nm exceeds lambda/5 at {:.0} nm; Rayleigh forces are only indicative",
                    2e9 * self.particle.radius,
                    l * 1e9
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapSolution {
    pub z0: f64,
    pub diameter_at_trap: f64,
    /// -dF/dz at the trap, N/m.
    pub stiffness: f64,
    /// Mean potential rise at +/-100 um, J.
    pub axial_depth: f64,
    pub axial_depth_kbt: f64,
    pub stable: bool,
    pub rayleigh_valid: bool,
}

impl TrapSolution {
    pub fn no_trap(rayleigh_valid: bool) -> Self {
        Self {
            z0: f64::NAN,
            diameter_at_trap: f64::NAN,
            stiffness: f64::NAN,
            axial_depth: f64::NAN,
            axial_depth_kbt: f64::NAN,
            stable: false,
            rayleigh_valid,
        }
    }
}

/// A trap setup with tabulated unit-power intensities, so forces at any
/// power or position cost an interpolation rather than a mode solve.
#[derive(Debug, Clone)]
pub struct TrapModel {
    setup: TrapSetup,
    short_table: Arc<IntensityTable>,
    long_table: Arc<IntensityTable>,
    short_per_intensity: f64,
    long_per_intensity: f64,
}

impl TrapModel {
    pub fn new(setup: TrapSetup) -> Result<Self> {
        setup.validate()?;
        let (d_lo, d_hi) = Self::table_span(&setup);
        let step = IntensityTable::DEFAULT_STEP;
        let short_table = IntensityTable::build(&setup.short, setup.media, setup.probe_offset, d_lo, d_hi, step)?;
        let long_table = IntensityTable::build(&setup.long, setup.media, setup.probe_offset, d_lo, d_hi, step)?;
        Self::with_tables(setup, Arc::new(short_table), Arc::new(long_table))
    }

    fn table_span(setup: &TrapSetup) -> (f64, f64) {
        let lo = setup.geometry.waist_diameter;
        // room for the depth evaluation beyond the search window
        let reach = ((DEPTH_OFFSET + 2.0 * STIFFNESS_STEP) / setup.geometry.taper_length).exp();
        let hi = (setup.diameter_range.1 * reach * 1.01).min(MAX_DIAMETER);
        (lo, hi)
    }

    fn with_tables(
        setup: TrapSetup,
        short_table: Arc<IntensityTable>,
        long_table: Arc<IntensityTable>,
    ) -> Result<Self> {
        let eps_m = setup.particle.medium.permittivity();
        let short_alpha = polarizability(&setup.particle, setup.short.wavelength)?;
        let long_alpha = polarizability(&setup.particle, setup.long.wavelength)?;
        Ok(Self {
            short_per_intensity: setup.force_scale
                * force_per_intensity(short_alpha, eps_m, setup.short.wavelength),
            long_per_intensity: setup.force_scale
                * force_per_intensity(long_alpha, eps_m, setup.long.wavelength),
            setup,
            short_table,
            long_table,
        })
    }

    pub fn setup(&self) -> &TrapSetup {
        &self.setup
    }

    /// Same tables, new mode powers.
    pub fn with_powers(&self, short_power: f64, long_power: f64) -> Self {
        let mut out = self.clone();
        out.setup.short.power = short_power;
        out.setup.long.power = long_power;
        out
    }

    pub fn with_power_ratio(&self, ratio: f64) -> Self {
        self.with_powers(ratio * self.setup.long.power, self.setup.long.power)
    }

    /// Same tables, different particle (radius or material).
    pub fn with_particle(&self, particle: ParticleSpec) -> Result<Self> {
        let mut setup = self.setup.clone();
        setup.particle = particle;
        Self::with_tables(setup, self.short_table.clone(), self.long_table.clone())
    }

    /// z range over which forces can be evaluated.
    pub fn z_domain(&self) -> (f64, f64) {
        let g = &self.setup.geometry;
        let (_, d_hi) = self.short_table.span();
        let z_hi = g.z_of_diameter(d_hi).unwrap_or(g.waist_half_length);
        (-z_hi, z_hi)
    }

    /// z window covering the configured diameter search range.
    pub fn search_window(&self) -> Result<(f64, f64)> {
        let g = &self.setup.geometry;
        let (d_lo, d_hi) = self.setup.diameter_range;
        Ok((g.z_of_diameter(d_lo)?, g.z_of_diameter(d_hi)?))
    }

    /// Forward/backward-resolved force magnitudes at `z`.
    pub fn mode_forces(&self, z: f64) -> Result<(f64, f64)> {
        let d = self.setup.geometry.diameter_at(z);
        let short = self.setup.short.power * self.short_table.at(d)? * self.short_per_intensity;
        let long = self.setup.long.power * self.long_table.at(d)? * self.long_per_intensity;
        Ok((short, long))
    }

    /// Signed net axial force at `z`.
    pub fn net_force(&self, z: f64) -> Result<f64> {
        let (short, long) = self.mode_forces(z)?;
        Ok(self.setup.short.direction.sign() * short + self.setup.long.direction.sign() * long)
    }

    pub fn force_profile(&self, z_grid: &[f64]) -> Result<Vec<f64>> {
        z_grid.iter().map(|&z| self.net_force(z)).collect()
    }

    pub fn axial_potential(&self, z_grid: &[f64]) -> Result<Vec<f64>> {
        let forces = self.force_profile(z_grid)?;
        integrate_potential(z_grid, &forces)
    }

    /// Uniform grid over the diameter search window at `z_step`.
    pub fn search_grid(&self) -> Result<Vec<f64>> {
        let (lo, hi) = self.search_window()?;
        Ok(uniform_grid(lo, hi, self.setup.z_step))
    }

    /// Locates the restoring zero of the net force (+ to - with increasing
    /// z) inside the search window, then its stiffness and depth.
    pub fn find_trap(&self) -> Result<TrapSolution> {
        let rayleigh = self.setup.validity_warnings().is_empty();
        let grid = self.search_grid()?;
        let forces = self.force_profile(&grid)?;
        let crossing = grid
            .windows(2)
            .zip(forces.windows(2))
            .find(|(_, f)| f[0] > 0.0 && f[1] <= 0.0)
            .map(|(z, _)| (z[0], z[1]));
        let Some((mut lo, mut hi)) = crossing else {
            return Ok(TrapSolution::no_trap(rayleigh));
        };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo < 1e-13 {
                break;
            }
            if self.net_force(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let z0 = 0.5 * (lo + hi);
        let stiffness = -(self.net_force(z0 + STIFFNESS_STEP)? - self.net_force(z0 - STIFFNESS_STEP)?)
            / (2.0 * STIFFNESS_STEP);
        let rise = |end: f64| -> Result<f64> {
            let n = ((end - z0).abs() / self.setup.z_step).round().max(2.0) as usize;
            let h = (end - z0) / n as f64;
            let mut work = 0.0;
            let mut prev = self.net_force(z0)?;
            for i in 1..=n {
                let f = self.net_force(z0 + h * i as f64)?;
                work += 0.5 * h * (prev + f);
                prev = f;
            }
            Ok(-work)
        };
        let depth = 0.5 * (rise(z0 + DEPTH_OFFSET)? + rise(z0 - DEPTH_OFFSET)?);
        let kbt = BOLTZMANN * self.setup.particle.medium.temperature();
        Ok(TrapSolution {
            z0,
            diameter_at_trap: self.setup.geometry.diameter_at(z0),
            stiffness,
            axial_depth: depth,
            axial_depth_kbt: depth / kbt,
            stable: stiffness > 0.0,
            rayleigh_valid: rayleigh,
        })
    }

    /// Slope of a least-squares line through F(z) over `z0 +/- half_width`.
    pub fn fitted_stiffness(&self, z0: f64, half_width: f64) -> Result<f64> {
        let grid = uniform_grid(z0 - half_width, z0 + half_width, self.setup.z_step);
        let forces = self.force_profile(&grid)?;
        let n = grid.len() as f64;
        let mz = grid.iter().sum::<f64>() / n;
        let mf = forces.iter().sum::<f64>() / n;
        let sxy: f64 = grid.iter().zip(&forces).map(|(z, f)| (z - mz) * (f - mf)).sum();
        let sxx: f64 = grid.iter().map(|z| (z - mz).powi(2)).sum();
        Ok(-sxy / sxx)
    }

    /// Runs `find_trap` for each ratio in parallel; output order matches input.
    pub fn scan_power_ratios(&self, ratios: &[f64]) -> Result<Vec<(f64, TrapSolution)>> {
        ratios
            .par_iter()
            .map(|&r| Ok((r, self.with_power_ratio(r).find_trap()?)))
            .collect()
    }
}

/// Builds the model and locates the trap in one call.
pub fn find_trap(setup: TrapSetup) -> Result<TrapSolution> {
    TrapModel::new(setup)?.find_trap()
}

pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round().max(2.0) as usize;
    let h = (hi - lo) / n as f64;
    (0..=n).map(|i| lo + h * i as f64).collect()
}

/// Surface separations between which the radial potential is integrated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapRange {
    pub far: f64,
    pub near: f64,
}

impl Default for GapRange {
    fn default() -> Self {
        Self {
            far: 2e-6,
            near: 10e-9,
        }
    }
}

/// Depth of the radial gradient-force well along the y axis, from the far
/// gap to the near gap, with the particle center at `a + a_ns + gap`.
pub fn radial_potential_depth(
    diameter: f64,
    mode: &ModeSpec,
    particle: &ParticleSpec,
    gaps: GapRange,
    media: StepIndex,
) -> Result<f64> {
    radial_potential_depth_multi(diameter, std::slice::from_ref(mode), particle, gaps, media)
}

/// Radial depth for several incoherent modes, integrated from the summed
/// gradient force in a single pass.
pub fn radial_potential_depth_multi(
    diameter: f64,
    modes: &[ModeSpec],
    particle: &ParticleSpec,
    gaps: GapRange,
    media: StepIndex,
) -> Result<f64> {
    if !(gaps.far >= 2e-6 && gaps.near > 0.0 && gaps.near < gaps.far) {
        return Err(invalid("gap range must run from >= 2 um down to a positive near gap"));
    }
    let eps_m = particle.medium.permittivity();
    let mut terms = Vec::with_capacity(modes.len());
    for spec in modes {
        let alpha = polarizability(particle, spec.wavelength)?;
        terms.push((solve_he11(diameter, spec, media)?, 2.0 * PI * eps_m * alpha.re / SPEED_OF_LIGHT));
    }
    let force = |gap: f64| -> Result<f64> {
        // central difference of the top intensity in the radial offset
        let h = gap * 1e-4;
        let off = particle.radius + gap;
        let mut f = 0.0;
        for (mode, pref) in &terms {
            let g = (mode.top_intensity(off + h)? - mode.top_intensity(off - h)?) / (2.0 * h);
            f += pref * g;
        }
        Ok(f)
    };
    // log-spaced gaps resolve the steep near-surface gradient
    let n = 2000;
    let (l0, l1) = (gaps.near.ln(), gaps.far.ln());
    let gap_at = |i: usize| (l0 + (l1 - l0) * i as f64 / n as f64).exp();
    // depth = U(far) - U(near) = -int_near^far F_y dy
    let mut work = 0.0;
    let mut prev = (gap_at(0), force(gap_at(0))?);
    for i in 1..=n {
        let g = gap_at(i);
        let f = force(g)?;
        work += 0.5 * (g - prev.0) * (f + prev.1);
        prev = (g, f);
    }
    Ok(-work)
}

/// Diameter-resolved radial depth for one mode; pairs of (diameter, depth).
pub fn radial_depth_scan(
    diameters: &[f64],
    mode: &ModeSpec,
    particle: &ParticleSpec,
    gaps: GapRange,
    media: StepIndex,
) -> Result<Vec<(f64, f64)>> {
    diameters
        .par_iter()
        .map(|&d| Ok((d, radial_potential_depth(d, mode, particle, gaps, media)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingReport {
    /// Stokes drag, kg/s.
    pub gamma0: f64,
    pub gamma0_sq: f64,
    /// 4 S m, kg^2/s^2.
    pub four_sm: f64,
    /// sqrt(2 gamma0 k_B T), kg m s^-3/2.
    pub sqrt_noise: f64,
    pub is_overdamped: bool,
}

impl DampingReport {
    pub fn ratio(&self) -> f64 {
        self.gamma0_sq / self.four_sm
    }
}

pub fn overdamped_classification(particle: &ParticleSpec, stiffness: f64) -> Result<DampingReport> {
    if !(stiffness >= 0.0) {
        return Err(invalid(format!("stiffness {stiffness} must be >= 0")));
    }
    let gamma0 = particle.stokes_drag();
    let four_sm = 4.0 * stiffness * particle.mass();
    let sqrt_noise = (2.0 * gamma0 * BOLTZMANN * particle.medium.temperature()).sqrt();
    Ok(DampingReport {
        gamma0,
        gamma0_sq: gamma0 * gamma0,
        four_sm,
        sqrt_noise,
        is_overdamped: gamma0 * gamma0 > 100.0 * four_sm,
    })
}
