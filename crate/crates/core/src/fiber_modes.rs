//! Fundamental HE11 mode of a step-index cylinder (silica core, water
//! cladding): exact vector fields, power normalization, evanescent
//! intensity, and the polarization-rotation correction factor.
//!
//! Fields follow the standard quasi-linearly polarized HE11 solution built
//! from the two circular (l = +/-1) hybrid modes. With `u = h a`, `w = q a`,
//! `h = sqrt(k^2 n1^2 - beta^2)` and `q = sqrt(beta^2 - k^2 n2^2)`:
//!
//! ```text
//! r < a:  e_r   = beta/(2h) [(1-s) J0(hr) - (1+s) J2(hr)]
//!         e_phi = beta/(2h) [(1-s) J0(hr) + (1+s) J2(hr)]
//!         e_z   = J1(hr)
//! r > a:  e_r   = c beta/(2q) [(1-s) K0(qr) + (1+s) K2(qr)]
//!         e_phi = c beta/(2q) [(1-s) K0(qr) - (1+s) K2(qr)]
//!         e_z   = c K1(qr),            c = J1(u)/K1(w)
//! ```
//!
//! and `|E|^2 = 2|A|^2 [(e_r^2 + e_z^2) cos^2(phi - phi0) + e_phi^2 sin^2(phi - phi0)]`
//! for polarization axis `phi0`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::constants::{SPEED_OF_LIGHT, VACUUM_PERMITTIVITY};
use crate::error::{invalid, Error, Result};
use crate::materials::{SILICA_INDEX, WATER_INDEX};
use crate::special::{bessel_j0123, bessel_k0123};

pub const MIN_WAVELENGTH: f64 = 400e-9;
pub const MAX_WAVELENGTH: f64 = 1000e-9;
pub const MIN_DIAMETER: f64 = 200e-9;
pub const MAX_DIAMETER: f64 = 2000e-9;

const BRACKET_POINTS: usize = 2000;
const INDEX_MARGIN: f64 = 1e-9;

/// Propagation sense along the fiber axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }

    pub fn from_sign(sign: i32) -> Result<Self> {
        match sign {
            1 => Ok(Direction::Forward),
            -1 => Ok(Direction::Backward),
            other => Err(invalid(format!("direction must be +1 or -1, got {other}"))),
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

/// A launched mode: wavelength (m), power (W), direction, and the angle of
/// the quasi-linear polarization axis measured from the y axis (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeSpec {
    pub wavelength: f64,
    pub power: f64,
    pub direction: Direction,
    pub polarization_angle: f64,
}

impl ModeSpec {
    pub fn new(wavelength: f64, power: f64, direction: Direction) -> Result<Self> {
        let spec = Self {
            wavelength,
            power,
            direction,
            polarization_angle: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_polarization(mut self, angle: f64) -> Self {
        self.polarization_angle = angle;
        self
    }

    pub fn with_power(mut self, power: f64) -> Self {
        self.power = power;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power >= 0.0) || !self.power.is_finite() {
            return Err(invalid(format!("mode power {} W must be >= 0", self.power)));
        }
        if !(MIN_WAVELENGTH * (1.0 - 1e-9)..=MAX_WAVELENGTH * (1.0 + 1e-9)).contains(&self.wavelength) {
            return Err(invalid(format!(
                "wavelength {:.1} nm outside [400, 1000] nm",
                self.wavelength * 1e9
            )));
        }
        if !self.polarization_angle.is_finite() {
            return Err(invalid("polarization angle must be finite"));
        }
        Ok(())
    }
}

/// Core and cladding refractive indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepIndex {
    pub core: f64,
    pub cladding: f64,
}

impl StepIndex {
    pub fn new(core: f64, cladding: f64) -> Result<Self> {
        if !(core > cladding && cladding >= 1.0) {
            return Err(invalid(format!(
                "need core index {core} > cladding index {cladding} >= 1"
            )));
        }
        Ok(Self { core, cladding })
    }

    /// Silica (1.45) in water (1.33).
    pub fn silica_in_water() -> Self {
        Self {
            core: SILICA_INDEX,
            cladding: WATER_INDEX,
        }
    }
}

impl Default for StepIndex {
    fn default() -> Self {
        Self::silica_in_water()
    }
}

/// HE11 characteristic function; its root in `(n_clad, n_core)` with the
/// largest index is the fundamental mode.
pub fn he11_characteristic(diameter: f64, wavelength: f64, media: StepIndex, n_eff: f64) -> f64 {
    let ka = PI * diameter / wavelength;
    let (n1, n2) = (media.core, media.cladding);
    let u = ka * (n1 * n1 - n_eff * n_eff).sqrt();
    let w = ka * (n_eff * n_eff - n2 * n2).sqrt();
    characteristic_uw(u, w, n_eff / n1, media)
}

fn characteristic_uw(u: f64, w: f64, index_ratio: f64, media: StepIndex) -> f64 {
    let j = bessel_j0123(u);
    let kk = bessel_k0123(w);
    let kp = -kk[0] / (w * kk[1]) - 1.0 / (w * w);
    let n1sq = media.core * media.core;
    let n2sq = media.cladding * media.cladding;
    let contrast = (n1sq - n2sq) / (2.0 * n1sq);
    let inv = 1.0 / (u * u) + 1.0 / (w * w);
    // Both sides carry a 1/w^2 divergence as w -> 0; scale by w^2 there so
    // the residual stays meaningful for extremely weak guidance.
    let scale = (w * w).min(1.0);
    let root = ((contrast * kp * scale).powi(2) + (index_ratio * inv * scale).powi(2)).sqrt();
    (j[0] / (u * j[1]) + (n1sq + n2sq) / (2.0 * n1sq) * kp - 1.0 / (u * u)) * scale + root
}

/// Characteristic function parametrized by `w = q a`.
fn characteristic_in_w(ka: f64, media: StepIndex, w: f64) -> f64 {
    let (n1, n2) = (media.core, media.cladding);
    let v = ka * (n1 * n1 - n2 * n2).sqrt();
    let u = (v * v - w * w).sqrt();
    let n_eff = (n2 * n2 + (w / ka).powi(2)).sqrt();
    characteristic_uw(u, w, n_eff / n1, media)
}

/// Solved HE11 mode at one fiber diameter, normalized to `spec.power`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedMode {
    spec: ModeSpec,
    diameter: f64,
    media: StepIndex,
    n_eff: f64,
    beta: f64,
    h: f64,
    q: f64,
    s: f64,
    residual: f64,
    /// |A|^2 such that the mode carries `spec.power`.
    amplitude_sq: f64,
}

/// Radial field profiles of the l = +1 circular mode with unit amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialProfile {
    pub e_r: f64,
    pub e_phi: f64,
    pub e_z: f64,
    pub h_r: f64,
    pub h_phi: f64,
}

pub fn solve_he11(diameter: f64, spec: &ModeSpec, media: StepIndex) -> Result<GuidedMode> {
    spec.validate()?;
    if !(MIN_DIAMETER * (1.0 - 1e-9)..=MAX_DIAMETER * (1.0 + 1e-9)).contains(&diameter) {
        return Err(invalid(format!(
            "fiber diameter {:.1} nm outside [200, 2000] nm",
            diameter * 1e9
        )));
    }
    let lambda = spec.wavelength;
    let ka = PI * diameter / lambda;
    let f = |n: f64| he11_characteristic(diameter, lambda, media, n);

    let lo = media.cladding + INDEX_MARGIN;
    let hi = media.core - INDEX_MARGIN;
    let step = (hi - lo) / (BRACKET_POINTS - 1) as f64;
    let mut upper = hi;
    let mut f_upper = f(upper);
    let mut bracket = None;
    for i in (0..BRACKET_POINTS - 1).rev() {
        let n = lo + step * i as f64;
        let fv = f(n);
        if fv.is_finite() && f_upper.is_finite() && fv.signum() != f_upper.signum() {
            bracket = Some((n, upper));
            break;
        }
        upper = n;
        f_upper = fv;
    }

    // Bisect in w = q a; for weak guidance the root can sit closer to the
    // cladding index than double precision resolves in n_eff.
    let w_of = |n: f64| ka * (n * n - media.cladding * media.cladding).sqrt();
    let g = |w: f64| characteristic_in_w(ka, media, w);
    let (mut wa, mut wb) = match bracket {
        Some((n_lo, n_hi)) => (w_of(n_lo), w_of(n_hi)),
        None => {
            let mut found = None;
            let mut prev = w_of(lo);
            let mut g_prev = g(prev);
            for e in 1..=60 {
                let w = w_of(lo) * 10f64.powi(-e);
                let gv = g(w);
                if gv.is_finite() && g_prev.is_finite() && gv.signum() != g_prev.signum() {
                    found = Some((w, prev));
                    break;
                }
                prev = w;
                g_prev = gv;
            }
            found.ok_or_else(|| {
                Error::SolverFailure(format!(
                    "no sign change of the HE11 characteristic function at d = {:.1} nm, lambda = {:.1} nm",
                    diameter * 1e9,
                    lambda * 1e9
                ))
            })?
        }
    };
    let mut ga = g(wa);
    loop {
        let mid = if wb / wa > 4.0 { (wa * wb).sqrt() } else { 0.5 * (wa + wb) };
        if mid <= wa || mid >= wb {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            wa = mid;
            wb = mid;
            break;
        }
        if gm.signum() == ga.signum() {
            wa = mid;
            ga = gm;
        } else {
            wb = mid;
        }
    }
    let (ga, gb) = (g(wa), g(wb));
    let (w, residual) = if ga.abs() <= gb.abs() { (wa, ga) } else { (wb, gb) };
    if !(residual.abs() < 1e-10) {
        return Err(Error::SolverFailure(format!(
            "bracket collapsed on a pole (residual {residual:e})"
        )));
    }
    Ok(GuidedMode::from_root(diameter, *spec, media, w, residual))
}

impl GuidedMode {
    fn from_root(diameter: f64, spec: ModeSpec, media: StepIndex, w: f64, residual: f64) -> Self {
        let k = 2.0 * PI / spec.wavelength;
        let a = diameter / 2.0;
        let (n1, n2) = (media.core, media.cladding);
        let v = k * a * (n1 * n1 - n2 * n2).sqrt();
        let u = (v * v - w * w).sqrt();
        let n_eff = (n2 * n2 + (w / (k * a)).powi(2)).sqrt();
        let beta = k * n_eff;
        let (h, q) = (u / a, w / a);
        let j = bessel_j0123(u);
        let kk = bessel_k0123(w);
        let jp = j[0] / (u * j[1]) - 1.0 / (u * u);
        let kp = -kk[0] / (w * kk[1]) - 1.0 / (w * w);
        let s = (1.0 / (u * u) + 1.0 / (w * w)) / (jp + kp);
        let mut mode = Self {
            spec,
            diameter,
            media,
            n_eff,
            beta,
            h,
            q,
            s,
            residual,
            amplitude_sq: 0.0,
        };
        let unit = mode.unit_amplitude_power();
        mode.amplitude_sq = if spec.power > 0.0 { spec.power / unit } else { 0.0 };
        mode
    }

    pub fn spec(&self) -> &ModeSpec {
        &self.spec
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn radius(&self) -> f64 {
        self.diameter / 2.0
    }

    pub fn media(&self) -> StepIndex {
        self.media
    }

    pub fn effective_index(&self) -> f64 {
        self.n_eff
    }

    pub fn propagation_constant(&self) -> f64 {
        self.beta
    }

    /// Transverse decay constant outside the core, 1/m.
    pub fn decay_constant(&self) -> f64 {
        self.q
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// The same mode shape carrying a different power.
    pub fn with_power(&self, power: f64) -> Self {
        let unit = self.unit_amplitude_power();
        let mut out = self.clone();
        out.spec.power = power;
        out.amplitude_sq = if power > 0.0 { power / unit } else { 0.0 };
        out
    }

    /// The same mode with its polarization axis rotated to `angle`.
    pub fn with_polarization(&self, angle: f64) -> Self {
        let mut out = self.clone();
        out.spec.polarization_angle = angle;
        out
    }

    fn omega_eps0(&self) -> f64 {
        2.0 * PI / self.spec.wavelength * SPEED_OF_LIGHT * VACUUM_PERMITTIVITY
    }

    fn s_core(&self) -> f64 {
        let k = 2.0 * PI / self.spec.wavelength;
        self.beta * self.beta * self.s / (k * k * self.media.core * self.media.core)
    }

    fn s_clad(&self) -> f64 {
        let k = 2.0 * PI / self.spec.wavelength;
        self.beta * self.beta * self.s / (k * k * self.media.cladding * self.media.cladding)
    }

    /// Power carried with `|A| = 1`, from the closed-form Bessel integrals.
    fn unit_amplitude_power(&self) -> f64 {
        let a = self.radius();
        let (u, w) = (self.h * a, self.q * a);
        let j = bessel_j0123(u);
        let kk = bessel_k0123(w);
        let s = self.s;
        let (s1, s2) = (self.s_core(), self.s_clad());
        let (n1, n2) = (self.media.core, self.media.cladding);
        let oe = self.omega_eps0();
        let inner = PI * a * a * oe * n1 * n1 * self.beta / (4.0 * self.h * self.h)
            * ((1.0 - s) * (1.0 - s1) * (j[0] * j[0] + j[1] * j[1])
                + (1.0 + s) * (1.0 + s1) * (j[2] * j[2] - j[1] * j[3]));
        let c = j[1] / kk[1];
        let outer = PI * a * a * oe * n2 * n2 * self.beta / (4.0 * self.q * self.q)
            * c
            * c
            * ((1.0 - s) * (1.0 - s2) * (kk[1] * kk[1] - kk[0] * kk[0])
                + (1.0 + s) * (1.0 + s2) * (kk[1] * kk[3] - kk[2] * kk[2]));
        inner + outer
    }

    /// Unit-amplitude circular-mode profiles at radius `r`.
    pub fn radial_profile(&self, r: f64) -> RadialProfile {
        let a = self.radius();
        let s = self.s;
        let oe = self.omega_eps0();
        if r < a {
            let x = self.h * r;
            let j = bessel_j0123(x);
            let s1 = self.s_core();
            let n1sq = self.media.core * self.media.core;
            let ge = self.beta / (2.0 * self.h);
            let gh = oe * n1sq / (2.0 * self.h);
            RadialProfile {
                e_r: ge * ((1.0 - s) * j[0] - (1.0 + s) * j[2]),
                e_phi: ge * ((1.0 - s) * j[0] + (1.0 + s) * j[2]),
                e_z: j[1],
                h_r: gh * ((1.0 - s1) * j[0] + (1.0 + s1) * j[2]),
                h_phi: gh * ((1.0 - s1) * j[0] - (1.0 + s1) * j[2]),
            }
        } else {
            let w = self.q * a;
            let c = bessel_j0123(self.h * a)[1] / bessel_k0123(w)[1];
            let kk = bessel_k0123(self.q * r);
            let s2 = self.s_clad();
            let n2sq = self.media.cladding * self.media.cladding;
            let ge = c * self.beta / (2.0 * self.q);
            let gh = c * oe * n2sq / (2.0 * self.q);
            RadialProfile {
                e_r: ge * ((1.0 - s) * kk[0] + (1.0 + s) * kk[2]),
                e_phi: ge * ((1.0 - s) * kk[0] - (1.0 + s) * kk[2]),
                e_z: c * kk[1],
                h_r: gh * ((1.0 - s2) * kk[0] - (1.0 + s2) * kk[2]),
                h_phi: gh * ((1.0 - s2) * kk[0] + (1.0 + s2) * kk[2]),
            }
        }
    }

    /// Azimuth of the polarization axis, measured from the x axis.
    fn polarization_axis(&self) -> f64 {
        PI / 2.0 + self.spec.polarization_angle
    }

    /// |E|^2 in (V/m)^2 at polar position `(r, phi)`.
    pub fn field_sq_polar(&self, r: f64, phi: f64) -> f64 {
        if self.amplitude_sq == 0.0 {
            return 0.0;
        }
        let p = self.radial_profile(r);
        let (sn, cs) = (phi - self.polarization_axis()).sin_cos();
        2.0 * self.amplitude_sq
            * ((p.e_r * p.e_r + p.e_z * p.e_z) * cs * cs + p.e_phi * p.e_phi * sn * sn)
    }

    /// |E|^2 in (V/m)^2 at Cartesian `(x, y)`.
    pub fn field_sq(&self, x: f64, y: f64) -> f64 {
        self.field_sq_polar(x.hypot(y), y.atan2(x))
    }

    /// Time-averaged intensity `(n c eps0 / 2)|E|^2` in W/m^2, with `n` the
    /// local medium index.
    pub fn intensity_polar(&self, r: f64, phi: f64) -> f64 {
        let n = if r < self.radius() {
            self.media.core
        } else {
            self.media.cladding
        };
        0.5 * n * SPEED_OF_LIGHT * VACUUM_PERMITTIVITY * self.field_sq_polar(r, phi)
    }

    /// Intensity at `radial_offset` outside the surface, azimuth `phi`.
    pub fn surface_intensity(&self, radial_offset: f64, phi: f64) -> Result<f64> {
        if !(radial_offset >= 0.0) {
            return Err(invalid(format!("radial offset {radial_offset} must be >= 0")));
        }
        Ok(self.intensity_polar(self.radius() + radial_offset, phi))
    }

    /// Intensity at the "top" of the fiber (x = 0, y = a + offset).
    pub fn top_intensity(&self, radial_offset: f64) -> Result<f64> {
        self.surface_intensity(radial_offset, PI / 2.0)
    }

    /// z component of the time-averaged Poynting vector, W/m^2.
    pub fn poynting_z_polar(&self, r: f64, phi: f64) -> f64 {
        let p = self.radial_profile(r);
        let (sn, cs) = (phi - self.polarization_axis()).sin_cos();
        self.amplitude_sq * (p.e_r * p.h_phi * cs * cs + p.e_phi * p.h_r * sn * sn)
    }

    /// CSV grid `x_m,y_m,field_sq` over a square of half-width `half_width`.
    pub fn profile_csv(&self, half_width: f64, points: usize) -> String {
        let mut out = String::from("x_m,y_m,field_sq_V2_per_m2\n");
        let n = points.max(2);
        for iy in 0..n {
            let y = -half_width + 2.0 * half_width * iy as f64 / (n - 1) as f64;
            for ix in 0..n {
                let x = -half_width + 2.0 * half_width * ix as f64 / (n - 1) as f64;
                let _ = writeln!(out, "{x:.6e},{y:.6e},{:.6e}", self.field_sq(x, y));
            }
        }
        out
    }
}

/// Numerically integrates the z Poynting flux over a disc of radius
/// `radius`: composite Simpson in r inside the core, Simpson in log r
/// outside it, and a periodic trapezoid in phi.
pub fn integrate_power(mode: &GuidedMode, radius: f64) -> f64 {
    let a = mode.radius();
    // S_z only carries cos(2 phi) and cos(4 phi) terms, so 8 uniform
    // samples integrate the ring exactly
    let nphi = 8;
    let ring = |r: f64| -> f64 {
        let mut acc = 0.0;
        for i in 0..nphi {
            let phi = 2.0 * PI * i as f64 / nphi as f64;
            acc += mode.poynting_z_polar(r, phi);
        }
        acc * 2.0 * PI / nphi as f64
    };
    let simpson = |g: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize| -> f64 {
        let n = n + n % 2;
        let h = (hi - lo) / n as f64;
        let mut acc = g(lo) + g(hi);
        for i in 1..n {
            let wgt = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += wgt * g(lo + h * i as f64);
        }
        acc * h / 3.0
    };
    let core_end = a.min(radius) * (1.0 - 1e-12);
    let mut total = simpson(&|r| ring(r) * r, 0.0, core_end, 400);
    if radius > a {
        // r = a e^xi, dr = r dxi
        let outer = |xi: f64| {
            let r = a * xi.exp();
            ring(r) * r * r
        };
        total += simpson(&outer, 0.0, (radius / a).ln(), 1000);
    }
    total
}

/// Disc radius holding all but a negligible part of the evanescent tail.
pub fn enclosing_radius(mode: &GuidedMode) -> f64 {
    mode.radius() + 10.0 / mode.decay_constant()
}

/// Intensity correction for a relative rotation between the two modes'
/// polarization axes, evaluated at `(x = 0, y = a + probe_offset)` with
/// equal powers, normalized to the aligned case.
pub fn polarization_correction(
    diameter: f64,
    short_wavelength: f64,
    long_wavelength: f64,
    relative_angle: f64,
    probe_offset: f64,
    media: StepIndex,
) -> Result<f64> {
    if !(0.0..=PI / 2.0 + 1e-12).contains(&relative_angle) {
        return Err(invalid(format!(
            "relative polarization angle {relative_angle} outside [0, pi/2]"
        )));
    }
    let short = solve_he11(
        diameter,
        &ModeSpec::new(short_wavelength, 1e-3, Direction::Forward)?,
        media,
    )?;
    let long = solve_he11(
        diameter,
        &ModeSpec::new(long_wavelength, 1e-3, Direction::Backward)?,
        media,
    )?;
    let long_top = long.top_intensity(probe_offset)?;
    let aligned = short.top_intensity(probe_offset)?;
    let rotated = short.with_polarization(relative_angle).top_intensity(probe_offset)?;
    Ok((long_top + rotated) / (long_top + aligned))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mode(d_nm: f64, l_nm: f64) -> GuidedMode {
        let spec = ModeSpec::new(l_nm * 1e-9, 1e-3, Direction::Forward).unwrap();
        solve_he11(d_nm * 1e-9, &spec, StepIndex::default()).unwrap()
    }

    #[test]
    fn strong_and_weak_confinement_limits() {
        let thick = mode(2000.0, 640.0);
        assert!((thick.effective_index() - 1.45).abs() / 1.45 < 0.02);
        let thin = mode(200.0, 785.0);
        assert!((thin.effective_index() - 1.33).abs() / 1.33 < 0.02);
    }

    #[test]
    fn beta_consistent_with_index() {
        let m = mode(500.0, 640.0);
        let expect = 2.0 * PI * m.effective_index() / 640e-9;
        assert!((m.propagation_constant() - expect).abs() / expect < 1e-12);
        assert!(m.residual().abs() < 1e-10);
    }

    #[test]
    fn tangential_fields_continuous_and_normal_d_continuous() {
        for (d, l) in [(400.0, 640.0), (700.0, 785.0), (1000.0, 660.0)] {
            let m = mode(d, l);
            let a = m.radius();
            let inside = m.radial_profile(a * (1.0 - 1e-12));
            let outside = m.radial_profile(a);
            let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs());
            assert!(rel(inside.e_phi, outside.e_phi) < 1e-8);
            assert!(rel(inside.e_z, outside.e_z) < 1e-8);
            // n1^2 E_r(in) = n2^2 E_r(out) holds only at an eigenvalue.
            let ratio = inside.e_r * 1.45f64.powi(2) / (outside.e_r * 1.33f64.powi(2));
            assert!((ratio - 1.0).abs() < 1e-7, "d={d} l={l} ratio={ratio}");
            assert!(rel(inside.h_phi, outside.h_phi) < 1e-8);
        }
    }

    #[test]
    fn zero_power_gives_zero_intensity() {
        let m = mode(500.0, 640.0).with_power(0.0);
        assert_eq!(m.top_intensity(0.0).unwrap(), 0.0);
    }

    #[test]
    fn intensity_scales_with_power() {
        let m = mode(500.0, 640.0);
        let i1 = m.top_intensity(0.0).unwrap();
        let i3 = m.with_power(3e-3).top_intensity(0.0).unwrap();
        assert!((i3 / i1 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn evanescent_decay_from_surface() {
        for l in [640.0, 660.0, 785.0] {
            for d in [400.0, 600.0, 1000.0] {
                let m = mode(d, l);
                for phi in [0.0, 0.7, PI / 2.0] {
                    let i0 = m.surface_intensity(0.0, phi).unwrap();
                    let i200 = m.surface_intensity(200e-9, phi).unwrap();
                    assert!(i200 < i0);
                }
            }
        }
    }

    #[test]
    fn negative_offset_rejected() {
        assert!(mode(500.0, 640.0).surface_intensity(-1e-9, 0.0).is_err());
    }

    #[test]
    fn out_of_range_inputs_rejected() {
        let spec = ModeSpec::new(640e-9, 1e-3, Direction::Forward).unwrap();
        assert!(solve_he11(100e-9, &spec, StepIndex::default()).is_err());
        assert!(ModeSpec::new(300e-9, 1e-3, Direction::Forward).is_err());
        assert!(ModeSpec::new(640e-9, -1.0, Direction::Forward).is_err());
        assert!(Direction::from_sign(0).is_err());
    }

    #[test]
    fn correction_is_unity_when_aligned() {
        let c = polarization_correction(500e-9, 640e-9, 785e-9, 0.0, 75e-9, StepIndex::default())
            .unwrap();
        assert_eq!(c, 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn index_bounded_and_grows_with_diameter(
            d in 350.0f64..1500.0,
            l in 400.0f64..1000.0,
        ) {
            let thin = mode(d, l);
            let thick = mode(d * 1.05, l);
            prop_assert!(thin.effective_index() > 1.33 && thin.effective_index() < 1.45);
            prop_assert!(thick.effective_index() > thin.effective_index());
        }

        #[test]
        fn surface_intensity_decays_and_is_linear_in_power(
            d in 350.0f64..1500.0,
            l in 400.0f64..1000.0,
            phi in 0.0f64..(2.0 * PI),
            p in 1e-4f64..1e-2,
        ) {
            let m = mode(d, l);
            let i0 = m.surface_intensity(0.0, phi).unwrap();
            let i1 = m.surface_intensity(50e-9, phi).unwrap();
            prop_assert!(i0 > 0.0 && i1 < i0);
            let scaled = m.with_power(p).surface_intensity(0.0, phi).unwrap();
            prop_assert!((scaled / i0 - p / 1e-3).abs() < 1e-9 * p / 1e-3);
        }
    }

    #[test]
    fn csv_profile_has_header_and_rows() {
        let csv = mode(500.0, 640.0).profile_csv(1e-6, 5);
        assert_eq!(csv.lines().count(), 26);
        assert!(csv.starts_with("x_m,y_m,"));
    }
}
