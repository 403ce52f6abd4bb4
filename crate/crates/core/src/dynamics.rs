//! Brownian motion along the fiber axis and synthetic kymographs.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::BOLTZMANN;
use crate::error::{invalid, Error, Result};
use crate::trap_model::TrapModel;

pub const DEFAULT_DT: f64 = 1e-4;
pub const DEFAULT_FRAME_RATE: f64 = 30.0;
/// Localization spread of a particle image along z.
pub const DEFAULT_PSF_SIGMA: f64 = 23e-6;
pub const DEFAULT_PIXEL_PITCH: f64 = 2e-6;

/// Axial force as a function of position, defined on a finite or infinite
/// interval.
pub trait ForceField: Sync {
    /// Force in newtons, or `None` outside the domain.
    fn force(&self, z: f64) -> Option<f64>;

    fn domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// `F = -S (z - center)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic {
    pub stiffness: f64,
    pub center: f64,
}

impl ForceField for Harmonic {
    fn force(&self, z: f64) -> Option<f64> {
        Some(-self.stiffness * (z - self.center))
    }
}

/// Uniform force on an interval, as on the constant-diameter waist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformForce {
    pub force: f64,
    pub domain: (f64, f64),
}

impl ForceField for UniformForce {
    fn force(&self, z: f64) -> Option<f64> {
        (z >= self.domain.0 && z <= self.domain.1).then_some(self.force)
    }

    fn domain(&self) -> (f64, f64) {
        self.domain
    }
}

impl ForceField for TrapModel {
    fn force(&self, z: f64) -> Option<f64> {
        let (lo, hi) = self.z_domain();
        if z < lo || z > hi {
            return None;
        }
        self.net_force(z).ok()
    }

    fn domain(&self) -> (f64, f64) {
        self.z_domain()
    }
}

impl<F: Fn(f64) -> Option<f64> + Sync> ForceField for F {
    fn force(&self, z: f64) -> Option<f64> {
        self(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub particle_id: u32,
    pub samples: Vec<(f64, f64)>,
    /// The particle left the force-field domain and the run was cut short.
    #[serde(default)]
    pub exited: bool,
}

impl Trajectory {
    pub fn new(particle_id: u32, samples: Vec<(f64, f64)>) -> Result<Self> {
        let t = Self {
            particle_id,
            samples,
            exited: false,
        };
        t.validate()?;
        Ok(t)
    }

    /// Times strictly increasing with a uniform step.
    pub fn validate(&self) -> Result<()> {
        if self.samples.iter().any(|(t, z)| !t.is_finite() || !z.is_finite()) {
            return Err(invalid("trajectory samples must be finite"));
        }
        if self.samples.len() < 2 {
            return Ok(());
        }
        let step = self.samples[1].0 - self.samples[0].0;
        if !(step > 0.0) {
            return Err(invalid("trajectory times must be strictly increasing"));
        }
        for w in self.samples.windows(2) {
            let d = w[1].0 - w[0].0;
            if !(d > 0.0) || (d - step).abs() > 1e-9 * step.max(w[1].0.abs()) {
                return Err(invalid("trajectory time step must be uniform"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.0)
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.1)
    }

    pub fn start(&self) -> Option<(f64, f64)> {
        self.samples.first().copied()
    }

    pub fn end(&self) -> Option<(f64, f64)> {
        self.samples.last().copied()
    }

    pub fn duration(&self) -> f64 {
        match (self.start(), self.end()) {
            (Some(a), Some(b)) => b.0 - a.0,
            _ => 0.0,
        }
    }

    /// Linear interpolation of z at time `t`; `None` outside the sampled span.
    pub fn position_at(&self, t: f64) -> Option<f64> {
        let (first, last) = (self.start()?, self.end()?);
        if t < first.0 || t > last.0 {
            return None;
        }
        let i = self.samples.partition_point(|s| s.0 <= t);
        if i == 0 {
            return Some(first.1);
        }
        if i >= self.samples.len() {
            return Some(last.1);
        }
        let (t0, z0) = self.samples[i - 1];
        let (t1, z1) = self.samples[i];
        Some(z0 + (z1 - z0) * (t - t0) / (t1 - t0))
    }

    /// Contiguous sub-range of samples as a new trajectory with the same id.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            particle_id: self.particle_id,
            samples: self.samples[range].to_vec(),
            exited: false,
        }
    }
}

/// CSV with header `t_s,z_m,particle_id`.
pub fn trajectories_to_csv(trajectories: &[Trajectory]) -> String {
    let mut out = String::from("t_s,z_m,particle_id\n");
    for tr in trajectories {
        for (t, z) in &tr.samples {
            let _ = writeln!(out, "{t},{z},{}", tr.particle_id);
        }
    }
    out
}

pub fn trajectories_from_csv(text: &str) -> Result<Vec<Trajectory>> {
    let mut out: Vec<Trajectory> = Vec::new();
    let mut header_seen = false;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line.replace(' ', "") != "t_s,z_m,particle_id" {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected header `t_s,z_m,particle_id`, found `{line}`"),
                });
            }
            header_seen = true;
            continue;
        }
        let bad = |message: String| Error::Parse {
            line: n + 1,
            message,
        };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(bad(format!("expected 3 columns, found {}", cols.len())));
        }
        let t: f64 = cols[0].parse().map_err(|_| bad(format!("bad time `{}`", cols[0])))?;
        let z: f64 = cols[1].parse().map_err(|_| bad(format!("bad position `{}`", cols[1])))?;
        let id: u32 = cols[2].parse().map_err(|_| bad(format!("bad particle id `{}`", cols[2])))?;
        match out.last_mut() {
            Some(tr) if tr.particle_id == id => tr.samples.push((t, z)),
            _ => out.push(Trajectory {
                particle_id: id,
                samples: vec![(t, z)],
                exited: false,
            }),
        }
    }
    Ok(out)
}

/// Integration settings shared by both Langevin integrators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangevinParams {
    /// Drag coefficient, kg/s.
    pub gamma: f64,
    /// Kelvin; zero switches the noise off.
    pub temperature: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    /// Keep every n-th step in the output (1 keeps all).
    pub record_every: usize,
    pub t_start: f64,
    pub particle_id: u32,
}

impl LangevinParams {
    pub fn new(gamma: f64, temperature: f64, dt: f64, n_steps: usize, seed: u64) -> Self {
        Self {
            gamma,
            temperature,
            dt,
            n_steps,
            seed,
            record_every: 1,
            t_start: 0.0,
            particle_id: 0,
        }
    }

    pub fn record_every(mut self, stride: usize) -> Self {
        self.record_every = stride;
        self
    }

    pub fn starting_at(mut self, t_start: f64) -> Self {
        self.t_start = t_start;
        self
    }

    pub fn with_id(mut self, id: u32) -> Self {
        self.particle_id = id;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("time step {} must be > 0", self.dt)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid(format!("drag coefficient {} must be > 0", self.gamma)));
        }
        if !(self.temperature >= 0.0) {
            return Err(invalid("temperature must be >= 0"));
        }
        if self.record_every == 0 {
            return Err(invalid("record stride must be >= 1"));
        }
        Ok(())
    }

    /// Independent stream per particle so parallel runs stay reproducible.
    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.particle_id as u64);
        rng
    }
}

/// Euler-Maruyama for `gamma dz = F dt + sqrt(2 gamma k_B T) dW`.
pub fn simulate_overdamped<F: ForceField + ?Sized>(
    field: &F,
    params: &LangevinParams,
    z_init: f64,
) -> Result<Trajectory> {
    params.validate()?;
    let mut rng = params.rng();
    let drift = params.dt / params.gamma;
    let kick = (2.0 * BOLTZMANN * params.temperature * params.dt / params.gamma).sqrt();
    let mut z = z_init;
    let mut samples = Vec::with_capacity(params.n_steps / params.record_every + 1);
    samples.push((params.t_start, z));
    let mut exited = field.force(z).is_none();
    if !exited {
        for step in 1..=params.n_steps {
            let Some(f) = field.force(z) else {
                exited = true;
                break;
            };
            z += f * drift;
            if kick > 0.0 {
                let xi: f64 = rng.sample(StandardNormal);
                z += kick * xi;
            }
            let (lo, hi) = field.domain();
            if z < lo || z > hi {
                exited = true;
                break;
            }
            if step % params.record_every == 0 {
                samples.push((params.t_start + step as f64 * params.dt, z));
            }
        }
    }
    Ok(Trajectory {
        particle_id: params.particle_id,
        samples,
        exited,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InertialRun {
    pub trajectory: Trajectory,
    /// Velocity at each recorded sample.
    pub velocities: Vec<f64>,
}

/// Full `m z'' + gamma z' = F + noise`. Each step holds the force at its
/// start value and advances (z, v) with the exact Ornstein-Uhlenbeck
/// propagator for that constant force, so steps longer than m/gamma stay
/// stable and reduce to the overdamped drift.
pub fn simulate_inertial<F: ForceField + ?Sized>(
    field: &F,
    params: &LangevinParams,
    mass: f64,
    z_init: f64,
    v_init: f64,
) -> Result<InertialRun> {
    params.validate()?;
    if !(mass > 0.0) {
        return Err(invalid(format!("mass {mass} must be > 0")));
    }
    let mut rng = params.rng();
    let tau = mass / params.gamma;
    let h = params.dt / tau;
    let e = -(-h).exp_m1(); // 1 - exp(-h)
    let c = 1.0 - e;
    let kt = BOLTZMANN * params.temperature;
    // (z, v) step covariance for a constant force
    let var_v = kt / mass * e * (2.0 - e);
    let pos_shape = if h < 1e-3 {
        h.powi(3) * (2.0 / 3.0 - h / 2.0 + 7.0 * h * h / 30.0)
    } else {
        2.0 * h - 2.0 * e - e * e
    };
    let var_z = kt * tau / params.gamma * pos_shape;
    let cov = kt / params.gamma * e * e;
    let (a11, a21, a22) = if kt > 0.0 {
        let a11 = var_v.sqrt();
        let a21 = cov / a11;
        (a11, a21, (var_z - a21 * a21).max(0.0).sqrt())
    } else {
        (0.0, 0.0, 0.0)
    };
    let relax_len = tau * e;

    let (mut z, mut v) = (z_init, v_init);
    let cap = params.n_steps / params.record_every + 1;
    let mut samples = Vec::with_capacity(cap);
    let mut velocities = Vec::with_capacity(cap);
    samples.push((params.t_start, z));
    velocities.push(v);
    let mut exited = field.force(z).is_none();
    if !exited {
        for step in 1..=params.n_steps {
            let Some(f) = field.force(z) else {
                exited = true;
                break;
            };
            let vt = f / params.gamma;
            let dv = v - vt;
            z += vt * params.dt + dv * relax_len;
            v = vt + dv * c;
            if kt > 0.0 {
                let x1: f64 = rng.sample(StandardNormal);
                let x2: f64 = rng.sample(StandardNormal);
                v += a11 * x1;
                z += a21 * x1 + a22 * x2;
            }
            let (lo, hi) = field.domain();
            if z < lo || z > hi {
                exited = true;
                break;
            }
            if step % params.record_every == 0 {
                samples.push((params.t_start + step as f64 * params.dt, z));
                velocities.push(v);
            }
        }
    }
    Ok(InertialRun {
        trajectory: Trajectory {
            particle_id: params.particle_id,
            samples,
            exited,
        },
        velocities,
    })
}

/// A particle entering the field of view at `time` and position `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub time: f64,
    pub z: f64,
}

/// Runs one overdamped trajectory per injection, in parallel, each ending
/// at `t_end`. Particle ids follow injection order.
pub fn simulate_injections<F: ForceField + ?Sized>(
    field: &F,
    base: &LangevinParams,
    injections: &[Injection],
    t_end: f64,
) -> Result<Vec<Trajectory>> {
    injections
        .par_iter()
        .enumerate()
        .map(|(i, inj)| {
            let steps = ((t_end - inj.time) / base.dt).floor().max(0.0) as usize;
            let p = LangevinParams {
                n_steps: steps,
                t_start: inj.time,
                particle_id: i as u32,
                ..*base
            };
            simulate_overdamped(field, &p, inj.z)
        })
        .collect()
}

/// Frames x pixels image; pixel j sits at `z_origin + j * pixel_pitch`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kymograph {
    frames: usize,
    pixels: usize,
    data: Vec<f64>,
    pub pixel_pitch: f64,
    pub frame_interval: f64,
    pub psf_sigma: f64,
    pub z_origin: f64,
    /// Time of frame 0.
    pub t_origin: f64,
    /// Extra `key value` header pairs carried through the text format.
    pub metadata: Vec<(String, String)>,
}

impl Kymograph {
    pub fn new(
        frames: usize,
        pixels: usize,
        data: Vec<f64>,
        pixel_pitch: f64,
        frame_interval: f64,
        psf_sigma: f64,
        z_origin: f64,
    ) -> Result<Self> {
        if data.len() != frames * pixels {
            return Err(invalid(format!(
                "kymograph data has {} values, expected {frames} x {pixels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("kymograph intensities must be finite and >= 0"));
        }
        if !(pixel_pitch > 0.0 && frame_interval > 0.0 && psf_sigma > 0.0) {
            return Err(invalid("pixel pitch, frame interval and psf sigma must be > 0"));
        }
        Ok(Self {
            frames,
            pixels,
            data,
            pixel_pitch,
            frame_interval,
            psf_sigma,
            z_origin,
            t_origin: 0.0,
            metadata: Vec::new(),
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.pixels..(i + 1) * self.pixels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel_z(&self, j: f64) -> f64 {
        self.z_origin + j * self.pixel_pitch
    }

    pub fn frame_time(&self, i: usize) -> f64 {
        self.t_origin + i as f64 * self.frame_interval
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.metadata.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.metadata.push((key.to_string(), value)),
        }
    }

    /// Text format: `#` comments, `key value` header lines, a `data` line,
    /// then one whitespace-separated row per frame.
    pub fn to_text(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(out, "pixel_pitch_m {}", self.pixel_pitch);
        let _ = writeln!(out, "frame_interval_s {}", self.frame_interval);
        let _ = writeln!(out, "psf_sigma_m {}", self.psf_sigma);
        let _ = writeln!(out, "z_origin_m {}", self.z_origin);
        let _ = writeln!(out, "t_origin_s {}", self.t_origin);
        let _ = writeln!(out, "frames {}", self.frames);
        let _ = writeln!(out, "pixels {}", self.pixels);
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "{k} {v}");
        }
        out.push_str("data\n");
        for i in 0..self.frames {
            let row: Vec<String> = self.frame(i).iter().map(|v| format!("{v:.6e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut header: Vec<(String, String)> = Vec::new();
        let mut lines = text.lines().enumerate();
        let mut data_start = None;
        for (n, raw) in lines.by_ref() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "data" {
                data_start = Some(n + 1);
                break;
            }
            let mut parts = line.splitn(2, char::is_whitespace);
            let key = parts.next().unwrap_or_default().to_string();
            let value = parts.next().map(str::trim).unwrap_or_default().to_string();
            if value.is_empty() {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("header key `{key}` has no value"),
                });
            }
            header.push((key, value));
        }
        if data_start.is_none() {
            return Err(Error::Parse {
                line: text.lines().count().max(1),
                message: "missing `data` line".into(),
            });
        }
        let take = |key: &str| -> Result<String> {
            header
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Parse {
                    line: 0,
                    message: format!("missing header key `{key}`"),
                })
        };
        let num = |key: &str| -> Result<f64> {
            take(key)?.parse().map_err(|_| Error::Parse {
                line: 0,
                message: format!("header key `{key}` is not a number"),
            })
        };
        let frames = num("frames")? as usize;
        let pixels = num("pixels")? as usize;
        let mut data = Vec::with_capacity(frames * pixels);
        let mut rows = 0;
        for (n, raw) in lines {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|_| Error::Parse {
                    line: n + 1,
                    message: format!("bad intensity `{tok}`"),
                })?);
            }
            if data.len() - before != pixels {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("row has {} values, expected {pixels}", data.len() - before),
                });
            }
            rows += 1;
        }
        if rows != frames {
            return Err(invalid(format!("kymograph has {rows} rows, header says {frames}")));
        }
        let mut k = Self::new(
            frames,
            pixels,
            data,
            num("pixel_pitch_m")?,
            num("frame_interval_s")?,
            num("psf_sigma_m")?,
            num("z_origin_m")?,
        )?;
        k.t_origin = num("t_origin_s").unwrap_or(0.0);
        const KNOWN: [&str; 7] = [
            "pixel_pitch_m",
            "frame_interval_s",
            "psf_sigma_m",
            "z_origin_m",
            "t_origin_s",
            "frames",
            "pixels",
        ];
        k.metadata = header
            .into_iter()
            .filter(|(key, _)| !KNOWN.contains(&key.as_str()))
            .collect();
        Ok(k)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Binary 16-bit PGM, frames as rows, scaled so the maximum maps to 65535.
    pub fn to_pgm(&self) -> Vec<u8> {
        let max = self.data.iter().cloned().fold(0.0, f64::max);
        let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
        let mut out = format!("P5\n{} {}\n65535\n", self.pixels, self.frames).into_bytes();
        out.reserve(self.data.len() * 2);
        for v in &self.data {
            let q = (v * scale).round().clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_pgm())?;
        Ok(())
    }
}

/// Camera and scene settings for `render_kymograph`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub frames: usize,
    pub pixels: usize,
    pub pixel_pitch: f64,
    pub frame_interval: f64,
    pub psf_sigma: f64,
    pub z_origin: f64,
    pub t_origin: f64,
    /// Peak height of one particle image.
    pub intensity_per_particle: f64,
    /// Standard deviation of the background before clipping at zero.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl RenderSpec {
    /// Field of view `[z_min, z_max]` for `duration` seconds at the default
    /// camera settings.
    pub fn covering(z_min: f64, z_max: f64, duration: f64) -> Self {
        let pixels = ((z_max - z_min) / DEFAULT_PIXEL_PITCH).ceil() as usize + 1;
        let frame_interval = 1.0 / DEFAULT_FRAME_RATE;
        Self {
            frames: (duration / frame_interval).floor() as usize + 1,
            pixels,
            pixel_pitch: DEFAULT_PIXEL_PITCH,
            frame_interval,
            psf_sigma: DEFAULT_PSF_SIGMA,
            z_origin: z_min,
            t_origin: 0.0,
            intensity_per_particle: 1.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Sum of Gaussian particle images plus clipped Gaussian background noise.
pub fn render_kymograph(trajectories: &[Trajectory], spec: &RenderSpec) -> Result<Kymograph> {
    if spec.frames == 0 || spec.pixels == 0 {
        return Err(invalid("kymograph needs at least one frame and one pixel"));
    }
    if !(spec.noise_sigma >= 0.0 && spec.intensity_per_particle >= 0.0) {
        return Err(invalid("noise sigma and particle intensity must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = vec![0.0; spec.frames * spec.pixels];
    let inv2s2 = 1.0 / (2.0 * spec.psf_sigma * spec.psf_sigma);
    let reach = (6.0 * spec.psf_sigma / spec.pixel_pitch).ceil() as i64;
    for (i, row) in data.chunks_mut(spec.pixels).enumerate() {
        let t = spec.t_origin + i as f64 * spec.frame_interval;
        for tr in trajectories {
            let Some(z) = tr.position_at(t) else { continue };
            let centre = (z - spec.z_origin) / spec.pixel_pitch;
            let lo = (centre.floor() as i64 - reach).max(0);
            let hi = (centre.ceil() as i64 + reach).min(spec.pixels as i64 - 1);
            for j in lo..=hi {
                let dz = spec.z_origin + j as f64 * spec.pixel_pitch - z;
                row[j as usize] += spec.intensity_per_particle * (-dz * dz * inv2s2).exp();
            }
        }
        if spec.noise_sigma > 0.0 {
            for v in row.iter_mut() {
                let xi: f64 = rng.sample(StandardNormal);
                *v += (spec.noise_sigma * xi).max(0.0);
            }
        }
    }
    let mut k = Kymograph::new(
        spec.frames,
        spec.pixels,
        data,
        spec.pixel_pitch,
        spec.frame_interval,
        spec.psf_sigma,
        spec.z_origin,
    )?;
    k.t_origin = spec.t_origin;
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn harmonic() -> Harmonic {
        Harmonic {
            stiffness: 3e-9,
            center: 0.0,
        }
    }

    #[test]
    fn noise_free_relaxation_is_exponential() {
        let (s, g) = (3e-9, 1.3e-8);
        let tau = g / s;
        let dt = 1e-3 * tau;
        let n = 3000;
        let tr = simulate_overdamped(&harmonic(), &LangevinParams::new(g, 0.0, dt, n, 1), 100e-6).unwrap();
        let (t, z) = tr.end().unwrap();
        let exact = 100e-6 * (-t / tau).exp();
        assert!((z - exact).abs() < 0.01 * exact);
        assert_eq!(tr.len(), n + 1);
        tr.validate().unwrap();
    }

    #[test]
    fn zero_force_without_noise_stays_put() {
        let tr = simulate_overdamped(&|_z: f64| Some(0.0), &LangevinParams::new(1e-8, 0.0, 1e-3, 100, 0), 5e-6).unwrap();
        assert!(tr.positions().all(|z| z == 5e-6));
    }

    #[test]
    fn same_seed_same_path() {
        let p = LangevinParams::new(1.3e-8, 293.0, 1e-3, 500, 42);
        let a = simulate_overdamped(&harmonic(), &p, 0.0).unwrap();
        let b = simulate_overdamped(&harmonic(), &p, 0.0).unwrap();
        assert_eq!(a, b);
        let c = simulate_overdamped(&harmonic(), &LangevinParams { seed: 43, ..p }, 0.0).unwrap();
        assert_ne!(a, c);
        let d = simulate_overdamped(&harmonic(), &p.with_id(1), 0.0).unwrap();
        assert_ne!(a.samples, d.samples);
    }

    #[test]
    fn leaving_the_domain_truncates() {
        let field = UniformForce {
            force: 1e-12,
            domain: (0.0, 10e-6),
        };
        let tr = simulate_overdamped(&field, &LangevinParams::new(1e-8, 0.0, 1e-3, 1000, 0), 0.0).unwrap();
        assert!(tr.exited);
        // 100 um/s drift leaves a 10 um window after ~100 steps
        assert!(tr.len() > 90 && tr.len() < 110, "{}", tr.len());
    }

    #[test]
    fn rejects_bad_params() {
        let h = harmonic();
        assert!(simulate_overdamped(&h, &LangevinParams::new(1e-8, 0.0, 0.0, 10, 0), 0.0).is_err());
        assert!(simulate_overdamped(&h, &LangevinParams::new(0.0, 0.0, 1e-3, 10, 0), 0.0).is_err());
        assert!(simulate_inertial(&h, &LangevinParams::new(1e-8, 0.0, 1e-3, 10, 0), 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn free_velocity_decays_at_gamma_over_m() {
        let (m, g) = (2.0, 4.0);
        let p = LangevinParams::new(g, 0.0, 0.01, 100, 0);
        let run = simulate_inertial(&|_z: f64| Some(0.0), &p, m, 0.0, 1.0).unwrap();
        for ((t, _), v) in run.trajectory.samples.iter().zip(&run.velocities) {
            assert!((v - (-g / m * t).exp()).abs() < 1e-12);
        }
        let (t, z) = run.trajectory.end().unwrap();
        assert!((z - m / g * (1.0 - (-g / m * t).exp())).abs() < 1e-12);
    }

    fn overshoots(gamma: f64) -> bool {
        let field = Harmonic {
            stiffness: 1.0,
            center: 0.0,
        };
        let p = LangevinParams::new(gamma, 0.0, 1e-3, 40_000, 0);
        let run = simulate_inertial(&field, &p, 1.0, 1.0, 0.0).unwrap();
        let crossed = run.trajectory.positions().any(|z| z < -1e-9);
        crossed
    }

    #[test]
    fn oscillation_switches_at_critical_damping() {
        // gamma^2 = 4 S m at gamma = 2
        assert!(overshoots(1.8));
        assert!(!overshoots(2.2));
    }

    #[test]
    fn inertial_matches_overdamped_when_heavily_damped() {
        let field = harmonic();
        let g = 1.4137e-9;
        let m = 3.41e-17;
        let tau = g / field.stiffness;
        let p = LangevinParams::new(g, 0.0, tau / 1000.0, 5000, 0);
        let a = simulate_overdamped(&field, &p, 50e-6).unwrap();
        let b = simulate_inertial(&field, &p, m, 50e-6, 0.0).unwrap().trajectory;
        let worst = a
            .positions()
            .zip(b.positions())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.01 * 50e-6, "{worst}");
    }

    #[test]
    fn inertial_thermal_variance() {
        // stationary <z^2> = kT/S regardless of mass
        let field = Harmonic {
            stiffness: 1e-6,
            center: 0.0,
        };
        let (g, m) = (1e-8, 1e-12);
        let mut acc = 0.0;
        let mut n = 0.0;
        for seed in 0..8 {
            let p = LangevinParams::new(g, 293.0, 2e-4, 200_000, seed).record_every(10);
            let tr = simulate_inertial(&field, &p, m, 0.0, 0.0).unwrap().trajectory;
            for z in tr.positions().skip(1000) {
                acc += z * z;
                n += 1.0;
            }
        }
        let expect = BOLTZMANN * 293.0 / 1e-6;
        assert!((acc / n / expect - 1.0).abs() < 0.1, "{}", acc / n / expect);
    }

    #[test]
    fn csv_round_trip() {
        let a = Trajectory::new(0, vec![(0.0, 1e-6), (0.1, 2e-6)]).unwrap();
        let b = Trajectory::new(3, vec![(0.5, -1e-6), (0.6, 0.0), (0.7, 3.5e-7)]).unwrap();
        let text = trajectories_to_csv(&[a.clone(), b.clone()]);
        assert!(text.starts_with("t_s,z_m,particle_id\n"));
        assert_eq!(trajectories_from_csv(&text).unwrap(), vec![a, b]);
        assert!(trajectories_from_csv("x,y\n").is_err());
    }

    #[test]
    fn non_uniform_times_rejected() {
        assert!(Trajectory::new(0, vec![(0.0, 0.0), (0.1, 0.0), (0.3, 0.0)]).is_err());
        assert!(Trajectory::new(0, vec![(0.0, 0.0), (0.0, 0.0)]).is_err());
    }

    fn static_spec() -> RenderSpec {
        RenderSpec {
            frames: 5,
            pixels: 200,
            pixel_pitch: 2e-6,
            frame_interval: 0.1,
            psf_sigma: 10e-6,
            z_origin: 0.0,
            t_origin: 0.0,
            intensity_per_particle: 1.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn static_particle_renders_identical_frames() {
        let tr = Trajectory::new(0, (0..10).map(|i| (i as f64 * 0.1, 150e-6)).collect()).unwrap();
        let k = render_kymograph(&[tr], &static_spec()).unwrap();
        for i in 1..k.frames() {
            assert_eq!(k.frame(i), k.frame(0));
        }
        let peak = k
            .frame(0)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, 75);
    }

    #[test]
    fn two_particles_two_maxima() {
        let a = Trajectory::new(0, vec![(0.0, 80e-6), (1.0, 80e-6)]).unwrap();
        let b = Trajectory::new(1, vec![(0.0, 300e-6), (1.0, 300e-6)]).unwrap();
        let k = render_kymograph(&[a, b], &static_spec()).unwrap();
        let f = k.frame(2);
        let maxima = (1..f.len() - 1).filter(|&j| f[j] > f[j - 1] && f[j] >= f[j + 1]).count();
        assert_eq!(maxima, 2);
    }

    #[test]
    fn kymograph_text_round_trip() {
        let tr = Trajectory::new(0, vec![(0.0, 50e-6), (1.0, 250e-6)]).unwrap();
        let spec = RenderSpec {
            noise_sigma: 0.05,
            seed: 9,
            ..static_spec()
        };
        let mut k = render_kymograph(&[tr], &spec).unwrap();
        k.set_meta("power_ratio", "0.2");
        let text = k.to_text(&["made in a test".into()]);
        let back = Kymograph::from_text(&text).unwrap();
        assert_eq!(back.frames(), 5);
        assert_eq!(back.meta("power_ratio"), Some("0.2"));
        for (a, b) in back.data().iter().zip(k.data()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12));
        }
        assert!(Kymograph::from_text("frames 1\npixels 2\ndata\n1 2\n").is_err());
        let pgm = k.to_pgm();
        assert!(pgm.starts_with(b"P5\n200 5\n65535\n"));
        assert_eq!(pgm.len(), "P5\n200 5\n65535\n".len() + 2 * 1000);
    }

    #[test]
    fn rendering_is_seeded() {
        let spec = RenderSpec {
            noise_sigma: 0.1,
            seed: 5,
            ..static_spec()
        };
        let a = render_kymograph(&[], &spec).unwrap();
        let b = render_kymograph(&[], &spec).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| v >= 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn relaxation_never_overshoots(a in 1e-6f64..200e-6, s in 1e-10f64..1e-8) {
            let g = 1.4e-9;
            let f = Harmonic { stiffness: s, center: 0.0 };
            let dt = 1e-2 * g / s;
            let tr = simulate_overdamped(&f, &LangevinParams::new(g, 0.0, dt, 800, 0), a).unwrap();
            let z: Vec<f64> = tr.positions().collect();
            prop_assert!(z.windows(2).all(|w| w[1] <= w[0] && w[1] > 0.0));
        }
    }
}
