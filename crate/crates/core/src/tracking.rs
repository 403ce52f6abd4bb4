//! Kymograph analysis: per-frame peak finding, greedy track linking,
//! horizontal-line trap detection, relaxation and velocity fits, and the
//! derived drag and stiffness.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Kymograph, Trajectory};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakParams {
    /// Fraction of the frame maximum a peak must reach.
    pub threshold_rel: f64,
    /// Absolute floor applied on top of the relative threshold.
    pub threshold_abs: f64,
    /// Peaks closer than this (pixels) are merged, keeping the brighter.
    pub min_separation_px: f64,
    /// Gaussian pre-smoothing width in pixels; 0 disables it.
    pub smoothing_px: f64,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self {
            threshold_rel: 0.3,
            threshold_abs: 0.0,
            min_separation_px: 3.0,
            smoothing_px: 0.0,
        }
    }
}

fn smooth(frame: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return frame.to_vec();
    }
    let reach = (4.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-reach..=reach)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let n = frame.len() as isize;
    (0..n)
        .map(|i| {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (k, w) in (-reach..=reach).zip(&kernel) {
                let j = i + k;
                if (0..n).contains(&j) {
                    acc += w * frame[j as usize];
                    norm += w;
                }
            }
            acc / norm
        })
        .collect()
}

/// Sub-pixel positions (in pixels, ascending) of local maxima above the
/// threshold, refined by a three-point parabola.
pub fn detect_peaks(frame: &[f64], params: &PeakParams) -> Result<Vec<f64>> {
    if frame.is_empty() {
        return Err(invalid("cannot detect peaks in an empty frame"));
    }
    let s = smooth(frame, params.smoothing_px);
    let max = s.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(Vec::new());
    }
    let threshold = (params.threshold_rel * max).max(params.threshold_abs);
    // parabola samples spaced with the smoothing width, so the vertex
    // uses the curvature of the smoothed peak rather than pixel noise
    let h = (params.smoothing_px.round() as usize).max(1);
    let mut found: Vec<(f64, f64)> = Vec::new();
    for j in 1..s.len().saturating_sub(1) {
        let c = s[j];
        if !(c > s[j - 1] && c >= s[j + 1] && c >= threshold && c > 0.0) {
            continue;
        }
        let h = h.min(j).min(s.len() - 1 - j);
        let (l, r) = (s[j - h], s[j + h]);
        let curv = l - 2.0 * c + r;
        let shift = if curv < 0.0 {
            (h as f64 * 0.5 * (l - r) / curv).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        found.push((j as f64 + shift, c));
    }
    found.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut kept: Vec<(f64, f64)> = Vec::new();
    for p in found {
        if kept.iter().all(|k| (k.0 - p.0).abs() >= params.min_separation_px) {
            kept.push(p);
        }
    }
    let mut out: Vec<f64> = kept.into_iter().map(|p| p.0).collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Largest displacement per elapsed frame, meters.
    pub max_jump: f64,
    /// Tracks with fewer samples are discarded.
    pub min_length: usize,
    /// Missing frames a track may skip and still be continued.
    pub max_gap: usize,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            max_jump: 50e-6,
            min_length: 10,
            max_gap: 2,
        }
    }
}

/// Greedy nearest-neighbour linking of per-frame positions (meters).
/// Skipped frames inside a track are filled by linear interpolation so
/// every returned trajectory has a uniform time step.
pub fn link_trajectories(
    peaks_per_frame: &[Vec<f64>],
    frame_interval: f64,
    t_origin: f64,
    params: &LinkParams,
) -> Result<Vec<Trajectory>> {
    if !(frame_interval > 0.0 && params.max_jump > 0.0) {
        return Err(invalid("frame interval and max jump must be > 0"));
    }
    struct Track {
        points: Vec<(usize, f64)>,
    }
    let mut open: Vec<Track> = Vec::new();
    let mut closed: Vec<Track> = Vec::new();
    for (f, peaks) in peaks_per_frame.iter().enumerate() {
        // retire tracks that have been silent too long
        let mut i = 0;
        while i < open.len() {
            let last = open[i].points.last().unwrap().0;
            if f - last > params.max_gap + 1 {
                closed.push(open.swap_remove(i));
            } else {
                i += 1;
            }
        }
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, tr) in open.iter().enumerate() {
            let (lf, lz) = *tr.points.last().unwrap();
            let reach = params.max_jump * (f - lf) as f64;
            for (pi, &z) in peaks.iter().enumerate() {
                let d = (z - lz).abs();
                if d <= reach {
                    pairs.push((d, ti, pi));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_used = vec![false; open.len()];
        let mut peak_used = vec![false; peaks.len()];
        for (_, ti, pi) in pairs {
            if !track_used[ti] && !peak_used[pi] {
                track_used[ti] = true;
                peak_used[pi] = true;
                open[ti].points.push((f, peaks[pi]));
            }
        }
        for (pi, &z) in peaks.iter().enumerate() {
            if !peak_used[pi] {
                open.push(Track { points: vec![(f, z)] });
            }
        }
    }
    closed.append(&mut open);
    closed.sort_by_key(|t| (t.points[0].0, (t.points[0].1 * 1e12) as i64));
    let mut out = Vec::new();
    for tr in closed {
        let mut samples = Vec::new();
        for w in tr.points.windows(2) {
            let ((f0, z0), (f1, z1)) = (w[0], w[1]);
            for k in f0..f1 {
                let frac = (k - f0) as f64 / (f1 - f0) as f64;
                samples.push((t_origin + k as f64 * frame_interval, z0 + frac * (z1 - z0)));
            }
        }
        let (fl, zl) = *tr.points.last().unwrap();
        samples.push((t_origin + fl as f64 * frame_interval, zl));
        if samples.len() >= params.min_length {
            out.push(Trajectory {
                particle_id: out.len() as u32,
                samples,
                exited: false,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapLineParams {
    /// Localization spread; the band is +/- 2 delta.
    pub delta: f64,
    pub scan_step: f64,
    /// Occupied time a line needs before it counts as a trap.
    pub min_dwell: f64,
    pub frame_interval: f64,
}

impl TrapLineParams {
    pub fn new(delta: f64, frame_interval: f64) -> Self {
        Self {
            delta,
            scan_step: 1e-6,
            min_dwell: 2.0,
            frame_interval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapLine {
    /// Mean z of the member points.
    pub position: f64,
    pub members: Vec<(f64, f64)>,
    /// Distinct member frames times the frame interval.
    pub dwell: f64,
}

/// Hough-like scan of horizontal lines z = const over a (t, z) point set.
pub fn detect_trap_line(points: &[(f64, f64)], params: &TrapLineParams) -> Result<Option<TrapLine>> {
    if !(params.delta > 0.0 && params.scan_step > 0.0 && params.frame_interval > 0.0) {
        return Err(invalid("delta, scan step and frame interval must be > 0"));
    }
    if points.is_empty() {
        return Ok(None);
    }
    let mut zs: Vec<f64> = points.iter().map(|p| p.1).collect();
    zs.sort_by(f64::total_cmp);
    let band = 2.0 * params.delta;
    let (lo, hi) = (zs[0], zs[zs.len() - 1]);
    let steps = ((hi - lo) / params.scan_step).ceil() as usize;
    let mut best = (0usize, lo);
    for k in 0..=steps {
        let line = lo + k as f64 * params.scan_step;
        let a = zs.partition_point(|&z| z < line - band);
        let b = zs.partition_point(|&z| z <= line + band);
        if b - a > best.0 {
            best = (b - a, line);
        }
    }
    let line = best.1;
    let members: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|p| (p.1 - line).abs() <= band)
        .collect();
    let mut frames: Vec<i64> = members
        .iter()
        .map(|p| (p.0 / params.frame_interval).round() as i64)
        .collect();
    frames.sort_unstable();
    frames.dedup();
    let dwell = frames.len() as f64 * params.frame_interval;
    if dwell < params.min_dwell {
        return Ok(None);
    }
    let position = members.iter().map(|p| p.1).sum::<f64>() / members.len() as f64;
    Ok(Some(TrapLine {
        position,
        members,
        dwell,
    }))
}

/// Least-squares fit of `z = A exp(-lambda (t - t_start)) + z0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxationFit {
    pub amplitude: f64,
    pub lambda_plus: f64,
    pub z0: f64,
    /// Root-mean-square residual, meters.
    pub residual: f64,
    /// Standard errors of (A, lambda, z0).
    pub stderr: [f64; 3],
    pub converged: bool,
    pub iterations: usize,
    pub t_start: f64,
}

impl RelaxationFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (-self.lambda_plus * (t - self.t_start)).exp() + self.z0
    }
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut a = [[0.0; 4]; 3];
    for i in 0..3 {
        a[i][..3].copy_from_slice(&m[i]);
        a[i][3] = b[i];
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = a[r][col] / a[col][col];
                let pivot = a[col];
                for (v, p) in a[r].iter_mut().zip(pivot).skip(col) {
                    *v -= f * p;
                }
            }
        }
    }
    Some([a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]])
}

fn invert3(m: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let mut inv = [[0.0; 3]; 3];
    for k in 0..3 {
        let mut e = [0.0; 3];
        e[k] = 1.0;
        let col = solve3(m, e)?;
        for i in 0..3 {
            inv[i][k] = col[i];
        }
    }
    Some(inv)
}

/// Levenberg-Marquardt fit of the exponential relaxation law.
pub fn fit_relaxation(trajectory: &Trajectory) -> Result<RelaxationFit> {
    let n = trajectory.len();
    if n < 10 {
        return Err(Error::InsufficientData(format!(
            "relaxation fit needs at least 10 samples, got {n}"
        )));
    }
    let t0 = trajectory.samples[0].0;
    let tau: Vec<f64> = trajectory.times().map(|t| t - t0).collect();
    // centred data keep the fit independent of the absolute z origin
    let centre = trajectory.positions().sum::<f64>() / n as f64;
    let z: Vec<f64> = trajectory.positions().map(|v| v - centre).collect();
    let span = tau[n - 1];
    let zmin = z.iter().cloned().fold(f64::INFINITY, f64::min);
    let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let zscale = (zmax - zmin).max(1e-300);

    // initial guess from the tail mean and a log-linear fit
    let q = (3 * n) / 4;
    let z0 = z[q..].iter().sum::<f64>() / (n - q) as f64;
    let a = z[0] - z0;
    let mut lambda = 3.0 / span;
    let pts: Vec<(f64, f64)> = tau
        .iter()
        .zip(&z)
        .filter(|(_, &zi)| (zi - z0) * a.signum() > 0.1 * a.abs())
        .map(|(&t, &zi)| (t, ((zi - z0).abs()).ln()))
        .collect();
    if pts.len() >= 3 {
        let m = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let ml = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        if sxx > 0.0 && sxy < 0.0 {
            lambda = -sxy / sxx;
        }
    }
    let mut p = [a, lambda, z0];

    let ssr = |p: &[f64; 3]| -> f64 {
        tau.iter()
            .zip(&z)
            .map(|(&t, &zi)| (p[0] * (-p[1] * t).exp() + p[2] - zi).powi(2))
            .sum()
    };
    let normal = |p: &[f64; 3]| -> ([[f64; 3]; 3], [f64; 3]) {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (&t, &zi) in tau.iter().zip(&z) {
            let e = (-p[1] * t).exp();
            let j = [e, -p[0] * t * e, 1.0];
            let r = zi - (p[0] * e + p[2]);
            for i in 0..3 {
                jtr[i] += j[i] * r;
                for k in 0..3 {
                    jtj[i][k] += j[i] * j[k];
                }
            }
        }
        (jtj, jtr)
    };

    let floor = 1e-28 * n as f64 * zscale * zscale;
    let mut cost = ssr(&p);
    let mut mu = 1e-3;
    let mut converged = cost <= floor;
    let mut iterations = 0;
    while !converged && iterations < 200 {
        iterations += 1;
        let (jtj, jtr) = normal(&p);
        let mut accepted = false;
        while mu < 1e16 {
            let mut m = jtj;
            for (i, row) in m.iter_mut().enumerate() {
                row[i] += mu * jtj[i][i].max(1e-300);
            }
            let Some(d) = solve3(m, jtr) else {
                mu *= 10.0;
                continue;
            };
            let trial = [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
            let c = ssr(&trial);
            if c.is_finite() && c <= cost {
                let small = d[0].abs() <= 1e-9 * p[0].abs().max(1e-3 * zscale)
                    && d[1].abs() <= 1e-9 * p[1].abs().max(1e-300)
                    && d[2].abs() <= 1e-9 * zscale;
                p = trial;
                cost = c;
                mu = (mu / 10.0).max(1e-12);
                accepted = true;
                converged = small || cost <= floor;
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            // no downhill step at any damping: a stationary point
            converged = true;
            break;
        }
    }

    let dof = (n - 3) as f64;
    let (jtj, _) = normal(&p);
    let s2 = cost / dof;
    let stderr = invert3(jtj)
        .map(|c| [(c[0][0] * s2).sqrt(), (c[1][1] * s2).sqrt(), (c[2][2] * s2).sqrt()])
        .unwrap_or([f64::NAN; 3]);
    Ok(RelaxationFit {
        amplitude: p[0],
        lambda_plus: p[1],
        z0: p[2] + centre,
        residual: (cost / n as f64).sqrt(),
        stderr,
        converged: converged && p.iter().all(|v| v.is_finite()),
        iterations,
        t_start: t0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityFit {
    /// Signed slope dz/dt, m/s.
    pub velocity: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub samples: usize,
}

/// OLS slope of z(t) using only samples with z inside `z_window`.
pub fn fit_terminal_velocity(trajectory: &Trajectory, z_window: (f64, f64)) -> Result<VelocityFit> {
    let (lo, hi) = (z_window.0.min(z_window.1), z_window.0.max(z_window.1));
    let pts: Vec<(f64, f64)> = trajectory
        .samples
        .iter()
        .copied()
        .filter(|p| p.1 >= lo && p.1 <= hi)
        .collect();
    if pts.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "velocity fit needs at least 5 samples in the window, got {}",
            pts.len()
        )));
    }
    let line = ols(&pts)?;
    Ok(VelocityFit {
        velocity: line.slope,
        stderr: line.slope_stderr,
        intercept: line.intercept,
        samples: pts.len(),
    })
}

struct Line {
    slope: f64,
    intercept: f64,
    slope_stderr: f64,
}

fn ols(pts: &[(f64, f64)]) -> Result<Line> {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData("all abscissae coincide".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let slope_stderr = if pts.len() > 2 {
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(Line {
        slope,
        intercept,
        slope_stderr,
    })
}

/// Drag from a known force and the terminal speed it produces.
pub fn estimate_gamma(terminal_velocity: f64, force: f64) -> Result<f64> {
    if !(terminal_velocity > 0.0) {
        return Err(invalid(format!(
            "terminal velocity {terminal_velocity} must be > 0"
        )));
    }
    Ok(force / terminal_velocity)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    pub gamma: f64,
    pub stderr: f64,
}

impl GammaEstimate {
    /// Propagates the relative velocity error; the force is taken as exact.
    pub fn from_velocity(fit: &VelocityFit, force: f64) -> Result<Self> {
        let v = fit.velocity.abs();
        let gamma = estimate_gamma(v, force.abs())?;
        Ok(Self {
            gamma,
            stderr: gamma * fit.stderr / v,
        })
    }
}

/// Mean of several estimates with independent errors added in quadrature.
pub fn combine_gamma(estimates: &[GammaEstimate]) -> Result<GammaEstimate> {
    if estimates.is_empty() {
        return Err(Error::InsufficientData("no drag estimates to combine".into()));
    }
    let n = estimates.len() as f64;
    Ok(GammaEstimate {
        gamma: estimates.iter().map(|e| e.gamma).sum::<f64>() / n,
        stderr: estimates.iter().map(|e| e.stderr * e.stderr).sum::<f64>().sqrt() / n,
    })
}

/// `S = lambda_plus * gamma`.
pub fn stiffness_from_fit(lambda_plus: f64, gamma: f64) -> Result<f64> {
    if !(lambda_plus >= 0.0 && gamma > 0.0) {
        return Err(invalid(format!(
            "relaxation rate {lambda_plus} must be >= 0 and drag {gamma} > 0"
        )));
    }
    Ok(lambda_plus * gamma)
}

/// Band `[C_P S, S]` allowing for unknown relative polarization.
pub fn stiffness_band(stiffness: f64, cp: f64) -> Result<[f64; 2]> {
    if !(cp > 0.0 && cp <= 1.0) {
        return Err(invalid(format!("polarization factor {cp} must lie in (0, 1]")));
    }
    Ok([cp * stiffness, stiffness])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionSlope {
    /// Meters per unit R.
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    /// (R, z0 - z0 at smallest R).
    pub shifts: Vec<(f64, f64)>,
}

/// Straight-line fit of trap displacement against power ratio.
pub fn trap_position_vs_r(positions: &[(f64, f64)]) -> Result<PositionSlope> {
    if positions.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "slope needs at least 3 power ratios, got {}",
            positions.len()
        )));
    }
    let mut pts = positions.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let base = pts[0].1;
    let shifts: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.1 - base)).collect();
    let line = ols(&shifts)?;
    Ok(PositionSlope {
        slope: line.slope,
        stderr: line.slope_stderr,
        intercept: line.intercept,
        shifts,
    })
}

/// Spearman rank correlation of z against t.
pub fn spearman(samples: &[(f64, f64)]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let t: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let z: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (rt, rz) = (ranks(&t), ranks(&z));
    let n = rt.len() as f64;
    let (mt, mz) = (rt.iter().sum::<f64>() / n, rz.iter().sum::<f64>() / n);
    let cov: f64 = rt.iter().zip(&rz).map(|(a, b)| (a - mt) * (b - mz)).sum();
    let vt: f64 = rt.iter().map(|a| (a - mt).powi(2)).sum();
    let vz: f64 = rz.iter().map(|b| (b - mz).powi(2)).sum();
    if vt == 0.0 || vz == 0.0 {
        0.0
    } else {
        cov / (vt * vz).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrajectoryClass {
    #[serde(rename = "positive-transporting")]
    Positive,
    #[serde(rename = "negative-transporting")]
    Negative,
    #[serde(rename = "trapped")]
    Trapped,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedTrajectory {
    pub particle_id: u32,
    pub class: TrajectoryClass,
    pub samples: Vec<(f64, f64)>,
    pub A_m: Option<f64>,
    pub lambda_plus_per_s: Option<f64>,
    pub z0_m: Option<f64>,
    pub residual_m: Option<f64>,
    pub fit_converged: Option<bool>,
    pub velocity_m_per_s: Option<f64>,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub trajectories: Vec<ClassifiedTrajectory>,
    pub trap_position_m: Option<f64>,
    pub trap_dwell_s: Option<f64>,
    /// Median relaxation rate of fits that end in the trap.
    pub lambda_plus_per_s: Option<f64>,
    pub gamma_kg_per_s: Option<f64>,
    pub stiffness_N_per_m: Option<f64>,
    pub stiffness_band_N_per_m: Option<[f64; 2]>,
    /// Linked tracks that were neither monotone nor trapped.
    pub rejected_tracks: usize,
}

impl AnalysisResult {
    pub fn empty() -> Self {
        Self {
            trajectories: Vec::new(),
            trap_position_m: None,
            trap_dwell_s: None,
            lambda_plus_per_s: None,
            gamma_kg_per_s: None,
            stiffness_N_per_m: None,
            stiffness_band_N_per_m: None,
            rejected_tracks: 0,
        }
    }

    pub fn of_class(&self, class: TrajectoryClass) -> impl Iterator<Item = &ClassifiedTrajectory> {
        self.trajectories.iter().filter(move |t| t.class == class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    pub peaks: PeakParams,
    pub link: LinkParams,
    pub delta: f64,
    pub scan_step: f64,
    pub min_dwell: f64,
    /// |Spearman rho| needed to call a track transporting.
    pub min_monotonicity: f64,
    /// Known drag, used to turn relaxation rates into stiffness.
    pub gamma: Option<f64>,
    pub cp: Option<f64>,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            peaks: PeakParams::default(),
            link: LinkParams::default(),
            delta: 23e-6,
            scan_step: 1e-6,
            min_dwell: 2.0,
            min_monotonicity: 0.9,
            gamma: None,
            cp: None,
        }
    }
}

/// Peaks of every frame converted to z (meters).
pub fn kymograph_peaks(kymo: &Kymograph, params: &PeakParams) -> Result<Vec<Vec<f64>>> {
    (0..kymo.frames())
        .map(|i| {
            Ok(detect_peaks(kymo.frame(i), params)?
                .into_iter()
                .map(|px| kymo.pixel_z(px))
                .collect())
        })
        .collect()
}

type FitFields = (Option<f64>, Option<f64>, Option<f64>, Option<f64>, Option<bool>);

fn fit_fields(fit: Option<&RelaxationFit>) -> FitFields {
    match fit {
        Some(f) => (
            Some(f.amplitude),
            Some(f.lambda_plus),
            Some(f.z0),
            Some(f.residual),
            Some(f.converged),
        ),
        None => (None, None, None, None, None),
    }
}

fn classified(
    id: u32,
    class: TrajectoryClass,
    tr: &Trajectory,
    fit: Option<&RelaxationFit>,
    velocity: Option<f64>,
) -> ClassifiedTrajectory {
    let (a, l, z0, r, c) = fit_fields(fit);
    ClassifiedTrajectory {
        particle_id: id,
        class,
        samples: tr.samples.clone(),
        A_m: a,
        lambda_plus_per_s: l,
        z0_m: z0,
        residual_m: r,
        fit_converged: c,
        velocity_m_per_s: velocity,
    }
}

/// Full pipeline on one kymograph.
pub fn analyze_kymograph(kymo: &Kymograph, params: &AnalysisParams) -> Result<AnalysisResult> {
    let peaks = kymograph_peaks(kymo, &params.peaks)?;
    let tracks = link_trajectories(&peaks, kymo.frame_interval, kymo.t_origin, &params.link)?;
    analyze_tracks(&tracks, kymo.frame_interval, params)
}

/// Classification, trap detection and fits on already-linked tracks.
pub fn analyze_tracks(tracks: &[Trajectory], frame_interval: f64, params: &AnalysisParams) -> Result<AnalysisResult> {
    let mut result = AnalysisResult::empty();
    if tracks.is_empty() {
        return Ok(result);
    }
    let points: Vec<(f64, f64)> = tracks.iter().flat_map(|t| t.samples.iter().copied()).collect();
    let line_params = TrapLineParams {
        delta: params.delta,
        scan_step: params.scan_step,
        min_dwell: params.min_dwell,
        frame_interval,
    };
    let trap = detect_trap_line(&points, &line_params)?;
    let band = 2.0 * params.delta;
    let min_len = params.link.min_length.max(2);
    let mut next_id = 0u32;
    let mut trapped_rates = Vec::new();

    for tr in tracks {
        // trailing run of samples that sit inside the trap band
        let split = trap.as_ref().map(|line| {
            let k = tr
                .samples
                .iter()
                .rposition(|s| (s.1 - line.position).abs() > band)
                .map_or(0, |i| i + 1);
            k
        });
        let tail_len = split.map_or(0, |k| tr.len() - k);
        let tail_dwell = tail_len as f64 * frame_interval;
        let ends_trapped = tail_len >= min_len && tail_dwell >= params.min_dwell;
        let fit = fit_relaxation(tr).ok();

        if ends_trapped {
            let k = split.unwrap();
            if k >= min_len {
                let head = tr.slice(0..k);
                let class = if head.end().unwrap().1 > head.start().unwrap().1 {
                    TrajectoryClass::Positive
                } else {
                    TrajectoryClass::Negative
                };
                if let Some(f) = fit.as_ref().filter(|f| f.converged && f.lambda_plus > 0.0) {
                    trapped_rates.push(f.lambda_plus);
                }
                result.trajectories.push(classified(next_id, class, &head, fit.as_ref(), None));
                next_id += 1;
            }
            let tail = tr.slice(k..tr.len());
            result
                .trajectories
                .push(classified(next_id, TrajectoryClass::Trapped, &tail, None, None));
            next_id += 1;
            continue;
        }

        let rho = spearman(&tr.samples);
        if rho.abs() >= params.min_monotonicity {
            let class = if rho > 0.0 {
                TrajectoryClass::Positive
            } else {
                TrajectoryClass::Negative
            };
            let velocity = {
                let (lo, hi) = tr
                    .positions()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), z| (a.min(z), b.max(z)));
                fit_terminal_velocity(tr, (lo, hi)).ok().map(|v| v.velocity)
            };
            result
                .trajectories
                .push(classified(next_id, class, tr, fit.as_ref(), velocity));
            next_id += 1;
        } else {
            result.rejected_tracks += 1;
        }
    }

    if let Some(line) = trap.as_ref() {
        if result.of_class(TrajectoryClass::Trapped).next().is_some() {
            result.trap_position_m = Some(line.position);
            result.trap_dwell_s = Some(line.dwell);
        }
    }
    if !trapped_rates.is_empty() {
        trapped_rates.sort_by(f64::total_cmp);
        let lambda = median_sorted(&trapped_rates);
        result.lambda_plus_per_s = Some(lambda);
        if let Some(g) = params.gamma {
            let s = stiffness_from_fit(lambda, g)?;
            result.gamma_kg_per_s = Some(g);
            result.stiffness_N_per_m = Some(s);
            if let Some(cp) = params.cp {
                result.stiffness_band_N_per_m = Some(stiffness_band(s, cp)?);
            }
        }
    } else if let Some(g) = params.gamma {
        result.gamma_kg_per_s = Some(g);
    }
    Ok(result)
}

pub fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(median_sorted(&v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{render_kymograph, RenderSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_frame(n: usize, centres: &[f64], sigma: f64) -> Vec<f64> {
        (0..n)
            .map(|j| {
                centres
                    .iter()
                    .map(|c| (-(j as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn single_peak_subpixel() {
        let f = gaussian_frame(256, &[120.0], 4.0);
        let p = detect_peaks(&f, &PeakParams::default()).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p[0] - 120.0).abs() < 0.1);
        let f = gaussian_frame(256, &[120.3], 4.0);
        let p = detect_peaks(&f, &PeakParams::default()).unwrap();
        assert!((p[0] - 120.3).abs() < 0.1, "{p:?}");
    }

    #[test]
    fn two_peaks_found() {
        let f = gaussian_frame(400, &[100.0, 300.0], 5.0);
        let p = detect_peaks(&f, &PeakParams::default()).unwrap();
        assert_eq!(p.len(), 2);
        assert!((p[0] - 100.0).abs() < 0.1 && (p[1] - 300.0).abs() < 0.1);
    }

    #[test]
    fn blank_frame_has_no_peaks() {
        assert!(detect_peaks(&[0.0; 50], &PeakParams::default()).unwrap().is_empty());
        assert!(detect_peaks(&[], &PeakParams::default()).is_err());
    }

    #[test]
    fn close_peaks_merge_to_brighter() {
        let mut f = gaussian_frame(100, &[50.0], 1.0);
        f[53] = 0.8;
        let p = detect_peaks(&f, &PeakParams { min_separation_px: 5.0, ..Default::default() }).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p[0] - 50.0).abs() < 0.2);
    }

    #[test]
    fn noisy_peak_localization() {
        // SNR 5 (peak height over noise standard deviation) with a 1 px
        // PSF, where the Cramer-Rao bound permits half-pixel accuracy
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = PeakParams {
            smoothing_px: 1.0,
            ..Default::default()
        };
        let mut errors = Vec::new();
        for trial in 0..100 {
            let centre = 128.0 + 0.01 * trial as f64;
            let mut f = gaussian_frame(256, &[centre], 1.0);
            for v in f.iter_mut() {
                let xi: f64 = StandardNormal.sample(&mut rng);
                *v += 0.2 * xi;
            }
            let p = detect_peaks(&f, &params).unwrap();
            let best = p.iter().map(|x| (x - centre).abs()).fold(f64::INFINITY, f64::min);
            errors.push(best);
        }
        errors.sort_by(f64::total_cmp);
        assert!(errors[94] <= 0.5, "95th percentile {}", errors[94]);
    }

    #[test]
    fn smoothed_wide_peak_is_unbiased() {
        let params = PeakParams {
            smoothing_px: 4.0,
            ..Default::default()
        };
        for c in [128.0, 128.2, 128.4, 128.5] {
            let p = detect_peaks(&gaussian_frame(256, &[c], 11.5), &params).unwrap();
            assert_eq!(p.len(), 1);
            assert!((p[0] - c).abs() < 0.1, "{c}: {p:?}");
        }
    }

    fn moving_peaks(speed: f64, frames: usize) -> Vec<Vec<f64>> {
        (0..frames).map(|f| vec![100e-6 + speed * f as f64]).collect()
    }

    #[test]
    fn slow_peak_links_into_one_track() {
        let tracks = link_trajectories(&moving_peaks(20e-6, 40), 0.1, 0.0, &LinkParams::default()).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 40);
        tracks[0].validate().unwrap();
    }

    #[test]
    fn fast_peak_fragments() {
        let params = LinkParams {
            min_length: 1,
            ..Default::default()
        };
        let tracks = link_trajectories(&moving_peaks(80e-6, 20), 0.1, 0.0, &params).unwrap();
        assert_eq!(tracks.len(), 20);
    }

    #[test]
    fn gaps_are_bridged() {
        let mut peaks = moving_peaks(10e-6, 30);
        peaks[10].clear();
        peaks[11].clear();
        let tracks = link_trajectories(&peaks, 0.1, 0.0, &LinkParams::default()).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 30);
        assert!((tracks[0].samples[10].1 - 200e-6).abs() < 1e-12);
        let mut peaks = moving_peaks(10e-6, 30);
        for p in &mut peaks[10..13] {
            p.clear();
        }
        let tracks = link_trajectories(&peaks, 0.1, 0.0, &LinkParams::default()).unwrap();
        assert_eq!(tracks.len(), 2);
    }

    #[test]
    fn crossing_tracks_keep_every_point() {
        // two particles pass each other near 302 um; nearest-distance
        // assignment bounces them, so the lower track stays below
        let frames: Vec<Vec<f64>> = (0..21)
            .map(|f| {
                let a = 200e-6 + 10e-6 * f as f64;
                let b = 405e-6 - 10e-6 * f as f64;
                vec![a.min(b), a.max(b)]
            })
            .collect();
        let total: usize = frames.iter().map(Vec::len).sum();
        let params = LinkParams {
            min_length: 1,
            ..Default::default()
        };
        let tracks = link_trajectories(&frames, 0.1, 0.0, &params).unwrap();
        let linked: usize = tracks.iter().map(|t| t.len()).sum();
        assert_eq!(linked, total);
        assert_eq!(tracks.len(), 2);
        assert!(tracks[0].positions().all(|z| z <= 305e-6 + 1e-12));
        assert!(tracks[1].positions().all(|z| z >= 295e-6 - 1e-12));
    }

    #[test]
    fn flat_points_give_exact_line() {
        let pts: Vec<(f64, f64)> = (0..100).map(|i| (i as f64 * 0.05, 250e-6)).collect();
        let line = detect_trap_line(&pts, &TrapLineParams::new(23e-6, 0.05)).unwrap().unwrap();
        assert!((line.position - 250e-6).abs() < 1e-15);
        assert!((line.dwell - 5.0).abs() < 1e-9);
    }

    #[test]
    fn transporting_track_is_not_a_trap() {
        let pts: Vec<(f64, f64)> = (0..200).map(|i| (i as f64 / 30.0, 237e-6 * i as f64 / 30.0)).collect();
        assert!(detect_trap_line(&pts, &TrapLineParams::new(23e-6, 1.0 / 30.0)).unwrap().is_none());
        assert!(detect_trap_line(&pts, &TrapLineParams::new(0.0, 1.0 / 30.0)).is_err());
    }

    fn exp_track(a: f64, lambda: f64, z0: f64, n: usize, dt: f64) -> Trajectory {
        Trajectory::new(0, (0..n).map(|i| {
            let t = i as f64 * dt;
            (t, a * (-lambda * t).exp() + z0)
        }).collect()).unwrap()
    }

    #[test]
    fn exact_exponential_recovered() {
        let tr = exp_track(100e-6, 0.5, 200e-6, 300, 1.0 / 30.0);
        let f = fit_relaxation(&tr).unwrap();
        assert!(f.converged);
        assert!((f.amplitude / 100e-6 - 1.0).abs() < 1e-6);
        assert!((f.lambda_plus / 0.5 - 1.0).abs() < 1e-6);
        assert!((f.z0 / 200e-6 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn short_track_rejected() {
        let tr = exp_track(1.0, 1.0, 0.0, 9, 0.1);
        assert!(matches!(fit_relaxation(&tr), Err(Error::InsufficientData(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn relaxation_fit_is_shift_invariant(shift in -1e-3f64..1e-3, a in 20e-6f64..200e-6, lambda in 0.1f64..2.0) {
            let base: Vec<(f64, f64)> = (0..200).map(|i| {
                let t = i as f64 / 30.0;
                (t, a * (-lambda * t).exp() + 300e-6 + 2e-7 * (7.0 * t).sin())
            }).collect();
            let moved: Vec<(f64, f64)> = base.iter().map(|&(t, z)| (t, z + shift)).collect();
            let f1 = fit_relaxation(&Trajectory::new(0, base).unwrap()).unwrap();
            let f2 = fit_relaxation(&Trajectory::new(0, moved).unwrap()).unwrap();
            prop_assert!((f1.amplitude - f2.amplitude).abs() <= 1e-9 * f1.amplitude.abs());
            prop_assert!((f1.lambda_plus - f2.lambda_plus).abs() <= 1e-9 * f1.lambda_plus);
            prop_assert!(((f2.z0 - f1.z0) - shift).abs() <= 1e-9 * (f1.z0.abs() + shift.abs()));
        }

        #[test]
        fn gamma_and_stiffness_compose(f in 1e-13f64..1e-11, v in 1e-5f64..1e-3, l in 0.01f64..5.0) {
            let s = stiffness_from_fit(l, estimate_gamma(v, f).unwrap()).unwrap();
            prop_assert!((s - f * l / v).abs() <= 1e-12 * s);
        }
    }

    #[test]
    fn velocity_of_a_line() {
        let tr = Trajectory::new(0, (0..100).map(|i| {
            let t = i as f64 * 0.01;
            (t, 237e-6 * t)
        }).collect()).unwrap();
        let v = fit_terminal_velocity(&tr, (0.0, 1.0)).unwrap();
        assert!((v.velocity - 237e-6).abs() < 1e-15);
        assert!(fit_terminal_velocity(&tr, (0.0, 1e-6)).is_err());
    }

    #[test]
    fn gamma_fixtures() {
        let g1 = estimate_gamma(237e-6, 3.89e-12).unwrap();
        let g2 = estimate_gamma(137e-6, 1.45e-12).unwrap();
        assert!((g1 - 1.64e-8).abs() < 0.005e-8);
        assert!((g2 - 1.06e-8).abs() < 0.005e-8);
        assert_eq!(estimate_gamma(2.0 * 237e-6, 2.0 * 3.89e-12).unwrap(), g1);
        assert!(estimate_gamma(0.0, 1e-12).is_err());
        let c = combine_gamma(&[
            GammaEstimate { gamma: g1, stderr: 0.3e-8 },
            GammaEstimate { gamma: g2, stderr: 0.2e-8 },
        ])
        .unwrap();
        assert!((c.gamma - 0.5 * (g1 + g2)).abs() < 1e-20);
        assert!((c.stderr - (0.13e-16f64).sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn stiffness_arithmetic() {
        let s = stiffness_from_fit(0.23, 1.3e-8).unwrap();
        assert!((s - 2.99e-9).abs() < 1e-20);
        assert_eq!(stiffness_from_fit(0.0, 1.3e-8).unwrap(), 0.0);
        let band = stiffness_band(s, 0.63).unwrap();
        assert!((band[0] - 0.63 * s).abs() < 1e-24 && band[1] == s);
        assert!(stiffness_band(s, 1.5).is_err());
    }

    #[test]
    fn linear_positions_slope() {
        let pts: Vec<(f64, f64)> = [0.12, 0.38, 0.5, 0.75].iter().map(|&r| (r, 0.2e-3 + 1.4e-3 * r)).collect();
        let s = trap_position_vs_r(&pts).unwrap();
        assert!((s.slope - 1.4e-3).abs() < 1e-15);
        assert!(s.stderr < 1e-15);
        assert_eq!(s.shifts[0].1, 0.0);
        assert!(trap_position_vs_r(&pts[..2]).is_err());
    }

    #[test]
    fn spearman_signs() {
        let up: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, (i * i) as f64)).collect();
        assert!((spearman(&up) - 1.0).abs() < 1e-12);
        let down: Vec<(f64, f64)> = up.iter().map(|&(t, z)| (t, -z)).collect();
        assert!((spearman(&down) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_kymograph_analyzes_to_nothing() {
        let spec = RenderSpec::covering(0.0, 500e-6, 3.0);
        let k = render_kymograph(&[], &spec).unwrap();
        let r = analyze_kymograph(&k, &AnalysisParams::default()).unwrap();
        assert!(r.trajectories.is_empty() && r.trap_position_m.is_none());
    }

    #[test]
    fn json_field_names() {
        let tr = exp_track(100e-6, 0.5, 200e-6, 300, 1.0 / 30.0);
        let mut r = analyze_tracks(&[tr], 1.0 / 30.0, &AnalysisParams { gamma: Some(1e-8), ..Default::default() }).unwrap();
        r.trap_position_m = Some(2e-4);
        let v = serde_json::to_value(&r).unwrap();
        for key in ["trajectories", "trap_position_m", "gamma_kg_per_s", "stiffness_N_per_m"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let t0 = &v["trajectories"][0];
        for key in ["class", "A_m", "lambda_plus_per_s", "z0_m"] {
            assert!(t0.get(key).is_some(), "{key}");
        }
    }
}
