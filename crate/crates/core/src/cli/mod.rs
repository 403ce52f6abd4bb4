//! Command-line front end: `modes`, `trap-scan`, `simulate`, `analyze`,
//! `report`.
//!
//! Exit codes: 0 success, 1 I/O, 2 configuration, 3 numerical failure,
//! 4 partial batch failure.

pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::constants::BOLTZMANN;
use crate::dynamics::{render_kymograph, simulate_injections, trajectories_to_csv, Injection, Kymograph};
use crate::fiber_modes::{polarization_correction, solve_he11};
use crate::tracking::{analyze_kymograph, stiffness_band, trap_position_vs_r, AnalysisResult, TrajectoryClass};
use crate::trap_model::{normalize_potential, overdamped_classification, uniform_grid, TrapModel, TrapSolution};
use crate::Error;

pub use config::{AutoOr, ConfigError, ExperimentConfig};
use plot::{Panel, Series};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Parse { .. } => Self::io(e.to_string()),
            _ => Self::numerical(e.to_string()),
        }
    }
}

/// Library errors raised while turning the config into model objects are
/// configuration problems, not numerical ones.
fn built<T>(r: crate::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::config(format!("config: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "tapertrap", version, about = "Two-color evanescent fiber-taper trap simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (`section.key = value`); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Overrides dynamics.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Effective index and surface intensity of both modes across the taper.
    Modes,
    /// Trap position, stiffness and depth for every power ratio in the sweep.
    TrapScan,
    /// Langevin runs rendered to kymographs, one per power ratio.
    Simulate,
    /// Track particles in kymographs and extract trap parameters.
    Analyze {
        /// Kymograph files; defaults to every kymograph_*.txt in --out.
        files: Vec<PathBuf>,
    },
    /// Combine earlier outputs in --out into report.svg and report.md.
    Report,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn line(&self) -> String {
        format!(
            "{} {} command={} config_sha256={} seed={}",
            self.tool, self.version, self.command, self.config_sha256, self.seed
        )
    }
}

struct Context {
    cfg: ExperimentConfig,
    out: PathBuf,
    format: Format,
    prov: Provenance,
}

impl Context {
    fn write(&self, name: &str, content: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        std::fs::write(&path, content).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    fn write_table(&self, stem: &str, table: &Table) -> Result<PathBuf, CliError> {
        match self.format {
            Format::Csv => self.write(&format!("{stem}.csv"), table.to_csv(&self.prov)),
            Format::Json => self.write(&format!("{stem}.json"), table.to_json(&self.prov)),
        }
    }

    fn write_json(&self, name: &str, value: Value) -> Result<PathBuf, CliError> {
        let mut v = value;
        v["provenance"] = json!(self.prov);
        self.write(name, serde_json::to_string_pretty(&v).expect("json values serialize"))
    }
}

/// Column-oriented table written as CSV or JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}

fn cell_csv(v: &Value) -> String {
    match v {
        Value::Null => "NaN".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn cell_value(c: &str) -> Value {
    match c {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        "NaN" => Value::Null,
        _ => c.parse::<f64>().map(num).unwrap_or_else(|_| Value::String(c.into())),
    }
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self, prov: &Provenance) -> String {
        let mut w = csv::Writer::from_writer(format!("# {}\n", prov.line()).into_bytes());
        let rows = std::iter::once(self.columns.clone()).chain(self.rows.iter().map(|r| r.iter().map(cell_csv).collect()));
        for row in rows {
            w.write_record(&row).expect("writing to memory cannot fail");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    pub fn to_json(&self, prov: &Provenance) -> String {
        serde_json::to_string_pretty(&json!({
            "provenance": prov,
            "columns": self.columns,
            "rows": self.rows,
        }))
        .expect("json values serialize")
    }

    /// Reads either format back; CSV cells become numbers, booleans or strings.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        if text.trim_start().starts_with('{') {
            let v: Value = serde_json::from_str(text).map_err(|e| CliError::io(format!("bad table json: {e}")))?;
            let columns = v["columns"]
                .as_array()
                .ok_or_else(|| CliError::io("table json lacks `columns`"))?
                .iter()
                .map(|c| c.as_str().unwrap_or_default().to_string())
                .collect();
            let rows = v["rows"]
                .as_array()
                .ok_or_else(|| CliError::io("table json lacks `rows`"))?
                .iter()
                .map(|r| r.as_array().cloned().unwrap_or_default())
                .collect();
            return Ok(Self { columns, rows });
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let bad = |e: csv::Error| CliError::io(format!("bad table csv: {e}"));
        let columns: Vec<String> = reader.headers().map_err(bad)?.iter().map(String::from).collect();
        let rows = reader
            .records()
            .map(|r| r.map(|rec| rec.iter().map(cell_value).collect()).map_err(bad))
            .collect::<Result<Vec<Vec<Value>>, _>>()?;
        Ok(Self { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| r.get(i).and_then(Value::as_f64).unwrap_or(f64::NAN))
                .collect(),
        )
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Runs a parsed command; `Ok` carries 0 or the partial-failure code.
pub fn execute(cli: Cli) -> Result<i32, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::config("--jobs must be >= 1"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", cli.out.display())))?;
    let command = match &cli.command {
        Command::Modes => "modes",
        Command::TrapScan => "trap-scan",
        Command::Simulate => "simulate",
        Command::Analyze { .. } => "analyze",
        Command::Report => "report",
    };
    let ctx = Context {
        prov: Provenance {
            tool: "tapertrap",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            config_sha256: cfg.digest(),
            seed: cfg.seed,
        },
        cfg,
        out: cli.out.clone(),
        format: cli.format,
    };
    match cli.command {
        Command::Modes => cmd_modes(&ctx),
        Command::TrapScan => cmd_trap_scan(&ctx),
        Command::Simulate => cmd_simulate(&ctx),
        Command::Analyze { files } => cmd_analyze(&ctx, files),
        Command::Report => cmd_report(&ctx),
    }
}

fn warn_validity(model_warnings: &[String]) {
    for w in model_warnings {
        eprintln!("warning: {w}");
    }
}

/// Diameter where the two intensity curves cross, by linear interpolation.
fn crossover(d: &[f64], a: &[f64], b: &[f64]) -> Option<f64> {
    (1..d.len()).find_map(|i| {
        let (f0, f1) = (a[i - 1] - b[i - 1], a[i] - b[i]);
        (f0.signum() != f1.signum() && f0 != f1).then(|| d[i - 1] + (d[i] - d[i - 1]) * f0 / (f0 - f1))
    })
}

fn cmd_modes(ctx: &Context) -> Result<i32, CliError> {
    let cfg = &ctx.cfg;
    let [m1, m2] = built(cfg.modes())?;
    let media = built(cfg.media())?;
    let offset = cfg.probe_offset_nm * 1e-9;
    let (lo, hi) = (cfg.diameter_min_nm, cfg.diameter_max_nm);
    let n = (hi - lo).round().max(1.0) as usize;
    let diameters: Vec<f64> = (0..=n).map(|i| (lo + (hi - lo) * i as f64 / n as f64) * 1e-9).collect();
    let rows: Vec<[f64; 6]> = diameters
        .par_iter()
        .map(|&d| -> crate::Result<[f64; 6]> {
            let g1 = solve_he11(d, &m1, media)?;
            let g2 = solve_he11(d, &m2, media)?;
            let (i1, i2) = (g1.top_intensity(offset)?, g2.top_intensity(offset)?);
            Ok([d, g1.effective_index(), i1, g2.effective_index(), i2, i1 / i2])
        })
        .collect::<crate::Result<_>>()?;
    let mut table = Table::new(&[
        "diameter_m",
        "n_eff_1",
        "intensity_1_W_per_m2",
        "n_eff_2",
        "intensity_2_W_per_m2",
        "intensity_ratio",
    ]);
    table.rows = rows.iter().map(|r| r.iter().map(|v| num(*v)).collect()).collect();
    let path = ctx.write_table("modes", &table)?;

    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
    let cross = crossover(&col(0), &col(2), &col(4));
    let label = |m: &config::ModeConfig| format!("{} nm, {} mW", m.wavelength_nm, m.power_mw);
    let nm = |k: usize| rows.iter().map(|r| (r[0] * 1e9, r[k])).collect::<Vec<_>>();
    let panels = [
        Panel::new("Surface intensity", "diameter (nm)", "intensity (W/m^2)")
            .with(Series::line(label(&cfg.mode1), nm(2)))
            .with(Series::line(label(&cfg.mode2), nm(4))),
        Panel::new("Effective index", "diameter (nm)", "n_eff")
            .with(Series::line(format!("{} nm", cfg.mode1.wavelength_nm), nm(1)))
            .with(Series::line(format!("{} nm", cfg.mode2.wavelength_nm), nm(3))),
    ];
    ctx.write("modes.svg", plot::render(&panels, &ctx.prov.line()))?;
    println!("wrote {} ({} diameters)", path.display(), rows.len());
    match cross {
        Some(d) => println!("intensity crossover at {:.1} nm", d * 1e9),
        None => println!("no intensity crossover in the diameter range"),
    }
    Ok(EXIT_OK)
}

fn solution_row(r: f64, s: &TrapSolution) -> Vec<Value> {
    vec![
        num(r),
        num(s.z0),
        num(s.diameter_at_trap),
        num(s.stiffness),
        num(s.axial_depth),
        num(s.axial_depth_kbt),
        Value::Bool(s.stable),
    ]
}

fn cmd_trap_scan(ctx: &Context) -> Result<i32, CliError> {
    let cfg = &ctx.cfg;
    let setup = built(cfg.trap_setup())?;
    warn_validity(&setup.validity_warnings());
    let model = TrapModel::new(setup)?;
    let kbt = BOLTZMANN * cfg.medium_temperature_k;
    let results: Vec<(f64, crate::Result<TrapSolution>)> = cfg
        .sweep_r
        .par_iter()
        .map(|&r| (r, model.with_power_ratio(r).find_trap()))
        .collect();

    let mut table = Table::new(&[
        "R",
        "z0_m",
        "diameter_m",
        "stiffness_N_per_m",
        "depth_J",
        "depth_kBT",
        "stable",
    ]);
    let mut failures = 0;
    let mut solved = Vec::new();
    for (r, res) in &results {
        match res {
            Ok(s) => {
                table.rows.push(solution_row(*r, s));
                solved.push((*r, *s));
            }
            Err(e) => {
                failures += 1;
                eprintln!("warning: R = {r}: {e}");
                table.rows.push(solution_row(*r, &TrapSolution::no_trap(false)));
            }
        }
    }
    let path = ctx.write_table("trap_scan", &table)?;

    let stable: Vec<(f64, TrapSolution)> = solved.iter().filter(|(_, s)| s.stable).copied().collect();
    // normalized potentials around each trap
    let (zlo, zhi) = model.z_domain();
    let mut pot = Table::new(&["R", "z_m", "U_J", "U_kBT"]);
    let mut pot_series = Vec::new();
    for (r, s) in &stable {
        let a = (s.z0 - 300e-6).max(zlo);
        let b = (s.z0 + 300e-6).min(zhi);
        let grid = uniform_grid(a, b, (cfg.z_step_um * 1e-6).max((b - a) / 2000.0));
        let u = normalize_potential(&model.with_power_ratio(*r).axial_potential(&grid)?);
        for (z, u) in grid.iter().zip(&u) {
            pot.rows.push(vec![num(*r), num(*z), num(*u), num(u / kbt)]);
        }
        pot_series.push(Series::line(
            format!("R = {r}"),
            grid.iter().zip(&u).map(|(z, u)| (z * 1e3, u / kbt)).collect(),
        ));
    }
    ctx.write_table("potentials", &pot)?;

    let slope = trap_position_vs_r(&stable.iter().map(|(r, s)| (*r, s.z0)).collect::<Vec<_>>()).ok();
    let particle = model.setup().particle.clone();
    let damping: Vec<Value> = stable
        .iter()
        .filter_map(|(r, s)| {
            overdamped_classification(&particle, s.stiffness.max(0.0))
                .ok()
                .map(|d| json!({"R": r, "gamma0_sq_over_4Sm": d.ratio(), "overdamped": d.is_overdamped}))
        })
        .collect();
    ctx.write_json(
        "trap_scan_fit.json",
        json!({
            "stable_traps": stable.len(),
            "slope_m_per_R": slope.as_ref().map(|s| s.slope),
            "slope_stderr_m_per_R": slope.as_ref().map(|s| s.stderr),
            "damping": damping,
        }),
    )?;

    let pts = |f: fn(&TrapSolution) -> f64| stable.iter().map(|(r, s)| (*r, f(s))).collect::<Vec<_>>();
    let mut panels = vec![
        Panel::new("Trap position", "R = P1/P2", "z0 (mm)").with(Series::markers("z0", pts(|s| s.z0 * 1e3))),
        Panel::new("Axial stiffness", "R = P1/P2", "S (N/m)").with(Series::markers("S", pts(|s| s.stiffness))),
        Panel::new("Axial depth", "R = P1/P2", "depth (kT)").with(Series::markers("depth", pts(|s| s.axial_depth_kbt))),
    ];
    let mut pp = Panel::new("Normalized axial potential", "z (mm)", "U (kT)");
    pp.series = pot_series;
    panels.push(pp);
    ctx.write("trap_scan.svg", plot::render(&panels, &ctx.prov.line()))?;

    println!(
        "wrote {} ({} ratios, {} stable traps)",
        path.display(),
        results.len(),
        stable.len()
    );
    if let Some(s) = &slope {
        println!("trap position slope {:.4e} +/- {:.1e} m per unit R", s.slope, s.stderr);
    }
    if stable.is_empty() {
        eprintln!("warning: no stable trap for any power ratio in the sweep");
    }
    partial(failures, results.len())
}

fn partial(failures: usize, total: usize) -> Result<i32, CliError> {
    match failures {
        0 => Ok(EXIT_OK),
        f if f == total => Err(CliError::numerical(format!("all {total} items failed"))),
        f => {
            eprintln!("{f} of {total} items failed");
            Ok(EXIT_PARTIAL)
        }
    }
}

fn r_stem(r: f64) -> String {
    format!("R{r}")
}

fn cmd_simulate(ctx: &Context) -> Result<i32, CliError> {
    let cfg = &ctx.cfg;
    let setup = built(cfg.trap_setup())?;
    warn_validity(&setup.validity_warnings());
    let base = built(cfg.langevin())?;
    let model = TrapModel::new(setup)?;
    let (zlo, zhi) = model.z_domain();
    let injections: Vec<Injection> = cfg
        .injection_z_um
        .iter()
        .zip(&cfg.injection_t_s)
        .map(|(z, t)| Injection { time: *t, z: z * 1e-6 })
        .collect();
    if let Some(bad) = injections.iter().find(|i| !(i.z > zlo && i.z < zhi)) {
        return Err(CliError::config(format!(
            "dynamics.injection_z_um: {} um lies outside the modeled fiber ({:.0} to {:.0} um); raise model.diameter_max_nm",
            bad.z * 1e6,
            zlo * 1e6,
            zhi * 1e6
        )));
    }
    let mut failures = 0;
    for (i, &r) in cfg.sweep_r.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(i as u64);
        let m = model.with_power_ratio(r);
        let params = crate::dynamics::LangevinParams { seed, ..base };
        let run = simulate_injections(&m, &params, &injections, cfg.duration_s).and_then(|trajs| {
            let mut kymo = render_kymograph(&trajs, &cfg.render_spec(seed))?;
            kymo.set_meta("power_ratio", r.to_string());
            kymo.set_meta("gamma_kg_s", params.gamma.to_string());
            Ok((trajs, kymo))
        });
        match run {
            Ok((trajs, kymo)) => {
                let exited = trajs.iter().filter(|t| t.exited).count();
                if exited > 0 {
                    eprintln!("warning: R = {r}: {exited} particle(s) left the modeled fiber early");
                }
                let stem = r_stem(r);
                let comments = [ctx.prov.line()];
                let path = ctx.write(&format!("kymograph_{stem}.txt"), kymo.to_text(&comments))?;
                ctx.write(&format!("kymograph_{stem}.pgm"), kymo.to_pgm())?;
                let truth = format!("# {}\n{}", ctx.prov.line(), trajectories_to_csv(&trajs));
                ctx.write(&format!("truth_{stem}.csv"), truth)?;
                let trap = m.find_trap().ok().filter(|s| s.stable);
                println!(
                    "wrote {} ({} frames, {} particles, model trap {})",
                    path.display(),
                    kymo.frames(),
                    trajs.len(),
                    trap.map(|s| format!("{:.1} um", s.z0 * 1e6)).unwrap_or_else(|| "none".into())
                );
            }
            Err(e) => {
                failures += 1;
                eprintln!("warning: R = {r}: {e}");
            }
        }
    }
    partial(failures, cfg.sweep_r.len())
}

fn default_kymographs(out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(out)
        .map_err(|e| CliError::io(format!("cannot list {}: {e}", out.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("kymograph_") && n.ends_with(".txt"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn class_points(result: &AnalysisResult, class: TrajectoryClass) -> Vec<(f64, f64)> {
    result
        .of_class(class)
        .flat_map(|t| t.samples.iter().map(|(t, z)| (*t, z * 1e3)))
        .collect()
}

struct FileAnalysis {
    ratio: Option<f64>,
    result: AnalysisResult,
    cp: Option<f64>,
}

fn analyze_one(ctx: &Context, path: &Path) -> Result<FileAnalysis, CliError> {
    let cfg = &ctx.cfg;
    let kymo = Kymograph::read(path)?;
    let gamma = built(cfg.gamma())?;
    let params = cfg.analysis_params(kymo.pixel_pitch, Some(gamma), None);
    let mut result = analyze_kymograph(&kymo, &params)?;
    let cp = match (cfg.cp, result.trap_position_m) {
        (AutoOr::Value(c), _) => Some(c),
        (AutoOr::Auto, Some(z)) => {
            let d = built(cfg.geometry())?.diameter_at(z);
            Some(polarization_correction(
                d,
                cfg.mode1.wavelength_nm * 1e-9,
                cfg.mode2.wavelength_nm * 1e-9,
                std::f64::consts::FRAC_PI_2,
                cfg.probe_offset_nm * 1e-9,
                built(cfg.media())?,
            )?)
        }
        (AutoOr::Auto, None) => None,
    };
    if let (Some(s), Some(c)) = (result.stiffness_N_per_m, cp) {
        result.stiffness_band_N_per_m = Some(stiffness_band(s, c)?);
    }
    let ratio = kymo.meta("power_ratio").and_then(|v| v.parse().ok());
    Ok(FileAnalysis { ratio, result, cp })
}

fn cmd_analyze(ctx: &Context, files: Vec<PathBuf>) -> Result<i32, CliError> {
    let files = if files.is_empty() { default_kymographs(&ctx.out)? } else { files };
    if files.is_empty() {
        return Err(CliError::io(format!("no kymograph files given or found in {}", ctx.out.display())));
    }
    let mut summary = Table::new(&[
        "file",
        "R",
        "trap_position_m",
        "trap_dwell_s",
        "lambda_plus_per_s",
        "gamma_kg_per_s",
        "stiffness_N_per_m",
        "stiffness_lo_N_per_m",
        "stiffness_hi_N_per_m",
        "n_positive",
        "n_negative",
        "n_trapped",
        "rejected",
    ]);
    let mut failures = 0;
    let mut positions = Vec::new();
    for path in &files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("kymograph").to_string();
        let fa = match analyze_one(ctx, path) {
            Ok(fa) => fa,
            Err(e) => {
                failures += 1;
                eprintln!("warning: {}: {}", path.display(), e.message);
                continue;
            }
        };
        let res = &fa.result;
        let count = |c| res.of_class(c).count() as u64;
        let opt = |v: Option<f64>| v.map(num).unwrap_or(Value::Null);
        summary.rows.push(vec![
            Value::String(path.display().to_string()),
            opt(fa.ratio),
            opt(res.trap_position_m),
            opt(res.trap_dwell_s),
            opt(res.lambda_plus_per_s),
            opt(res.gamma_kg_per_s),
            opt(res.stiffness_N_per_m),
            opt(res.stiffness_band_N_per_m.map(|b| b[0])),
            opt(res.stiffness_band_N_per_m.map(|b| b[1])),
            json!(count(TrajectoryClass::Positive)),
            json!(count(TrajectoryClass::Negative)),
            json!(count(TrajectoryClass::Trapped)),
            json!(res.rejected_tracks),
        ]);
        if let (Some(r), Some(z)) = (fa.ratio, res.trap_position_m) {
            positions.push((r, z));
        }
        ctx.write_json(
            &format!("analysis_{stem}.json"),
            json!({"source": path.display().to_string(), "power_ratio": fa.ratio, "cp": fa.cp, "result": res}),
        )?;
        let mut panel = Panel::new(format!("Tracks in {stem}"), "t (s)", "z (mm)")
            .with(Series::markers("positive", class_points(res, TrajectoryClass::Positive)))
            .with(Series::markers("negative", class_points(res, TrajectoryClass::Negative)))
            .with(Series::markers("trapped", class_points(res, TrajectoryClass::Trapped)));
        if let Some(z) = res.trap_position_m {
            let t_end = res
                .trajectories
                .iter()
                .filter_map(|t| t.samples.last().map(|s| s.0))
                .fold(0.0, f64::max);
            panel = panel.with(Series::line("trap line", vec![(0.0, z * 1e3), (t_end, z * 1e3)]));
        }
        ctx.write(&format!("analysis_{stem}.svg"), plot::render(&[panel], &ctx.prov.line()))?;
        println!(
            "{}: trap {}, lambda+ {}, S {}",
            path.display(),
            res.trap_position_m.map(|z| format!("{:.1} um", z * 1e6)).unwrap_or_else(|| "none".into()),
            res.lambda_plus_per_s.map(|l| format!("{l:.4} 1/s")).unwrap_or_else(|| "n/a".into()),
            res.stiffness_N_per_m.map(|s| format!("{s:.3e} N/m")).unwrap_or_else(|| "n/a".into()),
        );
    }
    ctx.write_table("analysis_summary", &summary)?;
    if let Ok(s) = trap_position_vs_r(&positions) {
        println!("measured trap position slope {:.4e} +/- {:.1e} m per unit R", s.slope, s.stderr);
        ctx.write_json(
            "analysis_fit.json",
            json!({"slope_m_per_R": s.slope, "slope_stderr_m_per_R": s.stderr, "shifts": s.shifts}),
        )?;
    }
    partial(failures, files.len())
}

fn read_table(out: &Path, stem: &str) -> Option<Table> {
    ["csv", "json"].iter().find_map(|ext| {
        let text = std::fs::read_to_string(out.join(format!("{stem}.{ext}"))).ok()?;
        Table::parse(&text).ok()
    })
}

fn xy(table: &Table, x: &str, y: &str, xs: f64, ys: f64) -> Vec<(f64, f64)> {
    match (table.column(x), table.column(y)) {
        (Some(a), Some(b)) => a
            .iter()
            .zip(&b)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| (a * xs, b * ys))
            .collect(),
        _ => Vec::new(),
    }
}

fn cmd_report(ctx: &Context) -> Result<i32, CliError> {
    let modes = read_table(&ctx.out, "modes");
    let scan = read_table(&ctx.out, "trap_scan");
    let analysis = read_table(&ctx.out, "analysis_summary");
    if modes.is_none() && scan.is_none() && analysis.is_none() {
        return Err(CliError::io(format!(
            "no modes, trap_scan or analysis_summary table in {}",
            ctx.out.display()
        )));
    }
    let mut panels = Vec::new();
    let mut md = format!("# tapertrap report\n\n`{}`\n\n", ctx.prov.line());
    if let Some(t) = &modes {
        panels.push(
            Panel::new("Surface intensity", "diameter (nm)", "intensity (W/m^2)")
                .with(Series::line("mode 1", xy(t, "diameter_m", "intensity_1_W_per_m2", 1e9, 1.0)))
                .with(Series::line("mode 2", xy(t, "diameter_m", "intensity_2_W_per_m2", 1e9, 1.0))),
        );
        let d = t.column("diameter_m").unwrap_or_default();
        let cross = crossover(
            &d,
            &t.column("intensity_1_W_per_m2").unwrap_or_default(),
            &t.column("intensity_2_W_per_m2").unwrap_or_default(),
        );
        let _ = writeln!(
            md,
            "## Modes\n\n{} diameters; intensity crossover: {}\n",
            d.len(),
            cross.map(|c| format!("{:.1} nm", c * 1e9)).unwrap_or_else(|| "none".into())
        );
    }
    let model_z = scan.as_ref().map(|t| xy(t, "R", "z0_m", 1.0, 1e3)).unwrap_or_default();
    let measured_z = analysis.as_ref().map(|t| xy(t, "R", "trap_position_m", 1.0, 1e3)).unwrap_or_default();
    if !model_z.is_empty() || !measured_z.is_empty() {
        panels.push(
            Panel::new("Trap position", "R = P1/P2", "z0 (mm)")
                .with(Series::markers("model", model_z.clone()))
                .with(Series::markers("measured", measured_z.clone())),
        );
    }
    if let Some(t) = &scan {
        panels.push(
            Panel::new("Axial stiffness", "R = P1/P2", "S (N/m)")
                .with(Series::markers("model", xy(t, "R", "stiffness_N_per_m", 1.0, 1.0)))
                .with(Series::markers(
                    "measured",
                    analysis
                        .as_ref()
                        .map(|a| xy(a, "R", "stiffness_N_per_m", 1.0, 1.0))
                        .unwrap_or_default(),
                )),
        );
        let _ = writeln!(md, "## Trap scan\n\n| R | z0 (mm) |\n|---|---|");
        for (r, z) in &model_z {
            let _ = writeln!(md, "| {r} | {z:.4} |");
        }
        let slope = trap_position_vs_r(&model_z.iter().map(|(r, z)| (*r, z * 1e-3)).collect::<Vec<_>>());
        if let Ok(s) = slope {
            let _ = writeln!(md, "\nModel slope: {:.4} mm per unit R\n", s.slope * 1e3);
        }
    }
    if let Some(t) = &analysis {
        let _ = writeln!(md, "## Kymograph analysis\n\n| R | trap (mm) | lambda+ (1/s) | S (N/m) |\n|---|---|---|---|");
        let (r, z, l, s) = (
            t.column("R").unwrap_or_default(),
            t.column("trap_position_m").unwrap_or_default(),
            t.column("lambda_plus_per_s").unwrap_or_default(),
            t.column("stiffness_N_per_m").unwrap_or_default(),
        );
        for i in 0..r.len() {
            let _ = writeln!(md, "| {} | {:.4} | {:.4} | {:.3e} |", r[i], z[i] * 1e3, l[i], s[i]);
        }
        if let Ok(fit) = trap_position_vs_r(&measured_z.iter().map(|(r, z)| (*r, z * 1e-3)).collect::<Vec<_>>()) {
            let _ = writeln!(md, "\nMeasured slope: {:.4} mm per unit R", fit.slope * 1e3);
        }
    }
    ctx.write("report.svg", plot::render(&panels, &ctx.prov.line()))?;
    let path = ctx.write("report.md", md)?;
    println!("wrote {} and report.svg ({} panels)", path.display(), panels.len());
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance {
            tool: "tapertrap",
            version: "0",
            command: "t".into(),
            config_sha256: "ab".into(),
            seed: 3,
        }
    }

    #[test]
    fn table_round_trips_both_formats() {
        let mut t = Table::new(&["a", "b", "c"]);
        t.rows.push(vec![num(1.5), Value::Bool(true), Value::String("x,y".into())]);
        t.rows.push(vec![num(-2e-9), Value::Null, Value::String("z".into())]);
        let back = Table::parse(&t.to_json(&prov())).unwrap();
        assert_eq!(back, t);
        let csv = t.to_csv(&prov());
        assert!(csv.starts_with("# tapertrap 0 command=t config_sha256=ab seed=3\na,b,c\n"));
        assert_eq!(Table::parse(&t.to_csv(&prov())).unwrap().column("a").unwrap()[1], -2e-9);
    }

    #[test]
    fn crossover_interpolates() {
        let c = crossover(&[0.0, 1.0, 2.0], &[3.0, 2.0, 1.0], &[1.0, 1.0, 2.0]).unwrap();
        assert!((c - 1.5).abs() < 1e-12);
        assert!(crossover(&[0.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]).is_none());
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(Error::InsufficientData("x".into())).code, EXIT_NUMERICAL);
        assert_eq!(
            CliError::from(Error::Io(std::io::Error::other("x"))).code,
            EXIT_IO
        );
        assert_eq!(partial(0, 3).unwrap(), EXIT_OK);
        assert_eq!(partial(1, 3).unwrap(), EXIT_PARTIAL);
        assert_eq!(partial(3, 3).unwrap_err().code, EXIT_NUMERICAL);
    }
}
