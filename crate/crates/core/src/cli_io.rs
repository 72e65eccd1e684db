//! Run configuration, snapshot persistence, diagnostics and the batch drivers
//! behind the command-line front end.
//!
//! Snapshot format `hykoop-field-v1`: `<name>.bin` holds the complex field as
//! little-endian IEEE-754 `(re, im)` pairs, row-major in `(q, p, x)` order;
//! `<name>.json` is the sidecar with shape, grid, ħ and time.

use std::cell::RefCell;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dense::DENSE_LIMIT;
use crate::densities_currents::{continuity_residual, instantaneous_continuity_residual, DensityFields};
use crate::error::{Error, Result};
use crate::hybrid_core::{apply_dense, dense_propagator_oracle, evolve, EvolveOptions, HybridHamiltonianSpec, HybridWavefunction};
use crate::lattice::{Axis, ComplexField, Grid, GridSpec, ScalarField};
use crate::madelung_trajectories::{
    advect_loop, advect_trajectories, ellipse_loop, poincare_loop_rate, LoopRate, TrajectoryEnsemble, VelocitySeries,
};
use crate::operator_algebra::algebra_suite;
use crate::positivity_family::{run_positivity, PositivityFamily, PositivityReport};
use crate::states::InitialState;

pub const FIELD_FORMAT: &str = "hykoop-field-v1";
pub const MANIFEST_FORMAT: &str = "hykoop-manifest-v1";
/// Largest grid a batch run accepts.
pub const MAX_RUN_POINTS: usize = 1 << 22;

pub const DIAGNOSTICS_HEADER: &str =
    "t,norm,energy,min_density,negativity_mass,boundary_mass,continuity_residual,loop_lhs,loop_rhs";

// ---------------------------------------------------------------- config

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    /// A `hykoop-field-v1` snapshot; relative paths resolve against the config file.
    File { file: PathBuf },
    Preset(InitialState),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSelection {
    pub energy: bool,
    pub density: bool,
    pub continuity: bool,
    pub loop_rate: bool,
    pub snapshots: bool,
    /// Export selectors written after the run: norm, energy, min_density, rho_c, loop.
    pub exports: Vec<String>,
}

impl Default for DiagnosticsSelection {
    fn default() -> Self {
        DiagnosticsSelection {
            energy: true,
            density: true,
            continuity: false,
            loop_rate: false,
            snapshots: true,
            exports: vec!["norm".into(), "rho_c".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSpec {
    pub center: [f64; 3],
    pub a: [f64; 3],
    pub b: [f64; 3],
    #[serde(default = "default_loop_points")]
    pub points: usize,
}

fn default_loop_points() -> usize {
    64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    #[serde(default)]
    pub seeds: Vec<[f64; 3]>,
    #[serde(default, rename = "loop")]
    pub loop_spec: Option<LoopSpec>,
    /// integration step for the paths; defaults to the run dt
    #[serde(default)]
    pub dt: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub hamiltonian: HybridHamiltonianSpec,
    pub initial: InitialSpec,
    pub t_final: f64,
    pub dt: f64,
    #[serde(default = "one")]
    pub snapshot_stride: usize,
    #[serde(default)]
    pub diagnostics: DiagnosticsSelection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub trajectories: Option<TrajectoryConfig>,
}

fn one() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("hykoop-out")
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse and validate; relative paths inside the config resolve against its directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let InitialSpec::File { file } = &mut cfg.initial {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite")))
            }
        };
        finite("t_final", self.t_final)?;
        finite("dt", self.dt)?;
        if self.snapshot_stride == 0 {
            return Err(Error::Config("snapshot_stride must be at least 1".into()));
        }
        let points = self.grid.total_points();
        if points > MAX_RUN_POINTS {
            return Err(Error::SizeGuard { points, limit: MAX_RUN_POINTS });
        }
        let grid = Grid::new(self.grid)?;
        self.hamiltonian.validate_for(&grid)?;
        self.options().steps()?;
        let bound = self.hamiltonian.stability_dt(&grid)?;
        if self.dt > bound {
            return Err(Error::Config(format!("dt {} exceeds stability bound {bound:.3e}", self.dt)));
        }
        for s in &self.diagnostics.exports {
            ExportSelector::parse(s)?;
        }
        if let Some(tc) = &self.trajectories {
            if let Some(dt) = tc.dt {
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(Error::Config("trajectory dt must be positive".into()));
                }
            }
            if let Some(l) = &tc.loop_spec {
                if l.points < 3 {
                    return Err(Error::Config("a loop needs at least 3 points".into()));
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid)
    }

    pub fn options(&self) -> EvolveOptions {
        EvolveOptions {
            diag_stride: self.snapshot_stride,
            energy: self.diagnostics.energy,
            density: self.diagnostics.density,
            ..EvolveOptions::new(self.t_final, self.dt)
        }
    }

    pub fn initial_state(&self, grid: &Grid) -> Result<HybridWavefunction> {
        match &self.initial {
            InitialSpec::Preset(s) => s.build(grid, self.hamiltonian.hbar),
            InitialSpec::File { file } => {
                let (psi, meta) = read_snapshot(file)?;
                if meta.grid != *grid.spec() {
                    return Err(Error::GridMismatch(format!("snapshot {} was written on another grid", file.display())));
                }
                HybridWavefunction::new(psi.field, self.hamiltonian.hbar)
            }
        }
    }
}

// ---------------------------------------------------------------- snapshots

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub format: String,
    /// `[n_q, n_p, n_x]`
    pub shape: [usize; 3],
    pub grid: GridSpec,
    pub hbar: f64,
    pub t: f64,
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

pub fn encode_field(values: &Array3<C64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 16);
    for v in values.iter() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8], shape: [usize; 3]) -> Result<Array3<C64>> {
    let want = shape.iter().product::<usize>() * 16;
    if bytes.len() < want {
        return Err(Error::Format(format!("truncated field: {} of {want} bytes", bytes.len())));
    }
    if bytes.len() > want {
        return Err(Error::Format(format!("shape mismatch: {} bytes for {want} expected", bytes.len())));
    }
    let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
    let vals: Vec<C64> = bytes.chunks_exact(16).map(|c| C64::new(f(&c[..8]), f(&c[8..]))).collect();
    Array3::from_shape_vec((shape[0], shape[1], shape[2]), vals).map_err(|e| Error::Format(e.to_string()))
}

/// Write `<path>` and its sidecar.  Both are flushed before returning.
pub fn write_snapshot(path: &Path, field: &ComplexField, hbar: f64, t: f64) -> Result<SnapshotMeta> {
    let (nq, np, nx) = field.grid.shape();
    let meta = SnapshotMeta { format: FIELD_FORMAT.into(), shape: [nq, np, nx], grid: *field.grid.spec(), hbar, t };
    let mut f = File::create(path)?;
    let values = field.values.as_standard_layout();
    f.write_all(&encode_field(&values.to_owned()))?;
    f.sync_all()?;
    let mut s = File::create(sidecar_path(path))?;
    s.write_all(serde_json::to_string_pretty(&meta)?.as_bytes())?;
    s.write_all(b"\n")?;
    s.sync_all()?;
    Ok(meta)
}

pub fn read_snapshot(path: &Path) -> Result<(HybridWavefunction, SnapshotMeta)> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::Format(format!("missing sidecar {}", side.display())));
    }
    let meta: SnapshotMeta = serde_json::from_str(&fs::read_to_string(&side)?)
        .map_err(|e| Error::Format(format!("bad sidecar {}: {e}", side.display())))?;
    if meta.format != FIELD_FORMAT {
        return Err(Error::Format(format!("version mismatch: {:?}, expected {FIELD_FORMAT:?}", meta.format)));
    }
    let grid = Grid::new(meta.grid)?;
    let (nq, np, nx) = grid.shape();
    if meta.shape != [nq, np, nx] {
        return Err(Error::Format(format!("shape mismatch: sidecar {:?} vs grid {:?}", meta.shape, [nq, np, nx])));
    }
    let values = decode_field(&fs::read(path)?, meta.shape)?;
    let psi = HybridWavefunction::new(ComplexField::new(&grid, values)?, meta.hbar)?;
    Ok((psi, meta))
}

// ---------------------------------------------------------------- diagnostics

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub norm: f64,
    pub energy: Option<f64>,
    pub min_density: Option<f64>,
    /// `∫ max(−ρ_c, 0)`
    pub negativity_mass: Option<f64>,
    pub boundary_mass: f64,
    pub continuity_residual: Option<f64>,
    pub loop_lhs: Option<f64>,
    pub loop_rhs: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl DiagnosticsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.t,
            self.norm,
            opt(self.energy),
            opt(self.min_density),
            opt(self.negativity_mass),
            self.boundary_mass,
            opt(self.continuity_residual),
            opt(self.loop_lhs),
            opt(self.loop_rhs)
        )
    }

    pub fn parse_row(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(Error::Format(format!("diagnostics row has {} columns", cols.len())));
        }
        let req = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("bad number {s:?}: {e}")));
        let o = |s: &str| if s.is_empty() { Ok(None) } else { req(s).map(Some) };
        Ok(DiagnosticsRecord {
            t: req(cols[0])?,
            norm: req(cols[1])?,
            energy: o(cols[2])?,
            min_density: o(cols[3])?,
            negativity_mass: o(cols[4])?,
            boundary_mass: req(cols[5])?,
            continuity_residual: o(cols[6])?,
            loop_lhs: o(cols[7])?,
            loop_rhs: o(cols[8])?,
        })
    }
}

/// Append-only diagnostics CSV, flushed after every row.
pub struct DiagnosticsWriter {
    out: BufWriter<File>,
}

impl DiagnosticsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{DIAGNOSTICS_HEADER}")?;
        out.flush()?;
        Ok(DiagnosticsWriter { out })
    }

    pub fn append(&mut self, r: &DiagnosticsRecord) -> Result<()> {
        writeln!(self.out, "{}", r.csv_row())?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_diagnostics_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut w = DiagnosticsWriter::create(path)?;
    for r in records {
        w.append(r)?;
    }
    Ok(())
}

pub fn read_diagnostics_csv(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(DIAGNOSTICS_HEADER) {
        return Err(Error::Format("unexpected diagnostics header".into()));
    }
    lines.filter(|l| !l.is_empty()).map(DiagnosticsRecord::parse_row).collect()
}

pub fn diagnostics_record(
    psi: &HybridWavefunction,
    spec: &HybridHamiltonianSpec,
    t: f64,
    sel: &DiagnosticsSelection,
) -> Result<DiagnosticsRecord> {
    let g = psi.grid();
    let mut r = DiagnosticsRecord { t, norm: psi.norm_sq(), boundary_mass: g.boundary_mass(psi.values()), ..Default::default() };
    if sel.energy {
        r.energy = Some(crate::hybrid_core::energy(psi, spec)?);
    }
    if sel.density {
        let d = DensityFields::compute(psi)?;
        r.min_density = Some(d.min_d);
        r.negativity_mass = Some(d.negativity_mass);
    }
    if sel.continuity {
        r.continuity_residual = Some(instantaneous_continuity_residual(psi, spec)?);
    }
    Ok(r)
}

// ---------------------------------------------------------------- exports

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportSelector {
    Norm,
    Energy,
    MinDensity,
    RhoC,
    Loop,
}

impl ExportSelector {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "norm" => Self::Norm,
            "energy" => Self::Energy,
            "min_density" => Self::MinDensity,
            "rho_c" => Self::RhoC,
            "loop" => Self::Loop,
            other => return Err(Error::Config(format!("unknown export selector {other:?}"))),
        })
    }

    pub fn file_name(&self) -> &'static str {
        match self {
            Self::Norm => "norm.csv",
            Self::Energy => "energy.csv",
            Self::MinDensity => "min_density.csv",
            Self::RhoC => "rho_c.csv",
            Self::Loop => "loop.csv",
        }
    }
}

/// Two-column `(t, value)` series from the diagnostics records.
pub fn export_series(path: &Path, records: &[DiagnosticsRecord], sel: ExportSelector) -> Result<()> {
    let (name, get): (&str, fn(&DiagnosticsRecord) -> Option<f64>) = match sel {
        ExportSelector::Norm => ("norm", |r| Some(r.norm)),
        ExportSelector::Energy => ("energy", |r| r.energy),
        ExportSelector::MinDensity => ("min_density", |r| r.min_density),
        _ => return Err(Error::Config(format!("{sel:?} is not a time series"))),
    };
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "t,{name}")?;
    for r in records {
        if let Some(v) = get(r) {
            writeln!(out, "{},{}", r.t, v)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `ρ_c` as `(q, p, value)` triplets, q-major.
pub fn export_rho_c(path: &Path, rho_c: &ScalarField) -> Result<()> {
    let g = &rho_c.grid;
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "q,p,value")?;
    for (i, q) in g.coords(Axis::Q).iter().enumerate() {
        for (j, p) in g.coords(Axis::P).iter().enumerate() {
            writeln!(out, "{},{},{}", q, p, rho_c.values[[i, j, 0]])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn export_loop(path: &Path, rate: &LoopRate) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "t,lhs,rhs")?;
    for ((t, l), r) in rate.times.iter().zip(&rate.lhs).zip(&rate.rhs) {
        writeln!(out, "{t},{l},{r}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn export_paths(path: &Path, ens: &TrajectoryEnsemble) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "seed,t,q,p,x")?;
    for (s, p) in ens.paths.iter().enumerate() {
        for (t, z) in ens.times.iter().zip(p) {
            writeln!(out, "{s},{t},{},{},{}", z[0], z[1], z[2])?;
        }
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- manifest

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub files: Vec<String>,
}

pub fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, files: &[String]) -> Result<PathBuf> {
    let m = Manifest {
        format: MANIFEST_FORMAT.into(),
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        files: files.to_vec(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(path)
}

// ---------------------------------------------------------------- drivers

#[derive(Clone, Debug)]
pub struct SimulationOutput {
    pub records: Vec<DiagnosticsRecord>,
    pub final_state: HybridWavefunction,
    pub loop_rate: Option<LoopRate>,
    pub files: Vec<String>,
}

fn loop_points(grid: &Grid, l: &LoopSpec) -> Vec<[f64; 3]> {
    let mut pts = ellipse_loop(l.center, l.a, l.b, l.points);
    if !grid.has_spatial_x() {
        for p in &mut pts {
            p[2] = 0.0;
        }
    }
    pts
}

fn fill_loop_columns(records: &mut [DiagnosticsRecord], rate: &LoopRate) {
    for r in records {
        if let Some(i) = rate.times.iter().position(|t| (t - r.t).abs() < 1e-9 * r.t.abs().max(1.0)) {
            r.loop_lhs = Some(rate.lhs[i]);
            r.loop_rhs = Some(rate.rhs[i]);
        }
    }
}

/// Run a configuration: snapshots, diagnostics CSV, requested exports and the manifest.
pub fn simulate(cfg: &RunConfig) -> Result<SimulationOutput> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let spec = &cfg.hamiltonian;
    let psi0 = cfg.initial_state(&grid)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let mut files = vec!["diagnostics.csv".to_string()];
    let writer = RefCell::new(DiagnosticsWriter::create(&dir.join("diagnostics.csv"))?);
    let records = RefCell::new(Vec::new());
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let loop_spec = if cfg.diagnostics.loop_rate {
        let l = cfg.trajectories.as_ref().and_then(|t| t.loop_spec.clone());
        Some(l.ok_or_else(|| Error::Config("loop_rate needs trajectories.loop".into()))?)
    } else {
        None
    };
    let series = RefCell::new(VelocitySeries::new(&grid, spec)?);
    let steps = cfg.options().steps()?;
    let snap_names = RefCell::new(Vec::new());
    let mut observer = |step: usize, t: f64, u: &Array3<C64>| {
        if failure.borrow().is_some() {
            return;
        }
        let res = (|| -> Result<()> {
            if loop_spec.is_some() {
                series.borrow_mut().push(t, u)?;
            }
            if step % cfg.snapshot_stride != 0 && step != steps {
                return Ok(());
            }
            let psi = HybridWavefunction::new(ComplexField::new(&grid, u.clone())?, spec.hbar)?;
            if cfg.diagnostics.snapshots {
                let name = format!("snap_{step:06}.bin");
                write_snapshot(&dir.join(&name), &psi.field, spec.hbar, t)?;
                snap_names.borrow_mut().push(name);
            }
            let r = diagnostics_record(&psi, spec, t, &cfg.diagnostics)?;
            writer.borrow_mut().append(&r)?;
            records.borrow_mut().push(r);
            Ok(())
        })();
        if let Err(e) = res {
            *failure.borrow_mut() = Some(e);
        }
    };
    let opts = EvolveOptions { energy: false, density: false, diag_stride: usize::MAX, ..cfg.options() };
    let result = evolve(spec, &psi0, &opts, &mut [&mut observer]);
    drop(writer);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let result = result?;
    let mut records = records.into_inner();
    for name in snap_names.into_inner() {
        files.push(sidecar_path(Path::new(&name)).display().to_string());
        files.push(name);
    }
    let mut loop_rate = None;
    if let Some(l) = &loop_spec {
        let tdt = cfg.trajectories.as_ref().and_then(|t| t.dt).unwrap_or(cfg.dt);
        let ens = advect_loop(&series.into_inner(), &loop_points(&grid, l), tdt)?;
        let rate = poincare_loop_rate(&ens, &spec.potential_expr(), &grid)?;
        fill_loop_columns(&mut records, &rate);
        write_diagnostics_csv(&dir.join("diagnostics.csv"), &records)?;
        loop_rate = Some(rate);
    }
    for s in &cfg.diagnostics.exports {
        let sel = ExportSelector::parse(s)?;
        let path = dir.join(sel.file_name());
        match sel {
            ExportSelector::RhoC => export_rho_c(&path, &DensityFields::compute(&psi0)?.rho_c)?,
            ExportSelector::Loop => match &loop_rate {
                Some(r) => export_loop(&path, r)?,
                None => return Err(Error::Config("loop export needs diagnostics.loop_rate".into())),
            },
            _ => export_series(&path, &records, sel)?,
        }
        files.push(sel.file_name().into());
    }
    files.push("manifest.json".into());
    write_manifest(dir, "simulate", cfg, &files)?;
    Ok(SimulationOutput { records, final_state: result.state, loop_rate, files })
}

/// One row of a PASS/FAIL table.  `pass = None` marks a reported-only row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckRow {
    pub suite: String,
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: Option<bool>,
}

impl CheckRow {
    fn le(suite: &str, name: &str, value: f64, tolerance: f64) -> Self {
        CheckRow { suite: suite.into(), name: name.into(), value, tolerance, pass: Some(value <= tolerance) }
    }

    fn report(suite: &str, name: &str, value: f64) -> Self {
        CheckRow { suite: suite.into(), name: name.into(), value, tolerance: f64::NAN, pass: None }
    }

    pub fn status(&self) -> &'static str {
        match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "INFO",
        }
    }
}

pub fn format_table(rows: &[CheckRow]) -> String {
    let mut s = format!("{:<11} {:<44} {:>12} {:>10}  status\n", "suite", "check", "value", "tol");
    for r in rows {
        let tol = if r.tolerance.is_nan() { "-".to_string() } else { format!("{:.1e}", r.tolerance) };
        s += &format!("{:<11} {:<44} {:>12.3e} {:>10}  {}\n", r.suite, r.name, r.value, tol, r.status());
    }
    s
}

pub const SUITES: [&str; 4] = ["dynamics", "oracle", "algebra", "positivity"];

pub fn run_checks(cfg: &RunConfig, suite: &str) -> Result<Vec<CheckRow>> {
    let wanted: Vec<&str> = match suite {
        "all" => SUITES.to_vec(),
        s if SUITES.contains(&s) => vec![s],
        other => return Err(Error::Config(format!("unknown suite {other:?}"))),
    };
    let mut rows = Vec::new();
    for s in wanted {
        match s {
            "dynamics" => rows.extend(dynamics_checks(cfg)?),
            "oracle" => rows.push(oracle_row(cfg)?),
            "algebra" => {
                for r in algebra_suite(cfg.hamiltonian.hbar, cfg.seed)? {
                    rows.push(CheckRow::le("algebra", &r.name, r.residual, r.tolerance));
                }
            }
            _ => rows.extend(positivity_checks(cfg)?),
        }
    }
    Ok(rows)
}

fn dynamics_checks(cfg: &RunConfig) -> Result<Vec<CheckRow>> {
    let grid = cfg.grid()?;
    let spec = &cfg.hamiltonian;
    let psi0 = cfg.initial_state(&grid)?;
    let steps = cfg.options().steps()?;
    let mid = steps / 2;
    let window = RefCell::new(Vec::new());
    let mut obs = |step: usize, _t: f64, u: &Array3<C64>| {
        if steps >= 2 && step + 1 >= mid && step <= mid + 1 {
            window.borrow_mut().push(u.clone());
        }
    };
    let opts = EvolveOptions { energy: true, density: true, diag_stride: cfg.snapshot_stride, ..cfg.options() };
    let run = evolve(spec, &psi0, &opts, &mut [&mut obs])?;
    let d0 = &run.diagnostics[0];
    let norm_drift = run.diagnostics.iter().map(|d| (d.norm - d0.norm).abs()).fold(0.0, f64::max);
    let e0 = d0.energy.unwrap_or(0.0);
    let energy_drift = run.diagnostics.iter().map(|d| (d.energy.unwrap_or(0.0) - e0).abs()).fold(0.0, f64::max);
    let m = crate::densities_currents::marginal_report(&run.state)?;
    let mut rows = vec![
        CheckRow::le("dynamics", "norm drift |‖Υ(t)‖²−‖Υ(0)‖²|", norm_drift, 1e-8),
        CheckRow::le("dynamics", "energy drift |h(t)−h(0)|", energy_drift, 1e-7),
        CheckRow::le("dynamics", "|∫𝒟 − ‖Υ‖²|", (m.integral - run.state.norm_sq()).abs(), 1e-10),
        CheckRow::le("dynamics", "quantum marginal negativity", (-m.rho_q_min).max(0.0), 1e-10),
    ];
    let w = window.into_inner();
    if w.len() == 3 {
        let snaps = w
            .into_iter()
            .map(|u| HybridWavefunction::new(ComplexField::new(&grid, u)?, spec.hbar))
            .collect::<Result<Vec<_>>>()?;
        let dt = cfg.t_final / steps as f64;
        let r = continuity_residual(&snaps, spec, dt)?;
        rows.push(CheckRow::le("dynamics", "continuity residual (mid-run)", r[0], 1e-4));
    }
    rows.push(CheckRow::report("dynamics", "min 𝒟 over run", run.diagnostics.iter().filter_map(|d| d.min_density).fold(f64::INFINITY, f64::min)));
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleReport {
    pub t: f64,
    pub l2: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn line(&self) -> String {
        format!(
            "L2(RK4, expm) = {:.3e} {} {:.0e} at t = {}  {}",
            self.l2,
            if self.pass { "<=" } else { ">" },
            self.tolerance,
            self.t,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// RK4 at `t_final` against the dense `exp(−iT L̂/ħ)` propagator.
pub fn run_oracle(cfg: &RunConfig) -> Result<OracleReport> {
    let grid = cfg.grid()?;
    crate::dense::size_guard(grid.len())?;
    let psi0 = cfg.initial_state(&grid)?;
    let opts = EvolveOptions { energy: false, density: false, ..cfg.options() };
    let rk = evolve(&cfg.hamiltonian, &psi0, &opts, &mut [])?;
    let u = dense_propagator_oracle(&cfg.hamiltonian, &grid, cfg.t_final)?;
    let exact = apply_dense(&u, &psi0)?;
    let l2 = grid.l2_distance(rk.state.values(), exact.values());
    Ok(OracleReport { t: cfg.t_final, l2, tolerance: 1e-6, pass: l2 <= 1e-6 })
}

fn oracle_row(cfg: &RunConfig) -> Result<CheckRow> {
    if cfg.grid.total_points() > DENSE_LIMIT {
        return Ok(CheckRow::report("oracle", "skipped: grid above dense limit", cfg.grid.total_points() as f64));
    }
    let r = run_oracle(cfg)?;
    Ok(CheckRow::le("oracle", "L2(RK4, expm)", r.l2, r.tolerance))
}

fn positivity_checks(cfg: &RunConfig) -> Result<Vec<CheckRow>> {
    let grid = cfg.grid()?;
    let fam = match PositivityFamily::from_spec(&cfg.hamiltonian, &grid) {
        Ok(f) => f,
        Err(Error::Config(msg)) => {
            let mut r = CheckRow::report("positivity", "outside family; evolve min 𝒟 reported", 0.0);
            r.name = format!("outside family ({msg})");
            return Ok(vec![r]);
        }
        Err(e) => return Err(e),
    };
    let psi0 = cfg.initial_state(&grid)?;
    let (_, rep) = run_positivity(&fam, &psi0, cfg.t_final, cfg.dt, cfg.snapshot_stride)?;
    let m0 = rep.min_sector_density[0];
    let dip = rep.min_sector_density.iter().map(|m| m0 - m).fold(0.0, f64::max);
    Ok(vec![
        CheckRow::le("positivity", "sector min D̃ decrease", dip, 1e-6),
        CheckRow::le("positivity", "ρ_c negativity over run", (-rep.worst_rho_c()).max(0.0), 1e-6),
        CheckRow::report("positivity", "initial min D̃", m0),
    ])
}

/// Sector-wise positivity run; writes `positivity.csv` and `positivity.json`.
pub fn positivity_command(cfg: &RunConfig) -> Result<PositivityReport> {
    let grid = cfg.grid()?;
    let fam = PositivityFamily::from_spec(&cfg.hamiltonian, &grid)?;
    let psi0 = cfg.initial_state(&grid)?;
    let (_, rep) = run_positivity(&fam, &psi0, cfg.t_final, cfg.dt, cfg.snapshot_stride)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(File::create(dir.join("positivity.csv"))?);
    writeln!(out, "t,min_sector_density,min_rho_c")?;
    for ((t, a), b) in rep.times.iter().zip(&rep.min_sector_density).zip(&rep.min_rho_c) {
        writeln!(out, "{t},{a},{b}")?;
    }
    out.flush()?;
    fs::write(dir.join("positivity.json"), serde_json::to_string_pretty(&rep)? + "\n")?;
    write_manifest(dir, "positivity", cfg, &["positivity.csv".into(), "positivity.json".into(), "manifest.json".into()])?;
    Ok(rep)
}

#[derive(Clone, Debug)]
pub struct TrajectoryOutput {
    pub paths: Option<TrajectoryEnsemble>,
    pub loop_rate: Option<LoopRate>,
}

/// Evolve, then advect the configured seeds and loop; writes `paths.csv` and `loop.csv`.
pub fn trajectories_command(cfg: &RunConfig) -> Result<TrajectoryOutput> {
    let tc = cfg.trajectories.clone().ok_or_else(|| Error::Config("config has no trajectories section".into()))?;
    if tc.seeds.is_empty() && tc.loop_spec.is_none() {
        return Err(Error::Config("trajectories needs seeds or a loop".into()));
    }
    let grid = cfg.grid()?;
    let spec = &cfg.hamiltonian;
    let psi0 = cfg.initial_state(&grid)?;
    let series = RefCell::new(VelocitySeries::new(&grid, spec)?);
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let mut obs = |_: usize, t: f64, u: &Array3<C64>| {
        if let Err(e) = series.borrow_mut().push(t, u) {
            failure.borrow_mut().get_or_insert(e);
        }
    };
    let opts = EvolveOptions { energy: false, density: false, ..cfg.options() };
    evolve(spec, &psi0, &opts, &mut [&mut obs])?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let series = series.into_inner();
    let tdt = tc.dt.unwrap_or(cfg.dt);
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let paths = if tc.seeds.is_empty() {
        None
    } else {
        let e = advect_trajectories(&series, &tc.seeds, tdt)?;
        export_paths(&dir.join("paths.csv"), &e)?;
        files.push("paths.csv".to_string());
        Some(e)
    };
    let loop_rate = match &tc.loop_spec {
        Some(l) => {
            let ens = advect_loop(&series, &loop_points(&grid, l), tdt)?;
            let r = poincare_loop_rate(&ens, &spec.potential_expr(), &grid)?;
            export_loop(&dir.join("loop.csv"), &r)?;
            files.push("loop.csv".into());
            Some(r)
        }
        None => None,
    };
    files.push("manifest.json".into());
    write_manifest(dir, "trajectories", cfg, &files)?;
    Ok(TrajectoryOutput { paths, loop_rate })
}

/// Machine-readable error body for stderr.
pub fn error_json(e: &Error) -> String {
    serde_json::json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() }).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::AxisSpec;
    use crate::states::Gauss1D;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn small_config(dir: &Path) -> RunConfig {
        RunConfig {
            grid: GridSpec::hybrid(AxisSpec::new(8, 2.0 * PI, 0.0), AxisSpec::centered(16, 12.0), AxisSpec::new(8, 2.0 * PI, 0.0)),
            hamiltonian: HybridHamiltonianSpec::new(1.0, 1.0, 1.0),
            initial: InitialSpec::Preset(InitialState::Gaussian {
                q: Gauss1D::new(PI, 0.6, 0.0),
                p: Gauss1D::new(0.0, 1.0, 0.0),
                x: Some(Gauss1D::new(PI, 0.7, 0.0)),
                levels: None,
            }),
            t_final: 0.02,
            dt: 0.01,
            snapshot_stride: 1,
            diagnostics: DiagnosticsSelection::default(),
            seed: 0,
            output_dir: dir.to_path_buf(),
            trajectories: None,
        }
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(GridSpec::levels(AxisSpec::new(4, 1.0, 0.0), AxisSpec::centered(6, 2.0), 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = ComplexField::new(&g, Array3::from_shape_fn(g.shape(), |_| C64::new(rng.random(), rng.random::<f64>() - 0.5))).unwrap();
        let path = dir.path().join("f.bin");
        write_snapshot(&path, &f, 0.3, 1.25).unwrap();
        let (back, meta) = read_snapshot(&path).unwrap();
        assert_eq!(meta.t, 1.25);
        assert_eq!(meta.hbar, 0.3);
        assert!(back.values().iter().zip(f.values.iter()).all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()));
    }

    #[test]
    fn snapshot_errors() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(GridSpec::classical(AxisSpec::new(4, 1.0, 0.0), AxisSpec::centered(4, 2.0))).unwrap();
        let f = ComplexField::from_fn(&g, |z| C64::new(z[0], z[1]));
        let path = dir.path().join("a.bin");
        write_snapshot(&path, &f, 1.0, 0.0).unwrap();

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(read_snapshot(&path), Err(Error::Format(m)) if m.contains("truncated")));
        fs::write(&path, &bytes).unwrap();

        let side = sidecar_path(&path);
        let text = fs::read_to_string(&side).unwrap();
        fs::write(&side, text.replace(FIELD_FORMAT, "hykoop-field-v0")).unwrap();
        assert!(matches!(read_snapshot(&path), Err(Error::Format(m)) if m.contains("version")));
        fs::write(&side, text.replace("\"shape\": [\n    4", "\"shape\": [\n    5")).unwrap();
        assert!(matches!(read_snapshot(&path), Err(Error::Format(m)) if m.contains("shape")));

        fs::remove_file(&side).unwrap();
        assert!(matches!(read_snapshot(&path), Err(Error::Format(m)) if m.contains("sidecar")));
    }

    #[test]
    fn encoding_is_little_endian() {
        let a = Array3::from_elem((1, 1, 1), C64::new(1.0, -2.0));
        let b = encode_field(&a);
        assert_eq!(&b[..8], &[0, 0, 0, 0, 0, 0, 0xf0, 0x3f]);
        assert_eq!(&b[8..], &[0, 0, 0, 0, 0, 0, 0, 0xc0]);
    }

    #[test]
    fn diagnostics_rows_round_trip() {
        let r = DiagnosticsRecord { t: 0.1, norm: 1.0 - 1e-12, energy: Some(-0.5), boundary_mass: 3e-20, ..Default::default() };
        assert_eq!(DiagnosticsRecord::parse_row(&r.csv_row()).unwrap(), r);
        assert!(DiagnosticsRecord::parse_row("1,2").is_err());
    }

    #[test]
    fn unknown_fields_and_selectors_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let mut v = serde_json::to_value(&cfg).unwrap();
        v["bogus"] = serde_json::json!(1);
        let e = RunConfig::from_json(&v.to_string()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let mut c = cfg.clone();
        c.diagnostics.exports.push("heatmap".into());
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let mut c = cfg.clone();
        c.dt = 10.0;
        c.t_final = 10.0;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let mut c = cfg;
        c.grid.p.n = 1 << 20;
        assert_eq!(c.validate().unwrap_err().exit_code(), 4);
    }

    #[test]
    fn config_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn simulate_writes_expected_files_and_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let out_a = simulate(&small_config(a.path())).unwrap();
        simulate(&small_config(b.path())).unwrap();
        assert_eq!(out_a.records.len(), 3);
        let csv_a = fs::read(a.path().join("diagnostics.csv")).unwrap();
        assert_eq!(csv_a, fs::read(b.path().join("diagnostics.csv")).unwrap());
        for f in &out_a.files {
            assert!(a.path().join(f).exists(), "{f}");
        }
        let m: Manifest = serde_json::from_str(&fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m.config, small_config(a.path()));
        let back = read_diagnostics_csv(&a.path().join("diagnostics.csv")).unwrap();
        assert_eq!(back, out_a.records);
    }

    #[test]
    fn rho_c_triplets_integrate_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        simulate(&cfg).unwrap();
        let text = fs::read_to_string(dir.path().join("rho_c.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("q,p,value"));
        let g = cfg.grid().unwrap();
        let w = g.spacing(Axis::Q) * g.spacing(Axis::P);
        let total: f64 = lines.map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum::<f64>() * w;
        assert!((total - 1.0).abs() < 1e-8, "{total}");
        let norm = fs::read_to_string(dir.path().join("norm.csv")).unwrap();
        assert!(norm.starts_with("t,norm\n"));
        assert_eq!(norm.lines().count(), 4);
    }

    #[test]
    fn error_json_carries_kind_and_code() {
        let v: serde_json::Value = serde_json::from_str(&error_json(&Error::SizeGuard { points: 5, limit: 4 })).unwrap();
        assert_eq!(v["error"], "size_guard");
        assert_eq!(v["exit_code"], 4);
    }
}
