//! Experiment orchestration: cell coefficients, plate solves, fine-scale
//! ladders and unfolding diagnostics, each producing a [`RunReport`].

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{self, CacheError, CacheKey};
use crate::cell::{build_cell_mesh, CellError, CellMesh};
use crate::config::{CellSection, PhaseSection, RunConfig, SolverSection};
use crate::corrector::{assemble_cell_stiffness, corrector_rhs, solve_correctors, CorrectorError, CorrectorMode, CorrectorSet};
use crate::fine::{
    linearization_study, recovery_energy, solve_linear_fine, DisplacementAnsatz, FineError, FineGeometry, FineSolution,
    LinearizationReport,
};
use crate::homogenize::{finish_cell, two_scale_energy_min, HomogenizeError, HomogenizedCell, PlateStrainPair, PlateTensor};
use crate::linalg::{norm, CgStats};
use crate::plate::{assemble_plate_system, solve_plate, PlateError, PlateScales, PlateSolution};
use crate::report::{CriterionResult, ReportError, RunReport, Table, Value};
use crate::unfold::{
    integration_identity, kl_audit, two_scale_error, unfold_gradient_identity, KlAudit, TwoScaleError, TwoScaleField,
    UnfoldError,
};
use crate::vtk;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Relative agreement required between two-scale minima and the plate tensor form.
pub const PAIR_TOL: f64 = 1e-8;
/// Relative tolerance of the plate minimization identity.
pub const PLATE_IDENTITY_TOL: f64 = 1e-10;
/// Largest admissible relative SHD gap at the finest ε.
pub const SHD_GAP_MAX: f64 = 0.2;
pub const LINEARIZATION_SLOPE_MIN: f64 = 0.9;
pub const LINEARIZATION_REMAINDER_MAX: f64 = 1e-3;
/// Round-off allowance of the commutativity bound, relative to `|m_L|`.
pub const COMMUTE_SLACK: f64 = 1e-12;
pub const UNFOLD_IDENTITY_TOL: f64 = 1e-12;
/// Largest admissible max/min spread of an audited constant across the ladder.
pub const AUDIT_SPREAD_MAX: f64 = 3.0;

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("cell: {0}")]
    Cell(#[from] CellError),
    #[error("corrector: {0}")]
    Corrector(#[from] CorrectorError),
    #[error("homogenize: {0}")]
    Homogenize(#[from] HomogenizeError),
    #[error("plate: {0}")]
    Plate(#[from] PlateError),
    #[error("fine: {0}")]
    Fine(#[from] FineError),
    #[error("unfold: {0}")]
    Unfold(#[from] UnfoldError),
    #[error("cache: {0}")]
    Cache(#[from] CacheError),
    #[error("report: {0}")]
    Report(#[from] ReportError),
    #[error("config: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("coefficients file {path} not found; run the `cell` command with this config first")]
    MissingCoefficients { path: String },
    #[error("coefficients file {path} was produced for a different cell setup; rerun the `cell` command")]
    StaleCoefficients { path: String },
    #[error("coefficients file {path}: {message}")]
    BadCoefficients { path: String, message: String },
    #[error("cached correctors do not solve the cell problem (relative residual {0:e}); delete the cache")]
    StaleCache(f64),
    #[error("worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StudyError + '_ {
    move |source| StudyError::Io { path: path.display().to_string(), source }
}

/// Options shared by all commands.
#[derive(Clone, Debug, Default)]
pub struct StudyOptions {
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub emit_vtk: bool,
    /// record wall times; off by default so reports are byte-reproducible
    pub timings: bool,
}

/// Runs `f` on a pool of the configured width.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, StudyError> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| StudyError::Pool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Serialize)]
struct CellKeyParts<'a> {
    cell: &'a CellSection,
    phases: &'a [PhaseSection],
    cell_rel_tol: f64,
    cell_max_iter: usize,
}

/// Key of everything that determines the correctors.
pub fn cell_key(cfg: &RunConfig) -> CacheKey {
    let SolverSection { cell_rel_tol, cell_max_iter, .. } = cfg.solver;
    let parts = CellKeyParts { cell: &cfg.cell, phases: &cfg.phases, cell_rel_tol, cell_max_iter };
    CacheKey::from_description(&toml::to_string(&parts).expect("cell key serializes"))
}

/// Builds the cell, solving or loading correctors, and forms the plate tensor.
pub fn prepare_cell(cfg: &RunConfig, opts: &StudyOptions) -> Result<HomogenizedCell, StudyError> {
    let phases = cfg.phase_assignment()?;
    let mesh = build_cell_mesh(&cfg.cell_geometry(), cfg.cell.resolution, cfg.cell.order)?;
    phases.validate(&mesh)?;
    let stiffness = assemble_cell_stiffness(&mesh, &phases)?;
    let key = cell_key(cfg);
    let cached = match &opts.cache_dir {
        Some(dir) => cache::load(dir, &key)?,
        None => None,
    };
    let correctors = match cached {
        Some(fields) if fields.len() == 6 && fields.iter().all(|f| f.len() == stiffness.dofmap.n_dofs()) => {
            let rhs: Vec<Vec<f64>> =
                CorrectorMode::ALL.iter().map(|&mode| corrector_rhs(&mesh, &phases, &stiffness.dofmap, mode)).collect();
            // some load cases vanish up to roundoff by symmetry, so residuals are
            // measured against the largest right-hand side
            let scale = rhs.iter().map(|b| norm(b)).fold(f64::MIN_POSITIVE, f64::max);
            let stats = rhs
                .iter()
                .zip(&fields)
                .map(|(b, x)| {
                    let kx = stiffness.matrix.apply(x);
                    let r: Vec<f64> = kx.iter().zip(b).map(|(p, q)| p - q).collect();
                    CgStats { iterations: 0, rel_residual: norm(&r) / scale }
                })
                .collect::<Vec<_>>();
            let worst = stats.iter().fold(0.0f64, |m, s| m.max(s.rel_residual));
            if worst > 1e3 * cfg.solver.cell_rel_tol.max(1e-14) {
                return Err(StudyError::StaleCache(worst));
            }
            CorrectorSet { fields, stats }
        }
        _ => {
            let set = solve_correctors(&stiffness, &mesh, &phases, cfg.cell_cg())?;
            if let Some(dir) = &opts.cache_dir {
                cache::store(dir, &key, &set.fields)?;
            }
            set
        }
    };
    Ok(finish_cell(mesh, phases, stiffness, correctors, cfg.cell.normalization)?)
}

/// Energy and load prefactors of the plate functional matching the fine problem.
///
/// The energy density is `∫_𝒴 Q = V pᵀTp` with `V` the normalization volume,
/// and the load acts on the material part `𝒴*` only.
pub fn plate_scales(mesh: &CellMesh, cell: &HomogenizedCell) -> PlateScales {
    PlateScales { energy: cell.normalization.volume(mesh), load: mesh.material_volume() }
}

/// Machine-readable coefficients consumed by the plate command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientsFile {
    pub cell_key: String,
    pub code_version: String,
    pub energy_scale: f64,
    pub load_scale: f64,
    pub a: [[f64; 3]; 3],
    pub b: [[f64; 3]; 3],
    pub c: [[f64; 3]; 3],
}

fn rows(m: &nalgebra::Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

impl CoefficientsFile {
    pub fn new(cfg: &RunConfig, cell: &HomogenizedCell) -> Self {
        let s = plate_scales(&cell.mesh, cell);
        CoefficientsFile {
            cell_key: cell_key(cfg).hex(),
            code_version: CODE_VERSION.into(),
            energy_scale: s.energy,
            load_scale: s.load,
            a: rows(&cell.tensor.a),
            b: rows(&cell.tensor.b),
            c: rows(&cell.tensor.c),
        }
    }

    pub fn tensor(&self) -> PlateTensor {
        let m = |r: &[[f64; 3]; 3]| nalgebra::Matrix3::from_fn(|i, j| r[i][j]);
        PlateTensor { a: m(&self.a), b: m(&self.b), c: m(&self.c) }
    }

    pub fn scales(&self) -> PlateScales {
        PlateScales { energy: self.energy_scale, load: self.load_scale }
    }

    pub fn path(out: &Path) -> PathBuf {
        out.join("coefficients.toml")
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf, StudyError> {
        let path = Self::path(out);
        fs::write(&path, toml::to_string(self).expect("coefficients serialize")).map_err(io_err(&path))?;
        Ok(path)
    }

    /// Reads the coefficients for `cfg`, refusing files from another cell setup.
    pub fn read(out: &Path, cfg: &RunConfig) -> Result<Self, StudyError> {
        let path = Self::path(out);
        let name = path.display().to_string();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StudyError::MissingCoefficients { path: name })
            }
            Err(source) => return Err(StudyError::Io { path: name, source }),
        };
        let file: CoefficientsFile =
            toml::from_str(&text).map_err(|e| StudyError::BadCoefficients { path: name.clone(), message: e.to_string() })?;
        if file.cell_key != cell_key(cfg).hex() {
            return Err(StudyError::StaleCoefficients { path: name });
        }
        Ok(file)
    }
}

fn provenance(cfg: &RunConfig, command: &str, seed: u64) -> Table {
    let mut t = Table::new("provenance", &cfg.short_hash(), &["key", "value"]);
    for (k, v) in [
        ("command", command.to_string()),
        ("code_version", CODE_VERSION.to_string()),
        ("config_sha256", cfg.hash()),
        ("seed", seed.to_string()),
    ] {
        t.push(vec![k.into(), v.into()]).expect("two columns");
    }
    t
}

fn kv_table(name: &str, cfg: &RunConfig, items: &[(&str, Value)]) -> Table {
    let mut t = Table::new(name, &cfg.short_hash(), &["key", "value"]);
    for (k, v) in items {
        t.push(vec![(*k).into(), v.clone()]).expect("two columns");
    }
    t
}

fn write_text(path: &Path, text: &str) -> Result<(), StudyError> {
    fs::write(path, text).map_err(io_err(path))
}

fn ensure_out(opts: &StudyOptions) -> Result<(), StudyError> {
    fs::create_dir_all(&opts.out).map_err(io_err(&opts.out))
}

fn seconds(t: Instant, opts: &StudyOptions) -> Value {
    if opts.timings {
        t.elapsed().as_secs_f64().into()
    } else {
        Value::Empty
    }
}

/// Homogenizes the cell, writes the coefficients file and checks random
/// strain pairs against direct two-scale minimization.
pub fn cmd_cell(cfg: &RunConfig, opts: &StudyOptions, seed: u64) -> Result<RunReport, StudyError> {
    ensure_out(opts)?;
    let cell = prepare_cell(cfg, opts)?;
    let hash = cfg.short_hash();
    CoefficientsFile::new(cfg, &cell).write(&opts.out)?;
    let mut coeffs = Table::new("coefficients", &hash, &["entry", "value"]);
    for (name, v) in cell.tensor.entries() {
        coeffs.push(vec![name.into(), v.into()])?;
    }
    let worst_cg = cell.correctors.stats.iter().fold(0.0f64, |m, s| m.max(s.rel_residual));
    let min_eig = cell.tensor.min_eigenvalue();
    let summary = kv_table(
        "cell_summary",
        cfg,
        &[
            ("min_eigenvalue", min_eig.into()),
            ("max_asymmetry", cell.tensor.max_asymmetry().into()),
            ("material_fraction", cell.mesh.material_fraction().into()),
            ("n_dofs", cell.dofmap().n_dofs().into()),
            ("max_corrector_residual", worst_cg.into()),
        ],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<PlateStrainPair> =
        (0..20).map(|_| PlateStrainPair::from_array(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))).collect();
    let mins = pairs
        .par_iter()
        .map(|p| two_scale_energy_min(p, &cell.mesh, &cell.phases, &cell.stiffness, cfg.cell_cg(), cell.normalization))
        .collect::<Result<Vec<_>, _>>()?;
    let mut checks = Table::new("pair_checks", &hash, &["pair", "two_scale_min", "quadratic_form", "rel_diff"]);
    let mut worst = 0.0f64;
    for (i, (p, m)) in pairs.iter().zip(&mins).enumerate() {
        let q = cell.tensor.quadratic_form(p);
        let rel = (m.energy - q).abs() / q.abs();
        worst = worst.max(rel);
        checks.push(vec![i.into(), m.energy.into(), q.into(), rel.into()])?;
    }
    if opts.emit_vtk {
        write_text(&opts.out.join("correctors.vtk"), &vtk::correctors_vtk(&cell.mesh, cell.dofmap(), &cell.correctors))?;
    }
    Ok(RunReport {
        tables: vec![provenance(cfg, "cell", seed), coeffs, summary, checks],
        criteria: vec![
            CriterionResult::new("coercivity", min_eig > 0.0, format!("min eigenvalue {min_eig:.6e}")),
            CriterionResult::new(
                "two_scale_equivalence",
                worst <= PAIR_TOL,
                format!("max relative difference {worst:.3e} over 20 pairs (tol {PAIR_TOL:e})"),
            ),
        ],
    })
}

/// Solves the homogenized plate from a coefficients file.
pub fn solve_plate_from(cfg: &RunConfig, tensor: &PlateTensor, scales: PlateScales) -> Result<PlateSolution, StudyError> {
    let system = assemble_plate_system(&cfg.plate_mesh(), tensor, &cfg.load_spec()?, scales)?;
    Ok(solve_plate(&system)?)
}

pub fn cmd_plate(cfg: &RunConfig, opts: &StudyOptions, seed: u64) -> Result<RunReport, StudyError> {
    ensure_out(opts)?;
    let coeffs = CoefficientsFile::read(&opts.out, cfg)?;
    let sol = solve_plate_from(cfg, &coeffs.tensor(), coeffs.scales())?;
    let identity = if sol.m_l == 0.0 { sol.load_term.abs() } else { ((sol.m_l + 0.5 * sol.load_term) / sol.m_l).abs() };
    if opts.emit_vtk {
        write_text(&opts.out.join("plate.vtk"), &vtk::plate_vtk(&sol, 2))?;
    }
    let summary = kv_table(
        "plate_summary",
        cfg,
        &[
            ("m_l", sol.m_l.into()),
            ("load_term", sol.load_term.into()),
            ("max_deflection", sol.max_deflection().into()),
            ("rel_residual", sol.rel_residual.into()),
            ("identity_error", identity.into()),
        ],
    );
    Ok(RunReport {
        tables: vec![provenance(cfg, "plate", seed), summary],
        criteria: vec![CriterionResult::new(
            "plate_identity",
            identity <= PLATE_IDENTITY_TOL,
            format!("|m_L + load/2|/|m_L| = {identity:.3e} (tol {PLATE_IDENTITY_TOL:e})"),
        )],
    })
}

/// Fine geometry at one ε of the ladder.
pub fn fine_geometry(cfg: &RunConfig, eps: f64) -> Result<FineGeometry, StudyError> {
    Ok(FineGeometry::new(
        &cfg.cell_geometry(),
        &cfg.phase_assignment()?,
        cfg.fine_resolution(),
        cfg.fine_order(),
        eps,
        cfg.plate.lengths,
        cfg.plate.clamped.clone(),
    )?)
}

struct FineRun {
    geom: FineGeometry,
    sol: FineSolution,
    seconds: Value,
}

fn fine_ladder(cfg: &RunConfig, opts: &StudyOptions, eps: &[f64]) -> Result<Vec<FineRun>, StudyError> {
    let load = cfg.load_spec()?;
    eps.par_iter()
        .map(|&e| {
            let t = Instant::now();
            let geom = fine_geometry(cfg, e)?;
            let sol = solve_linear_fine(&geom, &load, cfg.experiment.a, cfg.fine_solver())?;
            Ok(FineRun { geom, sol, seconds: seconds(t, opts) })
        })
        .collect()
}

const LADDER_COLUMNS: [&str; 9] =
    ["eps", "h", "a", "m_eps", "m_eps_scaled", "j_scaled", "residual", "dofs", "wall_time_s"];

fn ladder_table(cfg: &RunConfig) -> Table {
    Table::new("ladder", &cfg.short_hash(), &LADDER_COLUMNS)
}

fn linear_row(run: &FineRun) -> Vec<Value> {
    let s = &run.sol;
    vec![
        s.eps.into(),
        Value::Empty,
        s.a.into(),
        s.m_eps.into(),
        s.rescaled().into(),
        Value::Empty,
        s.rel_residual.into(),
        s.n_dofs.into(),
        run.seconds.clone(),
    ]
}

fn linearization_rows(table: &mut Table, run: &FineRun, rep: &LinearizationReport) -> Result<(), StudyError> {
    let scale = run.geom.energy_scale(run.sol.a);
    for r in &rep.rows {
        table.push(vec![
            run.sol.eps.into(),
            r.h.into(),
            run.sol.a.into(),
            run.sol.m_eps.into(),
            run.sol.rescaled().into(),
            r.scaled_energy.value().map(|v| v / scale).into(),
            run.sol.rel_residual.into(),
            run.sol.n_dofs.into(),
            Value::Empty,
        ])?;
    }
    Ok(())
}

/// Linear fine solves over the ε-ladder, with nonlinear energies over the h-ladder.
pub fn cmd_fine(cfg: &RunConfig, opts: &StudyOptions, seed: u64) -> Result<RunReport, StudyError> {
    ensure_out(opts)?;
    let load = cfg.load_spec()?;
    let runs = fine_ladder(cfg, opts, &cfg.experiment.eps_ladder)?;
    let mut table = ladder_table(cfg);
    for run in &runs {
        table.push(linear_row(run))?;
        let rep = linearization_study(&run.geom, &run.sol, &load, &cfg.experiment.h_ladder);
        linearization_rows(&mut table, run, &rep)?;
        if opts.emit_vtk {
            write_text(&opts.out.join(format!("fine_eps{}.vtk", run.sol.eps)), &vtk::fine_vtk(&run.geom, &run.sol.u))?;
        }
    }
    Ok(RunReport { tables: vec![provenance(cfg, "fine", seed), table], criteria: Vec::new() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Study {
    Shd,
    Linearize,
    Commute,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Shd => "shd",
            Study::Linearize => "linearize",
            Study::Commute => "commute",
        }
    }
}

fn relative_gap(v: f64, m_l: f64) -> f64 {
    (v - m_l).abs() / m_l.abs()
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ")
}

/// SHD gaps must decrease strictly and end at or below [`SHD_GAP_MAX`].
pub fn shd_verdict(gaps: &[f64]) -> CriterionResult {
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let last = gaps.last().copied().unwrap_or(f64::INFINITY);
    CriterionResult::new(
        "shd_convergence",
        decreasing && last <= SHD_GAP_MAX,
        format!("relative gaps [{}] (strictly decreasing: {decreasing}, final ≤ {SHD_GAP_MAX})", list(gaps)),
    )
}

/// `|route₁ − route₂| ≤ gap₁ + gap₂` up to round-off.
pub fn commute_verdict(route1: f64, route2: f64, m_l: f64) -> CriterionResult {
    let diff = (route1 - route2).abs();
    let bound = (route1 - m_l).abs() + (route2 - m_l).abs();
    CriterionResult::new(
        "commutativity",
        diff <= bound + COMMUTE_SLACK * m_l.abs(),
        format!("|route1 - route2| = {diff:.6e}, gap sum = {bound:.6e}"),
    )
}

pub fn cmd_verify(cfg: &RunConfig, opts: &StudyOptions, seed: u64, study: Study) -> Result<RunReport, StudyError> {
    ensure_out(opts)?;
    let load = cfg.load_spec()?;
    let cell = prepare_cell(cfg, opts)?;
    let scales = plate_scales(&cell.mesh, &cell);
    let plate = solve_plate_from(cfg, &cell.tensor, scales)?;
    let m_l = plate.m_l;
    let mut tables = vec![provenance(cfg, study.name(), seed)];
    let mut criteria = Vec::new();
    let mut summary: Vec<(String, Value)> = vec![("m_l".into(), m_l.into())];
    let mut ladder = ladder_table(cfg);
    match study {
        Study::Shd => {
            let runs = fine_ladder(cfg, opts, &cfg.experiment.eps_ladder)?;
            let mut gaps = Vec::new();
            for run in &runs {
                ladder.push(linear_row(run))?;
                let g = relative_gap(run.sol.rescaled(), m_l);
                summary.push((format!("gap_eps_{}", run.sol.eps), g.into()));
                gaps.push(g);
            }
            criteria.push(shd_verdict(&gaps));
        }
        Study::Linearize => {
            let runs = fine_ladder(cfg, opts, &cfg.experiment.eps_ladder)?;
            let reports: Vec<LinearizationReport> = runs
                .par_iter()
                .map(|run| linearization_study(&run.geom, &run.sol, &load, &cfg.experiment.h_ladder))
                .collect();
            for (run, rep) in runs.iter().zip(&reports) {
                ladder.push(linear_row(run))?;
                linearization_rows(&mut ladder, run, rep)?;
                summary.push((format!("slope_eps_{}", rep.eps), rep.slope.into()));
            }
            if let Some((run, rep)) = runs.iter().zip(&reports).next() {
                let smallest = rep
                    .rows
                    .iter()
                    .min_by(|a, b| a.h.total_cmp(&b.h))
                    .and_then(|r| r.remainder)
                    .map(|r| r.abs() / rep.j_lin.abs());
                let slope = rep.slope.unwrap_or(f64::NAN);
                let ok = slope >= LINEARIZATION_SLOPE_MIN && smallest.is_some_and(|r| r <= LINEARIZATION_REMAINDER_MAX);
                criteria.push(CriterionResult::new(
                    "linearization",
                    ok,
                    format!(
                        "eps {}: slope {slope:.4} (≥ {LINEARIZATION_SLOPE_MIN}), r(h_min)/|J_lin| {:.3e} (≤ {LINEARIZATION_REMAINDER_MAX:e})",
                        run.sol.eps,
                        smallest.unwrap_or(f64::NAN)
                    ),
                ));
            }
        }
        Study::Commute => {
            let rec = cfg.experiment.recovery.ok_or_else(|| {
                StudyError::Config(crate::config::ConfigError::Invalid("commute needs [experiment.recovery]".into()))
            })?;
            let finest = cfg.experiment.eps_ladder.iter().copied().fold(f64::INFINITY, f64::min);
            let runs = fine_ladder(cfg, opts, &[finest])?;
            let run = &runs[0];
            ladder.push(linear_row(run))?;
            let route1 = run.sol.rescaled();
            let geom = if rec.eps == finest { run.geom.clone() } else { fine_geometry(cfg, rec.eps)? };
            let ansatz = DisplacementAnsatz { plate: &plate, cell: &cell, a: cfg.experiment.a, n_smoothing: rec.n_smoothing };
            let route2 = recovery_energy(&geom, &ansatz, &load, rec.h).value().unwrap_or(f64::INFINITY);
            summary.push(("route1".into(), route1.into()));
            summary.push(("route2".into(), route2.into()));
            summary.push(("gap1".into(), (route1 - m_l).abs().into()));
            summary.push(("gap2".into(), (route2 - m_l).abs().into()));
            criteria.push(commute_verdict(route1, route2, m_l));
        }
    }
    let items: Vec<(&str, Value)> = summary.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    tables.push(kv_table("summary", cfg, &items));
    tables.push(ladder);
    Ok(RunReport { tables, criteria })
}

/// Per-ε unfolding diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct UnfoldRow {
    pub eps: f64,
    pub integral_error: f64,
    pub norm_error: f64,
    pub gradient_error: f64,
    pub audit: KlAudit,
    pub two_scale: TwoScaleError,
}

/// Spread `max/min` of a positive sequence.
fn spread(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(0.0f64, f64::max);
    let min = v.fold(f64::INFINITY, f64::min);
    max / min
}

pub fn unfold_verdicts(rows: &[UnfoldRow]) -> Vec<CriterionResult> {
    let ident = rows.iter().fold(0.0f64, |m, r| m.max(r.integral_error).max(r.norm_error).max(r.gradient_error));
    let moments: Vec<f64> = rows.iter().map(|r| r.two_scale.moment_error_max).collect();
    let decreasing = moments.windows(2).all(|w| w[1] < w[0]);
    let korn = spread(rows.iter().map(|r| r.audit.korn_ratio));
    let kl = rows.iter().fold(0.0f64, |m, r| m.max(r.audit.residual_ratio));
    vec![
        CriterionResult::new(
            "unfolding_identities",
            ident <= UNFOLD_IDENTITY_TOL,
            format!("max identity defect {ident:.3e} (tol {UNFOLD_IDENTITY_TOL:e})"),
        ),
        CriterionResult::new(
            "kl_scalings",
            korn <= AUDIT_SPREAD_MAX && kl <= 1.0,
            format!("Korn ratio spread {korn:.3} (≤ {AUDIT_SPREAD_MAX}), max ‖𝔲‖/(ε‖e‖) {kl:.3} (≤ 1)"),
        ),
        CriterionResult::new("weak_moments", decreasing, format!("max moment errors [{}] (strictly decreasing: {decreasing})", list(&moments))),
    ]
}

pub fn unfold_diagnostics(cfg: &RunConfig, opts: &StudyOptions) -> Result<(Vec<UnfoldRow>, HomogenizedCell), StudyError> {
    let cell = prepare_cell(cfg, opts)?;
    let plate = solve_plate_from(cfg, &cell.tensor, plate_scales(&cell.mesh, &cell))?;
    let limit = TwoScaleField { plate: &plate, cell: &cell };
    let runs = fine_ladder(cfg, opts, &cfg.experiment.eps_ladder)?;
    let rows = runs
        .par_iter()
        .map(|run| {
            let g = &run.geom;
            let ii = integration_identity(g, &run.sol.u, 3, &g.cell)?;
            Ok(UnfoldRow {
                eps: g.eps,
                integral_error: ii.integral_error,
                norm_error: ii.norm_error,
                gradient_error: unfold_gradient_identity(g, &run.sol.u, &g.cell)?,
                audit: kl_audit(g, &run.sol.u),
                two_scale: two_scale_error(g, &run.sol, &limit, cfg.unfold.dictionary_version)?,
            })
        })
        .collect::<Result<Vec<_>, StudyError>>()?;
    Ok((rows, cell))
}

pub fn cmd_unfold_diag(cfg: &RunConfig, opts: &StudyOptions, seed: u64) -> Result<RunReport, StudyError> {
    ensure_out(opts)?;
    let (rows, _) = unfold_diagnostics(cfg, opts)?;
    let mut t = Table::new(
        "diagnostics",
        &cfg.short_hash(),
        &[
            "eps",
            "kl_residual_ratio",
            "korn_ratio",
            "moment_error_max",
            "strong_error",
            "kl_gradient_ratio",
            "strong_error_relative",
            "integral_identity",
            "gradient_identity",
        ],
    );
    for r in &rows {
        t.push(vec![
            r.eps.into(),
            r.audit.residual_ratio.into(),
            r.audit.korn_ratio.into(),
            r.two_scale.moment_error_max.into(),
            r.two_scale.strong.into(),
            r.audit.residual_gradient_ratio.into(),
            r.two_scale.strong_relative.into(),
            r.integral_error.max(r.norm_error).into(),
            r.gradient_error.into(),
        ])?;
    }
    Ok(RunReport { tables: vec![provenance(cfg, "unfold-diag", seed), t], criteria: unfold_verdicts(&rows) })
}
