//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::Matrix3;
use platehom::cell::{build_cell_mesh, CellGeometry, PhaseAssignment};
use platehom::config::RunConfig;
use platehom::corrector::{assemble_cell_stiffness, corrector_rhs, solve_correctors, CorrectorMode};
use platehom::elastic::{green_strain, gsv_identity_check, rigidity_distance, skew, sym, Mat3};
use platehom::homogenize::{homogenize_cell, two_scale_energy_min, Normalization};
use platehom::linalg::{dot, CgOptions};
use platehom::plate::{assemble_plate_system, interpolate, solve_plate, LoadSpec, PlateScales};
use platehom::study::{self, cmd_unfold_diag, cmd_verify, prepare_cell, solve_plate_from, Study, StudyOptions};
use platehom::unfold::{integration_identity, unfold_gradient_identity};
use platehom::{PlateStrainPair, PlateTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const IDENTITY_TOL: f64 = 1e-13;
const GALERKIN_TOL: f64 = 1e-9;
const CLOSED_FORM_TOL: f64 = 1e-8;
const COUPLING_TOL: f64 = 1e-10;
const PAIR_TOL: f64 = 1e-8;
const MANUFACTURED_TOL: f64 = 1e-8;
const PLATE_IDENTITY_TOL: f64 = 1e-10;
const SELF_CONVERGENCE_MAX: f64 = 0.005;
const UNFOLD_TOL: f64 = 1e-12;

type Outcome = Result<(bool, String), String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load_config(name: &str) -> Result<RunConfig, String> {
    RunConfig::load(&configs_dir().join(name)).map_err(|e| e.to_string())
}

fn tempdir() -> Result<tempfile::TempDir, String> {
    tempfile::tempdir().map_err(|e| e.to_string())
}

fn opts(dir: &Path) -> StudyOptions {
    StudyOptions { out: dir.to_path_buf(), ..Default::default() }
}

fn random_mat3(rng: &mut ChaCha8Rng) -> Mat3 {
    Mat3::from_fn(|_, _| rng.gen_range(-2.0..2.0))
}

fn random_pair(rng: &mut ChaCha8Rng) -> PlateStrainPair {
    PlateStrainPair::from_array(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
}

/// Plane-stress reduction of `Q(S) = ½λ(tr S)² + μ|S|²` on `(s11, s22, s12)` in
/// tensor coordinates: `½λ*(s11 + s22)² + μ(s11² + s22² + 2 s12²)` with
/// `λ* = 2λμ/(λ + 2μ)`.
fn isotropic_plane_stress(lambda: f64, mu: f64) -> Matrix3<f64> {
    let ls = lambda * mu / (lambda + 2.0 * mu);
    Matrix3::new(ls + mu, ls, 0.0, ls, ls + mu, 0.0, 0.0, 0.0, 2.0 * mu)
}

/// Two-phase laminate of the shipped config on an 8×8×8 trilinear cell.
fn laminate_8() -> Result<(CellGeometry, PhaseAssignment), String> {
    let cfg = load_config("laminate.toml")?;
    Ok((cfg.cell_geometry(), cfg.phase_assignment().map_err(|e| e.to_string())?))
}

fn c1_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let g = random_mat3(&mut rng);
        let h = rng.gen_range(0.1..1.0);
        let scale = 1.0 + g.norm_squared();
        let (lhs, rhs) = gsv_identity_check(&g, h);
        worst = worst.max((lhs - rhs).max_abs() / scale);
        let s = sym(&g).to_mat3();
        let k = skew(&g);
        worst = worst.max((s + k - g).abs().max() / scale);
        worst = worst.max((s - s.transpose()).abs().max());
        worst = worst.max((k + k.transpose()).abs().max());
        let direct = 0.5 * (g.transpose() * g - Mat3::identity());
        worst = worst.max((green_strain(&g).to_mat3() - direct).abs().max() / scale);
    }
    Ok((worst <= IDENTITY_TOL, format!("max scaled defect {worst:.3e} over 1000 inputs (tol {IDENTITY_TOL:e})")))
}

fn c2_rigidity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    let mut n = 0;
    while n < 10_000 {
        let mut f = random_mat3(&mut rng);
        if f.determinant() < 0.0 {
            f.row_mut(0).neg_mut();
        }
        if f.determinant() <= 1e-8 {
            continue;
        }
        n += 1;
        let bound = (f.transpose() * f - Mat3::identity()).norm();
        if rigidity_distance(&f) > bound * (1.0 + 1e-12) + 1e-14 {
            violations += 1;
        }
    }
    Ok((violations == 0, format!("{violations} violations over {n} det-positive inputs")))
}

fn c3_galerkin() -> Outcome {
    let (geom, phases) = laminate_8()?;
    let mesh = build_cell_mesh(&geom, [8, 8, 8], 1).map_err(|e| e.to_string())?;
    let stiffness = assemble_cell_stiffness(&mesh, &phases).map_err(|e| e.to_string())?;
    let set = solve_correctors(&stiffness, &mesh, &phases, CgOptions::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for mode in CorrectorMode::ALL {
        let chi = set.field(mode);
        let rhs = corrector_rhs(&mesh, &phases, &stiffness.dofmap, mode);
        let kchi = stiffness.matrix.apply(chi);
        let chi_norm = stiffness.matrix.inner(chi, chi).sqrt().max(1.0);
        for _ in 0..100 {
            let v: Vec<f64> = (0..chi.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = dot(&kchi, &v) - dot(&rhs, &v);
            worst = worst.max(r.abs() / (stiffness.matrix.inner(&v, &v).sqrt() * chi_norm));
        }
    }
    Ok((worst <= GALERKIN_TOL, format!("max scaled residual {worst:.3e} over 6×100 test fields (tol {GALERKIN_TOL:e})")))
}

fn c4_closed_form() -> Outcome {
    let cfg = load_config("homogeneous.toml")?;
    let tmp = tempdir()?;
    let cell = prepare_cell(&cfg, &opts(tmp.path())).map_err(|e| e.to_string())?;
    let p = &cfg.phases[0];
    let oracle = isotropic_plane_stress(p.lambda.ok_or("isotropic phase")?, p.mu.ok_or("isotropic phase")?);
    let scale = oracle.abs().max();
    let t = &cell.tensor;
    let ea = (t.a - oracle).abs().max() / scale;
    let ec = (t.c - oracle / 3.0).abs().max() / scale;
    let eb = t.b.abs().max() / scale;
    Ok((
        ea <= CLOSED_FORM_TOL && ec <= CLOSED_FORM_TOL && eb <= COUPLING_TOL,
        format!("A {ea:.3e}, C {ec:.3e} (tol {CLOSED_FORM_TOL:e}), B {eb:.3e} (tol {COUPLING_TOL:e})"),
    ))
}

fn c5_pairs() -> Outcome {
    let (geom, phases) = laminate_8()?;
    let cg = CgOptions::default();
    let cell = homogenize_cell(&geom, &phases, [8, 8, 8], 1, cg, Normalization::Cell).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p = random_pair(&mut rng);
        let m = two_scale_energy_min(&p, &cell.mesh, &cell.phases, &cell.stiffness, cg, Normalization::Cell)
            .map_err(|e| e.to_string())?;
        let q = cell.tensor.quadratic_form(&p);
        worst = worst.max((m.energy - q).abs() / q.abs());
    }
    Ok((worst <= PAIR_TOL, format!("max relative difference {worst:.3e} over 20 pairs (tol {PAIR_TOL:e})")))
}

fn c6_coercivity() -> Outcome {
    let mut entries: Vec<PathBuf> = fs::read_dir(configs_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    entries.sort();
    let tmp = tempdir()?;
    let mut ok = !entries.is_empty();
    let mut perforated = false;
    let mut details = Vec::new();
    for path in &entries {
        let cfg = RunConfig::load(path).map_err(|e| e.to_string())?;
        let cell = prepare_cell(&cfg, &opts(tmp.path())).map_err(|e| e.to_string())?;
        let ev = cell.tensor.min_eigenvalue();
        let hole = 1.0 - cell.mesh.material_fraction();
        if hole > 0.0 {
            perforated |= hole <= 0.5;
            ok &= hole <= 0.5;
        }
        ok &= ev > 0.0;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        details.push(format!("{name} {ev:.3e} (hole fraction {hole:.3})"));
    }
    Ok((ok && perforated, format!("min eigenvalues: {}", details.join(", "))))
}

fn manufactured_error(cfg: &RunConfig, tensor: &PlateTensor) -> Result<f64, String> {
    let mesh = cfg.plate_mesh();
    let [l1, l2] = mesh.lengths;
    // clamped-compatible on every side: value and slopes vanish on the boundary
    let exact = interpolate(&mesh, |x| {
        let bx = x[0] * x[0] * (l1 - x[0]).powi(2);
        let by = x[1] * x[1] * (l2 - x[1]).powi(2);
        let dbx = 2.0 * x[0] * (l1 - x[0]).powi(2) - 2.0 * x[0] * x[0] * (l1 - x[0]);
        let dby = 2.0 * x[1] * (l2 - x[1]).powi(2) - 2.0 * x[1] * x[1] * (l2 - x[1]);
        let bubble = x[0] * (l1 - x[0]) * x[1] * (l2 - x[1]);
        [bubble, -0.5 * bubble, bx * by, dbx * by, bx * dby, dbx * dby]
    });
    let mut sys = assemble_plate_system(&mesh, tensor, &LoadSpec::default(), PlateScales::default()).map_err(|e| e.to_string())?;
    sys.rhs = sys.matrix.apply(&sys.restrict(&exact));
    let sol = solve_plate(&sys).map_err(|e| e.to_string())?;
    let err = sol.values.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(err / scale)
}

fn c7_plate() -> Outcome {
    let cfg = load_config("homogeneous.toml")?;
    let tmp = tempdir()?;
    let cell = prepare_cell(&cfg, &opts(tmp.path())).map_err(|e| e.to_string())?;
    let scales = study::plate_scales(&cell.mesh, &cell);
    let manufactured = manufactured_error(&cfg, &cell.tensor)?;
    let sol = solve_plate_from(&cfg, &cell.tensor, scales).map_err(|e| e.to_string())?;
    let identity = ((sol.m_l + 0.5 * sol.load_term) / sol.m_l).abs();
    let load = cfg.load_spec().map_err(|e| e.to_string())?;
    let fine = solve_plate(
        &assemble_plate_system(&cfg.plate_mesh().refined(), &cell.tensor, &load, scales).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let change = ((fine.m_l - sol.m_l) / fine.m_l).abs();
    Ok((
        manufactured <= MANUFACTURED_TOL && identity <= PLATE_IDENTITY_TOL && change < SELF_CONVERGENCE_MAX,
        format!(
            "manufactured {manufactured:.3e} (tol {MANUFACTURED_TOL:e}), identity {identity:.3e} (tol {PLATE_IDENTITY_TOL:e}), \
             refinement change {change:.3e} (< {SELF_CONVERGENCE_MAX})"
        ),
    ))
}

fn verdict_of(report: &platehom::report::RunReport) -> (bool, String) {
    let lines: Vec<String> = report.criteria.iter().map(|c| format!("{}: {}", c.id, c.detail)).collect();
    (report.passed() && !report.criteria.is_empty(), lines.join("; "))
}

fn c8_linearization() -> Outcome {
    let mut cfg = load_config("homogeneous.toml")?;
    cfg.experiment.eps_ladder = vec![0.25];
    let tmp = tempdir()?;
    let report = cmd_verify(&cfg, &opts(tmp.path()), cfg.seed, Study::Linearize).map_err(|e| e.to_string())?;
    Ok(verdict_of(&report))
}

fn verify_to(dir: &Path, study: Study) -> Result<(platehom::report::RunReport, Vec<(String, Vec<u8>)>), String> {
    let cfg = load_config("homogeneous.toml")?;
    let report = cmd_verify(&cfg, &opts(dir), cfg.seed, study).map_err(|e| e.to_string())?;
    let mut paths = report.write(dir, &cfg.short_hash()).map_err(|e| e.to_string())?;
    paths.sort();
    let files = paths
        .iter()
        .map(|p| Ok((p.file_name().unwrap_or_default().to_string_lossy().into_owned(), fs::read(p).map_err(|e| e.to_string())?)))
        .collect::<Result<Vec<_>, String>>()?;
    Ok((report, files))
}

fn c9_shd(dir: &Path) -> Outcome {
    Ok(verdict_of(&verify_to(dir, Study::Shd)?.0))
}

fn c10_commute() -> Outcome {
    let tmp = tempdir()?;
    Ok(verdict_of(&verify_to(tmp.path(), Study::Commute)?.0))
}

fn c11_unfold() -> Outcome {
    let cfg = load_config("homogeneous.toml")?;
    let tmp = tempdir()?;
    let report = cmd_unfold_diag(&cfg, &opts(tmp.path()), cfg.seed).map_err(|e| e.to_string())?;
    let (mut ok, detail) = verdict_of(&report);
    // identities on an arbitrary discrete field, independent of any solve
    let geom = study::fine_geometry(&cfg, 0.125).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let field: Vec<f64> = (0..3 * geom.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ii = integration_identity(&geom, &field, 3, &geom.cell).map_err(|e| e.to_string())?;
    let gi = unfold_gradient_identity(&geom, &field, &geom.cell).map_err(|e| e.to_string())?;
    let random = ii.integral_error.max(ii.norm_error).max(gi);
    ok &= random <= UNFOLD_TOL;
    Ok((ok, format!("{detail}; random-field identities {random:.3e} (tol {UNFOLD_TOL:e})")))
}

fn c12_determinism(first: &Path) -> Outcome {
    let cfg = load_config("homogeneous.toml")?;
    let read = |dir: &Path| -> Result<Vec<(String, Vec<u8>)>, String> {
        let mut names: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        names.sort();
        names
            .iter()
            .map(|p| Ok((p.file_name().unwrap_or_default().to_string_lossy().into_owned(), fs::read(p).map_err(|e| e.to_string())?)))
            .collect()
    };
    let a = if read(first)?.is_empty() { verify_to(first, Study::Shd)?.1 } else { read(first)? };
    let tmp = tempdir()?;
    let b = verify_to(tmp.path(), Study::Shd)?.1;
    let same = a == b && !a.is_empty();
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    Ok((same, format!("{} report files ({}) byte-identical: {same}; config {}", a.len(), names.join(", "), cfg.short_hash())))
}

fn main() -> ExitCode {
    let shd_dir = match tempdir() {
        Ok(d) => d,
        Err(e) => {
            eprintln!("cannot create a temporary directory: {e}");
            return ExitCode::FAILURE;
        }
    };
    let secs = Duration::from_secs;
    let criteria: Vec<(&str, Duration, Box<dyn Fn() -> Outcome>)> = vec![
        ("C1 algebraic identities", secs(1), Box::new(c1_identities)),
        ("C2 rigidity inequality", secs(5), Box::new(c2_rigidity)),
        ("C3 corrector Galerkin replay", secs(30), Box::new(c3_galerkin)),
        ("C4 homogeneous closed form", secs(30), Box::new(c4_closed_form)),
        ("C5 two-scale oracle equivalence", secs(120), Box::new(c5_pairs)),
        ("C6 coercivity of shipped cells", secs(60), Box::new(c6_coercivity)),
        ("C7 plate solver", secs(120), Box::new(c7_plate)),
        ("C8 linearization", secs(300), Box::new(c8_linearization)),
        ("C9 SHD convergence", secs(1200), Box::new(|| c9_shd(shd_dir.path()))),
        ("C10 commutativity", secs(600), Box::new(c10_commute)),
        ("C11 unfolding diagnostics", secs(300), Box::new(c11_unfold)),
        ("C12 determinism", secs(1200), Box::new(|| c12_determinism(shd_dir.path()))),
    ];
    let mut all = true;
    for (name, budget, run) in &criteria {
        let t = Instant::now();
        let outcome = run();
        let elapsed = t.elapsed();
        let in_budget = elapsed <= *budget;
        let (passed, detail) = match outcome {
            Ok((p, d)) => (p && in_budget, d),
            Err(e) => (false, format!("error: {e}")),
        };
        all &= passed;
        println!(
            "{} {name}: {detail} [{:.2} s, budget {} s]",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
