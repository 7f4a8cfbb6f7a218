//! Commands of the `mdelast` executable. Each command is an ordinary
//! function so that every run can be reproduced from library code.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mdelast::config::RunConfig;
use mdelast::elements::{build_spaces, FamilyChoice, Variant};
use mdelast::geometry::{decompose, GeometryInput, MixedDimGeometry};
use mdelast::meshing::build_mesh;
use mdelast::solver::{weighted_norms, write_vtk};
use mdelast::verify::{
    complex_check, conservation_check, convergence_study_from, infsup_estimate, infsup_sweep, solve_on, space_checks,
    spread, weak_symmetry_check, CaseId, InfSupRow, Lame, ManufacturedCase, RateTable,
};
use mdelast::{Error, Result};

/// Geometry used when no `--geometry` is given.
pub const DEFAULT_GEOMETRY: &str = include_str!("../../../data/default_geometry.json");

/// Tolerances of the property checks.
pub const CONSERVATION_TOL: f64 = 1e-10;
pub const SYMMETRY_TOL: f64 = 1e-10;
pub const SPACE_TOL: f64 = 1e-12;
pub const COMPLEX_TOL: f64 = 1e-12;
pub const INFSUP_LEVEL_SPREAD: f64 = 2.0;
pub const INFSUP_EPS_SPREAD: f64 = 5.0;
/// Accepted window `[theory - RATE_BELOW, theory + RATE_ABOVE]` for global rates (theory 1).
pub const RATE_BELOW: f64 = 0.15;
pub const RATE_ABOVE: f64 = 0.3;
/// Accepted window of the inclusion stress rate of the full family (theory 2).
pub const INCLUSION_RATE: (f64, f64) = (1.8, 2.3);
/// Apertures of the inf-sup sweep.
pub const SWEEP: [f64; 3] = [1.0, 1e-2, 1e-4];

/// Outcome of a command: written files and failed properties (empty when all passed).
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub failures: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

/// Options shared by the commands.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub geometry: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub h: Option<f64>,
    pub family: Option<Variant>,
    pub order: Option<usize>,
    pub out: PathBuf,
    pub timestamp: bool,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions {
            geometry: None,
            config: None,
            h: None,
            family: None,
            order: None,
            out: out.into(),
            timestamp: true,
        }
    }

    pub fn load_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_toml_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.family {
            c.family.variant = v;
        }
        if let Some(k) = self.order {
            c.family.order = k;
        }
        c.check()?;
        Ok(c)
    }

    pub fn load_geometry(&self) -> Result<MixedDimGeometry> {
        let input = match &self.geometry {
            Some(p) => GeometryInput::from_json_file(p)?,
            None => GeometryInput::from_json_str(DEFAULT_GEOMETRY)?,
        };
        let geom = decompose(&input)?;
        let rep = geom.validate();
        for w in &rep.warnings {
            log::warn!("{w}");
        }
        if !rep.is_valid() {
            return Err(Error::Geometry(rep.violations.join("; ")));
        }
        Ok(geom)
    }

    fn target_h(&self, default: f64) -> Result<f64> {
        let h = self.h.unwrap_or(default);
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Input(format!("--h must be positive, got {h}")));
        }
        Ok(h)
    }

    fn path(&self, suffix: &str) -> PathBuf {
        let mut p = self.out.as_os_str().to_owned();
        p.push(suffix);
        PathBuf::from(p)
    }

    fn header(&self, command: &str) -> String {
        let mut s = format!("# mdelast {} {command}\n", env!("CARGO_PKG_VERSION"));
        if self.timestamp {
            let t = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            let _ = writeln!(s, "# generated at unix time {t}");
        }
        s
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn family_name(f: FamilyChoice) -> String {
    format!("{} k={}", f.variant, f.order)
}

/// Solve the problem given by geometry and configuration; write VTK files and a summary.
pub fn cmd_solve(opts: &RunOptions) -> Result<Outcome> {
    let cfg = opts.load_config()?;
    let geom = opts.load_geometry()?;
    let mesh = build_mesh(&geom, opts.target_h(0.1)?)?;
    let law = cfg.law(&geom)?;
    let data = cfg.data(&geom);
    let ls = solve_on(&geom, &mesh, cfg.family, &law, &data)?;
    let s = &ls.solution;
    let norms = weighted_norms(&geom, &ls.spaces, &s.sigma, &s.u, &s.r)?;
    let conservation = conservation_check(&geom, &mesh, &ls.spaces, &s.sigma, &data);
    let symmetry = weak_symmetry_check(&geom, &ls.spaces, &s.sigma);
    create_parent(&opts.out)?;
    let mut out = Outcome {
        files: write_vtk(&opts.out, &geom, &ls.spaces, s)?,
        ..Outcome::default()
    };
    let mut t = opts.header("solve");
    let _ = writeln!(t, "family = \"{}\"", family_name(cfg.family));
    let _ = writeln!(t, "manifolds = [{}, {}, {}]", geom.by_dim[0].len(), geom.by_dim[1].len(), geom.by_dim[2].len());
    let _ = writeln!(t, "h = {:e}", mesh.h);
    let _ = writeln!(t, "unknowns = {}", ls.system.dim());
    let _ = writeln!(t, "solver_residual = {:e}", s.residual);
    let _ = writeln!(t, "norm_sigma = {:e}", norms.sigma);
    let _ = writeln!(t, "norm_u = {:e}", norms.u);
    let _ = writeln!(t, "norm_r = {:e}", norms.r);
    let _ = writeln!(t, "conservation_residual = {conservation:e}");
    let _ = writeln!(t, "symmetry_residual = {symmetry:e}");
    let summary = opts.path("_summary.txt");
    write(&summary, &t)?;
    out.files.push(summary);
    if conservation > CONSERVATION_TOL {
        out.failures.push(format!("conservation residual {conservation:.2e}"));
    }
    if symmetry > SYMMETRY_TOL {
        out.failures.push(format!("weak symmetry residual {symmetry:.2e}"));
    }
    if s.flagged {
        out.failures.push(format!("linear solver residual {:.2e}", s.residual));
    }
    Ok(out)
}

/// Theoretical rates and failures of a rate table.
pub fn judge_rates(table: &RateTable) -> Vec<String> {
    let mut fail = Vec::new();
    let rows = &table.rows;
    match table.case {
        CaseId::Affine => {
            for row in rows {
                let e = &row.errors;
                if e.sigma > 1e-10 || e.r > 1e-10 {
                    fail.push(format!(
                        "level {}: stress error {:.2e} or rotation error {:.2e} above 1e-10",
                        row.level, e.sigma, e.r
                    ));
                }
            }
        }
        CaseId::Mms3 => {
            for w in rows.windows(2).skip(rows.len().saturating_sub(3)) {
                if w[1].errors.sigma >= w[0].errors.sigma || w[1].errors.u >= w[0].errors.u {
                    fail.push(format!("errors do not decrease from level {} to {}", w[0].level, w[1].level));
                }
            }
        }
        CaseId::Mms1 | CaseId::Mms2 => {
            let r = table.rates();
            let (lo, hi) = (1.0 - RATE_BELOW, 1.0 + RATE_ABOVE);
            for (name, v) in [("sigma", r.sigma), ("u", r.u), ("r", r.r)] {
                if !(lo..=hi).contains(&v) {
                    fail.push(format!("rate_{name} = {v:.3} outside [{lo}, {hi}]"));
                }
            }
            if table.case == CaseId::Mms2 && table.family.variant == Variant::Full {
                let (lo, hi) = INCLUSION_RATE;
                if !(lo..=hi).contains(&r.sigma_d1) {
                    fail.push(format!("inclusion stress rate {:.3} outside [{lo}, {hi}]", r.sigma_d1));
                }
            }
        }
    }
    for row in rows {
        if row.conservation > CONSERVATION_TOL {
            fail.push(format!("level {}: conservation residual {:.2e}", row.level, row.conservation));
        }
        if row.symmetry > SYMMETRY_TOL {
            fail.push(format!("level {}: symmetry residual {:.2e}", row.level, row.symmetry));
        }
    }
    fail
}

/// Convergence study of a manufactured case; writes the rate table as CSV.
pub fn cmd_converge(opts: &RunOptions, case: CaseId, levels: usize, epsilon: f64) -> Result<Outcome> {
    if levels < 3 {
        return Err(Error::Input(format!(
            "a convergence rate needs at least 3 levels, got {levels}"
        )));
    }
    let cfg = opts.load_config()?;
    let lame = if opts.config.is_some() {
        Lame {
            mu: cfg.mu,
            lambda: cfg.lambda,
            mu_perp: cfg.mu_perp,
            lambda_perp: cfg.lambda_perp,
        }
    } else {
        Lame::default()
    };
    let case = ManufacturedCase::with_lame(case, epsilon, lame)?;
    let coarse = build_mesh(&case.geometry, opts.target_h(case.h0)?)?;
    let table = convergence_study_from(&case, cfg.family, levels, coarse)?;
    let csv_path = opts.path("_rates.csv");
    write(&csv_path, &table.to_csv())?;
    let failures = judge_rates(&table);
    let mut t = opts.header("converge");
    let _ = writeln!(t, "case = \"{}\"", case.id);
    let _ = writeln!(t, "family = \"{}\"", family_name(cfg.family));
    let _ = writeln!(t, "epsilon = {epsilon:e}");
    let _ = writeln!(t, "relative_errors = {}", table.relative);
    let r = table.rates();
    let _ = writeln!(t, "rate_sigma = {:.6}", r.sigma);
    let _ = writeln!(t, "rate_u = {:.6}", r.u);
    let _ = writeln!(t, "rate_r = {:.6}", r.r);
    let _ = writeln!(t, "rate_sigma_d1 = {:.6}", r.sigma_d1);
    let _ = writeln!(t, "rate_sigma_d2 = {:.6}", r.sigma_d2);
    let _ = writeln!(t, "passed = {}", failures.is_empty());
    for f in &failures {
        let _ = writeln!(t, "# failed: {f}");
    }
    let summary = opts.path("_summary.txt");
    write(&summary, &t)?;
    Ok(Outcome {
        files: vec![csv_path, summary],
        failures,
    })
}

/// Property checks on the given geometry: space conditions on a two-level
/// mesh pair, the complex property, discrete conservation and symmetry of a
/// solve, and the inf-sup constant (over two levels, or over apertures).
pub fn cmd_check(opts: &RunOptions, eps_sweep: bool) -> Result<Outcome> {
    let cfg = opts.load_config()?;
    let geom = opts.load_geometry()?;
    let mesh = build_mesh(&geom, opts.target_h(0.25)?)?;
    let fine = mesh.refine(&geom)?;
    let family = cfg.family;
    let mut failures = Vec::new();
    let mut t = opts.header("check");
    let _ = writeln!(t, "family = \"{}\"", family_name(family));
    let _ = writeln!(t, "h = {:e}", mesh.h);

    let mut s2_div: f64 = 0.0;
    let mut s2_trace: f64 = 0.0;
    let mut s3a: f64 = 0.0;
    for m in [&mesh, &fine] {
        let sp = build_spaces(&geom, m, family)?;
        let rep = space_checks(&geom, &sp)?;
        s2_div = s2_div.max(rep.s2_divergence);
        s2_trace = s2_trace.max(rep.s2_trace);
        s3a = s3a.max(rep.s3a);
    }
    let sp = build_spaces(&geom, &mesh, family)?;
    let complex = complex_check(&geom, &sp, 100, 1)?;
    let law = cfg.law(&geom)?;
    let data = cfg.data(&geom);
    let ls = solve_on(&geom, &mesh, family, &law, &data)?;
    let conservation = conservation_check(&geom, &mesh, &ls.spaces, &ls.solution.sigma, &data);
    let symmetry = weak_symmetry_check(&geom, &ls.spaces, &ls.solution.sigma);

    let checks = [
        ("S2_divergence", s2_div, SPACE_TOL),
        ("S2_trace", s2_trace, SPACE_TOL),
        ("S3a_curl", s3a, SPACE_TOL),
        ("complex", complex, COMPLEX_TOL),
        ("conservation", conservation, CONSERVATION_TOL),
        ("weak_symmetry", symmetry, SYMMETRY_TOL),
    ];
    for (name, v, tol) in checks {
        let _ = writeln!(t, "{name} = {v:e}");
        if !(v <= tol) {
            failures.push(format!("{name} residual {v:.2e} exceeds {tol:e}"));
        }
    }

    let (rows, limit): (Vec<InfSupRow>, f64) = if eps_sweep {
        (infsup_sweep(&geom, &mesh, family, &SWEEP)?, INFSUP_EPS_SPREAD)
    } else {
        (infsup_estimate(&geom, &mesh, family, 2)?, INFSUP_LEVEL_SPREAD)
    };
    let _ = writeln!(t, "# inf-sup: level,h,epsilon,beta,unknowns");
    for r in &rows {
        let eps = if r.epsilon.is_nan() { String::from("input") } else { format!("{:e}", r.epsilon) };
        let _ = writeln!(t, "infsup = \"{},{:e},{eps},{:.9},{}\"", r.level, r.h, r.beta, r.dofs);
    }
    let sp_ratio = spread(&rows);
    let _ = writeln!(t, "infsup_spread = {sp_ratio:.6}");
    if !(sp_ratio < limit) {
        failures.push(format!("inf-sup spread {sp_ratio:.3} not below {limit}"));
    }
    let _ = writeln!(t, "passed = {}", failures.is_empty());
    for f in &failures {
        let _ = writeln!(t, "# failed: {f}");
    }
    let report = opts.path("_check.txt");
    write(&report, &t)?;
    Ok(Outcome {
        files: vec![report],
        failures,
    })
}
