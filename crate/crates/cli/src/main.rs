//! `carnot`: command-line front end.
//!
//! Every subcommand prints one JSON record on stdout. With `--out <dir>` the
//! record and any CSV tables are also written into that directory. Exit
//! status: 0 success, 1 failed assertion or numerical failure, 2 usage or
//! configuration error; diagnostics go to stderr as JSON.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use carnot_core::classify::{classify_point, scan_grid, Census};
use carnot_core::coarea::{characteristic_contribution, verify, CoareaSettings, TubeMass};
use carnot_core::config::{load_config, ConfigError, RunConfig};
use carnot_core::group::{selftest, SelfTestReport};
use carnot_core::measures::{
    exponent_fit, level_set_box_measure, level_set_prediction, tangent_plane_box_measure, AsymptoticFit,
    ConventionMode, MeasureConvention,
};
use carnot_core::metrics::{quasi_triangle_probe, TriangleProbe};
use carnot_core::quadrature::QuadratureSettings;
use carnot_core::report::{characteristic_csv, measure_csv, slices_csv, tube_csv, MeasureRow, Record};
use carnot_core::{PointKind, PolynomialContactMap, VerificationReport};

#[derive(Parser)]
#[command(name = "carnot", version, about = "Carnot group geometry and coarea verification")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration document (TOML).
    #[arg(long, global = true, visible_alias = "algebra", value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: hardware parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory receiving the JSON record and CSV tables.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the configuration's convention.
    #[arg(long, global = true, value_parser = ["paper", "balanced"])]
    convention: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Algebra validation.
    Algebra {
        #[command(subcommand)]
        action: AlgebraCmd,
    },
    /// Group-law invariant suite.
    Group {
        #[command(subcommand)]
        action: GroupCmd,
    },
    /// Point classification census over the domain.
    Classify {
        /// Restrict to one map.
        #[arg(long)]
        map: Option<String>,
        /// Lattice points per axis.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Intersection measures and exponent fits.
    Measure {
        #[command(subcommand)]
        action: MeasureCmd,
    },
    /// Quasimetric probes.
    Probe {
        #[command(subcommand)]
        action: ProbeCmd,
    },
    /// Coarea formula verification.
    Coarea {
        #[command(subcommand)]
        action: CoareaCmd,
    },
}

#[derive(Subcommand)]
enum AlgebraCmd {
    /// Validates every algebra in the configuration.
    Check {
        #[arg(long)]
        name: Option<String>,
    },
}

#[derive(Subcommand)]
enum GroupCmd {
    /// Associativity, inverse, dilation, frame and homogeneity checks.
    Selftest {
        #[arg(long)]
        name: Option<String>,
        /// Random points per check.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
}

#[derive(Subcommand)]
enum MeasureCmd {
    /// Tangent-plane and level-set measures in `Box₂(x, r)` over a radius ladder.
    Fit {
        #[arg(long)]
        map: Option<String>,
        /// Comma-separated coordinates (default: configuration, else identity).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        point: Option<Vec<f64>>,
        /// Comma-separated radii (default: configuration).
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<f64>>,
    },
}

#[derive(Subcommand)]
enum ProbeCmd {
    /// Empirical constant of the generalized triangle inequality.
    Triangle {
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        r0: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
}

#[derive(Subcommand)]
enum CoareaCmd {
    /// Both sides of the coarea formula on the configured domain.
    Verify {
        #[arg(long)]
        map: Option<String>,
    },
    /// Mass of shrinking tubes around the characteristic set.
    Tube {
        #[arg(long)]
        map: Option<String>,
        /// Comma-separated radii (default: configuration `epsilons`).
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Config(ConfigError),
    Numerical(String),
    Assertion(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Assertion(_) | Failure::Numerical(_) => 1,
            Failure::Usage(_) | Failure::Config(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Config(_) => "config",
            Failure::Numerical(_) => "numerical",
            Failure::Assertion(_) => "assertion",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Numerical(m) | Failure::Assertion(m) => m.clone(),
            Failure::Config(e) => e.to_string(),
        }
    }
}

fn numerical(e: impl std::fmt::Display) -> Failure {
    Failure::Numerical(e.to_string())
}

/// Output of one pipeline: the record, named CSV tables, and the verdict of
/// its asserted invariants.
struct Emitted {
    stem: String,
    json: String,
    tables: Vec<(String, String)>,
    failed: Vec<String>,
}

struct Context {
    cfg: RunConfig,
    seed: u64,
    convention: MeasureConvention,
}

impl Context {
    fn record<T: Serialize>(&self, command: &str, result: T) -> String {
        Record::new(command, self.seed, self.convention, result).to_json()
    }

    fn maps(&self, name: &Option<String>) -> Result<Vec<&PolynomialContactMap>, Failure> {
        match name {
            Some(n) => self
                .cfg
                .map(n)
                .map(|m| vec![m])
                .ok_or_else(|| Failure::Usage(format!("no map named {n:?} in the configuration"))),
            None if self.cfg.maps.is_empty() => Err(Failure::Usage("the configuration defines no maps".into())),
            None => Ok(self.cfg.maps.iter().collect()),
        }
    }

    fn groups(&self, name: &Option<String>) -> Result<Vec<&carnot_core::CarnotGroup>, Failure> {
        match name {
            Some(n) => self
                .cfg
                .group(n)
                .map(|g| vec![g.as_ref()])
                .ok_or_else(|| Failure::Usage(format!("no algebra named {n:?} in the configuration"))),
            None => Ok(self.cfg.groups.values().map(|g| g.as_ref()).collect()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let diag = serde_json::json!({ "error": { "kind": f.kind(), "message": f.message() } });
            eprintln!("{diag}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = cli.common;
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config <PATH> is required".into()))?;
    let cfg = load_config(path).map_err(Failure::Config)?;
    let mode = match &common.convention {
        Some(c) => c.parse::<ConventionMode>().map_err(Failure::Usage)?,
        None => cfg.convention,
    };
    let convention = MeasureConvention {
        mode,
        normalization: cfg.normalization,
    };
    let ctx = Context {
        seed: common.seed.unwrap_or(cfg.seed),
        cfg,
        convention,
    };
    let emitted = match cli.command {
        Command::Algebra {
            action: AlgebraCmd::Check { name },
        } => algebra_check(&ctx, &name)?,
        Command::Group {
            action: GroupCmd::Selftest { name, samples },
        } => group_selftest(&ctx, &name, samples)?,
        Command::Classify { map, resolution } => classify(&ctx, &map, resolution)?,
        Command::Measure {
            action: MeasureCmd::Fit { map, point, radii },
        } => measure_fit(&ctx, &map, point, radii)?,
        Command::Probe {
            action: ProbeCmd::Triangle { name, r0, samples },
        } => probe_triangle(&ctx, &name, r0, samples)?,
        Command::Coarea {
            action: CoareaCmd::Verify { map },
        } => coarea_verify(&ctx, &map)?,
        Command::Coarea {
            action: CoareaCmd::Tube { map, epsilons },
        } => coarea_tube(&ctx, &map, epsilons)?,
    };
    let out = common.out.or_else(|| ctx.cfg.output.as_ref().map(PathBuf::from));
    if let Some(dir) = &out {
        write_outputs(dir, &emitted).map_err(|e| Failure::Usage(format!("cannot write to {}: {e}", dir.display())))?;
    }
    print!("{}", emitted.json);
    if emitted.failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion(emitted.failed.join("; ")))
    }
}

fn write_outputs(dir: &Path, emitted: &Emitted) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{}.json", emitted.stem)), &emitted.json)?;
    for (name, body) in &emitted.tables {
        fs::write(dir.join(name), body)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AlgebraSummary {
    name: String,
    dim: usize,
    depth: usize,
    layer_dims: Vec<usize>,
    hausdorff_dimension: u32,
    hausdorff_dimension_from_degrees: u32,
    valid: bool,
    violations: Vec<carnot_core::algebra::Violation>,
}

fn algebra_check(ctx: &Context, name: &Option<String>) -> Result<Emitted, Failure> {
    let mut failed = Vec::new();
    let mut out = Vec::new();
    for g in ctx.groups(name)? {
        let alg = g.algebra();
        let report = alg.validate();
        let s = AlgebraSummary {
            name: alg.name().to_string(),
            dim: alg.dim(),
            depth: alg.depth(),
            layer_dims: alg.layer_dims().to_vec(),
            hausdorff_dimension: alg.hausdorff_dimension(),
            hausdorff_dimension_from_degrees: alg.hausdorff_dimension_from_degrees(),
            valid: report.is_valid(),
            violations: report.violations.clone(),
        };
        if !s.valid {
            failed.push(format!("algebra {}: {report}", s.name));
        }
        if s.hausdorff_dimension != s.hausdorff_dimension_from_degrees {
            failed.push(format!("algebra {}: Hausdorff dimension formulas disagree", s.name));
        }
        out.push(s);
    }
    Ok(Emitted {
        stem: "algebra-check".into(),
        json: ctx.record("algebra check", out),
        tables: Vec::new(),
        failed,
    })
}

fn group_selftest(ctx: &Context, name: &Option<String>, samples: usize) -> Result<Emitted, Failure> {
    let reports: Vec<SelfTestReport> = ctx.groups(name)?.into_iter().map(|g| selftest(g, samples, ctx.seed)).collect();
    let failed = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("group {} failed its invariant suite", r.algebra))
        .collect();
    Ok(Emitted {
        stem: "group-selftest".into(),
        json: ctx.record("group selftest", &reports),
        tables: Vec::new(),
        failed,
    })
}

#[derive(Serialize)]
struct ClassifyResult<'a> {
    map: String,
    domain_center: Vec<f64>,
    domain_radius: f64,
    resolution: usize,
    census: &'a Census,
    all_degenerate: bool,
}

fn classify(ctx: &Context, map: &Option<String>, resolution: Option<usize>) -> Result<Emitted, Failure> {
    let resolution = resolution.unwrap_or(ctx.cfg.resolution);
    if resolution < 2 {
        return Err(Failure::Usage("--resolution must be at least 2".into()));
    }
    let mut results = Vec::new();
    let mut tables = Vec::new();
    let mut failed = Vec::new();
    let maps = ctx.maps(map)?;
    let mut censuses = Vec::new();
    for m in &maps {
        let ball = ctx.cfg.domain.ball(m.source().dim()).map_err(Failure::Config)?;
        let census = scan_grid(m, &ball, resolution).map_err(numerical)?;
        if census.nu0_below_target > 0 {
            failed.push(format!("{}: ν₀ < ν̃ at {} points", m.name(), census.nu0_below_target));
        }
        if census.witness_above_target_depth > 0 {
            failed.push(format!(
                "{}: regular witness above the target depth at {} points",
                m.name(),
                census.witness_above_target_depth
            ));
        }
        tables.push((format!("classify-{}-characteristic.csv", m.name()), characteristic_csv(m.source().dim(), &census).map_err(numerical)?));
        censuses.push((ball, census));
    }
    for (m, (ball, census)) in maps.iter().zip(&censuses) {
        results.push(ClassifyResult {
            map: m.name().to_string(),
            domain_center: ball.center().coords().to_vec(),
            domain_radius: ball.radius(),
            resolution,
            census,
            all_degenerate: census.degenerate == census.nodes,
        });
    }
    Ok(Emitted {
        stem: "classify".into(),
        json: ctx.record("classify", &results),
        tables,
        failed,
    })
}

#[derive(Serialize)]
struct MeasureResult {
    map: String,
    point: Vec<f64>,
    kind: PointKind,
    nu0: Option<u32>,
    hausdorff_dimension: u32,
    expected_tangent_exponent: Option<i64>,
    rows: Vec<MeasureRow>,
    tangent_converged: Vec<bool>,
    level_converged: Vec<bool>,
    tangent_fit: AsymptoticFit,
    level_fit: Option<AsymptoticFit>,
}

fn measure_fit(ctx: &Context, map: &Option<String>, point: Option<Vec<f64>>, radii: Option<Vec<f64>>) -> Result<Emitted, Failure> {
    let radii = radii.unwrap_or_else(|| ctx.cfg.radii.clone());
    if radii.len() < 4 {
        return Err(Failure::Usage(format!("need at least 4 radii, got {}", radii.len())));
    }
    if radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Failure::Usage("radii must be positive".into()));
    }
    let (lo, hi) = radii.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    if hi / lo < 8.0 {
        return Err(Failure::Usage(format!("radii span a factor {:.3} < 8", hi / lo)));
    }
    let q = QuadratureSettings::default();
    let mut results = Vec::new();
    let mut tables = Vec::new();
    for m in ctx.maps(map)? {
        let n = m.source().dim();
        let x = point.clone().or_else(|| ctx.cfg.point.clone()).unwrap_or_else(|| vec![0.0; n]);
        if x.len() != n {
            return Err(Failure::Usage(format!("point has {} coordinates, map {} needs {n}", x.len(), m.name())));
        }
        let class = classify_point(m, &x).map_err(numerical)?;
        let nu = m.source().algebra().hausdorff_dimension();
        let mut rows = Vec::new();
        let (mut tc, mut lc) = (Vec::new(), Vec::new());
        for &r in &radii {
            let t = tangent_plane_box_measure(m, &x, r, &q).map_err(numerical)?;
            tc.push(t.converged);
            let (level, prediction) = if class.kind == PointKind::Regular {
                let l = level_set_box_measure(m, &x, r, &q).map_err(numerical)?;
                lc.push(l.converged);
                (Some(l.value), Some(level_set_prediction(m, &x, r).map_err(numerical)?))
            } else {
                (None, None)
            };
            rows.push(MeasureRow {
                r,
                tangent_measure: t.value,
                level_measure: level,
                theorem_prediction: prediction,
            });
        }
        let tangent_fit = exponent_fit(&rows.iter().map(|r| (r.r, r.tangent_measure)).collect::<Vec<_>>()).map_err(numerical)?;
        let level_fit = if class.kind == PointKind::Regular {
            Some(exponent_fit(&rows.iter().map(|r| (r.r, r.level_measure.unwrap_or(0.0))).collect::<Vec<_>>()).map_err(numerical)?)
        } else {
            None
        };
        tables.push((format!("measure-{}.csv", m.name()), measure_csv(&rows).map_err(numerical)?));
        results.push(MeasureResult {
            map: m.name().to_string(),
            point: x,
            kind: class.kind,
            nu0: class.nu0,
            hausdorff_dimension: nu,
            expected_tangent_exponent: class.nu0.map(|v| nu as i64 - v as i64),
            rows,
            tangent_converged: tc,
            level_converged: lc,
            tangent_fit,
            level_fit,
        });
    }
    Ok(Emitted {
        stem: "measure-fit".into(),
        json: ctx.record("measure fit", &results),
        tables,
        failed: Vec::new(),
    })
}

fn probe_triangle(ctx: &Context, name: &Option<String>, r0: f64, samples: usize) -> Result<Emitted, Failure> {
    if !(r0 > 0.0 && r0.is_finite()) {
        return Err(Failure::Usage("--r0 must be positive".into()));
    }
    let mut out: Vec<(String, TriangleProbe)> = Vec::new();
    for g in ctx.groups(name)? {
        let p = quasi_triangle_probe(g, r0, samples, ctx.seed).map_err(numerical)?;
        out.push((g.algebra().name().to_string(), p));
    }
    #[derive(Serialize)]
    struct Entry {
        algebra: String,
        #[serde(rename = "C_estimate")]
        c_estimate: f64,
        samples: usize,
        seed: u64,
        r0: f64,
    }
    let failed = out
        .iter()
        .filter(|(_, p)| !(p.c_estimate.is_finite() && p.c_estimate >= 1.0))
        .map(|(a, p)| format!("{a}: invalid estimate {}", p.c_estimate))
        .collect();
    let entries: Vec<Entry> = out
        .into_iter()
        .map(|(algebra, p)| Entry {
            algebra,
            c_estimate: p.c_estimate,
            samples: p.samples,
            seed: p.seed,
            r0: p.r0,
        })
        .collect();
    Ok(Emitted {
        stem: "probe-triangle".into(),
        json: ctx.record("probe triangle", &entries),
        tables: Vec::new(),
        failed,
    })
}

fn coarea_verify(ctx: &Context, map: &Option<String>) -> Result<Emitted, Failure> {
    let settings = CoareaSettings::default();
    let mut reports: Vec<VerificationReport> = Vec::new();
    let mut tables = Vec::new();
    let mut failed = Vec::new();
    for m in ctx.maps(map)? {
        let ball = ctx.cfg.domain.ball(m.source().dim()).map_err(Failure::Config)?;
        let (report, slices) = verify(m, &ball, ctx.convention, ctx.seed, &settings).map_err(numerical)?;
        if report.balanced == Some(false) {
            failed.push(format!(
                "{}: ratio {} outside 1 ± {}",
                report.map, report.ratio, report.balance_tolerance
            ));
        }
        tables.push((format!("coarea-{}-slices.csv", m.name()), slices_csv(&slices).map_err(numerical)?));
        reports.push(report);
    }
    Ok(Emitted {
        stem: "coarea-verify".into(),
        json: ctx.record("coarea verify", &reports),
        tables,
        failed,
    })
}

#[derive(Serialize)]
struct TubeResult {
    map: String,
    tubes: Vec<TubeMass>,
}

fn coarea_tube(ctx: &Context, map: &Option<String>, epsilons: Option<Vec<f64>>) -> Result<Emitted, Failure> {
    let epsilons = epsilons.unwrap_or_else(|| ctx.cfg.epsilons.clone());
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Failure::Usage("epsilons must be a nonempty list of positive radii".into()));
    }
    let settings = CoareaSettings::default();
    let mut results = Vec::new();
    let mut tables = Vec::new();
    for m in ctx.maps(map)? {
        let ball = ctx.cfg.domain.ball(m.source().dim()).map_err(Failure::Config)?;
        let tubes = characteristic_contribution(m, &ball, &epsilons, ctx.convention, &settings, ctx.seed).map_err(numerical)?;
        tables.push((format!("coarea-{}-tube.csv", m.name()), tube_csv(&tubes).map_err(numerical)?));
        results.push(TubeResult {
            map: m.name().to_string(),
            tubes,
        });
    }
    Ok(Emitted {
        stem: "coarea-tube".into(),
        json: ctx.record("coarea tube", &results),
        tables,
        failed: Vec::new(),
    })
}
