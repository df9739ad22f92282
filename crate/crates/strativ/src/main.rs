//! Command-line front end: stratify, summarize, test, fit, and simulate
//! from delimiter-separated input files, emitting JSON results and
//! long-format CSV plot data.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use strativ::data::{AnalysisConfig, ColumnMap, Dataset};
use strativ::error::{Error, Result};
use strativ::numeric::normal_quantile;
use strativ::pipeline::{self, BasisChoice, RunManifest, SssExtra};
use strativ::qtest;
use strativ::ridge::DesignMode;
use strativ::sim::{
    self, EffectCase, EvalTarget, MethodKind, MethodSpec, ScenarioSpec, StudyBasis,
};
use strativ::stratify::StratumAssignment;
use strativ::summary::{StratumSummary, WeightFunction};
use strativ::susie::{self, SusieFit};

#[derive(Parser)]
#[command(
    name = "strativ",
    version,
    about = "Stratification-based instrumental-variable analysis of nonlinear effects"
)]
struct Cli {
    /// Directory for output files.
    #[arg(long, default_value = ".", global = true)]
    output_dir: PathBuf,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,
    /// Worker thread bound (default: STRATIV_THREADS or all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Input CSV/TSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Instrument column name.
    #[arg(long, default_value = "z")]
    z_col: String,
    /// Exposure column name.
    #[arg(long, default_value = "x")]
    x_col: String,
    /// Outcome column name.
    #[arg(long, default_value = "y")]
    y_col: String,
    /// Force tab delimiter (default: by file extension).
    #[arg(long)]
    tsv: bool,
    /// Configuration file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Configuration overrides, e.g. --set k=20 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
}

impl DataArgs {
    fn load(&self) -> Result<(Dataset, AnalysisConfig, Vec<u8>)> {
        let mut cfg = match &self.config {
            Some(path) => AnalysisConfig::load(path)?,
            None => AnalysisConfig::default(),
        };
        for item in &self.overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("--set expects KEY=VALUE, got `{item}`"))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(Error::InvalidConfig)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        let columns = ColumnMap {
            z: self.z_col.clone(),
            x: self.x_col.clone(),
            y: self.y_col.clone(),
        };
        let delimiter = if self.tsv {
            b'\t'
        } else {
            match self.data.extension().and_then(|e| e.to_str()) {
                Some("tsv") | Some("tab") => b'\t',
                _ => b',',
            }
        };
        let bytes = std::fs::read(&self.data).map_err(|source| Error::Io {
            path: self.data.clone(),
            source,
        })?;
        let data = Dataset::from_reader(bytes.as_slice(), &columns, delimiter)?;
        Ok((data, cfg, bytes))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Assign individuals to strata and report stratum composition.
    Stratify {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Per-stratum instrument associations, Wald ratios, and weight
    /// functions.
    Summaries {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Cochran-Q effect-linearity test.
    TestLinearity {
        #[command(flatten)]
        data: DataArgs,
        /// standard (df K-1), decomposition (K-2), or factorization (K-3).
        #[arg(long, default_value = "standard")]
        variant: String,
    },
    /// Parametric effect-shape fit over a basis.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// sof (weight-function inner products) or sos (mean evaluation).
        #[arg(long, default_value = "sof")]
        mode: String,
        /// poly:DEGREE, indicator:KNOTFILE, or pwl:KNOTFILE.
        #[arg(long, default_value = "poly:2")]
        basis: String,
        /// Penalty weight: `auto` (GCV) or a number.
        #[arg(long, default_value = "auto")]
        lambda: String,
        /// Roughness-penalty derivative order.
        #[arg(long, default_value_t = 2)]
        penalty_order: usize,
        /// Confidence level for curve bands.
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Points on the output curve.
        #[arg(long, default_value_t = 201)]
        curve_points: usize,
    },
    /// Change-point analysis via the sum-of-single-effects fit.
    Susie {
        #[command(flatten)]
        data: DataArgs,
        /// Maximum number of effects.
        #[arg(long = "L", alias = "l")]
        l: Option<usize>,
        /// `auto` or a file with one knot per line.
        #[arg(long, default_value = "auto")]
        knots: String,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Posterior draws for credible bands.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
    /// Full pipeline: stratify, summarize, change-point fit, report.
    Sss {
        #[command(flatten)]
        data: DataArgs,
        /// Also run the linearity Q test.
        #[arg(long)]
        test_linearity: bool,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value_t = 201)]
        curve_points: usize,
    },
    /// Seeded replication study on synthetic data.
    Simulate {
        /// part1-s1..part1-s4 or part3-s1..part3-s4.
        #[arg(long)]
        scenario: String,
        /// linear, cp1[:T], cp2, quad[:LIN:QUAD], step[:T], exp[:RATE].
        #[arg(long, default_value = "default")]
        case: String,
        /// m1, m2, m3, sos-poly:D, sof-poly:D, sos-step:T1[,..],
        /// sof-step:T1[,..], or sss.
        #[arg(long, default_value = "sss")]
        method: String,
        #[arg(long, default_value_t = 5_000)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Strata for stratified methods.
        #[arg(long, default_value_t = 100)]
        k: usize,
        /// Evaluation quantiles.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.3, 0.5, 0.7, 0.9])]
        quantiles: Vec<f64>,
        /// Score the effect function or its intensity.
        #[arg(long, default_value = "function")]
        target: String,
    },
    /// Counterfactual outcome prediction at a fixed exposure level.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        /// susie_fit.json from a previous `susie` or `sss` run.
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        x_star: f64,
    },
}

fn main() {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("STRATIV_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            let payload = serde_json::json!({
                "error": err.kind(),
                "message": err.to_string(),
                "exit_code": err.exit_code(),
            });
            eprintln!("{}", serde_json::to_string_pretty(&payload).unwrap());
            std::process::exit(err.exit_code());
        }
    }
}

/// Collects output files, refusing to overwrite without --force.
struct OutputWriter {
    dir: PathBuf,
    force: bool,
    written: Vec<String>,
}

impl OutputWriter {
    fn new(dir: &Path, force: bool) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.into(),
            source,
        })?;
        Ok(OutputWriter {
            dir: dir.into(),
            force,
            written: Vec::new(),
        })
    }

    fn reserve(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if path.exists() && !self.force {
            return Err(Error::InvalidArgument(format!(
                "refusing to overwrite {} (use --force)",
                path.display()
            )));
        }
        self.written.push(name.to_string());
        Ok(path)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.reserve(name)?;
        let mut bytes = serde_json::to_vec_pretty(value)
            .map_err(|e| Error::InvalidArgument(format!("serialization failed: {e}")))?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes).map_err(|source| Error::Io { path, source })
    }

    fn csv<F>(&mut self, name: &str, run_id: &str, header: &[&str], fill: F) -> Result<()>
    where
        F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
    {
        let path = self.reserve(name)?;
        let mut body = Vec::new();
        body.extend_from_slice(format!("# run_id: {run_id}\n").as_bytes());
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(header).map_err(|source| Error::Csv {
            path: path.clone(),
            source,
        })?;
        fill(&mut wtr)?;
        let inner = wtr
            .into_inner()
            .map_err(|e| Error::InvalidArgument(format!("csv flush failed: {e}")))?;
        body.extend_from_slice(&inner);
        std::fs::write(&path, body).map_err(|source| Error::Io { path, source })
    }
}

fn write_record(wtr: &mut csv::Writer<Vec<u8>>, fields: &[String]) -> Result<()> {
    wtr.write_record(fields)
        .map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn write_curve(
    out: &mut OutputWriter,
    name: &str,
    run_id: &str,
    curve: &strativ::susie::EffectCurve,
) -> Result<()> {
    out.csv(
        name,
        run_id,
        &["x", "h", "h_lo", "h_hi", "h_prime"],
        |wtr| {
            for i in 0..curve.x_grid.len() {
                let hp = curve
                    .h_prime
                    .as_ref()
                    .map(|v| fmt(v[i]))
                    .unwrap_or_default();
                write_record(
                    wtr,
                    &[
                        fmt(curve.x_grid[i]),
                        fmt(curve.h[i]),
                        fmt(curve.h_lo[i]),
                        fmt(curve.h_hi[i]),
                        hp,
                    ],
                )?;
            }
            Ok(())
        },
    )
}

fn write_strata_csv(
    out: &mut OutputWriter,
    run_id: &str,
    assignment: &StratumAssignment,
) -> Result<()> {
    out.csv("strata.csv", run_id, &["row", "stratum"], |wtr| {
        for (i, a) in assignment.assignment.iter().enumerate() {
            let label = match a {
                Some(k) => k.to_string(),
                None => "excluded".to_string(),
            };
            write_record(wtr, &[(i + 1).to_string(), label])?;
        }
        Ok(())
    })
}

fn write_summaries_csv(
    out: &mut OutputWriter,
    run_id: &str,
    summaries: &[StratumSummary],
    level: f64,
) -> Result<()> {
    let z = normal_quantile(0.5 + level / 2.0);
    out.csv(
        "summaries.csv",
        run_id,
        &[
            "stratum",
            "n",
            "x_bar",
            "alpha_hat",
            "se_alpha",
            "theta_hat",
            "se_theta",
            "beta_hat",
            "se_beta",
            "beta_lo",
            "beta_hi",
            "weak",
        ],
        |wtr| {
            for s in summaries {
                write_record(
                    wtr,
                    &[
                        s.stratum.to_string(),
                        s.n_s.to_string(),
                        fmt(s.x_bar),
                        fmt(s.alpha_hat),
                        fmt(s.se_alpha),
                        fmt(s.theta_hat),
                        fmt(s.se_theta),
                        fmt(s.beta_hat),
                        fmt(s.se_beta),
                        fmt(s.beta_hat - z * s.se_beta),
                        fmt(s.beta_hat + z * s.se_beta),
                        s.weak_instrument.to_string(),
                    ],
                )?;
            }
            Ok(())
        },
    )
}

fn write_weights_csv(
    out: &mut OutputWriter,
    run_id: &str,
    weights: &[WeightFunction],
) -> Result<()> {
    out.csv(
        "weights.csv",
        run_id,
        &["stratum", "t", "cum_above"],
        |wtr| {
            for w in weights {
                for (t, c) in w.grid.iter().zip(&w.cum_above) {
                    write_record(wtr, &[w.stratum.to_string(), fmt(*t), fmt(*c)])?;
                }
            }
            Ok(())
        },
    )
}

#[derive(Serialize)]
struct StratifyReport<'a> {
    run_id: &'a str,
    method: &'a str,
    strata_count: usize,
    excluded_count: usize,
    sizes: Vec<usize>,
    x_means: Vec<f64>,
    z_means: Vec<f64>,
}

#[derive(Serialize, serde::Deserialize)]
struct SusieFitFile {
    run_id: String,
    knots: Vec<f64>,
    fit: SusieFit,
}

fn parse_basis(spec: &str) -> Result<BasisChoice> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "poly" => {
            let degree = arg
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad degree in `{spec}`")))?;
            Ok(BasisChoice::Poly { degree })
        }
        "indicator" | "pwl" => {
            let knots = read_knot_file(Path::new(arg))?;
            if kind == "indicator" {
                Ok(BasisChoice::Indicator { knots })
            } else {
                Ok(BasisChoice::PiecewiseLinear { knots })
            }
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown basis `{other}` (expected poly:D, indicator:FILE, pwl:FILE)"
        ))),
    }
}

fn read_knot_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })?;
    let mut knots = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        knots.push(line.parse::<f64>().map_err(|_| {
            Error::InvalidArgument(format!("{}:{}: not a number", path.display(), i + 1))
        })?);
    }
    if knots.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} contains no knots",
            path.display()
        )));
    }
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    knots.dedup();
    Ok(knots)
}

fn parse_scenario(name: &str, case: &str) -> Result<ScenarioSpec> {
    let spec = match name {
        "part1-s1" => ScenarioSpec::part1(1)?,
        "part1-s2" => ScenarioSpec::part1(2)?,
        "part1-s3" => ScenarioSpec::part1(3)?,
        "part1-s4" => ScenarioSpec::part1(4)?,
        "part3-s1" => ScenarioSpec::part3(1)?,
        "part3-s2" => ScenarioSpec::part3(2)?,
        "part3-s3" => ScenarioSpec::part3(3)?,
        "part3-s4" => ScenarioSpec::part3(4)?,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown scenario `{other}` (expected part1-s1..4 or part3-s1..4)"
            )))
        }
    };
    if case == "default" {
        return Ok(spec);
    }
    let (kind, args) = case.split_once(':').unwrap_or((case, ""));
    let nums: Vec<f64> = if args.is_empty() {
        Vec::new()
    } else {
        args.split(':')
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad number in case `{case}`")))
            })
            .collect::<Result<_>>()?
    };
    let effect = match kind {
        "linear" => EffectCase::Linear,
        "cp1" => EffectCase::OneChangepoint {
            threshold: nums.first().copied().unwrap_or(spec.default_changepoint()),
        },
        "cp2" => match spec.exposure_link {
            sim::ExposureLink::Identity => EffectCase::TwoChangepointSymmetric,
            sim::ExposureLink::Exp => EffectCase::TwoChangepointSkewed,
        },
        "quad" => EffectCase::Quadratic {
            linear: nums.first().copied().unwrap_or(match spec.exposure_link {
                sim::ExposureLink::Identity => -1.0,
                sim::ExposureLink::Exp => -2.0,
            }),
            quadratic: nums.get(1).copied().unwrap_or(0.5),
        },
        "step" => EffectCase::IndicatorStep {
            threshold: nums.first().copied().unwrap_or(0.0),
        },
        "exp" => EffectCase::Exponential {
            rate: nums.first().copied().unwrap_or(0.5),
        },
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown effect case `{other}`"
            )))
        }
    };
    Ok(spec.with_case(effect))
}

fn parse_method(spec: &str, k: usize) -> Result<MethodSpec> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    let parse_thresholds = || -> Result<Vec<f64>> {
        arg.split(',')
            .filter(|v| !v.is_empty())
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad threshold in `{spec}`")))
            })
            .collect()
    };
    let parse_degree = || -> Result<usize> {
        arg.parse()
            .map_err(|_| Error::InvalidArgument(format!("bad degree in `{spec}`")))
    };
    let kind = match kind {
        "m1" => MethodKind::OracleControlFunction,
        "m2" => MethodKind::OracleIvRegression,
        "m3" => MethodKind::StratifiedSos {
            basis: StudyBasis::PolynomialIntensity { degree: 1 },
        },
        "sos-poly" => MethodKind::StratifiedSos {
            basis: StudyBasis::PolynomialIntensity {
                degree: parse_degree()?,
            },
        },
        "sof-poly" => MethodKind::StratifiedSof {
            basis: StudyBasis::PolynomialIntensity {
                degree: parse_degree()?,
            },
        },
        "sos-step" => MethodKind::StratifiedSos {
            basis: StudyBasis::StepWithIntercept {
                thresholds: parse_thresholds()?,
            },
        },
        "sof-step" => MethodKind::StratifiedSof {
            basis: StudyBasis::StepWithIntercept {
                thresholds: parse_thresholds()?,
            },
        },
        "sss" => MethodKind::Sss,
        other => return Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
    };
    Ok(MethodSpec::new(kind, k))
}

fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    let mut out = OutputWriter::new(&cli.output_dir, cli.force)?;
    match cli.command {
        Command::Stratify { data } => {
            let (dataset, cfg, bytes) = data.load()?;
            let mut manifest = RunManifest::new("stratify", &cfg, data.data.to_str(), Some(&bytes));
            let assignment = pipeline::stratify_data(&dataset, &cfg)?;
            let rows = assignment.strata_rows();
            let report = StratifyReport {
                run_id: &manifest.run_id,
                method: match assignment.method {
                    strativ::stratify::StratifyMethod::Residual => "residual",
                    strativ::stratify::StratifyMethod::DoublyRanked => "doubly_ranked",
                },
                strata_count: assignment.strata_count,
                excluded_count: assignment.excluded_count,
                sizes: rows.iter().map(|r| r.len()).collect(),
                x_means: rows
                    .iter()
                    .map(|r| r.iter().map(|&i| dataset.x[i]).sum::<f64>() / r.len() as f64)
                    .collect(),
                z_means: rows
                    .iter()
                    .map(|r| r.iter().map(|&i| dataset.z[i]).sum::<f64>() / r.len() as f64)
                    .collect(),
            };
            let run_id = manifest.run_id.clone();
            out.json("stratify.json", &report)?;
            write_strata_csv(&mut out, &run_id, &assignment)?;
            finish(&mut out, &mut manifest, started)
        }
        Command::Summaries { data } => {
            let (dataset, cfg, bytes) = data.load()?;
            let mut manifest =
                RunManifest::new("summaries", &cfg, data.data.to_str(), Some(&bytes));
            let assignment = pipeline::stratify_data(&dataset, &cfg)?;
            let (summaries, weights) = pipeline::summarize(&dataset, &assignment, &cfg)?;
            let run_id = manifest.run_id.clone();
            out.json(
                "summaries.json",
                &serde_json::json!({ "run_id": run_id, "summaries": summaries }),
            )?;
            write_summaries_csv(&mut out, &run_id, &summaries, 0.95)?;
            write_weights_csv(&mut out, &run_id, &weights)?;
            finish(&mut out, &mut manifest, started)
        }
        Command::TestLinearity { data, variant } => {
            let (dataset, cfg, bytes) = data.load()?;
            let mut manifest =
                RunManifest::new("test-linearity", &cfg, data.data.to_str(), Some(&bytes));
            let assignment = pipeline::stratify_data(&dataset, &cfg)?;
            let (summaries, _) = pipeline::summarize(&dataset, &assignment, &cfg)?;
            let result = match variant.as_str() {
                "standard" => qtest::q_linearity(&summaries)?,
                "decomposition" => qtest::q_linearity_decomposition(&summaries)?,
                "factorization" => qtest::q_linearity_factorization(&summaries)?,
                other => return Err(Error::InvalidArgument(format!("unknown variant `{other}`"))),
            };
            out.json(
                "linearity.json",
                &serde_json::json!({ "run_id": manifest.run_id, "result": result }),
            )?;
            finish(&mut out, &mut manifest, started)
        }
        Command::Fit {
            data,
            mode,
            basis,
            lambda,
            penalty_order,
            level,
            curve_points,
        } => {
            let (dataset, cfg, bytes) = data.load()?;
            let mut manifest = RunManifest::new("fit", &cfg, data.data.to_str(), Some(&bytes));
            let mode = match mode.as_str() {
                "sof" => DesignMode::Sof,
                "sos" => DesignMode::Sos,
                other => return Err(Error::InvalidArgument(format!("unknown mode `{other}`"))),
            };
            let basis_choice = parse_basis(&basis)?;
            let lambda = match lambda.as_str() {
                "auto" => None,
                v => Some(
                    v.parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("bad lambda `{v}`")))?,
                ),
            };
            let outputs = pipeline::run_parametric(
                &dataset,
                &cfg,
                mode,
                &basis_choice,
                lambda,
                penalty_order,
                level,
                curve_points,
            )?;
            let run_id = manifest.run_id.clone();
            out.json(
                "fit.json",
                &serde_json::json!({
                    "run_id": run_id,
                    "mode": mode,
                    "basis": basis_choice,
                    "lambda": outputs.lambda,
                    "fit": outputs.fit,
                    "warnings": outputs.warnings,
                }),
            )?;
            write_curve(&mut out, "curve.csv", &run_id, &outputs.curve)?;
            write_summaries_csv(&mut out, &run_id, &outputs.summaries, level)?;
            finish(&mut out, &mut manifest, started)
        }
        Command::Susie {
            data,
            l,
            knots,
            tol,
            samples,
            level,
        } => {
            let (dataset, mut cfg, bytes) = data.load()?;
            if let Some(l) = l {
                cfg.max_effects = l;
            }
            let mut manifest = RunManifest::new("susie", &cfg, data.data.to_str(), Some(&bytes));
            let sorted_x = dataset.sorted_x();
            let knot_values = match knots.as_str() {
                "auto" => {
                    susie::default_knots(&sorted_x, cfg.candidate_count, cfg.knot_quantile_range)
                }
                path => {
                    let mut v = read_knot_file(Path::new(path))?;
                    if v[0] > sorted_x[0] {
                        v.insert(0, sorted_x[0]);
                    }
                    v
                }
            };
            let assignment = pipeline::stratify_data(&dataset, &cfg)?;
            let (summaries, weights) = pipeline::summarize(&dataset, &assignment, &cfg)?;
            let design = susie::build_changepoint_design(&summaries, &weights, &knot_values)?;
            let opts = strativ::susie::SusieOptions {
                max_effects: cfg.max_effects,
                tol,
                ..Default::default()
            };
            let fit = susie::susie_ibss(&design, &opts)?;
            let run_id = manifest.run_id.clone();
            let mut sets = Vec::new();
            for lidx in 0..fit.effects() {
                if fit.detected[lidx] {
                    sets.push(serde_json::json!({
                        "effect": lidx,
                        "credible": susie::credible_set(&fit.pi_star[lidx], &design.knots, level)?,
                        "location": pipeline::changepoint_location(&fit.pi_star[lidx], &design.knots),
                    }));
                }
            }
            let x_grid = pipeline::linspace(sorted_x[0], *sorted_x.last().unwrap(), 201);
            let curve = susie::effect_curve_with_bands(
                &fit,
                &design.knots,
                &x_grid,
                samples,
                level,
                cfg.seed,
            )?;
            out.json(
                "susie_fit.json",
                &SusieFitFile {
                    run_id: run_id.clone(),
                    knots: design.knots.clone(),
                    fit: fit.clone(),
                },
            )?;
            out.json(
                "credible_sets.json",
                &serde_json::json!({ "run_id": run_id, "level": level, "sets": sets }),
            )?;
            write_curve(&mut out, "curve.csv", &run_id, &curve)?;
            finish(&mut out, &mut manifest, started)
        }
        Command::Sss {
            data,
            test_linearity,
            samples,
            level,
            curve_points,
        } => {
            let (dataset, cfg, bytes) = data.load()?;
            let mut manifest = RunManifest::new("sss", &cfg, data.data.to_str(), Some(&bytes));
            let extra = SssExtra {
                test_linearity,
                samples,
                level,
                curve_points,
                ..Default::default()
            };
            let outputs = pipeline::run_sss(&dataset, &cfg, &extra)?;
            let run_id = manifest.run_id.clone();
            out.json(
                "sss.json",
                &serde_json::json!({
                    "run_id": run_id,
                    "summaries": outputs.summaries,
                    "knots": outputs.knots,
                    "fit": outputs.fit,
                    "effects": outputs.effects,
                    "linearity": outputs.linearity,
                    "warnings": outputs.warnings,
                }),
            )?;
            out.json(
                "susie_fit.json",
                &SusieFitFile {
                    run_id: run_id.clone(),
                    knots: outputs.knots.clone(),
                    fit: outputs.fit.clone(),
                },
            )?;
            write_summaries_csv(&mut out, &run_id, &outputs.summaries, level)?;
            out.csv(
                "pip.csv",
                &run_id,
                &["effect", "knot_index", "knot", "pip"],
                |wtr| {
                    for (lidx, row) in outputs.fit.pi_star.iter().enumerate() {
                        for (p, pip) in row.iter().enumerate() {
                            write_record(
                                wtr,
                                &[
                                    lidx.to_string(),
                                    p.to_string(),
                                    fmt(outputs.knots[p]),
                                    fmt(*pip),
                                ],
                            )?;
                        }
                    }
                    Ok(())
                },
            )?;
            write_curve(&mut out, "curve.csv", &run_id, &outputs.curve)?;
            finish(&mut out, &mut manifest, started)
        }
        Command::Simulate {
            scenario,
            case,
            method,
            n,
            reps,
            seed,
            k,
            quantiles,
            target,
        } => {
            let spec = parse_scenario(&scenario, &case)?;
            let method_spec = parse_method(&method, k)?;
            let target = match target.as_str() {
                "function" => EvalTarget::EffectFunction,
                "intensity" => EvalTarget::EffectIntensity,
                other => return Err(Error::InvalidArgument(format!("unknown target `{other}`"))),
            };
            let cfg = AnalysisConfig {
                seed,
                strata_count: k,
                ..Default::default()
            };
            let mut manifest = RunManifest::new(
                "simulate",
                &cfg,
                None,
                Some(format!("{scenario}|{case}|{method}|{n}|{reps}").as_bytes()),
            );
            let result = sim::run_study(&spec, &method_spec, n, reps, &quantiles, seed, target)?;
            let run_id = manifest.run_id.clone();
            out.json(
                "study.json",
                &serde_json::json!({ "run_id": run_id, "study": result }),
            )?;
            out.csv(
                "mse.csv",
                &run_id,
                &["quantile", "x", "truth", "mse"],
                |wtr| {
                    for j in 0..result.eval_quantiles.len() {
                        write_record(
                            wtr,
                            &[
                                fmt(result.eval_quantiles[j]),
                                fmt(result.eval_points[j]),
                                fmt(result.truth[j]),
                                fmt(result.mse[j]),
                            ],
                        )?;
                    }
                    Ok(())
                },
            )?;
            finish(&mut out, &mut manifest, started)
        }
        Command::Predict { data, fit, x_star } => {
            let (dataset, cfg, bytes) = data.load()?;
            let mut manifest = RunManifest::new("predict", &cfg, data.data.to_str(), Some(&bytes));
            let text = std::fs::read_to_string(&fit).map_err(|source| Error::Io {
                path: fit.clone(),
                source,
            })?;
            let fit_file: SusieFitFile = serde_json::from_str(&text)
                .map_err(|e| Error::InvalidArgument(format!("{}: {e}", fit.display())))?;
            let prediction = susie::counterfactual_predict(
                &fit_file.fit,
                &fit_file.knots,
                &dataset.x,
                &dataset.y,
                x_star,
            )?;
            let run_id = manifest.run_id.clone();
            out.json(
                "predict.json",
                &serde_json::json!({
                    "run_id": run_id,
                    "x_star": x_star,
                    "mean": prediction.mean,
                    "n": prediction.predictions.len(),
                    "source_fit": fit_file.run_id,
                }),
            )?;
            out.csv(
                "predictions.csv",
                &run_id,
                &["row", "x", "y", "y_hat"],
                |wtr| {
                    for i in 0..dataset.len() {
                        write_record(
                            wtr,
                            &[
                                (i + 1).to_string(),
                                fmt(dataset.x[i]),
                                fmt(dataset.y[i]),
                                fmt(prediction.predictions[i]),
                            ],
                        )?;
                    }
                    Ok(())
                },
            )?;
            finish(&mut out, &mut manifest, started)
        }
    }
}

fn finish(out: &mut OutputWriter, manifest: &mut RunManifest, started: Instant) -> Result<()> {
    manifest.outputs = out.written.clone();
    manifest.outputs.push("manifest.json".to_string());
    manifest.timing_ms = started.elapsed().as_millis();
    out.json("manifest.json", manifest)
}
