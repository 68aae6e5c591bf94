//! `detbench`: cost analysis, lightweighting diffs, forward smoke runs,
//! loss gradient checks, toy box-regression training, and detection-metrics
//! evaluation for YOLOv5-family models.
//!
//! Exit codes: 0 on success, 1 on any validation or I/O error, 2 when a
//! `--assert` band or a gradient-check tolerance is violated.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use detbench_core::cost::{
    count_model, diff_reports, render_cost_table, render_diff_table, CostReport, DiffTotals,
};
use detbench_core::graph::{
    build_graph, builtin_model_text, forward_graph, init_model_weights, parse_model_config,
    ModelGraph, BUILTIN_NAMES,
};
use detbench_core::loss::{easy_outlier_mixture, grad_check, toy_train, LossKind, WiouState};
use detbench_core::metrics::{load_dataset, nms, standard_report, EvalReport};
use detbench_core::Tensor;

#[derive(Parser)]
#[command(
    name = "detbench",
    version,
    about = "Workbench for YOLOv5-family detection architectures: analytic \
             cost reports, model diffs, CPU forward passes, box-loss gradient \
             checks, toy training, and dataset evaluation."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer parameter and MAC report for one model
    Analyze(AnalyzeArgs),
    /// Layer-by-layer cost comparison of two models
    Diff(DiffArgs),
    /// Forward pass on random input, reporting output map shapes
    Forward(ForwardArgs),
    /// Check analytic loss gradients against central finite differences
    Gradcheck(GradcheckArgs),
    /// Gradient-descent box fitting on a synthetic easy/outlier mixture
    Toytrain(ToytrainArgs),
    /// Score a predictions directory against a labels directory
    Eval(EvalArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Model definition: a file path or builtin:NAME
    #[arg(long)]
    model: String,
    /// Override the class count from the model file
    #[arg(long)]
    nc: Option<i64>,
    /// Square input size in pixels (multiple of 32)
    #[arg(long, default_value_t = 640)]
    imgsz: usize,
    /// Emit JSON instead of a table
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct DiffArgs {
    /// First model (file path or builtin:NAME)
    #[arg(long)]
    a: String,
    /// Second model (file path or builtin:NAME)
    #[arg(long)]
    b: String,
    /// Override the class count for both models
    #[arg(long)]
    nc: Option<i64>,
    /// Square input size in pixels (multiple of 32)
    #[arg(long, default_value_t = 640)]
    imgsz: usize,
    /// Band checks over the totals, e.g. params:-26.61%±4 gflops:-13.09%±4
    /// ("+-" also accepted); any violation exits with code 2
    #[arg(long = "assert", value_name = "METRIC:PCT±PP", num_args = 1.., value_parser = parse_band)]
    asserts: Vec<BandAssert>,
    /// Emit JSON instead of a table
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ForwardArgs {
    /// Model definition: a file path or builtin:NAME
    #[arg(long)]
    model: String,
    /// Override the class count from the model file
    #[arg(long)]
    nc: Option<i64>,
    /// Square input size in pixels (multiple of 32)
    #[arg(long, default_value_t = 64)]
    imgsz: usize,
    /// Seed for weight initialization and the random input
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Emit JSON instead of text
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Loss to check: iou, ciou, wiou_v1, wiou_v2, or wiou_v3
    #[arg(long)]
    loss: String,
    /// Number of random box pairs
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Seed for the sampled pairs
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum allowed relative error per gradient component
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Emit JSON instead of text
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ToytrainArgs {
    /// Loss to train with: iou, ciou, wiou_v1, wiou_v2, or wiou_v3
    #[arg(long, default_value = "wiou_v3")]
    loss: String,
    /// Gradient-descent steps
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Learning rate on the box corners
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Seed for the box mixture
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of moderately-offset boxes in the mixture
    #[arg(long, default_value_t = 90)]
    easy: usize,
    /// Number of fully disjoint outlier boxes in the mixture
    #[arg(long, default_value_t = 10)]
    outliers: usize,
    /// WIoU focusing shape parameter
    #[arg(long, default_value_t = WiouState::<f64>::DEFAULT_ALPHA)]
    alpha: f64,
    /// WIoU focusing peak location
    #[arg(long, default_value_t = WiouState::<f64>::DEFAULT_DELTA)]
    delta: f64,
    /// Running-mean update weight
    #[arg(long, default_value_t = WiouState::<f64>::DEFAULT_MOMENTUM)]
    momentum: f64,
    /// Emit JSON instead of text
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of label files: first line `W H`, then `class cx cy w h`
    #[arg(long)]
    labels: PathBuf,
    /// Directory of prediction files: lines `class conf cx cy w h`
    #[arg(long)]
    preds: PathBuf,
    /// Number of classes; ids must lie in [0, nc)
    #[arg(long)]
    nc: usize,
    /// Drop predictions with confidence below this value
    #[arg(long, default_value_t = 0.0)]
    conf: f64,
    /// Run class-aware NMS at this IoU before scoring (off by default)
    #[arg(long)]
    nms_iou: Option<f64>,
    /// Emit JSON instead of text
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum DiffMetric {
    Params,
    Macs,
    Gflops,
}

impl DiffMetric {
    fn name(self) -> &'static str {
        match self {
            DiffMetric::Params => "params",
            DiffMetric::Macs => "macs",
            DiffMetric::Gflops => "gflops",
        }
    }

    fn actual_pct(self, totals: &DiffTotals) -> f64 {
        match self {
            DiffMetric::Params => totals.params_delta_pct,
            DiffMetric::Macs => totals.macs_delta_pct,
            DiffMetric::Gflops => totals.gflops_delta_pct,
        }
    }
}

/// One `--assert` band: the expected percentage change of a diff total,
/// with a symmetric tolerance in percentage points.
#[derive(Debug, Clone, Copy)]
struct BandAssert {
    metric: DiffMetric,
    expected_pct: f64,
    band_pp: f64,
}

fn parse_band(s: &str) -> Result<BandAssert, String> {
    let usage = "expected METRIC:PCT±PP, e.g. params:-26.61%±4";
    let (metric, rest) = s.split_once(':').ok_or_else(|| usage.to_string())?;
    let metric = match metric {
        "params" => DiffMetric::Params,
        "macs" => DiffMetric::Macs,
        "gflops" => DiffMetric::Gflops,
        other => return Err(format!("unknown metric `{other}`; expected params, macs, or gflops")),
    };
    let (value, band) = rest
        .split_once('±')
        .or_else(|| rest.split_once("+-"))
        .ok_or_else(|| format!("missing ± separator; {usage}"))?;
    let expected_pct: f64 = value
        .trim_end_matches('%')
        .parse()
        .map_err(|_| format!("bad percentage `{value}`; {usage}"))?;
    let band_pp: f64 = band
        .trim_end_matches("pp")
        .trim_end_matches('%')
        .parse()
        .map_err(|_| format!("bad band `{band}`; {usage}"))?;
    if !expected_pct.is_finite() || !band_pp.is_finite() || band_pp < 0.0 {
        return Err(format!("band values must be finite and the tolerance non-negative; {usage}"));
    }
    Ok(BandAssert {
        metric,
        expected_pct,
        band_pp,
    })
}

fn load_graph(model: &str, nc: Option<i64>) -> Result<ModelGraph> {
    let text = if let Some(name) = model.strip_prefix("builtin:") {
        builtin_model_text(name)
            .ok_or_else(|| {
                anyhow!(
                    "unknown builtin model `{name}`; available: {}",
                    BUILTIN_NAMES.join(", ")
                )
            })?
            .to_string()
    } else {
        fs::read_to_string(model).with_context(|| format!("reading model file `{model}`"))?
    };
    let mut config = parse_model_config(&text).map_err(|e| anyhow!("{model}: {e}"))?;
    if let Some(nc) = nc {
        config.nc = nc;
    }
    build_graph(&config).map_err(|e| anyhow!("{model}: {e}"))
}

fn cost_report(model: &str, nc: Option<i64>, imgsz: usize) -> Result<CostReport> {
    let graph = load_graph(model, nc)?;
    count_model(&graph, (imgsz, imgsz)).map_err(|e| anyhow!("{model}: {e}"))
}

fn run_analyze(args: &AnalyzeArgs) -> Result<ExitCode> {
    let report = cost_report(&args.model, args.nc, args.imgsz)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("model {}  input {}x{}", args.model, args.imgsz, args.imgsz);
        print!("{}", render_cost_table(&report));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_diff(args: &DiffArgs) -> Result<ExitCode> {
    let report_a = cost_report(&args.a, args.nc, args.imgsz)?;
    let report_b = cost_report(&args.b, args.nc, args.imgsz)?;
    let diff = diff_reports(&report_a, &report_b);

    let verdicts: Vec<(BandAssert, f64, bool)> = args
        .asserts
        .iter()
        .map(|&a| {
            let actual = a.metric.actual_pct(&diff.totals);
            let pass = (actual - a.expected_pct).abs() <= a.band_pp;
            (a, actual, pass)
        })
        .collect();

    if args.json {
        let assertions: Vec<_> = verdicts
            .iter()
            .map(|(a, actual, pass)| {
                json!({
                    "metric": a.metric.name(),
                    "expected_pct": a.expected_pct,
                    "band_pp": a.band_pp,
                    "actual_pct": actual,
                    "pass": pass,
                })
            })
            .collect();
        let out = json!({
            "a": args.a,
            "b": args.b,
            "input": [args.imgsz, args.imgsz],
            "report": diff,
            "assertions": assertions,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!(
            "a {}  b {}  input {}x{}",
            args.a, args.b, args.imgsz, args.imgsz
        );
        print!("{}", render_diff_table(&diff));
        for (a, actual, pass) in &verdicts {
            println!(
                "assert {}: actual {:+.2}%, expected {:+.2}% ± {}pp -> {}",
                a.metric.name(),
                actual,
                a.expected_pct,
                a.band_pp,
                if *pass { "PASS" } else { "FAIL" }
            );
        }
    }
    if verdicts.iter().any(|(_, _, pass)| !pass) {
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_forward(args: &ForwardArgs) -> Result<ExitCode> {
    let graph = load_graph(&args.model, args.nc)?;
    let weights = init_model_weights(&graph, args.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1));
    let input = Tensor::from_rng_uniform([1, 3, args.imgsz, args.imgsz], &mut rng, 0.0, 1.0);

    let started = Instant::now();
    let maps = forward_graph(&graph, &weights, &input).map_err(|e| anyhow!("{e}"))?;
    let elapsed = started.elapsed();

    let all_finite = maps.iter().all(Tensor::all_finite);
    if args.json {
        let shapes: Vec<_> = maps
            .iter()
            .zip(&graph.detect_strides)
            .map(|(m, s)| json!({"shape": m.shape(), "stride": s}))
            .collect();
        let out = json!({
            "model": args.model,
            "imgsz": args.imgsz,
            "seed": args.seed,
            "maps": shapes,
            "all_finite": all_finite,
            "elapsed_ms": elapsed.as_secs_f64() * 1e3,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!(
            "model {}  input 1x3x{}x{}  seed {}",
            args.model, args.imgsz, args.imgsz, args.seed
        );
        for (m, s) in maps.iter().zip(&graph.detect_strides) {
            let [n, c, h, w] = m.shape();
            println!("map: {n}x{c}x{h}x{w}  stride {s}");
        }
        println!(
            "finite {}  elapsed {:.1} ms",
            all_finite,
            elapsed.as_secs_f64() * 1e3
        );
    }
    if !all_finite {
        bail!("forward pass produced non-finite values");
    }
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    let kind = LossKind::from_str(&args.loss)?;
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    if !(args.tolerance.is_finite() && args.tolerance > 0.0) {
        bail!("--tolerance must be positive");
    }
    let report = grad_check(kind, args.trials, args.seed, args.tolerance);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!(
            "loss {}: {} trials, step {:.0e}",
            report.loss, report.trials, report.h
        );
        println!(
            "max rel err {:.3e} (mean {:.3e}), tolerance {:.0e} -> {}",
            report.max_rel_err,
            report.mean_rel_err,
            report.tolerance,
            if report.pass { "PASS" } else { "FAIL" }
        );
        if let Some(w) = &report.worst {
            println!(
                "worst: trial {} coord {} analytic {:.9} numeric {:.9} rel {:.3e}",
                w.trial, w.coord, w.analytic, w.numeric, w.rel_err
            );
        }
    }
    if report.pass {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

fn mean_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn run_toytrain(args: &ToytrainArgs) -> Result<ExitCode> {
    let kind = LossKind::from_str(&args.loss)?;
    let (targets, init) = easy_outlier_mixture(args.easy, args.outliers, args.seed);
    let mut state = WiouState::<f64>::new(args.alpha, args.delta, args.momentum)?;
    let result = toy_train(&targets, &init, kind, args.steps, args.lr, &mut state)?;

    let split = |v: &[f64]| (mean_of(&v[..args.easy]), mean_of(&v[args.easy..]));
    let (iou_easy, iou_outlier) = split(&result.final_iou);
    let (r_easy, r_outlier) = split(&result.final_r);

    if args.json {
        let out = json!({
            "loss": kind.name(),
            "steps": args.steps,
            "lr": args.lr,
            "seed": args.seed,
            "easy": args.easy,
            "outliers": args.outliers,
            "alpha": args.alpha,
            "delta": args.delta,
            "momentum": args.momentum,
            "mean_iou_easy": iou_easy,
            "mean_iou_outlier": iou_outlier,
            "mean_r_easy": r_easy,
            "mean_r_outlier": r_outlier,
            "running_mean": state.mean(),
            "final_iou": result.final_iou,
            "final_r": result.final_r,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!(
            "loss {}: {} boxes ({} easy, {} outliers), {} steps, lr {}, seed {}",
            kind.name(),
            args.easy + args.outliers,
            args.easy,
            args.outliers,
            args.steps,
            args.lr,
            args.seed
        );
        println!(
            "mean IoU: easy {}  outliers {}",
            fmt_opt(iou_easy),
            fmt_opt(iou_outlier)
        );
        println!(
            "mean gain r: easy {}  outliers {}",
            fmt_opt(r_easy),
            fmt_opt(r_outlier)
        );
        println!("running mean of IoU loss: {:.4}", state.mean());
    }
    Ok(ExitCode::SUCCESS)
}

fn render_eval(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "images {}  predictions {}  ground truths {}\n",
        report.images, report.predictions, report.ground_truths
    ));
    out.push_str(&format!(
        "precision {:.4}  recall {:.4}  (IoU 0.5)\n",
        report.precision, report.recall
    ));
    out.push_str(&format!(
        "mAP@.5 {:.4}  mAP@.5-.95 {:.4}\n",
        report.map50, report.map_mean
    ));
    out.push_str(&format!(
        "max F1 {:.4} at confidence {:.4} (precision {:.4}, recall {:.4})\n",
        report.max_f1.f1, report.max_f1.confidence, report.max_f1.precision, report.max_f1.recall
    ));
    for c in &report.per_class {
        out.push_str(&format!(
            "class {}: gt {}  preds {}  AP@.5 {:.4}\n",
            c.class_id, c.gt_count, c.pred_count, c.ap50
        ));
    }
    if !report.classes_without_ground_truth.is_empty() {
        let ids: Vec<String> = report
            .classes_without_ground_truth
            .iter()
            .map(usize::to_string)
            .collect();
        out.push_str(&format!(
            "classes with predictions but no ground truth: {}\n",
            ids.join(", ")
        ));
    }
    out
}

fn run_eval(args: &EvalArgs) -> Result<ExitCode> {
    if !(args.conf.is_finite() && (0.0..=1.0).contains(&args.conf)) {
        bail!("--conf must lie in [0, 1]");
    }
    let dataset = load_dataset(&args.labels, &args.preds, Some(args.nc))?;
    let mut preds = dataset.preds_by_image();
    for dets in &mut preds {
        dets.retain(|d| d.confidence >= args.conf);
    }
    if let Some(t) = args.nms_iou {
        for dets in &mut preds {
            *dets = nms(dets, t)?;
        }
    }
    let report = standard_report(&preds, &dataset.gts_by_image(), args.nc)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", render_eval(&report));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Analyze(args) => run_analyze(args),
        Command::Diff(args) => run_diff(args),
        Command::Forward(args) => run_forward(args),
        Command::Gradcheck(args) => run_gradcheck(args),
        Command::Toytrain(args) => run_toytrain(args),
        Command::Eval(args) => run_eval(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) =>
        {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
