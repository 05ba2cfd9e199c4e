//! Command-line front end. Every output file starts with the config hash
//! and the master seed.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::{config_hash, Experiment, PayloadConfig, SimulateConfig};
use crate::error::Error;
use crate::gradcheck::{check_gradients, check_gradients_with, random_samples, GradCheckConfig};
use crate::model::ArchitectureSpec;
use crate::nn::Gradient;
use crate::payload::{Method, PayloadReport};
use crate::privacy::{expected_leakage_curve, CurveConfig, LabelDistribution, DEFAULT_TYPE_CAP};
use crate::seed::rng_for;
use crate::sim::{run_fbftl, run_fedavg, run_matched_equivalence, BatchOrder, RoundMetrics};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

/// Environment variable that overrides `--out`.
pub const OUT_DIR_ENV: &str = "FBFTL_OUT";

/// Trajectory tolerance for `simulate --equivalence`.
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(
    name = "fbftl",
    version,
    about = "Federated transfer learning payload, training and leakage experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form payload comparison of the four methods.
    Payload(PayloadArgs),
    /// Train one method end to end and meter its communication.
    Simulate(SimulateArgs),
    /// Expected label leakage against the number of clients.
    Privacy(PrivacyArgs),
    /// Finite-difference check of the backward pass.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct PayloadArgs {
    /// Architecture file replacing the one named in the config.
    #[arg(long)]
    pub arch: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Method replacing the one in the config: fl, ftl_f, ftl_c or fbftl.
    #[arg(long)]
    pub method: Option<Method>,
    /// Compare FTL_c and FbFTL round by round instead of a single run.
    #[arg(long)]
    pub equivalence: bool,
    /// Round budget replacing the config's `max_rounds`.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Retrain the FbFTL head with this learning rate after the run and
    /// confirm the meter did not move.
    #[arg(long)]
    pub retrain_lr: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct PrivacyArgs {
    /// Number of classes N.
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Batch size K.
    #[arg(long, default_value_t = 8)]
    pub batch: u64,
    /// Label probabilities, comma separated; uniform when omitted.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<f64>>,
    /// Client counts U to evaluate.
    #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000,6250")]
    pub clients: Vec<u64>,
    /// Monte Carlo repetitions per client count.
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Largest batch-type count enumerated exactly.
    #[arg(long, default_value_t = DEFAULT_TYPE_CAP)]
    pub cap: u128,
    /// Batches drawn for the prior when enumeration is capped.
    #[arg(long, default_value_t = 100_000)]
    pub prior_samples: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Architecture file replacing `--config`.
    #[arg(long)]
    pub arch: Option<PathBuf>,
    /// Random samples per check.
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    /// Scale the analytic gradient before comparing (negative control).
    #[arg(long, hide = true)]
    pub corrupt_backward: Option<f64>,
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NumericFault(_) | Error::Diverged { .. } => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn check_failed(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_CHECK_FAILED,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (program name first), runs the subcommand and returns
/// the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(report) => {
            print!("{report}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn main_with_args<I, T>(args: I) -> std::process::ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    std::process::ExitCode::from(run_cli(args) as u8)
}

/// Runs a parsed command line and returns what it prints on success.
pub fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Payload(a) => cmd_payload(&cli.global, a),
        Command::Simulate(a) => cmd_simulate(&cli.global, a),
        Command::Privacy(a) => cmd_privacy(&cli.global, a),
        Command::Gradcheck(a) => cmd_gradcheck(&cli.global, a),
    }
}

/// Header identifying the config and seed behind an output file.
#[derive(Clone, Debug, Serialize)]
struct Provenance {
    config_sha256: String,
    seed: u64,
}

impl Provenance {
    fn comment(&self) -> String {
        format!("# config_sha256: {}\n# seed: {}\n", self.config_sha256, self.seed)
    }
}

fn read_config(path: &Path) -> CliResult<(Vec<u8>, PathBuf)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    Ok((bytes, base))
}

fn require_config(global: &GlobalArgs, cmd: &str) -> CliResult<PathBuf> {
    global
        .config
        .clone()
        .ok_or_else(|| CliError::from(Error::config(format!("{cmd} needs --config"))))
}

fn write_out(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn json_file(prov: &Provenance, body: serde_json::Value) -> String {
    let mut doc = serde_json::Map::new();
    doc.insert("header".into(), serde_json::to_value(prov).expect("plain struct"));
    if let serde_json::Value::Object(map) = body {
        doc.extend(map);
    }
    let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(doc)).expect("finite values");
    text.push('\n');
    text
}

fn u128_str(v: u128) -> String {
    v.to_string()
}

fn cmd_payload(global: &GlobalArgs, args: &PayloadArgs) -> CliResult<String> {
    let path = require_config(global, "payload")?;
    let (bytes, base) = read_config(&path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::config("config is not UTF-8"))?;
    let mut cfg = PayloadConfig::from_toml_str(&text)?;
    if let Some(a) = &args.arch {
        cfg.arch = std::env::current_dir().map_err(|e| Error::io(".", e))?.join(a);
    }
    let (arch, inputs) = cfg.inputs(&base)?;
    let report = PayloadReport::build(inputs, &cfg.published)?;
    let prov = Provenance {
        config_sha256: config_hash(&bytes),
        seed: global.seed.unwrap_or(0),
    };
    let mut table = prov.comment();
    let _ = writeln!(table, "# architecture: {}", arch.name);
    let text_report = report.to_text();
    table.push_str(&text_report);
    let mut csv = prov.comment();
    csv.push_str(&report.to_csv());
    write_out(&global.out, "payload.csv", &csv)?;
    write_out(&global.out, "payload.txt", &table)?;
    Ok(text_report)
}

fn metrics_csv(prov: &Provenance, trace: &[RoundMetrics]) -> String {
    let mut out = prov.comment();
    out.push_str("round,train_loss,val_acc,cum_uplink_bits,cum_downlink_bits\n");
    for m in trace {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{}",
            m.round, m.train_loss, m.val_acc, m.cum_uplink_bits, m.cum_downlink_bits
        );
    }
    out
}

fn cmd_simulate(global: &GlobalArgs, args: &SimulateArgs) -> CliResult<String> {
    let path = require_config(global, "simulate")?;
    let (bytes, base) = read_config(&path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::config("config is not UTF-8"))?;
    let mut cfg = SimulateConfig::from_toml_str(&text)?;
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if args.equivalence {
        cfg.method = Method::FtlHead;
    }
    if let Some(r) = args.rounds {
        cfg.federation.max_rounds = r;
    }
    let prov = Provenance {
        config_sha256: config_hash(&bytes),
        seed: cfg.seed,
    };
    let ex = Experiment::build(&cfg, &base)?;
    let fed = ex.federation();

    if args.equivalence {
        let matched = run_matched_equivalence(&fed, &ex.federation, BatchOrder::Matched)?;
        let control = run_matched_equivalence(&fed, &ex.federation, BatchOrder::Reversed)?;
        let passed = matched.passed(EQUIVALENCE_TOLERANCE);
        let body = json!({
            "mode": "equivalence",
            "rounds": matched.rounds,
            "tolerance": EQUIVALENCE_TOLERANCE,
            "max_deviation": matched.max_deviation,
            "accuracies_identical": matched.accuracies_identical(),
            "passed": passed,
            "control_order": "reversed",
            "control_max_deviation": control.max_deviation,
            "fedavg_test_acc": matched.fedavg_test_acc,
            "fbftl_test_acc": matched.fbftl_test_acc,
        });
        write_out(&global.out, "equivalence.json", &json_file(&prov, body))?;
        let line = format!(
            "equivalence over {} rounds: max deviation {:e}, accuracies identical {}, reversed-order control {:e}\n",
            matched.rounds,
            matched.max_deviation,
            matched.accuracies_identical(),
            control.max_deviation
        );
        return if passed {
            Ok(line)
        } else {
            Err(check_failed(line.trim_end()))
        };
    }

    let (result, retrain) = if cfg.method == Method::Fbftl {
        let run = run_fbftl(&fed, &ex.federation)?;
        let retrain = match args.retrain_lr {
            Some(lr) => {
                let before = (run.result.meter.uplink_bits(), run.result.meter.downlink_bits());
                let mut training = run.training.clone();
                training.optimizer = match training.optimizer {
                    crate::nn::OptimizerConfig::Adam { .. } => crate::nn::OptimizerConfig::adam(lr),
                    crate::nn::OptimizerConfig::SgdMomentum {
                        momentum, l2_penalty, ..
                    } => crate::nn::OptimizerConfig::SgdMomentum {
                        learning_rate: lr,
                        momentum,
                        l2_penalty,
                    },
                };
                let (_, outcome) = run.retrain(&training)?;
                let after = (run.result.meter.uplink_bits(), run.result.meter.downlink_bits());
                Some(json!({
                    "learning_rate": lr,
                    "steps": outcome.steps,
                    "test_acc": outcome.trace.last().map_or(0.0, |m| m.test_acc),
                    "added_uplink_bits": u128_str(after.0 - before.0),
                    "added_downlink_bits": u128_str(after.1 - before.1),
                }))
            }
            None => None,
        };
        (run.result, retrain)
    } else {
        (run_fedavg(cfg.method, &fed, &ex.federation, false)?, None)
    };
    let check = result.metering_check(&ex.arch)?;
    let body = json!({
        "mode": "single",
        "method": cfg.method,
        "rounds": result.rounds,
        "clients": ex.clients.len(),
        "clients_per_round": result.clients_per_round,
        "total_samples": result.total_samples,
        "source_accuracy": ex.source_accuracy,
        "final_test_acc": result.final_test_acc,
        "uplink_events": result.meter.uplink_events(),
        "metered_uplink_bits": u128_str(check.metered_uplink),
        "metered_downlink_bits": u128_str(check.metered_downlink),
        "analytic_uplink_bits": u128_str(check.analytic_uplink),
        "analytic_downlink_bits": u128_str(check.analytic_downlink),
        "metering_matches": check.matches(),
        "retrain": retrain,
    });
    write_out(&global.out, "metrics.csv", &metrics_csv(&prov, &result.trace))?;
    write_out(&global.out, "summary.json", &json_file(&prov, body))?;
    let line = format!(
        "{}: {} rounds, test accuracy {:.4}, uplink {} b, downlink {} b, metering matches {}\n",
        cfg.method,
        result.rounds,
        result.final_test_acc,
        check.metered_uplink,
        check.metered_downlink,
        check.matches()
    );
    if check.matches() {
        Ok(line)
    } else {
        Err(check_failed(line.trim_end()))
    }
}

fn cmd_privacy(global: &GlobalArgs, args: &PrivacyArgs) -> CliResult<String> {
    let (hash, seed) = match &global.config {
        Some(p) => {
            let (bytes, _) = read_config(p)?;
            (config_hash(&bytes), global.seed.unwrap_or(0))
        }
        None => {
            let seed = global.seed.unwrap_or(0);
            let canonical = serde_json::to_vec(&json!({"privacy": args, "seed": seed})).expect("plain args");
            (config_hash(&canonical), seed)
        }
    };
    if args.reps == 0 {
        return Err(Error::invalid("--reps must be positive").into());
    }
    let y = match &args.labels {
        Some(p) => {
            if p.len() != args.classes {
                return Err(
                    Error::invalid(format!("{} label probabilities for {} classes", p.len(), args.classes)).into(),
                );
            }
            LabelDistribution::new(p.clone())?
        }
        None => LabelDistribution::uniform(args.classes)?,
    };
    let curve = expected_leakage_curve(
        &y,
        &CurveConfig {
            batch: args.batch,
            clients: args.clients.clone(),
            repetitions: args.reps,
            seed,
            cap: args.cap,
            prior_samples: args.prior_samples,
        },
    )?;
    let prov = Provenance {
        config_sha256: hash,
        seed,
    };
    let mut out = prov.comment();
    let _ = writeln!(
        out,
        "# prior_entropy_bits: {:.6} ({})",
        curve.prior.bits,
        if curve.prior.exact { "exact" } else { "monte carlo" }
    );
    let body = curve.to_csv();
    out.push_str(&body);
    write_out(&global.out, "leakage.csv", &out)?;
    Ok(body)
}

fn cmd_gradcheck(global: &GlobalArgs, args: &GradcheckArgs) -> CliResult<String> {
    let path = args
        .arch
        .clone()
        .or_else(|| global.config.clone())
        .ok_or_else(|| CliError::from(Error::config("gradcheck needs --arch or --config")))?;
    let (bytes, _) = read_config(&path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::config("architecture is not UTF-8"))?;
    let arch = ArchitectureSpec::from_toml_str(&text)?;
    let seed = global.seed.unwrap_or(0);
    let net = arch.build_network(&mut rng_for(seed, "gradcheck-init", &[]))?;
    let samples = random_samples(&net, args.samples, &mut rng_for(seed, "gradcheck-data", &[]));
    let cfg = GradCheckConfig::default();
    let report = match args.corrupt_backward {
        None => check_gradients(&net, &samples, cfg)?,
        Some(f) => check_gradients_with(&net, &samples, cfg, |n, x, y| {
            let (_, g) = n.backward(x, y)?;
            Gradient::new(g.as_slice().iter().map(|v| v * f).collect())
        })?,
    };
    let prov = Provenance {
        config_sha256: config_hash(&bytes),
        seed,
    };
    let body = json!({
        "architecture": arch.name,
        "parameters": net.param_count(),
        "samples": samples.len(),
        "step": cfg.step,
        "rel_tol": cfg.rel_tol,
        "checked": report.checked,
        "skipped_kinks": report.skipped_kinks,
        "max_rel_error": report.max_rel_error,
        "failures": report.failures.len(),
        "passed": report.passed(),
    });
    write_out(&global.out, "gradcheck.json", &json_file(&prov, body))?;
    let line = format!(
        "gradcheck {}: {} coordinates checked, {} skipped at kinks, max relative error {:.3e}, {} failures\n",
        if report.passed() { "passed" } else { "FAILED" },
        report.checked,
        report.skipped_kinks,
        report.max_rel_error,
        report.failures.len()
    );
    if report.passed() {
        Ok(line)
    } else {
        Err(check_failed(line.trim_end()))
    }
}
