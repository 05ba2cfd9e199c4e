//! One PASS/FAIL line per acceptance criterion.
//!
//! Failures are reported, not hidden: the binary exits 0 so the rest of the
//! workspace suite still runs, unless `ACCEPTANCE_STRICT=1` is set, in which
//! case any FAIL line makes it exit 1.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fbftl_core::config::{Experiment, PayloadConfig, SimulateConfig};
use fbftl_core::gradcheck::{check_gradients, random_network, random_samples, GradCheckConfig};
use fbftl_core::nn::OptimizerConfig;
use fbftl_core::payload::{format_bits, Method, PayloadReport, ReportCell};
use fbftl_core::privacy::{
    expected_leakage_curve, posterior_identity_check, BatchDistribution, CurveConfig, LabelDistribution,
    DEFAULT_TYPE_CAP,
};
use fbftl_core::seed::rng_for;
use fbftl_core::sim::{run_fbftl, run_matched_equivalence, run_method, BatchOrder, MinibatchConfig, RunResult};

const PRIOR_BITS: f64 = 13.86;
const PRIOR_TOL: f64 = 0.01;
const LEAKAGE_REPS: usize = 100;
const LEAKAGE_CLIENTS: [u64; 5] = [1, 10, 100, 1000, 6250];
const LEAKAGE_FINAL_FRACTION: f64 = 0.05;
const DECAY_SIGMAS: f64 = 2.0;
const EQUIVALENCE_ROUNDS: usize = 60;
const EQUIVALENCE_TOL: f64 = 1e-6;
const TRANSFER_MIN_ACC: f64 = 0.95;
const FL_GAP_POINTS: f64 = 3.0;
const GRADCHECK_ARCHS: u64 = 20;
const GRADCHECK_SAMPLES: usize = 3;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn(&mut Shared) -> Result<Outcome, String>;

/// Runs that several criteria inspect.
#[derive(Default)]
struct Shared {
    beans: Option<Experiment>,
    bean_runs: Vec<RunResult>,
    bean_runs_took: Duration,
}

impl Shared {
    fn beans(&mut self) -> Result<&Experiment, String> {
        if self.beans.is_none() {
            let path = fixture("beans_synthetic.toml");
            let cfg = SimulateConfig::load(&path).map_err(|e| e.to_string())?;
            self.beans = Some(Experiment::build(&cfg, path.parent().unwrap()).map_err(|e| e.to_string())?);
        }
        Ok(self.beans.as_ref().unwrap())
    }

    fn bean_runs(&mut self) -> Result<&[RunResult], String> {
        if self.bean_runs.is_empty() {
            let ex = self.beans()?.clone();
            let fed = ex.federation();
            let start = Instant::now();
            for method in Method::ALL {
                self.bean_runs
                    .push(run_method(method, &fed, &ex.federation).map_err(|e| format!("{method}: {e}"))?);
            }
            self.bean_runs_took = start.elapsed();
        }
        Ok(&self.bean_runs)
    }
}

fn payload_report(name: &str) -> Result<PayloadReport, String> {
    let path = fixture(name);
    let cfg = PayloadConfig::load(&path).map_err(|e| e.to_string())?;
    let (_, inputs) = cfg.inputs(path.parent().unwrap()).map_err(|e| e.to_string())?;
    PayloadReport::build(inputs, &cfg.published).map_err(|e| e.to_string())
}

fn table_one(_: &mut Shared) -> Result<Outcome, String> {
    let report = payload_report("payload_vgg16.toml")?;
    let wanted: Vec<_> = report
        .checks
        .iter()
        .filter(|c| matches!(c.cell, ReportCell::BitsPerBatch | ReportCell::TotalUplink))
        .collect();
    let bad: Vec<String> = wanted
        .iter()
        .filter(|c| !c.matches)
        .map(|c| format!("{} {} {} vs {}", c.method, c.cell, c.published, c.computed))
        .collect();
    let pass = wanted.len() == 8 && bad.is_empty();
    let detail = if bad.is_empty() {
        format!("{} per-batch and uplink cells within display rounding", wanted.len())
    } else {
        bad.join("; ")
    };
    Ok(Outcome::new(pass, detail))
}

fn table_two(_: &mut Shared) -> Result<Outcome, String> {
    let report = payload_report("payload_beans.toml")?;
    let mut problems = Vec::new();
    let params = [
        (Method::Fl, 12204),
        (Method::FtlFull, 12204),
        (Method::FtlHead, 10504),
        (Method::Fbftl, 100),
    ];
    for (m, want) in params {
        if report.row(m).params_per_batch != want {
            problems.push(format!("{m} params {}", report.row(m).params_per_batch));
        }
    }
    let per_batch = [
        (Method::Fl, "390.5 Kb"),
        (Method::FtlFull, "390.5 Kb"),
        (Method::FtlHead, "336.1 Kb"),
        (Method::Fbftl, "3.2 Kb"),
    ];
    for (m, want) in per_batch {
        let got = format_bits(report.row(m).bits_per_batch);
        if got != want {
            problems.push(format!("{m} per batch {got}"));
        }
    }
    let cell = |m: Method, c: ReportCell| report.checks.iter().find(|k| k.method == m && k.cell == c);
    for m in [Method::Fl, Method::FtlFull] {
        match cell(m, ReportCell::TotalUplink) {
            Some(c) if c.matches => {}
            Some(c) => problems.push(format!("{m} total {} vs {}", c.published, c.computed)),
            None => problems.push(format!("{m} total not checked")),
        }
    }
    let mut annotated = 0;
    for (m, c) in [
        (Method::FtlHead, ReportCell::TotalUplink),
        (Method::Fbftl, ReportCell::TotalDownlink),
    ] {
        match cell(m, c) {
            Some(k) if !k.matches && k.note.is_some() => annotated += 1,
            Some(k) => problems.push(format!("{m} {c} not annotated (matches={})", k.matches)),
            None => problems.push(format!("{m} {c} not checked")),
        }
    }
    let text = report.to_text();
    if annotated == 2 && !text.contains("formula gives") {
        problems.push("annotations missing from the rendered table".into());
    }
    let detail = if problems.is_empty() {
        "counts and per-batch exact, FL/FTL_f totals match, 2 cells annotated".to_string()
    } else {
        problems.join("; ")
    };
    Ok(Outcome::new(problems.is_empty(), detail))
}

fn prior_datum(_: &mut Shared) -> Result<Outcome, String> {
    let start = Instant::now();
    let y = LabelDistribution::uniform(10).map_err(|e| e.to_string())?;
    let prior = BatchDistribution::prior(&y, 8, DEFAULT_TYPE_CAP).map_err(|e| e.to_string())?;
    let bits = prior.entropy_bits();
    let took = start.elapsed();
    let pass = prior.len() == 24310 && (bits - PRIOR_BITS).abs() <= PRIOR_TOL && took < Duration::from_secs(1);
    Ok(Outcome::new(
        pass,
        format!("{} types, {bits:.4} bits in {took:.2?}", prior.len()),
    ))
}

fn leakage_decay(_: &mut Shared) -> Result<Outcome, String> {
    let start = Instant::now();
    let y = LabelDistribution::uniform(10).map_err(|e| e.to_string())?;
    let cfg = CurveConfig {
        batch: 8,
        clients: LEAKAGE_CLIENTS.to_vec(),
        repetitions: LEAKAGE_REPS,
        seed: 0,
        cap: DEFAULT_TYPE_CAP,
        prior_samples: 100_000,
    };
    let curve = expected_leakage_curve(&y, &cfg).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let pts = &curve.points;
    let decays = pts
        .windows(2)
        .all(|w| w[1].mean_bits <= w[0].mean_bits + DECAY_SIGMAS * w[1].stderr_bits.max(w[0].stderr_bits));
    let ratio = pts.last().unwrap().mean_bits / pts[0].mean_bits;
    let means: Vec<String> = pts.iter().map(|p| format!("{:.3}", p.mean_bits)).collect();
    let pass = decays && ratio < LEAKAGE_FINAL_FRACTION && took < Duration::from_secs(120);
    Ok(Outcome::new(
        pass,
        format!(
            "means [{}] bits, non-increasing={decays}, U=6250 at {:.1}% of U=1 (bound {:.0}%), {took:.2?}",
            means.join(", "),
            100.0 * ratio,
            100.0 * LEAKAGE_FINAL_FRACTION
        ),
    ))
}

fn posterior_identity(_: &mut Shared) -> Result<Outcome, String> {
    let mut parts = Vec::new();
    let mut pass = true;
    for (n, k, u) in [(2, 1, 2), (2, 2, 3), (3, 2, 2)] {
        let check = posterior_identity_check(n, k, u).map_err(|e| e.to_string())?;
        pass &= check.holds();
        parts.push(format!(
            "({n},{k},{u}) {} comparisons, {} mismatches",
            check.comparisons, check.mismatches
        ));
    }
    Ok(Outcome::new(pass, parts.join("; ")))
}

fn protocol_equivalence(shared: &mut Shared) -> Result<Outcome, String> {
    let start = Instant::now();
    let ex = shared.beans()?;
    let mut cfg = ex.federation.clone();
    cfg.max_rounds = EQUIVALENCE_ROUNDS;
    let fed = ex.federation();
    let matched = run_matched_equivalence(&fed, &cfg, BatchOrder::Matched).map_err(|e| e.to_string())?;
    let control = run_matched_equivalence(&fed, &cfg, BatchOrder::Reversed).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let pass = matched.rounds >= 50
        && matched.max_deviation <= EQUIVALENCE_TOL
        && matched.accuracies_identical()
        && control.max_deviation > EQUIVALENCE_TOL
        && took < Duration::from_secs(120);
    Ok(Outcome::new(
        pass,
        format!(
            "{} rounds, max deviation {:.2e}, accuracies identical={}, reversed-order control {:.2e}, {took:.2?}",
            matched.rounds,
            matched.max_deviation,
            matched.accuracies_identical(),
            control.max_deviation
        ),
    ))
}

fn metering(shared: &mut Shared) -> Result<Outcome, String> {
    let mut checked = 0;
    let mut bad = Vec::new();
    let arch = shared.beans()?.arch.clone();
    for run in shared.bean_runs()? {
        let c = run.metering_check(&arch).map_err(|e| e.to_string())?;
        checked += 1;
        if !c.matches() {
            bad.push(format!("beans {}: {c:?}", run.method));
        }
    }
    let path = fixture("tiny_synthetic.toml");
    let cfg = SimulateConfig::load(&path).map_err(|e| e.to_string())?;
    let tiny = Experiment::build(&cfg, path.parent().unwrap()).map_err(|e| e.to_string())?;
    for method in Method::ALL {
        for flags in [false, true] {
            let mut fc = tiny.federation.clone();
            fc.meter_sample_counts = flags;
            fc.meter_label_bits = flags;
            let run = run_method(method, &tiny.federation(), &fc).map_err(|e| e.to_string())?;
            let c = run.metering_check(&tiny.arch).map_err(|e| e.to_string())?;
            checked += 1;
            if !c.matches() {
                bad.push(format!("tiny {method} flags={flags}: {c:?}"));
            }
        }
    }
    let detail = if bad.is_empty() {
        format!("{checked} runs, metered totals equal closed form")
    } else {
        bad.join("; ")
    };
    Ok(Outcome::new(bad.is_empty(), detail))
}

fn training_sanity(shared: &mut Shared) -> Result<Outcome, String> {
    let runs = shared.bean_runs()?;
    let acc = |m: Method| runs.iter().find(|r| r.method == m).map(|r| r.final_test_acc).unwrap();
    let (fl, ftl_f, ftl_c, fb) = (
        acc(Method::Fl),
        acc(Method::FtlFull),
        acc(Method::FtlHead),
        acc(Method::Fbftl),
    );
    let gap = 100.0 * (fl - ftl_f).abs();
    let took = shared.bean_runs_took;
    let pass =
        ftl_c >= TRANSFER_MIN_ACC && fb >= TRANSFER_MIN_ACC && gap <= FL_GAP_POINTS && took < Duration::from_secs(300);
    Ok(Outcome::new(
        pass,
        format!(
            "test accuracy FL {:.2}%, FTL_f {:.2}%, FTL_c {:.2}%, FbFTL {:.2}%, FL gap {gap:.2} points, four runs {took:.2?}",
            100.0 * fl,
            100.0 * ftl_f,
            100.0 * ftl_c,
            100.0 * fb,
        ),
    ))
}

fn gradients(_: &mut Shared) -> Result<Outcome, String> {
    let cfg = GradCheckConfig::default();
    let mut failed = Vec::new();
    let mut coords = 0;
    let mut worst: f64 = 0.0;
    for i in 0..GRADCHECK_ARCHS {
        let mut rng = rng_for(2024, "gradcheck", &[i]);
        let net = random_network(&mut rng);
        let samples = random_samples(&net, GRADCHECK_SAMPLES, &mut rng);
        let report = check_gradients(&net, &samples, cfg).map_err(|e| e.to_string())?;
        coords += report.checked;
        worst = worst.max(report.max_rel_error);
        if !report.passed() {
            failed.push(i);
        }
    }
    Ok(Outcome::new(
        failed.is_empty(),
        format!(
            "{GRADCHECK_ARCHS} architectures, {coords} coordinates, worst relative error {worst:.2e}, failing {failed:?}"
        ),
    ))
}

fn fbftl_profile(shared: &mut Shared) -> Result<Outcome, String> {
    let ex = shared.beans()?;
    let fed = ex.federation();
    let expected: usize = ex.clients.iter().map(|c| c.samples.len()).sum();
    let mut seen = Vec::new();
    let mut last = None;
    for rounds in [1, 100, 1000] {
        let mut cfg = ex.federation.clone();
        cfg.max_rounds = rounds;
        cfg.patience = None;
        let run = run_fbftl(&fed, &cfg).map_err(|e| e.to_string())?;
        seen.push(run.result.meter.uplink_events());
        last = Some(run);
    }
    let run = last.unwrap();
    let before = run.result.meter.clone();
    for (lr, batch, steps) in [(1e-3, 16, 200), (1e-2, 64, 500)] {
        run.retrain(&MinibatchConfig::new(OptimizerConfig::adam(lr), batch, steps, 11))
            .map_err(|e| e.to_string())?;
    }
    let unchanged = run.result.meter == before;
    let pass = seen.iter().all(|&e| e == expected) && unchanged;
    Ok(Outcome::new(
        pass,
        format!(
            "uplink events {seen:?} for 1/100/1000 steps vs sum K_u = {expected}; retraining adds zero={unchanged}"
        ),
    ))
}

fn leakage_small_alphabet() -> String {
    let y = LabelDistribution::uniform(4).expect("four classes");
    let cfg = CurveConfig {
        batch: 4,
        clients: vec![1, 6250],
        repetitions: LEAKAGE_REPS,
        seed: 0,
        cap: DEFAULT_TYPE_CAP,
        prior_samples: 100_000,
    };
    match expected_leakage_curve(&y, &cfg) {
        Ok(c) => format!(
            "N=4 K=4: U=6250 mean {:.4} bits = {:.2}% of U=1",
            c.points[1].mean_bits,
            100.0 * c.points[1].mean_bits / c.points[0].mean_bits
        ),
        Err(e) => format!("N=4 K=4: {e}"),
    }
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("payload table, image task", table_one),
        ("payload table, bean task", table_two),
        ("prior entropy datum", prior_datum),
        ("leakage decay", leakage_decay),
        ("posterior identity", posterior_identity),
        ("protocol equivalence", protocol_equivalence),
        ("metering soundness", metering),
        ("training sanity", training_sanity),
        ("gradient correctness", gradients),
        ("FbFTL communication profile", fbftl_profile),
    ];
    let mut shared = Shared::default();
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = check(&mut shared).unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        if !outcome.pass {
            failures += 1;
        }
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{tag} {:>2} {name}: {}", i + 1, outcome.detail);
    }
    println!("INFO    leakage decay, {}", leakage_small_alphabet());
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
