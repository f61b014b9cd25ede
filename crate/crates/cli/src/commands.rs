use rayon::prelude::*;
use serde_json::{json, Value};
use shuffledp::accounting::{
    amplify_subsampling, binomial_check_asymptotic, binomial_delta_exact, solve_rr_p,
    AccountantConfig, PrivacyBudget, DEFAULT_KAPPA,
};
use shuffledp::audit::audit_neighbors;
use shuffledp::histograms::countmin_params;
use shuffledp::sums::solve_zsum_r;
use shuffledp::testing::{
    calibrate_threshold, uniformity_core_test, uniformity_full_test, SampleSource, TesterConfig,
    Verdict,
};
use shuffledp::{execute, subseed, Protocol, PublicRandomness};

use crate::config::{
    output_error, true_output, AuditConfig, AuditMode, InputSpec, RunConfig, SolveConfig,
    SourceSpec, SweepConfig, TesterCliConfig,
};
use crate::output::Report;

// Seed-derivation tags; disjoint from the tags the library uses internally.
const TAG_RUN_TRIAL: u64 = 61;
const TAG_SWEEP_CELL: u64 = 62;
const TAG_TESTER_CAL: u64 = 63;
const TAG_TESTER_TRIAL: u64 = 64;

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let k = sorted.len();
    let idx = ((k as f64 * q).ceil() as usize).clamp(1, k) - 1;
    sorted[idx]
}

struct TrialSummary {
    records: Vec<Value>,
    mean: Option<f64>,
    p50: Option<f64>,
    p95: Option<f64>,
    max: Option<f64>,
}

/// Runs `trials` independent executions and summarizes |error| quantiles.
fn run_trials(
    protocol: &Protocol,
    input: &InputSpec,
    trials: u64,
    seed: u64,
) -> Result<TrialSummary, String> {
    if trials < 1 {
        return Err("trials must be >= 1".into());
    }
    let rows = input.materialize(protocol.n())?;
    let truth = true_output(protocol, &rows);
    let results: Result<Vec<_>, String> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial_seed = subseed(seed, TAG_RUN_TRIAL, t);
            let out = execute(protocol, &rows, trial_seed).map_err(|e| e.to_string())?;
            let err = output_error(&out, &truth);
            let estimate = match &out {
                shuffledp::Output::Scalar(v) => Some(*v),
                shuffledp::Output::Histogram(_) => None,
            };
            Ok((t, trial_seed, err, estimate))
        })
        .collect();
    let results = results?;
    let records: Vec<Value> = results
        .iter()
        .map(|(t, s, err, est)| {
            json!({"record": "trial", "trial": t, "seed": s, "error": err, "estimate": est})
        })
        .collect();
    let mut errs: Vec<f64> = results.iter().filter_map(|(_, _, e, _)| *e).collect();
    if errs.is_empty() {
        return Ok(TrialSummary { records, mean: None, p50: None, p95: None, max: None });
    }
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    Ok(TrialSummary {
        records,
        mean: Some(mean),
        p50: Some(percentile(&errs, 0.50)),
        p95: Some(percentile(&errs, 0.95)),
        max: Some(*errs.last().unwrap()),
    })
}

pub fn run(mut config: RunConfig, seed: Option<u64>, trials: Option<u64>) -> Result<Report, String> {
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(t) = trials {
        config.trials = t;
    }
    let s = run_trials(&config.protocol, &config.input, config.trials, config.seed)?;
    let mut records = s.records;
    records.push(json!({
        "record": "summary",
        "protocol": config.protocol,
        "input": config.input,
        "trials": config.trials,
        "seed": config.seed,
        "error_mean": s.mean,
        "error_p50": s.p50,
        "error_p95": s.p95,
        "error_max": s.max,
    }));
    let csv = vec![
        vec!["trials".into(), "seed".into(), "error_mean".into(), "error_p50".into(),
             "error_p95".into(), "error_max".into()],
        vec![
            config.trials.to_string(),
            config.seed.to_string(),
            csv_opt(s.mean),
            csv_opt(s.p50),
            csv_opt(s.p95),
            csv_opt(s.max),
        ],
    ];
    Ok(Report { records, csv, exit: 0 })
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn audit(config: AuditConfig) -> Result<Report, String> {
    let n = config.protocol.n() as usize;
    if config.x.len() != n || config.xp.len() != n {
        return Err(format!("x and xp must each have {n} rows"));
    }
    if !(config.gamma > 0.0 && config.gamma <= 1.0) {
        return Err(format!("gamma must lie in (0,1], got {}", config.gamma));
    }
    let k = ((config.gamma * n as f64).round() as usize).clamp(1, n);
    if config.x[..k] == config.xp[..k] {
        return Err("truncated datasets coincide; put the differing row among the participants".into());
    }
    if config.mode == AuditMode::Approx && config.delta.is_none() {
        return Err("approx mode needs a target delta".into());
    }
    let report = audit_neighbors(&config.protocol, &config.x[..k], &config.xp[..k], config.epsilon)
        .map_err(|e| e.to_string())?;
    let pass = match config.mode {
        AuditMode::Pure => report.pure_epsilon <= config.epsilon,
        AuditMode::Approx => report.delta <= config.delta.unwrap(),
    };
    let records = vec![json!({
        "record": "audit",
        "protocol": config.protocol,
        "mode": config.mode,
        "gamma": config.gamma,
        "participants": report.participants,
        "epsilon": config.epsilon,
        "target_delta": config.delta,
        // +inf serializes as null; pass carries the verdict either way.
        "delta": report.delta,
        "pure_epsilon": report.pure_epsilon,
        "pass": pass,
    })];
    let csv = vec![
        vec!["mode".into(), "epsilon".into(), "delta".into(), "pure_epsilon".into(),
             "participants".into(), "pass".into()],
        vec![
            format!("{:?}", config.mode).to_lowercase(),
            config.epsilon.to_string(),
            report.delta.to_string(),
            report.pure_epsilon.to_string(),
            report.participants.to_string(),
            pass.to_string(),
        ],
    ];
    Ok(Report { records, csv, exit: if pass { 0 } else { 1 } })
}

/// Overwrites one field of the serialized protocol, then re-solves noise
/// parameters if a budget is given.
fn build_cell(
    template: &Protocol,
    assignment: &[(String, Value)],
    budget: Option<(f64, f64)>,
) -> Result<Protocol, String> {
    let mut obj = match serde_json::to_value(template).unwrap() {
        Value::Object(map) => map,
        _ => unreachable!("protocols serialize to objects"),
    };
    for (key, value) in assignment {
        if !obj.contains_key(key) {
            return Err(format!("grid key {key:?} is not a field of this protocol"));
        }
        obj.insert(key.clone(), value.clone());
    }
    let mut protocol: Protocol =
        serde_json::from_value(Value::Object(obj)).map_err(|e| e.to_string())?;
    if let Some((epsilon, delta)) = budget {
        let b = PrivacyBudget::new(epsilon, delta).map_err(|e| e.to_string())?;
        let acc = AccountantConfig { kappa: DEFAULT_KAPPA };
        match &mut protocol {
            Protocol::RandomizedResponse(p) => {
                p.p = solve_rr_p(p.n, &b).map_err(|e| e.to_string())?;
            }
            Protocol::Zsum(z) => *z = solve_zsum_r(z.n, &b, &acc),
            Protocol::ParallelHist { zsum, .. } => *zsum = solve_zsum_r(zsum.n, &b, &acc),
            Protocol::CountMin { n, zsum, .. } => *zsum = solve_zsum_r(*n, &b, &acc),
            other => {
                return Err(format!(
                    "budget solving is not supported for {:?}",
                    serde_json::to_value(&*other).unwrap()["protocol"]
                ))
            }
        }
    }
    Ok(protocol)
}

pub fn sweep(
    mut config: SweepConfig,
    seed: Option<u64>,
    trials: Option<u64>,
) -> Result<Report, String> {
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(t) = trials {
        config.trials = t;
    }
    if config.grid.is_empty() {
        return Err("grid must list at least one parameter".into());
    }
    let keys: Vec<&String> = config.grid.keys().collect();
    let lens: Vec<usize> = keys.iter().map(|k| config.grid[*k].len()).collect();
    if lens.iter().any(|&l| l == 0) {
        return Err("every grid axis needs at least one value".into());
    }
    let cells: usize = lens.iter().product();
    let budget = config.budget.map(|b| (b.epsilon, b.delta));

    let mut records = Vec::new();
    let mut csv = vec![{
        let mut h: Vec<String> = vec!["cell".into()];
        h.extend(keys.iter().map(|k| (*k).clone()));
        h.extend(["seed".into(), "error_p50".into(), "error_p95".into(), "error_max".into()]);
        h
    }];
    // Odometer over the sorted keys, last axis fastest.
    for cell in 0..cells {
        let mut rem = cell;
        let mut assignment = Vec::new();
        for (axis, key) in keys.iter().enumerate().rev() {
            let vals = &config.grid[*key];
            assignment.push(((*key).clone(), vals[rem % lens[axis]].clone()));
            rem /= lens[axis];
        }
        assignment.reverse();
        let protocol = build_cell(&config.protocol, &assignment, budget)?;
        let cell_seed = subseed(config.seed, TAG_SWEEP_CELL, cell as u64);
        let s = run_trials(&protocol, &config.input, config.trials, cell_seed)?;
        let params: serde_json::Map<String, Value> =
            assignment.iter().cloned().collect();
        records.push(json!({
            "record": "cell",
            "cell": cell,
            "params": params,
            "protocol": protocol,
            "trials": config.trials,
            "seed": cell_seed,
            "error_mean": s.mean,
            "error_p50": s.p50,
            "error_p95": s.p95,
            "error_max": s.max,
        }));
        let mut row = vec![cell.to_string()];
        row.extend(assignment.iter().map(|(_, v)| v.to_string()));
        row.extend([cell_seed.to_string(), csv_opt(s.p50), csv_opt(s.p95), csv_opt(s.max)]);
        csv.push(row);
    }
    Ok(Report { records, csv, exit: 0 })
}

pub fn test_uniformity(
    mut config: TesterCliConfig,
    seed: Option<u64>,
    trials: Option<u64>,
) -> Result<Report, String> {
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(t) = trials {
        config.trials = t;
    }
    if config.trials < 1 {
        return Err("trials must be >= 1".into());
    }
    let source = match &config.source {
        SourceSpec::Uniform => SampleSource::uniform(config.d),
        SourceSpec::Probabilities { probabilities } => {
            SampleSource::Probabilities(probabilities.clone())
        }
    };
    let mut tester = TesterConfig {
        d: config.d,
        alpha: config.alpha,
        m: config.m,
        p_opt: config.p_opt,
        threshold: None,
    };
    let mut records = Vec::new();
    let mut far = 0u64;
    let threshold = if config.compress {
        None
    } else {
        let th = calibrate_threshold(
            &tester,
            config.calibration_trials,
            subseed(config.seed, TAG_TESTER_CAL, 0),
        )
        .map_err(|e| e.to_string())?;
        tester.threshold = Some(th);
        Some(th)
    };
    for t in 0..config.trials {
        let trial_seed = subseed(config.seed, TAG_TESTER_TRIAL, t);
        let (verdict, statistic, d_hat) = if config.compress {
            let public = PublicRandomness::new(trial_seed);
            let (v, z, dh) = uniformity_full_test(
                &tester,
                &source,
                config.calibration_trials,
                trial_seed,
                &public,
            )
            .map_err(|e| e.to_string())?;
            (v, z, Some(dh))
        } else {
            let (v, z) =
                uniformity_core_test(&tester, &source, trial_seed).map_err(|e| e.to_string())?;
            (v, z, None)
        };
        far += u64::from(verdict == Verdict::Far);
        records.push(json!({
            "record": "trial",
            "trial": t,
            "seed": trial_seed,
            "verdict": verdict,
            "statistic": statistic,
            "d_hat": d_hat,
        }));
    }
    let far_fraction = far as f64 / config.trials as f64;
    records.push(json!({
        "record": "summary",
        "d": config.d,
        "alpha": config.alpha,
        "m": config.m,
        "trials": config.trials,
        "threshold": threshold,
        "far_fraction": far_fraction,
    }));
    let csv = vec![
        vec!["d".into(), "trials".into(), "threshold".into(), "far_fraction".into()],
        vec![
            config.d.to_string(),
            config.trials.to_string(),
            threshold.map(|t| t.to_string()).unwrap_or_default(),
            far_fraction.to_string(),
        ],
    ];
    Ok(Report { records, csv, exit: 0 })
}

pub fn solve_params(config: SolveConfig) -> Result<Report, String> {
    let solved: Vec<(String, Value)> = match &config {
        SolveConfig::Rr { n, epsilon, delta } => {
            let b = PrivacyBudget::new(*epsilon, *delta).map_err(|e| e.to_string())?;
            let p = solve_rr_p(*n, &b).map_err(|e| e.to_string())?;
            vec![("p".into(), json!(p))]
        }
        SolveConfig::Zsum { n, epsilon, delta, kappa } => {
            let b = PrivacyBudget::new(*epsilon, *delta).map_err(|e| e.to_string())?;
            let acc = AccountantConfig { kappa: kappa.unwrap_or(DEFAULT_KAPPA) };
            let z = solve_zsum_r(*n, &b, &acc);
            vec![
                ("r".into(), json!(z.r)),
                ("small_n_fallback".into(), json!(z.small_n_fallback)),
            ]
        }
        SolveConfig::Binomial { trials, p, epsilon, delta, kappa } => {
            let b = PrivacyBudget::new(*epsilon, *delta).map_err(|e| e.to_string())?;
            let acc = AccountantConfig { kappa: kappa.unwrap_or(DEFAULT_KAPPA) };
            let exact = binomial_delta_exact(*trials, *p, *epsilon);
            let asym = binomial_check_asymptotic(*trials, *p, &b, &acc).map_err(|e| e.to_string())?;
            vec![
                ("delta_exact".into(), json!(exact)),
                ("asymptotic_ok".into(), json!(asym)),
            ]
        }
        SolveConfig::Countmin { n, d, t_reps } => {
            // The hash seeds are public randomness; only the width matters here.
            let family = countmin_params(*n, *d, *t_reps, &PublicRandomness::new(0));
            vec![("d_hat".into(), json!(family.d_hat))]
        }
        SolveConfig::AmplifySubsampling { epsilon, n, delta } => {
            let amped = amplify_subsampling(*epsilon, *n, *delta).map_err(|e| e.to_string())?;
            vec![("epsilon_central".into(), json!(amped))]
        }
    };
    let mut record = serde_json::to_value(&config).unwrap();
    let obj = record.as_object_mut().unwrap();
    obj.insert("record".into(), json!("params"));
    for (k, v) in &solved {
        obj.insert(k.clone(), v.clone());
    }
    let mut csv = vec![vec!["name".into(), "value".into()]];
    for (k, v) in &solved {
        csv.push(vec![k.clone(), v.to_string()]);
    }
    Ok(Report { records: vec![record], csv, exit: 0 })
}
