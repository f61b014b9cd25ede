use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use shuffledp::catalog::Output;
use shuffledp::{Protocol, Row};

/// One experiment: a fully parameterized protocol, its input dataset, and
/// trial plumbing. All randomness flows from `seed`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: Protocol,
    pub input: InputSpec,
    pub trials: u64,
    pub seed: u64,
}

/// Dataset description. Explicit rows or a deterministic generator sized by
/// the protocol's n.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    Rows { rows: Vec<Row> },
    /// `ones` users hold bit 1, the rest bit 0.
    Bits { ones: u64 },
    /// round(fraction * n) users hold bit 1. Useful under sweeps over n.
    BitsFraction { fraction: f64 },
    /// User i holds value (i mod d) + 1.
    CyclicValues { d: u64 },
}

impl InputSpec {
    pub fn materialize(&self, n: u64) -> Result<Vec<Row>, String> {
        match self {
            InputSpec::Rows { rows } => {
                if rows.len() as u64 != n {
                    return Err(format!("input has {} rows but protocol n = {n}", rows.len()));
                }
                Ok(rows.clone())
            }
            InputSpec::Bits { ones } => bits(*ones, n),
            InputSpec::BitsFraction { fraction } => {
                if !(0.0..=1.0).contains(fraction) {
                    return Err(format!("fraction must lie in [0,1], got {fraction}"));
                }
                bits((fraction * n as f64).round() as u64, n)
            }
            InputSpec::CyclicValues { d } => {
                if *d == 0 {
                    return Err("cyclic_values needs d >= 1".into());
                }
                Ok((0..n).map(|i| Row::Value(i % d + 1)).collect())
            }
        }
    }
}

fn bits(ones: u64, n: u64) -> Result<Vec<Row>, String> {
    if ones > n {
        return Err(format!("ones = {ones} exceeds n = {n}"));
    }
    Ok((0..n).map(|i| Row::Bit(u8::from(i < ones))).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditMode {
    Pure,
    Approx,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub protocol: Protocol,
    pub x: Vec<Row>,
    pub xp: Vec<Row>,
    /// Fraction of users that actually participate; parameters stay solved
    /// for the full n. Defaults to 1.
    #[serde(default = "one")]
    pub gamma: f64,
    pub mode: AuditMode,
    pub epsilon: f64,
    #[serde(default)]
    pub delta: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Template protocol; grid entries overwrite its fields cell by cell.
    pub protocol: Protocol,
    /// Field name -> list of values. Cells iterate in sorted-key order,
    /// last key fastest.
    pub grid: BTreeMap<String, Vec<serde_json::Value>>,
    pub input: InputSpec,
    pub trials: u64,
    pub seed: u64,
    /// When set, re-solve the protocol's noise parameter per cell.
    #[serde(default)]
    pub budget: Option<BudgetSpec>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Uniform,
    Probabilities { probabilities: Vec<f64> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TesterCliConfig {
    pub d: u64,
    pub alpha: f64,
    /// Expected sample count (poissonized).
    pub m: f64,
    pub p_opt: f64,
    pub source: SourceSpec,
    pub trials: u64,
    #[serde(default = "default_calibration")]
    pub calibration_trials: u64,
    /// Route samples through the domain-compression front end.
    #[serde(default)]
    pub compress: bool,
    pub seed: u64,
}

fn default_calibration() -> u64 {
    300
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolveConfig {
    Rr { n: u64, epsilon: f64, delta: f64 },
    Zsum { n: u64, epsilon: f64, delta: f64, kappa: Option<f64> },
    Binomial { trials: u64, p: f64, epsilon: f64, delta: f64, kappa: Option<f64> },
    Countmin { n: u64, d: u64, t_reps: u32 },
    AmplifySubsampling { epsilon: f64, n: u64, delta: f64 },
}

/// Ground truth the estimators chase; None for the pathological protocols.
pub enum Truth {
    Scalar(f64),
    Histogram(Vec<f64>),
}

pub fn true_output(protocol: &Protocol, rows: &[Row]) -> Option<Truth> {
    let bit_sum = || -> f64 {
        rows.iter()
            .map(|r| match r {
                Row::Bit(b) => f64::from(*b),
                _ => 0.0,
            })
            .sum()
    };
    let counts = |d: u64| -> Vec<f64> {
        let mut c = vec![0.0; d as usize];
        for r in rows {
            if let Row::Value(v) = r {
                if (1..=d).contains(v) {
                    c[*v as usize - 1] += 1.0;
                }
            }
        }
        c
    };
    match protocol {
        Protocol::RandomizedResponse(_) | Protocol::Zsum(_) => Some(Truth::Scalar(bit_sum())),
        Protocol::ParallelHist { d, .. } => Some(Truth::Histogram(counts(*d))),
        Protocol::OptInHist(p) => Some(Truth::Histogram(counts(p.d))),
        Protocol::CountMin { d, .. } => Some(Truth::Histogram(counts(*d))),
        Protocol::SplitMix { q, .. } => {
            let sum: u64 = rows
                .iter()
                .map(|r| match r {
                    Row::Value(v) => *v,
                    _ => 0,
                })
                .sum();
            Some(Truth::Scalar((sum % q) as f64))
        }
        Protocol::BoundedSum(_) => Some(Truth::Scalar(
            rows.iter()
                .map(|r| match r {
                    Row::Real(x) => *x,
                    _ => 0.0,
                })
                .sum(),
        )),
        Protocol::Brittle1 { .. } | Protocol::Brittle2 { .. } => None,
    }
}

pub fn output_error(output: &Output, truth: &Option<Truth>) -> Option<f64> {
    match (output, truth) {
        (Output::Scalar(est), Some(Truth::Scalar(t))) => Some((est - t).abs()),
        (Output::Histogram(h), Some(Truth::Histogram(t))) => Some(h.linf_error(t)),
        _ => None,
    }
}
