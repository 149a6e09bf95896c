//! Runtime scaling of `ner_count` over growing corpora.
//!
//! Three modes are compared: a direct function call on pooled data, the full
//! agent pipeline with a zero-cost enclave, and the pipeline plus a modeled
//! enclave overhead. Absolute times mean nothing; only the shape does.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::ComputationPolicy;
use crate::agents::{LocalTransport, SpController, UserController};
use crate::analytics::{ner_count, EntityDictionary, FunctionSpec};
use crate::enclave::{EnclaveInstance, FunctionBundle};
use crate::identity::AgentIdentity;
use crate::plug::{Credential, PlugKind, SourceSpec};
use crate::schema::{RecordPayload, POST_V1};
use crate::synth::{post_items, BRANDS};
use crate::types::{DataSelector, OperationKind, RecordLimit, Timestamp};

pub const BENCH_SCHEMA: &str = "datagent.bench/1";
pub const DEFAULT_SIZES: [usize; 5] = [100, 200, 400, 800, 1600];

const SOURCE_ID: &str = "posts";
const FUNCTION_ID: &str = "brands";
const START: Timestamp = Timestamp(1_700_000_000_000);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Centralized,
    Decentralized,
    Enclave,
}

impl BenchMode {
    pub const ALL: [BenchMode; 3] = [Self::Centralized, Self::Decentralized, Self::Enclave];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Centralized => "centralized",
            Self::Decentralized => "decentralized",
            Self::Enclave => "enclave",
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown bench mode `{s}`"))
    }
}

/// Simulated enclave cost: a constant per call plus a per-record term,
/// spent as busy time after the pipeline returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnclaveOverhead {
    pub setup_us: u64,
    pub per_record_ns: u64,
}

impl Default for EnclaveOverhead {
    fn default() -> Self {
        Self {
            setup_us: 1_000,
            per_record_ns: 10_000,
        }
    }
}

impl EnclaveOverhead {
    pub fn cost(&self, records: u64) -> Duration {
        Duration::from_micros(self.setup_us)
            + Duration::from_nanos(self.per_record_ns.saturating_mul(records))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub modes: Vec<BenchMode>,
    pub trials: usize,
    pub seed: u64,
    pub overhead: EnclaveOverhead,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: DEFAULT_SIZES.to_vec(),
            modes: BenchMode::ALL.to_vec(),
            trials: 7,
            seed: 7,
            overhead: EnclaveOverhead::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BenchError {
    #[error("need at least two distinct positive sizes")]
    TooFewSizes,
    #[error("trials must be positive")]
    NoTrials,
    #[error("no modes selected")]
    NoModes,
    #[error("pipeline failed: {0}")]
    Pipeline(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub record_count: usize,
    pub mode: BenchMode,
    pub runtime_ms: f64,
    pub trials: usize,
}

/// Least-squares line `y = slope * x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub rows: Vec<BenchRow>,
    pub fits: BTreeMap<BenchMode, LinearFit>,
}

impl BenchReport {
    pub fn rows_for(&self, mode: BenchMode) -> impl Iterator<Item = &BenchRow> {
        self.rows.iter().filter(move |r| r.mode == mode)
    }

    pub fn median(&self, mode: BenchMode, record_count: usize) -> Option<f64> {
        self.rows_for(mode)
            .find(|r| r.record_count == record_count)
            .map(|r| r.runtime_ms)
    }

    /// Plot data: `mode,record_count,runtime_ms` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,record_count,runtime_ms\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.mode, r.record_count, r.runtime_ms));
        }
        out
    }
}

/// Least-squares fit; `None` with fewer than two distinct x values.
pub fn linear_fit(points: &[(f64, f64)]) -> Option<LinearFit> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if points.len() < 2 || sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Some(LinearFit {
        slope,
        intercept,
        r2,
    })
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

fn spin(d: Duration) {
    let until = Instant::now() + d;
    while Instant::now() < until {
        std::hint::spin_loop();
    }
}

fn dictionary() -> EntityDictionary {
    EntityDictionary::new(BRANDS).expect("static dictionary")
}

/// One user holding `size` posts and a provider connected to it.
struct Fixture {
    texts: Vec<String>,
    sp: SpController,
    transport: LocalTransport,
    user_did: crate::types::Did,
    selector: DataSelector,
}

impl Fixture {
    fn new(size: usize, seed: u64) -> Result<Self, BenchError> {
        let fail = |e: &dyn fmt::Display| BenchError::Pipeline(e.to_string());
        let items = post_items(size, seed);
        let texts = items
            .iter()
            .map(|v| RecordPayload::from_json(POST_V1, v).map(|p| p.text()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| fail(&e))?;

        let mut sp = SpController::new(AgentIdentity::from_seed(&[0xb1; 32]), seed);
        let spec = FunctionSpec::Ner {
            dictionary: dictionary(),
        };
        let bundle = FunctionBundle::new(FUNCTION_ID, &spec, sp.did().clone());
        sp.register_bundle(bundle.clone());

        let mut user = UserController::new(
            AgentIdentity::from_seed(&[0xb2; 32]),
            EnclaveInstance::launch(&[0xb3; 32]),
        );
        let cap = u32::try_from(size).map_err(|e| fail(&e))?;
        user.register_source(
            SourceSpec {
                source_id: SOURCE_ID.into(),
                schema_tag: POST_V1.into(),
                plug_kind: PlugKind::FileDrop,
                initial_policy: ComputationPolicy::new([FUNCTION_ID], cap, u32::MAX),
                signer_seed: Some([0xb4; 32]),
            },
            &Credential("bench".into()),
        )
        .map_err(|e| fail(&e))?;
        user.ingest(SOURCE_ID, &items, START)
            .map_err(|e| fail(&e))?;
        user.load_bundle(&bundle).map_err(|e| fail(&e))?;
        user.policy_mut().grant(
            sp.did().clone(),
            SOURCE_ID,
            OperationKind::Compute,
            START,
            None,
        );
        user.connect(&sp.document()).map_err(|e| fail(&e))?;
        sp.connect(&user.document()).map_err(|e| fail(&e))?;

        let user_did = user.did().clone();
        let mut transport = LocalTransport::new(START);
        transport.add_user(user);
        Ok(Self {
            texts,
            sp,
            transport,
            user_did,
            selector: DataSelector::new(SOURCE_ID, POST_V1, RecordLimit::Bounded(cap)),
        })
    }

    fn run(&mut self, mode: BenchMode, overhead: &EnclaveOverhead) -> Result<Duration, BenchError> {
        let t0 = Instant::now();
        match mode {
            BenchMode::Centralized => {
                std::hint::black_box(ner_count(&self.texts, &dictionary()));
            }
            BenchMode::Decentralized | BenchMode::Enclave => {
                let v = self
                    .sp
                    .sp_request_compute(
                        &mut self.transport,
                        &self.user_did,
                        FUNCTION_ID,
                        self.selector.clone(),
                        0,
                    )
                    .map_err(|e| BenchError::Pipeline(e.to_string()))?;
                if v.result.record_count as usize != self.texts.len() {
                    return Err(BenchError::Pipeline("record count mismatch".into()));
                }
                if mode == BenchMode::Enclave {
                    spin(overhead.cost(v.result.record_count));
                }
            }
        }
        Ok(t0.elapsed())
    }
}

/// Runs every (size, mode) pair `trials` times after one warm-up call and
/// reports medians plus a linear fit per mode.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport, BenchError> {
    let mut sizes: Vec<usize> = config.sizes.iter().copied().filter(|&s| s > 0).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 2 {
        return Err(BenchError::TooFewSizes);
    }
    if config.trials == 0 {
        return Err(BenchError::NoTrials);
    }
    let mut modes = config.modes.clone();
    modes.sort_unstable();
    modes.dedup();
    if modes.is_empty() {
        return Err(BenchError::NoModes);
    }

    let mut rows = Vec::new();
    for &size in &sizes {
        let mut fx = Fixture::new(size, config.seed)?;
        let mut times: BTreeMap<BenchMode, Vec<f64>> = BTreeMap::new();
        for &mode in &modes {
            fx.run(mode, &config.overhead)?;
        }
        // Round-robin over modes so drift hits every mode alike.
        for _ in 0..config.trials {
            for &mode in &modes {
                let d = fx.run(mode, &config.overhead)?;
                times.entry(mode).or_default().push(d.as_secs_f64() * 1e3);
            }
        }
        for (mode, t) in times {
            rows.push(BenchRow {
                record_count: size,
                mode,
                runtime_ms: median(t).max(f64::MIN_POSITIVE),
                trials: config.trials,
            });
        }
    }
    rows.sort_by_key(|r| (r.mode, r.record_count));

    let fits = modes
        .iter()
        .filter_map(|&m| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.mode == m)
                .map(|r| (r.record_count as f64, r.runtime_ms))
                .collect();
            linear_fit(&pts).map(|f| (m, f))
        })
        .collect();
    Ok(BenchReport {
        schema: BENCH_SCHEMA.into(),
        rows,
        fits,
    })
}
