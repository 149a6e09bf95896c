//! Command bodies. Each one parses files, calls into the core crate and
//! prints the outcome.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use datagent_core::agents::{AuditOutcome, SpReply};
use datagent_core::analytics::FunctionOutput;
use datagent_core::bench::{run_bench, BenchConfig, EnclaveOverhead};
use datagent_core::enclave::ENCLAVE_VERSION;
use datagent_core::encoding::Canonical;
use datagent_core::identity::AgentIdentity;
use datagent_core::plug::{verify_chain, Credential, SourceSpec};
use datagent_core::simnet::{
    assert_security, run_sim, BundleDef, EventTrace, Scenario, SecurityProperty, TraceEvent,
};
use datagent_core::types::{DataSelector, Did, OperationKind, RecordLimit, Timestamp};
use datagent_core::{AccessPolicy, ComputationPolicy, FunctionBundle, Grant, MessageEnvelope};

use crate::home::{
    parse_seed, random_seed, read_canonical, write_doc, write_seed, AgentHome, SpHome,
};
use crate::{
    AgentCmd, BenchArgs, BundleCmd, Cli, Command, Format, KeygenArgs, Limits, PlugCmd, PolicyCmd,
    ScenarioCmd, SpCmd,
};

struct Out {
    format: Format,
}

impl Out {
    /// Prints `record` as one JSON line, or `text` in text mode.
    fn emit<T: Serialize>(&self, record: &T, text: impl FnOnce() -> String) -> Result<()> {
        match self.format {
            Format::Records => println!("{}", serde_json::to_string(record)?),
            Format::Text => println!("{}", text()),
        }
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let now = Timestamp(match cli.now {
        Some(ms) => ms,
        None => SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0),
    });
    let out = Out { format: cli.format };
    match cli.command {
        Command::Keygen(a) => keygen(&out, a),
        Command::Policy(c) => policy(&out, c, now),
        Command::Plug(c) => plug(&out, c, now),
        Command::Bundle(c) => bundle(&out, c),
        Command::Agent(c) => agent(&out, c, now),
        Command::Sp(c) => sp(&out, c, now),
        Command::Scenario(c) => scenario(&out, c),
        Command::Bench(a) => bench(&out, a),
    }
}

fn seed_or_random(seed: Option<&str>) -> Result<[u8; 32]> {
    seed.map_or_else(|| Ok(random_seed()), parse_seed)
}

#[derive(Serialize, Deserialize)]
pub struct IdentityRecord {
    pub did: String,
    pub diddoc: PathBuf,
}

fn keygen(out: &Out, a: KeygenArgs) -> Result<ExitCode> {
    let seed = seed_or_random(a.seed.as_deref())?;
    let id = AgentIdentity::from_seed(&seed);
    let doc_path = write_doc(&a.out, &id.document())?;
    write_seed(&doc_path.with_extension("key"), &seed)?;
    let rec = IdentityRecord {
        did: id.did().to_string(),
        diddoc: doc_path,
    };
    out.emit(&rec, || {
        format!("{}\n  document: {}", rec.did, rec.diddoc.display())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn load_policy(path: &Path) -> Result<AccessPolicy> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(AccessPolicy::from_toml(&text).with_context(|| format!("in {}", path.display()))?)
}

fn save_policy(path: &Path, p: &AccessPolicy) -> Result<()> {
    fs::write(path, p.to_toml()).with_context(|| format!("writing {}", path.display()))
}

fn computation_policy(l: &Limits) -> Result<ComputationPolicy> {
    let cp = ComputationPolicy::new(l.functions.iter().cloned(), l.max_records, l.max_per_day);
    cp.validate()?;
    Ok(cp)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PolicyRecord {
    Grant(Grant),
    Source {
        source_id: String,
        policy: ComputationPolicy,
    },
}

fn policy(out: &Out, c: PolicyCmd, now: Timestamp) -> Result<ExitCode> {
    match c {
        PolicyCmd::Show { policy } => {
            let p = load_policy(&policy)?;
            for g in p.grants() {
                out.emit(&PolicyRecord::Grant(g.clone()), || {
                    let exp = g
                        .expires_at
                        .map_or("never".to_owned(), |t| t.millis().to_string());
                    let state = if g.is_active(now) { "" } else { " (expired)" };
                    format!(
                        "grant {} {} {} expires={exp}{state}",
                        g.operation, g.source_id, g.sp_did
                    )
                })?;
            }
            for (source_id, cp) in p.policies() {
                let rec = PolicyRecord::Source {
                    source_id: source_id.clone(),
                    policy: cp.clone(),
                };
                out.emit(&rec, || {
                    let fns: Vec<&str> =
                        cp.allowed_function_ids.iter().map(String::as_str).collect();
                    format!(
                        "source {source_id} functions=[{}] max_records={} max_per_day={}",
                        fns.join(","),
                        cp.max_records,
                        cp.max_requests_per_day
                    )
                })?;
            }
        }
        PolicyCmd::Grant { key, expires_at } => {
            let mut p = load_policy(&key.policy)?;
            let expires_at = expires_at.map(Timestamp);
            if expires_at.is_some_and(|e| e <= now) {
                bail!("expiry must be in the future");
            }
            p.grant(
                Did::from(key.sp.as_str()),
                &key.source,
                key.op,
                now,
                expires_at,
            );
            save_policy(&key.policy, &p)?;
            let g = p
                .grants()
                .find(|g| {
                    g.sp_did.as_str() == key.sp
                        && g.source_id == key.source
                        && g.operation == key.op
                })
                .cloned()
                .expect("grant just added");
            out.emit(&PolicyRecord::Grant(g), || {
                format!("granted {} on {} to {}", key.op, key.source, key.sp)
            })?;
        }
        PolicyCmd::Revoke { key } => {
            let mut p = load_policy(&key.policy)?;
            let g = p.revoke(&Did::from(key.sp.as_str()), &key.source, key.op)?;
            save_policy(&key.policy, &p)?;
            out.emit(&PolicyRecord::Grant(g), || {
                format!("revoked {} on {} from {}", key.op, key.source, key.sp)
            })?;
        }
        PolicyCmd::Set {
            policy,
            source,
            limits,
        } => {
            let mut p = load_policy(&policy)?;
            let cp = computation_policy(&limits)?;
            p.set_policy(source.clone(), cp.clone())?;
            save_policy(&policy, &p)?;
            out.emit(
                &PolicyRecord::Source {
                    source_id: source.clone(),
                    policy: cp,
                },
                || format!("policy set for {source}"),
            )?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize, Deserialize)]
pub struct SourceRecord {
    pub source_id: String,
    pub schema_tag: String,
    pub records: usize,
    pub chain_ok: bool,
}

#[derive(Serialize, Deserialize)]
pub struct IngestRecord {
    pub source_id: String,
    pub accepted: usize,
    pub rejected: usize,
}

fn plug(out: &Out, c: PlugCmd, now: Timestamp) -> Result<ExitCode> {
    match c {
        PlugCmd::Add {
            config,
            source,
            schema,
            kind,
            credential,
            limits,
        } => {
            let mut home = AgentHome::open(&config)?;
            let spec = SourceSpec {
                source_id: source,
                schema_tag: schema,
                plug_kind: kind.into(),
                initial_policy: computation_policy(&limits)?,
                signer_seed: None,
            };
            let d = home.agent.register_source(spec, &Credential(credential))?;
            home.save()?;
            let rec = SourceRecord {
                source_id: d.source_id.clone(),
                schema_tag: d.schema_tag.clone(),
                records: 0,
                chain_ok: true,
            };
            out.emit(&rec, || {
                format!("added source {} ({})", rec.source_id, rec.schema_tag)
            })?;
        }
        PlugCmd::Ingest {
            config,
            source,
            file,
        } => {
            let mut home = AgentHome::open(&config)?;
            let text =
                fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let mut items = Vec::new();
            let mut unparsable = 0;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                match serde_json::from_str::<Value>(line) {
                    Ok(v) => items.push(v),
                    Err(_) => unparsable += 1,
                }
            }
            let report = home.agent.ingest(&source, &items, now)?;
            home.save()?;
            let rec = IngestRecord {
                source_id: source,
                accepted: report.accepted,
                rejected: report.rejected + unparsable,
            };
            out.emit(&rec, || {
                format!(
                    "{}: {} accepted, {} rejected",
                    rec.source_id, rec.accepted, rec.rejected
                )
            })?;
        }
        PlugCmd::List { config } => {
            let home = AgentHome::open(&config)?;
            let a = &home.agent;
            for d in a.plugs().list_sources() {
                let rec = SourceRecord {
                    source_id: d.source_id.clone(),
                    schema_tag: d.schema_tag.clone(),
                    records: a.store().records_of(&d.source_id).count(),
                    chain_ok: verify_chain(a.store(), a.plugs(), &d.source_id),
                };
                out.emit(&rec, || {
                    let chain = if rec.chain_ok {
                        "chain ok"
                    } else {
                        "CHAIN BROKEN"
                    };
                    format!(
                        "{} {} records={} {chain}",
                        rec.source_id, rec.schema_tag, rec.records
                    )
                })?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize, Deserialize)]
pub struct BundleRecord {
    pub function_id: String,
    pub output_schema: String,
    pub measurement: String,
    pub file: PathBuf,
}

fn bundle_record(b: &FunctionBundle, file: PathBuf) -> BundleRecord {
    BundleRecord {
        function_id: b.function_id.clone(),
        output_schema: b.output_schema.clone(),
        measurement: b.measure(ENCLAVE_VERSION).0.to_hex(),
        file,
    }
}

fn bundle(out: &Out, c: BundleCmd) -> Result<ExitCode> {
    let BundleCmd::Create {
        def,
        provider,
        out: path,
    } = c;
    let text = fs::read_to_string(&def).with_context(|| format!("reading {}", def.display()))?;
    let bd: BundleDef =
        toml::from_str(&text).with_context(|| format!("parsing {}", def.display()))?;
    let spec = bd.function.to_spec()?;
    let b = FunctionBundle::new(bd.id, &spec, Did::from(provider.as_str()));
    fs::write(&path, b.to_canonical_bytes())
        .with_context(|| format!("writing {}", path.display()))?;
    let rec = bundle_record(&b, path);
    out.emit(&rec, || {
        format!("{} measurement {}", rec.function_id, rec.measurement)
    })?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize, Deserialize)]
pub struct RunRecord {
    pub file: PathBuf,
    pub outcome: Option<AuditOutcome>,
    pub reply: Option<PathBuf>,
    pub error: Option<String>,
}

fn envelope_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "env"))
        .collect();
    files.sort();
    Ok(files)
}

fn agent(out: &Out, c: AgentCmd, now: Timestamp) -> Result<ExitCode> {
    match c {
        AgentCmd::Init { dir, seed } => {
            let home = AgentHome::init(&dir, seed_or_random(seed.as_deref())?)?;
            let doc = write_doc(&dir, &home.agent.document())?;
            home.save()?;
            let rec = IdentityRecord {
                did: home.agent.did().to_string(),
                diddoc: doc,
            };
            out.emit(&rec, || {
                format!("agent {}\n  document: {}", rec.did, rec.diddoc.display())
            })?;
        }
        AgentCmd::Doc { config, out: dir } => {
            let home = AgentHome::open(&config)?;
            let doc = write_doc(&dir, &home.agent.document())?;
            let rec = IdentityRecord {
                did: home.agent.did().to_string(),
                diddoc: doc,
            };
            out.emit(&rec, || rec.diddoc.display().to_string())?;
        }
        AgentCmd::Connect { config, peer } => {
            let mut home = AgentHome::open(&config)?;
            let doc = home.add_peer(&peer)?;
            home.save()?;
            out.emit(&json!({ "peer": doc.did }), || {
                format!("connected to {}", doc.did)
            })?;
        }
        AgentCmd::Load { config, bundle } => {
            let mut home = AgentHome::open(&config)?;
            let b = home.add_bundle(&bundle)?;
            home.save()?;
            let rec = bundle_record(&b, bundle);
            out.emit(&rec, || {
                format!("loaded {} measurement {}", rec.function_id, rec.measurement)
            })?;
        }
        AgentCmd::Run {
            config,
            inbox,
            outbox,
        } => {
            let mut home = AgentHome::open(&config)?;
            fs::create_dir_all(&outbox)?;
            let done = inbox.join("done");
            fs::create_dir_all(&done)?;
            for file in envelope_files(&inbox)? {
                let mut rec = RunRecord {
                    file: file.clone(),
                    outcome: None,
                    reply: None,
                    error: None,
                };
                match read_canonical::<MessageEnvelope>(&file) {
                    Ok(env) => {
                        let reply = home.agent.handle_envelope(&env, now);
                        rec.outcome = home.agent.audit().entries().last().map(|e| e.outcome);
                        if let Some(r) = reply {
                            let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("reply");
                            let path = outbox.join(format!("{stem}.reply.env"));
                            fs::write(&path, r.to_canonical_bytes())?;
                            rec.reply = Some(path);
                        }
                    }
                    Err(e) => rec.error = Some(format!("{e:#}")),
                }
                fs::rename(
                    &file,
                    done.join(file.file_name().expect("listed file has a name")),
                )?;
                out.emit(&rec, || {
                    let what = rec
                        .outcome
                        .map(|o| format!("{o:?}"))
                        .or_else(|| rec.error.clone())
                        .unwrap_or_default();
                    format!("{}: {what}", rec.file.display())
                })?;
            }
            home.save()?;
        }
        AgentCmd::Audit { config, verify } => {
            let home = AgentHome::open(&config)?;
            let log = home.agent.audit();
            for e in log.entries() {
                out.emit(e, || {
                    format!(
                        "#{} t={} {} {} {:?}",
                        e.seq,
                        e.at.millis(),
                        e.peer,
                        e.request_id.as_deref().unwrap_or("-"),
                        e.outcome
                    )
                })?;
            }
            if verify {
                if let Err(i) = log.verify() {
                    bail!("audit chain broken at entry {i}");
                }
                if out.format == Format::Text {
                    println!("chain ok ({} entries)", log.len());
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_id: String,
    pub to: String,
    pub function_id: String,
    pub envelope: PathBuf,
}

#[derive(Serialize, Deserialize)]
pub struct CollectRecord {
    pub file: PathBuf,
    pub request_id: Option<String>,
    pub from: String,
    pub outcome: String,
    pub record_count: Option<u64>,
    pub output: Option<Value>,
}

fn output_json(o: &FunctionOutput) -> Value {
    match o {
        FunctionOutput::EntityCounts(m) => json!({ "entity_counts": m }),
        FunctionOutput::Sentiment(s) => {
            json!({ "mean": s.mean, "matched_tokens": s.matched_tokens })
        }
        FunctionOutput::Scalar(v) => json!({ "value": v }),
        FunctionOutput::Linreg(f) => {
            json!({ "slope": f.slope, "intercept": f.intercept, "n": f.n })
        }
        FunctionOutput::Trained(t) => json!({ "n_samples": t.n_samples, "loss": t.loss_final }),
    }
}

fn sp(out: &Out, c: SpCmd, now: Timestamp) -> Result<ExitCode> {
    match c {
        SpCmd::Init { dir, seed } => {
            let home = SpHome::init(&dir, seed_or_random(seed.as_deref())?)?;
            let doc = write_doc(&dir, &home.sp.document())?;
            home.save()?;
            let rec = IdentityRecord {
                did: home.sp.did().to_string(),
                diddoc: doc,
            };
            out.emit(&rec, || {
                format!("provider {}\n  document: {}", rec.did, rec.diddoc.display())
            })?;
        }
        SpCmd::Doc { config, out: dir } => {
            let home = SpHome::open(&config)?;
            let doc = write_doc(&dir, &home.sp.document())?;
            let rec = IdentityRecord {
                did: home.sp.did().to_string(),
                diddoc: doc,
            };
            out.emit(&rec, || rec.diddoc.display().to_string())?;
        }
        SpCmd::Connect { config, peer } => {
            let mut home = SpHome::open(&config)?;
            let doc = home.add_peer(&peer)?;
            home.save()?;
            let trusted = home.sp.enclave_key(&doc.did).is_some();
            out.emit(
                &json!({ "peer": doc.did, "enclave_trusted": trusted }),
                || {
                    let note = if trusted { "" } else { " (no trusted enclave)" };
                    format!("connected to {}{note}", doc.did)
                },
            )?;
        }
        SpCmd::Load { config, bundle } => {
            let mut home = SpHome::open(&config)?;
            let b = home.add_bundle(&bundle)?;
            home.save()?;
            let rec = bundle_record(&b, bundle);
            out.emit(&rec, || {
                format!(
                    "registered {} measurement {}",
                    rec.function_id, rec.measurement
                )
            })?;
        }
        SpCmd::Request {
            config,
            to,
            function,
            source,
            schema,
            max_records,
            out: path,
        } => {
            let mut home = SpHome::open(&config)?;
            let limit = if max_records == 0 {
                RecordLimit::Unlimited
            } else {
                RecordLimit::Bounded(max_records)
            };
            let selector = DataSelector::new(source, schema, limit);
            let target = Did::from(to.as_str());
            let (re, env) = home.sp.issue(
                &target,
                OperationKind::Compute,
                &function,
                Vec::new(),
                selector,
                now,
            )?;
            fs::write(&path, env.to_canonical_bytes())
                .with_context(|| format!("writing {}", path.display()))?;
            home.save()?;
            let rec = RequestRecord {
                request_id: re.request_id.to_hex(),
                to,
                function_id: function,
                envelope: path,
            };
            out.emit(&rec, || {
                format!("request {} -> {}", rec.request_id, rec.envelope.display())
            })?;
        }
        SpCmd::Collect { config, replies } => {
            let mut home = SpHome::open(&config)?;
            let mut failed = false;
            for file in replies {
                let env: MessageEnvelope = read_canonical(&file)?;
                let mut rec = CollectRecord {
                    file,
                    request_id: None,
                    from: env.sender_did.to_string(),
                    outcome: String::new(),
                    record_count: None,
                    output: None,
                };
                match home.sp.open_reply(&env) {
                    Ok(reply) => {
                        rec.request_id = Some(reply.request_id().to_hex());
                        match reply {
                            SpReply::Computed(v) => {
                                rec.outcome = "Verified".into();
                                rec.record_count = Some(v.result.record_count);
                                rec.output = Some(output_json(&v.output));
                            }
                            SpReply::Denied { reason, .. } => {
                                rec.outcome = format!("Denied({reason:?})")
                            }
                            SpReply::Update(u) => {
                                rec.outcome = "Update".into();
                                rec.record_count = Some(u.result.record_count);
                            }
                        }
                    }
                    Err(e) => {
                        failed = true;
                        rec.outcome = format!("Rejected({e})");
                    }
                }
                out.emit(&rec, || {
                    let body = rec
                        .output
                        .as_ref()
                        .map(Value::to_string)
                        .unwrap_or_default();
                    format!("{}: {} {body}", rec.file.display(), rec.outcome)
                })?;
            }
            home.save()?;
            if failed {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize, Deserialize)]
pub struct ModelRecord {
    pub step: usize,
    pub round: u64,
    pub params_hash: String,
}

#[derive(Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub trace: PathBuf,
    pub events: usize,
    pub sp_results: BTreeMap<String, usize>,
    pub decisions: BTreeMap<String, usize>,
    pub models: Vec<ModelRecord>,
}

fn scenario(out: &Out, c: ScenarioCmd) -> Result<ExitCode> {
    match c {
        ScenarioCmd::Run {
            file,
            trace,
            seed,
            adversary,
        } => {
            let mut s = Scenario::load(&file)?;
            if let Some(seed) = seed {
                s.sim.seed = seed;
            }
            if let Some(mode) = adversary {
                s.adversary.mode = mode;
            }
            let o = run_sim(&s)?;
            fs::write(&trace, o.trace.to_jsonl())
                .with_context(|| format!("writing {}", trace.display()))?;
            let mut sp_results = BTreeMap::new();
            let mut decisions = BTreeMap::new();
            for e in o.trace.events() {
                match e {
                    TraceEvent::SpResult { outcome, .. } => {
                        *sp_results.entry(outcome.clone()).or_insert(0) += 1
                    }
                    TraceEvent::Decision { outcome, .. } => {
                        *decisions.entry(format!("{outcome:?}")).or_insert(0) += 1
                    }
                    _ => {}
                }
            }
            let summary = ScenarioSummary {
                trace,
                events: o.trace.len(),
                sp_results,
                decisions,
                models: o
                    .final_models
                    .iter()
                    .map(|(step, m)| ModelRecord {
                        step: *step,
                        round: m.round,
                        params_hash: datagent_core::federated::params_hash(&m.params).to_hex(),
                    })
                    .collect(),
            };
            out.emit(&summary, || {
                let mut lines = vec![format!(
                    "{} events -> {}",
                    summary.events,
                    summary.trace.display()
                )];
                lines.extend(
                    summary
                        .sp_results
                        .iter()
                        .map(|(k, n)| format!("  result {k}: {n}")),
                );
                lines.extend(
                    summary
                        .decisions
                        .iter()
                        .map(|(k, n)| format!("  decision {k}: {n}")),
                );
                lines.extend(summary.models.iter().map(|m| {
                    format!(
                        "  model step {} round {} {}",
                        m.step, m.round, m.params_hash
                    )
                }));
                lines.join("\n")
            })?;
        }
        ScenarioCmd::Assert { trace, properties } => {
            let text = fs::read_to_string(&trace)
                .with_context(|| format!("reading {}", trace.display()))?;
            let t = EventTrace::from_jsonl(&text)
                .with_context(|| format!("parsing {}", trace.display()))?;
            let props = if properties.is_empty() {
                SecurityProperty::ALL.to_vec()
            } else {
                properties
            };
            let mut all = true;
            for p in props {
                let r = assert_security(&t, p);
                all &= r.holds;
                out.emit(&r, || {
                    if r.holds {
                        format!("{p:?}: holds ({} checked)", r.checked)
                    } else {
                        format!(
                            "{p:?}: VIOLATED ({} counterexamples)",
                            r.counterexamples.len()
                        )
                    }
                })?;
            }
            if !all {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn bench(out: &Out, a: BenchArgs) -> Result<ExitCode> {
    let config = BenchConfig {
        sizes: a.sizes,
        modes: a.modes,
        trials: a.trials,
        seed: a.seed,
        overhead: EnclaveOverhead {
            setup_us: a.setup_us,
            per_record_ns: a.per_record_ns,
        },
    };
    let report = run_bench(&config).map_err(|e| anyhow!(e))?;
    for r in &report.rows {
        out.emit(r, || {
            format!(
                "{:>13} {:>6} {:>10.3} ms",
                r.mode.as_str(),
                r.record_count,
                r.runtime_ms
            )
        })?;
    }
    if out.format == Format::Text {
        for (m, f) in &report.fits {
            println!("fit {m}: slope {:.6} ms/record, R^2 {:.4}", f.slope, f.r2);
        }
    }
    if let Some(path) = a.out {
        fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = a.plot {
        fs::write(&path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}
