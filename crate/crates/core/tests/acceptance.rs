//! Acceptance criteria. Each check prints one PASS/FAIL line; the test fails
//! if any criterion does.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use ed25519_dalek::{Signature, SigningKey, Verifier, VerifyingKey};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use datagent_core::agents::MessageKind;
use datagent_core::analytics::{
    accuracy, labeled_examples, local_train, loss, loss_and_grad, Example, FunctionOutput,
    FunctionSpec, ModelLayout, ModelParams, TrainHyper, TrainOutcome, FEATURE_DIM,
};
use datagent_core::bench::{run_bench, BenchConfig, BenchMode};
use datagent_core::federated::{
    aggregate, train_params, AggregationContext, FederatedError, ModelUpdate,
};
use datagent_core::plug::{Credential, PlugKind, PlugRegistry, SourceSpec};
use datagent_core::schema::{RecordPayload, COMMENT_V1, LABELED_TITLE_V1};
use datagent_core::simnet::{run_sim, AdversaryMode, Scenario, Step, TraceEvent};
use datagent_core::synth::{labeled_title_items, word_comment_items};
use datagent_core::{
    vrf, AccessPolicy, AgentIdentity, Attestation, Canonical, ComputationPolicy,
    ComputationRequest, ComputeResult, DataSelector, Did, EnclaveInstance, FunctionBundle,
    MessageEnvelope, OperationKind, RecordLimit, RecordStore, RequestHistory, RequestId,
    SecureChannel, Timestamp,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn scenario(name: &str) -> Scenario {
    Scenario::load(format!(
        "{}/../../scenarios/{name}",
        env!("CARGO_MANIFEST_DIR")
    ))
    .unwrap()
}

fn flip_bit(bytes: &mut [u8], rng: &mut impl Rng) {
    let i = rng.gen_range(0..bytes.len());
    bytes[i] ^= 1 << rng.gen_range(0..8);
}

fn random_key(rng: &mut impl RngCore) -> SigningKey {
    let mut s = [0u8; 32];
    rng.fill_bytes(&mut s);
    SigningKey::from_bytes(&s)
}

// ---------------------------------------------------------------------------
// 1. Access control against a brute-force oracle.

struct OracleGrant {
    sp: Did,
    source: String,
    op: OperationKind,
    expires: Option<u64>,
}

struct OraclePolicy {
    functions: Vec<String>,
    max_records: u32,
    max_per_day: u32,
}

fn oracle_permit(
    re: &ComputationRequest,
    key: Option<&VerifyingKey>,
    grants: &[OracleGrant],
    policies: &[(String, OraclePolicy)],
    history: &[(Did, String, u32)],
    now: u64,
) -> bool {
    let sig_ok = key.is_some_and(|k| {
        k.verify(
            &re.signing_bytes(),
            &Signature::from_bytes(&re.requester_signature),
        )
        .is_ok()
    });
    let source = &re.selector.source_id;
    // The most recent grant for a triple is the one in force.
    let grant = grants
        .iter()
        .rev()
        .find(|g| g.sp == re.requester_did && &g.source == source && g.op == re.operation);
    let granted = grant.is_some_and(|g| g.expires.map_or(true, |e| now < e));
    let Some((_, cp)) = policies.iter().rev().find(|(s, _)| s == source) else {
        return false;
    };
    let within = match re.selector.max_records {
        RecordLimit::Bounded(n) => n <= cp.max_records,
        RecordLimit::Unlimited => false,
    };
    let used: u32 = history
        .iter()
        .filter(|(sp, s, _)| *sp == re.requester_did && s == source)
        .map(|(_, _, c)| *c)
        .sum();
    sig_ok
        && re.operation != OperationKind::Share
        && granted
        && cp.functions.iter().any(|f| *f == re.function_id)
        && within
        && used < cp.max_per_day
}

fn criterion_access() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let sps: Vec<AgentIdentity> = (0..2u8)
        .map(|i| AgentIdentity::from_seed(&[i + 1; 32]))
        .collect();
    let owner = AgentIdentity::from_seed(&[9; 32]);
    let sources = ["s0", "s1", "s2", "s3"];
    let functions = ["f0", "f1", "f2", "f3"];
    let now = 1_700_000_000_000u64;
    let (mut trials, mut permits, mut mismatches, mut empty_permits) = (0, 0, 0, 0);

    for _policy in 0..100 {
        let mut policy = AccessPolicy::new(owner.did().clone());
        let mut grants = Vec::new();
        let mut policies = Vec::new();
        let mut history = RequestHistory::new();
        let mut hist_oracle = Vec::new();

        for _ in 0..rng.gen_range(0..30) {
            let sp = sps.choose(&mut rng).unwrap().did().clone();
            let source = *sources[..3].choose(&mut rng).unwrap();
            let op = *OperationKind::ALL.choose(&mut rng).unwrap();
            let expires = match rng.gen_range(0..4) {
                0 => None,
                1 => Some(now - rng.gen_range(1..10_000)),
                2 => Some(now),
                _ => Some(now + rng.gen_range(1..10_000)),
            };
            let granted_at = now - 20_000;
            policy.grant(
                sp.clone(),
                source,
                op,
                Timestamp(granted_at),
                expires.map(Timestamp),
            );
            grants.push(OracleGrant {
                sp,
                source: source.into(),
                op,
                expires,
            });
        }
        for source in &sources[..3] {
            if rng.gen_bool(0.9) {
                let fs: Vec<String> = functions[..3]
                    .iter()
                    .filter(|_| rng.gen_bool(0.6))
                    .map(|f| f.to_string())
                    .collect();
                if fs.is_empty() {
                    continue;
                }
                let max_records = rng.gen_range(1..60);
                let max_per_day = rng.gen_range(1..8);
                policy
                    .set_policy(
                        *source,
                        ComputationPolicy::new(fs.clone(), max_records, max_per_day),
                    )
                    .unwrap();
                policies.push((
                    source.to_string(),
                    OraclePolicy {
                        functions: fs,
                        max_records,
                        max_per_day,
                    },
                ));
            }
        }
        for sp in &sps {
            for source in &sources[..3] {
                let c = rng.gen_range(0..4u32);
                for _ in 0..c {
                    history.record(sp.did(), source, Timestamp(now));
                }
                hist_oracle.push((sp.did().clone(), source.to_string(), c));
            }
        }
        let empty = AccessPolicy::new(owner.did().clone());

        for _ in 0..100 {
            let requester = sps.choose(&mut rng).unwrap();
            let max_records = if rng.gen_bool(0.1) {
                RecordLimit::Unlimited
            } else {
                RecordLimit::Bounded(rng.gen_range(1..40))
            };
            let mut re = ComputationRequest::unsigned(
                RequestId::random(&mut rng),
                requester.did().clone(),
                [
                    OperationKind::Compute,
                    OperationKind::Compute,
                    OperationKind::Train,
                    OperationKind::Share,
                ][rng.gen_range(0..4)],
                *functions.choose(&mut rng).unwrap(),
                Vec::new(),
                DataSelector::new(*sources.choose(&mut rng).unwrap(), COMMENT_V1, max_records),
                Timestamp(now),
            );
            match rng.gen_range(0..20) {
                0 => re.sign(
                    sps[(sps.iter().position(|s| s.did() == requester.did()).unwrap() + 1)
                        % sps.len()]
                    .signing_key(),
                ),
                1 => {
                    re.sign(requester.signing_key());
                    re.function_id.push('x');
                }
                _ => re.sign(requester.signing_key()),
            }
            let vk = requester.verifying_key();
            let key = if rng.gen_bool(0.95) { Some(&vk) } else { None };

            let got = policy.allow(&re, key, Timestamp(now), &history).is_permit();
            let want = oracle_permit(&re, key, &grants, &policies, &hist_oracle, now);
            trials += 1;
            permits += usize::from(want);
            mismatches += usize::from(got != want);
            empty_permits +=
                usize::from(empty.allow(&re, key, Timestamp(now), &history).is_permit());
        }
    }
    let elapsed = start.elapsed();
    verdict(
        mismatches == 0 && empty_permits == 0 && permits > 0 && elapsed < Duration::from_secs(10),
        format!(
            "{trials} requests, {permits} oracle permits, {mismatches} mismatches, {empty_permits} permits under empty policy, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Attestation verification rejects every mutation.

struct Host {
    enclave: EnclaveInstance,
    plugs: PlugRegistry,
    store: RecordStore,
}

fn host(seed: u8, items: &[serde_json::Value], schema: &str, bundles: &[FunctionBundle]) -> Host {
    let mut enclave = EnclaveInstance::launch(&[seed; 32]);
    for b in bundles {
        enclave.load_bundle(b).unwrap();
    }
    let mut plugs = PlugRegistry::new();
    let mut policy = AccessPolicy::new(Did("did:dga:zHost".into()));
    let fids: Vec<String> = bundles.iter().map(|b| b.function_id.clone()).collect();
    plugs
        .register_source(
            SourceSpec {
                source_id: "src".into(),
                schema_tag: schema.into(),
                plug_kind: PlugKind::FileDrop,
                initial_policy: ComputationPolicy::new(fids, 10_000, 10_000),
                signer_seed: Some([seed.wrapping_add(100); 32]),
            },
            &Credential("tok".into()),
            &mut policy,
        )
        .unwrap();
    let mut store = RecordStore::in_memory();
    plugs
        .ingest(&mut store, "src", items, Timestamp(1_700_000_000_000))
        .unwrap();
    Host {
        enclave,
        plugs,
        store,
    }
}

impl Host {
    fn run(&self, re: &ComputationRequest) -> (ComputeResult, Attestation) {
        let records = self.store.query(&re.selector);
        self.enclave.execute(re, &records, &self.plugs).unwrap()
    }
}

fn criterion_vrf() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let sp = AgentIdentity::from_seed(&[3; 32]);
    let vocab = ["acme", "globex", "good", "bad", "the", "store"];
    let bundles = [
        FunctionBundle::new(
            "brands",
            &FunctionSpec::Ner {
                dictionary: datagent_core::analytics::EntityDictionary::new(["acme", "globex"])
                    .unwrap(),
            },
            sp.did().clone(),
        ),
        FunctionBundle::new(
            "count",
            &FunctionSpec::Stat {
                kind: "count".parse().unwrap(),
                field: String::new(),
            },
            sp.did().clone(),
        ),
    ];
    let h = host(
        5,
        &word_comment_items(60, 6, &vocab, 4),
        COMMENT_V1,
        &bundles,
    );
    let vk = h.enclave.attestation_public_key();

    let pairs: Vec<_> = (0..100)
        .map(|i| {
            let f = if i % 2 == 0 { "brands" } else { "count" };
            let re = ComputationRequest::unsigned(
                RequestId::random(&mut rng),
                sp.did().clone(),
                OperationKind::Compute,
                f,
                Vec::new(),
                DataSelector::new(
                    "src",
                    COMMENT_V1,
                    RecordLimit::Bounded(rng.gen_range(1..=60)),
                ),
                Timestamp(1_700_000_000_000 + i),
            )
            .signed(sp.signing_key());
            let (r, a) = h.run(&re);
            let m = h.enclave.measurement_of(f).unwrap();
            (re, r, a, m)
        })
        .collect();

    let honest = pairs
        .iter()
        .filter(|(re, r, a, m)| vrf(&vk, m, re, r, a))
        .count();
    let mut accepted = 0;
    let n = 10_000;
    for t in 0..n {
        let (re, r, a, m) = pairs[t % pairs.len()].clone();
        let (mut re, mut r, mut a) = (re, r, a);
        let other = &pairs[(t % pairs.len() + rng.gen_range(1..pairs.len())) % pairs.len()];
        match t % 12 {
            0 => {
                if r.payload.is_empty() {
                    r.payload.push(0);
                } else {
                    flip_bit(&mut r.payload, &mut rng);
                }
            }
            1 => r.record_count = r.record_count.wrapping_add(rng.gen_range(1..1000)),
            2 => r.request_id = RequestId::random(&mut rng),
            3 => flip_bit(&mut a.measurement.0 .0, &mut rng),
            4 => flip_bit(&mut a.request_hash.0, &mut rng),
            5 => flip_bit(&mut a.result_hash.0, &mut rng),
            6 => flip_bit(&mut a.nonce, &mut rng),
            7 => flip_bit(&mut a.enclave_signature, &mut rng),
            8 => a.resign(&random_key(&mut rng)),
            9 => r = other.1.clone(),
            10 => a = other.2.clone(),
            _ => {
                // Fabricated result with a self-consistent σ under a foreign key.
                r.record_count += 1;
                a.result_hash = r.hash();
                a.resign(&random_key(&mut rng));
                if rng.gen_bool(0.5) {
                    re.selector.max_records = RecordLimit::Unlimited;
                    re.sign(sp.signing_key());
                    a.request_hash = re.hash();
                    a.resign(&random_key(&mut rng));
                }
            }
        }
        accepted += usize::from(vrf(&vk, &m, &re, &r, &a));
    }
    let elapsed = start.elapsed();
    verdict(
        accepted == 0 && honest == pairs.len() && elapsed < Duration::from_secs(30),
        format!(
            "{n} mutations, {accepted} accepted; honest {honest}/{} accepted; {:.2}s",
            pairs.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Aggregation equals the weighted mean of exactly the valid updates.

#[derive(Clone, Copy, Debug, PartialEq)]
enum Fault {
    None,
    Forged,
    Tampered,
    StaleRound,
    UnknownRequest,
    WrongAgent,
}

fn criterion_model_integrity() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let sp = AgentIdentity::from_seed(&[4; 32]);
    let layouts = [ModelLayout::logistic(16), ModelLayout::mlp(16, 3)];
    let pool: Vec<Vec<(Host, Did)>> = layouts
        .iter()
        .map(|layout| {
            let b = FunctionBundle::new(
                "engage",
                &FunctionSpec::Train { layout: *layout },
                sp.did().clone(),
            );
            (0..6u8)
                .map(|i| {
                    let h = host(
                        20 + i,
                        &labeled_title_items(30, u64::from(i)),
                        LABELED_TITLE_V1,
                        &[b.clone()],
                    );
                    (h, Did(format!("did:dga:zAgent{i}")))
                })
                .collect()
        })
        .collect();
    // Agent 5 is never endorsed.
    let trusted = 5;

    let (mut mismatches, mut max_dev, mut accepted_total, mut rejected_total) = (0, 0f64, 0, 0);
    let trials = 1000;
    for t in 0..trials {
        let li = t % layouts.len();
        let layout = layouts[li];
        let agents = &pool[li];
        let measurement = agents[0].0.enclave.measurement_of("engage").unwrap();
        let enclave_keys: BTreeMap<Did, VerifyingKey> = agents[..trusted]
            .iter()
            .map(|(h, d)| (d.clone(), h.enclave.attestation_public_key()))
            .collect();
        let round = rng.gen_range(1..100u64);
        let template = ModelParams::initial(layout, t as u64);
        let min_participants = rng.gen_range(1..=3);

        let mut ids: Vec<usize> = (0..agents.len()).collect();
        ids.shuffle(&mut rng);
        ids.truncate(rng.gen_range(1..=agents.len()));

        let mut requests = BTreeMap::new();
        let mut updates = Vec::new();
        let mut valid: Vec<(Did, TrainOutcome)> = Vec::new();
        for &i in &ids {
            let (h, did) = &agents[i];
            let hyper = TrainHyper {
                epochs: rng.gen_range(1..=3),
                learning_rate: 0.3,
                seed: rng.gen(),
            };
            let make = |rng: &mut ChaCha20Rng, round: u64| {
                ComputationRequest::unsigned(
                    RequestId::random(rng),
                    sp.did().clone(),
                    OperationKind::Train,
                    "engage",
                    train_params(round, &template, &hyper),
                    DataSelector::new(
                        "src",
                        LABELED_TITLE_V1,
                        RecordLimit::Bounded(rng.gen_range(1..=30)),
                    ),
                    Timestamp(1_700_000_000_000),
                )
                .signed(sp.signing_key())
            };
            let re = make(&mut rng, round);
            requests.insert(re.request_id, (did.clone(), re.clone()));
            let fault = if rng.gen_bool(0.35) {
                *[
                    Fault::Forged,
                    Fault::Tampered,
                    Fault::StaleRound,
                    Fault::UnknownRequest,
                    Fault::WrongAgent,
                ]
                .choose(&mut rng)
                .unwrap()
            } else {
                Fault::None
            };
            let (result, attestation) = if fault == Fault::UnknownRequest {
                h.run(&make(&mut rng, round))
            } else {
                h.run(&re)
            };
            let mut u = ModelUpdate {
                round,
                agent_did: did.clone(),
                result,
                attestation,
            };
            let honest = u.outcome().unwrap();
            match fault {
                Fault::None | Fault::UnknownRequest => {}
                Fault::Forged => {
                    let mut w = honest.model_out.clone();
                    w.weights
                        .iter_mut()
                        .for_each(|x| *x = rng.gen_range(-5.0..5.0));
                    let fake = TrainOutcome {
                        model_out: w,
                        n_samples: 1000,
                        loss_final: 0.0,
                    };
                    u.result.payload = FunctionOutput::Trained(fake).to_canonical_bytes();
                    u.attestation.result_hash = u.result.hash();
                    u.attestation.resign(&random_key(&mut rng));
                }
                Fault::Tampered => {
                    let mut o = honest.clone();
                    if rng.gen_bool(0.5) {
                        o.n_samples *= 50;
                    } else {
                        o.model_out.weights[0] += 1.0;
                    }
                    u.result.payload = FunctionOutput::Trained(o).to_canonical_bytes();
                }
                Fault::StaleRound => u.round = round - 1,
                Fault::WrongAgent => u.agent_did = agents[(i + 1) % agents.len()].1.clone(),
            }
            if fault == Fault::None && i < trusted {
                valid.push((did.clone(), honest));
            }
            updates.push(u);
        }
        for _ in 0..rng.gen_range(0..3) {
            let copy = updates.choose(&mut rng).unwrap().clone();
            updates.push(copy);
        }
        updates.shuffle(&mut rng);

        let ctx = AggregationContext {
            round,
            expected_measurement: measurement,
            requests: &requests,
            enclave_keys: &enclave_keys,
            template: &template,
            min_participants,
        };
        let got = aggregate(&updates, &ctx);
        if valid.is_empty() || valid.len() < min_participants {
            if !matches!(got, Err(FederatedError::NoValidUpdates { .. })) {
                mismatches += 1;
            }
            continue;
        }
        let Ok(agg) = got else {
            mismatches += 1;
            continue;
        };
        let total: f64 = valid.iter().map(|(_, o)| o.n_samples as f64).sum();
        let mut mean = vec![0.0; template.weights.len()];
        for (_, o) in &valid {
            for (m, w) in mean.iter_mut().zip(&o.model_out.weights) {
                *m += o.n_samples as f64 * w;
            }
        }
        for (m, w) in mean.iter().zip(&agg.params.weights) {
            max_dev = max_dev.max((m / total - w).abs());
        }
        let want: BTreeSet<&Did> = valid.iter().map(|(d, _)| d).collect();
        let have: BTreeSet<&Did> = agg.accepted.iter().map(|(d, _)| d).collect();
        if want != have || agg.rejected.len() != updates.len() - valid.len() {
            mismatches += 1;
        }
        accepted_total += agg.accepted.len();
        rejected_total += agg.rejected.len();
    }

    // A poisoning participant leaves the trained model bit-identical.
    let mut clean = scenario("federated.toml");
    clean.adversary.mode = AdversaryMode::None;
    let mut poisoned = clean.clone();
    poisoned.adversary.mode = AdversaryMode::PoisonUpdate;
    let a = run_sim(&clean).unwrap();
    let b = run_sim(&poisoned).unwrap();
    let bits = |o: &datagent_core::simnet::SimOutcome| -> Vec<u64> {
        o.final_models
            .iter()
            .flat_map(|(_, m)| m.params.weights.iter().map(|w| w.to_bits()))
            .collect()
    };
    let poison_acts = b
        .trace
        .events()
        .filter(|e| matches!(e, TraceEvent::Adversary { .. }))
        .count();
    let identical = !bits(&a).is_empty() && bits(&a) == bits(&b);

    let elapsed = start.elapsed();
    verdict(
        mismatches == 0 && max_dev <= 1e-12 && identical && poison_acts > 0,
        format!(
            "{trials} update sets, {accepted_total} accepted, {rejected_total} rejected, {mismatches} mismatches, max |Δ| {max_dev:.1e}; poisoned run ({poison_acts} poison updates) bit-identical: {identical}; {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. No raw record payload ever leaves a user agent.

fn random_text(rng: &mut impl Rng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

fn leakage_scenario(seed: u64, rng: &mut impl Rng) -> String {
    let titles: Vec<String> = (0..rng.gen_range(4..12))
        .map(|_| {
            format!(
                "{{ title = \"{}\", engaged = {} }}",
                random_text(rng, 16, 40),
                rng.gen_bool(0.5)
            )
        })
        .collect();
    format!(
        r#"
[sim]
seed = {seed}

[[provider]]
name = "acme"
[[provider.bundle]]
id = "count"
family = "stat.v1"
kind = "count"
[[provider.bundle]]
id = "brands"
family = "ner.v1"
entities = ["acme", "globex"]
[[provider.bundle]]
id = "engage"
family = "train.logreg.v1"

[[user]]
name = "alice"
[[user.source]]
id = "notes"
schema = "comment.v1"
synthetic = {{ kind = "random_comments", count = {n1}, payload_len = {l1} }}
policy = {{ functions = ["count", "brands"] }}
[[user.source]]
id = "titles"
schema = "labeled_title.v1"
items = [{titles}]
policy = {{ functions = ["engage"] }}
[[user.grant]]
provider = "acme"
source = "notes"
operation = "Compute"
[[user.grant]]
provider = "acme"
source = "titles"
operation = "Train"

[[user]]
name = "bob"
[[user.source]]
id = "notes"
schema = "comment.v1"
synthetic = {{ kind = "random_comments", count = {n2}, payload_len = {l2} }}
policy = {{ functions = ["count"] }}

[[step]]
kind = "compute"
provider = "acme"
user = "alice"
function = "count"
source = "notes"
schema = "comment.v1"

[[step]]
kind = "compute"
provider = "acme"
user = "alice"
function = "brands"
source = "notes"
schema = "comment.v1"

[[step]]
kind = "compute"
provider = "acme"
user = "bob"
function = "count"
source = "notes"
schema = "comment.v1"

[[step]]
kind = "train"
provider = "acme"
function = "engage"
source = "titles"
schema = "labeled_title.v1"
rounds = {rounds}
"#,
        n1 = rng.gen_range(5..20),
        l1 = rng.gen_range(16..48),
        n2 = rng.gen_range(1..10),
        l2 = rng.gen_range(16..48),
        titles = titles.join(", "),
        rounds = rng.gen_range(1..3),
    )
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    hay.windows(needle.len()).any(|w| w == needle)
}

fn criterion_leakage() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let allowed: BTreeSet<MessageKind> = MessageKind::USER_OUTBOUND.into_iter().collect();
    let (mut frames, mut payloads, mut leaks, mut foreign_kinds, mut failures) = (0, 0, 0, 0, 0);
    let mut seen_kinds = BTreeSet::new();
    for i in 0..100 {
        let s = Scenario::from_toml(&leakage_scenario(i, &mut rng)).unwrap();
        let out = run_sim(&s).unwrap();
        failures += out
            .trace
            .events()
            .filter(|e| matches!(e, TraceEvent::StepFailed { .. }))
            .count();
        let mut secrets: Vec<Vec<u8>> = Vec::new();
        for u in &out.users {
            for r in u.store().iter() {
                secrets.push(r.payload.clone());
                secrets.push(r.decode_payload().unwrap().text().into_bytes());
            }
        }
        payloads += secrets.len();
        for f in out
            .captures
            .iter()
            .filter(|f| out.user_names.contains(&f.from))
        {
            frames += 1;
            seen_kinds.insert(f.kind);
            foreign_kinds += usize::from(!allowed.contains(&f.kind));
            for p in secrets.iter().filter(|p| p.len() >= 16) {
                leaks += usize::from(contains(&f.wire_bytes, p) || contains(&f.plaintext, p));
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        leaks == 0 && foreign_kinds == 0 && seen_kinds == allowed && failures == 0,
        format!(
            "100 scenarios, {frames} user frames, {payloads} payloads, {leaks} leaks, kinds {seen_kinds:?}, {foreign_kinds} outside the outbound set, {failures} failed steps; {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Federated accuracy versus centralized training.

fn examples_of(items: &[serde_json::Value]) -> Vec<Example> {
    let payloads: Vec<RecordPayload> = items
        .iter()
        .map(|v| RecordPayload::from_json(LABELED_TITLE_V1, v).unwrap())
        .collect();
    labeled_examples(&payloads, FEATURE_DIM).unwrap()
}

fn criterion_federated() -> Verdict {
    let start = Instant::now();
    let mut s = scenario("federated.toml");
    let (rounds, epochs, lr, seed) = match s
        .steps
        .iter_mut()
        .find(|st| matches!(st, Step::Train { .. }))
    {
        Some(Step::Train {
            rounds,
            epochs,
            learning_rate,
            model_seed,
            include_rogue,
            ..
        }) => {
            *include_rogue = false;
            (*rounds, *epochs, *learning_rate, *model_seed)
        }
        _ => unreachable!(),
    };
    let out = run_sim(&s).unwrap();
    let fed = &out.final_models[0].1.params;

    let mut pooled = Vec::new();
    for u in &out.users {
        let payloads: Vec<RecordPayload> = u
            .store()
            .records_of("titles")
            .map(|r| r.decode_payload().unwrap())
            .collect();
        pooled.extend(labeled_examples(&payloads, FEATURE_DIM).unwrap());
    }
    let hyper = TrainHyper {
        epochs: rounds as u32 * epochs,
        learning_rate: lr,
        seed,
    };
    let central = local_train(&pooled, &ModelParams::initial(fed.layout, seed), &hyper)
        .unwrap()
        .model_out;
    let held_out = examples_of(&labeled_title_items(1000, 999));

    let fed_train = accuracy(fed, &pooled);
    let central_train = accuracy(&central, &pooled);
    let fed_test = accuracy(fed, &held_out);
    let central_test = accuracy(&central, &held_out);
    let elapsed = start.elapsed();
    verdict(
        fed_train >= 0.90
            && fed_test >= 0.90
            && (fed_train - central_train).abs() <= 0.05
            && (fed_test - central_test).abs() <= 0.05
            && elapsed < Duration::from_secs(60),
        format!(
            "{} pooled examples; federated {fed_train:.3} train / {fed_test:.3} held-out, centralized {central_train:.3} / {central_test:.3}; {:.2}s",
            pooled.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Analytic gradients against finite differences.

fn criterion_gradients() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let (mut worst, mut checked) = (0f64, 0usize);
    for s in 0..100 {
        let layout = if s % 2 == 0 {
            ModelLayout::logistic(8)
        } else {
            ModelLayout::mlp(8, 4)
        };
        let mut p = ModelParams::initial(layout, s);
        p.weights
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-0.8..0.8));
        let batch: Vec<Example> = (0..rng.gen_range(1..=8))
            .map(|_| Example {
                features: (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                label: rng.gen_bool(0.5),
            })
            .collect();
        let (_, grad) = loss_and_grad(&p, &batch).unwrap();
        let central = |j: usize, h: f64| {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.weights[j] += h;
            b.weights[j] -= h;
            (loss(&a, &batch).unwrap() - loss(&b, &batch).unwrap()) / (2.0 * h)
        };
        for (j, g) in grad.iter().enumerate() {
            // Central difference with one Richardson step.
            let h = 1e-3;
            let fd = (4.0 * central(j, h / 2.0) - central(j, h)) / 3.0;
            worst = worst.max((g - fd).abs() / (g.abs() + 1e-8));
            checked += 1;
        }
    }
    verdict(
        worst < 1e-5,
        format!("100 samples, {checked} coordinates, max relative error {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 7. Runtime is linear in record count; the enclave never beats the host.

fn criterion_bench() -> Verdict {
    let start = Instant::now();
    let config = BenchConfig::default();
    let report = run_bench(&config).unwrap();
    let r2 = |m: BenchMode| report.fits.get(&m).map_or(f64::NAN, |f| f.r2);
    let enclave_slower = config.sizes.iter().all(|&n| {
        matches!(
            (report.median(BenchMode::Enclave, n), report.median(BenchMode::Decentralized, n)),
            (Some(e), Some(d)) if e >= d
        )
    });
    let elapsed = start.elapsed();
    verdict(
        r2(BenchMode::Centralized) >= 0.95
            && r2(BenchMode::Decentralized) >= 0.95
            && enclave_slower
            && elapsed < Duration::from_secs(300),
        format!(
            "R² centralized {:.4}, decentralized {:.4}, enclave {:.4}; enclave ≥ decentralized at every size: {enclave_slower}; {:.1}s",
            r2(BenchMode::Centralized),
            r2(BenchMode::Decentralized),
            r2(BenchMode::Enclave),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. The channel accepts nothing but fresh, untouched envelopes.

fn mutate_envelope(env: &MessageEnvelope, rng: &mut impl Rng) -> MessageEnvelope {
    let mut m = env.clone();
    match rng.gen_range(0..7) {
        0 if !m.ciphertext.is_empty() => flip_bit(&mut m.ciphertext, rng),
        0 => m.ciphertext.push(0),
        1 => flip_bit(&mut m.aead_tag, rng),
        2 => flip_bit(&mut m.sender_signature, rng),
        3 => m.counter = m.counter.wrapping_add(rng.gen_range(1..5)),
        4 => m.sender_did.0.push('x'),
        5 => m.recipient_did.0.push('x'),
        _ => {
            m.ciphertext.pop();
        }
    }
    if m == *env {
        m.ciphertext.push(0);
    }
    m
}

fn criterion_transport() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let a = AgentIdentity::from_seed(&[11; 32]);
    let b = AgentIdentity::from_seed(&[12; 32]);
    let mut ab = SecureChannel::establish(&a, &b.document()).unwrap();
    let mut ba = SecureChannel::establish(&b, &a.document()).unwrap();
    let (mut bad_accepted, mut honest_ok, mut honest_total) = (0, 0, 0);
    let mut delivered: Vec<MessageEnvelope> = Vec::new();
    let mut mutants = 0;
    while mutants < 10_000 {
        let msg = random_text(&mut rng, 0, 64).into_bytes();
        let (tx, rx) = if rng.gen_bool(0.5) {
            (&mut ab, &mut ba)
        } else {
            (&mut ba, &mut ab)
        };
        let env = tx.pack(&msg);
        for _ in 0..rng.gen_range(0..3) {
            let bad = if !delivered.is_empty() && rng.gen_bool(0.3) {
                delivered.choose(&mut rng).unwrap().clone()
            } else {
                mutate_envelope(&env, &mut rng)
            };
            bad_accepted += usize::from(rx.unpack(&bad).is_ok());
            mutants += 1;
        }
        honest_total += 1;
        honest_ok += usize::from(rx.unpack(&env).as_deref() == Ok(msg.as_slice()));
        mutants += 1;
        bad_accepted += usize::from(rx.unpack(&env).is_ok());
        delivered.push(env);
    }

    // Without loss or adversary, every simulated send is received and accepted.
    let mut s = scenario("basic.toml");
    s.sim.drop_rate = 0.0;
    s.adversary.mode = AdversaryMode::None;
    let out = run_sim(&s).unwrap();
    let sends: BTreeSet<u64> = out
        .trace
        .events()
        .filter_map(|e| match e {
            TraceEvent::Send { msg_id, .. } => Some(*msg_id),
            _ => None,
        })
        .collect();
    let received: BTreeSet<u64> = out
        .trace
        .events()
        .filter_map(|e| match e {
            TraceEvent::Receive {
                msg_id,
                accepted: true,
                ..
            } => Some(*msg_id),
            _ => None,
        })
        .collect();
    let elapsed = start.elapsed();
    verdict(
        bad_accepted == 0 && honest_ok == honest_total && sends == received && !sends.is_empty(),
        format!(
            "{mutants} mutated or replayed envelopes, {bad_accepted} accepted; honest {honest_ok}/{honest_total}; simulated sends {} received {}; {:.2}s",
            sends.len(),
            received.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Same seed, same trace, same model.

fn criterion_determinism() -> Verdict {
    let mut details = Vec::new();
    let mut pass = true;
    for name in ["basic.toml", "federated.toml", "tamper.toml"] {
        let s = scenario(name);
        let a = run_sim(&s).unwrap();
        let b = run_sim(&s).unwrap();
        let bits = |o: &datagent_core::simnet::SimOutcome| -> Vec<u64> {
            o.final_models
                .iter()
                .flat_map(|(_, m)| m.params.weights.iter().map(|w| w.to_bits()))
                .collect()
        };
        let same = a.trace.to_jsonl() == b.trace.to_jsonl()
            && bits(&a) == bits(&b)
            && a.results == b.results;
        pass &= same && !a.trace.is_empty();
        details.push(format!(
            "{name}: {} events, identical {same}",
            a.trace.len()
        ));
    }
    verdict(pass, details.join("; "))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        (
            "access control matches brute-force oracle",
            criterion_access,
        ),
        ("attestation verification rejects mutations", criterion_vrf),
        (
            "aggregation uses exactly the valid updates",
            criterion_model_integrity,
        ),
        ("no raw payload leaves a user agent", criterion_leakage),
        ("federated accuracy near centralized", criterion_federated),
        ("gradients match finite differences", criterion_gradients),
        ("runtime scales linearly", criterion_bench),
        (
            "channel rejects mutated and replayed envelopes",
            criterion_transport,
        ),
        ("simulation is deterministic", criterion_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        println!(
            "criterion {} {name}: {} ({})",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
