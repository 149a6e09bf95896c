use std::collections::{BTreeMap, BTreeSet};

use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use datagent_core::agents::AuditLog;
use datagent_core::analytics::{
    local_train, loss, ner_count, sentiment_avg, EntityDictionary, Example, FunctionOutput,
    FunctionSpec, ModelLayout, ModelParams, SentimentLexicon, TrainHyper,
};
use datagent_core::encoding::Encoder;
use datagent_core::federated::{aggregate, train_params, AggregationContext, ModelUpdate};
use datagent_core::plug::{Credential, PlugKind, PlugRegistry, SourceKeyring, SourceSpec};
use datagent_core::schema::{RecordPayload, COMMENT_V1, LABELED_TITLE_V1};
use datagent_core::simnet::{run_sim, AdversaryMode, Scenario, TraceEvent};
use datagent_core::synth::labeled_title_items;
use datagent_core::{
    content_hash, AccessPolicy, AgentIdentity, Attestation, Canonical, ComputationPolicy,
    ComputationRequest, ComputeResult, DataSelector, Did, EnclaveInstance, FunctionBundle,
    Measurement, MessageEnvelope, OperationKind, RecordLimit, RecordStore, RequestHistory,
    RequestId, SecureChannel, Timestamp,
};

const NOW: u64 = 1_700_000_000_000;

fn arb_op() -> impl Strategy<Value = OperationKind> {
    prop_oneof![
        Just(OperationKind::Compute),
        Just(OperationKind::Train),
        Just(OperationKind::Share)
    ]
}

fn arb_limit() -> impl Strategy<Value = RecordLimit> {
    prop_oneof![
        (1u32..).prop_map(RecordLimit::Bounded),
        Just(RecordLimit::Unlimited)
    ]
}

fn arb_selector() -> impl Strategy<Value = DataSelector> {
    (
        "[a-z0-9_]{1,12}",
        "[a-z.0-9]{1,16}",
        arb_limit(),
        proptest::option::of((any::<u64>(), any::<u64>())),
    )
        .prop_map(|(src, schema, limit, range)| {
            let s = DataSelector::new(src, schema, limit);
            match range {
                Some((a, b)) => s.with_time_range(Timestamp(a.min(b)), Timestamp(a.max(b))),
                None => s,
            }
        })
}

fn arb_request() -> impl Strategy<Value = ComputationRequest> {
    (
        any::<[u8; 16]>(),
        any::<u8>(),
        arb_op(),
        "[a-z.]{1,10}",
        vec(any::<u8>(), 0..40),
        arb_selector(),
        any::<u64>(),
    )
        .prop_map(|(id, who, op, f, params, sel, at)| {
            let sp = AgentIdentity::from_seed(&[who; 32]);
            ComputationRequest::unsigned(
                RequestId(id),
                sp.did().clone(),
                op,
                f,
                params,
                sel,
                Timestamp(at),
            )
            .signed(sp.signing_key())
        })
}

fn arb_hash() -> impl Strategy<Value = datagent_core::ContentHash> {
    any::<[u8; 32]>().prop_map(datagent_core::ContentHash)
}

fn arb_attestation() -> impl Strategy<Value = Attestation> {
    (
        arb_hash(),
        arb_hash(),
        arb_hash(),
        any::<[u8; 16]>(),
        vec(any::<u8>(), 64),
    )
        .prop_map(|(m, rq, rs, nonce, sig)| Attestation {
            measurement: Measurement(m),
            request_hash: rq,
            result_hash: rs,
            nonce,
            enclave_signature: sig.try_into().unwrap(),
        })
}

fn arb_params() -> impl Strategy<Value = ModelParams> {
    (1u32..6, proptest::option::of(1u32..4)).prop_flat_map(|(d, h)| {
        let layout = ModelLayout {
            feature_dim: d,
            hidden_dim: h,
        };
        vec(-1e6f64..1e6, layout.param_count())
            .prop_map(move |weights| ModelParams { layout, weights })
    })
}

fn round_trips<T: Canonical + PartialEq + std::fmt::Debug>(v: &T) -> Result<(), TestCaseError> {
    let bytes = v.to_canonical_bytes();
    prop_assert_eq!(&T::from_canonical_bytes(&bytes).unwrap(), v);
    Ok(())
}

proptest! {
    #[test]
    fn requests_round_trip(re in arb_request()) {
        round_trips(&re)?;
    }

    #[test]
    fn results_and_attestations_round_trip(
        id in any::<[u8; 16]>(),
        payload in vec(any::<u8>(), 0..64),
        n in any::<u64>(),
        att in arb_attestation(),
    ) {
        round_trips(&ComputeResult { request_id: RequestId(id), payload, record_count: n })?;
        round_trips(&att)?;
    }

    #[test]
    fn envelopes_round_trip(
        counter in any::<u64>(),
        ct in vec(any::<u8>(), 0..64),
        tag in any::<[u8; 16]>(),
        sig in vec(any::<u8>(), 64),
    ) {
        round_trips(&MessageEnvelope {
            sender_did: Did("did:dga:zA".into()),
            recipient_did: Did("did:dga:zB".into()),
            counter,
            ciphertext: ct,
            aead_tag: tag,
            sender_signature: sig.try_into().unwrap(),
        })?;
    }

    #[test]
    fn params_and_payloads_round_trip(
        p in arb_params(),
        title in ".{0,30}",
        body in ".{0,30}",
        liked in any::<bool>(),
        counts in proptest::collection::btree_map("[a-z]{1,8}", any::<u64>(), 0..6),
    ) {
        round_trips(&p)?;
        round_trips(&RecordPayload::Post { title: title.clone(), body, liked })?;
        round_trips(&RecordPayload::LabeledTitle { title, engaged: liked })?;
        round_trips(&FunctionOutput::EntityCounts(counts))?;
    }

    #[test]
    fn policies_round_trip(fs in proptest::collection::btree_set("[a-z]{1,6}", 1..5), m in 1u32.., d in 1u32..) {
        round_trips(&ComputationPolicy::new(fs, m, d))?;
    }

    /// Equal values built along different paths encode identically.
    #[test]
    fn encoding_is_canonical(entries in proptest::collection::btree_map("[a-z]{1,8}", any::<u32>(), 0..10), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled: Vec<_> = entries.iter().map(|(k, v)| (k.clone(), *v)).collect();
        shuffled.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
        let rebuilt: BTreeMap<String, u32> = shuffled.iter().cloned().collect();
        prop_assert_eq!(entries.to_canonical_bytes(), rebuilt.to_canonical_bytes());

        let names: Vec<String> = shuffled.iter().map(|(k, _)| k.clone()).collect();
        if !names.is_empty() {
            let mut reversed = names.clone();
            reversed.reverse();
            prop_assert_eq!(
                ComputationPolicy::new(names, 5, 5).to_canonical_bytes(),
                ComputationPolicy::new(reversed, 5, 5).to_canonical_bytes()
            );
        }
    }

    #[test]
    fn unsorted_sets_are_rejected(a in "[a-z]{1,8}", b in "[a-z]{1,8}") {
        prop_assume!(a != b);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let mut enc = Encoder::new();
        enc.u32(2).str(&hi).str(&lo);
        prop_assert!(BTreeSet::<String>::from_canonical_bytes(enc.as_slice()).is_err());
        let mut dup = Encoder::new();
        dup.u32(2).str(&lo).str(&lo);
        prop_assert!(BTreeSet::<String>::from_canonical_bytes(dup.as_slice()).is_err());
        let mut ok = Encoder::new();
        ok.u32(2).str(&lo).str(&hi);
        prop_assert_eq!(BTreeSet::<String>::from_canonical_bytes(ok.as_slice()).unwrap().len(), 2);
    }

    #[test]
    fn hashes_match_an_independent_sha256(data in vec(any::<u8>(), 0..200)) {
        let want: [u8; 32] = Sha256::digest(&data).into();
        prop_assert_eq!(content_hash(&data).0, want);
    }

    #[test]
    fn did_is_derived_from_the_signing_key(seed in any::<[u8; 32]>()) {
        let id = AgentIdentity::from_seed(&seed);
        let pk = id.verifying_key().to_bytes();
        let digest = Sha256::digest(pk);
        let want = format!("did:dga:z{}", bs58::encode(&digest[..16]).into_string());
        prop_assert_eq!(id.did().as_str(), want.as_str());
        let doc = id.document();
        prop_assert!(doc.is_valid());
        let bytes = doc.to_canonical_bytes();
        prop_assert!(!bytes.windows(32).any(|w| w == seed));
    }
}

// ---------------------------------------------------------------------------
// Channel

fn pair(a: u8, b: u8) -> (SecureChannel, SecureChannel) {
    let ia = AgentIdentity::from_seed(&[a; 32]);
    let ib = AgentIdentity::from_seed(&[b; 32]);
    (
        SecureChannel::establish(&ia, &ib.document()).unwrap(),
        SecureChannel::establish(&ib, &ia.document()).unwrap(),
    )
}

proptest! {
    #[test]
    fn ciphertext_hides_the_plaintext(m in vec(any::<u8>(), 16..200)) {
        let (mut a, _) = pair(1, 2);
        let env = a.pack(&m);
        let bytes = env.to_canonical_bytes();
        prop_assert!(!bytes.windows(m.len()).any(|w| w == m.as_slice()));
    }

    #[test]
    fn mutated_envelopes_are_rejected(m in vec(any::<u8>(), 1..64), field in 0usize..6, pos in any::<usize>(), bit in 0u8..8) {
        let (mut a, mut b) = pair(3, 4);
        let mut env = a.pack(&m);
        let flip = |bytes: &mut [u8]| { let i = pos % bytes.len(); bytes[i] ^= 1 << bit; };
        match field {
            0 => flip(&mut env.ciphertext),
            1 => flip(&mut env.aead_tag),
            2 => flip(&mut env.sender_signature),
            3 => env.counter ^= 1 << (bit + 1),
            4 => env.sender_did.0.push('1'),
            _ => env.recipient_did.0.push('1'),
        }
        prop_assert!(b.unpack(&env).is_err());
    }

    /// Delivering any order of a recorded sequence with one duplicate never
    /// accepts the duplicate.
    #[test]
    fn duplicates_are_rejected(n in 1usize..8, dup in any::<prop::sample::Index>(), order in any::<u64>(), at in any::<prop::sample::Index>()) {
        use rand::seq::SliceRandom;
        let (mut a, mut b) = pair(5, 6);
        let envs: Vec<MessageEnvelope> = (0..n).map(|i| a.pack(&[i as u8; 20])).collect();
        let mut seq: Vec<usize> = (0..n).collect();
        seq.shuffle(&mut ChaCha20Rng::seed_from_u64(order));
        let d = dup.index(n);
        let first = seq.iter().position(|&i| i == d).unwrap();
        let insert_at = first + 1 + at.index(seq.len() - first);
        seq.insert(insert_at, d);
        let mut accepted = BTreeSet::new();
        for (k, &i) in seq.iter().enumerate() {
            let ok = b.unpack(&envs[i]).is_ok();
            if k == insert_at {
                prop_assert!(!ok);
            }
            if ok {
                prop_assert!(accepted.insert(i));
            }
        }
        // In-order delivery without the duplicate accepts everything.
        let (mut a, mut b) = pair(5, 6);
        for i in 0..n {
            let env = a.pack(&[i as u8; 20]);
            prop_assert!(b.unpack(&env).is_ok());
        }
    }
}

// ---------------------------------------------------------------------------
// Access control

fn signed_request(
    sp: &AgentIdentity,
    op: OperationKind,
    f: &str,
    source: &str,
    limit: RecordLimit,
    id: [u8; 16],
) -> ComputationRequest {
    ComputationRequest::unsigned(
        RequestId(id),
        sp.did().clone(),
        op,
        f,
        Vec::new(),
        DataSelector::new(source, COMMENT_V1, limit),
        Timestamp(NOW),
    )
    .signed(sp.signing_key())
}

proptest! {
    #[test]
    fn no_grant_means_no_permit(
        who in 0u8..4, op in arb_op(), f in "f[0-3]", source in "s[0-3]", limit in arb_limit(), id in any::<[u8; 16]>(),
        caps in vec((1u32..100, 1u32..10), 4),
    ) {
        let sp = AgentIdentity::from_seed(&[who; 32]);
        let mut policy = AccessPolicy::new(Did("did:dga:zOwner".into()));
        for (i, (m, d)) in caps.iter().enumerate() {
            policy.set_policy(format!("s{i}"), ComputationPolicy::new(["f0", "f1", "f2", "f3"], *m, *d)).unwrap();
        }
        let re = signed_request(&sp, op, &f, &source, limit, id);
        let d1 = policy.allow(&re, Some(&sp.verifying_key()), Timestamp(NOW), &RequestHistory::new());
        let d2 = policy.allow(&re, Some(&sp.verifying_key()), Timestamp(NOW), &RequestHistory::new());
        prop_assert!(!d1.is_permit());
        prop_assert_eq!(d1, d2);
    }

    #[test]
    fn revocation_is_final(op in prop_oneof![Just(OperationKind::Compute), Just(OperationKind::Train)], n in 1u32..50, id in any::<[u8; 16]>()) {
        let sp = AgentIdentity::from_seed(&[7; 32]);
        let mut policy = AccessPolicy::new(Did("did:dga:zOwner".into()));
        policy.set_policy("s", ComputationPolicy::new(["f"], 50, 10)).unwrap();
        policy.grant(sp.did().clone(), "s", op, Timestamp(NOW - 1), None);
        let re = signed_request(&sp, op, "f", "s", RecordLimit::Bounded(n), id);
        let h = RequestHistory::new();
        prop_assert!(policy.allow(&re, Some(&sp.verifying_key()), Timestamp(NOW), &h).is_permit());
        let rev = policy.revision();
        policy.revoke(sp.did(), "s", op).unwrap();
        prop_assert!(policy.revision() > rev);
        for t in [NOW, NOW + 1, NOW + 86_400_000] {
            prop_assert!(!policy.allow(&re, Some(&sp.verifying_key()), Timestamp(t), &h).is_permit());
        }
    }
}

// ---------------------------------------------------------------------------
// Store

fn comment_source(seed: u8, texts: &[String]) -> (PlugRegistry, RecordStore) {
    let mut plugs = PlugRegistry::new();
    let mut policy = AccessPolicy::new(Did("did:dga:zOwner".into()));
    plugs
        .register_source(
            SourceSpec {
                source_id: "c".into(),
                schema_tag: COMMENT_V1.into(),
                plug_kind: PlugKind::FileDrop,
                initial_policy: ComputationPolicy::new(["f"], 100, 100),
                signer_seed: Some([seed; 32]),
            },
            &Credential("tok".into()),
            &mut policy,
        )
        .unwrap();
    let items: Vec<serde_json::Value> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| serde_json::json!({ "text": t, "collected_at": NOW + i as u64 * 1000 }))
        .collect();
    let mut store = RecordStore::in_memory();
    plugs
        .ingest(&mut store, "c", &items, Timestamp(NOW))
        .unwrap();
    (plugs, store)
}

proptest! {
    #[test]
    fn queries_are_signed_and_deterministic(
        texts in vec("[a-z ]{0,20}", 0..30),
        limit in 1u32..40,
        range in proptest::option::of((0u64..40, 0u64..40)),
    ) {
        let (plugs, store) = comment_source(9, &texts);
        let mut sel = DataSelector::new("c", COMMENT_V1, RecordLimit::Bounded(limit));
        if let Some((a, b)) = range {
            sel = sel.with_time_range(Timestamp(NOW + a.min(b) * 1000), Timestamp(NOW + a.max(b) * 1000));
        }
        let got = store.query(&sel);
        let key = plugs.source_key("c").unwrap();
        prop_assert!(got.iter().all(|r| r.verify(&key)));
        prop_assert!(got.len() <= limit as usize);
        prop_assert!(got.iter().all(|r| sel.admits(r.collected_at)));
        prop_assert_eq!(got, store.query(&sel));
    }
}

// ---------------------------------------------------------------------------
// Text analytics against brute-force scans

fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

const WORDS: [&str; 10] = [
    "acme",
    "globex",
    "good",
    "bad",
    "stark",
    "industries",
    "the",
    "x1",
    "great",
    "awful",
];

fn arb_corpus() -> impl Strategy<Value = Vec<String>> {
    let word = (
        0usize..WORDS.len(),
        any::<bool>(),
        prop_oneof![Just(" "), Just(", "), Just("!"), Just("-"), Just("  ")],
    );
    vec(vec(word, 0..12), 0..6).prop_map(|texts| {
        texts
            .into_iter()
            .map(|words| {
                words
                    .into_iter()
                    .map(|(w, upper, sep)| {
                        let w = if upper {
                            WORDS[w].to_uppercase()
                        } else {
                            WORDS[w].to_owned()
                        };
                        format!("{w}{sep}")
                    })
                    .collect()
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ner_matches_a_brute_force_scan(
        texts in arb_corpus(),
        picks in proptest::collection::btree_set(0usize..WORDS.len(), 1..4),
        phrase in any::<bool>(),
    ) {
        let mut entities: Vec<String> = picks.iter().map(|&i| WORDS[i].to_owned()).collect();
        if phrase {
            entities.push("stark industries".into());
        }
        let dict = EntityDictionary::new(&entities).unwrap();
        let got = ner_count(&texts, &dict);

        let mut want = BTreeMap::new();
        for e in &entities {
            let pat: Vec<&str> = e.split(' ').collect();
            let mut n = 0u64;
            for t in &texts {
                let toks = oracle_tokens(t);
                for i in 0..toks.len() {
                    if i + pat.len() <= toks.len() && (0..pat.len()).all(|k| toks[i + k] == pat[k]) {
                        n += 1;
                    }
                }
            }
            if n > 0 {
                want.insert(e.clone(), n);
            }
        }
        prop_assert_eq!(got, want);
    }

    #[test]
    fn sentiment_matches_a_brute_force_scan(
        texts in arb_corpus(),
        scores in vec(-1.0f64..=1.0, WORDS.len()),
        used in proptest::collection::btree_set(0usize..WORDS.len(), 0..5),
    ) {
        let lex = SentimentLexicon::new(used.iter().map(|&i| (WORDS[i], scores[i]))).unwrap();
        let got = sentiment_avg(&texts, &lex);
        let (mut sum, mut n) = (0.0, 0u64);
        for t in &texts {
            for tok in oracle_tokens(t) {
                if let Some(i) = used.iter().find(|&&i| WORDS[i] == tok) {
                    sum += scores[*i];
                    n += 1;
                }
            }
        }
        prop_assert_eq!(got.matched_tokens, n);
        let mean = if n == 0 { 0.0 } else { sum / n as f64 };
        prop_assert!((got.mean - mean).abs() <= 1e-9);
    }
}

// ---------------------------------------------------------------------------
// Models

proptest! {
    #[test]
    fn small_step_descent_never_increases_loss(
        points in vec((-1.0f64..1.0, -1.0f64..1.0), 2..20),
        hidden in proptest::option::of(1u32..4),
        seed in any::<u64>(),
    ) {
        // Separable: the label is the sign of the first feature.
        let batch: Vec<Example> = points
            .iter()
            .map(|&(a, b)| Example { features: vec![a, b], label: a > 0.0 })
            .collect();
        let mut p = ModelParams::initial(ModelLayout { feature_dim: 2, hidden_dim: hidden }, seed);
        let step = TrainHyper { epochs: 1, learning_rate: 1e-3, seed: 0 };
        let mut prev = loss(&p, &batch).unwrap();
        for _ in 0..50 {
            p = local_train(&batch, &p, &step).unwrap().model_out;
            let l = loss(&p, &batch).unwrap();
            prop_assert!(l <= prev + 1e-15, "{} > {}", l, prev);
            prev = l;
        }
    }
}

fn training_host(
    i: u8,
    layout: ModelLayout,
    sp: &Did,
) -> (EnclaveInstance, PlugRegistry, RecordStore) {
    let mut enclave = EnclaveInstance::launch(&[i; 32]);
    enclave
        .load_bundle(&FunctionBundle::new(
            "t",
            &FunctionSpec::Train { layout },
            sp.clone(),
        ))
        .unwrap();
    let mut plugs = PlugRegistry::new();
    let mut policy = AccessPolicy::new(Did("did:dga:zOwner".into()));
    plugs
        .register_source(
            SourceSpec {
                source_id: "titles".into(),
                schema_tag: LABELED_TITLE_V1.into(),
                plug_kind: PlugKind::FileDrop,
                initial_policy: ComputationPolicy::new(["t"], 100, 100),
                signer_seed: Some([i; 32]),
            },
            &Credential("tok".into()),
            &mut policy,
        )
        .unwrap();
    let mut store = RecordStore::in_memory();
    plugs
        .ingest(
            &mut store,
            "titles",
            &labeled_title_items(20, u64::from(i)),
            Timestamp(NOW),
        )
        .unwrap();
    (enclave, plugs, store)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Every aggregated coordinate lies within the range of the accepted updates.
    #[test]
    fn aggregate_stays_within_update_bounds(
        agents in 1usize..5,
        sizes in vec(1u32..20, 5),
        epochs in vec(0u32..4, 5),
        seed in any::<u64>(),
    ) {
        let sp = AgentIdentity::from_seed(&[40; 32]);
        let layout = ModelLayout::logistic(8);
        let template = ModelParams::initial(layout, seed);
        let mut requests = BTreeMap::new();
        let mut keys = BTreeMap::new();
        let mut updates = Vec::new();
        let mut measurement = None;
        for i in 0..agents {
            let (enclave, plugs, store) = training_host(i as u8 + 50, layout, sp.did());
            let did = Did(format!("did:dga:zAgg{i}"));
            let hyper = TrainHyper { epochs: epochs[i], learning_rate: 0.5, seed };
            let re = ComputationRequest::unsigned(
                RequestId([i as u8; 16]),
                sp.did().clone(),
                OperationKind::Train,
                "t",
                train_params(3, &template, &hyper),
                DataSelector::new("titles", LABELED_TITLE_V1, RecordLimit::Bounded(sizes[i])),
                Timestamp(NOW),
            )
            .signed(sp.signing_key());
            let (result, attestation) = enclave.execute(&re, &store.query(&re.selector), &plugs).unwrap();
            measurement = enclave.measurement_of("t");
            keys.insert(did.clone(), enclave.attestation_public_key());
            requests.insert(re.request_id, (did.clone(), re));
            updates.push(ModelUpdate { round: 3, agent_did: did, result, attestation });
        }
        let ctx = AggregationContext {
            round: 3,
            expected_measurement: measurement.unwrap(),
            requests: &requests,
            enclave_keys: &keys,
            template: &template,
            min_participants: 1,
        };
        let agg = aggregate(&updates, &ctx).unwrap();
        prop_assert_eq!(agg.accepted.len(), agents);
        for (j, w) in agg.params.weights.iter().enumerate() {
            let col = agg.accepted.iter().map(|(_, o)| o.model_out.weights[j]);
            let lo = col.clone().fold(f64::INFINITY, f64::min);
            let hi = col.fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo - 1e-12 <= *w && *w <= hi + 1e-12);
        }
    }

    /// Executing the same request twice yields the same result; only the
    /// attestation nonce differs.
    #[test]
    fn execution_is_deterministic(n in 1u32..20, seed in any::<u64>()) {
        let sp = AgentIdentity::from_seed(&[41; 32]);
        let layout = ModelLayout::logistic(8);
        let (enclave, plugs, store) = training_host(60, layout, sp.did());
        let (other, _, _) = training_host(61, layout, sp.did());
        let hyper = TrainHyper { epochs: 2, learning_rate: 0.5, seed };
        let re = ComputationRequest::unsigned(
            RequestId([1; 16]),
            sp.did().clone(),
            OperationKind::Train,
            "t",
            train_params(1, &ModelParams::initial(layout, seed), &hyper),
            DataSelector::new("titles", LABELED_TITLE_V1, RecordLimit::Bounded(n)),
            Timestamp(NOW),
        )
        .signed(sp.signing_key());
        let records = store.query(&re.selector);
        let (r1, a1) = enclave.execute(&re, &records, &plugs).unwrap();
        let (r2, a2) = enclave.execute(&re, &records, &plugs).unwrap();
        prop_assert_eq!(r1.hash(), r2.hash());
        prop_assert_eq!(a1.result_hash, a2.result_hash);
        prop_assert_ne!(a1.nonce, a2.nonce);
        prop_assert_eq!(enclave.measurement_of("t"), other.measurement_of("t"));
    }
}

// ---------------------------------------------------------------------------
// Audit

proptest! {
    #[test]
    fn any_single_entry_edit_breaks_the_chain(n in 1usize..10, which in any::<prop::sample::Index>(), field in 0usize..5) {
        let sp = AgentIdentity::from_seed(&[42; 32]);
        let mut log = AuditLog::new();
        for i in 0..n {
            let re = signed_request(&sp, OperationKind::Compute, "f", "s", RecordLimit::Bounded(1), [i as u8; 16]);
            log.append(Timestamp(NOW + i as u64), sp.did().clone(), Some(&re), datagent_core::agents::AuditOutcome::Permit, None);
        }
        prop_assert!(log.verify().is_ok());
        let mut entries: Vec<serde_json::Value> =
            log.to_jsonl().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        let e = &mut entries[which.index(n)];
        match field {
            0 => e["at"] = serde_json::json!(0),
            1 => e["function_id"] = serde_json::json!("g"),
            2 => e["outcome"] = serde_json::json!({ "Deny": "NoGrant" }),
            3 => e["peer"] = serde_json::json!("did:dga:zSomeoneElse"),
            _ => e["source_id"] = serde_json::json!("t"),
        }
        let text: String = entries.iter().map(|v| format!("{v}\n")).collect();
        let edited = AuditLog::from_jsonl(&text).unwrap();
        prop_assert!(edited.verify().is_err());
    }
}

fn basic() -> Scenario {
    Scenario::load(format!(
        "{}/../../scenarios/basic.toml",
        env!("CARGO_MANIFEST_DIR")
    ))
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Every envelope a user agent unpacks leaves exactly one audit entry.
    #[test]
    fn audit_is_complete_under_any_adversary(
        seed in any::<u64>(),
        mode in prop_oneof![
            Just(AdversaryMode::None),
            Just(AdversaryMode::TamperEnvelope),
            Just(AdversaryMode::ReplayEnvelope),
            Just(AdversaryMode::InjectForgedRequest),
            Just(AdversaryMode::TamperResult),
            Just(AdversaryMode::ForgeAttestation),
        ],
        probability in 0.0f64..=1.0,
    ) {
        let mut s = basic();
        s.sim.seed = seed;
        s.adversary.mode = mode;
        s.adversary.probability = probability;
        let out = run_sim(&s).unwrap();
        for (name, user) in out.user_names.iter().zip(&out.users) {
            let delivered = out
                .trace
                .events()
                .filter(|e| matches!(e, TraceEvent::Receive { node, .. } if node == name))
                .count();
            prop_assert_eq!(user.audit().len(), delivered, "{}", name);
            prop_assert!(user.audit().verify().is_ok());
        }
    }
}
