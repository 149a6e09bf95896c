//! On-disk state of a user agent or a service provider.
//!
//! Each lives in a directory holding a TOML config whose paths are relative
//! to that directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use datagent_core::agents::{AuditLog, SpController, SpSession, UserController, UserSession};
use datagent_core::encoding::Canonical;
use datagent_core::identity::{AgentIdentity, DidDocument};
use datagent_core::plug::{PlugRegistry, SourceState};
use datagent_core::store::RecordStore;
use datagent_core::types::content_hash;
use datagent_core::{AccessPolicy, EnclaveInstance, FunctionBundle};

pub const AGENT_CONFIG: &str = "agent.toml";
pub const SP_CONFIG: &str = "sp.toml";

pub fn parse_seed(hex_seed: &str) -> Result<[u8; 32]> {
    hex::decode(hex_seed.trim())
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| anyhow!("seed must be 64 hex characters"))
}

pub fn random_seed() -> [u8; 32] {
    use rand::RngCore;
    let mut s = [0u8; 32];
    rand::rngs::OsRng.fill_bytes(&mut s);
    s
}

pub fn read_seed(path: &Path) -> Result<[u8; 32]> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_seed(&text).with_context(|| format!("in {}", path.display()))
}

pub fn write_seed(path: &Path, seed: &[u8; 32]) -> Result<()> {
    fs::write(path, format!("{}\n", hex::encode(seed)))
        .with_context(|| format!("writing {}", path.display()))
}

/// The enclave seed is bound to the agent's identity seed.
pub fn enclave_seed(identity_seed: &[u8; 32]) -> [u8; 32] {
    let mut buf = b"datagent/cli/enclave".to_vec();
    buf.extend_from_slice(identity_seed);
    content_hash(&buf).0
}

pub fn read_canonical<T: Canonical>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    T::from_canonical_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))
}

/// Writes `<dir>/<file_name>` and a `.hex` sidecar.
pub fn write_doc(dir: &Path, doc: &DidDocument) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(doc.file_name());
    let bytes = doc.to_canonical_bytes();
    fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    fs::write(
        path.with_extension("diddoc.hex"),
        format!("{}\n", hex::encode(&bytes)),
    )?;
    Ok(path)
}

pub fn read_doc(path: &Path) -> Result<DidDocument> {
    let doc: DidDocument = read_canonical(path)?;
    doc.verify()
        .with_context(|| format!("verifying {}", path.display()))?;
    Ok(doc)
}

fn read_json<T: for<'de> Deserialize<'de> + Default>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Ok(T::default());
    }
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

/// Copies `src` into `<base>/<sub>/` and returns the relative path.
fn adopt(base: &Path, sub: &str, src: &Path) -> Result<PathBuf> {
    let name = src
        .file_name()
        .ok_or_else(|| anyhow!("{} has no file name", src.display()))?;
    fs::create_dir_all(base.join(sub))?;
    let rel = Path::new(sub).join(name);
    let dst = base.join(&rel);
    if fs::canonicalize(src).ok() != fs::canonicalize(&dst).ok() {
        fs::copy(src, &dst).with_context(|| format!("copying {}", src.display()))?;
    }
    Ok(rel)
}

fn push_unique(list: &mut Vec<PathBuf>, rel: PathBuf) {
    if !list.contains(&rel) {
        list.push(rel);
    }
}

fn load_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn save_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, toml::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn base_of(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub identity: PathBuf,
    pub policy: PathBuf,
    pub store: PathBuf,
    pub plugs: PathBuf,
    pub session: PathBuf,
    pub audit: PathBuf,
    #[serde(default)]
    pub bundles: Vec<PathBuf>,
    #[serde(default)]
    pub peers: Vec<PathBuf>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            identity: "identity.key".into(),
            policy: "policy.toml".into(),
            store: "store.log".into(),
            plugs: "plugs.json".into(),
            session: "session.json".into(),
            audit: "audit.jsonl".into(),
            bundles: Vec::new(),
            peers: Vec::new(),
        }
    }
}

/// A loaded user agent plus where it came from.
pub struct AgentHome {
    pub config_path: PathBuf,
    pub base: PathBuf,
    pub config: AgentConfig,
    pub agent: UserController,
}

impl AgentHome {
    /// Creates a fresh agent directory.
    pub fn init(dir: &Path, seed: [u8; 32]) -> Result<Self> {
        let config_path = dir.join(AGENT_CONFIG);
        if config_path.exists() {
            bail!("{} already exists", config_path.display());
        }
        fs::create_dir_all(dir)?;
        let config = AgentConfig::default();
        write_seed(&dir.join(&config.identity), &seed)?;
        let identity = AgentIdentity::from_seed(&seed);
        fs::write(
            dir.join(&config.policy),
            AccessPolicy::new(identity.did().clone()).to_toml(),
        )?;
        save_toml(&config_path, &config)?;
        Self::open(&config_path)
    }

    pub fn open(config_path: &Path) -> Result<Self> {
        let config: AgentConfig = load_toml(config_path)?;
        let base = base_of(config_path);
        let seed = read_seed(&base.join(&config.identity))?;
        let identity = AgentIdentity::from_seed(&seed);
        let policy_path = base.join(&config.policy);
        let policy_text = fs::read_to_string(&policy_path)
            .with_context(|| format!("reading {}", policy_path.display()))?;
        let policy = AccessPolicy::from_toml(&policy_text)
            .with_context(|| format!("in {}", policy_path.display()))?;
        if policy.owner_did() != identity.did() {
            bail!(
                "policy owner {} is not this agent ({})",
                policy.owner_did(),
                identity.did()
            );
        }
        let sources: Vec<SourceState> = read_json(&base.join(&config.plugs))?;
        let plugs = PlugRegistry::import_state(sources)?;
        let store = RecordStore::open(base.join(&config.store))?;
        let enclave = EnclaveInstance::launch(&enclave_seed(&seed));
        let mut agent = UserController::from_parts(identity, policy, plugs, store, enclave);
        for rel in &config.bundles {
            let bundle: FunctionBundle = read_canonical(&base.join(rel))?;
            agent
                .load_bundle(&bundle)
                .with_context(|| format!("loading {}", rel.display()))?;
        }
        for rel in &config.peers {
            agent.connect(&read_doc(&base.join(rel))?)?;
        }
        let session: UserSession = read_json(&base.join(&config.session))?;
        agent.import_session(&session).map_err(|e| anyhow!(e))?;
        let audit_path = base.join(&config.audit);
        if audit_path.exists() {
            let log = AuditLog::from_jsonl(&fs::read_to_string(&audit_path)?)
                .with_context(|| format!("parsing {}", audit_path.display()))?;
            agent.set_audit(log);
        }
        Ok(Self {
            config_path: config_path.to_path_buf(),
            base,
            config,
            agent,
        })
    }

    pub fn save(&self) -> Result<()> {
        fs::write(
            self.base.join(&self.config.policy),
            self.agent.policy().to_toml(),
        )?;
        write_json(
            &self.base.join(&self.config.plugs),
            &self.agent.plugs().export_state(),
        )?;
        write_json(
            &self.base.join(&self.config.session),
            &self.agent.export_session(),
        )?;
        fs::write(
            self.base.join(&self.config.audit),
            self.agent.audit().to_jsonl(),
        )?;
        save_toml(&self.config_path, &self.config)
    }

    pub fn add_peer(&mut self, doc_path: &Path) -> Result<DidDocument> {
        let doc = read_doc(doc_path)?;
        self.agent.connect(&doc)?;
        let rel = adopt(&self.base, "peers", doc_path)?;
        push_unique(&mut self.config.peers, rel);
        Ok(doc)
    }

    pub fn add_bundle(&mut self, bundle_path: &Path) -> Result<FunctionBundle> {
        let bundle: FunctionBundle = read_canonical(bundle_path)?;
        self.agent.load_bundle(&bundle)?;
        let rel = adopt(&self.base, "bundles", bundle_path)?;
        push_unique(&mut self.config.bundles, rel);
        Ok(bundle)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpConfig {
    pub identity: PathBuf,
    pub session: PathBuf,
    #[serde(default)]
    pub bundles: Vec<PathBuf>,
    #[serde(default)]
    pub peers: Vec<PathBuf>,
}

impl Default for SpConfig {
    fn default() -> Self {
        Self {
            identity: "identity.key".into(),
            session: "session.json".into(),
            bundles: Vec::new(),
            peers: Vec::new(),
        }
    }
}

pub struct SpHome {
    pub config_path: PathBuf,
    pub base: PathBuf,
    pub config: SpConfig,
    pub sp: SpController,
}

impl SpHome {
    pub fn init(dir: &Path, seed: [u8; 32]) -> Result<Self> {
        let config_path = dir.join(SP_CONFIG);
        if config_path.exists() {
            bail!("{} already exists", config_path.display());
        }
        fs::create_dir_all(dir)?;
        let config = SpConfig::default();
        write_seed(&dir.join(&config.identity), &seed)?;
        save_toml(&config_path, &config)?;
        Self::open(&config_path)
    }

    pub fn open(config_path: &Path) -> Result<Self> {
        let config: SpConfig = load_toml(config_path)?;
        let base = base_of(config_path);
        let seed = read_seed(&base.join(&config.identity))?;
        // Request ids must never repeat across invocations.
        let request_seed = u64::from_le_bytes(random_seed()[..8].try_into().expect("8 bytes"));
        let mut sp = SpController::new(AgentIdentity::from_seed(&seed), request_seed);
        for rel in &config.bundles {
            sp.register_bundle(read_canonical(&base.join(rel))?);
        }
        for rel in &config.peers {
            sp.connect(&read_doc(&base.join(rel))?)?;
        }
        let session: SpSession = read_json(&base.join(&config.session))?;
        sp.import_session(&session).map_err(|e| anyhow!(e))?;
        Ok(Self {
            config_path: config_path.to_path_buf(),
            base,
            config,
            sp,
        })
    }

    pub fn save(&self) -> Result<()> {
        write_json(
            &self.base.join(&self.config.session),
            &self.sp.export_session(),
        )?;
        save_toml(&self.config_path, &self.config)
    }

    pub fn add_peer(&mut self, doc_path: &Path) -> Result<DidDocument> {
        let doc = read_doc(doc_path)?;
        self.sp.connect(&doc)?;
        let rel = adopt(&self.base, "peers", doc_path)?;
        push_unique(&mut self.config.peers, rel);
        Ok(doc)
    }

    pub fn add_bundle(&mut self, bundle_path: &Path) -> Result<FunctionBundle> {
        let bundle: FunctionBundle = read_canonical(bundle_path)?;
        self.sp.register_bundle(bundle.clone());
        let rel = adopt(&self.base, "bundles", bundle_path)?;
        push_unique(&mut self.config.bundles, rel);
        Ok(bundle)
    }
}
