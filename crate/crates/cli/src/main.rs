//! `datagent`: operator front end for user agents, providers, scenarios and
//! the scaling benchmark.

mod commands;
mod home;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use datagent_core::bench::BenchMode;
use datagent_core::plug::PlugKind;
use datagent_core::simnet::{AdversaryMode, SecurityProperty};
use datagent_core::types::OperationKind;

#[derive(Parser, Debug)]
#[command(name = "datagent", version, about = "User-controlled data agents")]
pub struct Cli {
    /// Output style; `records` prints one JSON object per line.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    /// Current time in milliseconds since the Unix epoch (defaults to the system clock).
    #[arg(long, global = true)]
    pub now: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Records,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Create an identity and write its DID document.
    Keygen(KeygenArgs),
    /// Edit or inspect an access policy file.
    #[command(subcommand)]
    Policy(PolicyCmd),
    /// Register data sources and ingest records.
    #[command(subcommand)]
    Plug(PlugCmd),
    /// Build function bundles.
    #[command(subcommand)]
    Bundle(BundleCmd),
    /// Operate a user agent.
    #[command(subcommand)]
    Agent(AgentCmd),
    /// Operate a service provider.
    #[command(subcommand)]
    Sp(SpCmd),
    /// Run simulated scenarios and check security properties.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Measure runtime against record count.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct KeygenArgs {
    /// 32-byte seed as hex; random when absent.
    #[arg(long)]
    pub seed: Option<String>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GrantKey {
    /// Policy file (an agent's `policy.toml`).
    #[arg(long)]
    pub policy: PathBuf,
    /// Service provider DID.
    #[arg(long)]
    pub sp: String,
    #[arg(long)]
    pub source: String,
    #[arg(long, value_parser = parse_op)]
    pub op: OperationKind,
}

#[derive(Subcommand, Debug)]
pub enum PolicyCmd {
    /// List grants and per-source computation policies.
    Show {
        #[arg(long)]
        policy: PathBuf,
    },
    /// Grant an operation on a source to a provider.
    Grant {
        #[command(flatten)]
        key: GrantKey,
        /// Expiry in milliseconds since the Unix epoch.
        #[arg(long)]
        expires_at: Option<u64>,
    },
    /// Withdraw a grant.
    Revoke {
        #[command(flatten)]
        key: GrantKey,
    },
    /// Replace the computation policy of a source.
    Set {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        source: String,
        #[command(flatten)]
        limits: Limits,
    },
}

#[derive(Args, Debug)]
pub struct Limits {
    /// Function ids the source may be used with, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub functions: Vec<String>,
    #[arg(long, default_value_t = 10_000)]
    pub max_records: u32,
    #[arg(long, default_value_t = 1_000)]
    pub max_per_day: u32,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    FileDrop,
    MockApi,
}

impl From<KindArg> for PlugKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::FileDrop => PlugKind::FileDrop,
            KindArg::MockApi => PlugKind::MockApi,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum PlugCmd {
    /// Register a data source with an agent.
    Add {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        source: String,
        /// Record schema (post.v1, comment.v1, labeled_title.v1).
        #[arg(long)]
        schema: String,
        #[arg(long, value_enum, default_value_t = KindArg::FileDrop)]
        kind: KindArg,
        #[arg(long)]
        credential: String,
        #[command(flatten)]
        limits: Limits,
    },
    /// Ingest a line-delimited JSON file into a source.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        source: String,
        file: PathBuf,
    },
    /// List registered sources with record counts and chain status.
    List {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum BundleCmd {
    /// Build a bundle from a function definition file.
    Create {
        /// TOML with `id`, `family` and the family's fields.
        #[arg(long)]
        def: PathBuf,
        /// DID of the providing service provider.
        #[arg(long)]
        provider: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum AgentCmd {
    /// Create an agent directory.
    Init {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        seed: Option<String>,
    },
    /// Write the agent's DID document (with enclave endorsement).
    Doc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Trust a peer's DID document.
    Connect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        peer: PathBuf,
    },
    /// Load a function bundle into the agent's enclave.
    Load {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Process every envelope in the inbox and write replies to the outbox.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        inbox: PathBuf,
        #[arg(long)]
        outbox: PathBuf,
    },
    /// Print the audit log.
    Audit {
        #[arg(long)]
        config: PathBuf,
        /// Fail if the hash chain does not verify.
        #[arg(long)]
        verify: bool,
    },
}

#[derive(Subcommand, Debug)]
pub enum SpCmd {
    /// Create a provider directory.
    Init {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        seed: Option<String>,
    },
    /// Write the provider's DID document.
    Doc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Trust an agent's DID document.
    Connect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        peer: PathBuf,
    },
    /// Register a function bundle.
    Load {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Seal a compute request to an agent.
    Request {
        #[arg(long)]
        config: PathBuf,
        /// Target agent DID.
        #[arg(long)]
        to: String,
        #[arg(long)]
        function: String,
        #[arg(long)]
        source: String,
        #[arg(long)]
        schema: String,
        /// Record cap; 0 means unlimited.
        #[arg(long, default_value_t = 100)]
        max_records: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Open replies and verify their attestations.
    Collect {
        #[arg(long)]
        config: PathBuf,
        #[arg(required = true)]
        replies: Vec<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum ScenarioCmd {
    /// Run a scenario file and write its event trace.
    Run {
        file: PathBuf,
        #[arg(long, default_value = "trace.jsonl")]
        trace: PathBuf,
        /// Overrides `sim.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `adversary.mode`.
        #[arg(long, value_parser = parse_mode)]
        adversary: Option<AdversaryMode>,
    },
    /// Check security properties over a recorded trace.
    Assert {
        #[arg(long, default_value = "trace.jsonl")]
        trace: PathBuf,
        /// Properties to check; all when none are given.
        #[arg(value_parser = parse_property)]
        properties: Vec<SecurityProperty>,
    },
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = datagent_core::bench::DEFAULT_SIZES)]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_bench_mode, default_values_t = BenchMode::ALL)]
    pub modes: Vec<BenchMode>,
    #[arg(long, default_value_t = 7)]
    pub trials: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Modeled enclave cost per call, microseconds.
    #[arg(long, default_value_t = 1_000)]
    pub setup_us: u64,
    /// Modeled enclave cost per record, nanoseconds.
    #[arg(long, default_value_t = 10_000)]
    pub per_record_ns: u64,
    /// Report file (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Plot data file (CSV).
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

fn parse_op(s: &str) -> Result<OperationKind, String> {
    s.parse()
}

fn parse_mode(s: &str) -> Result<AdversaryMode, String> {
    s.parse()
}

fn parse_property(s: &str) -> Result<SecurityProperty, String> {
    s.parse()
}

fn parse_bench_mode(s: &str) -> Result<BenchMode, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
