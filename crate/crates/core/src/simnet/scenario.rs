//! Scenario files: who exists, what they hold, what they grant, what runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analytics::{
    EntityDictionary, FunctionSpec, ModelLayout, SentimentLexicon, StatKind, FEATURE_DIM,
};
use crate::types::OperationKind;

use super::{AdversarySpec, SimConfig};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub adversary: AdversarySpec,
    #[serde(default, rename = "provider")]
    pub providers: Vec<ProviderDef>,
    #[serde(default, rename = "user")]
    pub users: Vec<UserDef>,
    #[serde(default, rename = "step")]
    pub steps: Vec<Step>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderDef {
    pub name: String,
    #[serde(default, rename = "bundle")]
    pub bundles: Vec<BundleDef>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleDef {
    pub id: String,
    #[serde(flatten)]
    pub function: FunctionDef,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum FunctionDef {
    #[serde(rename = "ner.v1")]
    Ner { entities: Vec<String> },
    #[serde(rename = "sentiment.v1")]
    Sentiment { lexicon: BTreeMap<String, f64> },
    #[serde(rename = "stat.v1")]
    Stat {
        kind: String,
        #[serde(default)]
        field: String,
    },
    #[serde(rename = "linreg.v1")]
    Linreg { x_field: String, y_field: String },
    #[serde(rename = "train.logreg.v1")]
    Train {
        /// 0 selects plain logistic regression.
        #[serde(default)]
        hidden_dim: u32,
    },
}

impl FunctionDef {
    pub fn to_spec(&self) -> Result<FunctionSpec, ScenarioError> {
        let invalid = |e: crate::analytics::EvalError| ScenarioError::Invalid(e.to_string());
        Ok(match self {
            Self::Ner { entities } => FunctionSpec::Ner {
                dictionary: EntityDictionary::new(entities).map_err(invalid)?,
            },
            Self::Sentiment { lexicon } => FunctionSpec::Sentiment {
                lexicon: SentimentLexicon::new(lexicon.iter().map(|(k, v)| (k.as_str(), *v)))
                    .map_err(invalid)?,
            },
            Self::Stat { kind, field } => FunctionSpec::Stat {
                kind: kind.parse::<StatKind>().map_err(ScenarioError::Invalid)?,
                field: field.clone(),
            },
            Self::Linreg { x_field, y_field } => FunctionSpec::Linreg {
                x_field: x_field.clone(),
                y_field: y_field.clone(),
            },
            Self::Train { hidden_dim } => FunctionSpec::Train {
                layout: if *hidden_dim == 0 {
                    ModelLayout::logistic(FEATURE_DIM)
                } else {
                    ModelLayout::mlp(FEATURE_DIM, *hidden_dim)
                },
            },
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserDef {
    pub name: String,
    #[serde(default, rename = "source")]
    pub sources: Vec<SourceDef>,
    #[serde(default, rename = "grant")]
    pub grants: Vec<GrantDef>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDef {
    pub id: String,
    pub schema: String,
    /// Inline JSON items.
    #[serde(default)]
    pub items: Vec<Value>,
    /// JSON-lines file, relative to the scenario file.
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticDef>,
    pub policy: PolicyDef,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticDef {
    RandomComments {
        count: usize,
        payload_len: usize,
    },
    WordComments {
        count: usize,
        words_per_item: usize,
        vocab: Vec<String>,
    },
    LabeledTitles {
        count: usize,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDef {
    pub functions: Vec<String>,
    #[serde(default = "default_cap")]
    pub max_records: u32,
    #[serde(default = "default_cap")]
    pub max_requests_per_day: u32,
}

fn default_cap() -> u32 {
    10_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrantDef {
    pub provider: String,
    pub source: String,
    pub operation: OperationKind,
    /// Lifetime from simulation start; unbounded when absent.
    #[serde(default)]
    pub expires_in_ms: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Compute {
        provider: String,
        user: String,
        function: String,
        source: String,
        schema: String,
        #[serde(default = "default_step_records")]
        max_records: u32,
        #[serde(default = "one")]
        repeat: u32,
    },
    Train {
        provider: String,
        /// Participating users; all users when empty.
        #[serde(default)]
        users: Vec<String>,
        function: String,
        source: String,
        schema: String,
        rounds: u64,
        #[serde(default = "default_epochs")]
        epochs: u32,
        #[serde(default = "default_lr")]
        learning_rate: f64,
        #[serde(default = "one")]
        min_participants: u32,
        #[serde(default = "default_cap")]
        max_records: u32,
        #[serde(default)]
        model_seed: u64,
        /// Enrolls the simulated rogue agent as an eligible participant.
        #[serde(default)]
        include_rogue: bool,
    },
    Advance {
        ms: u64,
    },
}

fn one() -> u32 {
    1
}
fn default_step_records() -> u32 {
    100
}
fn default_epochs() -> u32 {
    crate::analytics::TrainHyper::default().epochs
}
fn default_lr() -> f64 {
    crate::analytics::TrainHyper::default().learning_rate
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Self = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    /// Loads a scenario; relative data-file paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let mut s = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for u in &mut s.users {
            for src in &mut u.sources {
                if let Some(f) = &mut src.file {
                    if f.is_relative() {
                        *f = base.join(&*f);
                    }
                }
            }
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        let mut names = std::collections::BTreeSet::new();
        for n in self
            .providers
            .iter()
            .map(|p| &p.name)
            .chain(self.users.iter().map(|u| &u.name))
        {
            if n == super::ROGUE_NAME || !names.insert(n.clone()) {
                return invalid(format!("duplicate or reserved node name `{n}`"));
            }
        }
        if !(0.0..=1.0).contains(&self.sim.drop_rate)
            || !(0.0..=1.0).contains(&self.adversary.probability)
        {
            return invalid("probabilities must lie in [0, 1]".into());
        }
        self.sim
            .latency
            .validate()
            .map_err(ScenarioError::Invalid)?;
        let provider = |n: &str| self.providers.iter().find(|p| p.name == n);
        let user = |n: &str| self.users.iter().any(|u| u.name == n);
        for u in &self.users {
            for g in &u.grants {
                if provider(&g.provider).is_none() {
                    return invalid(format!(
                        "user `{}` grants to unknown provider `{}`",
                        u.name, g.provider
                    ));
                }
            }
        }
        for step in &self.steps {
            let (p, f, users): (&str, &str, Vec<&String>) = match step {
                Step::Compute {
                    provider,
                    user,
                    function,
                    ..
                } => (provider, function, vec![user]),
                Step::Train {
                    provider,
                    users,
                    function,
                    ..
                } => (provider, function, users.iter().collect()),
                Step::Advance { .. } => continue,
            };
            let Some(pd) = provider(p) else {
                return invalid(format!("step names unknown provider `{p}`"));
            };
            if !pd.bundles.iter().any(|b| b.id == f) {
                return invalid(format!("provider `{p}` has no bundle `{f}`"));
            }
            if let Some(u) = users.into_iter().find(|u| !user(u)) {
                return invalid(format!("step names unknown user `{u}`"));
            }
        }
        Ok(())
    }
}
