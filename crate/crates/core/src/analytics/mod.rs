//! Function families executable inside the enclave.
//!
//! A function is a declarative [`FunctionSpec`] (the bundle's `code_spec`)
//! plus per-request parameters. Family ids:
//!
//! | family            | output                         |
//! |-------------------|--------------------------------|
//! | `ner.v1`          | entity → mention count         |
//! | `sentiment.v1`    | mean lexicon score + matches   |
//! | `stat.v1`         | count / sum / mean of a field  |
//! | `linreg.v1`       | slope, intercept, n            |
//! | `train.logreg.v1` | trained params, n, final loss  |

pub mod model;
pub mod stats;
pub mod text;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::schema::RecordPayload;

pub use model::{
    accuracy, featurize, local_train, loss, loss_and_grad, Example, ModelLayout, ModelParams,
    TrainHyper, TrainOutcome, FEATURE_DIM,
};
pub use stats::{linreg_fit, linreg_records, stat, LinregFit, StatKind};
pub use text::{
    ner_count, sentiment_avg, tokenize, EntityDictionary, SentimentLexicon, SentimentSummary,
};

pub const FAMILY_NER: &str = "ner.v1";
pub const FAMILY_SENTIMENT: &str = "sentiment.v1";
pub const FAMILY_STAT: &str = "stat.v1";
pub const FAMILY_LINREG: &str = "linreg.v1";
pub const FAMILY_TRAIN: &str = "train.logreg.v1";

pub const KNOWN_FAMILIES: [&str; 5] = [
    FAMILY_NER,
    FAMILY_SENTIMENT,
    FAMILY_STAT,
    FAMILY_LINREG,
    FAMILY_TRAIN,
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("degenerate input")]
    Degenerate,
    #[error("model layout does not match the features")]
    LayoutMismatch,
    #[error("non-finite value produced")]
    NonFinite,
    #[error("field `{0}` is not numeric for these records")]
    UnknownField(String),
    #[error("records of schema `{0}` are not accepted by this function")]
    WrongSchema(String),
    #[error("bad parameters: {0}")]
    BadParams(String),
}

/// Declarative function definition carried in a bundle's `code_spec`.
#[derive(Clone, Debug, PartialEq)]
pub enum FunctionSpec {
    Ner { dictionary: EntityDictionary },
    Sentiment { lexicon: SentimentLexicon },
    Stat { kind: StatKind, field: String },
    Linreg { x_field: String, y_field: String },
    Train { layout: ModelLayout },
}

impl FunctionSpec {
    pub fn family(&self) -> &'static str {
        match self {
            Self::Ner { .. } => FAMILY_NER,
            Self::Sentiment { .. } => FAMILY_SENTIMENT,
            Self::Stat { .. } => FAMILY_STAT,
            Self::Linreg { .. } => FAMILY_LINREG,
            Self::Train { .. } => FAMILY_TRAIN,
        }
    }

    /// Identifier of the payload schema this function emits.
    pub fn output_schema(&self) -> &'static str {
        match self {
            Self::Ner { .. } => "ner.counts.v1",
            Self::Sentiment { .. } => "sentiment.summary.v1",
            Self::Stat { .. } => "stat.scalar.v1",
            Self::Linreg { .. } => "linreg.fit.v1",
            Self::Train { .. } => "train.update.v1",
        }
    }

    pub fn is_training(&self) -> bool {
        matches!(self, Self::Train { .. })
    }

    /// Runs the function. `params` are the request's `function_params`.
    pub fn evaluate(
        &self,
        params: &[u8],
        records: &[RecordPayload],
    ) -> Result<FunctionOutput, EvalError> {
        if !self.is_training() && !params.is_empty() {
            return Err(EvalError::BadParams(format!(
                "{} takes no request parameters",
                self.family()
            )));
        }
        match self {
            Self::Ner { dictionary } => {
                let texts: Vec<String> = records.iter().map(RecordPayload::text).collect();
                Ok(FunctionOutput::EntityCounts(ner_count(&texts, dictionary)))
            }
            Self::Sentiment { lexicon } => {
                let texts: Vec<String> = records.iter().map(RecordPayload::text).collect();
                Ok(FunctionOutput::Sentiment(sentiment_avg(&texts, lexicon)))
            }
            Self::Stat { kind, field } => Ok(FunctionOutput::Scalar(stat(records, *kind, field)?)),
            Self::Linreg { x_field, y_field } => Ok(FunctionOutput::Linreg(linreg_records(
                records, x_field, y_field,
            )?)),
            Self::Train { layout } => {
                let tp = TrainParams::from_canonical_bytes(params)
                    .map_err(|e| EvalError::BadParams(e.to_string()))?;
                if tp.model.layout != *layout {
                    return Err(EvalError::LayoutMismatch);
                }
                let batch = labeled_examples(records, layout.feature_dim)?;
                Ok(FunctionOutput::Trained(local_train(
                    &batch, &tp.model, &tp.hyper,
                )?))
            }
        }
    }
}

/// Featurizes `labeled_title.v1` records.
pub fn labeled_examples(records: &[RecordPayload], dim: u32) -> Result<Vec<Example>, EvalError> {
    records
        .iter()
        .map(|r| match r {
            RecordPayload::LabeledTitle { title, engaged } => Ok(Example {
                features: featurize(title, dim),
                label: *engaged,
            }),
            other => Err(EvalError::WrongSchema(other.schema_tag().to_owned())),
        })
        .collect()
}

impl Canonical for FunctionSpec {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(self.family());
        match self {
            Self::Ner { dictionary } => enc.value(dictionary),
            Self::Sentiment { lexicon } => enc.value(lexicon),
            Self::Stat { kind, field } => enc.value(kind).str(field),
            Self::Linreg { x_field, y_field } => enc.str(x_field).str(y_field),
            Self::Train { layout } => enc.value(layout),
        };
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let family = dec.string()?;
        Ok(match family.as_str() {
            FAMILY_NER => Self::Ner {
                dictionary: dec.value()?,
            },
            FAMILY_SENTIMENT => Self::Sentiment {
                lexicon: dec.value()?,
            },
            FAMILY_STAT => Self::Stat {
                kind: dec.value()?,
                field: dec.string()?,
            },
            FAMILY_LINREG => Self::Linreg {
                x_field: dec.string()?,
                y_field: dec.string()?,
            },
            FAMILY_TRAIN => Self::Train {
                layout: dec.value()?,
            },
            other => {
                return Err(DecodeError::Invalid(format!(
                    "unknown function family `{other}`"
                )))
            }
        })
    }
}

/// Request-time parameters of a training task.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainParams {
    pub round: u64,
    pub model: ModelParams,
    pub hyper: TrainHyper,
}

impl Canonical for TrainParams {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.u64(self.round).value(&self.model).value(&self.hyper);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            round: dec.u64()?,
            model: dec.value()?,
            hyper: dec.value()?,
        })
    }
}

/// Canonical `ComputeResult` payload.
#[derive(Clone, Debug, PartialEq)]
pub enum FunctionOutput {
    EntityCounts(BTreeMap<String, u64>),
    Sentiment(SentimentSummary),
    Scalar(f64),
    Linreg(LinregFit),
    Trained(TrainOutcome),
}

impl Canonical for FunctionOutput {
    fn encode_into(&self, enc: &mut Encoder) {
        match self {
            Self::EntityCounts(m) => enc.u8(0).value(m),
            Self::Sentiment(s) => enc.u8(1).f64(s.mean).u64(s.matched_tokens),
            Self::Scalar(v) => enc.u8(2).f64(*v),
            Self::Linreg(f) => enc.u8(3).f64(f.slope).f64(f.intercept).u64(f.n),
            Self::Trained(t) => enc.u8(4).value(t),
        };
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => Self::EntityCounts(dec.value()?),
            1 => Self::Sentiment(SentimentSummary {
                mean: dec.f64()?,
                matched_tokens: dec.u64()?,
            }),
            2 => Self::Scalar(dec.f64()?),
            3 => Self::Linreg(LinregFit {
                slope: dec.f64()?,
                intercept: dec.f64()?,
                n: dec.u64()?,
            }),
            4 => Self::Trained(dec.value()?),
            tag => {
                return Err(DecodeError::InvalidTag {
                    what: "function output",
                    tag,
                })
            }
        })
    }
}
