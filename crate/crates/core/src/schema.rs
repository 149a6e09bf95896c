//! Record schemas understood by the store and the analytics functions.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::analytics::text::tokenize;
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};

pub const POST_V1: &str = "post.v1";
pub const COMMENT_V1: &str = "comment.v1";
pub const LABELED_TITLE_V1: &str = "labeled_title.v1";

pub const REGISTERED_SCHEMAS: [&str; 3] = [POST_V1, COMMENT_V1, LABELED_TITLE_V1];

pub fn is_registered(schema_tag: &str) -> bool {
    REGISTERED_SCHEMAS.contains(&schema_tag)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("unknown schema `{0}`")]
    UnknownSchema(String),
    #[error("item is not an object")]
    NotAnObject,
    #[error("missing or mistyped field `{0}`")]
    Field(&'static str),
    #[error("unexpected field `{0}`")]
    UnexpectedField(String),
    #[error("payload does not decode: {0}")]
    Decode(#[from] DecodeError),
}

/// Decoded record payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RecordPayload {
    Post {
        title: String,
        body: String,
        liked: bool,
    },
    Comment {
        text: String,
    },
    LabeledTitle {
        title: String,
        engaged: bool,
    },
}

impl RecordPayload {
    pub fn schema_tag(&self) -> &'static str {
        match self {
            Self::Post { .. } => POST_V1,
            Self::Comment { .. } => COMMENT_V1,
            Self::LabeledTitle { .. } => LABELED_TITLE_V1,
        }
    }

    /// Canonical payload bytes (the schema tag travels separately).
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        match self {
            Self::Post { title, body, liked } => enc.str(title).str(body).bool(*liked),
            Self::Comment { text } => enc.str(text),
            Self::LabeledTitle { title, engaged } => enc.str(title).bool(*engaged),
        };
        enc.into_bytes()
    }

    pub fn decode(schema_tag: &str, bytes: &[u8]) -> Result<Self, SchemaError> {
        let mut dec = Decoder::new(bytes);
        let v = match schema_tag {
            POST_V1 => Self::Post {
                title: dec.string()?,
                body: dec.string()?,
                liked: dec.bool()?,
            },
            COMMENT_V1 => Self::Comment {
                text: dec.string()?,
            },
            LABELED_TITLE_V1 => Self::LabeledTitle {
                title: dec.string()?,
                engaged: dec.bool()?,
            },
            other => return Err(SchemaError::UnknownSchema(other.to_owned())),
        };
        dec.finish()?;
        Ok(v)
    }

    /// Validates a structured-text item against `schema_tag`.
    ///
    /// `collected_at` is accepted and ignored here; the plug consumes it.
    pub fn from_json(schema_tag: &str, item: &Value) -> Result<Self, SchemaError> {
        let obj = item.as_object().ok_or(SchemaError::NotAnObject)?;
        let (v, fields): (Self, &[&str]) = match schema_tag {
            POST_V1 => (
                Self::Post {
                    title: str_field(obj, "title")?,
                    body: str_field(obj, "body")?,
                    liked: bool_field(obj, "liked")?,
                },
                &["title", "body", "liked"],
            ),
            COMMENT_V1 => (
                Self::Comment {
                    text: str_field(obj, "text")?,
                },
                &["text"],
            ),
            LABELED_TITLE_V1 => (
                Self::LabeledTitle {
                    title: str_field(obj, "title")?,
                    engaged: bool_field(obj, "engaged")?,
                },
                &["title", "engaged"],
            ),
            other => return Err(SchemaError::UnknownSchema(other.to_owned())),
        };
        if let Some(extra) = obj
            .keys()
            .find(|k| *k != "collected_at" && !fields.contains(&k.as_str()))
        {
            return Err(SchemaError::UnexpectedField(extra.clone()));
        }
        Ok(v)
    }

    pub fn to_json(&self) -> Value {
        match self {
            Self::Post { title, body, liked } => {
                serde_json::json!({"title": title, "body": body, "liked": liked})
            }
            Self::Comment { text } => serde_json::json!({"text": text}),
            Self::LabeledTitle { title, engaged } => {
                serde_json::json!({"title": title, "engaged": engaged})
            }
        }
    }

    /// All free text carried by the record, fields joined by a newline.
    pub fn text(&self) -> String {
        match self {
            Self::Post { title, body, .. } => format!("{title}\n{body}"),
            Self::Comment { text } => text.clone(),
            Self::LabeledTitle { title, .. } => title.clone(),
        }
    }

    fn text_field(&self, name: &str) -> Option<&str> {
        match (self, name) {
            (Self::Post { title, .. }, "title") | (Self::LabeledTitle { title, .. }, "title") => {
                Some(title)
            }
            (Self::Post { body, .. }, "body") => Some(body),
            (Self::Comment { text }, "text") => Some(text),
            _ => None,
        }
    }

    /// Numeric view of a field path.
    ///
    /// Booleans read as 0/1; `<text field>.tokens` and `<text field>.chars`
    /// give token and character counts of a text field.
    pub fn numeric(&self, path: &str) -> Option<f64> {
        match (self, path) {
            (Self::Post { liked, .. }, "liked") => return Some(f64::from(u8::from(*liked))),
            (Self::LabeledTitle { engaged, .. }, "engaged") => {
                return Some(f64::from(u8::from(*engaged)))
            }
            _ => {}
        }
        let (field, view) = path.split_once('.')?;
        let text = self.text_field(field)?;
        match view {
            "tokens" => Some(tokenize(text).len() as f64),
            "chars" => Some(text.chars().count() as f64),
            _ => None,
        }
    }
}

fn str_field(obj: &Map<String, Value>, name: &'static str) -> Result<String, SchemaError> {
    obj.get(name)
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or(SchemaError::Field(name))
}

fn bool_field(obj: &Map<String, Value>, name: &'static str) -> Result<bool, SchemaError> {
    obj.get(name)
        .and_then(Value::as_bool)
        .ok_or(SchemaError::Field(name))
}

impl Canonical for RecordPayload {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.str(self.schema_tag()).bytes(&self.encode());
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let tag = dec.string()?;
        let bytes = dec.bytes()?;
        Self::decode(&tag, &bytes).map_err(|e| DecodeError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn json_validation() {
        let p =
            RecordPayload::from_json(POST_V1, &json!({"title": "a", "body": "b", "liked": true}))
                .unwrap();
        assert_eq!(RecordPayload::decode(POST_V1, &p.encode()).unwrap(), p);
        assert_eq!(
            RecordPayload::from_json(POST_V1, &json!({"title": "a", "liked": true})),
            Err(SchemaError::Field("body"))
        );
        assert_eq!(
            RecordPayload::from_json(COMMENT_V1, &json!({"text": "x", "score": 3})),
            Err(SchemaError::UnexpectedField("score".into()))
        );
        assert!(
            RecordPayload::from_json(COMMENT_V1, &json!({"text": "x", "collected_at": 3})).is_ok()
        );
        assert_eq!(
            RecordPayload::from_json("song.v9", &json!({})),
            Err(SchemaError::UnknownSchema("song.v9".into()))
        );
    }

    #[test]
    fn payload_bytes_do_not_cross_schemas() {
        let c = RecordPayload::Comment {
            text: "hello".into(),
        };
        assert!(RecordPayload::decode(POST_V1, &c.encode()).is_err());
    }

    #[test]
    fn numeric_views() {
        let p = RecordPayload::Post {
            title: "Big news, today".into(),
            body: "".into(),
            liked: true,
        };
        assert_eq!(p.numeric("liked"), Some(1.0));
        assert_eq!(p.numeric("title.tokens"), Some(3.0));
        assert_eq!(p.numeric("title.chars"), Some(15.0));
        assert_eq!(p.numeric("engaged"), None);
        assert_eq!(p.numeric("body.words"), None);
    }
}
