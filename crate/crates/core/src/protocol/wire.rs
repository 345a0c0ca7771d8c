use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{ProtocolError, PROTOCOL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputPolicy {
    None,
    CenterCrop,
    Resize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDirection {
    HigherIsFake,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorDescriptor {
    pub name: String,
    pub version: String,
    pub protocol_version: u32,
    pub input_policy: InputPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_size: Option<u32>,
    pub score_direction: ScoreDirection,
}

impl DetectorDescriptor {
    pub fn new(name: impl Into<String>, version: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            version: version.into(),
            protocol_version: PROTOCOL_VERSION,
            input_policy: InputPolicy::None,
            input_size: None,
            score_direction: ScoreDirection::HigherIsFake,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.protocol_version != PROTOCOL_VERSION {
            return Err(ProtocolError::UnsupportedVersion(self.protocol_version));
        }
        if self.name.is_empty() {
            return Err(ProtocolError::InvalidDescriptor("empty name".into()));
        }
        match (self.input_policy, self.input_size) {
            (InputPolicy::None, Some(_)) => Err(ProtocolError::InvalidDescriptor(
                "input_size given with input_policy none".into(),
            )),
            (InputPolicy::CenterCrop | InputPolicy::Resize, None) => Err(ProtocolError::InvalidDescriptor(
                "input_size required when input_policy is not none".into(),
            )),
            (_, Some(0)) => Err(ProtocolError::InvalidDescriptor("input_size must be positive".into())),
            _ => Ok(()),
        }
    }

    /// `name@version`, the detector part of cache keys.
    pub fn detector_id(&self) -> String {
        format!("{}@{}", self.name, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireItem {
    pub id: String,
    pub path: String,
}

/// A score as it appears on the wire. Non-finite values survive parsing
/// (from `null`, `"NaN"`, `"Infinity"`, or bare `NaN` tokens) so the harness
/// can reject them by id instead of failing the whole line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreValue(pub f64);

impl Serialize for ScoreValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            serializer.serialize_f64(v)
        } else if v.is_nan() {
            serializer.serialize_str("NaN")
        } else if v > 0.0 {
            serializer.serialize_str("Infinity")
        } else {
            serializer.serialize_str("-Infinity")
        }
    }
}

impl<'de> Deserialize<'de> for ScoreValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        let v = match &value {
            serde_json::Value::Number(n) => n
                .as_f64()
                .ok_or_else(|| serde::de::Error::custom("score out of range"))?,
            serde_json::Value::Null => f64::NAN,
            serde_json::Value::String(s) => match s.as_str() {
                "NaN" | "nan" => f64::NAN,
                "Infinity" | "inf" => f64::INFINITY,
                "-Infinity" | "-inf" => f64::NEG_INFINITY,
                _ => return Err(serde::de::Error::custom(format!("score must be a number, got {s:?}"))),
            },
            other => return Err(serde::de::Error::custom(format!("score must be a number, got {other}"))),
        };
        Ok(ScoreValue(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireScore {
    pub id: String,
    pub score: ScoreValue,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello {
        protocol_version: u32,
    },
    HelloAck(DetectorDescriptor),
    Score {
        batch_id: u64,
        items: Vec<WireItem>,
        #[serde(default, skip_serializing_if = "is_false")]
        preprocessed: bool,
    },
    Scores {
        batch_id: u64,
        scores: Vec<WireScore>,
    },
    Error {
        message: String,
    },
    Shutdown,
}

impl Message {
    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::HelloAck(_) => "hello_ack",
            Message::Score { .. } => "score",
            Message::Scores { .. } => "scores",
            Message::Error { .. } => "error",
            Message::Shutdown => "shutdown",
        }
    }
}

/// Serializes to a single `\n`-terminated line.
pub fn to_line(msg: &Message) -> String {
    // Message contains only strings, integers and ScoreValue: serialization
    // cannot fail.
    let mut line = serde_json::to_string(msg).expect("protocol messages always serialize");
    line.push('\n');
    line
}

pub fn parse_line(line: &str) -> Result<Message, ProtocolError> {
    let trimmed = line.trim_end_matches(['\n', '\r']);
    match serde_json::from_str(trimmed) {
        Ok(msg) => Ok(msg),
        Err(first) => {
            let sanitized = sanitize_non_finite(trimmed);
            if sanitized != trimmed {
                if let Ok(msg) = serde_json::from_str(&sanitized) {
                    return Ok(msg);
                }
            }
            Err(ProtocolError::Malformed(format!("{first}: {}", truncate(trimmed, 200))))
        }
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Quotes bare `NaN`, `Infinity` and `-Infinity` tokens outside strings, as
/// emitted by e.g. Python's `json.dumps`.
pub fn sanitize_non_finite(text: &str) -> String {
    const TOKENS: [&str; 3] = ["-Infinity", "Infinity", "NaN"];
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len() + 8);
    let mut in_string = false;
    let mut escaped = false;
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if in_string {
            if escaped {
                escaped = false;
            } else if c == b'\\' {
                escaped = true;
            } else if c == b'"' {
                in_string = false;
            }
        } else if c == b'"' {
            in_string = true;
        } else if let Some(tok) = TOKENS.iter().find(|t| bytes[i..].starts_with(t.as_bytes())) {
            let end = i + tok.len();
            let boundary = bytes.get(end).is_none_or(|b| !b.is_ascii_alphanumeric());
            if boundary {
                out.push('"');
                out.push_str(tok);
                out.push('"');
                i = end;
                continue;
            }
        }
        // Copy the full UTF-8 character starting at i.
        let ch_len = text[i..].chars().next().map_or(1, char::len_utf8);
        out.push_str(&text[i..i + ch_len]);
        i += ch_len;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_ack_example_parses() {
        let line = r#"{"type":"hello_ack","name":"const","version":"1","protocol_version":1,"input_policy":"none","score_direction":"higher_is_fake"}"#;
        let Message::HelloAck(d) = parse_line(line).unwrap() else {
            panic!("wrong type")
        };
        assert_eq!(d.name, "const");
        d.validate().unwrap();
        assert_eq!(to_line(&Message::HelloAck(d)), format!("{line}\n"));
    }

    #[test]
    fn descriptor_validation() {
        let mut d = DetectorDescriptor::new("x", "1");
        d.protocol_version = 2;
        assert_eq!(d.validate().unwrap_err().to_string(), "unsupported protocol version 2");
        let mut d = DetectorDescriptor::new("x", "1");
        d.input_policy = InputPolicy::Resize;
        assert!(d.validate().is_err());
        d.input_size = Some(224);
        d.validate().unwrap();
        assert!(to_line(&Message::HelloAck(d)).contains(r#""input_policy":"resize","input_size":224"#));
    }

    #[test]
    fn message_lines() {
        assert_eq!(to_line(&Message::Hello { protocol_version: 1 }), "{\"type\":\"hello\",\"protocol_version\":1}\n");
        assert_eq!(to_line(&Message::Shutdown), "{\"type\":\"shutdown\"}\n");
        let score = Message::Score {
            batch_id: 3,
            items: vec![WireItem {
                id: "a\nb".into(),
                path: "/x.png".into(),
            }],
            preprocessed: true,
        };
        let line = to_line(&score);
        assert_eq!(line.matches('\n').count(), 1);
        assert_eq!(parse_line(&line).unwrap(), score);
    }

    #[test]
    fn non_finite_scores_survive_parsing() {
        for raw in [
            r#"{"type":"scores","batch_id":1,"scores":[{"id":"a","score":NaN}]}"#,
            r#"{"type":"scores","batch_id":1,"scores":[{"id":"a","score":null}]}"#,
            r#"{"type":"scores","batch_id":1,"scores":[{"id":"a","score":"NaN"}]}"#,
        ] {
            let Message::Scores { scores, .. } = parse_line(raw).unwrap() else {
                panic!()
            };
            assert!(scores[0].score.0.is_nan());
        }
        let raw = r#"{"type":"scores","batch_id":1,"scores":[{"id":"NaN","score":-Infinity}]}"#;
        let Message::Scores { scores, .. } = parse_line(raw).unwrap() else {
            panic!()
        };
        assert_eq!(scores[0].id, "NaN");
        assert_eq!(scores[0].score.0, f64::NEG_INFINITY);
    }

    #[test]
    fn sanitizer_leaves_strings_alone() {
        assert_eq!(sanitize_non_finite(r#"{"a":"NaN \" NaN","b":NaN}"#), r#"{"a":"NaN \" NaN","b":"NaN"}"#);
        assert_eq!(sanitize_non_finite("[NaNa]"), "[NaNa]");
        assert_eq!(sanitize_non_finite("[\"é\",Infinity]"), "[\"é\",\"Infinity\"]");
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(parse_line("{not json"), Err(ProtocolError::Malformed(_))));
        assert!(matches!(parse_line(r#"{"type":"warp"}"#), Err(ProtocolError::Malformed(_))));
    }
}
