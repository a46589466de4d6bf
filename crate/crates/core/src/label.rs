use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Binary class label, serialized as the integer `0` or `1`.
///
/// In the identification task `Positive` is "engaging message"; in the
/// frame task it is "gain-framed".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("label must be 0 or 1, got `{0}`")]
pub struct LabelParseError(pub String);

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// Strict parse: after trimming, exactly `0` or `1`.
impl FromStr for Label {
    type Err = LabelParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "0" => Ok(Label::Negative),
            "1" => Ok(Label::Positive),
            _ => Err(LabelParseError(s.to_owned())),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Label::from_u8(v).ok_or_else(|| serde::de::Error::custom(LabelParseError(v.to_string())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Engaging message (1) vs. any other sentence (0).
    #[default]
    Identification,
    /// Gain-framed (1) vs. loss-framed (0) message.
    Frame,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Identification => "identification",
            Task::Frame => "frame",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identification" => Ok(Task::Identification),
            "frame" => Ok(Task::Frame),
            other => Err(format!("unknown task `{other}` (expected identification or frame)")),
        }
    }
}
