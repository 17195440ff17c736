use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Traffic congestion class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Low,
    Medium,
    Heavy,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Low, Label::Medium, Label::Heavy];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Label> {
        Label::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidParam(format!("class index {i} out of range")))
    }

    /// Directory name in the dataset layout.
    pub fn dir_name(self) -> &'static str {
        match self {
            Label::Low => "low",
            Label::Medium => "medium",
            Label::Heavy => "heavy",
        }
    }

    pub fn initial(self) -> char {
        match self {
            Label::Low => 'L',
            Label::Medium => 'M',
            Label::Heavy => 'H',
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Low => "Low",
            Label::Medium => "Medium",
            Label::Heavy => "Heavy",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Label> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" | "l" => Ok(Label::Low),
            "medium" | "m" => Ok(Label::Medium),
            "heavy" | "h" | "high" => Ok(Label::Heavy),
            other => Err(Error::InvalidParam(format!("unknown class `{other}`"))),
        }
    }
}
