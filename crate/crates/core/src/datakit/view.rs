use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the three canonical product views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewLabel {
    Front,
    Side,
    Back,
}

impl ViewLabel {
    pub const ALL: [ViewLabel; 3] = [ViewLabel::Front, ViewLabel::Side, ViewLabel::Back];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            ViewLabel::Front => 0,
            ViewLabel::Side => 1,
            ViewLabel::Back => 2,
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("view index {index} out of range 0..3")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ViewLabel::Front => "front",
            ViewLabel::Side => "side",
            ViewLabel::Back => "back",
        }
    }
}

impl fmt::Display for ViewLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ViewLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "front" => Ok(ViewLabel::Front),
            "side" => Ok(ViewLabel::Side),
            "back" => Ok(ViewLabel::Back),
            other => Err(Error::InvalidArgument(format!(
                "unknown view {other:?} (expected front, side or back)"
            ))),
        }
    }
}
