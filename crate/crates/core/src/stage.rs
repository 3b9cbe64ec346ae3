//! The five-class sleep-wake label set.

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of sleep-wake classes.
pub const STAGE_COUNT: usize = 5;

/// A scored sleep-wake stage. Integer codes follow declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SleepStage {
    Wake = 0,
    Nrem1 = 1,
    Nrem2 = 2,
    Nrem3 = 3,
    Rem = 4,
}

impl SleepStage {
    pub const ALL: [SleepStage; STAGE_COUNT] = [
        SleepStage::Wake,
        SleepStage::Nrem1,
        SleepStage::Nrem2,
        SleepStage::Nrem3,
        SleepStage::Rem,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    /// Canonical token used in label files and reports.
    pub fn name(self) -> &'static str {
        match self {
            SleepStage::Wake => "Wake",
            SleepStage::Nrem1 => "NREM1",
            SleepStage::Nrem2 => "NREM2",
            SleepStage::Nrem3 => "NREM3",
            SleepStage::Rem => "REM",
        }
    }
}

impl fmt::Display for SleepStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown sleep stage token")]
pub struct UnknownStage;

impl FromStr for SleepStage {
    type Err = UnknownStage;

    /// Accepts the canonical names plus the common short scoring tokens.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "Wake" | "W" | "0" => Ok(SleepStage::Wake),
            "NREM1" | "N1" | "1" => Ok(SleepStage::Nrem1),
            "NREM2" | "N2" | "2" => Ok(SleepStage::Nrem2),
            "NREM3" | "N3" | "3" => Ok(SleepStage::Nrem3),
            "REM" | "R" | "4" => Ok(SleepStage::Rem),
            _ => Err(UnknownStage),
        }
    }
}
