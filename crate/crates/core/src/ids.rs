//! Identifier newtypes and small value types shared by every module.

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Token amount in indivisible base units.
pub type Amount = u64;

/// Discrete simulation time. One epoch is one day.
pub type Epoch = u64;

/// Epochs per month when converting month-denominated durations.
pub const EPOCHS_PER_MONTH: Epoch = 30;

/// Non-negative reputation score.
pub type Score = Ratio<u64>;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "#{}"), self.0)
            }
        }
    };
}

id_type!(/// Account identity ("soul").
    SoulId, "soul");
id_type!(SbtId, "sbt");
id_type!(StakeId, "stake");
id_type!(ScheduleId, "vesting");
id_type!(/// Autonomous research community.
    ArcId, "arc");
id_type!(ProposalId, "proposal");
id_type!(RoundId, "round");
id_type!(ProgramId, "program");
id_type!(AssetId, "asset");
id_type!(PoolId, "pool");

/// Anything that can hold tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Account {
    Soul(SoulId),
    Arc(ArcId),
    /// Protocol-level treasury that collects the royalty fee.
    Commons,
}

impl fmt::Display for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Account::Soul(id) => id.fmt(f),
            Account::Arc(id) => write!(f, "{id}/treasury"),
            Account::Commons => f.write_str("commons/treasury"),
        }
    }
}

impl From<SoulId> for Account {
    fn from(id: SoulId) -> Self {
        Account::Soul(id)
    }
}

impl From<ArcId> for Account {
    fn from(id: ArcId) -> Self {
        Account::Arc(id)
    }
}

/// A fraction in basis points (10_000 = 1.0).
///
/// Serialized as a decimal fraction so that configuration files read
/// naturally (`0.2` rather than `2000`). Parsing rounds to the nearest
/// basis point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bps(pub u32);

impl Bps {
    pub const ONE: Bps = Bps(10_000);
    pub const ZERO: Bps = Bps(0);

    pub fn from_fraction(f: f64) -> Option<Bps> {
        if !f.is_finite() || f < 0.0 {
            return None;
        }
        let bp = (f * 10_000.0).round();
        if bp > u32::MAX as f64 {
            return None;
        }
        Some(Bps(bp as u32))
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0) / 10_000.0
    }

    /// `self × value` as an exact rational.
    pub fn of(self, value: Ratio<u64>) -> Ratio<u64> {
        value * Ratio::new(u64::from(self.0), 10_000)
    }
}

impl fmt::Display for Bps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

impl Serialize for Bps {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Bps {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = f64::deserialize(d)?;
        Bps::from_fraction(f).ok_or_else(|| serde::de::Error::custom(format!("invalid fraction {f}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bps_round_trips_through_fraction() {
        for bp in [0u32, 1, 1000, 2000, 5100, 10_000] {
            let json = serde_json::to_string(&Bps(bp)).unwrap();
            let back: Bps = serde_json::from_str(&json).unwrap();
            assert_eq!(back, Bps(bp));
        }
        assert!(serde_json::from_str::<Bps>("-0.1").is_err());
    }

    #[test]
    fn display_forms() {
        assert_eq!(SoulId(3).to_string(), "soul#3");
        assert_eq!(Account::Arc(ArcId(1)).to_string(), "arc#1/treasury");
    }
}
