//! Identifiers, timestamps and resource vectors shared across modules.

use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Milliseconds. All timestamps in state, commands and the event log use it.
pub type Millis = u64;

pub type VoId = String;
pub type UserId = String;

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub const PREFIX: &'static str = $prefix;

            pub(crate) fn from_seq(seq: u64) -> Self {
                Self(format!("{}-{:06}", $prefix, seq))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_newtype!(ProviderId, "provider");
id_newtype!(SlaId, "sla");
id_newtype!(JobId, "job");
id_newtype!(SnapshotId, "snapshot");
id_newtype!(ModuleId, "module");
id_newtype!(RunId, "run");
id_newtype!(FragmentId, "frag");
id_newtype!(EndpointId, "endpoint");
id_newtype!(AsyncJobId, "async");
id_newtype!(DagId, "dag");

/// Monotone per-kind id allocator. Zero-padded so lexicographic order
/// matches allocation order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdCounter {
    last: u64,
}

impl IdCounter {
    pub fn next_seq(&mut self) -> u64 {
        self.last += 1;
        self.last
    }

    pub fn peek_seq(&self) -> u64 {
        self.last + 1
    }
}

/// Upper bound on any single capacity component. Keeps sums far from
/// overflow without resorting to checked arithmetic everywhere.
pub const MAX_CAPACITY_UNITS: u64 = 1 << 40;

/// A resource vector: GPUs, CPU in integer GHz-equivalents, disk in GB.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Capacity {
    pub gpus: u64,
    pub cpu_ghz: u64,
    pub disk_gb: u64,
}

impl Capacity {
    pub const ZERO: Capacity = Capacity {
        gpus: 0,
        cpu_ghz: 0,
        disk_gb: 0,
    };

    pub const fn new(gpus: u64, cpu_ghz: u64, disk_gb: u64) -> Self {
        Self {
            gpus,
            cpu_ghz,
            disk_gb,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("gpus", self.gpus),
            ("cpu_ghz", self.cpu_ghz),
            ("disk_gb", self.disk_gb),
        ] {
            if value > MAX_CAPACITY_UNITS {
                return Err(Error::validation(format!(
                    "capacity.{name}={value} exceeds {MAX_CAPACITY_UNITS}"
                )));
            }
        }
        Ok(())
    }

    /// Component-wise `self <= other`.
    pub fn fits_within(&self, other: &Capacity) -> bool {
        self.gpus <= other.gpus && self.cpu_ghz <= other.cpu_ghz && self.disk_gb <= other.disk_gb
    }

    /// Component-wise subtraction, `None` if any component would go negative.
    pub fn checked_sub(&self, other: &Capacity) -> Option<Capacity> {
        Some(Capacity {
            gpus: self.gpus.checked_sub(other.gpus)?,
            cpu_ghz: self.cpu_ghz.checked_sub(other.cpu_ghz)?,
            disk_gb: self.disk_gb.checked_sub(other.disk_gb)?,
        })
    }

    pub fn component_min(&self, other: &Capacity) -> Capacity {
        Capacity {
            gpus: self.gpus.min(other.gpus),
            cpu_ghz: self.cpu_ghz.min(other.cpu_ghz),
            disk_gb: self.disk_gb.min(other.disk_gb),
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Capacity::ZERO
    }
}

impl Add for Capacity {
    type Output = Capacity;

    fn add(self, rhs: Capacity) -> Capacity {
        Capacity {
            gpus: self.gpus + rhs.gpus,
            cpu_ghz: self.cpu_ghz + rhs.cpu_ghz,
            disk_gb: self.disk_gb + rhs.disk_gb,
        }
    }
}

impl AddAssign for Capacity {
    fn add_assign(&mut self, rhs: Capacity) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Capacity {
    fn sum<I: Iterator<Item = Capacity>>(iter: I) -> Capacity {
        iter.fold(Capacity::ZERO, Add::add)
    }
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{gpus:{}, cpu_ghz:{}, disk_gb:{}}}",
            self.gpus, self.cpu_ghz, self.disk_gb
        )
    }
}

/// Access tier carried by tokens and VO memberships.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Demo,
    Full,
}

impl Role {
    /// The less privileged of two roles.
    pub fn meet(self, other: Role) -> Role {
        self.min(other)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Demo => "demo",
            Role::Full => "full",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_sort_in_allocation_order() {
        let mut c = IdCounter::default();
        let a = JobId::from_seq(c.next_seq());
        let mut later = a.clone();
        for _ in 0..20 {
            later = JobId::from_seq(c.next_seq());
        }
        assert!(a < later);
        assert_eq!(a.as_str(), "job-000001");
    }

    #[test]
    fn capacity_sub_is_closed() {
        let a = Capacity::new(2, 10, 5);
        let b = Capacity::new(1, 10, 6);
        assert_eq!(a.checked_sub(&b), None);
        assert_eq!(a.checked_sub(&Capacity::new(1, 10, 5)), Some(Capacity::new(1, 0, 0)));
        assert!(Capacity::new(1, 0, 0).fits_within(&a));
        assert!(!b.fits_within(&a));
    }

    #[test]
    fn oversized_capacity_rejected() {
        assert!(Capacity::new(MAX_CAPACITY_UNITS + 1, 0, 0).validate().is_err());
        assert!(Capacity::ZERO.validate().is_ok());
    }

    #[test]
    fn role_meet_picks_lower_tier() {
        assert_eq!(Role::Full.meet(Role::Demo), Role::Demo);
        assert_eq!(Role::Full.meet(Role::Full), Role::Full);
    }
}
