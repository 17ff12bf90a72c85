use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

/// Milliseconds on the process clock. `Timestamp::INFINITE` marks an
/// interval without an upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const INFINITE: Timestamp = Timestamp(u64::MAX);

    pub fn now() -> Timestamp {
        let ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Timestamp(ms)
    }

    pub fn is_infinite(self) -> bool {
        self == Self::INFINITE
    }

    /// Saturating addition; adding to `INFINITE` stays infinite.
    pub fn plus(self, ms: u64) -> Timestamp {
        Timestamp(self.0.saturating_add(ms))
    }

    /// Saturating subtraction that leaves `INFINITE` untouched.
    pub fn minus(self, ms: u64) -> Timestamp {
        if self.is_infinite() {
            self
        } else {
            Timestamp(self.0.saturating_sub(ms))
        }
    }

    pub fn as_millis(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}
