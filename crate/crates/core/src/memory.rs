//! Logical working-set accounting.
//!
//! The solvers declare every working buffer they hold (iterates, patch
//! batches, CG temporaries) to a [`MemoryLedger`]. Counts are logical bytes
//! of the declared buffers, not allocator bytes, so peaks are a pure
//! function of the configuration.

use std::sync::Mutex;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Alloc,
    Free,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEvent {
    pub label: &'static str,
    pub bytes: usize,
    pub direction: Direction,
}

#[derive(Debug, Default)]
struct LedgerState {
    live: usize,
    peak: usize,
    events: Vec<LedgerEvent>,
}

#[derive(Debug, Default)]
pub struct MemoryLedger {
    state: Mutex<LedgerState>,
    record_events: bool,
}

impl MemoryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ledger that also keeps the full event log.
    pub fn with_events() -> Self {
        Self {
            state: Mutex::default(),
            record_events: true,
        }
    }

    pub fn track(&self, label: &'static str, bytes: usize, direction: Direction) -> Result<()> {
        let mut s = self.state.lock().unwrap();
        match direction {
            Direction::Alloc => {
                s.live += bytes;
                s.peak = s.peak.max(s.live);
            }
            Direction::Free => {
                s.live = s.live.checked_sub(bytes).ok_or_else(|| {
                    Error::Accounting(format!("freeing {bytes} bytes of `{label}` with only {} live", s.live))
                })?;
            }
        }
        if self.record_events {
            s.events.push(LedgerEvent {
                label,
                bytes,
                direction,
            });
        }
        Ok(())
    }

    /// Track an allocation released when the returned guard drops.
    pub fn hold(&self, label: &'static str, bytes: usize) -> Charge<'_> {
        self.track(label, bytes, Direction::Alloc)
            .expect("allocation cannot fail");
        Charge {
            ledger: self,
            label,
            bytes,
        }
    }

    pub fn peak(&self) -> usize {
        self.state.lock().unwrap().peak
    }

    pub fn live(&self) -> usize {
        self.state.lock().unwrap().live
    }

    pub fn events(&self) -> Vec<LedgerEvent> {
        self.state.lock().unwrap().events.clone()
    }
}

/// RAII charge against a ledger.
#[derive(Debug)]
pub struct Charge<'a> {
    ledger: &'a MemoryLedger,
    label: &'static str,
    bytes: usize,
}

impl Charge<'_> {
    pub fn bytes(&self) -> usize {
        self.bytes
    }
}

impl Drop for Charge<'_> {
    fn drop(&mut self) {
        // cannot underflow: this charge's bytes were added on creation
        let _ = self.ledger.track(self.label, self.bytes, Direction::Free);
    }
}
