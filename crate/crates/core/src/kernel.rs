//! Discrete-event simulation kernel.
//!
//! Events are ordered by `(due, seq)`; `seq` is a per-kernel insertion
//! counter, so events due at the same instant run in the order they were
//! scheduled. [`Kernel::run_until`] executes every event due at or before
//! the target, including events scheduled while it runs, and leaves the
//! clock exactly at the target.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use crate::property::{PropertyError, PropertyHandle, PropertyKey, PropertyRegistry, PropertyValue};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KernelError {
    #[error("time overflow: {now:?} + {delta:?}")]
    Overflow { now: SimTime, delta: SimTime },
    #[error("target {target:?} lies before current time {now:?}")]
    TargetInPast { target: SimTime, now: SimTime },
    #[error("kernel is finalized")]
    Finalized,
    #[error(transparent)]
    Property(#[from] PropertyError),
}

/// Identifier of a scheduled event; equal to its insertion sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

/// Work executed when an event fires. It may schedule further events and
/// read or write properties through the kernel it receives.
pub type Action = Box<dyn FnOnce(&mut Kernel) + Send + 'static>;

struct Scheduled {
    due: SimTime,
    seq: u64,
    action: Action,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.due, self.seq) == (other.due, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // BinaryHeap is a max-heap; invert so the smallest (due, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.due, other.seq).cmp(&(self.due, self.seq))
    }
}

/// One executed event, as recorded when tracing is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub due: SimTime,
    pub id: EventId,
}

pub struct Kernel {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Scheduled>,
    registry: PropertyRegistry,
    finalized: bool,
    executed: u64,
    trace: Option<Vec<TraceEntry>>,
}

impl Default for Kernel {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("now", &self.now)
            .field("pending", &self.queue.len())
            .field("executed", &self.executed)
            .field("properties", &self.registry.len())
            .finish()
    }
}

impl Kernel {
    pub fn new() -> Self {
        Kernel {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            registry: PropertyRegistry::new(),
            finalized: false,
            executed: 0,
            trace: None,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Enqueues `action` at `now() + after`.
    pub fn schedule(&mut self, after: SimTime, action: Action) -> Result<EventId, KernelError> {
        if self.finalized {
            return Err(KernelError::Finalized);
        }
        let due = self.now.checked_add(after).ok_or(KernelError::Overflow { now: self.now, delta: after })?;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Scheduled { due, seq, action });
        Ok(EventId(seq))
    }

    pub fn schedule_fn<F>(&mut self, after: SimTime, f: F) -> Result<EventId, KernelError>
    where
        F: FnOnce(&mut Kernel) + Send + 'static,
    {
        self.schedule(after, Box::new(f))
    }

    /// Executes all events with `due <= target` in `(due, seq)` order and
    /// sets the clock to `target`.
    pub fn run_until(&mut self, target: SimTime) -> Result<(), KernelError> {
        if target < self.now {
            return Err(KernelError::TargetInPast { target, now: self.now });
        }
        while self.queue.peek().is_some_and(|ev| ev.due <= target) {
            let Some(ev) = self.queue.pop() else { break };
            self.now = ev.due;
            self.executed += 1;
            if let Some(trace) = self.trace.as_mut() {
                trace.push(TraceEntry { due: ev.due, id: EventId(ev.seq) });
            }
            (ev.action)(self);
        }
        self.now = target;
        Ok(())
    }

    /// Forbids further scheduling and drops pending events.
    pub fn finalize(&mut self) {
        self.finalized = true;
        self.queue.clear();
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn executed(&self) -> u64 {
        self.executed
    }

    /// Starts recording executed events. Clears any earlier record.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> &[TraceEntry] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn register_property(&mut self, key: &str, initial: PropertyValue) -> Result<PropertyHandle, KernelError> {
        let key = PropertyKey::new(key)?;
        Ok(self.registry.register(key, initial)?)
    }

    pub fn get_property(&self, key: &str) -> Result<&PropertyValue, KernelError> {
        Ok(self.registry.get(key)?)
    }

    pub fn set_property(&mut self, key: &str, value: PropertyValue) -> Result<(), KernelError> {
        Ok(self.registry.set(key, value)?)
    }

    pub fn properties(&self) -> &PropertyRegistry {
        &self.registry
    }

    pub fn properties_mut(&mut self) -> &mut PropertyRegistry {
        &mut self.registry
    }
}
