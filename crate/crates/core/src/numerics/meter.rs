//! Live-scalar memory accounting.
//!
//! Every [`Tensor`](super::tensor::Tensor) registers its float-slot count on
//! construction and deregisters on drop, so peak and cumulative allocation are
//! observable without touching the system allocator. Counts are float slots,
//! not bytes, which keeps the numbers platform-independent and directly
//! comparable across differentiation modes.
//!
//! Allocations carry a class: `Forward` for ordinary values (primals and
//! tangents) and `Tape` for storage retained by the reverse-mode engine. The
//! class is taken from a thread-local scope at allocation time; the reverse
//! engine wraps its recording in [`tape_scope`].
//!
//! Accounting is per-thread. A tensor dropped on a different thread than it
//! was allocated on would be charged to the wrong meter; nothing in this crate
//! moves tensors across threads while metering.

use std::cell::Cell;

/// Attribution class for a tensor allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocClass {
    /// Ordinary values: inputs, op results, dual-number tangents.
    Forward,
    /// Storage held by a reverse-mode tape: saved node outputs and adjoints.
    Tape,
}

#[derive(Debug, Clone, Copy, Default)]
struct Counters {
    live_forward: u64,
    live_tape: u64,
    peak_forward: u64,
    peak_tape: u64,
    peak_all: u64,
    total_forward: u64,
    total_tape: u64,
}

thread_local! {
    static COUNTERS: Cell<Counters> = Cell::new(Counters::default());
    static CLASS: Cell<AllocClass> = const { Cell::new(AllocClass::Forward) };
}

/// Snapshot of the thread's allocation counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemStats {
    /// Float slots in currently live tensors.
    pub live_scalars: u64,
    /// Maximum of `live_scalars` since the last reset.
    pub peak_scalars: u64,
    /// Cumulative float slots ever allocated since the last reset.
    pub total_allocated: u64,
    pub forward_live: u64,
    pub forward_peak: u64,
    pub tape_live: u64,
    pub tape_peak: u64,
    pub tape_total: u64,
}

/// Handle over the current thread's meter.
#[derive(Debug, Default, Clone, Copy)]
pub struct MemMeter;

impl MemMeter {
    pub fn new() -> Self {
        MemMeter
    }

    /// Collapse peaks to the current live counts and zero the cumulative
    /// totals. Live counts are left untouched; they track real tensors.
    pub fn reset(&self) {
        COUNTERS.with(|c| {
            let mut s = c.get();
            s.peak_forward = s.live_forward;
            s.peak_tape = s.live_tape;
            s.peak_all = s.live_forward + s.live_tape;
            s.total_forward = 0;
            s.total_tape = 0;
            c.set(s);
        });
    }

    pub fn stats(&self) -> MemStats {
        COUNTERS.with(|c| {
            let s = c.get();
            MemStats {
                live_scalars: s.live_forward + s.live_tape,
                peak_scalars: s.peak_all,
                total_allocated: s.total_forward + s.total_tape,
                forward_live: s.live_forward,
                forward_peak: s.peak_forward,
                tape_live: s.live_tape,
                tape_peak: s.peak_tape,
                tape_total: s.total_tape,
            }
        })
    }
}

/// Registers `n` float slots against the active class; returns the class so
/// the owner can deregister symmetrically on drop.
pub(crate) fn record_alloc(n: usize) -> AllocClass {
    let class = CLASS.with(Cell::get);
    let n = n as u64;
    COUNTERS.with(|c| {
        let mut s = c.get();
        match class {
            AllocClass::Forward => {
                s.live_forward += n;
                s.total_forward += n;
                s.peak_forward = s.peak_forward.max(s.live_forward);
            }
            AllocClass::Tape => {
                s.live_tape += n;
                s.total_tape += n;
                s.peak_tape = s.peak_tape.max(s.live_tape);
            }
        }
        s.peak_all = s.peak_all.max(s.live_forward + s.live_tape);
        c.set(s);
    });
    class
}

pub(crate) fn record_dealloc(n: usize, class: AllocClass) {
    let n = n as u64;
    COUNTERS.with(|c| {
        let mut s = c.get();
        match class {
            AllocClass::Forward => s.live_forward = s.live_forward.saturating_sub(n),
            AllocClass::Tape => s.live_tape = s.live_tape.saturating_sub(n),
        }
        c.set(s);
    });
}

/// RAII guard that retags allocations with a class until dropped.
#[derive(Debug)]
pub struct ClassGuard {
    prev: AllocClass,
}

impl Drop for ClassGuard {
    fn drop(&mut self) {
        CLASS.with(|c| c.set(self.prev));
    }
}

/// Attribute allocations made while the guard lives to tape storage.
pub fn tape_scope() -> ClassGuard {
    scope(AllocClass::Tape)
}

pub fn scope(class: AllocClass) -> ClassGuard {
    let prev = CLASS.with(|c| c.replace(class));
    ClassGuard { prev }
}
