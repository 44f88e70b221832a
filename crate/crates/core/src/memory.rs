//! Allocation accounting for tensor storage.
//!
//! Every tensor buffer created while an [`ArenaScope`] is open on the current
//! thread is charged to that scope; buffers are credited back when dropped.
//! The scope reports the peak number of concurrently live bytes, which is a
//! deterministic stand-in for activation memory (no dependence on the system
//! allocator or OS page accounting).

use std::cell::RefCell;

#[derive(Debug, Default)]
struct State {
    epoch: u64,
    active: bool,
    live: usize,
    peak: usize,
    allocations: usize,
    budget: Option<usize>,
    exceeded: bool,
}

thread_local! {
    static STATE: RefCell<State> = RefCell::new(State::default());
}

/// Ticket recorded by a buffer charged to a scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Charge {
    epoch: u64,
    bytes: usize,
}

pub(crate) fn charge(bytes: usize) -> Option<Charge> {
    STATE.with(|s| {
        let mut s = s.borrow_mut();
        if !s.active {
            return None;
        }
        s.live += bytes;
        s.allocations += 1;
        if s.live > s.peak {
            s.peak = s.live;
        }
        if let Some(budget) = s.budget {
            if s.live > budget {
                s.exceeded = true;
            }
        }
        Some(Charge { epoch: s.epoch, bytes })
    })
}

pub(crate) fn release(charge: Charge) {
    // try_with: buffers may be dropped during thread teardown
    let _ = STATE.try_with(|s| {
        let mut s = s.borrow_mut();
        if s.active && s.epoch == charge.epoch {
            s.live = s.live.saturating_sub(charge.bytes);
        }
    });
}

/// True when the open scope (if any) has gone over its byte budget.
pub fn budget_exceeded() -> bool {
    STATE.with(|s| {
        let s = s.borrow();
        s.active && s.exceeded
    })
}

/// Guard for one accounting window. Only one scope may be open per thread.
#[derive(Debug)]
pub struct ArenaScope {
    epoch: u64,
}

impl ArenaScope {
    /// Opens a scope; `budget` caps live bytes (exceeding it is reported via
    /// [`budget_exceeded`], which the autodiff tape turns into an error).
    pub fn open(budget: Option<usize>) -> Self {
        STATE.with(|s| {
            let mut s = s.borrow_mut();
            assert!(!s.active, "nested ArenaScope on one thread");
            s.epoch += 1;
            s.active = true;
            s.live = 0;
            s.peak = 0;
            s.allocations = 0;
            s.budget = budget;
            s.exceeded = false;
            ArenaScope { epoch: s.epoch }
        })
    }

    pub fn peak_bytes(&self) -> usize {
        STATE.with(|s| s.borrow().peak)
    }

    pub fn live_bytes(&self) -> usize {
        STATE.with(|s| s.borrow().live)
    }

    pub fn allocations(&self) -> usize {
        STATE.with(|s| s.borrow().allocations)
    }

    pub fn exceeded(&self) -> bool {
        STATE.with(|s| s.borrow().exceeded)
    }
}

impl Drop for ArenaScope {
    fn drop(&mut self) {
        let _ = STATE.try_with(|s| {
            let mut s = s.borrow_mut();
            if s.epoch == self.epoch {
                s.active = false;
                s.budget = None;
                s.exceeded = false;
            }
        });
    }
}
