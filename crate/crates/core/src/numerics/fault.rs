//! Deliberate defects for exercising the verification battery.

use std::cell::Cell;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Cumulative layer norm at frame `t` uses statistics up to frame `t + 1`.
    ClnLookahead,
}

thread_local! {
    static ACTIVE: Cell<Option<Fault>> = const { Cell::new(None) };
}

/// Runs `f` with `fault` active on the current thread.
pub fn with_fault<T>(fault: Fault, f: impl FnOnce() -> T) -> T {
    struct Reset(Option<Fault>);
    impl Drop for Reset {
        fn drop(&mut self) {
            ACTIVE.with(|a| a.set(self.0));
        }
    }
    let _reset = Reset(ACTIVE.with(|a| a.replace(Some(fault))));
    f()
}

pub(crate) fn active(fault: Fault) -> bool {
    ACTIVE.with(|a| a.get() == Some(fault))
}
