//! Instrumentation points between shared-memory steps.
//!
//! With the `instrument` feature enabled every atomic access performed by the
//! primitives and by tree traversals first calls [`step`], which forwards to a
//! callback installed for the current thread. Schedule explorers, stall
//! injection and stop-the-world sampling are built on this. Without the feature
//! [`step`] compiles to nothing.

/// The kind of shared-memory access about to happen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Step {
    ReadMarked,
    ReadInfo,
    ReadState,
    ReadChild,
    ReadAllFrozen,
    FreezeCas,
    SetAllFrozen,
    Mark,
    SlotCas,
    SetState,
}

#[cfg(feature = "instrument")]
mod imp {
    use super::Step;
    use std::cell::{Cell, RefCell};

    type Callback = Box<dyn FnMut(Step)>;

    thread_local! {
        static ACTIVE: Cell<bool> = const { Cell::new(false) };
        static HOOK: RefCell<Option<Callback>> = const { RefCell::new(None) };
    }

    #[inline]
    pub fn step(s: Step) {
        if !ACTIVE.with(Cell::get) {
            return;
        }
        HOOK.with(|h| {
            // A callback that re-enters the structure must not recurse into itself.
            if let Ok(mut slot) = h.try_borrow_mut() {
                if let Some(f) = slot.as_mut() {
                    f(s);
                }
            }
        });
    }

    /// Removes the current thread's callback when dropped.
    pub struct HookGuard {
        _not_send: std::marker::PhantomData<*const ()>,
    }

    impl Drop for HookGuard {
        fn drop(&mut self) {
            ACTIVE.with(|a| a.set(false));
            HOOK.with(|h| h.borrow_mut().take());
        }
    }

    /// Installs `f` as the current thread's callback, replacing any previous one.
    pub fn install(f: impl FnMut(Step) + 'static) -> HookGuard {
        HOOK.with(|h| *h.borrow_mut() = Some(Box::new(f)));
        ACTIVE.with(|a| a.set(true));
        HookGuard {
            _not_send: std::marker::PhantomData,
        }
    }
}

#[cfg(feature = "instrument")]
pub use imp::{install, step, HookGuard};

#[cfg(not(feature = "instrument"))]
#[inline(always)]
pub fn step(_: Step) {}

#[cfg(all(test, feature = "instrument"))]
mod tests {
    use super::*;
    use std::cell::RefCell;
    use std::rc::Rc;

    #[test]
    fn callback_sees_steps_until_guard_drops() {
        let seen = Rc::new(RefCell::new(Vec::new()));
        let s = seen.clone();
        let g = install(move |st| s.borrow_mut().push(st));
        step(Step::ReadInfo);
        step(Step::SlotCas);
        drop(g);
        step(Step::Mark);
        assert_eq!(*seen.borrow(), vec![Step::ReadInfo, Step::SlotCas]);
    }

    #[test]
    fn hooks_are_per_thread() {
        let hits = Rc::new(RefCell::new(0));
        let h = hits.clone();
        let _g = install(move |_| *h.borrow_mut() += 1);
        std::thread::spawn(|| step(Step::ReadChild)).join().unwrap();
        assert_eq!(*hits.borrow(), 0);
        step(Step::ReadChild);
        assert_eq!(*hits.borrow(), 1);
    }
}
