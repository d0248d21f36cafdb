// SPDX-License-Identifier: Apache-2.0

use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

/// Shared, exhaustible allowance of simulator calls.
///
/// `used` only grows and never passes `limit`; acquisition is all-or-nothing.
#[derive(Debug)]
pub struct Budget {
    limit: u64,
    used: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BudgetSnapshot {
    pub limit: u64,
    pub used: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("budget limit must be positive")]
pub struct ZeroBudget;

impl Budget {
    pub fn new(limit: u64) -> Result<Self, ZeroBudget> {
        if limit == 0 {
            return Err(ZeroBudget);
        }
        Ok(Self {
            limit,
            used: AtomicU64::new(0),
        })
    }

    /// Starts with `used` already consumed (clamped to the limit).
    pub fn with_used(limit: u64, used: u64) -> Result<Self, ZeroBudget> {
        let b = Self::new(limit)?;
        b.used.store(used.min(limit), Ordering::SeqCst);
        Ok(b)
    }

    /// Takes `n` units iff all of them fit.
    pub fn try_acquire(&self, n: u64) -> bool {
        assert!(n >= 1, "budget acquisition needs n >= 1");
        self.used
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |used| {
                used.checked_add(n).filter(|&next| next <= self.limit)
            })
            .is_ok()
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::Acquire)
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.used()
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining() == 0
    }

    pub fn snapshot(&self) -> BudgetSnapshot {
        BudgetSnapshot {
            limit: self.limit,
            used: self.used(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn acquire_examples() {
        let b = Budget::with_used(5, 3).unwrap();
        assert!(b.try_acquire(2));
        assert_eq!(b.used(), 5);

        let b = Budget::with_used(5, 5).unwrap();
        assert!(!b.try_acquire(1));
        assert_eq!(b.used(), 5);

        let b = Budget::with_used(5, 4).unwrap();
        assert!(!b.try_acquire(2));
        assert_eq!(b.used(), 4);
    }

    #[test]
    fn zero_limit_rejected() {
        assert_eq!(Budget::new(0).unwrap_err(), ZeroBudget);
    }

    #[test]
    fn concurrent_acquisition_never_overshoots() {
        let budget = Arc::new(Budget::new(10_007).unwrap());
        let granted: u64 = std::thread::scope(|s| {
            let handles: Vec<_> = (0..16)
                .map(|w| {
                    let budget = budget.clone();
                    s.spawn(move || {
                        let mut got = 0u64;
                        for i in 0..2000u64 {
                            let n = 1 + (i + w) % 3;
                            if budget.try_acquire(n) {
                                got += n;
                            }
                        }
                        got
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).sum()
        });
        assert!(budget.used() <= budget.limit());
        assert_eq!(budget.used(), granted);
    }
}
