//! Shared parameter vector `theta` with one set of Adam moments.
//!
//! Workers copy a snapshot into their local `theta'`, compute a rollout
//! gradient and hand it back. Both directions hold the same lock, so a
//! snapshot never mixes two versions and every accepted gradient is applied
//! exactly once.

use std::sync::{Mutex, MutexGuard};

use demotrack_core::optim::{AdamConfig, AdamState};
use demotrack_core::trainer::WorkerKind;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StoreStats {
    /// Incremented once per accepted update; starts at 0.
    pub version: u64,
    pub updates: u64,
    pub imitation_updates: u64,
    pub rl_updates: u64,
    /// Gradients refused for length mismatch or non-finite entries.
    pub rejected: u64,
}

struct Inner {
    params: Vec<f64>,
    moments: AdamState,
    stats: StoreStats,
}

pub struct ParameterStore {
    inner: Mutex<Inner>,
    adam: AdamConfig,
    weight_decay: f64,
}

impl ParameterStore {
    /// `weight_decay` is added only to imitation updates.
    pub fn new(params: Vec<f64>, adam: AdamConfig, weight_decay: f64) -> Self {
        let n = params.len();
        Self {
            inner: Mutex::new(Inner {
                params,
                moments: AdamState::new(n),
                stats: StoreStats::default(),
            }),
            adam,
            weight_decay,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // A panicking worker cannot leave the vector half-written: updates
        // are computed into Adam's buffers and committed without unwinding.
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn len(&self) -> usize {
        self.lock().params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copies the current parameters into `out` and returns their version.
    pub fn snapshot_into(&self, out: &mut [f64]) -> Result<u64> {
        let g = self.lock();
        if out.len() != g.params.len() {
            return Err(Error::Invalid(format!(
                "snapshot buffer has {} entries, store has {}",
                out.len(),
                g.params.len()
            )));
        }
        out.copy_from_slice(&g.params);
        Ok(g.stats.version)
    }

    pub fn snapshot(&self) -> (Vec<f64>, u64) {
        let g = self.lock();
        (g.params.clone(), g.stats.version)
    }

    /// One Adam step with `grads`. Returns the new version, or an error when
    /// the gradient is rejected; rejected gradients leave parameters and
    /// moments untouched and are counted.
    pub fn apply_gradients(&self, grads: &[f64], kind: WorkerKind) -> Result<u64> {
        let wd = match kind {
            WorkerKind::Imitation => self.weight_decay,
            _ => 0.0,
        };
        let mut g = self.lock();
        let inner = &mut *g;
        if let Err(e) = inner
            .moments
            .apply(&self.adam, &mut inner.params, grads, wd)
        {
            inner.stats.rejected += 1;
            return Err(e.into());
        }
        let s = &mut inner.stats;
        s.version += 1;
        s.updates += 1;
        match kind {
            WorkerKind::Imitation => s.imitation_updates += 1,
            WorkerKind::Rl => s.rl_updates += 1,
            WorkerKind::Testing => {}
        }
        Ok(s.version)
    }

    pub fn stats(&self) -> StoreStats {
        self.lock().stats
    }
}
