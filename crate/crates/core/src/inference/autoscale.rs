//! Replica control for serverless endpoints.
//!
//! `desired = clamp(ceil(inflight / per_replica_concurrency), min, max)`.
//! Scale-up is immediate, both on invocation and on tick. Scale-down happens
//! only on tick, only when nothing is in flight and the endpoint has been
//! idle for strictly longer than the cooldown; it goes straight to `min`.

use serde::{Deserialize, Serialize};

use super::Endpoint;
use crate::types::{EndpointId, Millis};

pub const DEFAULT_COOLDOWN_MS: Millis = 120_000;

pub fn desired_replicas(inflight: u64, per_replica_concurrency: u32, min: u32, max: u32) -> u32 {
    debug_assert!(per_replica_concurrency > 0 && min <= max);
    let need = inflight.div_ceil(u64::from(per_replica_concurrency));
    need.clamp(u64::from(min), u64::from(max)) as u32
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleChange {
    pub endpoint: EndpointId,
    pub old: u32,
    pub new: u32,
}

impl Endpoint {
    pub fn desired(&self) -> u32 {
        desired_replicas(
            self.inflight,
            self.per_replica_concurrency,
            self.min_replicas,
            self.max_replicas,
        )
    }

    /// Accumulate replica time up to `now`.
    pub(crate) fn integrate(&mut self, now: Millis) {
        self.metrics.replica_ms = self.replica_ms_at(now);
        self.last_integrated = self.last_integrated.max(now);
    }

    /// Replica time including the not yet integrated span up to `now`.
    pub fn replica_ms_at(&self, now: Millis) -> u64 {
        self.metrics.replica_ms + u64::from(self.replicas) * now.saturating_sub(self.last_integrated)
    }

    pub(crate) fn set_replicas(&mut self, n: u32) {
        self.replicas = n;
        self.metrics.peak_replicas = self.metrics.peak_replicas.max(n);
    }

    /// Leaves the endpoint untouched when no change is due.
    pub(crate) fn autoscale(&mut self, now: Millis, cooldown_ms: Millis) -> Option<ScaleChange> {
        let old = self.replicas;
        let desired = self.desired();
        let new = if desired > old {
            desired
        } else if self.inflight == 0
            && old > self.min_replicas
            && self
                .idle_since
                .is_some_and(|t| now.saturating_sub(t) > cooldown_ms)
        {
            self.min_replicas
        } else {
            return None;
        };
        self.integrate(now);
        self.set_replicas(new);
        Some(ScaleChange {
            endpoint: self.id.clone(),
            old,
            new,
        })
    }
}
