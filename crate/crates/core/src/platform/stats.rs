use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::state::PlatformState;
use crate::federation::ProviderStatus;
use crate::inference::LatencyHistogram;
use crate::ranker::RankEntry;
use crate::scheduler::JobState;
use crate::types::{Capacity, Millis};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EndpointRollup {
    pub endpoints: usize,
    pub replicas: u64,
    pub inflight: u64,
    pub request_count: u64,
    pub error_count: u64,
    pub cold_starts: u64,
    pub replica_ms: u64,
    pub latency: LatencyHistogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub at: Millis,
    /// Distinct owners of non-terminal deployments.
    pub users_active: usize,
    /// Every state is present, zero counts included.
    pub deployments_by_state: BTreeMap<String, usize>,
    pub providers_by_status: BTreeMap<String, usize>,
    pub alive_capacity: Capacity,
    pub alive_free: Capacity,
    pub catalog_size: usize,
    pub vos: usize,
    pub snapshots: usize,
    pub pipeline_runs: usize,
    pub fragments: usize,
    pub secrets: usize,
    pub async_jobs_by_state: BTreeMap<String, usize>,
    pub endpoints: EndpointRollup,
    pub ranking: Vec<RankEntry>,
}

pub fn stats(state: &PlatformState, now: Millis) -> StatsSnapshot {
    let now = now.max(state.now);
    let mut deployments_by_state: BTreeMap<String, usize> =
        JobState::ALL.iter().map(|s| (s.as_str().to_string(), 0)).collect();
    let mut users = BTreeSet::new();
    for job in state.scheduler.jobs() {
        *deployments_by_state.entry(job.state.as_str().to_string()).or_default() += 1;
        if !job.state.is_terminal() {
            users.insert(job.spec.owner.as_str());
        }
    }
    let mut providers_by_status: BTreeMap<String, usize> =
        ProviderStatus::ALL.iter().map(|s| (s.as_str().to_string(), 0)).collect();
    let mut alive_free = Capacity::ZERO;
    for p in state.federation.providers() {
        *providers_by_status.entry(p.status.as_str().to_string()).or_default() += 1;
        if p.status == ProviderStatus::Alive {
            alive_free += p.available();
        }
    }
    let mut async_jobs_by_state: BTreeMap<String, usize> = ["pending", "running", "done", "error"]
        .iter()
        .map(|s| (s.to_string(), 0))
        .collect();
    for j in state.inference.async_jobs() {
        let key = serde_json::to_value(j.state).expect("state serializes");
        *async_jobs_by_state
            .entry(key.as_str().unwrap_or_default().to_string())
            .or_default() += 1;
    }
    let mut endpoints = EndpointRollup::default();
    for ep in state.inference.endpoints() {
        endpoints.endpoints += 1;
        endpoints.replicas += u64::from(ep.replicas);
        endpoints.inflight += ep.inflight;
        endpoints.request_count += ep.metrics.request_count;
        endpoints.error_count += ep.metrics.error_count;
        endpoints.cold_starts += ep.metrics.cold_starts;
        endpoints.replica_ms += ep.replica_ms_at(now);
        endpoints.latency.merge(&ep.metrics.latency);
    }
    let ids: Vec<_> = state.ranker.all_stats().map(|s| s.provider.clone()).collect();
    StatsSnapshot {
        at: now,
        users_active: users.len(),
        deployments_by_state,
        providers_by_status,
        alive_capacity: state.federation.aggregate_capacity(Some(ProviderStatus::Alive)),
        alive_free,
        catalog_size: state.catalog.len(),
        vos: state.federation.vos().count(),
        snapshots: state.scheduler.snapshots().count(),
        pipeline_runs: state.pipeline_runs.len(),
        fragments: state.provenance.fragments().len(),
        secrets: state.secrets.len(),
        async_jobs_by_state,
        endpoints,
        ranking: state.ranker.rank_providers(&ids).unwrap_or_default(),
    }
}
