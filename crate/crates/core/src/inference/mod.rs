//! Serverless inference: endpoints over a uniform predictor contract,
//! invocation accounting, asynchronous jobs and composed pipelines.
//!
//! An invocation is a begin/finish pair. Begin raises `inflight`, counts the
//! request, performs a cold start if the endpoint sits at zero replicas and
//! scales up reactively. Finish records latency and outcome. Predictors run
//! between the two, outside the state lock.

pub mod autoscale;
pub mod blob;
pub mod dag;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::types::{AsyncJobId, DagId, EndpointId, IdCounter, Millis, ModuleId, Role, VoId};

pub use autoscale::{desired_replicas, ScaleChange, DEFAULT_COOLDOWN_MS};
pub use dag::{DagNode, DagNodeKind, DagSpec, PipelineDag, TransformRegistry};

pub const DEFAULT_PAYLOAD_LIMIT: usize = 8 * 1024 * 1024;

/// Latency label added to an invocation that triggered a cold start.
pub const COLD_START_LATENCY_MS: u64 = 500;

pub const LATENCY_BUCKETS_MS: [u64; 5] = [10, 50, 100, 500, 1000];

/// Upper-inclusive buckets; `counts` has one extra overflow slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyHistogram {
    pub buckets_ms: Vec<u64>,
    pub counts: Vec<u64>,
}

impl Default for LatencyHistogram {
    fn default() -> Self {
        Self {
            buckets_ms: LATENCY_BUCKETS_MS.to_vec(),
            counts: vec![0; LATENCY_BUCKETS_MS.len() + 1],
        }
    }
}

impl LatencyHistogram {
    pub fn observe(&mut self, latency_ms: u64) {
        let idx = self
            .buckets_ms
            .iter()
            .position(|b| latency_ms <= *b)
            .unwrap_or(self.buckets_ms.len());
        self.counts[idx] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &LatencyHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageMetrics {
    pub request_count: u64,
    pub error_count: u64,
    pub cold_starts: u64,
    pub latency: LatencyHistogram,
    pub replica_ms: u64,
    pub peak_replicas: u32,
}

impl UsageMetrics {
    pub fn replica_seconds(&self) -> f64 {
        self.replica_ms as f64 / 1000.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub module: ModuleId,
    #[serde(default)]
    pub min_replicas: u32,
    pub max_replicas: u32,
    pub per_replica_concurrency: u32,
    /// Demo-tier tokens may invoke this endpoint.
    #[serde(default)]
    pub public_tryme: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub id: EndpointId,
    pub module: ModuleId,
    pub vo: VoId,
    pub image_digest: String,
    pub min_replicas: u32,
    pub max_replicas: u32,
    pub per_replica_concurrency: u32,
    pub replicas: u32,
    pub inflight: u64,
    pub idle_since: Option<Millis>,
    pub stale: bool,
    pub public_tryme: bool,
    pub metrics: UsageMetrics,
    pub created_at: Millis,
    pub last_integrated: Millis,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvokeStart {
    pub endpoint: EndpointId,
    pub module: ModuleId,
    pub image_digest: String,
    pub cold_start: bool,
    pub replicas: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsyncState {
    Pending,
    Running,
    Done,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsyncJob {
    pub id: AsyncJobId,
    pub endpoint: EndpointId,
    pub input_ref: String,
    pub output_ref: Option<String>,
    pub state: AsyncState,
    pub error: Option<String>,
    pub submitted_at: Millis,
    pub finished_at: Option<Millis>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DrainResult {
    Done { output_ref: String, latency_ms: u64 },
    Error { message: String, latency_ms: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrainOutcome {
    pub id: AsyncJobId,
    pub result: DrainResult,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsyncTransition {
    pub id: AsyncJobId,
    pub from: AsyncState,
    pub to: AsyncState,
}

pub struct PredictContext<'a> {
    pub module: &'a ModuleId,
    pub image_digest: &'a str,
}

pub type PredictFn = dyn Fn(&PredictContext<'_>, &Value) -> std::result::Result<Value, String> + Send + Sync;

/// The shipped default predictor.
pub fn echo_predictor(ctx: &PredictContext<'_>, payload: &Value) -> std::result::Result<Value, String> {
    Ok(json!({ "echo": payload, "digest": ctx.image_digest }))
}

#[derive(Clone, Default)]
pub struct PredictorRegistry {
    by_module: BTreeMap<ModuleId, Arc<PredictFn>>,
    fallback: Option<Arc<PredictFn>>,
}

impl std::fmt::Debug for PredictorRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PredictorRegistry")
            .field("modules", &self.by_module.keys().collect::<Vec<_>>())
            .field("fallback", &self.fallback.is_some())
            .finish()
    }
}

impl PredictorRegistry {
    /// Every module without its own predictor gets the echo predictor.
    pub fn with_echo_fallback() -> Self {
        Self {
            by_module: BTreeMap::new(),
            fallback: Some(Arc::new(echo_predictor)),
        }
    }

    pub fn register<F>(&mut self, module: ModuleId, f: F) -> Result<()>
    where
        F: Fn(&PredictContext<'_>, &Value) -> std::result::Result<Value, String> + Send + Sync + 'static,
    {
        if self.by_module.contains_key(&module) {
            return Err(Error::Conflict(format!("predictor for {module}")));
        }
        self.by_module.insert(module, Arc::new(f));
        Ok(())
    }

    pub fn resolve(&self, module: &ModuleId) -> Result<Arc<PredictFn>> {
        self.by_module
            .get(module)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| Error::NotImplemented(format!("no predictor registered for {module}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceState {
    endpoints: BTreeMap<EndpointId, Endpoint>,
    async_jobs: BTreeMap<AsyncJobId, AsyncJob>,
    dags: BTreeMap<DagId, PipelineDag>,
    endpoint_ids: IdCounter,
    async_ids: IdCounter,
    dag_ids: IdCounter,
    pub cooldown_ms: Millis,
}

impl Default for InferenceState {
    fn default() -> Self {
        Self {
            endpoints: BTreeMap::new(),
            async_jobs: BTreeMap::new(),
            dags: BTreeMap::new(),
            endpoint_ids: IdCounter::default(),
            async_ids: IdCounter::default(),
            dag_ids: IdCounter::default(),
            cooldown_ms: DEFAULT_COOLDOWN_MS,
        }
    }
}

impl InferenceState {
    pub fn create_endpoint(&mut self, spec: EndpointSpec, vo: &str, catalog: &Catalog, now: Millis) -> Result<EndpointId> {
        let record = catalog
            .get(&spec.module)
            .ok()
            .filter(|r| r.visibility.includes(vo))
            .ok_or_else(|| Error::validation(format!("unknown module {}", spec.module)))?;
        let image_digest = record.image_digest.clone().ok_or_else(|| {
            Error::invalid_state(format!("module {} has no successful build", spec.module))
        })?;
        if spec.min_replicas > spec.max_replicas {
            return Err(Error::validation(format!(
                "min_replicas {} exceeds max_replicas {}",
                spec.min_replicas, spec.max_replicas
            )));
        }
        if spec.max_replicas == 0 {
            return Err(Error::validation("max_replicas must be at least 1"));
        }
        if spec.per_replica_concurrency == 0 {
            return Err(Error::validation("per_replica_concurrency must be positive"));
        }
        let id = EndpointId::from_seq(self.endpoint_ids.next_seq());
        let metrics = UsageMetrics {
            peak_replicas: spec.min_replicas,
            ..Default::default()
        };
        self.endpoints.insert(
            id.clone(),
            Endpoint {
                id: id.clone(),
                module: spec.module,
                vo: vo.to_string(),
                image_digest,
                min_replicas: spec.min_replicas,
                max_replicas: spec.max_replicas,
                per_replica_concurrency: spec.per_replica_concurrency,
                replicas: spec.min_replicas,
                inflight: 0,
                idle_since: Some(now),
                stale: false,
                public_tryme: spec.public_tryme,
                metrics,
                created_at: now,
                last_integrated: now,
            },
        );
        Ok(id)
    }

    pub fn endpoint(&self, id: &EndpointId) -> Result<&Endpoint> {
        self.endpoints
            .get(id)
            .ok_or_else(|| Error::not_found(format!("endpoint {id}")))
    }

    fn endpoint_mut(&mut self, id: &EndpointId) -> Result<&mut Endpoint> {
        self.endpoints
            .get_mut(id)
            .ok_or_else(|| Error::not_found(format!("endpoint {id}")))
    }

    pub fn endpoints(&self) -> impl Iterator<Item = &Endpoint> {
        self.endpoints.values()
    }

    /// Endpoints are private to their VO; demo tier needs `public_tryme`.
    pub fn authorize_invoke(&self, id: &EndpointId, vo: &str, role: Role) -> Result<&Endpoint> {
        let ep = self.endpoint(id)?;
        if ep.vo != vo {
            return Err(Error::not_found(format!("endpoint {id}")));
        }
        if role == Role::Demo && !ep.public_tryme {
            return Err(Error::forbidden("demo access tier may only invoke try-me endpoints"));
        }
        Ok(ep)
    }

    pub fn begin_invoke(&mut self, id: &EndpointId, now: Millis) -> Result<InvokeStart> {
        let ep = self.endpoint_mut(id)?;
        ep.integrate(now);
        ep.inflight += 1;
        ep.metrics.request_count += 1;
        ep.idle_since = None;
        let cold_start = ep.replicas == 0;
        if cold_start {
            ep.metrics.cold_starts += 1;
            ep.set_replicas(1);
        }
        let desired = ep.desired();
        if desired > ep.replicas {
            ep.set_replicas(desired);
        }
        Ok(InvokeStart {
            endpoint: ep.id.clone(),
            module: ep.module.clone(),
            image_digest: ep.image_digest.clone(),
            cold_start,
            replicas: ep.replicas,
        })
    }

    pub fn finish_invoke(&mut self, id: &EndpointId, latency_ms: u64, ok: bool, cold_start: bool, now: Millis) -> Result<()> {
        let ep = self.endpoint_mut(id)?;
        if ep.inflight == 0 {
            return Err(Error::invalid_state(format!("endpoint {id} has no invocation in flight")));
        }
        ep.integrate(now);
        ep.inflight -= 1;
        let label = if cold_start { latency_ms + COLD_START_LATENCY_MS } else { latency_ms };
        ep.metrics.latency.observe(label);
        if !ok {
            ep.metrics.error_count += 1;
        }
        if ep.inflight == 0 {
            ep.idle_since = Some(now);
        }
        Ok(())
    }

    pub fn autoscale_tick(&mut self, now: Millis) -> Vec<ScaleChange> {
        let cooldown = self.cooldown_ms;
        self.endpoints
            .values_mut()
            .filter_map(|ep| ep.autoscale(now, cooldown))
            .collect()
    }

    /// Marks endpoints of `module` stale. Returns how many changed.
    pub fn mark_stale(&mut self, module: &ModuleId) -> usize {
        let mut n = 0;
        for ep in self.endpoints.values_mut().filter(|e| &e.module == module) {
            if !ep.stale {
                ep.stale = true;
                n += 1;
            }
        }
        n
    }

    pub fn submit_async(&mut self, endpoint: &EndpointId, input_ref: String, now: Millis) -> Result<AsyncJobId> {
        self.endpoint(endpoint)?;
        let id = AsyncJobId::from_seq(self.async_ids.next_seq());
        self.async_jobs.insert(
            id.clone(),
            AsyncJob {
                id: id.clone(),
                endpoint: endpoint.clone(),
                input_ref,
                output_ref: None,
                state: AsyncState::Pending,
                error: None,
                submitted_at: now,
                finished_at: None,
            },
        );
        Ok(id)
    }

    pub fn async_job(&self, id: &AsyncJobId) -> Result<&AsyncJob> {
        self.async_jobs
            .get(id)
            .ok_or_else(|| Error::not_found(format!("async job {id}")))
    }

    pub fn async_jobs(&self) -> impl Iterator<Item = &AsyncJob> {
        self.async_jobs.values()
    }

    /// Oldest pending jobs, at most `limit`.
    pub fn pending_async(&self, limit: usize) -> Vec<&AsyncJob> {
        self.async_jobs
            .values()
            .filter(|j| j.state == AsyncState::Pending)
            .take(limit)
            .collect()
    }

    /// Apply precomputed outcomes. Outcomes for jobs no longer pending are
    /// ignored.
    pub fn apply_drain(&mut self, outcomes: &[DrainOutcome], now: Millis) -> Vec<AsyncTransition> {
        let mut transitions = Vec::new();
        for o in outcomes {
            let Some(job) = self.async_jobs.get_mut(&o.id) else { continue };
            if job.state != AsyncState::Pending {
                continue;
            }
            transitions.push(AsyncTransition {
                id: o.id.clone(),
                from: AsyncState::Pending,
                to: AsyncState::Running,
            });
            let (to, latency, ok) = match &o.result {
                DrainResult::Done { output_ref, latency_ms } => {
                    job.output_ref = Some(output_ref.clone());
                    (AsyncState::Done, *latency_ms, true)
                }
                DrainResult::Error { message, latency_ms } => {
                    job.error = Some(message.clone());
                    (AsyncState::Error, *latency_ms, false)
                }
            };
            job.state = to;
            job.finished_at = Some(now);
            transitions.push(AsyncTransition {
                id: o.id.clone(),
                from: AsyncState::Running,
                to,
            });
            if let Some(ep) = self.endpoints.get_mut(&job.endpoint) {
                ep.metrics.request_count += 1;
                ep.metrics.latency.observe(latency);
                if !ok {
                    ep.metrics.error_count += 1;
                }
            }
        }
        transitions
    }

    pub fn compose(&mut self, spec: DagSpec, vo: &str, transforms: &TransformRegistry) -> Result<DagId> {
        let (order, sink) = dag::validate(&spec, transforms, |r| {
            let id = EndpointId::from(r);
            match self.endpoints.get(&id) {
                Some(ep) if ep.vo == vo => Ok(()),
                _ => Err(Error::not_found(format!("endpoint {r} is not visible to VO {vo}"))),
            }
        })?;
        let id = DagId::from_seq(self.dag_ids.next_seq());
        self.dags.insert(
            id.clone(),
            PipelineDag {
                id: id.clone(),
                vo: vo.to_string(),
                nodes: spec.nodes,
                edges: spec.edges,
                order,
                sink,
            },
        );
        Ok(id)
    }

    pub fn dag(&self, id: &DagId) -> Result<&PipelineDag> {
        self.dags
            .get(id)
            .ok_or_else(|| Error::not_found(format!("pipeline {id}")))
    }

    pub fn dags(&self) -> impl Iterator<Item = &PipelineDag> {
        self.dags.values()
    }
}
