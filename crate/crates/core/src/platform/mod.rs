//! The serialized command applier and the operations built on it.
//!
//! Mutations are linearized through one writer lock: the writer clones the
//! state, applies the command to the clone, appends the command and its
//! derived events to the log in one write, and only then publishes the new
//! state. Readers never observe a state whose command is not durable.
//! Nondeterministic inputs are resolved before a command is built, outside
//! the writer lock.

pub mod clock;
pub mod command;
pub mod log;
pub mod state;
pub mod stats;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use clock::{Clock, ManualClock, SystemClock};
pub use command::{apply, Applied, ApplyEnv, Command, DerivedEvent, GenesisConfig, Outcome, TickSummary};
pub use log::{FileLog, LogEntry, LogStore, MemoryLog, StateSnapshot, COMMAND_KIND};
pub use state::PlatformState;
pub use stats::{EndpointRollup, StatsSnapshot};

use crate::auth::Claims;
use crate::canonical::{canonical_value, sha256_hex};
use crate::error::{Error, Result};
use crate::inference::blob::{BlobStore, MemBlobStore, INBOX, OUTBOX};
use crate::inference::dag::{self, DagNodeKind};
use crate::inference::{
    AsyncJob, AsyncState, AsyncTransition, DagSpec, DrainOutcome, DrainResult, EndpointSpec, PredictContext,
    PredictorRegistry, TransformRegistry, DEFAULT_PAYLOAD_LIMIT,
};
use crate::provenance::{GraphFormat, ProvGraph};
use crate::quality::{self, CheckerRegistry, PipelineEnv, PipelineRun, SourceBundle, SourceProvider, StageHook, StubSourceProvider};
use crate::scheduler::{default_state_blob, DatasetFetcher, DoiResolverStub, Job};
use crate::secrets::{self, MasterKey};
use crate::types::{AsyncJobId, DagId, EndpointId, JobId, Millis, ModuleId, RunId, SnapshotId};

#[derive(Clone, Debug)]
pub struct PlatformConfig {
    /// Used only when the log is empty; a recovered log keeps its own.
    pub genesis: GenesisConfig,
    /// Write a full-state snapshot after this many logged commands.
    pub snapshot_every: u64,
    pub payload_limit: usize,
    /// Async jobs executed per drain.
    pub drain_batch: usize,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            genesis: GenesisConfig::default(),
            snapshot_every: 100,
            payload_limit: DEFAULT_PAYLOAD_LIMIT,
            drain_batch: 16,
        }
    }
}

pub type StateBlobFn = dyn Fn(&Job) -> Vec<u8> + Send + Sync;

/// Replaceable collaborators. `fetcher` and `transforms` are consulted during
/// apply and must be deterministic; the rest run before a command is built.
#[derive(Clone)]
pub struct Plugins {
    pub fetcher: Arc<dyn DatasetFetcher>,
    pub sources: Arc<dyn SourceProvider>,
    pub checkers: Arc<CheckerRegistry>,
    pub hook: Option<Arc<dyn StageHook>>,
    pub predictors: Arc<PredictorRegistry>,
    pub transforms: Arc<TransformRegistry>,
    pub state_blob: Arc<StateBlobFn>,
    pub blobs: Arc<dyn BlobStore>,
}

impl Default for Plugins {
    fn default() -> Self {
        Self {
            fetcher: Arc::new(DoiResolverStub),
            sources: Arc::new(StubSourceProvider),
            checkers: Arc::new(CheckerRegistry::with_defaults()),
            hook: None,
            predictors: Arc::new(PredictorRegistry::with_echo_fallback()),
            transforms: Arc::new(TransformRegistry::with_defaults()),
            state_blob: Arc::new(default_state_blob),
            blobs: Arc::new(MemBlobStore::default()),
        }
    }
}

/// Receives each batch of appended entries, in log order, while the writer
/// lock is held. Must not call back into the platform.
pub type Listener = Box<dyn Fn(&[LogEntry]) + Send + Sync>;

struct Writer {
    store: Box<dyn LogStore>,
    next_seq: u64,
    since_snapshot: u64,
    poisoned: Option<String>,
    snapshot_error: Option<String>,
    listener: Option<Listener>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvokeResult {
    pub endpoint: EndpointId,
    pub output: Value,
    pub latency_ms: u64,
    pub cold_start: bool,
    pub replicas: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsyncStatus {
    #[serde(flatten)]
    pub job: AsyncJob,
    pub output: Option<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DagResult {
    pub dag: DagId,
    pub output: Value,
    pub trace: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TickResult {
    #[serde(flatten)]
    pub summary: TickSummary,
    pub drained: Vec<AsyncTransition>,
}

pub struct Platform {
    state: RwLock<PlatformState>,
    writer: Mutex<Writer>,
    history: RwLock<Vec<LogEntry>>,
    clock: Arc<dyn Clock>,
    plugins: Plugins,
    key: MasterKey,
    config: PlatformConfig,
    rng: Mutex<StdRng>,
    busy_modules: Mutex<BTreeSet<ModuleId>>,
    drain_lock: Mutex<()>,
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "predictor panicked".into())
}

impl Platform {
    /// Recovers from `store` (snapshot plus command tail) or starts a fresh
    /// history with a genesis command.
    pub fn open(
        mut store: Box<dyn LogStore>,
        config: PlatformConfig,
        plugins: Plugins,
        clock: Arc<dyn Clock>,
        key: MasterKey,
    ) -> Result<Self> {
        let snapshot = store.read_snapshot()?;
        let entries = store.read_all()?;
        let last_seq = entries.last().map_or(0, |e| e.seq);
        let (mut state, snap_seq) = match snapshot {
            Some(s) => (s.state, s.seq),
            None => (PlatformState::default(), 0),
        };
        if snap_seq > last_seq {
            return Err(Error::Storage(format!(
                "snapshot covers seq {snap_seq} but the log ends at {last_seq}"
            )));
        }
        let env = ApplyEnv {
            fetcher: plugins.fetcher.as_ref(),
            transforms: plugins.transforms.as_ref(),
        };
        let mut replayed = 0u64;
        for e in entries.iter().filter(|e| e.is_command() && e.seq > snap_seq) {
            let cmd: Command = serde_json::from_value(e.payload.clone())
                .map_err(|err| Error::Storage(format!("log seq {}: {err}", e.seq)))?;
            apply(&mut state, &cmd, e.ts, &env)
                .map_err(|err| Error::Storage(format!("replay of seq {} failed: {err}", e.seq)))?;
            replayed += 1;
        }
        let fresh = state.genesis.is_none();
        if fresh && !entries.is_empty() {
            return Err(Error::Storage("log does not start with a genesis command".into()));
        }
        let platform = Self {
            state: RwLock::new(state),
            writer: Mutex::new(Writer {
                store,
                next_seq: last_seq + 1,
                since_snapshot: replayed,
                poisoned: None,
                snapshot_error: None,
                listener: None,
            }),
            history: RwLock::new(entries),
            clock,
            plugins,
            key,
            rng: Mutex::new(StdRng::from_os_rng()),
            busy_modules: Mutex::new(BTreeSet::new()),
            drain_lock: Mutex::new(()),
            config,
        };
        if fresh {
            platform.execute(Command::Genesis {
                config: platform.config.genesis.clone(),
            })?;
        }
        Ok(platform)
    }

    /// An in-memory platform on a manual clock, for tests and tooling.
    pub fn in_memory(plugins: Plugins, clock: Arc<dyn Clock>) -> Self {
        Self::open(
            Box::new(MemoryLog::default()),
            PlatformConfig::default(),
            plugins,
            clock,
            MasterKey::from_bytes([7; 32]),
        )
        .expect("memory log cannot fail")
    }

    pub fn set_rng_seed(&self, seed: u64) {
        *self.rng.lock().expect("rng lock") = StdRng::seed_from_u64(seed);
    }

    pub fn set_listener(&self, listener: Listener) {
        self.writer.lock().expect("writer lock").listener = Some(listener);
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn now(&self) -> Millis {
        self.clock.now_ms().max(self.state.read().expect("state lock").now)
    }

    pub fn read<R>(&self, f: impl FnOnce(&PlatformState) -> R) -> R {
        f(&self.state.read().expect("state lock"))
    }

    pub fn state(&self) -> PlatformState {
        self.read(Clone::clone)
    }

    pub fn last_seq(&self) -> u64 {
        self.writer.lock().expect("writer lock").next_seq - 1
    }

    /// Entries with `seq > since`, in log order.
    pub fn entries_since(&self, since: u64) -> Vec<LogEntry> {
        let history = self.history.read().expect("history lock");
        let start = history.partition_point(|e| e.seq <= since);
        history[start..].to_vec()
    }

    pub fn snapshot_error(&self) -> Option<String> {
        self.writer.lock().expect("writer lock").snapshot_error.clone()
    }

    /// Applies one command. Failed and ineffective commands are not logged.
    pub fn execute(&self, cmd: Command) -> Result<Outcome> {
        let mut w = self.writer.lock().expect("writer lock");
        if let Some(reason) = &w.poisoned {
            return Err(Error::Storage(format!("log writer unavailable after failed append: {reason}")));
        }
        let mut next = self.state.read().expect("state lock").clone();
        let ts = self.clock.now_ms().max(next.now);
        let env = ApplyEnv {
            fetcher: self.plugins.fetcher.as_ref(),
            transforms: self.plugins.transforms.as_ref(),
        };
        let Applied { outcome, events, effective } = apply(&mut next, &cmd, ts, &env)?;
        if !effective {
            return Ok(outcome);
        }
        let seq = w.next_seq;
        let mut entries = Vec::with_capacity(events.len() + 1);
        entries.push(LogEntry {
            seq,
            ts,
            kind: COMMAND_KIND.into(),
            payload: serde_json::to_value(&cmd)?,
        });
        for (i, e) in events.into_iter().enumerate() {
            entries.push(LogEntry {
                seq: seq + 1 + i as u64,
                ts,
                kind: e.kind,
                payload: e.payload,
            });
        }
        if let Err(e) = w.store.append(&entries) {
            w.poisoned = Some(e.to_string());
            return Err(e);
        }
        w.next_seq += entries.len() as u64;
        let snapshot_seq = w.next_seq - 1;
        let snapshot_due = {
            w.since_snapshot += 1;
            w.since_snapshot >= self.config.snapshot_every
        };
        let snapshot_state = snapshot_due.then(|| next.clone());
        *self.state.write().expect("state lock") = next;
        self.history.write().expect("history lock").extend(entries.iter().cloned());
        if let Some(l) = &w.listener {
            l(&entries);
        }
        if let Some(state) = snapshot_state {
            match w.store.write_snapshot(&StateSnapshot { seq: snapshot_seq, state }) {
                Ok(()) => {
                    w.since_snapshot = 0;
                    w.snapshot_error = None;
                }
                Err(e) => w.snapshot_error = Some(e.to_string()),
            }
        }
        Ok(outcome)
    }

    /// Writes a snapshot of the current state immediately.
    pub fn write_snapshot(&self) -> Result<()> {
        let mut w = self.writer.lock().expect("writer lock");
        let state = self.state();
        let seq = w.next_seq - 1;
        w.store.write_snapshot(&StateSnapshot { seq, state })?;
        w.since_snapshot = 0;
        Ok(())
    }

    fn check_payload(&self, payload: &Value) -> Result<Vec<u8>> {
        let bytes = serde_json::to_vec(payload)?;
        if bytes.len() > self.config.payload_limit {
            return Err(Error::PayloadTooLarge {
                size: bytes.len(),
                limit: self.config.payload_limit,
            });
        }
        Ok(bytes)
    }

    // Deployments.

    pub fn submit(&self, spec: crate::scheduler::JobSpec, claims: &Claims) -> Result<JobId> {
        match self.execute(Command::Submit { spec, claims: claims.clone() })? {
            Outcome::JobId(id) => Ok(id),
            other => unreachable!("submit returned {other:?}"),
        }
    }

    pub fn complete(
        &self,
        job: &JobId,
        success: bool,
        metrics: Option<Map<String, Value>>,
        claims: &Claims,
    ) -> Result<Job> {
        match self.execute(Command::Complete {
            job: job.clone(),
            success,
            metrics,
            claims: claims.clone(),
        })? {
            Outcome::Job(j) => Ok(*j),
            other => unreachable!("complete returned {other:?}"),
        }
    }

    pub fn stop(&self, job: &JobId, claims: &Claims) -> Result<Job> {
        match self.execute(Command::Stop { job: job.clone(), claims: claims.clone() })? {
            Outcome::Job(j) => Ok(*j),
            other => unreachable!("stop returned {other:?}"),
        }
    }

    /// Digests the deployment's state blob, then records the snapshot.
    pub fn snapshot(&self, job: &JobId, claims: &Claims) -> Result<SnapshotId> {
        let current = self.read(|s| s.scheduler.check_snapshot(job, claims, &s.federation).cloned())?;
        let digest = sha256_hex((self.plugins.state_blob)(&current).as_slice());
        match self.execute(Command::Snapshot {
            job: job.clone(),
            claims: claims.clone(),
            digest,
        })? {
            Outcome::SnapshotId(id) => Ok(id),
            other => unreachable!("snapshot returned {other:?}"),
        }
    }

    pub fn restore(&self, snapshot: &SnapshotId, claims: &Claims) -> Result<JobId> {
        match self.execute(Command::Restore {
            snapshot: snapshot.clone(),
            claims: claims.clone(),
        })? {
            Outcome::JobId(id) => Ok(id),
            other => unreachable!("restore returned {other:?}"),
        }
    }

    /// Membership sweep, try-me expiry, placement, autoscaling, then one
    /// async drain batch.
    pub fn tick(&self) -> Result<TickResult> {
        let summary = match self.execute(Command::Tick)? {
            Outcome::Tick(s) => s,
            other => unreachable!("tick returned {other:?}"),
        };
        let drained = self.drain_async(self.config.drain_batch)?;
        Ok(TickResult { summary, drained })
    }

    // Secrets.

    pub fn put_secret(&self, owner: &str, path: &str, plaintext: &[u8]) -> Result<()> {
        secrets::validate_path(path)?;
        let sealed = {
            let mut rng = self.rng.lock().expect("rng lock");
            secrets::seal(&self.key, owner, path, plaintext, &mut *rng)?
        };
        self.execute(Command::PutSecret {
            owner: owner.into(),
            path: path.into(),
            sealed,
        })?;
        Ok(())
    }

    pub fn get_secret(&self, owner: &str, path: &str) -> Result<Vec<u8>> {
        self.read(|s| s.secrets.get(&self.key, owner, path))
    }

    pub fn list_secrets(&self, owner: &str, prefix: &str) -> Vec<String> {
        self.read(|s| s.secrets.list(owner, prefix))
    }

    pub fn delete_secret(&self, owner: &str, path: &str) -> Result<()> {
        self.execute(Command::DeleteSecret {
            owner: owner.into(),
            path: path.into(),
        })?;
        Ok(())
    }

    // Quality pipeline.

    /// Runs every stage for `module`. One run per module at a time.
    pub fn run_pipeline(
        &self,
        module: &ModuleId,
        source_ref: &str,
        release: bool,
        bundle: Option<SourceBundle>,
    ) -> Result<PipelineRun> {
        if !self.busy_modules.lock().expect("busy lock").insert(module.clone()) {
            return Err(Error::Busy(format!("a pipeline run for {module} is in progress")));
        }
        let result = self.run_pipeline_locked(module, source_ref, release, bundle);
        self.busy_modules.lock().expect("busy lock").remove(module);
        result
    }

    fn run_pipeline_locked(
        &self,
        module: &ModuleId,
        source_ref: &str,
        release: bool,
        bundle: Option<SourceBundle>,
    ) -> Result<PipelineRun> {
        let begun = match self.execute(Command::BeginPipelineRun {
            module: module.clone(),
            source_ref: source_ref.into(),
            release_requested: release,
        })? {
            Outcome::Run(r) => r,
            other => unreachable!("begin returned {other:?}"),
        };
        let record = self.read(|s| s.catalog.get(module).cloned())?;
        let env = PipelineEnv {
            sources: self.plugins.sources.as_ref(),
            checkers: self.plugins.checkers.as_ref(),
            hook: self.plugins.hook.as_deref(),
        };
        let run = quality::execute(begun.id, &record, source_ref, release, bundle, &env, self.now());
        match self.execute(Command::FinishPipelineRun { run })? {
            Outcome::Run(r) => Ok(*r),
            other => unreachable!("finish returned {other:?}"),
        }
    }

    pub fn pipeline_run(&self, id: &RunId) -> Result<PipelineRun> {
        self.read(|s| s.pipeline_run(id).cloned())
    }

    // Provenance.

    pub fn provenance_graph(&self, module: &ModuleId) -> Result<ProvGraph> {
        self.read(|s| {
            s.catalog.get(module)?;
            s.provenance.build_graph(module)
        })
    }

    pub fn provenance_bytes(&self, module: &ModuleId, format: GraphFormat) -> Result<Vec<u8>> {
        Ok(self.provenance_graph(module)?.serialize(format))
    }

    // Inference.

    pub fn create_endpoint(&self, spec: EndpointSpec, claims: &Claims) -> Result<EndpointId> {
        match self.execute(Command::CreateEndpoint { spec, vo: claims.vo.clone() })? {
            Outcome::EndpointId(id) => Ok(id),
            other => unreachable!("create_endpoint returned {other:?}"),
        }
    }

    pub fn invoke(&self, endpoint: &EndpointId, claims: &Claims, payload: &Value) -> Result<InvokeResult> {
        self.check_payload(payload)?;
        self.read(|s| s.inference.authorize_invoke(endpoint, &claims.vo, claims.role).map(|_| ()))?;
        self.invoke_authorized(endpoint, payload)
    }

    fn invoke_authorized(&self, endpoint: &EndpointId, payload: &Value) -> Result<InvokeResult> {
        let start = match self.execute(Command::InvokeBegin { endpoint: endpoint.clone() })? {
            Outcome::Invoke(s) => s,
            other => unreachable!("invoke_begin returned {other:?}"),
        };
        let t0 = Instant::now();
        let result = self.plugins.predictors.resolve(&start.module).and_then(|f| {
            let ctx = PredictContext {
                module: &start.module,
                image_digest: &start.image_digest,
            };
            catch_unwind(AssertUnwindSafe(|| f(&ctx, payload)))
                .unwrap_or_else(|p| Err(panic_message(p)))
                .map_err(Error::Upstream)
        });
        let latency_ms = t0.elapsed().as_millis() as u64;
        self.execute(Command::InvokeFinish {
            endpoint: endpoint.clone(),
            latency_ms,
            ok: result.is_ok(),
            cold_start: start.cold_start,
        })?;
        Ok(InvokeResult {
            endpoint: endpoint.clone(),
            output: result?,
            latency_ms,
            cold_start: start.cold_start,
            replicas: start.replicas,
        })
    }

    /// Stores the payload in the inbox under its content digest and queues
    /// a job for the next drain.
    pub fn submit_async(&self, endpoint: &EndpointId, claims: &Claims, payload: &Value) -> Result<AsyncJobId> {
        let bytes = self.check_payload(payload)?;
        self.read(|s| s.inference.authorize_invoke(endpoint, &claims.vo, claims.role).map(|_| ()))?;
        let key = sha256_hex(canonical_value(payload).as_bytes());
        self.plugins.blobs.put(INBOX, &key, &bytes)?;
        match self.execute(Command::SubmitAsync {
            endpoint: endpoint.clone(),
            input_ref: key,
        })? {
            Outcome::AsyncJobId(id) => Ok(id),
            other => unreachable!("submit_async returned {other:?}"),
        }
    }

    /// Executes up to `limit` pending async jobs and records the outcomes.
    pub fn drain_async(&self, limit: usize) -> Result<Vec<AsyncTransition>> {
        let _guard = self.drain_lock.lock().expect("drain lock");
        let pending: Vec<(AsyncJobId, String, ModuleId, String)> = self.read(|s| {
            s.inference
                .pending_async(limit)
                .into_iter()
                .filter_map(|j| {
                    let ep = s.inference.endpoint(&j.endpoint).ok()?;
                    Some((j.id.clone(), j.input_ref.clone(), ep.module.clone(), ep.image_digest.clone()))
                })
                .collect()
        });
        if pending.is_empty() {
            return Ok(Vec::new());
        }
        let mut outcomes = Vec::with_capacity(pending.len());
        for (id, input_ref, module, digest) in pending {
            let t0 = Instant::now();
            let output = self
                .plugins
                .blobs
                .get(INBOX, &input_ref)
                .and_then(|b| serde_json::from_slice::<Value>(&b).map_err(Error::from))
                .and_then(|input| {
                    let f = self.plugins.predictors.resolve(&module)?;
                    let ctx = PredictContext {
                        module: &module,
                        image_digest: &digest,
                    };
                    catch_unwind(AssertUnwindSafe(|| f(&ctx, &input)))
                        .unwrap_or_else(|p| Err(panic_message(p)))
                        .map_err(Error::Upstream)
                })
                .and_then(|out| {
                    self.plugins.blobs.put(OUTBOX, id.as_str(), &serde_json::to_vec(&out)?)?;
                    Ok(id.to_string())
                });
            let latency_ms = t0.elapsed().as_millis() as u64;
            let result = match output {
                Ok(output_ref) => DrainResult::Done { output_ref, latency_ms },
                Err(e) => DrainResult::Error {
                    message: e.to_string(),
                    latency_ms,
                },
            };
            outcomes.push(DrainOutcome { id, result });
        }
        match self.execute(Command::DrainAsync { outcomes })? {
            Outcome::Drain(t) => Ok(t),
            other => unreachable!("drain returned {other:?}"),
        }
    }

    /// Cross-VO lookups are reported as missing.
    pub fn async_status(&self, id: &AsyncJobId, claims: &Claims) -> Result<AsyncStatus> {
        let job = self.read(|s| {
            let job = s.inference.async_job(id)?;
            s.inference.authorize_invoke(&job.endpoint, &claims.vo, claims.role)?;
            Ok::<_, Error>(job.clone())
        })
        .map_err(|e| match e {
            Error::Forbidden(_) => e,
            _ => Error::not_found(format!("async job {id}")),
        })?;
        let output = match (&job.state, &job.output_ref) {
            (AsyncState::Done, Some(r)) => Some(serde_json::from_slice(&self.plugins.blobs.get(OUTBOX, r)?)?),
            _ => None,
        };
        Ok(AsyncStatus { job, output })
    }

    pub fn compose(&self, spec: DagSpec, claims: &Claims) -> Result<DagId> {
        match self.execute(Command::ComposeDag { spec, vo: claims.vo.clone() })? {
            Outcome::DagId(id) => Ok(id),
            other => unreachable!("compose returned {other:?}"),
        }
    }

    /// Runs every node in order; endpoint nodes are ordinary invocations.
    pub fn invoke_dag(&self, id: &DagId, claims: &Claims, payload: Value) -> Result<DagResult> {
        self.check_payload(&payload)?;
        let pipeline = self.read(|s| {
            s.inference
                .dag(id)
                .ok()
                .filter(|d| d.vo == claims.vo)
                .cloned()
                .ok_or_else(|| Error::not_found(format!("pipeline {id}")))
        })?;
        for node in pipeline.nodes.values().filter(|n| n.kind == DagNodeKind::Endpoint) {
            self.read(|s| {
                s.inference
                    .authorize_invoke(&EndpointId::from(node.reference.as_str()), &claims.vo, claims.role)
                    .map(|_| ())
            })?;
        }
        let (output, trace) = dag::execute(&pipeline, payload, |_, node, input| match node.kind {
            DagNodeKind::Endpoint => self
                .invoke_authorized(&EndpointId::from(node.reference.as_str()), &input)
                .map(|r| r.output)
                .map_err(|e| e.to_string()),
            DagNodeKind::Transform => {
                let f = self
                    .plugins
                    .transforms
                    .get(&node.reference)
                    .ok_or_else(|| format!("unknown transform `{}`", node.reference))?;
                f(input)
            }
        })?;
        Ok(DagResult {
            dag: id.clone(),
            output,
            trace,
        })
    }

    pub fn stats(&self) -> StatsSnapshot {
        let now = self.clock.now_ms();
        self.read(|s| stats::stats(s, now))
    }
}
