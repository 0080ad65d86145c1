//! Commands and the deterministic applier.
//!
//! A command carries every value that is not a pure function of the state:
//! sealed secrets, pipeline results, async outcomes, measured latencies and
//! snapshot digests are all computed before the command is logged. Applying
//! a command is therefore a pure function of (state, command, ts), which is
//! what log replay relies on. A command that fails leaves the state
//! untouched and is not logged.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::state::PlatformState;
use crate::auth::Claims;
use crate::catalog::{ModuleRecord, RecordKind, Visibility};
use crate::error::{Error, Result};
use crate::federation::{MembershipConfig, MembershipTransition, ProviderSpec, ProviderStatus, SlaSpec, VirtualOrganization};
use crate::inference::{AsyncTransition, DagSpec, DrainOutcome, EndpointSpec, InvokeStart, ScaleChange, TransformRegistry};
use crate::provenance::FragmentSource;
use crate::quality::{PipelineRun, Stage, StageName, StageStatus};
use crate::scheduler::{DatasetFetcher, Job, JobSpec, SchedulerConfig, SchedulerEvent, TickReport};
use crate::secrets::Sealed;
use crate::types::{
    AsyncJobId, Capacity, DagId, EndpointId, FragmentId, JobId, Millis, ModuleId, ProviderId, Role, RunId, SlaId,
    SnapshotId, UserId, VoId,
};

/// Parameters fixed when a platform's history starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenesisConfig {
    pub platform_uri: String,
    pub membership: MembershipConfig,
    pub scheduler: SchedulerConfig,
    pub ranker_window: usize,
    pub ranker_tau_s: f64,
    pub autoscale_cooldown_ms: Millis,
}

impl Default for GenesisConfig {
    fn default() -> Self {
        Self {
            platform_uri: crate::catalog::DEFAULT_PLATFORM_URI.to_string(),
            membership: MembershipConfig::default(),
            scheduler: SchedulerConfig::default(),
            ranker_window: crate::ranker::DEFAULT_WINDOW_SIZE,
            ranker_tau_s: crate::ranker::DEFAULT_TAU_S,
            autoscale_cooldown_ms: crate::inference::DEFAULT_COOLDOWN_MS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    Genesis { config: GenesisConfig },
    RegisterProvider { spec: ProviderSpec },
    Heartbeat { provider: ProviderId, free: Capacity },
    SweepMembership,
    RegisterVo { vo: VirtualOrganization },
    SetMember { vo: VoId, user: UserId, role: Role, admin: bool },
    UpsertSla { spec: SlaSpec },
    RegisterModule { kind: RecordKind, metadata: Value, visibility: Visibility },
    UpdateModule { id: ModuleId, metadata: Value },
    Submit { spec: JobSpec, claims: Claims },
    /// Membership sweep, try-me expiry, placement and autoscaling.
    Tick,
    ScheduleTick,
    ExpireTryme,
    AutoscaleTick,
    Complete { job: JobId, success: bool, metrics: Option<Map<String, Value>>, claims: Claims },
    Stop { job: JobId, claims: Claims },
    Snapshot { job: JobId, claims: Claims, digest: String },
    Restore { snapshot: SnapshotId, claims: Claims },
    PutSecret { owner: UserId, path: String, sealed: Sealed },
    DeleteSecret { owner: UserId, path: String },
    BeginPipelineRun { module: ModuleId, source_ref: String, release_requested: bool },
    FinishPipelineRun { run: PipelineRun },
    IngestFragment { module: ModuleId, source: FragmentSource, payload: Value },
    CreateEndpoint { spec: EndpointSpec, vo: VoId },
    InvokeBegin { endpoint: EndpointId },
    InvokeFinish { endpoint: EndpointId, latency_ms: u64, ok: bool, cold_start: bool },
    SubmitAsync { endpoint: EndpointId, input_ref: String },
    DrainAsync { outcomes: Vec<DrainOutcome> },
    ComposeDag { spec: DagSpec, vo: VoId },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Genesis { .. } => "genesis",
            Command::RegisterProvider { .. } => "register_provider",
            Command::Heartbeat { .. } => "heartbeat",
            Command::SweepMembership => "sweep_membership",
            Command::RegisterVo { .. } => "register_vo",
            Command::SetMember { .. } => "set_member",
            Command::UpsertSla { .. } => "upsert_sla",
            Command::RegisterModule { .. } => "register_module",
            Command::UpdateModule { .. } => "update_module",
            Command::Submit { .. } => "submit",
            Command::Tick => "tick",
            Command::ScheduleTick => "schedule_tick",
            Command::ExpireTryme => "expire_tryme",
            Command::AutoscaleTick => "autoscale_tick",
            Command::Complete { .. } => "complete",
            Command::Stop { .. } => "stop",
            Command::Snapshot { .. } => "snapshot",
            Command::Restore { .. } => "restore",
            Command::PutSecret { .. } => "put_secret",
            Command::DeleteSecret { .. } => "delete_secret",
            Command::BeginPipelineRun { .. } => "begin_pipeline_run",
            Command::FinishPipelineRun { .. } => "finish_pipeline_run",
            Command::IngestFragment { .. } => "ingest_fragment",
            Command::CreateEndpoint { .. } => "create_endpoint",
            Command::InvokeBegin { .. } => "invoke_begin",
            Command::InvokeFinish { .. } => "invoke_finish",
            Command::SubmitAsync { .. } => "submit_async",
            Command::DrainAsync { .. } => "drain_async",
            Command::ComposeDag { .. } => "compose_dag",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickSummary {
    pub membership: Vec<MembershipTransition>,
    pub expired: Vec<JobId>,
    pub schedule: TickReport,
    pub scaled: Vec<ScaleChange>,
}

impl TickSummary {
    pub fn is_empty(&self) -> bool {
        self.membership.is_empty() && self.expired.is_empty() && self.schedule.is_empty() && self.scaled.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Outcome {
    Unit,
    ProviderId(ProviderId),
    ProviderStatus(ProviderStatus),
    SlaId(SlaId),
    ModuleId(ModuleId),
    Record(Box<ModuleRecord>),
    JobId(JobId),
    Job(Box<Job>),
    Tick(TickSummary),
    SnapshotId(SnapshotId),
    Run(Box<PipelineRun>),
    FragmentId(FragmentId),
    EndpointId(EndpointId),
    Invoke(InvokeStart),
    AsyncJobId(AsyncJobId),
    Drain(Vec<AsyncTransition>),
    DagId(DagId),
}

/// A derived event, logged right after the command that caused it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedEvent {
    pub kind: String,
    pub payload: Value,
}

impl DerivedEvent {
    fn new(kind: &str, payload: impl Serialize) -> Self {
        Self {
            kind: format!("event.{kind}"),
            payload: serde_json::to_value(payload).expect("events serialize"),
        }
    }
}

/// Deterministic plugins consulted during apply. They must behave the same
/// on replay as they did when the command was first applied.
pub struct ApplyEnv<'a> {
    pub fetcher: &'a dyn DatasetFetcher,
    pub transforms: &'a TransformRegistry,
}

pub struct Applied {
    pub outcome: Outcome,
    pub events: Vec<DerivedEvent>,
    /// False for a tick that changed nothing; such ticks are not logged.
    pub effective: bool,
}

fn scheduler_events(events: Vec<SchedulerEvent>, out: &mut Vec<DerivedEvent>, state: &mut PlatformState) {
    for e in events {
        match e {
            SchedulerEvent::Transition(t) => {
                let terminal = t.to.is_terminal().then(|| t.job_id.clone());
                out.push(DerivedEvent::new("job", &t));
                if let Some(job) = terminal {
                    let count = state.secrets.cascade_delete_deployment(&job);
                    if count > 0 {
                        out.push(DerivedEvent::new("secrets_cascade", json!({"job_id": job, "count": count})));
                    }
                }
            }
            SchedulerEvent::SlowDeploy { .. } => out.push(DerivedEvent::new("notification", &e)),
            SchedulerEvent::Sidecar { .. } => out.push(DerivedEvent::new("sidecar", &e)),
        }
    }
}

fn validate_metrics(metrics: &Option<Map<String, Value>>) -> Result<()> {
    if let Some(m) = metrics {
        if m.is_empty() {
            return Err(Error::validation("metrics must not be empty when given"));
        }
        if let Some((k, _)) = m.iter().find(|(_, v)| !(v.is_number() || v.is_string())) {
            return Err(Error::validation(format!("metric `{k}` must be a number or string")));
        }
    }
    Ok(())
}

fn fragment_event(module: &ModuleId, id: &FragmentId, source: FragmentSource) -> DerivedEvent {
    DerivedEvent::new("fragment", json!({"module": module, "fragment": id, "source": source}))
}

pub fn apply(state: &mut PlatformState, cmd: &Command, ts: Millis, env: &ApplyEnv<'_>) -> Result<Applied> {
    let mut events = Vec::new();
    let mut effective = true;
    let outcome = match cmd {
        Command::Genesis { config } => {
            if state.genesis.is_some() {
                return Err(Error::invalid_state("platform history already started"));
            }
            *state = PlatformState::from_genesis(config.clone());
            Outcome::Unit
        }
        Command::RegisterProvider { spec } => {
            let id = state.federation.register_provider(spec.clone(), ts)?;
            state.ranker.track(&id);
            Outcome::ProviderId(id)
        }
        Command::Heartbeat { provider, free } => {
            let before = state.federation.provider(provider)?.status;
            let status = state.federation.heartbeat(provider, ts, *free)?;
            if before != status {
                events.push(DerivedEvent::new(
                    "membership",
                    MembershipTransition { provider: provider.clone(), from: before, to: status },
                ));
            }
            Outcome::ProviderStatus(status)
        }
        Command::SweepMembership => {
            let t = state.federation.sweep_membership(ts);
            effective = !t.is_empty();
            events.extend(t.iter().map(|t| DerivedEvent::new("membership", t)));
            Outcome::Tick(TickSummary { membership: t, ..Default::default() })
        }
        Command::RegisterVo { vo } => {
            state.federation.register_vo(vo.clone())?;
            Outcome::Unit
        }
        Command::SetMember { vo, user, role, admin } => {
            state.federation.set_member(vo, user, *role, *admin)?;
            Outcome::Unit
        }
        Command::UpsertSla { spec } => Outcome::SlaId(state.federation.upsert_sla(spec.clone())?),
        Command::RegisterModule { kind, metadata, visibility } => {
            let id = state.catalog.register(*kind, metadata, visibility.clone(), ts)?;
            let snapshot = state.catalog.get(&id)?.metadata.to_value();
            let frag = state
                .provenance
                .ingest(id.clone(), FragmentSource::Catalog, json!({ "metadata": snapshot }), ts)?;
            events.push(fragment_event(&id, &frag, FragmentSource::Catalog));
            Outcome::ModuleId(id)
        }
        Command::UpdateModule { id, metadata } => {
            let record = state.catalog.update(id, metadata, ts)?.clone();
            let frag = state.provenance.ingest(
                id.clone(),
                FragmentSource::Catalog,
                json!({ "metadata": record.metadata.to_value() }),
                ts,
            )?;
            events.push(fragment_event(id, &frag, FragmentSource::Catalog));
            Outcome::Record(Box::new(record))
        }
        Command::Submit { spec, claims } => {
            let mut sev = Vec::new();
            let id = state
                .scheduler
                .submit(spec.clone(), claims, &state.federation, &state.catalog, ts, &mut sev)?;
            scheduler_events(sev, &mut events, state);
            Outcome::JobId(id)
        }
        Command::Tick => {
            let membership = state.federation.sweep_membership(ts);
            events.extend(membership.iter().map(|t| DerivedEvent::new("membership", t)));
            let mut sev = Vec::new();
            let expired = state
                .scheduler
                .expire_tryme(&mut state.federation, ts, &mut sev)
                .into_iter()
                .map(|j| j.id)
                .collect();
            let schedule = state.scheduler.schedule_tick(
                &mut state.federation,
                &mut state.ranker,
                env.fetcher,
                ts,
                &mut sev,
            );
            scheduler_events(sev, &mut events, state);
            let scaled = state.inference.autoscale_tick(ts);
            events.extend(scaled.iter().map(|c| DerivedEvent::new("autoscale", c)));
            let summary = TickSummary { membership, expired, schedule, scaled };
            effective = !summary.is_empty();
            Outcome::Tick(summary)
        }
        Command::ScheduleTick => {
            let mut sev = Vec::new();
            let schedule = state.scheduler.schedule_tick(
                &mut state.federation,
                &mut state.ranker,
                env.fetcher,
                ts,
                &mut sev,
            );
            scheduler_events(sev, &mut events, state);
            effective = !schedule.is_empty();
            Outcome::Tick(TickSummary { schedule, ..Default::default() })
        }
        Command::ExpireTryme => {
            let mut sev = Vec::new();
            let expired: Vec<JobId> = state
                .scheduler
                .expire_tryme(&mut state.federation, ts, &mut sev)
                .into_iter()
                .map(|j| j.id)
                .collect();
            scheduler_events(sev, &mut events, state);
            effective = !expired.is_empty();
            Outcome::Tick(TickSummary { expired, ..Default::default() })
        }
        Command::AutoscaleTick => {
            let scaled = state.inference.autoscale_tick(ts);
            events.extend(scaled.iter().map(|c| DerivedEvent::new("autoscale", c)));
            effective = !scaled.is_empty();
            Outcome::Tick(TickSummary { scaled, ..Default::default() })
        }
        Command::Complete { job, success, metrics, claims } => {
            validate_metrics(metrics)?;
            let current = state.scheduler.job(job)?;
            state.scheduler.authorize_owner_or_admin(current, claims, &state.federation)?;
            let mut sev = Vec::new();
            let done = state.scheduler.complete(
                job,
                *success,
                &mut state.federation,
                &mut state.ranker,
                ts,
                &mut sev,
            )?;
            scheduler_events(sev, &mut events, state);
            if *success {
                let frag = state.provenance.ingest(
                    done.spec.module.clone(),
                    FragmentSource::Training,
                    json!({
                        "job_id": done.id,
                        "provider": done.provider,
                        "resources": done.spec.resources,
                        "owner": done.spec.owner,
                    }),
                    ts,
                )?;
                events.push(fragment_event(&done.spec.module, &frag, FragmentSource::Training));
            }
            if let Some(m) = metrics {
                let frag = state.provenance.ingest(
                    done.spec.module.clone(),
                    FragmentSource::Tracking,
                    json!({ "job_id": done.id, "metrics": m }),
                    ts,
                )?;
                events.push(fragment_event(&done.spec.module, &frag, FragmentSource::Tracking));
            }
            Outcome::Job(Box::new(done))
        }
        Command::Stop { job, claims } => {
            let mut sev = Vec::new();
            let stopped = state.scheduler.stop(job, claims, &mut state.federation, ts, &mut sev)?;
            scheduler_events(sev, &mut events, state);
            Outcome::Job(Box::new(stopped))
        }
        Command::Snapshot { job, claims, digest } => Outcome::SnapshotId(state.scheduler.snapshot(
            job,
            claims,
            &state.federation,
            digest.clone(),
            ts,
        )?),
        Command::Restore { snapshot, claims } => {
            let mut sev = Vec::new();
            let id = state.scheduler.restore(
                snapshot,
                claims,
                &state.federation,
                &state.catalog,
                ts,
                &mut sev,
            )?;
            scheduler_events(sev, &mut events, state);
            Outcome::JobId(id)
        }
        Command::PutSecret { owner, path, sealed } => {
            state.secrets.put_sealed(owner, path, sealed.clone(), ts)?;
            Outcome::Unit
        }
        Command::DeleteSecret { owner, path } => {
            state.secrets.delete(owner, path)?;
            Outcome::Unit
        }
        Command::BeginPipelineRun { module, source_ref, release_requested } => {
            state.catalog.get(module)?;
            if source_ref.is_empty() {
                return Err(Error::validation("source_ref must not be empty"));
            }
            let id = RunId::from_seq(state.run_ids.next_seq());
            let run = PipelineRun {
                id: id.clone(),
                module: module.clone(),
                source_ref: source_ref.clone(),
                stages: StageName::ORDER
                    .iter()
                    .map(|&name| Stage {
                        name,
                        status: StageStatus::Pending,
                        detail: String::new(),
                        started: None,
                        ended: None,
                    })
                    .collect(),
                release_requested: *release_requested,
                build_digest: None,
                minted_id: None,
            };
            state.pipeline_runs.insert(id, run.clone());
            Outcome::Run(Box::new(run))
        }
        Command::FinishPipelineRun { run } => {
            let slot = state
                .pipeline_runs
                .get(&run.id)
                .ok_or_else(|| Error::not_found(format!("pipeline run {}", run.id)))?;
            if slot.module != run.module || slot.source_ref != run.source_ref {
                return Err(Error::validation("pipeline result does not match its run"));
            }
            if slot.stages.iter().any(|s| s.status != StageStatus::Pending) {
                return Err(Error::invalid_state(format!("pipeline run {} already finished", run.id)));
            }
            if run.stages.iter().any(|s| s.status == StageStatus::Pending) {
                return Err(Error::validation("finished pipeline run has pending stages"));
            }
            state.catalog.get(&run.module)?;
            if run.passed(StageName::Refresh) {
                let digest = run
                    .build_digest
                    .clone()
                    .ok_or_else(|| Error::validation("refresh passed without a build digest"))?;
                state.catalog.set_image_digest(&run.module, digest)?;
                state.inference.mark_stale(&run.module);
            }
            if run.passed(StageName::Provenance) {
                let frag = state.provenance.ingest(
                    run.module.clone(),
                    FragmentSource::Pipeline,
                    json!({
                        "run_id": run.id,
                        "digest": run.build_digest,
                        "source_ref": run.source_ref,
                    }),
                    ts,
                )?;
                events.push(fragment_event(&run.module, &frag, FragmentSource::Pipeline));
            }
            for stage in &run.stages {
                events.push(DerivedEvent::new(
                    "pipeline_stage",
                    json!({"run_id": run.id, "module": run.module, "stage": stage.name,
                           "status": stage.status, "detail": stage.detail}),
                ));
            }
            state.pipeline_runs.insert(run.id.clone(), run.clone());
            Outcome::Run(Box::new(run.clone()))
        }
        Command::IngestFragment { module, source, payload } => {
            state.catalog.get(module)?;
            let id = state.provenance.ingest(module.clone(), *source, payload.clone(), ts)?;
            events.push(fragment_event(module, &id, *source));
            Outcome::FragmentId(id)
        }
        Command::CreateEndpoint { spec, vo } => {
            Outcome::EndpointId(state.inference.create_endpoint(spec.clone(), vo, &state.catalog, ts)?)
        }
        Command::InvokeBegin { endpoint } => {
            let start = state.inference.begin_invoke(endpoint, ts)?;
            if start.cold_start {
                events.push(DerivedEvent::new(
                    "autoscale",
                    ScaleChange { endpoint: endpoint.clone(), old: 0, new: start.replicas },
                ));
            }
            Outcome::Invoke(start)
        }
        Command::InvokeFinish { endpoint, latency_ms, ok, cold_start } => {
            state.inference.finish_invoke(endpoint, *latency_ms, *ok, *cold_start, ts)?;
            Outcome::Unit
        }
        Command::SubmitAsync { endpoint, input_ref } => {
            Outcome::AsyncJobId(state.inference.submit_async(endpoint, input_ref.clone(), ts)?)
        }
        Command::DrainAsync { outcomes } => {
            let t = state.inference.apply_drain(outcomes, ts);
            effective = !t.is_empty();
            events.extend(t.iter().map(|t| DerivedEvent::new("async", t)));
            Outcome::Drain(t)
        }
        Command::ComposeDag { spec, vo } => {
            Outcome::DagId(state.inference.compose(spec.clone(), vo, env.transforms)?)
        }
    };
    if effective {
        state.now = state.now.max(ts);
    }
    Ok(Applied { outcome, events, effective })
}
