//! Workload management: admission under VO tiers, placement on ranked
//! providers, and the lifecycle of standard, batch and try-me jobs.
//!
//! Placement in a tick walks queued jobs in per-VO round-robin order (VOs by
//! id, FIFO inside a VO). A job's candidates are the providers that are
//! alive, support its VO, hold an SLA valid now, have enough free capacity
//! and leave the VO's per-provider SLA headroom non-negative. The highest
//! ranked candidate wins. `scheduled` and `running` are entered in the same
//! tick.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::auth::Claims;
use crate::canonical::to_canonical_json;
use crate::catalog::{schema::is_valid_doi, Catalog};
use crate::error::{Error, Result};
use crate::federation::{Federation, ProviderStatus};
use crate::ranker::Ranker;
use crate::types::{Capacity, IdCounter, JobId, Millis, ModuleId, ProviderId, Role, SnapshotId, UserId, VoId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Standard,
    Batch,
    Tryme,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidecar {
    StorageMount,
    DatasetFetch,
    SlowDeployNotify,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSpec {
    pub owner: UserId,
    pub vo: VoId,
    pub kind: JobKind,
    pub module: ModuleId,
    pub resources: Capacity,
    #[serde(default)]
    pub sidecars: BTreeSet<Sidecar>,
    #[serde(default)]
    pub dataset_doi: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Scheduled,
    Running,
    Completed,
    Failed,
    Expired,
    Stopped,
}

impl JobState {
    pub const ALL: [JobState; 7] = [
        JobState::Queued,
        JobState::Scheduled,
        JobState::Running,
        JobState::Completed,
        JobState::Failed,
        JobState::Expired,
        JobState::Stopped,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            JobState::Completed | JobState::Failed | JobState::Expired | JobState::Stopped
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Queued => "queued",
            JobState::Scheduled => "scheduled",
            JobState::Running => "running",
            JobState::Completed => "completed",
            JobState::Failed => "failed",
            JobState::Expired => "expired",
            JobState::Stopped => "stopped",
        }
    }

    /// The lifecycle state machine. `from = None` is job creation.
    pub fn is_legal_transition(from: Option<JobState>, to: JobState, kind: JobKind) -> bool {
        use JobState::*;
        match (from, to) {
            (None, Queued) => true,
            (Some(Queued), Scheduled) | (Some(Scheduled), Running) => true,
            (Some(Running), Completed) => kind == JobKind::Batch,
            (Some(Running), Expired) => kind == JobKind::Tryme,
            (Some(Running), Stopped) | (Some(Running), Failed) => true,
            (Some(Scheduled), Failed) | (Some(Scheduled), Stopped) => true,
            (Some(Queued), Stopped) => true,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: JobId,
    pub spec: JobSpec,
    pub state: JobState,
    pub provider: Option<ProviderId>,
    pub created_at: Millis,
    pub started_at: Option<Millis>,
    pub ended_at: Option<Millis>,
    pub ttl_s: Option<u64>,
    #[serde(default)]
    pub endpoints: BTreeMap<String, String>,
    #[serde(default)]
    pub notified: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: SnapshotId,
    pub deployment: JobId,
    pub spec_copy: JobSpec,
    pub state_digest: String,
    pub created_at: Millis,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoUsage {
    pub vo: VoId,
    pub allocated: Capacity,
    pub per_provider: BTreeMap<ProviderId, Capacity>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub tryme_ttl_s: u64,
    pub notify_after_s: u64,
    /// Floor on the creation time fed to the ranker on completion.
    pub min_creation_time_s: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            tryme_ttl_s: 600,
            notify_after_s: 300,
            min_creation_time_s: 1.0,
        }
    }
}

/// One lifecycle transition, as written to the event log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobTransition {
    pub ts: Millis,
    pub job_id: JobId,
    pub from: Option<JobState>,
    pub to: JobState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<ProviderId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SchedulerEvent {
    Transition(JobTransition),
    SlowDeploy {
        job_id: JobId,
        owner: UserId,
        waited_s: u64,
    },
    Sidecar {
        job_id: JobId,
        sidecar: Sidecar,
        detail: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub job: JobId,
    pub provider: ProviderId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickReport {
    pub placements: Vec<Placement>,
    /// Jobs failed because their provider was dead.
    pub failed: Vec<JobId>,
    pub notified: Vec<JobId>,
}

impl TickReport {
    pub fn is_empty(&self) -> bool {
        self.placements.is_empty() && self.failed.is_empty() && self.notified.is_empty()
    }
}

/// Resolves a dataset DOI at launch time. Must be deterministic: it is
/// consulted while applying commands, including during log replay.
pub trait DatasetFetcher: Send + Sync {
    fn resolve(&self, doi: &str) -> std::result::Result<String, String>;
}

/// Default fetcher: turns a DOI into its resolver URL without any I/O.
#[derive(Clone, Copy, Debug, Default)]
pub struct DoiResolverStub;

impl DatasetFetcher for DoiResolverStub {
    fn resolve(&self, doi: &str) -> std::result::Result<String, String> {
        Ok(format!("https://doi.org/{doi}"))
    }
}

/// Default deployment state blob used for snapshot digests.
pub fn default_state_blob(job: &Job) -> Vec<u8> {
    #[derive(Serialize)]
    struct Blob<'a> {
        id: &'a JobId,
        spec: &'a JobSpec,
        provider: &'a Option<ProviderId>,
        started_at: Option<Millis>,
    }
    to_canonical_json(&Blob {
        id: &job.id,
        spec: &job.spec,
        provider: &job.provider,
        started_at: job.started_at,
    })
    .into_bytes()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scheduler {
    jobs: BTreeMap<JobId, Job>,
    snapshots: BTreeMap<SnapshotId, Snapshot>,
    usage: BTreeMap<VoId, VoUsage>,
    job_ids: IdCounter,
    snapshot_ids: IdCounter,
    pub config: SchedulerConfig,
}

fn transition(job: &mut Job, to: JobState, now: Millis, events: &mut Vec<SchedulerEvent>) {
    debug_assert!(
        JobState::is_legal_transition(Some(job.state), to, job.spec.kind),
        "illegal transition {:?} -> {:?}",
        job.state,
        to
    );
    let from = job.state;
    job.state = to;
    if to.is_terminal() {
        job.ended_at = Some(now);
        job.endpoints.clear();
    }
    events.push(SchedulerEvent::Transition(JobTransition {
        ts: now,
        job_id: job.id.clone(),
        from: Some(from),
        to,
        provider: job.provider.clone(),
    }));
}

impl Scheduler {
    pub fn new(config: SchedulerConfig) -> Self {
        Self {
            config,
            ..Default::default()
        }
    }

    pub fn job(&self, id: &JobId) -> Result<&Job> {
        self.jobs
            .get(id)
            .ok_or_else(|| Error::not_found(format!("job {id}")))
    }

    pub fn jobs(&self) -> impl Iterator<Item = &Job> {
        self.jobs.values()
    }

    pub fn snapshot_record(&self, id: &SnapshotId) -> Result<&Snapshot> {
        self.snapshots
            .get(id)
            .ok_or_else(|| Error::not_found(format!("snapshot {id}")))
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &Snapshot> {
        self.snapshots.values()
    }

    pub fn next_snapshot_id(&self) -> SnapshotId {
        SnapshotId::from_seq(self.snapshot_ids.peek_seq())
    }

    pub fn usage(&self, vo: &str) -> VoUsage {
        self.usage.get(vo).cloned().unwrap_or_else(|| VoUsage {
            vo: vo.to_string(),
            ..Default::default()
        })
    }

    pub fn submit(
        &mut self,
        spec: JobSpec,
        claims: &Claims,
        fed: &Federation,
        catalog: &Catalog,
        now: Millis,
        events: &mut Vec<SchedulerEvent>,
    ) -> Result<JobId> {
        if spec.owner != claims.user {
            return Err(Error::forbidden("job owner must be the requesting user"));
        }
        if spec.vo != claims.vo {
            return Err(Error::forbidden(format!(
                "token is scoped to VO `{}`, not `{}`",
                claims.vo, spec.vo
            )));
        }
        let vo = fed
            .vo(&spec.vo)
            .map_err(|_| Error::forbidden(format!("VO `{}` is not known", spec.vo)))?;
        let member_role = vo.member_roles.get(&claims.user).ok_or_else(|| {
            Error::forbidden(format!("user `{}` is not a member of VO `{}`", claims.user, spec.vo))
        })?;
        if claims.role.meet(*member_role) == Role::Demo && spec.kind != JobKind::Tryme {
            return Err(Error::forbidden(
                "demo access tier may only deploy short-lived try-me jobs",
            ));
        }
        spec.resources.validate()?;
        let visible = catalog
            .get(&spec.module)
            .map(|r| r.visibility.includes(&spec.vo))
            .unwrap_or(false);
        if !visible {
            return Err(Error::validation(format!("unknown module {}", spec.module)));
        }
        let wants_fetch = spec.sidecars.contains(&Sidecar::DatasetFetch);
        match (&spec.dataset_doi, wants_fetch) {
            (None, true) => {
                return Err(Error::validation("dataset_fetch sidecar requires dataset_doi"))
            }
            (Some(_), false) => {
                return Err(Error::validation("dataset_doi given without dataset_fetch sidecar"))
            }
            (Some(doi), true) if !is_valid_doi(doi) => {
                return Err(Error::validation(format!("`{doi}` is not a DOI")))
            }
            _ => {}
        }
        if spec.kind == JobKind::Tryme && spec.resources.gpus > 0 && !vo.tryme_allow_gpus {
            return Err(Error::validation("try-me jobs may not request GPUs in this VO"));
        }

        let id = JobId::from_seq(self.job_ids.next_seq());
        let ttl_s = (spec.kind == JobKind::Tryme).then_some(self.config.tryme_ttl_s);
        self.jobs.insert(
            id.clone(),
            Job {
                id: id.clone(),
                spec,
                state: JobState::Queued,
                provider: None,
                created_at: now,
                started_at: None,
                ended_at: None,
                ttl_s,
                endpoints: BTreeMap::new(),
                notified: false,
            },
        );
        events.push(SchedulerEvent::Transition(JobTransition {
            ts: now,
            job_id: id.clone(),
            from: None,
            to: JobState::Queued,
            provider: None,
        }));
        Ok(id)
    }

    /// Queued jobs in the order a tick considers them.
    pub fn queue_order(&self) -> Vec<JobId> {
        let mut per_vo: BTreeMap<&VoId, Vec<&JobId>> = BTreeMap::new();
        for job in self.jobs.values().filter(|j| j.state == JobState::Queued) {
            per_vo.entry(&job.spec.vo).or_default().push(&job.id);
        }
        let longest = per_vo.values().map(Vec::len).max().unwrap_or(0);
        let mut order = Vec::new();
        for round in 0..longest {
            for queue in per_vo.values() {
                if let Some(id) = queue.get(round) {
                    order.push((*id).clone());
                }
            }
        }
        order
    }

    /// Providers a job could be placed on right now, unranked.
    pub fn feasible_providers(&self, job: &Job, fed: &Federation, now: Millis) -> Vec<ProviderId> {
        let usage = self.usage.get(&job.spec.vo);
        let need = &job.spec.resources;
        fed.providers()
            .filter(|p| p.status == ProviderStatus::Alive)
            .filter(|p| p.supported_vos.contains(&job.spec.vo))
            .filter(|p| need.fits_within(&p.available()))
            .filter(|p| {
                let Some(sla) = fed.sla_for(&job.spec.vo, &p.id) else {
                    return false;
                };
                if !sla.is_valid_at(now) {
                    return false;
                }
                let used = usage
                    .and_then(|u| u.per_provider.get(&p.id))
                    .copied()
                    .unwrap_or_default();
                sla.caps
                    .checked_sub(&used)
                    .is_some_and(|headroom| need.fits_within(&headroom))
            })
            .map(|p| p.id.clone())
            .collect()
    }

    pub fn schedule_tick(
        &mut self,
        fed: &mut Federation,
        ranker: &mut Ranker,
        fetcher: &dyn DatasetFetcher,
        now: Millis,
        events: &mut Vec<SchedulerEvent>,
    ) -> TickReport {
        let mut report = TickReport::default();

        let on_dead: Vec<JobId> = self
            .jobs
            .values()
            .filter(|j| matches!(j.state, JobState::Running | JobState::Scheduled))
            .filter(|j| {
                j.provider
                    .as_ref()
                    .and_then(|p| fed.provider(p).ok())
                    .is_some_and(|p| p.status == ProviderStatus::Dead)
            })
            .map(|j| j.id.clone())
            .collect();
        for id in on_dead {
            let provider = self.release(&id, fed).expect("placed job releases");
            let job = self.jobs.get_mut(&id).expect("job exists");
            transition(job, JobState::Failed, now, events);
            let _ = ranker.record_outcome(&provider, false, 0.0);
            report.failed.push(id);
        }

        for id in self.queue_order() {
            let job = &self.jobs[&id];
            let candidates = self.feasible_providers(job, fed, now);
            if candidates.is_empty() {
                continue;
            }
            let chosen = ranker
                .rank_providers(&candidates)
                .expect("candidates are tracked by the ranker")
                .swap_remove(0)
                .provider;
            self.place(&id, &chosen, fed, fetcher, now, events);
            report.placements.push(Placement {
                job: id,
                provider: chosen,
            });
        }

        let wait_ms = self.config.notify_after_s * 1000;
        for job in self.jobs.values_mut() {
            if job.state == JobState::Queued
                && !job.notified
                && job.spec.sidecars.contains(&Sidecar::SlowDeployNotify)
                && now.saturating_sub(job.created_at) > wait_ms
            {
                job.notified = true;
                events.push(SchedulerEvent::SlowDeploy {
                    job_id: job.id.clone(),
                    owner: job.spec.owner.clone(),
                    waited_s: now.saturating_sub(job.created_at) / 1000,
                });
                report.notified.push(job.id.clone());
            }
        }
        report
    }

    fn place(
        &mut self,
        id: &JobId,
        provider: &ProviderId,
        fed: &mut Federation,
        fetcher: &dyn DatasetFetcher,
        now: Millis,
        events: &mut Vec<SchedulerEvent>,
    ) {
        let job = self.jobs.get_mut(id).expect("job exists");
        let need = job.spec.resources;
        fed.debit(provider, &need).expect("feasibility checked");
        let usage = self.usage.entry(job.spec.vo.clone()).or_insert_with(|| VoUsage {
            vo: job.spec.vo.clone(),
            ..Default::default()
        });
        usage.allocated += need;
        *usage.per_provider.entry(provider.clone()).or_default() += need;

        job.provider = Some(provider.clone());
        transition(job, JobState::Scheduled, now, events);
        job.started_at = Some(now);
        let base = format!(
            "{}/deployments/{}",
            fed.provider(provider).expect("exists").endpoint.trim_end_matches('/'),
            id
        );
        match job.spec.kind {
            JobKind::Standard => {
                job.endpoints.insert("api".into(), format!("{base}/api"));
                job.endpoints.insert("ide".into(), format!("{base}/ide"));
            }
            JobKind::Tryme => {
                job.endpoints.insert("ui".into(), format!("{base}/ui"));
            }
            JobKind::Batch => {}
        }
        transition(job, JobState::Running, now, events);

        for sidecar in &job.spec.sidecars {
            let detail = match sidecar {
                Sidecar::StorageMount => format!("mount requested for user {}", job.spec.owner),
                Sidecar::DatasetFetch => {
                    let doi = job.spec.dataset_doi.as_deref().unwrap_or_default();
                    match fetcher.resolve(doi) {
                        Ok(uri) => format!("dataset {doi} resolved to {uri}"),
                        Err(e) => format!("dataset {doi} could not be resolved: {e}"),
                    }
                }
                Sidecar::SlowDeployNotify => continue,
            };
            events.push(SchedulerEvent::Sidecar {
                job_id: id.clone(),
                sidecar: *sidecar,
                detail,
            });
        }
    }

    /// Give a placed job's resources back. Returns its provider.
    fn release(&mut self, id: &JobId, fed: &mut Federation) -> Result<ProviderId> {
        let job = self.job(id)?;
        let provider = job
            .provider
            .clone()
            .ok_or_else(|| Error::invalid_state(format!("job {id} holds no resources")))?;
        let need = job.spec.resources;
        let vo = job.spec.vo.clone();
        fed.credit(&provider, &need)?;
        let usage = self.usage.get_mut(&vo).expect("placed job has usage");
        usage.allocated = usage.allocated.checked_sub(&need).expect("usage covers job");
        // Zero slots are dropped, so a zero-resource job may find none.
        if let Some(slot) = usage.per_provider.get_mut(&provider) {
            *slot = slot.checked_sub(&need).expect("slot covers job");
            if slot.is_zero() {
                usage.per_provider.remove(&provider);
            }
        } else {
            debug_assert!(need.is_zero(), "placed job has slot");
        }
        Ok(provider)
    }

    pub fn complete(
        &mut self,
        id: &JobId,
        success: bool,
        fed: &mut Federation,
        ranker: &mut Ranker,
        now: Millis,
        events: &mut Vec<SchedulerEvent>,
    ) -> Result<Job> {
        let job = self.job(id)?;
        if job.spec.kind != JobKind::Batch {
            return Err(Error::invalid_state(format!(
                "only batch jobs complete; {id} is {:?}",
                job.spec.kind
            )));
        }
        if job.state != JobState::Running {
            return Err(Error::invalid_state(format!(
                "job {id} is {}, not running",
                job.state.as_str()
            )));
        }
        let waited_s = job
            .started_at
            .unwrap_or(job.created_at)
            .saturating_sub(job.created_at) as f64
            / 1000.0;
        let creation_time_s = waited_s.max(self.config.min_creation_time_s);
        let provider = self.release(id, fed)?;
        let job = self.jobs.get_mut(id).expect("job exists");
        transition(
            job,
            if success { JobState::Completed } else { JobState::Failed },
            now,
            events,
        );
        let _ = ranker.record_outcome(&provider, success, creation_time_s);
        Ok(job.clone())
    }

    pub fn expire_tryme(
        &mut self,
        fed: &mut Federation,
        now: Millis,
        events: &mut Vec<SchedulerEvent>,
    ) -> Vec<Job> {
        let due: Vec<JobId> = self
            .jobs
            .values()
            .filter(|j| j.spec.kind == JobKind::Tryme && j.state == JobState::Running)
            .filter(|j| {
                let ttl_ms = j.ttl_s.unwrap_or(self.config.tryme_ttl_s) * 1000;
                now.saturating_sub(j.started_at.unwrap_or(now)) > ttl_ms
            })
            .map(|j| j.id.clone())
            .collect();
        due.into_iter()
            .map(|id| {
                self.release(&id, fed).expect("running job releases");
                let job = self.jobs.get_mut(&id).expect("job exists");
                transition(job, JobState::Expired, now, events);
                job.clone()
            })
            .collect()
    }

    pub fn authorize_owner_or_admin(&self, job: &Job, claims: &Claims, fed: &Federation) -> Result<()> {
        let is_owner = job.spec.owner == claims.user;
        let is_admin = fed
            .vo(&job.spec.vo)
            .map(|vo| vo.admins.contains(&claims.user))
            .unwrap_or(false)
            && claims.vo == job.spec.vo;
        if is_owner || is_admin || claims.admin {
            Ok(())
        } else {
            Err(Error::forbidden(format!(
                "user `{}` may not manage job {}",
                claims.user, job.id
            )))
        }
    }

    pub fn stop(
        &mut self,
        id: &JobId,
        claims: &Claims,
        fed: &mut Federation,
        now: Millis,
        events: &mut Vec<SchedulerEvent>,
    ) -> Result<Job> {
        let job = self.job(id)?;
        self.authorize_owner_or_admin(job, claims, fed)?;
        if job.state.is_terminal() {
            return Err(Error::invalid_state(format!(
                "job {id} already {}",
                job.state.as_str()
            )));
        }
        if job.provider.is_some() {
            self.release(id, fed)?;
        }
        let job = self.jobs.get_mut(id).expect("job exists");
        transition(job, JobState::Stopped, now, events);
        Ok(job.clone())
    }

    /// Check preconditions for a snapshot. The digest is supplied by the caller.
    pub fn check_snapshot(&self, id: &JobId, claims: &Claims, fed: &Federation) -> Result<&Job> {
        let job = self.job(id)?;
        self.authorize_owner_or_admin(job, claims, fed)?;
        if job.spec.kind != JobKind::Standard {
            return Err(Error::Unsupported(format!(
                "only standard deployments can be snapshotted; {id} is {:?}",
                job.spec.kind
            )));
        }
        if job.state != JobState::Running {
            return Err(Error::invalid_state(format!("job {id} is not running")));
        }
        Ok(job)
    }

    pub fn snapshot(
        &mut self,
        id: &JobId,
        claims: &Claims,
        fed: &Federation,
        state_digest: String,
        now: Millis,
    ) -> Result<SnapshotId> {
        let spec_copy = self.check_snapshot(id, claims, fed)?.spec.clone();
        let snap_id = SnapshotId::from_seq(self.snapshot_ids.next_seq());
        self.snapshots.insert(
            snap_id.clone(),
            Snapshot {
                id: snap_id.clone(),
                deployment: id.clone(),
                spec_copy,
                state_digest,
                created_at: now,
            },
        );
        Ok(snap_id)
    }

    pub fn restore(
        &mut self,
        snapshot: &SnapshotId,
        claims: &Claims,
        fed: &Federation,
        catalog: &Catalog,
        now: Millis,
        events: &mut Vec<SchedulerEvent>,
    ) -> Result<JobId> {
        let snap = self.snapshot_record(snapshot)?;
        if snap.spec_copy.owner != claims.user {
            return Err(Error::forbidden(format!(
                "snapshot {snapshot} belongs to another user"
            )));
        }
        let spec = snap.spec_copy.clone();
        self.submit(spec, claims, fed, catalog, now, events)
    }

    /// Accounting invariants; returns a description of each violation.
    pub fn audit(&self, fed: &Federation) -> Vec<String> {
        let mut problems = Vec::new();
        let mut held: BTreeMap<&ProviderId, Capacity> = BTreeMap::new();
        for job in self.jobs.values() {
            match (&job.provider, job.state) {
                (Some(p), JobState::Running | JobState::Scheduled) => {
                    *held.entry(p).or_default() += job.spec.resources;
                }
                (None, s) if !matches!(s, JobState::Queued | JobState::Stopped) => {
                    problems.push(format!("{} is {} without provider", job.id, s.as_str()));
                }
                _ => {}
            }
        }
        for p in fed.providers() {
            let h = held.get(&p.id).copied().unwrap_or_default();
            if !h.fits_within(&p.capacity) {
                problems.push(format!("{} overcommitted: {h} > {}", p.id, p.capacity));
            }
            if h + p.free != p.capacity {
                problems.push(format!("{} conservation: held {h} + free {} != {}", p.id, p.free, p.capacity));
            }
        }
        for usage in self.usage.values() {
            let sum: Capacity = usage.per_provider.values().copied().sum();
            if sum != usage.allocated {
                problems.push(format!("VO {} allocated {} != per-provider sum {sum}", usage.vo, usage.allocated));
            }
            for (p, used) in &usage.per_provider {
                match fed.sla_for(&usage.vo, p) {
                    Some(sla) if used.fits_within(&sla.caps) => {}
                    _ => problems.push(format!("VO {} exceeds SLA on {p}: {used}", usage.vo)),
                }
            }
        }
        problems
    }
}
