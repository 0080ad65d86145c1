use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::command::GenesisConfig;
use crate::catalog::Catalog;
use crate::federation::Federation;
use crate::inference::InferenceState;
use crate::provenance::ProvenanceStore;
use crate::quality::PipelineRun;
use crate::ranker::Ranker;
use crate::scheduler::Scheduler;
use crate::secrets::SecretStore;
use crate::types::{IdCounter, Millis, RunId};

/// Every module's state. Deep equality of two values is the crash-recovery
/// criterion, so nothing derived or cached lives here.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlatformState {
    pub genesis: Option<GenesisConfig>,
    pub federation: Federation,
    pub ranker: Ranker,
    pub catalog: Catalog,
    pub scheduler: Scheduler,
    pub pipeline_runs: BTreeMap<RunId, PipelineRun>,
    pub run_ids: IdCounter,
    pub provenance: ProvenanceStore,
    pub secrets: SecretStore,
    pub inference: InferenceState,
    /// Timestamp of the latest effective command; never decreases.
    pub now: Millis,
}

impl PlatformState {
    pub fn from_genesis(config: GenesisConfig) -> Self {
        let mut inference = InferenceState::default();
        inference.cooldown_ms = config.autoscale_cooldown_ms;
        Self {
            federation: Federation::new(config.membership),
            ranker: Ranker::new(config.ranker_window, config.ranker_tau_s),
            catalog: Catalog::new(config.platform_uri.clone()),
            scheduler: Scheduler::new(config.scheduler),
            inference,
            genesis: Some(config),
            ..Default::default()
        }
    }

    pub fn pipeline_run(&self, id: &RunId) -> crate::error::Result<&PipelineRun> {
        self.pipeline_runs
            .get(id)
            .ok_or_else(|| crate::error::Error::not_found(format!("pipeline run {id}")))
    }
}
