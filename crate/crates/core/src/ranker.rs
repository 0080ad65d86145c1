//! Provider ranking from recent deployment outcomes.
//!
//! For each provider a bounded FIFO window of outcomes is kept. The score
//! combines a Laplace-smoothed success probability with the median creation
//! time of successful deployments:
//!
//! ```text
//! p_success = (successes + 1) / (n + 2)
//! t_est     = median(creation_time_s of successes), or tau if none
//! score     = p_success / (1 + t_est / tau)
//! ```
//!
//! Ranking sorts by score descending, ties broken by provider id ascending.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ProviderId;

pub const DEFAULT_WINDOW_SIZE: usize = 50;
pub const DEFAULT_TAU_S: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub success: bool,
    pub creation_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderStats {
    pub provider: ProviderId,
    pub window: VecDeque<OutcomeRecord>,
    pub window_size: usize,
}

impl ProviderStats {
    pub fn new(provider: ProviderId, window_size: usize) -> Self {
        Self {
            provider,
            window: VecDeque::with_capacity(window_size),
            window_size,
        }
    }

    pub fn successes(&self) -> usize {
        self.window.iter().filter(|o| o.success).count()
    }

    pub fn p_success(&self) -> f64 {
        (self.successes() as f64 + 1.0) / (self.window.len() as f64 + 2.0)
    }

    /// Median creation time of successes; `None` when there are none.
    pub fn median_creation_time_s(&self) -> Option<f64> {
        let mut times: Vec<f64> = self
            .window
            .iter()
            .filter(|o| o.success)
            .map(|o| o.creation_time_s)
            .collect();
        if times.is_empty() {
            return None;
        }
        times.sort_by(f64::total_cmp);
        let mid = times.len() / 2;
        Some(if times.len() % 2 == 1 {
            times[mid]
        } else {
            (times[mid - 1] + times[mid]) / 2.0
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub provider: ProviderId,
    pub p_success: f64,
    pub t_est_s: f64,
    pub score: f64,
}

pub fn score(p_success: f64, t_est_s: f64, tau_s: f64) -> f64 {
    p_success / (1.0 + t_est_s / tau_s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranker {
    stats: BTreeMap<ProviderId, ProviderStats>,
    pub window_size: usize,
    pub tau_s: f64,
}

impl Default for Ranker {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW_SIZE, DEFAULT_TAU_S)
    }
}

impl Ranker {
    pub fn new(window_size: usize, tau_s: f64) -> Self {
        assert!(window_size > 0, "window size must be positive");
        assert!(tau_s > 0.0, "tau must be positive");
        Self {
            stats: BTreeMap::new(),
            window_size,
            tau_s,
        }
    }

    /// Start tracking a provider with an empty window. No-op if tracked.
    pub fn track(&mut self, provider: &ProviderId) {
        let size = self.window_size;
        self.stats
            .entry(provider.clone())
            .or_insert_with(|| ProviderStats::new(provider.clone(), size));
    }

    pub fn stats(&self, provider: &ProviderId) -> Option<&ProviderStats> {
        self.stats.get(provider)
    }

    pub fn all_stats(&self) -> impl Iterator<Item = &ProviderStats> {
        self.stats.values()
    }

    pub fn record_outcome(
        &mut self,
        provider: &ProviderId,
        success: bool,
        creation_time_s: f64,
    ) -> Result<&ProviderStats> {
        if success && !(creation_time_s > 0.0 && creation_time_s.is_finite()) {
            return Err(Error::validation(format!(
                "creation time must be positive for a success, got {creation_time_s}"
            )));
        }
        let stats = self
            .stats
            .get_mut(provider)
            .ok_or_else(|| Error::not_found(format!("provider {provider} has no ranking stats")))?;
        if stats.window.len() == stats.window_size {
            stats.window.pop_front();
        }
        stats.window.push_back(OutcomeRecord {
            success,
            creation_time_s: if success { creation_time_s } else { 0.0 },
        });
        Ok(stats)
    }

    pub fn entry(&self, provider: &ProviderId) -> Result<RankEntry> {
        let stats = self
            .stats
            .get(provider)
            .ok_or_else(|| Error::not_found(format!("provider {provider} has no ranking stats")))?;
        let p_success = stats.p_success();
        let t_est_s = stats.median_creation_time_s().unwrap_or(self.tau_s);
        Ok(RankEntry {
            provider: provider.clone(),
            p_success,
            t_est_s,
            score: score(p_success, t_est_s, self.tau_s),
        })
    }

    pub fn rank_providers(&self, candidates: &[ProviderId]) -> Result<Vec<RankEntry>> {
        if candidates.is_empty() {
            return Err(Error::validation("rank_providers needs at least one candidate"));
        }
        let mut entries = candidates
            .iter()
            .map(|c| self.entry(c))
            .collect::<Result<Vec<_>>>()?;
        entries.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.provider.cmp(&b.provider))
        });
        Ok(entries)
    }
}
