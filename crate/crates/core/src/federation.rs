//! Federated providers, liveness, SLAs and Virtual Organizations.
//!
//! Liveness is driven by a deterministic timeout sweep instead of gossip: a
//! provider silent for longer than `suspect_after_ms` becomes suspect, longer
//! than `dead_after_ms` dead. Only a heartbeat brings it back to alive.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::catalog::TagPredicate;
use crate::error::{Error, Result};
use crate::types::{Capacity, IdCounter, Millis, ProviderId, Role, SlaId, UserId, VoId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderStatus {
    Alive,
    Suspect,
    Dead,
}

impl ProviderStatus {
    pub const ALL: [ProviderStatus; 3] = [
        ProviderStatus::Alive,
        ProviderStatus::Suspect,
        ProviderStatus::Dead,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProviderStatus::Alive => "alive",
            ProviderStatus::Suspect => "suspect",
            ProviderStatus::Dead => "dead",
        }
    }

    /// Transitions the membership machine may take.
    pub fn is_legal_transition(from: ProviderStatus, to: ProviderStatus) -> bool {
        use ProviderStatus::*;
        matches!((from, to), (Alive, Suspect) | (Suspect, Dead) | (_, Alive))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipConfig {
    pub suspect_after_ms: Millis,
    pub dead_after_ms: Millis,
}

impl Default for MembershipConfig {
    fn default() -> Self {
        Self {
            suspect_after_ms: 30_000,
            dead_after_ms: 90_000,
        }
    }
}

/// Provider registration request, also the shape of one entry in a
/// provider fixture file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub name: String,
    pub country: String,
    pub endpoint: String,
    pub capacity: Capacity,
    #[serde(default)]
    pub supported_vos: BTreeSet<VoId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provider {
    pub id: ProviderId,
    pub name: String,
    pub country: String,
    pub endpoint: String,
    pub capacity: Capacity,
    /// Capacity not allocated to platform jobs; `free + allocated = capacity`.
    pub free: Capacity,
    /// Availability last reported by the provider itself.
    pub reported_free: Capacity,
    pub status: ProviderStatus,
    pub last_heartbeat: Millis,
    pub supported_vos: BTreeSet<VoId>,
}

impl Provider {
    pub fn allocated(&self) -> Capacity {
        self.capacity
            .checked_sub(&self.free)
            .expect("free never exceeds capacity")
    }

    /// What placement may use right now.
    pub fn available(&self) -> Capacity {
        self.free.component_min(&self.reported_free)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlaSpec {
    pub vo: VoId,
    pub provider: ProviderId,
    pub caps: Capacity,
    pub valid_from: Millis,
    pub valid_until: Millis,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sla {
    pub id: SlaId,
    pub vo: VoId,
    pub provider: ProviderId,
    pub caps: Capacity,
    pub valid_from: Millis,
    pub valid_until: Millis,
}

impl Sla {
    pub fn is_valid_at(&self, now: Millis) -> bool {
        self.valid_from <= now && now < self.valid_until
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualOrganization {
    pub id: VoId,
    pub name: String,
    pub default_user_storage_quota_gb: u64,
    #[serde(default)]
    pub catalog_filter: Option<TagPredicate>,
    #[serde(default)]
    pub member_roles: BTreeMap<UserId, Role>,
    #[serde(default)]
    pub admins: BTreeSet<UserId>,
    /// Lets try-me jobs in this VO request GPUs.
    #[serde(default)]
    pub tryme_allow_gpus: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipTransition {
    pub provider: ProviderId,
    pub from: ProviderStatus,
    pub to: ProviderStatus,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Federation {
    providers: BTreeMap<ProviderId, Provider>,
    slas: BTreeMap<SlaId, Sla>,
    vos: BTreeMap<VoId, VirtualOrganization>,
    provider_ids: IdCounter,
    sla_ids: IdCounter,
    pub config: MembershipConfig,
}

fn validate_country(code: &str) -> Result<()> {
    if code.len() == 2 && code.bytes().all(|b| b.is_ascii_uppercase()) {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "country `{code}` is not an ISO-3166 alpha-2 code"
        )))
    }
}

impl Federation {
    pub fn new(config: MembershipConfig) -> Self {
        Self {
            config,
            ..Default::default()
        }
    }

    pub fn register_provider(&mut self, spec: ProviderSpec, now: Millis) -> Result<ProviderId> {
        spec.capacity.validate()?;
        if spec.endpoint.trim().is_empty() {
            return Err(Error::validation("provider endpoint must be non-empty"));
        }
        if spec.name.trim().is_empty() {
            return Err(Error::validation("provider name must be non-empty"));
        }
        validate_country(&spec.country)?;
        if self.providers.values().any(|p| p.name == spec.name) {
            return Err(Error::Conflict(format!("provider name `{}`", spec.name)));
        }
        let id = ProviderId::from_seq(self.provider_ids.next_seq());
        self.providers.insert(
            id.clone(),
            Provider {
                id: id.clone(),
                name: spec.name,
                country: spec.country,
                endpoint: spec.endpoint,
                capacity: spec.capacity,
                free: spec.capacity,
                reported_free: spec.capacity,
                status: ProviderStatus::Alive,
                last_heartbeat: now,
                supported_vos: spec.supported_vos,
            },
        );
        Ok(id)
    }

    pub fn heartbeat(&mut self, id: &ProviderId, now: Millis, free: Capacity) -> Result<ProviderStatus> {
        let provider = self.provider_mut(id)?;
        if !free.fits_within(&provider.capacity) {
            return Err(Error::validation(format!(
                "reported free {free} exceeds capacity {}",
                provider.capacity
            )));
        }
        provider.last_heartbeat = provider.last_heartbeat.max(now);
        provider.status = ProviderStatus::Alive;
        provider.reported_free = free;
        Ok(ProviderStatus::Alive)
    }

    /// Advance liveness. A provider jumping straight past the dead timeout
    /// reports both `alive→suspect` and `suspect→dead`.
    pub fn sweep_membership(&mut self, now: Millis) -> Vec<MembershipTransition> {
        let cfg = self.config;
        let mut out = Vec::new();
        for p in self.providers.values_mut() {
            let silent = now.saturating_sub(p.last_heartbeat);
            let target = if silent > cfg.dead_after_ms {
                ProviderStatus::Dead
            } else if silent > cfg.suspect_after_ms {
                ProviderStatus::Suspect
            } else {
                continue;
            };
            while p.status < target {
                let next = match p.status {
                    ProviderStatus::Alive => ProviderStatus::Suspect,
                    _ => ProviderStatus::Dead,
                };
                out.push(MembershipTransition {
                    provider: p.id.clone(),
                    from: p.status,
                    to: next,
                });
                p.status = next;
            }
        }
        out
    }

    pub fn aggregate_capacity(&self, status: Option<ProviderStatus>) -> Capacity {
        self.providers
            .values()
            .filter(|p| status.is_none_or(|s| p.status == s))
            .map(|p| p.capacity)
            .sum()
    }

    pub fn register_vo(&mut self, vo: VirtualOrganization) -> Result<()> {
        if vo.id.trim().is_empty() {
            return Err(Error::validation("VO id must be non-empty"));
        }
        if vo.default_user_storage_quota_gb == 0 {
            return Err(Error::validation("default user storage quota must be > 0"));
        }
        if self.vos.contains_key(&vo.id) {
            return Err(Error::Conflict(format!("VO `{}`", vo.id)));
        }
        self.vos.insert(vo.id.clone(), vo);
        Ok(())
    }

    pub fn set_member(&mut self, vo: &str, user: &str, role: Role, admin: bool) -> Result<()> {
        let entry = self
            .vos
            .get_mut(vo)
            .ok_or_else(|| Error::not_found(format!("VO {vo}")))?;
        entry.member_roles.insert(user.to_string(), role);
        if admin {
            entry.admins.insert(user.to_string());
        } else {
            entry.admins.remove(user);
        }
        Ok(())
    }

    /// Insert an SLA, or replace the existing one for the same (VO, provider).
    pub fn upsert_sla(&mut self, spec: SlaSpec) -> Result<SlaId> {
        let provider = self.provider(&spec.provider)?;
        if !self.vos.contains_key(&spec.vo) {
            return Err(Error::not_found(format!("VO {}", spec.vo)));
        }
        if spec.valid_from >= spec.valid_until {
            return Err(Error::validation("SLA valid_from must precede valid_until"));
        }
        if !spec.caps.fits_within(&provider.capacity) {
            return Err(Error::validation(format!(
                "SLA caps {} exceed provider capacity {}",
                spec.caps, provider.capacity
            )));
        }
        let existing = self
            .slas
            .values()
            .find(|s| s.vo == spec.vo && s.provider == spec.provider)
            .map(|s| s.id.clone());
        let id = existing.unwrap_or_else(|| SlaId::from_seq(self.sla_ids.next_seq()));
        self.slas.insert(
            id.clone(),
            Sla {
                id: id.clone(),
                vo: spec.vo,
                provider: spec.provider,
                caps: spec.caps,
                valid_from: spec.valid_from,
                valid_until: spec.valid_until,
            },
        );
        Ok(id)
    }

    pub fn sla_for(&self, vo: &str, provider: &ProviderId) -> Option<&Sla> {
        self.slas
            .values()
            .find(|s| s.vo == vo && &s.provider == provider)
    }

    /// Providers supporting `vo` with an SLA valid at `now`.
    pub fn list_providers(&self, vo: &str, status: Option<ProviderStatus>, now: Millis) -> Vec<&Provider> {
        self.providers
            .values()
            .filter(|p| p.supported_vos.contains(vo))
            .filter(|p| self.sla_for(vo, &p.id).is_some_and(|s| s.is_valid_at(now)))
            .filter(|p| status.is_none_or(|s| p.status == s))
            .collect()
    }

    pub fn provider(&self, id: &ProviderId) -> Result<&Provider> {
        self.providers
            .get(id)
            .ok_or_else(|| Error::not_found(format!("provider {id}")))
    }

    pub(crate) fn provider_mut(&mut self, id: &ProviderId) -> Result<&mut Provider> {
        self.providers
            .get_mut(id)
            .ok_or_else(|| Error::not_found(format!("provider {id}")))
    }

    pub fn providers(&self) -> impl Iterator<Item = &Provider> {
        self.providers.values()
    }

    pub fn slas(&self) -> impl Iterator<Item = &Sla> {
        self.slas.values()
    }

    pub fn vo(&self, id: &str) -> Result<&VirtualOrganization> {
        self.vos
            .get(id)
            .ok_or_else(|| Error::not_found(format!("VO {id}")))
    }

    pub fn vos(&self) -> impl Iterator<Item = &VirtualOrganization> {
        self.vos.values()
    }

    /// Move capacity from free to allocated.
    pub(crate) fn debit(&mut self, id: &ProviderId, amount: &Capacity) -> Result<()> {
        let p = self.provider_mut(id)?;
        p.free = p
            .free
            .checked_sub(amount)
            .ok_or_else(|| Error::invalid_state(format!("provider {id} cannot supply {amount}")))?;
        Ok(())
    }

    pub(crate) fn credit(&mut self, id: &ProviderId, amount: &Capacity) -> Result<()> {
        let p = self.provider_mut(id)?;
        let next = p.free + *amount;
        if !next.fits_within(&p.capacity) {
            return Err(Error::invalid_state(format!("credit on {id} would exceed capacity")));
        }
        p.free = next;
        Ok(())
    }
}

/// Parse a YAML provider fixture: a list of [`ProviderSpec`].
pub fn parse_provider_fixture(text: &str) -> Result<Vec<ProviderSpec>> {
    serde_yaml::from_str(text).map_err(|e| Error::validation(format!("provider fixture: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: &str, gpus: u64) -> ProviderSpec {
        ProviderSpec {
            name: name.into(),
            country: "ES".into(),
            endpoint: format!("https://{name}.example"),
            capacity: Capacity::new(gpus, 100, 100),
            supported_vos: ["vo".to_string()].into(),
        }
    }

    fn vo(id: &str) -> VirtualOrganization {
        VirtualOrganization {
            id: id.into(),
            name: id.into(),
            default_user_storage_quota_gb: 10,
            catalog_filter: None,
            member_roles: BTreeMap::new(),
            admins: BTreeSet::new(),
            tryme_allow_gpus: false,
        }
    }

    #[test]
    fn duplicate_name_rejected_and_zero_capacity_accepted() {
        let mut fed = Federation::default();
        fed.register_provider(spec("a", 0), 0).unwrap();
        assert!(matches!(fed.register_provider(spec("a", 3), 0), Err(Error::Conflict(_))));
        assert_eq!(fed.aggregate_capacity(None), Capacity::new(0, 100, 100));
    }

    #[test]
    fn empty_endpoint_and_bad_country_rejected() {
        let mut fed = Federation::default();
        let mut s = spec("a", 1);
        s.endpoint = " ".into();
        assert!(fed.register_provider(s, 0).is_err());
        let mut s = spec("b", 1);
        s.country = "Spain".into();
        assert!(fed.register_provider(s, 0).is_err());
    }

    #[test]
    fn sweep_chain_and_idempotence() {
        let mut fed = Federation::default();
        let id = fed.register_provider(spec("a", 1), 0).unwrap();
        assert!(fed.sweep_membership(30_000).is_empty());
        let t = fed.sweep_membership(90_001);
        assert_eq!(
            t.iter().map(|t| (t.from, t.to)).collect::<Vec<_>>(),
            vec![
                (ProviderStatus::Alive, ProviderStatus::Suspect),
                (ProviderStatus::Suspect, ProviderStatus::Dead)
            ]
        );
        assert!(fed.sweep_membership(90_001).is_empty());
        assert_eq!(fed.heartbeat(&id, 95_000, Capacity::new(1, 100, 100)).unwrap(), ProviderStatus::Alive);
        assert_eq!(fed.provider(&id).unwrap().status, ProviderStatus::Alive);
    }

    #[test]
    fn heartbeat_rejects_excess_free_and_never_rewinds() {
        let mut fed = Federation::default();
        let id = fed.register_provider(spec("a", 1), 1_000).unwrap();
        assert!(fed.heartbeat(&id, 2_000, Capacity::new(2, 0, 0)).is_err());
        fed.heartbeat(&id, 500, Capacity::new(1, 100, 100)).unwrap();
        assert_eq!(fed.provider(&id).unwrap().last_heartbeat, 1_000);
        assert!(fed.heartbeat(&ProviderId::from("nope"), 0, Capacity::ZERO).is_err());
    }

    #[test]
    fn sla_boundary_and_listing() {
        let mut fed = Federation::default();
        fed.register_vo(vo("vo")).unwrap();
        fed.register_vo(vo("other")).unwrap();
        let a = fed.register_provider(spec("a", 4), 0).unwrap();
        let b = fed.register_provider(spec("b", 4), 0).unwrap();
        let c = fed.register_provider(spec("c", 4), 0).unwrap();
        let ok = |p: &ProviderId, until| SlaSpec {
            vo: "vo".into(),
            provider: p.clone(),
            caps: Capacity::new(4, 100, 100),
            valid_from: 0,
            valid_until: until,
        };
        fed.upsert_sla(ok(&a, 1_000)).unwrap();
        fed.upsert_sla(ok(&b, 1_000)).unwrap();
        fed.upsert_sla(ok(&c, 10)).unwrap();
        let mut too_big = ok(&a, 1_000);
        too_big.caps.gpus = 5;
        assert!(fed.upsert_sla(too_big).is_err());
        assert_eq!(fed.list_providers("vo", None, 100).len(), 2);
        assert!(fed.list_providers("other", None, 100).is_empty());
    }

    #[test]
    fn upsert_replaces_same_pair() {
        let mut fed = Federation::default();
        fed.register_vo(vo("vo")).unwrap();
        let a = fed.register_provider(spec("a", 4), 0).unwrap();
        let mk = |g| SlaSpec {
            vo: "vo".into(),
            provider: a.clone(),
            caps: Capacity::new(g, 0, 0),
            valid_from: 0,
            valid_until: 5,
        };
        let first = fed.upsert_sla(mk(1)).unwrap();
        let second = fed.upsert_sla(mk(2)).unwrap();
        assert_eq!(first, second);
        assert_eq!(fed.slas().count(), 1);
        assert_eq!(fed.sla_for("vo", &a).unwrap().caps.gpus, 2);
    }

    #[test]
    fn vo_quota_must_be_positive() {
        let mut fed = Federation::default();
        let mut v = vo("vo");
        v.default_user_storage_quota_gb = 0;
        assert!(fed.register_vo(v).is_err());
    }

    #[test]
    fn fixture_parses() {
        let yaml = r#"
- name: ifca
  country: ES
  endpoint: https://ifca.example
  capacity: {gpus: 20, cpu_ghz: 1600, disk_gb: 1600}
  supported_vos: [vo.example.org]
"#;
        let specs = parse_provider_fixture(yaml).unwrap();
        assert_eq!(specs[0].capacity.gpus, 20);
    }
}
