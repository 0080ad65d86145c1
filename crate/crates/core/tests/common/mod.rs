#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use fedplane_core::auth::Claims;
use fedplane_core::catalog::{RecordKind, Visibility};
use fedplane_core::federation::{ProviderSpec, SlaSpec, VirtualOrganization};
use fedplane_core::platform::{Command, ManualClock, Outcome, Platform, Plugins};
use fedplane_core::types::{Capacity, ModuleId, ProviderId, Role};
use serde_json::{json, Value};

pub const VO: &str = "vo-ai";

pub fn claims(user: &str, role: Role) -> Claims {
    Claims {
        user: user.into(),
        vo: VO.into(),
        role,
        exp: u64::MAX,
        admin: false,
    }
}

pub fn metadata(title: &str) -> Value {
    json!({
        "title": title,
        "summary": format!("{title} summary"),
        "license": "MIT",
        "authors": [{"name": "Ada Lovelace", "affiliation": "Analytical"}],
        "links": {
            "source_repo": format!("https://git.example/{title}"),
            "dataset": "https://doi.org/10.5281/zenodo.42"
        },
        "tags": {"libraries": ["pytorch"], "categories": ["vision"]}
    })
}

pub fn vo(members: &[(&str, Role)], admins: &[&str]) -> VirtualOrganization {
    VirtualOrganization {
        id: VO.into(),
        name: "AI VO".into(),
        default_user_storage_quota_gb: 10,
        catalog_filter: None,
        member_roles: members.iter().map(|(u, r)| (u.to_string(), *r)).collect::<BTreeMap<_, _>>(),
        admins: admins.iter().map(|a| a.to_string()).collect::<BTreeSet<_>>(),
        tryme_allow_gpus: false,
    }
}

pub fn provider_spec(i: usize, cap: Capacity) -> ProviderSpec {
    ProviderSpec {
        name: format!("dc{i}"),
        country: "ES".into(),
        endpoint: format!("https://dc{i}.example"),
        capacity: cap,
        supported_vos: [VO.to_string()].into(),
    }
}

/// Platform with one VO, `caps.len()` providers under unlimited SLAs and
/// one module record.
pub struct Fixture {
    pub clock: Arc<ManualClock>,
    pub platform: Platform,
    pub providers: Vec<ProviderId>,
    pub module: ModuleId,
}

pub fn register_world(platform: &Platform, caps: &[Capacity]) -> (Vec<ProviderId>, ModuleId) {
    platform
        .execute(Command::RegisterVo {
            vo: vo(&[("alice", Role::Full), ("bob", Role::Full), ("dora", Role::Demo)], &["root"]),
        })
        .unwrap();
    let mut providers = Vec::new();
    for (i, cap) in caps.iter().enumerate() {
        let Outcome::ProviderId(id) = platform
            .execute(Command::RegisterProvider { spec: provider_spec(i, *cap) })
            .unwrap()
        else {
            panic!("expected provider id")
        };
        platform
            .execute(Command::UpsertSla {
                spec: SlaSpec {
                    vo: VO.into(),
                    provider: id.clone(),
                    caps: *cap,
                    valid_from: 0,
                    valid_until: u64::MAX,
                },
            })
            .unwrap();
        providers.push(id);
    }
    let Outcome::ModuleId(module) = platform
        .execute(Command::RegisterModule {
            kind: RecordKind::Module,
            metadata: metadata("flowers"),
            visibility: Visibility::All,
        })
        .unwrap()
    else {
        panic!("expected module id")
    };
    (providers, module)
}

pub fn fixture(caps: &[Capacity]) -> Fixture {
    fixture_with(caps, Plugins::default())
}

pub fn fixture_with(caps: &[Capacity], plugins: Plugins) -> Fixture {
    let clock = Arc::new(ManualClock::new(1_000));
    let platform = Platform::in_memory(plugins, clock.clone());
    let (providers, module) = register_world(&platform, caps);
    Fixture {
        clock,
        platform,
        providers,
        module,
    }
}
