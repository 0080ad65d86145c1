//! Scheduler invariants under random traces, and placement against an
//! exhaustive feasibility oracle.

use std::collections::{BTreeMap, BTreeSet};

use fedplane_core::auth::Claims;
use fedplane_core::catalog::{Catalog, RecordKind, Visibility};
use fedplane_core::federation::{Federation, MembershipConfig, ProviderSpec, SlaSpec, VirtualOrganization};
use fedplane_core::ranker::Ranker;
use fedplane_core::scheduler::{DoiResolverStub, JobKind, JobSpec, JobState, Scheduler, SchedulerConfig};
use fedplane_core::types::{Capacity, JobId, ModuleId, ProviderId, Role};
use proptest::prelude::*;
use serde_json::json;

const VOS: [&str; 2] = ["vo-a", "vo-b"];

fn claims(user: &str, vo: &str) -> Claims {
    Claims {
        user: user.into(),
        vo: vo.into(),
        role: Role::Full,
        exp: u64::MAX,
        admin: false,
    }
}

fn catalog() -> (Catalog, ModuleId) {
    let mut c = Catalog::default();
    let m = c
        .register(
            RecordKind::Module,
            &json!({"title": "m", "summary": "s", "license": "MIT",
                    "links": {"source_repo": "https://git.example/m"}}),
            Visibility::All,
            0,
        )
        .unwrap();
    (c, m)
}

#[derive(Clone, Debug)]
struct ProviderCase {
    cap: [u64; 3],
    vos: [bool; 2],
    sla: [Option<[u64; 3]>; 2],
    sla_expired: bool,
    stale: bool,
    outcomes: Vec<(bool, u32)>,
}

fn provider_case() -> impl Strategy<Value = ProviderCase> {
    (
        [0u64..6, 0u64..40, 0u64..40],
        [any::<bool>(), any::<bool>()],
        [
            proptest::option::weighted(0.8, [0u64..6, 0u64..40, 0u64..40]),
            proptest::option::weighted(0.8, [0u64..6, 0u64..40, 0u64..40]),
        ],
        proptest::bool::weighted(0.15),
        proptest::bool::weighted(0.15),
        proptest::collection::vec((any::<bool>(), 1u32..300), 0..8),
    )
        .prop_map(|(cap, vos, sla, sla_expired, stale, outcomes)| ProviderCase {
            cap,
            vos,
            // An SLA never promises more than the provider has.
            sla: sla.map(|o| o.map(|s| [s[0].min(cap[0]), s[1].min(cap[1]), s[2].min(cap[2])])),
            sla_expired,
            stale,
            outcomes,
        })
}

fn cap(v: [u64; 3]) -> Capacity {
    Capacity::new(v[0], v[1], v[2])
}

fn fits(need: [u64; 3], have: [u64; 3]) -> bool {
    (0..3).all(|i| need[i] <= have[i])
}

/// Independent score: Laplace-smoothed success over the kept window,
/// median successful creation time (tau when none).
fn oracle_score(outcomes: &[(bool, u32)], window: usize, tau: f64) -> f64 {
    let kept = &outcomes[outcomes.len().saturating_sub(window)..];
    let n = kept.len() as f64;
    let s = kept.iter().filter(|o| o.0).count() as f64;
    let p = (s + 1.0) / (n + 2.0);
    let mut times: Vec<f64> = kept.iter().filter(|o| o.0).map(|o| f64::from(o.1)).collect();
    times.sort_by(f64::total_cmp);
    let t = match times.len() {
        0 => tau,
        k if k % 2 == 1 => times[k / 2],
        k => (times[k / 2 - 1] + times[k / 2]) / 2.0,
    };
    p / (1.0 + t / tau)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn placements_match_exhaustive_oracle(
        providers in proptest::collection::vec(provider_case(), 1..=4),
        jobs in proptest::collection::vec((0usize..2, [0u64..4, 0u64..20, 0u64..20]), 1..=8),
    ) {
        let now = 100_000;
        let mut fed = Federation::new(MembershipConfig { suspect_after_ms: 30_000, dead_after_ms: 90_000 });
        let mut ranker = Ranker::default();
        for vo in VOS {
            fed.register_vo(VirtualOrganization {
                id: vo.into(),
                name: vo.into(),
                default_user_storage_quota_gb: 1,
                catalog_filter: None,
                member_roles: [("u".to_string(), Role::Full)].into(),
                admins: BTreeSet::new(),
                tryme_allow_gpus: false,
            }).unwrap();
        }
        let mut ids = Vec::new();
        for (i, pc) in providers.iter().enumerate() {
            let supported: BTreeSet<String> =
                VOS.iter().zip(pc.vos).filter(|(_, on)| *on).map(|(v, _)| v.to_string()).collect();
            let id = fed.register_provider(ProviderSpec {
                name: format!("p{i}"),
                country: "DE".into(),
                endpoint: format!("https://p{i}.example"),
                capacity: cap(pc.cap),
                supported_vos: supported,
            }, if pc.stale { 0 } else { now - 1_000 }).unwrap();
            ranker.track(&id);
            for (v, caps) in VOS.iter().zip(pc.sla) {
                if let Some(c) = caps {
                    let (from, until) = if pc.sla_expired { (0, now) } else { (0, u64::MAX) };
                    fed.upsert_sla(SlaSpec { vo: v.to_string(), provider: id.clone(), caps: cap(c), valid_from: from, valid_until: until }).unwrap();
                }
            }
            for (ok, t) in &pc.outcomes {
                ranker.record_outcome(&id, *ok, f64::from(*t)).unwrap();
            }
            ids.push(id);
        }
        fed.sweep_membership(now);
        let (cat, module) = catalog();
        let mut sched = Scheduler::new(SchedulerConfig::default());
        let mut ev = Vec::new();
        let mut submitted: Vec<(JobId, usize, [u64; 3])> = Vec::new();
        for (vo, need) in &jobs {
            let spec = JobSpec {
                owner: "u".into(),
                vo: VOS[*vo].into(),
                kind: JobKind::Batch,
                module: module.clone(),
                resources: cap(*need),
                sidecars: BTreeSet::new(),
                dataset_doi: None,
            };
            let id = sched.submit(spec, &claims("u", VOS[*vo]), &fed, &cat, now, &mut ev).unwrap();
            submitted.push((id, *vo, *need));
        }

        // Oracle: round-robin over VOs by id, FIFO inside a VO.
        let mut per_vo: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, (_, vo, _)) in submitted.iter().enumerate() {
            per_vo.entry(*vo).or_default().push(i);
        }
        let mut order = Vec::new();
        for round in 0..jobs.len() {
            for q in per_vo.values() {
                if let Some(i) = q.get(round) { order.push(*i); }
            }
        }
        let mut free: Vec<[u64; 3]> = providers.iter().map(|p| p.cap).collect();
        let mut used = vec![[[0u64; 3]; 2]; providers.len()];
        let mut expected: BTreeMap<JobId, ProviderId> = BTreeMap::new();
        for i in order {
            let (id, vo, need) = &submitted[i];
            let mut best: Option<(f64, &ProviderId, usize)> = None;
            for (k, pc) in providers.iter().enumerate() {
                let alive = !pc.stale;
                let Some(sla) = pc.sla[*vo] else { continue };
                let headroom = [sla[0].saturating_sub(used[k][*vo][0]), sla[1].saturating_sub(used[k][*vo][1]), sla[2].saturating_sub(used[k][*vo][2])];
                let within_sla = (0..3).all(|d| used[k][*vo][d] <= sla[d]) && fits(*need, headroom);
                if !(alive && pc.vos[*vo] && !pc.sla_expired && fits(*need, free[k]) && within_sla) {
                    continue;
                }
                let s = oracle_score(&pc.outcomes, ranker.window_size, ranker.tau_s);
                let better = match best {
                    None => true,
                    Some((bs, bid, _)) => s > bs || (s == bs && &ids[k] < bid),
                };
                if better { best = Some((s, &ids[k], k)); }
            }
            if let Some((_, pid, k)) = best {
                for d in 0..3 {
                    free[k][d] -= need[d];
                    used[k][*vo][d] += need[d];
                }
                expected.insert(id.clone(), pid.clone());
            }
        }

        let report = sched.schedule_tick(&mut fed, &mut ranker, &DoiResolverStub, now, &mut ev);
        let actual: BTreeMap<JobId, ProviderId> =
            report.placements.iter().map(|p| (p.job.clone(), p.provider.clone())).collect();
        prop_assert_eq!(&actual, &expected);
        for (id, _, _) in &submitted {
            let st = sched.job(id).unwrap().state;
            prop_assert_eq!(st == JobState::Running, expected.contains_key(id));
        }
        prop_assert!(sched.audit(&fed).is_empty());
    }

    #[test]
    fn random_traces_keep_accounting_invariants(
        caps in proptest::collection::vec([0u64..8, 1u64..64, 1u64..64], 1..5),
        sla_frac in proptest::collection::vec(1u64..=4, 1..5),
        ops in proptest::collection::vec((0u8..6, any::<u16>(), [0u64..4, 0u64..24, 0u64..24]), 1..300),
    ) {
        let mut fed = Federation::default();
        let mut ranker = Ranker::default();
        fed.register_vo(VirtualOrganization {
            id: VOS[0].into(),
            name: "a".into(),
            default_user_storage_quota_gb: 1,
            catalog_filter: None,
            member_roles: [("u".to_string(), Role::Full), ("w".to_string(), Role::Full)].into(),
            admins: BTreeSet::new(),
            tryme_allow_gpus: true,
        }).unwrap();
        let mut pids = Vec::new();
        for (i, c) in caps.iter().enumerate() {
            let id = fed.register_provider(ProviderSpec {
                name: format!("p{i}"), country: "FR".into(), endpoint: format!("https://p{i}.example"),
                capacity: cap(*c), supported_vos: [VOS[0].to_string()].into(),
            }, 0).unwrap();
            ranker.track(&id);
            let f = sla_frac[i % sla_frac.len()];
            fed.upsert_sla(SlaSpec {
                vo: VOS[0].into(), provider: id.clone(),
                caps: Capacity::new(c[0] * f / 4, c[1] * f / 4, c[2] * f / 4),
                valid_from: 0, valid_until: u64::MAX,
            }).unwrap();
            pids.push(id);
        }
        let (cat, module) = catalog();
        let mut sched = Scheduler::default();
        let mut ev = Vec::new();
        let mut now = 0u64;
        let mut ids: Vec<JobId> = Vec::new();
        for (op, pick, need) in ops {
            match op {
                0 | 1 => {
                    let kind = [JobKind::Standard, JobKind::Batch, JobKind::Tryme][pick as usize % 3];
                    let owner = if pick % 2 == 0 { "u" } else { "w" };
                    let spec = JobSpec { owner: owner.into(), vo: VOS[0].into(), kind, module: module.clone(),
                        resources: cap(need), sidecars: BTreeSet::new(), dataset_doi: None };
                    if let Ok(id) = sched.submit(spec, &claims(owner, VOS[0]), &fed, &cat, now, &mut ev) {
                        ids.push(id);
                    }
                }
                2 => {
                    now += u64::from(pick) * 20;
                    for p in &pids {
                        if pick % 7 != 0 {
                            let c = fed.provider(p).unwrap().capacity;
                            fed.heartbeat(p, now, c).unwrap();
                        }
                    }
                    fed.sweep_membership(now);
                    sched.expire_tryme(&mut fed, now, &mut ev);
                    sched.schedule_tick(&mut fed, &mut ranker, &DoiResolverStub, now, &mut ev);
                }
                3 if !ids.is_empty() => {
                    let id = &ids[pick as usize % ids.len()];
                    let _ = sched.complete(id, pick % 3 != 0, &mut fed, &mut ranker, now, &mut ev);
                }
                4 if !ids.is_empty() => {
                    let id = ids[pick as usize % ids.len()].clone();
                    let owner = sched.job(&id).unwrap().spec.owner.clone();
                    let _ = sched.stop(&id, &claims(&owner, VOS[0]), &mut fed, now, &mut ev);
                }
                _ => {
                    now += 700_000;
                    sched.expire_tryme(&mut fed, now, &mut ev);
                }
            }
            let problems = sched.audit(&fed);
            prop_assert!(problems.is_empty(), "{problems:?}");
            for p in fed.providers() {
                prop_assert_eq!(p.free + p.allocated(), p.capacity);
            }
        }
    }
}
