mod common;

use std::collections::BTreeSet;

use common::{claims, fixture, VO};
use fedplane_core::error::Error;
use fedplane_core::inference::{EndpointSpec, COLD_START_LATENCY_MS};
use fedplane_core::platform::Command;
use fedplane_core::provenance::{GraphFormat, NodeKind, ProvQuery};
use fedplane_core::quality::StageStatus;
use fedplane_core::scheduler::{JobKind, JobSpec, JobState, Sidecar};
use fedplane_core::types::{Capacity, Role};
use serde_json::json;

fn batch(owner: &str, module: &fedplane_core::types::ModuleId, res: Capacity) -> JobSpec {
    JobSpec {
        owner: owner.into(),
        vo: VO.into(),
        kind: JobKind::Batch,
        module: module.clone(),
        resources: res,
        sidecars: BTreeSet::new(),
        dataset_doi: None,
    }
}

#[test]
fn develop_train_deploy_and_query_provenance() {
    let f = fixture(&[Capacity::new(4, 100, 500), Capacity::new(8, 200, 500)]);
    let p = &f.platform;
    let alice = claims("alice", Role::Full);

    let run = p.run_pipeline(&f.module, "main", true, None).unwrap();
    assert!(run.stages.iter().all(|s| s.status == StageStatus::Passed), "{run:?}");
    let digest = run.build_digest.clone().unwrap();
    assert_eq!(p.read(|s| s.catalog.get(&f.module).unwrap().image_digest.clone()), Some(digest.clone()));

    let mut spec = batch("alice", &f.module, Capacity::new(2, 10, 10));
    spec.sidecars.insert(Sidecar::DatasetFetch);
    spec.dataset_doi = Some("10.5281/zenodo.42".into());
    let free_before: Vec<Capacity> = p.read(|s| s.federation.providers().map(|p| p.free).collect());
    let job = p.submit(spec, &alice).unwrap();
    f.clock.advance(2_000);
    let tick = p.tick().unwrap();
    assert_eq!(tick.summary.schedule.placements.len(), 1);
    assert_eq!(p.read(|s| s.scheduler.job(&job).unwrap().state), JobState::Running);
    let sidecar = p
        .entries_since(0)
        .into_iter()
        .find(|e| e.kind == "event.sidecar")
        .expect("dataset fetch sidecar event");
    assert!(sidecar.payload["detail"].as_str().unwrap().contains("https://doi.org/10.5281/zenodo.42"));

    f.clock.advance(1_000);
    let metrics = json!({"accuracy": 0.93, "loss": 0.21}).as_object().cloned();
    let done = p.complete(&job, true, metrics, &alice).unwrap();
    assert_eq!(done.state, JobState::Completed);
    let free_after: Vec<Capacity> = p.read(|s| s.federation.providers().map(|p| p.free).collect());
    assert_eq!(free_before, free_after);

    let ep = p
        .create_endpoint(
            EndpointSpec {
                module: f.module.clone(),
                min_replicas: 0,
                max_replicas: 3,
                per_replica_concurrency: 2,
                public_tryme: false,
            },
            &alice,
        )
        .unwrap();
    let out = p.invoke(&ep, &alice, &json!({"image": "rose.png"})).unwrap();
    assert!(out.cold_start);
    assert_eq!(out.output, json!({"echo": {"image": "rose.png"}, "digest": digest}));
    let second = p.invoke(&ep, &alice, &json!({"image": "tulip.png"})).unwrap();
    assert!(!second.cold_start);
    let metrics = p.read(|s| s.inference.endpoint(&ep).unwrap().metrics.clone());
    assert_eq!(metrics.request_count, 2);
    assert_eq!(metrics.cold_starts, 1);
    // The cold start is charged its fixed latency, so it lands in the 500 ms bucket.
    assert_eq!(metrics.latency.counts[3], 1);
    assert!(COLD_START_LATENCY_MS <= 500);

    let g = p.provenance_graph(&f.module).unwrap();
    let model = format!("model:{}", f.module);
    let dataset = "dataset:https://doi.org/10.5281/zenodo.42".to_string();
    let build = format!("build:{}", run.id);
    let training = format!("training:{job}");
    let nodes: BTreeSet<(String, NodeKind)> = g.nodes.iter().map(|n| (n.id.clone(), n.kind)).collect();
    let expected_nodes: BTreeSet<(String, NodeKind)> = [
        (model.clone(), NodeKind::Entity),
        (dataset.clone(), NodeKind::Entity),
        ("agent:author:Ada%20Lovelace".to_string(), NodeKind::Agent),
        (build.clone(), NodeKind::Activity),
        (training.clone(), NodeKind::Activity),
        ("agent:user:alice".to_string(), NodeKind::Agent),
    ]
    .into();
    assert_eq!(nodes, expected_nodes);
    let edges: Vec<(String, &str, String)> =
        g.edges.iter().map(|e| (e.from.clone(), e.relation.as_str(), e.to.clone())).collect();
    let mut expected_edges = vec![
        (model.clone(), "wasAttributedTo", "agent:author:Ada%20Lovelace".to_string()),
        (model.clone(), "wasDerivedFrom", dataset.clone()),
        (model.clone(), "wasGeneratedBy", build.clone()),
        (model.clone(), "wasGeneratedBy", training.clone()),
        (training.clone(), "used", dataset.clone()),
        (training.clone(), "wasAssociatedWith", "agent:user:alice".to_string()),
    ];
    expected_edges.sort();
    let mut sorted = edges.clone();
    sorted.sort();
    assert_eq!(sorted, expected_edges);
    assert!(g.violations().is_empty());
    let t = g.node(&training).unwrap();
    assert_eq!(t.labels["metric:accuracy"], "0.93");
    assert_eq!(g.datasets_used(&model), BTreeSet::from([dataset.clone()]));
    assert_eq!(
        g.query(&ProvQuery::ActivitiesOf("agent:user:alice".into())),
        BTreeSet::from([training.clone()])
    );
    let a = p.provenance_bytes(&f.module, GraphFormat::CanonicalJson).unwrap();
    let b = p.provenance_bytes(&f.module, GraphFormat::CanonicalJson).unwrap();
    assert_eq!(a, b);

    let stats = p.stats();
    assert_eq!(stats.deployments_by_state["completed"], 1);
    assert_eq!(stats.users_active, 0);
    assert_eq!(stats.catalog_size, 1);
    assert_eq!(stats.endpoints.request_count, 2);
    assert_eq!(stats.pipeline_runs, 1);
}

#[test]
fn stop_cascades_deployment_secrets_and_snapshot_restores() {
    let f = fixture(&[Capacity::new(2, 50, 50)]);
    let p = &f.platform;
    let alice = claims("alice", Role::Full);
    let mut spec = batch("alice", &f.module, Capacity::new(1, 1, 1));
    spec.kind = JobKind::Standard;
    let job = p.submit(spec, &alice).unwrap();
    p.tick().unwrap();
    let prefix = format!("deployments/{job}/");
    p.put_secret("alice", &format!("{prefix}api_key"), b"k-123").unwrap();
    p.put_secret("alice", &format!("{prefix}db/password"), b"hunter2").unwrap();
    p.put_secret("alice", "personal/token", b"t").unwrap();

    let snap = p.snapshot(&job, &alice).unwrap();
    let bob = claims("bob", Role::Full);
    assert!(matches!(p.stop(&job, &bob), Err(Error::Forbidden(_))));
    let stopped = p.stop(&job, &alice).unwrap();
    assert_eq!(stopped.state, JobState::Stopped);
    assert!(stopped.endpoints.is_empty());
    assert_eq!(p.list_secrets("alice", ""), vec!["personal/token".to_string()]);
    assert!(p.entries_since(0).iter().any(|e| e.kind == "event.secrets_cascade" && e.payload["count"] == 2));

    assert!(matches!(p.restore(&snap, &bob), Err(Error::Forbidden(_))));
    let restored = p.restore(&snap, &alice).unwrap();
    assert_ne!(restored, job);
    p.tick().unwrap();
    assert_eq!(p.read(|s| s.scheduler.job(&restored).unwrap().state), JobState::Running);
    assert!(matches!(p.get_secret("bob", "personal/token"), Err(Error::NotFound(_))));
}

#[test]
fn tryme_expires_strictly_after_ttl_and_demo_is_tiered() {
    let f = fixture(&[Capacity::new(0, 50, 50)]);
    let p = &f.platform;
    let dora = claims("dora", Role::Demo);
    let mut spec = batch("dora", &f.module, Capacity::new(0, 1, 1));
    for kind in [JobKind::Standard, JobKind::Batch] {
        spec.kind = kind;
        match p.submit(spec.clone(), &dora) {
            Err(Error::Forbidden(m)) => assert!(m.contains("demo")),
            other => panic!("expected tier error, got {other:?}"),
        }
    }
    spec.kind = JobKind::Tryme;
    let job = p.submit(spec, &dora).unwrap();
    p.tick().unwrap();
    let started = p.read(|s| s.scheduler.job(&job).unwrap().started_at.unwrap());
    let ttl_ms = p.read(|s| s.scheduler.config.tryme_ttl_s) * 1000;
    // Keep the provider alive across the TTL.
    let heartbeat = |p: &fedplane_core::platform::Platform, id| {
        p.execute(Command::Heartbeat { provider: id, free: Capacity::new(0, 50, 50) }).unwrap();
    };
    let mut t = started;
    while t + 20_000 < started + ttl_ms {
        t += 20_000;
        f.clock.set(t);
        heartbeat(p, f.providers[0].clone());
    }
    f.clock.set(started + ttl_ms);
    heartbeat(p, f.providers[0].clone());
    p.tick().unwrap();
    assert_eq!(p.read(|s| s.scheduler.job(&job).unwrap().state), JobState::Running);
    f.clock.set(started + ttl_ms + 1);
    let tick = p.tick().unwrap();
    assert_eq!(tick.summary.expired, vec![job.clone()]);
    assert_eq!(p.read(|s| s.scheduler.job(&job).unwrap().state), JobState::Expired);
}

#[test]
fn failed_metadata_stage_changes_nothing_downstream() {
    let f = fixture(&[Capacity::new(1, 1, 1)]);
    let p = &f.platform;
    let mut files = std::collections::BTreeMap::new();
    files.insert("metadata.json".to_string(), r#"{"title": "x"}"#.to_string());
    let bundle = fedplane_core::quality::SourceBundle { files };
    let fragments_before = p.read(|s| s.provenance.fragments().len());
    let run = p.run_pipeline(&f.module, "broken", true, Some(bundle)).unwrap();
    assert_eq!(run.stages[0].status, StageStatus::Failed);
    assert!(run.stages[1..].iter().all(|s| s.status == StageStatus::Skipped));
    assert_eq!(p.read(|s| s.catalog.get(&f.module).unwrap().image_digest.clone()), None);
    assert_eq!(p.read(|s| s.provenance.fragments().len()), fragments_before);
    assert_eq!(p.pipeline_run(&run.id).unwrap(), run);
}

#[test]
fn async_jobs_drain_to_terminal_states() {
    let f = fixture(&[Capacity::new(1, 1, 1)]);
    let p = &f.platform;
    let alice = claims("alice", Role::Full);
    p.run_pipeline(&f.module, "main", false, None).unwrap();
    let ep = p
        .create_endpoint(
            EndpointSpec {
                module: f.module.clone(),
                min_replicas: 0,
                max_replicas: 2,
                per_replica_concurrency: 1,
                public_tryme: false,
            },
            &alice,
        )
        .unwrap();
    let batch = p.config().drain_batch;
    let n = batch * 2 + 3;
    let ids: Vec<_> = (0..n).map(|i| p.submit_async(&ep, &alice, &json!({"i": i})).unwrap()).collect();
    let mut ticks = 0;
    while p.read(|s| s.inference.pending_async(usize::MAX).len()) > 0 {
        p.tick().unwrap();
        ticks += 1;
        assert!(ticks <= n.div_ceil(batch), "not drained after {ticks} ticks");
    }
    for (i, id) in ids.iter().enumerate() {
        let st = p.async_status(id, &alice).unwrap();
        assert_eq!(st.output.unwrap()["echo"], json!({"i": i}));
    }
    let other = fedplane_core::auth::Claims { vo: "elsewhere".into(), ..alice };
    assert!(matches!(p.async_status(&ids[0], &other), Err(Error::NotFound(_))));
}
