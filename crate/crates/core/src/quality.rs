//! Staged quality pipeline for catalog modules.
//!
//! Stages run in the fixed order of [`StageName::ORDER`]. The first failing
//! stage marks every later stage skipped, so a run's status sequence always
//! matches `passed* failed? skipped*`. Execution is pure: it yields a
//! [`PipelineRun`] whose stage statuses decide which side effects (digest
//! update, endpoint staleness, provenance fragment, minted id) the platform
//! then applies.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::{canonical_value, sha256_parts};
use crate::catalog::{parse_document, validate_value, ModuleRecord};
use crate::error::{Error, Result};
use crate::types::{Millis, ModuleId, RunId};

pub const PSEUDO_DOI_PREFIX: &str = "10.5281/fake.";

/// Source bundle files holding a metadata document, in lookup order.
pub const METADATA_FILES: [&str; 3] = ["metadata.json", "metadata.yaml", "metadata.yml"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Metadata,
    StaticChecks,
    Build,
    Refresh,
    Provenance,
    Release,
}

impl StageName {
    pub const ORDER: [StageName; 6] = [
        StageName::Metadata,
        StageName::StaticChecks,
        StageName::Build,
        StageName::Refresh,
        StageName::Provenance,
        StageName::Release,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    Passed,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub name: StageName,
    pub status: StageStatus,
    pub detail: String,
    pub started: Option<Millis>,
    pub ended: Option<Millis>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub id: RunId,
    pub module: ModuleId,
    pub source_ref: String,
    pub stages: Vec<Stage>,
    pub release_requested: bool,
    pub build_digest: Option<String>,
    pub minted_id: Option<String>,
}

impl PipelineRun {
    pub fn stage(&self, name: StageName) -> &Stage {
        self.stages.iter().find(|s| s.name == name).expect("every stage is present")
    }

    pub fn passed(&self, name: StageName) -> bool {
        self.stage(name).status == StageStatus::Passed
    }

    pub fn statuses(&self) -> Vec<StageStatus> {
        self.stages.iter().map(|s| s.status).collect()
    }
}

/// True iff `statuses` matches `passed* failed? skipped*`.
pub fn is_well_formed(statuses: &[StageStatus]) -> bool {
    let mut i = 0;
    while i < statuses.len() && statuses[i] == StageStatus::Passed {
        i += 1;
    }
    if i < statuses.len() && statuses[i] == StageStatus::Failed {
        i += 1;
    }
    statuses[i..].iter().all(|s| *s == StageStatus::Skipped)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceBundle {
    pub files: BTreeMap<String, String>,
}

impl SourceBundle {
    pub fn metadata_file(&self) -> Option<(&str, &str)> {
        METADATA_FILES
            .iter()
            .find_map(|name| self.files.get_key_value(*name))
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Supplies the source bundle for a (module, ref) pair.
pub trait SourceProvider: Send + Sync {
    fn fetch(&self, module: &ModuleId, source_ref: &str) -> std::result::Result<SourceBundle, String>;
}

/// Deterministic stand-in for a code forge: a minimal predictor package
/// without a metadata file, so the catalog record's metadata is checked.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubSourceProvider;

impl SourceProvider for StubSourceProvider {
    fn fetch(&self, module: &ModuleId, source_ref: &str) -> std::result::Result<SourceBundle, String> {
        let mut files = BTreeMap::new();
        files.insert(
            "README.md".into(),
            format!("# {module}\n\nBuilt from `{source_ref}`.\n"),
        );
        files.insert(
            "predict.py".into(),
            "def predict(payload):\n    return {\"echo\": payload}\n".into(),
        );
        Ok(SourceBundle { files })
    }
}

pub type CheckFn = dyn Fn(&SourceBundle) -> std::result::Result<(), String> + Send + Sync;

#[derive(Clone, Default)]
pub struct CheckerRegistry {
    checkers: BTreeMap<String, Arc<CheckFn>>,
}

impl std::fmt::Debug for CheckerRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.checkers.keys()).finish()
    }
}

pub const BANNED_TOKENS: [&str; 3] = ["eval(", "exec(", "os.system("];

impl CheckerRegistry {
    /// Registry with the shipped checkers `non_empty_bundle` and `banned_token`.
    pub fn with_defaults() -> Self {
        let mut r = Self::default();
        r.register("non_empty_bundle", |b: &SourceBundle| {
            if b.files.values().any(|body| !body.trim().is_empty()) {
                Ok(())
            } else {
                Err("source bundle has no non-empty file".into())
            }
        })
        .expect("fresh registry");
        r.register("banned_token", |b: &SourceBundle| {
            for (name, body) in &b.files {
                if let Some(tok) = BANNED_TOKENS.iter().find(|t| body.contains(*t)) {
                    return Err(format!("{name} contains banned token `{tok}`"));
                }
            }
            Ok(())
        })
        .expect("fresh registry");
        r
    }

    pub fn register<F>(&mut self, name: &str, check: F) -> Result<()>
    where
        F: Fn(&SourceBundle) -> std::result::Result<(), String> + Send + Sync + 'static,
    {
        if name.is_empty() {
            return Err(Error::validation("checker name must not be empty"));
        }
        if self.checkers.contains_key(name) {
            return Err(Error::Conflict(format!("checker `{name}`")));
        }
        self.checkers.insert(name.to_string(), Arc::new(check));
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.checkers.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.checkers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkers.is_empty()
    }
}

/// Called before each stage executes; an `Err` fails that stage.
pub trait StageHook: Send + Sync {
    fn before_stage(&self, run: &RunId, stage: StageName) -> std::result::Result<(), String>;
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

pub fn build_digest(module: &ModuleId, source_ref: &str, metadata: &Value) -> String {
    sha256_parts(&[
        module.as_str().as_bytes(),
        source_ref.as_bytes(),
        canonical_value(metadata).as_bytes(),
    ])
}

pub fn pseudo_doi(digest: &str) -> String {
    format!("{PSEUDO_DOI_PREFIX}{}", &digest[..8])
}

pub struct PipelineEnv<'a> {
    pub sources: &'a dyn SourceProvider,
    pub checkers: &'a CheckerRegistry,
    pub hook: Option<&'a dyn StageHook>,
}

/// Execute every stage for `record`. `bundle` overrides the source provider.
pub fn execute(
    id: RunId,
    record: &ModuleRecord,
    source_ref: &str,
    release_requested: bool,
    bundle: Option<SourceBundle>,
    env: &PipelineEnv<'_>,
    now: Millis,
) -> PipelineRun {
    let mut run = PipelineRun {
        id,
        module: record.id.clone(),
        source_ref: source_ref.to_string(),
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
        release_requested,
        build_digest: None,
        minted_id: None,
    };

    let fetched = match bundle {
        Some(b) => Ok(b),
        None => catch_unwind(AssertUnwindSafe(|| env.sources.fetch(&record.id, source_ref)))
            .unwrap_or_else(|p| Err(format!("source provider panicked: {}", panic_message(p)))),
    };
    let mut metadata: Option<Value> = None;
    let mut failed = false;

    for i in 0..run.stages.len() {
        let name = run.stages[i].name;
        if failed {
            run.stages[i].status = StageStatus::Skipped;
            run.stages[i].detail = "skipped after earlier failure".into();
            continue;
        }
        if name == StageName::Release && !release_requested {
            run.stages[i].status = StageStatus::Skipped;
            run.stages[i].detail = "release not requested".into();
            continue;
        }
        run.stages[i].started = Some(now);
        let outcome = env
            .hook
            .map(|h| h.before_stage(&run.id, name))
            .unwrap_or(Ok(()))
            .and_then(|()| match name {
                StageName::Metadata => {
                    let bundle = fetched.as_ref().map_err(|e| format!("source fetch failed: {e}"))?;
                    let doc = match bundle.metadata_file() {
                        Some((file, text)) => {
                            parse_document(text).map_err(|e| format!("{file}: {e}"))?
                        }
                        None => record.metadata.to_value(),
                    };
                    let report = validate_value(&doc);
                    if !report.valid {
                        return Err(report.summary());
                    }
                    metadata = Some(doc);
                    Ok("metadata valid".to_string())
                }
                StageName::StaticChecks => {
                    let bundle = fetched.as_ref().map_err(|e| e.clone())?;
                    let mut lines = Vec::new();
                    let mut ok = true;
                    for (cname, check) in &env.checkers.checkers {
                        let res = catch_unwind(AssertUnwindSafe(|| check(bundle)))
                            .unwrap_or_else(|p| Err(format!("checker crashed: {}", panic_message(p))));
                        match res {
                            Ok(()) => lines.push(format!("{cname}: ok")),
                            Err(e) => {
                                ok = false;
                                lines.push(format!("{cname}: failed: {e}"));
                            }
                        }
                    }
                    let detail = format!("{} checkers; {}", lines.len(), lines.join("; "));
                    if ok {
                        Ok(detail)
                    } else {
                        Err(detail)
                    }
                }
                StageName::Build => {
                    let md = metadata.as_ref().expect("metadata stage passed");
                    let digest = build_digest(&record.id, source_ref, md);
                    run.build_digest = Some(digest.clone());
                    Ok(format!("digest {digest}"))
                }
                StageName::Refresh => Ok(format!(
                    "image digest set to {}; endpoints of {} marked stale",
                    run.build_digest.as_deref().unwrap_or_default(),
                    record.id
                )),
                StageName::Provenance => Ok("pipeline fragment emitted".into()),
                StageName::Release => {
                    let doi = pseudo_doi(run.build_digest.as_deref().expect("build passed"));
                    run.minted_id = Some(doi.clone());
                    Ok(format!("minted {doi}"))
                }
            });
        let stage = &mut run.stages[i];
        stage.ended = Some(now);
        match outcome {
            Ok(detail) => {
                stage.status = StageStatus::Passed;
                stage.detail = detail;
            }
            Err(detail) => {
                stage.status = StageStatus::Failed;
                stage.detail = detail;
                failed = true;
                if name == StageName::Release {
                    run.minted_id = None;
                }
            }
        }
    }
    run
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Catalog, RecordKind, Visibility};
    use serde_json::json;
    use StageStatus::*;

    fn record() -> ModuleRecord {
        let mut cat = Catalog::default();
        let id = cat
            .register(
                RecordKind::Module,
                &json!({"title": "T", "summary": "S", "license": "MIT",
                        "links": {"source_repo": "https://git.example/r"}}),
                Visibility::All,
                0,
            )
            .unwrap();
        cat.get(&id).unwrap().clone()
    }

    fn run(bundle: Option<SourceBundle>, release: bool, hook: Option<&dyn StageHook>, checkers: &CheckerRegistry) -> PipelineRun {
        let env = PipelineEnv { sources: &StubSourceProvider, checkers, hook };
        execute(RunId::from("run-000001"), &record(), "abc123", release, bundle, &env, 5)
    }

    #[test]
    fn no_release_skips_last_stage() {
        let r = run(None, false, None, &CheckerRegistry::with_defaults());
        assert_eq!(r.statuses(), [Passed, Passed, Passed, Passed, Passed, Skipped]);
        assert!(r.minted_id.is_none());
        assert!(r.build_digest.is_some());
    }

    #[test]
    fn release_mints_pseudo_doi() {
        let r = run(None, true, None, &CheckerRegistry::with_defaults());
        assert_eq!(r.statuses(), [Passed; 6]);
        let doi = r.minted_id.unwrap();
        assert!(doi.starts_with(PSEUDO_DOI_PREFIX));
        assert!(crate::catalog::schema::is_valid_doi(&doi));
        assert_eq!(&doi[PSEUDO_DOI_PREFIX.len()..], &r.build_digest.unwrap()[..8]);
    }

    #[test]
    fn broken_bundle_metadata_fails_first_stage() {
        let mut files = BTreeMap::new();
        files.insert("metadata.json".to_string(), r#"{"summary": "no title"}"#.to_string());
        let r = run(Some(SourceBundle { files }), true, None, &CheckerRegistry::with_defaults());
        assert_eq!(r.statuses(), [Failed, Skipped, Skipped, Skipped, Skipped, Skipped]);
        assert!(r.stage(StageName::Metadata).detail.contains("/title"));
        assert!(r.build_digest.is_none() && r.minted_id.is_none());
    }

    #[test]
    fn banned_token_and_crashing_checker() {
        let mut checkers = CheckerRegistry::with_defaults();
        checkers.register("explodes", |_: &SourceBundle| panic!("boom")).unwrap();
        assert!(checkers.register("explodes", |_: &SourceBundle| Ok(())).is_err());
        let r = run(None, false, None, &checkers);
        assert_eq!(r.stage(StageName::StaticChecks).status, Failed);
        let detail = &r.stage(StageName::StaticChecks).detail;
        assert!(detail.starts_with("3 checkers") && detail.contains("boom"), "{detail}");

        let mut files = BTreeMap::new();
        files.insert("x.py".to_string(), "eval(input())".to_string());
        let r = run(Some(SourceBundle { files }), false, None, &CheckerRegistry::with_defaults());
        assert!(r.stage(StageName::StaticChecks).detail.contains("banned"));
    }

    #[test]
    fn digest_is_deterministic() {
        let a = run(None, false, None, &CheckerRegistry::with_defaults());
        let b = run(None, false, None, &CheckerRegistry::with_defaults());
        assert_eq!(a.build_digest, b.build_digest);
    }

    struct FailAt(StageName);
    impl StageHook for FailAt {
        fn before_stage(&self, _: &RunId, stage: StageName) -> std::result::Result<(), String> {
            if stage == self.0 { Err("injected".into()) } else { Ok(()) }
        }
    }

    #[test]
    fn injected_faults_keep_pattern() {
        for stage in StageName::ORDER {
            let hook = FailAt(stage);
            let r = run(None, true, Some(&hook), &CheckerRegistry::with_defaults());
            assert!(is_well_formed(&r.statuses()), "{:?}", r.statuses());
            assert_eq!(r.stage(stage).status, Failed);
            assert_eq!(r.minted_id.is_some(), r.passed(StageName::Release));
        }
    }

    #[test]
    fn pattern_checker() {
        assert!(is_well_formed(&[Passed, Failed, Skipped]));
        assert!(is_well_formed(&[Skipped]));
        assert!(!is_well_formed(&[Failed, Passed]));
        assert!(!is_well_formed(&[Skipped, Passed]));
        assert!(!is_well_formed(&[Failed, Failed]));
    }
}
