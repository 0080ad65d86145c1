//! Command-line grammar. Flags mirror API request fields one to one, with
//! snake_case fields spelled in kebab-case.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const DEFAULT_API_URL: &str = "http://127.0.0.1:8080";

#[derive(Debug, Parser)]
#[command(name = "fedplane", version, about = "Client for the federated AI workload control plane")]
pub struct Cli {
    /// Base URL of the platform API.
    #[arg(long, global = true, env = "AI4_API_URL", default_value = DEFAULT_API_URL)]
    pub api_url: String,

    /// Bearer token; overrides the token file.
    #[arg(long, global = true, env = "AI4_TOKEN", hide_env_values = true)]
    pub token: Option<String>,

    /// Token file written by `login`.
    #[arg(long, global = true, env = "AI4_TOKEN_FILE")]
    pub token_file: Option<PathBuf>,

    /// Print the API response as JSON.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Store a token in the token file after checking it against the API.
    Login(LoginArgs),
    /// Show the identity and tier of the current token.
    Session,
    #[command(subcommand)]
    Catalog(CatalogCmd),
    /// Submit a deployment.
    Deploy(DeployArgs),
    /// List deployments.
    Ps(PsArgs),
    /// Show one deployment.
    Inspect { id: String },
    /// Stop a deployment.
    Stop { id: String },
    /// Report a deployment's completion, with optional tracked metrics.
    Complete(CompleteArgs),
    /// Snapshot a deployment.
    Snapshot { id: String },
    /// List snapshots.
    Snapshots,
    /// Start a new deployment from a snapshot.
    Restore { snapshot: String },
    #[command(subcommand)]
    Secret(SecretCmd),
    #[command(subcommand)]
    Endpoint(EndpointCmd),
    #[command(name = "async", subcommand)]
    Async(AsyncCmd),
    #[command(subcommand)]
    Dag(DagCmd),
    #[command(subcommand)]
    Pipeline(PipelineCmd),
    #[command(subcommand)]
    Prov(ProvCmd),
    /// Platform statistics.
    Stats,
    /// List providers.
    Providers,
    /// Print event-log entries from the live stream.
    Events(EventsArgs),
    #[command(subcommand)]
    Admin(AdminCmd),
}

#[derive(Debug, Args)]
pub struct LoginArgs {
    /// Token to store; read from stdin when absent.
    #[arg(long = "with-token")]
    pub with_token: Option<String>,
    /// Store without contacting the API.
    #[arg(long)]
    pub offline: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RecordKindArg {
    Module,
    Tool,
}

#[derive(Debug, Subcommand)]
pub enum CatalogCmd {
    /// List records visible to the token's VO.
    List {
        #[arg(long, value_enum)]
        kind: Option<RecordKindArg>,
        /// Comma-separated tags that must all be present.
        #[arg(long)]
        tags: Option<String>,
        #[arg(long)]
        text: Option<String>,
    },
    /// Register a record from a JSON or YAML metadata file (`-` for stdin).
    Register {
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long, value_enum, default_value = "module")]
        kind: RecordKindArg,
        /// `all` or a comma-separated list of VO ids.
        #[arg(long, default_value = "all")]
        visibility: String,
    },
    /// Show one record.
    Show { id: String },
    /// Replace a record's metadata.
    Update {
        id: String,
        #[arg(long)]
        metadata: PathBuf,
    },
    /// Validate a record, or a candidate metadata file for it.
    Validate {
        id: String,
        #[arg(long)]
        metadata: Option<PathBuf>,
    },
    /// Print the interop export of a record.
    Export { id: String },
    /// Print the metadata schema.
    Schema,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum JobKindArg {
    Standard,
    Batch,
    Tryme,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SidecarArg {
    StorageMount,
    DatasetFetch,
    SlowDeployNotify,
}

#[derive(Debug, Args)]
pub struct ResourceArgs {
    #[arg(long, default_value_t = 0)]
    pub gpus: u64,
    #[arg(long, default_value_t = 0)]
    pub cpu_ghz: u64,
    #[arg(long, default_value_t = 0)]
    pub disk_gb: u64,
}

#[derive(Debug, Args)]
pub struct DeployArgs {
    #[arg(long, value_enum)]
    pub kind: JobKindArg,
    #[arg(long)]
    pub module: String,
    #[command(flatten)]
    pub resources: ResourceArgs,
    #[arg(long = "sidecar", value_enum)]
    pub sidecars: Vec<SidecarArg>,
    #[arg(long)]
    pub dataset_doi: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum JobStateArg {
    Queued,
    Scheduled,
    Running,
    Completed,
    Failed,
    Expired,
    Stopped,
}

#[derive(Debug, Args)]
pub struct PsArgs {
    #[arg(long, value_enum)]
    pub state: Option<JobStateArg>,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    pub id: String,
    /// Report a failure instead of a success.
    #[arg(long)]
    pub failed: bool,
    /// Tracked metric as `name=value`; numeric values are sent as numbers.
    #[arg(long = "metric")]
    pub metrics: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum SecretCmd {
    /// Store a secret from exactly one of the value flags.
    Put {
        path: String,
        #[arg(long, conflicts_with_all = ["value_b64", "from_file"])]
        value: Option<String>,
        #[arg(long, conflicts_with = "from_file")]
        value_b64: Option<String>,
        #[arg(long)]
        from_file: Option<PathBuf>,
    },
    /// Print a secret's bytes.
    Get { path: String },
    /// List secret paths.
    Ls {
        #[arg(long, default_value = "")]
        prefix: String,
    },
    /// Delete a secret.
    Rm { path: String },
}

/// JSON payload given inline or from a file (`-` for stdin).
#[derive(Debug, Args)]
pub struct PayloadArgs {
    #[arg(long, conflicts_with = "payload_file")]
    pub payload: Option<String>,
    #[arg(long)]
    pub payload_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EndpointCmd {
    /// Create a serverless endpoint for a built module.
    Create {
        #[arg(long)]
        module: String,
        #[arg(long, default_value_t = 0)]
        min_replicas: u32,
        #[arg(long)]
        max_replicas: u32,
        #[arg(long)]
        per_replica_concurrency: u32,
        #[arg(long)]
        public_tryme: bool,
    },
    /// List endpoints of the token's VO.
    Ls,
    /// Show one endpoint.
    Show { id: String },
    /// Invoke an endpoint synchronously.
    Invoke {
        id: String,
        #[command(flatten)]
        payload: PayloadArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum AsyncCmd {
    /// Queue an asynchronous invocation.
    Submit {
        endpoint: String,
        #[command(flatten)]
        payload: PayloadArgs,
    },
    /// Show an asynchronous job and its output.
    Status { id: String },
}

#[derive(Debug, Subcommand)]
pub enum DagCmd {
    /// Compose a pipeline from a JSON spec file (`{nodes, edges}`).
    Create {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Show one pipeline.
    Show { id: String },
    /// Invoke a pipeline.
    Invoke {
        id: String,
        #[command(flatten)]
        payload: PayloadArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum PipelineCmd {
    /// Run the quality pipeline for a module.
    Run {
        #[arg(long)]
        module: String,
        #[arg(long)]
        source_ref: String,
        #[arg(long)]
        release: bool,
        /// Directory whose files form the source bundle.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Show a pipeline run.
    Show { id: String },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GraphFormatArg {
    Json,
    Triples,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PatternArg {
    DatasetsUsed,
    ActivitiesOf,
    Lineage,
}

#[derive(Debug, Subcommand)]
pub enum ProvCmd {
    /// Print a module's provenance graph.
    Graph {
        module: String,
        #[arg(long, value_enum, default_value = "json")]
        format: GraphFormatArg,
    },
    /// Run a provenance query.
    Query {
        module: String,
        #[arg(long, value_enum)]
        pattern: PatternArg,
        /// Node id; defaults to the module's model node.
        #[arg(long)]
        subject: Option<String>,
    },
    /// Submit an experiment-tracking fragment.
    Track {
        module: String,
        #[command(flatten)]
        payload: PayloadArgs,
    },
}

#[derive(Debug, Args)]
pub struct EventsArgs {
    /// Replay entries after this seq.
    #[arg(long, default_value_t = 0)]
    pub since: u64,
    /// Exit after this many entries.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RoleArg {
    Demo,
    Full,
}

#[derive(Debug, Subcommand)]
pub enum AdminCmd {
    /// Mint a token. Signs locally when the HMAC key is available,
    /// otherwise asks the API (operator token required).
    MintToken {
        #[arg(long)]
        user: String,
        #[arg(long)]
        vo: String,
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long)]
        ttl_ms: u64,
        #[arg(long)]
        admin: bool,
        #[arg(long, env = "API_HMAC_KEY", hide_env_values = true)]
        hmac_key: Option<String>,
    },
    /// Register providers from flags or a YAML fixture file.
    AddProvider {
        #[arg(long, required_unless_present = "fixture")]
        name: Option<String>,
        #[arg(long, required_unless_present = "fixture")]
        country: Option<String>,
        #[arg(long, required_unless_present = "fixture")]
        endpoint: Option<String>,
        #[command(flatten)]
        capacity: ResourceArgs,
        /// Supported VO; repeatable.
        #[arg(long = "supported-vo")]
        supported_vos: Vec<String>,
        #[arg(long, conflicts_with_all = ["name", "country", "endpoint"])]
        fixture: Option<PathBuf>,
    },
    /// Send a provider heartbeat; free capacity defaults to all of it.
    Heartbeat {
        id: String,
        #[arg(long, requires_all = ["cpu_ghz", "disk_gb"])]
        gpus: Option<u64>,
        #[arg(long, requires_all = ["gpus", "disk_gb"])]
        cpu_ghz: Option<u64>,
        #[arg(long, requires_all = ["gpus", "cpu_ghz"])]
        disk_gb: Option<u64>,
    },
    /// Register a VO.
    AddVo {
        id: String,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        default_user_storage_quota_gb: Option<u64>,
        #[arg(long)]
        tryme_allow_gpus: bool,
    },
    /// Set a user's VO membership.
    SetMember {
        vo: String,
        user: String,
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long)]
        admin: bool,
    },
    /// Create or replace the SLA of a VO on a provider.
    Sla {
        #[arg(long)]
        vo: String,
        #[arg(long)]
        provider: String,
        #[command(flatten)]
        caps: ResourceArgs,
        #[arg(long, default_value_t = 0)]
        valid_from: u64,
        #[arg(long, default_value_t = u64::MAX / 2)]
        valid_until: u64,
    },
    /// Run one scheduling tick now.
    Tick,
    /// Write a state snapshot now.
    Snapshot,
}
