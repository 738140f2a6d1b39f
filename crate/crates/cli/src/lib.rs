//! Command-line client for the gateway.
//!
//! Every invocation is planned into exactly one [`Call`] (one HTTP request,
//! or a local scenario run for `sim run`), executed, and rendered. Exit
//! codes: 0 success, 1 gateway error, 2 usage error, 3 transport error.

pub mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use budamaf::gateway::basic_auth_header;
use budamaf::protocol::{Credentials, JobData, JobKind, JobStatus, JobView};
use budamaf::sim::{simulate, ScenarioConfig, ScenarioName};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

pub use config::{CliConfig, Output};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Transport(String),
    Gateway { code: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Gateway { .. } => 1,
            CliError::Usage(_) => 2,
            CliError::Transport(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Transport(m) => write!(f, "transport: {m}"),
            CliError::Gateway { code, message } => write!(f, "{code}: {message}"),
        }
    }
}

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

// ---- arguments ----

#[derive(Debug, Parser)]
#[command(name = "budamaf", version, about = "Client for the multi-cloud data-management gateway")]
pub struct Cli {
    /// Gateway base URL.
    #[arg(long, global = true, env = "BUDAMAF_URL")]
    pub url: Option<String>,
    /// Client config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Credentials file with `principal_id` and `token`.
    #[arg(long, global = true)]
    pub credentials: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub output: Option<Output>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Raw job operations.
    #[command(subcommand)]
    Job(JobCmd),
    /// Data store lifecycle.
    #[command(subcommand)]
    Store(StoreCmd),
    /// Reading, writing and moving data.
    #[command(subcommand)]
    Data(DataCmd),
    /// Security policy.
    #[command(subcommand)]
    Policy(PolicyCmd),
    /// Analytics datasets.
    #[command(subcommand)]
    Analytics(AnalyticsCmd),
    /// Local scenario simulation.
    #[command(subcommand)]
    Sim(SimCmd),
}

#[derive(Debug, Args)]
pub struct Payload {
    /// Inline value.
    #[arg(long, conflicts_with = "file")]
    pub value: Option<String>,
    /// Read the value from a file.
    #[arg(long)]
    pub file: Option<PathBuf>,
}

impl Payload {
    fn bytes(&self) -> Result<Option<Vec<u8>>, CliError> {
        match (&self.value, &self.file) {
            (Some(v), _) => Ok(Some(v.clone().into_bytes())),
            (None, Some(f)) => std::fs::read(f).map(Some).map_err(|e| usage(format!("{}: {e}", f.display()))),
            (None, None) => Ok(None),
        }
    }

    fn required(&self) -> Result<Vec<u8>, CliError> {
        self.bytes()?.ok_or_else(|| usage("one of --value and --file is required"))
    }
}

#[derive(Debug, Subcommand)]
pub enum JobCmd {
    /// Submit any job kind with hand-written details.
    Submit {
        #[arg(long)]
        kind: String,
        /// `job_details` as JSON.
        #[arg(long, default_value = "{}")]
        details: String,
        #[command(flatten)]
        payload: Payload,
        /// Return the job id at once instead of the settled job.
        #[arg(long)]
        no_wait: bool,
    },
    /// Fetch a job.
    Get { job_id: String },
    /// Send one chunk on an open job channel.
    Put {
        job_id: String,
        #[command(flatten)]
        payload: Payload,
        #[arg(long)]
        last: bool,
    },
    /// Remove a job; cancels it if still running.
    Delete { job_id: String },
    /// Status of a job as a status_query job.
    Status { job_id: String },
}

#[derive(Debug, Subcommand)]
pub enum StoreCmd {
    /// Create a store on a provider.
    Create {
        /// key_value, document or tabular.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        provider: String,
        #[arg(long, default_value_t = 1)]
        machines: u32,
        #[arg(long)]
        id: Option<String>,
    },
    /// Add or release instances.
    Scale {
        #[arg(long)]
        store: String,
        /// Add one machine on this provider; repeatable.
        #[arg(long = "add", conflicts_with = "release")]
        add: Vec<String>,
        /// Release this many instances.
        #[arg(long)]
        release: Option<u32>,
    },
    /// Move a store to another provider.
    Relocate {
        #[arg(long)]
        store: String,
        #[arg(long)]
        provider: String,
    },
    /// Destroy a store and free its machines.
    Destroy {
        #[arg(long)]
        store: String,
    },
    /// List stores and component instances.
    List,
}

#[derive(Debug, Args)]
pub struct Target {
    #[arg(long)]
    pub store: String,
    #[arg(long, default_value = "default")]
    pub collection: String,
    #[arg(long, conflicts_with = "selector")]
    pub key: Option<String>,
    /// Equality selector as a JSON object.
    #[arg(long)]
    pub selector: Option<String>,
    /// Data class of the payload: federation, monitoring or application.
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long)]
    pub dataset: Option<String>,
}

impl Target {
    fn details(&self) -> Result<Value, CliError> {
        let mut d = json!({"store_id": self.store, "collection": self.collection});
        match (&self.key, &self.selector) {
            (Some(k), None) => d["key"] = json!(k),
            (None, Some(s)) => d["selector"] = Value::Object(json_object("--selector", s)?),
            _ => return Err(usage("exactly one of --key and --selector is required")),
        }
        if let Some(c) = &self.class {
            d["metadata"] = json!({"data_class": c});
        }
        if let Some(ds) = &self.dataset {
            d["dataset_id"] = json!(ds);
        }
        Ok(d)
    }
}

#[derive(Debug, Subcommand)]
pub enum DataCmd {
    /// Read by key or selector.
    Read {
        #[command(flatten)]
        target: Target,
    },
    /// Write a value under a key.
    Write {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        payload: Payload,
    },
    /// Replace the value under a key.
    Update {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        payload: Payload,
    },
    /// Delete by key or selector.
    Delete {
        #[command(flatten)]
        target: Target,
    },
    /// Move a collection; `--from store/collection --to store/collection`.
    Migrate {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Copy a collection to another store.
    Replicate {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        /// Keep the copy in sync instead of copying once.
        #[arg(long)]
        continuous: bool,
    },
    /// Relieve a bottlenecked store.
    Offload {
        #[arg(long)]
        store: String,
        #[arg(long)]
        queue_depth: Option<u64>,
    },
    /// Share a dataset with other principals.
    Publish {
        #[arg(long)]
        dataset: String,
        /// Principals to grant read access, comma separated.
        #[arg(long, value_delimiter = ',')]
        audience: Vec<String>,
    },
    /// Anonymize a stored dataset in place.
    Anonymize {
        #[arg(long)]
        dataset: String,
    },
    /// Encrypt a stored dataset in place.
    Encrypt {
        #[arg(long)]
        dataset: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum PolicyCmd {
    /// Protocols required for a data class.
    Get {
        #[arg(long)]
        class: String,
        #[arg(long)]
        owner: Option<String>,
    },
    /// Apply a policy update from a JSON file and/or grants.
    Set {
        #[arg(long)]
        file: Option<PathBuf>,
        /// `dataset:action:principal`; repeatable.
        #[arg(long = "grant")]
        grants: Vec<String>,
    },
    /// Strip every grant on a dataset.
    Revoke {
        #[arg(long)]
        dataset: String,
    },
    /// Ask whether the caller may act on a dataset.
    Check {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value = "read")]
        action: String,
    },
    /// Print the audit log.
    Audit,
}

#[derive(Debug, Subcommand)]
pub enum AnalyticsCmd {
    /// Save records as a described dataset.
    Save {
        #[arg(long)]
        dataset: String,
        /// Where the records go, `store/collection`.
        #[arg(long)]
        location: String,
        /// Descriptive attributes as a JSON object.
        #[arg(long, default_value = "{}")]
        description: String,
        /// One JSON record; repeatable.
        #[arg(long = "record")]
        records: Vec<String>,
        /// Newline-delimited JSON records.
        #[arg(long)]
        records_file: Option<PathBuf>,
        #[arg(long)]
        class: Option<String>,
    },
    /// Fetch the records of every matching dataset.
    Retrieve {
        /// Attribute filter as a JSON object.
        #[arg(long, default_value = "{}")]
        filter: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum SimCmd {
    /// Run a scenario locally and print its trace.
    Run {
        /// das_fest, traveling_user or overload_no_remedy.
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Scenario config file (TOML).
        #[arg(long = "scenario-config")]
        scenario_config: Option<PathBuf>,
    },
}

// ---- planning ----

/// The single request an invocation turns into.
#[derive(Debug, Clone, PartialEq)]
pub enum Call {
    Submit { kind: JobKind, details: Value, data: Option<JobData>, wait: bool },
    GetJob(String),
    PutJob { job_id: String, chunk: Vec<u8>, last: bool },
    DeleteJob(String),
    Revoke(String),
    Audit,
    Sim { name: ScenarioName, seed: Option<u64>, config: Option<PathBuf> },
}

impl Call {
    fn submit(kind: JobKind, details: Value) -> Call {
        Call::Submit { kind, details, data: None, wait: true }
    }

    fn submit_with(kind: JobKind, details: Value, data: Option<Vec<u8>>) -> Call {
        Call::Submit { kind, details, data: data.map(JobData::bytes), wait: true }
    }

    pub fn kind(&self) -> Option<JobKind> {
        match self {
            Call::Submit { kind, .. } => Some(*kind),
            _ => None,
        }
    }
}

fn json_value(flag: &str, s: &str) -> Result<Value, CliError> {
    serde_json::from_str(s).map_err(|e| usage(format!("{flag}: {e}")))
}

fn json_object(flag: &str, s: &str) -> Result<Map<String, Value>, CliError> {
    match json_value(flag, s)? {
        Value::Object(m) => Ok(m),
        _ => Err(usage(format!("{flag} must be a JSON object"))),
    }
}

/// `store/collection`; a bare store means its default collection.
fn collection_ref(s: &str) -> Result<Value, CliError> {
    let (store, coll) = s.split_once('/').unwrap_or((s, "default"));
    if store.is_empty() || coll.is_empty() {
        return Err(usage(format!("`{s}` is not store/collection")));
    }
    Ok(json!({"store_id": store, "collection": coll}))
}

fn grant(s: &str) -> Result<Value, CliError> {
    match s.split(':').collect::<Vec<_>>()[..] {
        [ds, action, who] if !ds.is_empty() && !who.is_empty() => {
            Ok(json!({"dataset_id": ds, "action": action, "principals": [who]}))
        }
        _ => Err(usage(format!("--grant `{s}` is not dataset:action:principal"))),
    }
}

/// Validates arguments and builds the call. Reads local input files but
/// talks to nobody.
pub fn plan(cmd: &Command) -> Result<Call, CliError> {
    use JobKind as K;
    Ok(match cmd {
        Command::Job(j) => match j {
            JobCmd::Submit { kind, details, payload, no_wait } => {
                let kind: JobKind = kind.parse().map_err(|_| usage(format!("unknown job kind `{kind}`")))?;
                Call::Submit {
                    kind,
                    details: Value::Object(json_object("--details", details)?),
                    data: payload.bytes()?.map(JobData::bytes),
                    wait: !no_wait,
                }
            }
            JobCmd::Get { job_id } => Call::GetJob(job_id.clone()),
            JobCmd::Put { job_id, payload, last } => {
                Call::PutJob { job_id: job_id.clone(), chunk: payload.bytes()?.unwrap_or_default(), last: *last }
            }
            JobCmd::Delete { job_id } => Call::DeleteJob(job_id.clone()),
            JobCmd::Status { job_id } => Call::submit(K::StatusQuery, json!({"target_job_id": job_id})),
        },
        Command::Store(s) => match s {
            StoreCmd::Create { kind, provider, machines, id } => {
                let mut d = json!({"kind": kind, "provider_id": provider, "machines": machines});
                if let Some(id) = id {
                    d["store_id"] = json!(id);
                }
                Call::submit(K::CreateStore, d)
            }
            StoreCmd::Scale { store, add, release } => {
                let d = match (add.is_empty(), release) {
                    (false, None) => {
                        let machines: Vec<Value> = add.iter().map(|p| json!({"provider_id": p})).collect();
                        json!({"store_id": store, "machines": machines})
                    }
                    (true, Some(n)) => json!({"store_id": store, "release": n}),
                    _ => return Err(usage("one of --add and --release is required")),
                };
                Call::submit(K::ScaleStore, d)
            }
            StoreCmd::Relocate { store, provider } => {
                Call::submit(K::RelocateStore, json!({"store_id": store, "provider_id": provider}))
            }
            StoreCmd::Destroy { store } => Call::submit(K::DestroyStore, json!({"store_id": store})),
            StoreCmd::List => Call::submit(K::StatusQuery, json!({"scope": "stores"})),
        },
        Command::Data(d) => match d {
            DataCmd::Read { target } => Call::submit(K::Read, target.details()?),
            DataCmd::Write { target, payload } => {
                if target.key.is_none() {
                    return Err(usage("write needs --key"));
                }
                Call::submit_with(K::Write, target.details()?, Some(payload.required()?))
            }
            DataCmd::Update { target, payload } => {
                Call::submit_with(K::Update, target.details()?, Some(payload.required()?))
            }
            DataCmd::Delete { target } => Call::submit(K::Delete, target.details()?),
            DataCmd::Migrate { from, to } => {
                Call::submit(K::Migrate, json!({"source": collection_ref(from)?, "destination": collection_ref(to)?}))
            }
            DataCmd::Replicate { from, to, continuous } => Call::submit(
                K::Replicate,
                json!({
                    "source": collection_ref(from)?,
                    "destination": collection_ref(to)?,
                    "mode": if *continuous { "continuous" } else { "one_shot" },
                }),
            ),
            DataCmd::Offload { store, queue_depth } => {
                let mut d = json!({"store_id": store});
                if let Some(q) = queue_depth {
                    d["queue_depth"] = json!(q);
                }
                Call::submit(K::Offload, d)
            }
            DataCmd::Publish { dataset, audience } => {
                Call::submit(K::Publish, json!({"dataset_id": dataset, "audience": audience}))
            }
            DataCmd::Anonymize { dataset } => Call::submit(K::Anonymize, json!({"dataset_id": dataset})),
            DataCmd::Encrypt { dataset } => Call::submit(K::Encrypt, json!({"dataset_id": dataset})),
        },
        Command::Policy(p) => match p {
            PolicyCmd::Get { class, owner } => {
                let mut d = json!({"data_class": class});
                if let Some(o) = owner {
                    d["owner"] = json!(o);
                }
                Call::submit(K::ProtocolQuery, d)
            }
            PolicyCmd::Set { file, grants } => {
                let mut update = match file {
                    Some(f) => {
                        let text = std::fs::read_to_string(f).map_err(|e| usage(format!("{}: {e}", f.display())))?;
                        Value::Object(json_object("--file", &text)?)
                    }
                    None => json!({}),
                };
                if !grants.is_empty() {
                    let extra = grants.iter().map(|g| grant(g)).collect::<Result<Vec<_>, _>>()?;
                    let list = update.as_object_mut().expect("object").entry("grants").or_insert_with(|| json!([]));
                    let Some(list) = list.as_array_mut() else { return Err(usage("`grants` must be an array")) };
                    list.extend(extra);
                }
                if update.as_object().is_some_and(Map::is_empty) {
                    return Err(usage("policy set needs --file or --grant"));
                }
                Call::submit(K::PolicyUpdate, update)
            }
            PolicyCmd::Revoke { dataset } => Call::Revoke(dataset.clone()),
            PolicyCmd::Check { dataset, action } => {
                Call::submit(K::AccessCheck, json!({"dataset_id": dataset, "action": action}))
            }
            PolicyCmd::Audit => Call::Audit,
        },
        Command::Analytics(a) => match a {
            AnalyticsCmd::Save { dataset, location, description, records, records_file, class } => {
                let mut all: Vec<Value> = records.iter().map(|r| json_value("--record", r)).collect::<Result<_, _>>()?;
                if let Some(f) = records_file {
                    let text = std::fs::read_to_string(f).map_err(|e| usage(format!("{}: {e}", f.display())))?;
                    for line in text.lines().filter(|l| !l.trim().is_empty()) {
                        all.push(json_value("--records-file", line)?);
                    }
                }
                let mut d = json!({
                    "descriptor": {
                        "dataset_id": dataset,
                        "description": json_object("--description", description)?,
                        "locations": [collection_ref(location)?],
                    },
                    "records": all,
                });
                if let Some(c) = class {
                    d["metadata"] = json!({"data_class": c});
                }
                Call::submit(K::AnalyticsSave, d)
            }
            AnalyticsCmd::Retrieve { filter } => {
                Call::submit(K::AnalyticsRetrieve, json!({"description": json_object("--filter", filter)?}))
            }
        },
        Command::Sim(SimCmd::Run { scenario, seed, scenario_config }) => Call::Sim {
            name: scenario.parse().map_err(|_| usage(format!("unknown scenario `{scenario}`")))?,
            seed: *seed,
            config: scenario_config.clone(),
        },
    })
}

// ---- execution ----

/// What a call produced, before rendering.
#[derive(Debug)]
pub enum Reply {
    Job(Box<JobView>),
    Accepted(String),
    Json(Value),
    Trace { ndjson: String, summary: String, failure: Option<String> },
}

pub struct Client {
    http: reqwest::blocking::Client,
    base: String,
    auth: String,
}

impl Client {
    pub fn new(base: &str, who: &Credentials) -> Result<Self, CliError> {
        let http = reqwest::blocking::Client::builder().build().map_err(|e| CliError::Transport(e.to_string()))?;
        Ok(Client { http, base: base.to_owned(), auth: basic_auth_header(&who.principal_id, &who.token) })
    }

    fn send(&self, req: reqwest::blocking::RequestBuilder) -> Result<Value, CliError> {
        let resp = req
            .header(reqwest::header::AUTHORIZATION, &self.auth)
            .send()
            .map_err(|e| CliError::Transport(e.without_url().to_string()))?;
        let status = resp.status();
        let body = resp.bytes().map_err(|e| CliError::Transport(e.to_string()))?;
        if status.is_success() {
            return serde_json::from_slice(&body).map_err(|e| CliError::Transport(format!("bad response body: {e}")));
        }
        match serde_json::from_slice::<budamaf::ErrorBody>(&body) {
            Ok(b) => Err(CliError::Gateway { code: b.code, message: b.message }),
            Err(_) => Err(CliError::Gateway { code: format!("Http{}", status.as_u16()), message: status.to_string() }),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn execute(&self, call: &Call) -> Result<Reply, CliError> {
        match call {
            Call::Submit { kind, details, data, wait } => {
                let mut body = json!({"job_description": kind, "job_details": details});
                if let Some(d) = data {
                    body["data"] = serde_json::to_value(d).expect("job data serializes");
                }
                let path = if *wait { "core/?wait=true" } else { "core/" };
                let v = self.send(self.http.post(self.url(path)).json(&body))?;
                as_job_reply(v)
            }
            Call::GetJob(id) => as_job_reply(self.send(self.http.get(self.url(&format!("core/{id}"))))?),
            Call::PutJob { job_id, chunk, last } => {
                let url = self.url(&format!("core/{job_id}?last={last}"));
                self.send(self.http.put(url).body(chunk.clone())).map(Reply::Json)
            }
            Call::DeleteJob(id) => self.send(self.http.delete(self.url(&format!("core/{id}")))).map(Reply::Json),
            Call::Revoke(ds) => {
                self.send(self.http.delete(self.url(&format!("security_engine/{ds}")))).map(Reply::Json)
            }
            Call::Audit => self.send(self.http.get(self.url("security_engine/audit"))).map(Reply::Json),
            Call::Sim { .. } => run_sim(call),
        }
    }
}

fn as_job_reply(v: Value) -> Result<Reply, CliError> {
    if let Some(id) = v.get("job_id").and_then(Value::as_str) {
        if v.get("status").is_none() {
            return Ok(Reply::Accepted(id.to_owned()));
        }
    }
    serde_json::from_value::<JobView>(v.clone())
        .map(|j| Reply::Job(Box::new(j)))
        .or(Ok(Reply::Json(v)))
}

fn run_sim(call: &Call) -> Result<Reply, CliError> {
    let Call::Sim { name, seed, config } = call else { unreachable!("not a sim call") };
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            ScenarioConfig::parse(&text).map_err(|e| usage(e.detail()))?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg = cfg.with_seed(*s);
    }
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Transport(e.to_string()))?;
    let trace = rt
        .block_on(simulate(*name, &cfg))
        .map_err(|e| CliError::Gateway { code: e.code().to_owned(), message: e.detail() })?;
    let failure = trace.first_failure().map(|f| format!("{f:?}"));
    Ok(Reply::Trace { ndjson: trace.to_ndjson(), summary: trace.summary_text(), failure })
}

// ---- rendering ----

/// Writes the reply; a crashed job or failed scenario becomes an error
/// after its output has been written.
pub fn render(reply: &Reply, output: Output, out: &mut dyn Write) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Transport(e.to_string());
    match (reply, output) {
        (Reply::Job(v), Output::Json) => writeln!(out, "{}", serde_json::to_string(v).expect("view serializes")).map_err(io)?,
        (Reply::Job(v), Output::Plain) => match &v.data {
            Some(JobData::Bytes { base64 }) => {
                out.write_all(base64).map_err(io)?;
                if !base64.ends_with(b"\n") {
                    writeln!(out).map_err(io)?;
                }
            }
            Some(JobData::Records { records }) => {
                for r in records {
                    writeln!(out, "{}", String::from_utf8_lossy(r)).map_err(io)?;
                }
            }
            Some(JobData::Document { value }) => {
                writeln!(out, "{}", serde_json::to_string_pretty(value).expect("json")).map_err(io)?
            }
            Some(JobData::Error { .. }) | None => writeln!(out, "{} {}", v.job_id, v.status).map_err(io)?,
        },
        (Reply::Accepted(id), Output::Json) => writeln!(out, "{}", json!({"job_id": id})).map_err(io)?,
        (Reply::Accepted(id), Output::Plain) => writeln!(out, "{id}").map_err(io)?,
        (Reply::Json(v), Output::Json) => writeln!(out, "{v}").map_err(io)?,
        (Reply::Json(v), Output::Plain) => {
            writeln!(out, "{}", serde_json::to_string_pretty(v).expect("json")).map_err(io)?
        }
        (Reply::Trace { ndjson, .. }, Output::Json) => out.write_all(ndjson.as_bytes()).map_err(io)?,
        (Reply::Trace { summary, .. }, Output::Plain) => writeln!(out, "{summary}").map_err(io)?,
    }
    match reply {
        Reply::Job(v) if v.status == JobStatus::Crashed => match &v.data {
            Some(JobData::Error { code, message }) => Err(CliError::Gateway { code: code.clone(), message: message.clone() }),
            _ => Err(CliError::Gateway { code: "Crashed".into(), message: format!("job {} crashed", v.job_id) }),
        },
        Reply::Trace { failure: Some(f), .. } => {
            Err(CliError::Gateway { code: "ScenarioAssertionFailed".into(), message: f.clone() })
        }
        _ => Ok(()),
    }
}

fn invoke(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let call = plan(&cli.command)?;
    let cfg = CliConfig::load(cli.config.as_deref())?;
    let output = cli.output.unwrap_or(cfg.output);
    let reply = match &call {
        Call::Sim { .. } => run_sim(&call)?,
        _ => {
            let creds_path = cli.credentials.clone().or(cfg.credentials_path.clone());
            let who = config::load_credentials(creds_path.as_deref())?;
            let base = match &cli.url {
                Some(u) => CliConfig { gateway_url: u.clone(), ..cfg.clone() }.base_url(),
                None => cfg.base_url(),
            };
            Client::new(&base, &who)?.execute(&call)?
        }
    };
    render(&reply, output, out)
}

/// Entry point shared by the binary and the tests.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match invoke(&cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn plan_of(line: &str) -> Result<Call, CliError> {
        let cli = Cli::try_parse_from(std::iter::once("budamaf").chain(line.split_whitespace()))
            .map_err(|e| usage(e.to_string()))?;
        plan(&cli.command)
    }

    /// One invocation per subcommand.
    const EXAMPLES: &[&str] = &[
        "job submit --kind read --details {\"store_id\":\"s\",\"key\":\"k\"}",
        "job get job-1",
        "job put job-1 --value abc --last",
        "job delete job-1",
        "job status job-1",
        "store create --kind key_value --provider EU-1",
        "store scale --store s --add EU-1 --add EU-2",
        "store scale --store s --release 1",
        "store relocate --store s --provider EU-2",
        "store destroy --store s",
        "store list",
        "data read --store s --key k",
        "data read --store s --selector {\"city\":\"Karlsruhe\"}",
        "data write --store s --key k --value v --class federation",
        "data update --store s --key k --value w",
        "data delete --store s --key k",
        "data migrate --from s/c --to t/c",
        "data replicate --from s/c --to t --continuous",
        "data offload --store s --queue-depth 99",
        "data publish --dataset s/c --audience a,b",
        "data anonymize --dataset s/c",
        "data encrypt --dataset s/c",
        "policy get --class application",
        "policy set --grant s/c:read:bob",
        "policy revoke --dataset s/c",
        "policy check --dataset s/c --action write",
        "policy audit",
        "analytics save --dataset d --location s/c --record {\"a\":1}",
        "analytics retrieve --filter {\"class\":\"monitoring\"}",
        "sim run das_fest --seed 7",
    ];

    #[test]
    fn every_job_kind_is_reachable() {
        let reached: BTreeSet<JobKind> = EXAMPLES.iter().filter_map(|l| plan_of(l).unwrap().kind()).collect();
        let missing: Vec<_> = JobKind::ALL.into_iter().filter(|k| !reached.contains(k)).collect();
        // `job submit` reaches any kind; the dedicated subcommands must too.
        let dedicated: BTreeSet<JobKind> =
            EXAMPLES.iter().filter(|l| !l.starts_with("job submit")).filter_map(|l| plan_of(l).unwrap().kind()).collect();
        assert!(missing.is_empty(), "unreachable: {missing:?}");
        assert_eq!(dedicated.len(), JobKind::ALL.len());
    }

    #[test]
    fn submitted_details_pass_the_gateway_schema() {
        for line in EXAMPLES {
            if let Call::Submit { kind, details, .. } = plan_of(line).unwrap() {
                budamaf::protocol::JobDetails::parse(kind, &details).unwrap_or_else(|e| panic!("{line}: {e:?}"));
            }
        }
    }

    #[test]
    fn argument_errors_are_usage_errors() {
        for line in [
            "data read --store s",
            "data write --store s --selector {} --value v",
            "data write --store s --key k",
            "store scale --store s",
            "policy set",
            "policy set --grant nonsense",
            "data migrate --from /c --to t",
            "job submit --kind nope",
            "job submit --kind read --details [1]",
            "sim run elsewhere",
        ] {
            let e = plan_of(line).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{line}: {e}");
        }
    }

    #[test]
    fn crashed_jobs_render_then_fail() {
        let v: JobView = serde_json::from_value(json!({
            "job_id": "job-3", "initiator": {"principal_id": "a"}, "job_description": "read",
            "job_details": {}, "status": "crashed", "created_at": 0, "updated_at": 0,
            "data": {"kind": "error", "code": "AccessDenied", "message": "no"},
        }))
        .unwrap();
        let mut out = Vec::new();
        let err = render(&Reply::Job(Box::new(v)), Output::Json, &mut out).unwrap_err();
        assert!(matches!(err, CliError::Gateway { ref code, .. } if code == "AccessDenied"));
        let first = String::from_utf8(out.clone()).unwrap();
        let mut again = Vec::new();
        let _ = render(&as_job_reply(serde_json::from_str(&first).unwrap()).unwrap(), Output::Json, &mut again);
        assert_eq!(again, out, "json output is byte-stable");
    }
}
