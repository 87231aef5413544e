//! Argument parsing and subcommand dispatch for `bimcore`.
//!
//! Exit codes: 0 on success, 1 on a domain failure (invalid record, failed
//! verification, missing record, unreadable package), 2 on a usage error.
//! With `--json` every subcommand writes exactly one JSON document to
//! standard output, failures included.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use bimcore::ident::{identify_file, verify_step, SignatureSet};
use bimcore::model::{
    builtin_element_defs, validate_record, BimcoreCategory, ContextEntry, RecordId, RecordStatus,
    Relation, RiRecord, SignificantProperty,
};
use bimcore::oais::{
    attach_significant_properties, build_dip, ingest, verify_aip, IngestOptions, ObjectSelection,
    PackageError, SubmissionPackage, AGENT,
};
use bimcore::registry::{RegistryStore, Role, StoreError};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use tracing_subscriber::filter::LevelFilter;

use crate::{parse_category, parse_element, parse_relation, parse_role, parse_status, ViewParams};

#[derive(Debug, Parser)]
#[command(
    name = "bimcore",
    version,
    about = "Representation-information registry, format identification and OAIS packaging",
    arg_required_else_help = true
)]
pub struct Cli {
    /// Registry store directory
    #[arg(long, env = "BIMCORE_STORE", global = true)]
    pub store: Option<PathBuf>,
    /// JSON file of additional format signatures
    #[arg(long, global = true)]
    pub signatures: Option<PathBuf>,
    /// Write machine-readable JSON to stdout
    #[arg(long, global = true)]
    pub json: bool,
    /// off, error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Curate representation-information records
    #[command(subcommand)]
    Record(RecordCommand),
    /// Identify the format of a file
    Identify { path: PathBuf },
    /// Check a STEP physical file for well-formedness
    VerifyFormat { path: PathBuf },
    /// Turn a submission directory into an archival package
    Ingest {
        sip: PathBuf,
        /// Directory to create for the archival package
        #[arg(long)]
        out: PathBuf,
        /// Closure baseline record ids (default: self-describing records)
        #[arg(long = "baseline", value_name = "RECORD_ID")]
        baseline: Vec<RecordId>,
    },
    /// Archival package operations
    #[command(subcommand)]
    Aip(AipCommand),
    /// Dissemination package operations
    #[command(subcommand)]
    Dip(DipCommand),
    /// Significant properties
    #[command(subcommand)]
    Sigprop(SigpropCommand),
    /// Context entries
    #[command(subcommand)]
    Context(ContextCommand),
    /// Run a role view over the registry
    Query(QueryArgs),
    /// Serve the read-only JSON query API
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
    },
}

#[derive(Debug, Subcommand)]
pub enum RecordCommand {
    /// Store a record from a JSON file as a new version
    Add { file: PathBuf },
    /// Print a record
    Get {
        id: RecordId,
        #[arg(long)]
        version: Option<u64>,
    },
    /// List the latest version of every record
    List,
    /// Validate a record file without storing it
    Validate { file: PathBuf },
    /// Export the whole store with a checksum manifest
    Export { dir: PathBuf },
    /// Import an export directory
    Import { dir: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum AipCommand {
    /// Recompute digests and check package metadata
    Verify { aip: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum DipCommand {
    /// Export objects of a verified archival package
    Build {
        aip: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Select objects by format name or version label
        #[arg(long, conflicts_with = "path")]
        format: Option<String>,
        /// Select objects by path below objects/
        #[arg(long)]
        path: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SigpropCommand {
    /// Store a significant property from a JSON file
    Add { file: PathBuf },
    /// Link significant properties to an archival package
    Attach {
        aip: PathBuf,
        #[arg(required = true)]
        ids: Vec<RecordId>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ContextCommand {
    /// Store a context entry from a JSON file
    Add { file: PathBuf },
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long, value_parser = parse_role)]
    pub view: Role,
    #[arg(long, value_parser = parse_category)]
    pub category: Option<BimcoreCategory>,
    #[arg(long = "element", value_parser = parse_element)]
    pub elements: Vec<u8>,
    #[arg(long, value_parser = parse_relation)]
    pub relation: Option<Relation>,
    #[arg(long, value_parser = parse_status)]
    pub status: Option<RecordStatus>,
    /// Free-text terms, all of which must occur
    pub terms: Vec<String>,
}

impl QueryArgs {
    pub fn params(&self) -> ViewParams {
        ViewParams {
            role: self.view,
            category: self.category,
            elements: self.elements.clone(),
            relation: self.relation,
            status: self.status,
        }
    }

    pub fn text(&self) -> Option<String> {
        (!self.terms.is_empty()).then(|| self.terms.join(" "))
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain {
        message: String,
        detail: Option<Value>,
    },
}

impl Failure {
    fn domain(message: impl Into<String>) -> Self {
        Self::Domain {
            message: message.into(),
            detail: None,
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        let detail = match &e {
            StoreError::Validation(report) => serde_json::to_value(report).ok(),
            StoreError::Unhealthy(report) => serde_json::to_value(report).ok(),
            _ => None,
        };
        Self::Domain {
            message: e.to_string(),
            detail,
        }
    }
}

impl From<PackageError> for Failure {
    fn from(e: PackageError) -> Self {
        match e {
            PackageError::Store(e) => e.into(),
            e => {
                let detail = match &e {
                    PackageError::NotVerified(report) => serde_json::to_value(report).ok(),
                    _ => None,
                };
                Self::Domain {
                    message: e.to_string(),
                    detail,
                }
            }
        }
    }
}

/// Result of a subcommand that ran to completion. `ok` is false for
/// negative findings such as an invalid record or a failed check.
struct Output {
    value: Value,
    text: String,
    ok: bool,
}

impl Output {
    fn new(value: impl Serialize, text: impl Into<String>) -> Self {
        Self {
            value: serde_json::to_value(value).expect("output serializes"),
            text: text.into(),
            ok: true,
        }
    }

    fn ok(mut self, ok: bool) -> Self {
        self.ok = ok;
        self
    }
}

type Outcome = Result<Output, Failure>;

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            let json = args.iter().any(|a| a == "--json");
            if !e.use_stderr() {
                let _ = if json {
                    writeln_json(out, &json!({ "help": rendered }))
                } else {
                    out.write_all(rendered.as_bytes())
                };
                return e.exit_code();
            }
            let _ = err.write_all(rendered.as_bytes());
            if json {
                let first_line = rendered.lines().next().unwrap_or_default();
                let message = first_line.strip_prefix("error: ").unwrap_or(first_line);
                let _ = writeln_json(out, &json!({ "error": message, "usage": true }));
            }
            return e.exit_code();
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_max_level(cli.log_level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .try_init();

    let json = cli.json;
    let outcome = dispatch(cli, out);
    let code = match &outcome {
        Ok(o) if o.ok => 0,
        Ok(_) => 1,
        Err(Failure::Usage(_)) => 2,
        Err(Failure::Domain { .. }) => 1,
    };
    let written = match outcome {
        Ok(o) if json && o.value.is_null() => Ok(()),
        Ok(o) if json => writeln_json(out, &o.value),
        Ok(o) => {
            if o.text.is_empty() {
                Ok(())
            } else if o.text.ends_with('\n') {
                out.write_all(o.text.as_bytes())
            } else {
                writeln!(out, "{}", o.text)
            }
        }
        Err(Failure::Usage(message)) => {
            let _ = writeln!(
                err,
                "error: {message}\n\nFor more information, try '--help'."
            );
            if json {
                writeln_json(out, &json!({ "error": message, "usage": true }))
            } else {
                Ok(())
            }
        }
        Err(Failure::Domain { message, detail }) => {
            let _ = writeln!(err, "error: {message}");
            if json {
                let mut v = json!({ "error": message });
                if let Some(d) = detail {
                    v["detail"] = d;
                }
                writeln_json(out, &v)
            } else {
                if let Some(d) = detail {
                    let _ = writeln!(
                        err,
                        "{}",
                        serde_json::to_string_pretty(&d).unwrap_or_default()
                    );
                }
                Ok(())
            }
        }
    };
    if written.and_then(|_| out.flush()).is_err() {
        return 1;
    }
    code
}

fn writeln_json(out: &mut dyn Write, value: &Value) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    writeln!(out, "{text}")
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Outcome {
    let ctx = Context {
        store: cli.store,
        signatures: cli.signatures,
        json: cli.json,
    };
    match cli.command {
        Command::Record(c) => record(&ctx, c),
        Command::Identify { path } => identify(&ctx, &path),
        Command::VerifyFormat { path } => verify_format(&path),
        Command::Ingest { sip, out, baseline } => ingest_sip(&ctx, &sip, &out, baseline),
        Command::Aip(AipCommand::Verify { aip }) => aip_verify(&aip),
        Command::Dip(DipCommand::Build {
            aip,
            out,
            format,
            path,
        }) => dip_build(&ctx, &aip, &out, format, path),
        Command::Sigprop(c) => sigprop(&ctx, c),
        Command::Context(ContextCommand::Add { file }) => context_add(&ctx, &file),
        Command::Query(q) => query(&ctx, &q),
        Command::Serve { listen } => serve(&ctx, listen, out),
    }
}

struct Context {
    store: Option<PathBuf>,
    signatures: Option<PathBuf>,
    json: bool,
}

impl Context {
    fn store_root(&self) -> Result<&Path, Failure> {
        self.store.as_deref().ok_or_else(|| {
            Failure::Usage("no store given; pass --store or set BIMCORE_STORE".into())
        })
    }

    fn open_store(&self) -> Result<RegistryStore, Failure> {
        Ok(RegistryStore::open(self.store_root()?)?)
    }

    fn read_store(&self) -> Result<RegistryStore, Failure> {
        Ok(RegistryStore::open_read_only(self.store_root()?)?)
    }

    fn signature_set(&self) -> Result<SignatureSet, Failure> {
        let Some(path) = &self.signatures else {
            return Ok(SignatureSet::builtin());
        };
        let text = read_text(path)?;
        let extra = SignatureSet::parse_json(&text)
            .map_err(|e| Failure::domain(format!("{}: {e}", path.display())))?;
        SignatureSet::builtin_with(extra)
            .map_err(|e| Failure::domain(format!("{}: {e}", path.display())))
    }
}

const ACTOR: &str = AGENT;

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::domain(format!("{}: {e}", path.display())))
}

fn read_json_file<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = read_text(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::domain(format!("{}: malformed JSON: {e}", path.display())))
}

fn record(ctx: &Context, cmd: RecordCommand) -> Outcome {
    match cmd {
        RecordCommand::Add { file } => {
            let record: RiRecord = read_json_file(&file)?;
            let mut store = ctx.open_store()?;
            let (id, version) = store.put_record(record, ACTOR)?;
            Ok(Output::new(
                json!({ "record_id": id, "version": version }),
                format!("stored {id} version {version}"),
            ))
        }
        RecordCommand::Get { id, version } => {
            let store = ctx.read_store()?;
            let r = store.get_record(&id, version)?;
            let text = r.to_json().expect("records serialize");
            Ok(Output::new(r, text))
        }
        RecordCommand::List => {
            let store = ctx.read_store()?;
            let list = store.list();
            let mut text = String::new();
            for s in &list {
                let _ = writeln!(
                    text,
                    "{}\tv{}\t{}\t{} {}",
                    s.record_id,
                    s.version,
                    s.status.as_str(),
                    s.format_name,
                    s.format_version_label
                );
            }
            Ok(Output::new(list, text))
        }
        RecordCommand::Validate { file } => {
            let record: RiRecord = read_json_file(&file)?;
            let existing = match &ctx.store {
                Some(root) if root.is_dir() => RegistryStore::open_read_only(root)?.record_ids(),
                _ => BTreeSet::new(),
            };
            let report = validate_record(&record, builtin_element_defs(), &existing);
            let valid = report.is_valid();
            let text = if valid {
                format!("{}: valid", record.record_id)
            } else {
                format!(
                    "{}: {} violations\n{report}",
                    record.record_id,
                    report.violations.len()
                )
            };
            let value = json!({
                "record_id": record.record_id,
                "valid": valid,
                "violations": report.violations,
            });
            Ok(Output::new(value, text).ok(valid))
        }
        RecordCommand::Export { dir } => {
            let store = ctx.read_store()?;
            let manifest = store.export_all(&dir)?;
            let text = format!(
                "exported {} files to {}",
                manifest.entries.len(),
                dir.display()
            );
            Ok(Output::new(
                json!({ "directory": dir, "files": manifest.entries.len(), "records": store.record_count() }),
                text,
            ))
        }
        RecordCommand::Import { dir } => {
            let mut store = ctx.open_store()?;
            let n = store.import_all(&dir, ACTOR)?;
            Ok(Output::new(
                json!({ "imported_records": n }),
                format!("imported {n} records"),
            ))
        }
    }
}

fn identify(ctx: &Context, path: &Path) -> Outcome {
    let set = ctx.signature_set()?;
    let result = identify_file(path, &set)
        .map_err(|e| Failure::domain(format!("{}: {e}", path.display())))?;
    let best = result.best();
    let format = best.map(|m| m.format_name.clone());
    let text = match best {
        Some(m) => format!(
            "{}: {} {} ({})",
            path.display(),
            serde_json::to_value(result.verdict)
                .unwrap()
                .as_str()
                .unwrap_or_default(),
            m.format_name,
            m.signature_id
        ),
        None => format!("{}: unknown", path.display()),
    };
    let mut value = serde_json::to_value(&result).expect("results serialize");
    value["path"] = json!(path);
    value["format"] = json!(format);
    Ok(Output::new(value, text))
}

fn verify_format(path: &Path) -> Outcome {
    let data = fs::read(path).map_err(|e| Failure::domain(format!("{}: {e}", path.display())))?;
    let report = verify_step(&data);
    let passed = report.passed();
    let mut text = format!(
        "{}: {}",
        path.display(),
        if passed {
            "well-formed"
        } else {
            "not well-formed"
        }
    );
    for c in report.failures() {
        let at = c
            .offset
            .map(|o| format!(" at byte {o}"))
            .unwrap_or_default();
        let _ = write!(
            text,
            "\n  {}{at}: {}",
            c.check,
            c.detail.as_deref().unwrap_or("")
        );
    }
    let mut value = serde_json::to_value(&report).expect("reports serialize");
    value["path"] = json!(path);
    value["format"] = json!("STEP-SPF");
    value["passed"] = json!(passed);
    Ok(Output::new(value, text).ok(passed))
}

fn ingest_sip(ctx: &Context, sip_dir: &Path, aip_dir: &Path, baseline: Vec<RecordId>) -> Outcome {
    let store = ctx.read_store()?;
    let set = ctx.signature_set()?;
    let sip = SubmissionPackage::load(sip_dir)?;
    let options = IngestOptions {
        baseline: (!baseline.is_empty()).then(|| baseline.into_iter().collect()),
        ..IngestOptions::default()
    };
    let aip = ingest(&sip, &store, &set, aip_dir, &options)?;
    let mut text = format!("{} -> {} ({})", sip.sip_id, aip.aip_id, aip_dir.display());
    for c in &aip.content_information {
        let linked: Vec<&str> = c
            .linked_records
            .iter()
            .map(|r| r.record_id.as_str())
            .collect();
        let _ = write!(
            text,
            "\n  {}\t{}\t{}{}",
            c.path,
            c.format_name().unwrap_or("unknown"),
            if linked.is_empty() {
                "-".to_owned()
            } else {
                linked.join(",")
            },
            if c.unresolved_ri {
                "\tunresolved-RI"
            } else {
                ""
            }
        );
    }
    Ok(Output::new(&aip, text))
}

fn aip_verify(aip_dir: &Path) -> Outcome {
    let v = verify_aip(aip_dir);
    let passed = v.passed();
    let mut text = format!(
        "{}: {}",
        aip_dir.display(),
        if passed { "verified" } else { "FAILED" }
    );
    for c in v.report.failures() {
        let _ = write!(
            text,
            "\n  {}: {}",
            c.check,
            c.detail.as_deref().unwrap_or("")
        );
        for p in &c.paths {
            let _ = write!(text, "\n    {p}");
        }
    }
    let mut value = serde_json::to_value(&v).expect("reports serialize");
    value["passed"] = json!(passed);
    Ok(Output::new(value, text).ok(passed))
}

fn dip_build(
    ctx: &Context,
    aip: &Path,
    out: &Path,
    format: Option<String>,
    paths: Vec<String>,
) -> Outcome {
    let selection = match (format, paths.is_empty()) {
        (Some(format), _) => ObjectSelection::Format { format },
        (None, false) => ObjectSelection::Paths { paths },
        (None, true) => ObjectSelection::All,
    };
    let store = ctx.read_store()?;
    let dip = build_dip(aip, &selection, &store, out)?;
    let mut text = format!("{} -> {}", dip.source_aip_id, out.display());
    for o in &dip.objects {
        let _ = write!(text, "\n  {}\t{}", o.path, o.sha256);
    }
    Ok(Output::new(&dip, text))
}

fn sigprop(ctx: &Context, cmd: SigpropCommand) -> Outcome {
    match cmd {
        SigpropCommand::Add { file } => {
            let p: SignificantProperty = read_json_file(&file)?;
            let id = p.property_id.clone();
            ctx.open_store()?.put_property(p, ACTOR)?;
            Ok(Output::new(
                json!({ "property_id": id }),
                format!("stored significant property {id}"),
            ))
        }
        SigpropCommand::Attach { aip, ids } => {
            let store = ctx.read_store()?;
            let pkg = attach_significant_properties(&aip, &ids, &store, ACTOR)?;
            let links: Vec<&str> = pkg
                .significant_property_links
                .iter()
                .map(RecordId::as_str)
                .collect();
            Ok(Output::new(
                json!({ "aip_id": pkg.aip_id, "significant_property_links": pkg.significant_property_links }),
                format!("{}: {}", pkg.aip_id, links.join(", ")),
            ))
        }
    }
}

fn context_add(ctx: &Context, file: &Path) -> Outcome {
    let entry: ContextEntry = read_json_file(file)?;
    let id = entry.entry_id.clone();
    ctx.open_store()?.put_context(entry, ACTOR)?;
    Ok(Output::new(
        json!({ "entry_id": id }),
        format!("stored context entry {id}"),
    ))
}

fn query(ctx: &Context, q: &QueryArgs) -> Outcome {
    let store = ctx.read_store()?;
    let hits = store.query(&q.params().to_view(), q.text().as_deref());
    let mut text = String::new();
    for h in &hits {
        let elements: Vec<String> = h.matched_elements.iter().map(u8::to_string).collect();
        let _ = writeln!(
            text,
            "{}\tv{}\t{} {}\telements {}",
            h.record_id,
            h.version,
            h.format_name,
            h.format_version_label,
            elements.join(",")
        );
    }
    Ok(Output::new(hits, text))
}

fn serve(ctx: &Context, listen: SocketAddr, out: &mut dyn Write) -> Outcome {
    let store = ctx.read_store()?;
    let health = store.integrity_check();
    if !health.is_healthy() {
        return Err(StoreError::Unhealthy(health).into());
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::domain(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| Failure::domain(format!("cannot listen on {listen}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Failure::domain(e.to_string()))?;
        let announce = if ctx.json {
            format!("{}\n", json!({ "listening": addr.to_string() }))
        } else {
            format!("listening on http://{addr}\n")
        };
        let _ = out.write_all(announce.as_bytes());
        let _ = out.flush();
        tracing::info!(%addr, "serving read-only query API");
        crate::api::serve(listener, store)
            .await
            .map_err(|e| Failure::domain(e.to_string()))
    })?;
    Ok(Output::new(Value::Null, ""))
}
