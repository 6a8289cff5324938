//! `ardm` command-line front end.
//!
//! Exit codes: 0 success, 1 user error, 2 data or validation error,
//! 3 internal error. Payloads go to `out`, diagnostics to `err`.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ardm::ingest::{parse_dataset, parse_meta_json, validate_domain, Domain, Severity};
use ardm::render::{self, Orientation};
use ardm::schema::{self, init_schema, register_dataset};
use ardm::standards::{self, parse_param_assignments, register_builtin_standards, AnalysisStandard, RunOptions};
use ardm::store::{records_to_json, write_records_csv, ResultFilter, RunStatus, Store};
use ardm::{Error, ErrorClass};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ardm", version, about = "Analysis results data model store")]
struct Cli {
    /// Store file
    #[arg(long, env = "ARDM_DB", global = true)]
    db: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create the store (if needed) and register the built-in standards
    Init,
    /// Parse, validate and register a CSV dataset
    Ingest {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        domain: Domain,
        /// JSON column metadata overriding inferred kinds, units and labels
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Registered datasets
    Datasets {
        #[command(subcommand)]
        action: DatasetsAction,
    },
    /// Registered analysis standards
    Standards {
        #[command(subcommand)]
        action: StandardsAction,
    },
    /// Execute a standard against registered datasets
    Run {
        /// NAME or NAME@VERSION
        #[arg(long)]
        standard: String,
        #[arg(long = "param", value_name = "K=V")]
        params: Vec<String>,
        #[arg(long = "dataset", value_name = "ID", required = true)]
        datasets: Vec<i64>,
    },
    /// Recorded runs
    Runs {
        #[command(subcommand)]
        action: RunsAction,
    },
    /// Query stored results
    Query {
        #[arg(long)]
        standard: Option<String>,
        #[arg(long)]
        run: Option<i64>,
        #[arg(long)]
        dataset: Option<i64>,
        #[arg(long = "group", value_name = "K=V")]
        groups: Vec<String>,
        #[arg(long)]
        variable: Option<String>,
        #[arg(long = "statistic")]
        statistics: Vec<String>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Render stored results
    Render {
        #[command(subcommand)]
        what: RenderWhat,
    },
}

#[derive(Subcommand)]
enum DatasetsAction {
    List,
    /// Write a registered dataset back out as CSV
    Export {
        #[arg(long)]
        id: i64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum StandardsAction {
    List,
    /// Print a standard definition as JSON
    Show {
        /// NAME or NAME@VERSION
        #[arg(long)]
        name: String,
    },
    /// Register a standard from a JSON definition
    Register {
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Subcommand)]
enum RunsAction {
    List,
}

#[derive(Subcommand)]
enum RenderWhat {
    /// Kaplan-Meier plot data, optionally with an SVG
    Km {
        #[arg(long)]
        run: i64,
        #[arg(long = "exclude-stratum", value_name = "LABEL")]
        exclude: Vec<String>,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long, default_value_t = 720)]
        width: u32,
        #[arg(long, default_value_t = 480)]
        height: u32,
    },
    /// Summary table in long or wide orientation
    Table {
        #[arg(long)]
        run: i64,
        #[arg(long, value_enum)]
        orientation: OrientationArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrientationArg {
    Long,
    Wide,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::User => 1,
        ErrorClass::Data => 2,
        ErrorClass::Internal => 3,
    }
}

/// Parse `args` (including the program name) and execute; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let mut io = Io { out, err };
    match dispatch(cli, &mut io) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.err, "error: {e}");
            if let Error::Validation(report) = &e {
                if let Ok(text) = serde_json::to_string_pretty(report) {
                    let _ = writeln!(io.err, "{text}");
                }
            }
            exit_code(e.class())
        }
    }
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

fn db_path(cli_db: &Option<PathBuf>) -> Result<&Path, Error> {
    cli_db.as_deref().ok_or_else(|| Error::Argument("no store given; pass --db PATH or set ARDM_DB".into()))
}

fn open_writable(path: &Path) -> Result<Store, Error> {
    let store = Store::open(path, false)?;
    schema::require_schema(&store)?;
    Ok(store)
}

fn open_reader(path: &Path) -> Result<Store, Error> {
    let store = Store::open_read_only(path)?;
    schema::require_schema(&store)?;
    Ok(store)
}

impl Io<'_> {
    fn emit(&mut self, file: Option<&Path>, payload: &[u8]) -> Result<(), Error> {
        match file {
            Some(p) => fs::write(p, payload)?,
            None => self.out.write_all(payload)?,
        }
        Ok(())
    }

    fn note(&mut self, line: &str) -> Result<(), Error> {
        writeln!(self.err, "{line}")?;
        Ok(())
    }
}

fn json_line<T: serde::Serialize>(value: &T) -> Result<String, Error> {
    Ok(format!("{}\n", serde_json::to_string_pretty(value)?))
}

fn split_standard(name: &str) -> (&str, Option<&str>) {
    match name.split_once('@') {
        Some((n, v)) => (n, Some(v)),
        None => (name, None),
    }
}

fn dispatch(cli: Cli, io: &mut Io) -> Result<(), Error> {
    let path = db_path(&cli.db)?;
    match cli.command {
        Command::Init => {
            let mut store = Store::open(path, true)?;
            let desc = init_schema(&mut store)?;
            register_builtin_standards(&mut store)?;
            io.note(&format!("store {} ready at schema version {}", path.display(), desc.version))?;
        }
        Command::Ingest { file, domain, meta } => {
            let bytes = fs::read(&file)?;
            let meta = match meta {
                Some(m) => Some(parse_meta_json(&fs::read(m)?)?),
                None => None,
            };
            let name =
                file.file_name().map_or_else(|| file.display().to_string(), |n| n.to_string_lossy().into_owned());
            let dataset = parse_dataset(&name, &bytes, domain, meta.as_deref())?;
            for issue in validate_domain(&dataset).issues.iter().filter(|i| i.severity == Severity::Warning) {
                io.note(&format!("warning: {}: {}", issue.location, issue.message))?;
            }
            let mut store = open_writable(path)?;
            let reg = register_dataset(&mut store, &dataset)?;
            io.emit(None, json_line(&reg)?.as_bytes())?;
        }
        Command::Datasets { action } => match action {
            DatasetsAction::List => {
                let store = open_reader(path)?;
                io.emit(None, json_line(&schema::list_datasets(&store)?)?.as_bytes())?;
            }
            DatasetsAction::Export { id, out } => {
                let store = open_reader(path)?;
                let bytes = schema::export_dataset(&store, id)?;
                io.emit(out.as_deref(), &bytes)?;
            }
        },
        Command::Standards { action } => match action {
            StandardsAction::List => {
                let store = open_reader(path)?;
                io.emit(None, json_line(&standards::list_standards(&store)?)?.as_bytes())?;
            }
            StandardsAction::Show { name } => {
                let store = open_reader(path)?;
                let (n, v) = split_standard(&name);
                let std = standards::load_standard(&store, n, v)?;
                io.emit(None, format!("{}\n", std.to_json()?).as_bytes())?;
            }
            StandardsAction::Register { file } => {
                let std = AnalysisStandard::from_json(&fs::read_to_string(file)?)?;
                let mut store = open_writable(path)?;
                standards::register_standard(&mut store, &std)?;
                io.note(&format!("registered {}@{}", std.name, std.version))?;
            }
        },
        Command::Run { standard, params, datasets } => {
            let params = parse_param_assignments(&params)?;
            let mut store = open_writable(path)?;
            let report =
                standards::run_standard_with(&mut store, &standard, &params, &datasets, &RunOptions::default())?;
            for w in &report.warnings {
                io.note(&format!("warning: {w}"))?;
            }
            if report.run.status != RunStatus::SkippedDuplicate {
                io.note(&format!("run {} stored {} result record(s)", report.run.run_id, report.n_records))?;
            }
            io.emit(None, json_line(&report.run)?.as_bytes())?;
        }
        Command::Runs { action: RunsAction::List } => {
            let store = open_reader(path)?;
            io.emit(None, json_line(&store.list_runs()?)?.as_bytes())?;
        }
        Command::Query { standard, run, dataset, groups, variable, statistics, format } => {
            let store = open_reader(path)?;
            let mut filter = ResultFilter {
                standard_name: standard,
                run_id: run,
                dataset_id: dataset,
                variable,
                statistic_names: statistics.into_iter().collect::<BTreeSet<_>>(),
                ..Default::default()
            };
            for g in groups {
                let (k, v) =
                    g.split_once('=').ok_or_else(|| Error::Argument(format!("--group expects K=V, got {g:?}")))?;
                filter.groups.push((k.trim().to_string(), v.trim().to_string()));
            }
            let out = store.query_results(&filter)?;
            for w in &out.warnings {
                io.note(&format!("warning: {w}"))?;
            }
            match format {
                Format::Csv => write_records_csv(&mut *io.out, out.records())?,
                Format::Json => io.emit(None, format!("{}\n", records_to_json(out.records())?).as_bytes())?,
            }
        }
        Command::Render { what } => {
            let store = open_reader(path)?;
            match what {
                RenderWhat::Km { run, exclude, svg, out, format, width, height } => {
                    let (plot, warnings) = render::render_km_plot_data(&store, run, &exclude)?;
                    for w in &warnings {
                        io.note(&format!("warning: {w}"))?;
                    }
                    if let Some(svg_path) = svg {
                        fs::write(svg_path, render::render_km_svg(&plot, width, height)?)?;
                    }
                    let payload = match format {
                        Format::Json => json_line(&plot)?,
                        Format::Csv => render::km_plot_csv(&plot),
                    };
                    io.emit(out.as_deref(), payload.as_bytes())?;
                }
                RenderWhat::Table { run, orientation, out, format } => {
                    let orientation = match orientation {
                        OrientationArg::Long => Orientation::Long,
                        OrientationArg::Wide => Orientation::Wide,
                    };
                    let doc = render::render_table(&store, run, orientation)?;
                    let payload = match format {
                        Format::Csv => doc.to_csv(),
                        Format::Json => json_line(&doc)?,
                    };
                    io.emit(out.as_deref(), payload.as_bytes())?;
                }
            }
        }
    }
    Ok(())
}
