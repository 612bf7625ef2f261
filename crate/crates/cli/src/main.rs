use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use modalbench::algorithms::AlgorithmKind;
use modalbench::checks::all_suites;
use modalbench::data::{generate_synthetic, load_dataset, validate_dataset, Regime, SyntheticSpec};
use modalbench::selection::SelectionMethod;
use modalbench::sweep::{
    aggregate_report, run_sweep, run_trial, select_all, Job, ResultsStore, RunPlan, StopFlags, StoreContents,
    SweepContext,
};
use modalbench::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "modalbench", version, about = "Cross-modal generalization benchmark harness")]
struct Cli {
    /// Root seed; every random draw of the command derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for sweeps.
    #[arg(long, global = true, env = "MODALBENCH_WORKERS", default_value_t = 1)]
    workers: usize,

    /// Output location: a directory for gen-synthetic and report, a results store otherwise.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset (MBED files and manifest) to --out.
    GenSynthetic {
        /// Generator spec as JSON; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Check a dataset's manifest, files, digests and labels.
    Validate {
        /// Manifest file or dataset directory.
        dataset: PathBuf,
    },
    /// Train one algorithm once and print its trial record.
    Train {
        /// Manifest file or dataset directory.
        #[arg(long)]
        dataset: PathBuf,
        /// Algorithm name, e.g. ERM, IRM, Concat.
        #[arg(long, value_parser = parse_algorithm)]
        algorithm: AlgorithmKind,
        /// Modality held out for testing; all others are trained on.
        #[arg(long)]
        test_modality: String,
        /// Expected regime, checked against the manifest.
        #[arg(long, value_enum)]
        regime: Option<RegimeArg>,
        /// Overrides the size-based step budget.
        #[arg(long)]
        steps: Option<usize>,
        /// Hyperparameter trial; 0 uses the defaults.
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Run every (algorithm, trial, seed) job of a plan, resuming from the store.
    Sweep {
        #[arg(long)]
        plan: PathBuf,
        /// Results store; defaults to --out, then results.jsonl.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Print the trials chosen by a selection method as JSON.
    Select {
        #[arg(long)]
        store: PathBuf,
        /// tm, loo or oracle; all three when omitted.
        #[arg(long, value_parser = parse_method)]
        method: Option<SelectionMethod>,
    },
    /// Render result tables from a store.
    Report {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Run the finite-difference gradient suites.
    Gradcheck,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RegimeArg {
    Weak,
    Strong,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::Weak => Regime::Weak,
            RegimeArg::Strong => Regime::Strong,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

fn parse_algorithm(s: &str) -> std::result::Result<AlgorithmKind, String> {
    AlgorithmKind::ALL
        .into_iter()
        .find(|k| k.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| {
            let names: Vec<&str> = AlgorithmKind::ALL.iter().map(|k| k.name()).collect();
            format!("unknown algorithm {s:?}; expected one of {}", names.join(", "))
        })
}

fn parse_method(s: &str) -> std::result::Result<SelectionMethod, String> {
    s.parse::<SelectionMethod>().map_err(|e| e.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn print(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

fn gen_synthetic(cli: &Cli, spec: Option<&Path>) -> Result<()> {
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| Error::Config("gen-synthetic needs --out".into()))?;
    let spec = match spec {
        Some(p) => SyntheticSpec::from_json(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => SyntheticSpec::default(),
    };
    let ds = generate_synthetic(&spec, cli.seed.unwrap_or(0), out)?;
    print(&format!("{}\n", serde_json::to_string_pretty(&ds.manifest)?))
}

fn validate(dataset: &Path) -> Result<()> {
    let report = validate_dataset(dataset);
    for issue in &report.issues {
        eprintln!("issue: code={} message={issue}", issue.code());
    }
    match (&report.manifest, report.issues.len()) {
        (Some(m), 0) => print(&format!(
            "ok: {} ({} modalities, {} instances, {} classes)\n",
            m.name,
            m.modalities.len(),
            m.num_instances,
            m.num_classes
        )),
        (_, n) => Err(Error::format("dataset", format!("{n} validation issue(s)"))),
    }
}

fn train(
    cli: &Cli,
    dataset: &Path,
    algorithm: AlgorithmKind,
    test_modality: &str,
    regime: Option<RegimeArg>,
    steps: Option<usize>,
    trial: usize,
) -> Result<()> {
    let mut plan = RunPlan::new(dataset, test_modality);
    plan.algorithms = vec![algorithm];
    plan.trials = trial + 1;
    plan.seeds = 1;
    plan.steps = steps;
    plan.regime = regime.map(Regime::from);
    plan.sweep_seed = cli.seed.unwrap_or(0);
    let ctx = SweepContext::new(plan, load_dataset(dataset)?)?;
    let job = Job {
        algorithm,
        trial,
        seed_index: 0,
    };
    let out = run_trial(&ctx, &job, None)?;
    if let Some(path) = &cli.out {
        ResultsStore::open(path)?.append_output(&out)?;
    }
    print(&format!("{}\n", serde_json::to_string_pretty(&out.trial)?))?;
    match &out.trial.error {
        Some(e) => Err(Error::Config(format!("training failed: {e}"))),
        None => Ok(()),
    }
}

fn sweep(cli: &Cli, plan_path: &Path, store: Option<&Path>, flags: &StopFlags) -> Result<()> {
    let mut plan = RunPlan::read(plan_path)?;
    if let Some(seed) = cli.seed {
        plan.sweep_seed = seed;
    }
    let store_path = store
        .map(Path::to_path_buf)
        .or_else(|| cli.out.clone())
        .unwrap_or_else(|| PathBuf::from("results.jsonl"));
    let ctx = SweepContext::load(plan)?;
    let store = ResultsStore::open(&store_path)?;
    eprintln!(
        "sweep {}: {} jobs, {} steps each, plan {}",
        ctx.dataset_id,
        ctx.jobs().len(),
        ctx.steps,
        ctx.plan_hash
    );
    let summary = run_sweep(&ctx, &store, cli.workers, Some(flags), &|r| {
        let p = &r.provenance;
        match (&r.error, r.accuracies.test) {
            (None, Some(t)) => eprintln!("{} trial {} seed {}: ok, test {t:.1}", p.algorithm, p.trial, p.seed_index),
            (e, _) => eprintln!(
                "{} trial {} seed {}: failed, {}",
                p.algorithm,
                p.trial,
                p.seed_index,
                e.as_deref().unwrap_or("no accuracy")
            ),
        }
    })?;
    print(&format!(
        "{{\"store\":{},\"total\":{},\"skipped\":{},\"ok\":{},\"failed\":{},\"cancelled\":{}}}\n",
        serde_json::to_string(&store_path)?,
        summary.total,
        summary.skipped,
        summary.ok,
        summary.failed,
        summary.cancelled
    ))?;
    if summary.cancelled > 0 {
        return Err(Error::Config(format!(
            "interrupted with {} job(s) not run; rerun to resume",
            summary.cancelled
        )));
    }
    Ok(())
}

fn select(store: &Path, method: Option<SelectionMethod>) -> Result<()> {
    let contents = StoreContents::read(store)?;
    let methods = method.map_or(SelectionMethod::ALL.to_vec(), |m| vec![m]);
    let mut all = Vec::new();
    for m in methods {
        all.extend(select_all(&contents, m)?);
    }
    print(&format!("{}\n", serde_json::to_string_pretty(&all)?))
}

fn report(cli: &Cli, store: &Path, format: Format) -> Result<()> {
    let report = aggregate_report(&StoreContents::read(store)?)?;
    let text = report.render_text();
    let csv = report.render_csv();
    let json = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("report.txt"), &text)?;
        write_file(&dir.join("report.csv"), &csv)?;
        write_file(&dir.join("report.json"), &json)?;
    }
    print(match format {
        Format::Text => &text,
        Format::Csv => &csv,
        Format::Json => &json,
    })
}

fn gradcheck(cli: &Cli) -> Result<()> {
    let suites = all_suites(cli.seed.unwrap_or(0))?;
    let mut failed = 0;
    for s in &suites {
        let verdict = if s.passed() { "pass" } else { "FAIL" };
        failed += usize::from(!s.passed());
        print(&format!(
            "{verdict} {:<36} cases {:>2}  max relative error {:.2e}  tolerance {:.0e}\n",
            s.name, s.cases, s.max_relative_error, s.tolerance
        ))?;
    }
    if failed > 0 {
        return Err(Error::NumericOverflow(format!("{failed} gradient suite(s) out of tolerance")));
    }
    Ok(())
}

fn run(cli: &Cli, flags: &StopFlags) -> Result<()> {
    match &cli.command {
        Command::GenSynthetic { spec } => gen_synthetic(cli, spec.as_deref()),
        Command::Validate { dataset } => validate(dataset),
        Command::Train {
            dataset,
            algorithm,
            test_modality,
            regime,
            steps,
            trial,
        } => train(cli, dataset, *algorithm, test_modality, *regime, *steps, *trial),
        Command::Sweep { plan, store } => sweep(cli, plan, store.as_deref(), flags),
        Command::Select { store, method } => select(store, *method),
        Command::Report { store, format } => report(cli, store, *format),
        Command::Gradcheck => gradcheck(cli),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let flags = Arc::new(StopFlags::default());
    let handler_flags = Arc::clone(&flags);
    // First interrupt drains in-flight jobs; a second abandons them unwritten.
    let installed = ctrlc::set_handler(move || {
        if handler_flags.drain.swap(true, Ordering::SeqCst) {
            handler_flags.abort.store(true, Ordering::SeqCst);
            eprintln!("interrupt: abandoning running jobs");
        } else {
            eprintln!("interrupt: finishing running jobs; interrupt again to abandon them");
        }
    });
    if let Err(e) = installed {
        eprintln!("warning: no interrupt handler: {e}");
    }
    match run(&cli, &flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: code={} message={e}", e.code());
            ExitCode::FAILURE
        }
    }
}
