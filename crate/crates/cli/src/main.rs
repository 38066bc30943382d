use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use uiloc_core::codeloc::{
    baseline_ranking, format_sweep_table, load_external_for, run_pipeline, screen_rankings, sweep,
    CodeIndex, CodeLocConfig, CodeLocContext, PipelineResult,
};
use uiloc_core::eval::{format_table, report_table, CorrelationMode, StratifyAxis};
use uiloc_core::experiment::{evaluate, LocalizationTask};
use uiloc_core::ingest::{load_project, Project, ProjectLayout};
use uiloc_core::model::{BugRecord, RankedList};
use uiloc_core::retrieval::{localize_components, localize_screens, ObQuery, Scorer, ScorerSpec};
use uiloc_core::synthgen::{builtin_templates, generate_dataset, load_templates, GenOptions};

/// Buggy UI and code localization from bug report text.
#[derive(Parser)]
#[command(name = "uiloc", version)]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Project directory.
    #[arg(long, global = true, default_value = ".")]
    project: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a project directory and report what was found.
    Ingest { dir: PathBuf },
    /// Rank screens or components for one bug.
    Localize(LocalizeArgs),
    /// Evaluate screen or component localization over all annotated bugs.
    Eval(Box<EvalArgs>),
    /// Generate synthetic OB descriptions from templates.
    Synth(SynthArgs),
    /// Rank code files for a bug, or sweep configurations.
    Codeloc(Box<CodelocArgs>),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Screens,
    Components,
}

#[derive(Args)]
struct LocalizeArgs {
    target: Target,
    #[arg(long)]
    bug: String,
    /// OB to use; defaults to the bug's first OB.
    #[arg(long)]
    ob: Option<String>,
    #[arg(long, default_value = "vsm")]
    scorer: ScorerSpec,
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Screen whose components are ranked; defaults to the top-ranked screen.
    #[arg(long)]
    screen: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value = "sl")]
    task: LocalizationTask,
    #[arg(long, default_value = "vsm")]
    scorer: ScorerSpec,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    ks: Vec<usize>,
    #[arg(long)]
    stratify: Option<StratifyAxis>,
    #[arg(long, value_enum, default_value = "per-rating")]
    correlation: Correlation,
}

#[derive(Clone, Copy, ValueEnum)]
enum Correlation {
    PerRating,
    PerQuery,
}

impl From<Correlation> for CorrelationMode {
    fn from(c: Correlation) -> Self {
        match c {
            Correlation::PerRating => CorrelationMode::PerRating,
            Correlation::PerQuery => CorrelationMode::PerQuery,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Template catalog; the built-in catalog when omitted.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_per_template: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    p_type: f64,
    #[arg(long, default_value_t = 0.5)]
    p_location: f64,
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct CodelocArgs {
    #[command(subcommand)]
    sweep: Option<SweepCommand>,
    #[arg(long)]
    bug: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Subcommand)]
enum SweepCommand {
    /// Evaluate a grid of configuration patches.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        /// Base configuration the grid patches apply to.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
}

/// Per-field overrides applied on top of the config file.
#[derive(Args, Default)]
struct ConfigOverrides {
    #[arg(long)]
    ob_strategy: Option<String>,
    #[arg(long)]
    screens_k: Option<usize>,
    #[arg(long)]
    ui_source: Option<String>,
    #[arg(long)]
    reformulation: Option<String>,
    #[arg(long)]
    rerank: Option<String>,
    #[arg(long)]
    boost_weight: Option<f64>,
    #[arg(long)]
    localizer: Option<String>,
    #[arg(long)]
    combine: Option<String>,
    #[arg(long)]
    sl_scorer: Option<String>,
    #[arg(long)]
    external_scores: Option<String>,
}

impl ConfigOverrides {
    fn patch(&self) -> Value {
        let mut m = serde_json::Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("ob_strategy", self.ob_strategy.clone().map(Value::from));
        put("screens_k", self.screens_k.map(Value::from));
        put("ui_source", self.ui_source.clone().map(Value::from));
        put("reformulation", self.reformulation.clone().map(Value::from));
        put("rerank", self.rerank.clone().map(Value::from));
        put("boost_weight", self.boost_weight.map(Value::from));
        put("localizer", self.localizer.clone().map(Value::from));
        put("combine", self.combine.clone().map(Value::from));
        put("sl_scorer", self.sl_scorer.clone().map(Value::from));
        put(
            "external_scores",
            self.external_scores.clone().map(Value::from),
        );
        Value::Object(m)
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Live embedding endpoint used for queries without stored vectors.
    #[arg(long)]
    embed_url: Option<String>,
    /// Project directories to load at startup.
    #[arg(long = "load")]
    load: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if cli.json {
                println!("{}", json!({ "error": format!("{e:#}") }));
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest { dir } => ingest(dir, cli.json),
        Command::Localize(a) => localize(&open(&cli.project)?, a, cli.json),
        Command::Eval(a) => eval(&open(&cli.project)?, a, cli.json),
        Command::Synth(a) => synth(&open(&cli.project)?, a, cli.json),
        Command::Codeloc(a) => codeloc(&open(&cli.project)?, a, cli.json),
        Command::Serve(a) => serve(a),
    }
}

fn open(dir: &Path) -> Result<Project> {
    load_project(&ProjectLayout::new(dir)).with_context(|| format!("loading {}", dir.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn ingest(dir: &Path, as_json: bool) -> Result<()> {
    let project = open(dir)?;
    let stats = project.stats();
    if as_json {
        return print_json(&json!({
            "stats": stats,
            "duplicates_dropped": project.duplicates_dropped,
            "issues": project.issues,
            "violations": project.violations,
        }));
    }
    println!("apps                 {}", stats.apps);
    println!("screens              {}", stats.screens);
    println!("screens per app      {:.2}", stats.mean_screens_per_app);
    println!(
        "components / screen  {:.2}",
        stats.mean_components_per_screen
    );
    println!("bugs                 {}", stats.bugs);
    println!("obs                  {}", stats.obs);
    println!("code files           {}", stats.code_files);
    println!("duplicates dropped   {}", project.duplicates_dropped);
    for i in &project.issues {
        println!("issue: {}: {}", i.path, i.message);
    }
    for (bug, msgs) in &project.violations {
        for m in msgs {
            println!("invalid bug {bug}: {m}");
        }
    }
    Ok(())
}

fn find_bug<'a>(project: &'a Project, id: &str) -> Result<&'a BugRecord> {
    project.bug(id).ok_or_else(|| anyhow!("unknown bug {id:?}"))
}

fn print_ranking(ranked: &RankedList, label: impl Fn(&str) -> String) {
    for (i, e) in ranked.entries().iter().enumerate() {
        println!("{:>3}  {:.4}  {}", i + 1, e.score, label(&e.doc_id));
    }
}

fn localize(project: &Project, a: &LocalizeArgs, as_json: bool) -> Result<()> {
    let bug = find_bug(project, &a.bug)?;
    let ob = match &a.ob {
        Some(id) => bug
            .ob(id)
            .ok_or_else(|| anyhow!("bug {} has no OB {id:?}", bug.bug_id))?,
        None => bug
            .first_ob()
            .ok_or_else(|| anyhow!("bug {} has no OBs", bug.bug_id))?,
    };
    let qid = ob.ob_id.as_str();
    let query = ObQuery::new(qid, &ob.text);
    let scorer = a.scorer.resolve(&project.layout.embeddings_dir())?;
    let screens = project.app_screens(&bug.app_id);

    match a.target {
        Target::Screens => {
            let ranked = localize_screens(&query, &screens, &scorer)?.truncated(a.top);
            if as_json {
                return print_json(&ranked);
            }
            println!("{}: {}", qid, ob.text);
            print_ranking(&ranked, |id| id.to_string());
        }
        Target::Components => {
            let screen_id = match &a.screen {
                Some(s) => s.clone(),
                None => top_screen(&query, &screens, &scorer)?,
            };
            let screen = project
                .screen(&bug.app_id, &screen_id)
                .ok_or_else(|| anyhow!("unknown screen {screen_id:?} for app {}", bug.app_id))?;
            let ranked = localize_components(&query, screen, &scorer)?.truncated(a.top);
            if as_json {
                return print_json(&json!({ "screen_id": screen_id, "ranking": ranked }));
            }
            println!("{}: {} [{}]", qid, ob.text, screen_id);
            print_ranking(&ranked, |id| {
                let c = id
                    .parse::<usize>()
                    .ok()
                    .and_then(|i| screen.leaf_components.get(i));
                match c {
                    Some(c) => format!("{id} {} {:?}", c.comp_type, first_text(c)),
                    None => id.to_string(),
                }
            });
        }
    }
    Ok(())
}

fn first_text(c: &uiloc_core::model::UIComponent) -> &str {
    [&c.label, &c.description, &c.component_id]
        .into_iter()
        .find(|s| !s.is_empty())
        .map_or("", |s| s.as_str())
}

fn top_screen(
    query: &ObQuery<'_>,
    screens: &[uiloc_core::model::UIScreen],
    scorer: &Scorer,
) -> Result<String> {
    let ranked = localize_screens(query, screens, scorer)?;
    let top = ranked.doc_ids().next().map(str::to_string);
    top.ok_or_else(|| anyhow!("no screen matches the OB; pass --screen"))
}

fn eval(project: &Project, a: &EvalArgs, as_json: bool) -> Result<()> {
    if a.ks.is_empty() || a.ks.contains(&0) {
        bail!("--ks must list positive cutoffs");
    }
    let scorer = a.scorer.resolve(&project.layout.embeddings_dir())?;
    let outcome = evaluate(
        project,
        a.task,
        &scorer,
        &a.ks,
        a.stratify,
        a.correlation.into(),
    )?;
    if as_json {
        return print_json(&outcome);
    }
    print!("{}", report_table(&scorer.name(), &outcome.report));
    if !outcome.report.strata.is_empty() {
        println!();
        let rows: Vec<(String, _)> = outcome
            .report
            .strata
            .iter()
            .map(|(k, r)| (k.clone(), r))
            .collect();
        print!("{}", format_table(&rows));
    }
    if let Some(rho) = outcome.quality_correlation {
        println!("quality/RR spearman  {rho:.3}");
    }
    Ok(())
}

fn synth(project: &Project, a: &SynthArgs, as_json: bool) -> Result<()> {
    let templates = match &a.templates {
        Some(p) => load_templates(p)?,
        None => builtin_templates(),
    };
    let opts = GenOptions {
        p_type: a.p_type,
        p_location: a.p_location,
        max_per_template: a.max_per_template,
    };
    let out = generate_dataset(&project.screens, &templates, a.seed, &opts)?;
    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = BufWriter::new(file);
    out.write_jsonl(&mut w)?;
    w.flush()?;
    let summary = json!({
        "out": a.out,
        "obs": out.obs.len(),
        "counts": out.counts,
        "skipped_duplicates": out.skipped_duplicates,
        "skipped_too_long": out.skipped_too_long,
    });
    if as_json {
        return print_json(&summary);
    }
    println!("wrote {} OBs to {}", out.obs.len(), a.out.display());
    for (k, n) in &out.counts {
        println!("  {k:<12} {n}");
    }
    println!(
        "skipped: {} duplicates, {} too long",
        out.skipped_duplicates, out.skipped_too_long
    );
    Ok(())
}

fn read_json(path: &Path) -> Result<Value> {
    let raw =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))
}

fn base_config(file: Option<&Path>, overrides: &ConfigOverrides) -> Result<CodeLocConfig> {
    let cfg = match file {
        Some(p) => CodeLocConfig::default().patched(&read_json(p)?)?,
        None => CodeLocConfig::default(),
    };
    Ok(cfg.patched(&overrides.patch())?)
}

#[derive(Serialize)]
struct CodelocOutput<'a> {
    bug_id: &'a str,
    config: &'a CodeLocConfig,
    #[serde(flatten)]
    result: PipelineResult,
    baseline: RankedList,
}

fn codeloc(project: &Project, a: &CodelocArgs, as_json: bool) -> Result<()> {
    if let Some(SweepCommand::Sweep {
        grid,
        config,
        overrides,
    }) = &a.sweep
    {
        return codeloc_sweep(project, grid, config.as_deref(), overrides, as_json);
    }
    let bug_id = a
        .bug
        .as_deref()
        .ok_or_else(|| anyhow!("--bug is required"))?;
    let bug = find_bug(project, bug_id)?;
    let cfg = base_config(a.config.as_deref(), &a.overrides)?;
    cfg.validate()?;

    let index = CodeIndex::build(&project.code_files);
    let external = load_external_for(&project.layout.root_dir, &cfg)?;
    let ctx = CodeLocContext {
        files: &project.code_files,
        index: &index,
        external: external.as_ref(),
    };
    let scorer = cfg.sl_scorer.resolve(&project.layout.embeddings_dir())?;
    let screens = project.app_screens(&bug.app_id);
    let sl = screen_rankings(bug, &screens, &scorer, cfg.ob_strategy)?;
    let mut result = run_pipeline(bug, &sl, &screens, &ctx, &cfg)?;
    let baseline = baseline_ranking(bug, &ctx, cfg.localizer)?.truncated(a.top);
    result.ranking = result.ranking.truncated(a.top);

    if as_json {
        return print_json(&CodelocOutput {
            bug_id,
            config: &cfg,
            result,
            baseline,
        });
    }
    println!("{} [{}]", bug_id, cfg.label());
    for run in &result.runs {
        let ob = run.ob_id.as_deref().unwrap_or("-");
        println!("  ob {ob}: screens {}", run.screens.join(", "));
        let terms: Vec<&str> = run.terms.iter().map(String::as_str).collect();
        println!("    terms: {}", terms.join(" "));
        let related: Vec<&str> = run.related_files.iter().map(String::as_str).collect();
        println!("    related: {}", related.join(", "));
    }
    for w in &result.warnings {
        println!("  warning: {w}");
    }
    for (i, e) in result.ranking.entries().iter().enumerate() {
        let base = baseline
            .rank_of(&e.doc_id)
            .map_or_else(|| "-".into(), |r| r.to_string());
        let gt = if bug.gt_files.contains(&e.doc_id) {
            " *"
        } else {
            ""
        };
        println!(
            "{:>3}  {:.4}  (was {base:>2})  {}{gt}",
            i + 1,
            e.score,
            e.doc_id
        );
    }
    Ok(())
}

fn codeloc_sweep(
    project: &Project,
    grid: &Path,
    config: Option<&Path>,
    overrides: &ConfigOverrides,
    as_json: bool,
) -> Result<()> {
    let base = base_config(config, overrides)?;
    let Value::Array(patches) = read_json(grid)? else {
        bail!(
            "{}: grid must be a JSON list of config patches",
            grid.display()
        );
    };
    let configs = patches
        .iter()
        .enumerate()
        .map(|(i, p)| {
            base.patched(p)
                .with_context(|| format!("{}: entry {i}", grid.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = sweep(project, &configs)?;
    if as_json {
        return print_json(&rows);
    }
    print!("{}", format_sweep_table(&rows));
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    use tracing_subscriber::EnvFilter;
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let state = Arc::new(uiloc_service::AppState::new(uiloc_service::ServiceConfig {
        embed_url: a.embed_url.clone(),
    }));
    for dir in &a.load {
        let p = state
            .register(dir)
            .map_err(|e| anyhow!("loading {}: {e}", dir.display()))?;
        tracing::info!("loaded project {} from {}", p.id, dir.display());
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(uiloc_service::serve(a.addr, state))?;
    Ok(())
}
