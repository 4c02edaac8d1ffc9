//! `strattree`: fit, assign and analyse two-wave stratified experiments.

mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use strattree::search::DEFAULT_BUDGET;
use strattree::sim::{DgpSpec, Method, StudyConfig, StudyReport};
use strattree::{
    assign_sbr, assign_simple, cv_fit, estimate_ate, estimate_ate_multi, estimate_ate_sfe,
    estimate_pooled, estimate_subgroups, fit, fit_with, EOptimalObjective, FitConfig, Sample,
    SplitGrid, StratificationTree, TreeObjective, VarianceObjective, VERSION,
};

use io::{emit, input, read_json, read_tree, to_json, CliError, CliResult, Table};

const ORACLE_SCHEMA: &str = "strattree.oracle/v1";
const ASSIGN_SCHEMA: &str = "strattree.assignment/v1";

#[derive(Parser)]
#[command(
    name = "strattree",
    version,
    about = "Stratification trees for two-wave experiments"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a stratification tree to pilot data.
    Fit(FitCmd),
    /// Choose the depth by cross-validation, then fit.
    CvFit(CvFitCmd),
    /// Randomize a new wave within the strata of a tree.
    Assign(AssignCmd),
    /// Estimate the average treatment effect from second-wave data.
    Estimate(EstimateCmd),
    /// Run a Monte Carlo study on a simulated design.
    Simulate(SimulateCmd),
    /// Exhaustive search over all trees on a threshold grid.
    Oracle(OracleCmd),
}

#[derive(Args)]
struct FitArgs {
    /// Pilot CSV with columns y, a, x1..xd.
    #[arg(long)]
    pilot: PathBuf,
    /// Covariate space as a JSON list of dimensions (default: unit cube).
    #[arg(long)]
    space: Option<PathBuf>,
    /// Fit configuration JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Maximum tree depth.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Targets are clipped to [nu, 1 - nu].
    #[arg(long)]
    nu: Option<f64>,
    /// Minimum pilot rows per arm in a stratum.
    #[arg(long)]
    min_cell: Option<usize>,
    /// Split thresholds as JSON, one list per dimension (default: midpoints).
    #[arg(long)]
    grid: Option<PathBuf>,
}

struct Prepared {
    pilot: Sample,
    space: Arc<strattree::CovariateSpace>,
    config: FitConfig,
}

impl FitArgs {
    fn prepare(&self) -> CliResult<Prepared> {
        let table = Table::read(&self.pilot)?;
        let pilot = table.sample()?;
        let space = Arc::new(io::space(self.space.as_deref(), pilot.d())?);
        let mut config: FitConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => FitConfig::default(),
        };
        set(&mut config.max_depth, self.depth);
        set(&mut config.ea.seed, self.seed);
        set(&mut config.ea.population, self.population);
        set(&mut config.ea.max_iterations, self.max_iterations);
        set(&mut config.ea.patience, self.patience);
        set(&mut config.ea.tolerance, self.tolerance);
        set(&mut config.nu, self.nu);
        set(&mut config.min_cell_per_arm, self.min_cell);
        if let Some(p) = &self.grid {
            config.split_grid = SplitGrid::Explicit(read_json(p)?);
        }
        config.validate()?;
        Ok(Prepared {
            pilot,
            space,
            config,
        })
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Args)]
struct FitCmd {
    #[command(flatten)]
    fit: FitArgs,
    /// Output tree JSON.
    #[arg(long, default_value = "tree.json")]
    tree: PathBuf,
    /// Output fit report JSON.
    #[arg(long, default_value = "fit_report.json")]
    report: PathBuf,
}

#[derive(Args)]
struct CvFitCmd {
    #[command(flatten)]
    fit: FitArgs,
    /// Number of folds.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, default_value = "tree.json")]
    tree: PathBuf,
    #[arg(long, default_value = "fit_report.json")]
    report: PathBuf,
    /// Output cross-validation report JSON.
    #[arg(long, default_value = "cv_report.json")]
    cv_report: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProcedureArg {
    Sbr,
    Simple,
}

#[derive(Args)]
struct AssignCmd {
    /// Tree JSON.
    #[arg(long)]
    tree: PathBuf,
    /// CSV with covariate columns x1..xd; other columns are carried over.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "sbr")]
    procedure: ProcedureArg,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the assignment plan as JSON.
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateCmd {
    /// Tree JSON used for the second-wave assignment.
    #[arg(long)]
    tree: PathBuf,
    /// Second-wave CSV with columns y, a, x1..xd.
    #[arg(long)]
    data: PathBuf,
    /// Pilot CSV; pools the pilot difference in means with the second wave.
    #[arg(long)]
    pilot: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Use the strata-fixed-effects estimator (equal targets only).
    #[arg(long)]
    sfe: bool,
    /// Coarser tree JSON; reports an estimate for each of its cells.
    #[arg(long)]
    subgroups: Option<PathBuf>,
    /// Output JSON (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateCmd {
    /// Built-in model (1, 2 or 3).
    #[arg(long)]
    model: u8,
    /// Study configuration JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pilot_n: Option<usize>,
    #[arg(long)]
    main_n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    depth: Option<usize>,
    /// Comma-separated: none, adhoc, strat, cv, infeasible.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Output metrics CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Output full report JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct OracleCmd {
    #[command(flatten)]
    fit: FitArgs,
    /// Largest number of trees to evaluate.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u128,
    #[arg(long, default_value = "tree.json")]
    tree: PathBuf,
    /// Output report JSON (default: stdout).
    #[arg(long)]
    report: Option<PathBuf>,
}

fn objective_for(pilot: &Sample) -> &'static dyn TreeObjective {
    if pilot.arms() == 2 {
        &VarianceObjective
    } else {
        &EOptimalObjective
    }
}

fn write_tree(path: &Path, tree: &StratificationTree) -> CliResult<()> {
    emit(Some(path), &(tree.to_json() + "\n"))
}

fn run_fit(cmd: FitCmd) -> CliResult<()> {
    let p = cmd.fit.prepare()?;
    eprintln!("seed: {}", p.config.ea.seed);
    let report = if p.pilot.arms() == 2 {
        fit(&p.pilot, &p.space, &p.config)?
    } else {
        fit_with(&p.pilot, &p.space, &p.config, objective_for(&p.pilot))?
    };
    if let Some(w) = &report.warning {
        eprintln!("warning: {w}");
    }
    write_tree(&cmd.tree, &report.tree)?;
    emit(Some(&cmd.report), &to_json(&report)?)?;
    eprintln!(
        "objective {:.6} after {} generations ({} strata)",
        report.objective,
        report.generations,
        report.tree.n_leaves()
    );
    Ok(())
}

fn run_cv_fit(cmd: CvFitCmd) -> CliResult<()> {
    let mut p = cmd.fit.prepare()?;
    set(&mut p.config.cv_folds, cmd.folds);
    p.config.validate()?;
    if p.pilot.arms() != 2 {
        return Err(CliError::Input(
            "cv-fit supports two arms; use fit with --depth for more".into(),
        ));
    }
    eprintln!("seed: {}", p.config.ea.seed);
    let (report, cv) = cv_fit(&p.pilot, &p.space, p.config.max_depth, &p.config)?;
    write_tree(&cmd.tree, &report.tree)?;
    emit(Some(&cmd.report), &to_json(&report)?)?;
    emit(Some(&cmd.cv_report), &to_json(&cv)?)?;
    eprintln!(
        "chosen depth {} (criterion {:?})",
        cv.chosen_depth,
        cv.criterion()
    );
    Ok(())
}

fn run_assign(cmd: AssignCmd) -> CliResult<()> {
    let tree = read_tree(&cmd.tree)?;
    let table = Table::read(&cmd.data)?;
    for col in ["stratum", "treatment"] {
        if table.headers.iter().any(|h| h == col) {
            return Err(CliError::Input(format!(
                "{}: column {col:?} already present",
                table.path
            )));
        }
    }
    let xs = table.covariates()?;
    eprintln!("seed: {}", cmd.seed);
    let plan = match cmd.procedure {
        ProcedureArg::Sbr => assign_sbr(&tree, &xs, cmd.seed)?,
        ProcedureArg::Simple => assign_simple(&tree, &xs, cmd.seed)?,
    };
    let extra: Vec<Vec<String>> = plan
        .strata
        .iter()
        .zip(&plan.treatments)
        .map(|(s, a)| vec![s.to_string(), a.to_string()])
        .collect();
    emit(
        cmd.out.as_deref(),
        &table.write_with(&["stratum", "treatment"], &extra)?,
    )?;
    if let Some(path) = &cmd.plan {
        let doc = json!({
            "schema": ASSIGN_SCHEMA,
            "version": VERSION,
            "tree": cmd.tree,
            "plan": plan,
        });
        emit(Some(path), &to_json(&doc)?)?;
    }
    Ok(())
}

fn run_estimate(cmd: EstimateCmd) -> CliResult<()> {
    let tree = read_tree(&cmd.tree)?;
    let wave2 = Table::read(&cmd.data)?.sample()?;
    let mut doc = json!({
        "schema": strattree::estimate::ESTIMATE_SCHEMA,
        "version": VERSION,
        "level": cmd.level,
        "tree": cmd.tree,
        "data": cmd.data,
    });
    if wave2.arms() > 2 {
        if cmd.pilot.is_some() || cmd.sfe || cmd.subgroups.is_some() {
            return Err(CliError::Input(
                "--pilot, --sfe and --subgroups need two arms".into(),
            ));
        }
        doc["estimator"] = json!("stratified");
        doc["estimate"] = json!(estimate_ate_multi(&tree, &wave2, cmd.level)?);
        return emit(cmd.out.as_deref(), &to_json(&doc)?);
    }
    let second = if cmd.sfe {
        estimate_ate_sfe(&tree, &wave2, cmd.level)?
    } else {
        estimate_ate(&tree, &wave2, cmd.level)?
    };
    doc["estimator"] = json!(if cmd.sfe { "sfe" } else { "stratified" });
    match &cmd.pilot {
        Some(path) => {
            let pilot = Table::read(path)?.sample()?;
            let flat = StratificationTree::single_leaf(tree.space().clone(), 0, vec![0.5]);
            let first = estimate_ate(&flat, &pilot, cmd.level)?;
            doc["estimate"] = json!(estimate_pooled(&first, &second));
            doc["pilot"] = json!(first);
            doc["wave2"] = json!(second);
            doc["pooled"] = json!(true);
        }
        None => doc["estimate"] = json!(second),
    }
    if let Some(path) = &cmd.subgroups {
        let groups = read_tree(path)?;
        doc["subgroups"] = json!(estimate_subgroups(&tree, &groups, &wave2, cmd.level)?);
    }
    emit(cmd.out.as_deref(), &to_json(&doc)?)
}

fn run_simulate(cmd: SimulateCmd) -> CliResult<()> {
    let dgp = DgpSpec::preset(cmd.model)?;
    let mut config: StudyConfig = match &cmd.config {
        Some(p) => read_json(p)?,
        None => StudyConfig::default(),
    };
    set(&mut config.pilot_n, cmd.pilot_n);
    set(&mut config.main_n, cmd.main_n);
    set(&mut config.reps, cmd.reps);
    set(&mut config.seed, cmd.seed);
    set(&mut config.level, cmd.level);
    set(&mut config.depth, cmd.depth);
    set(&mut config.fit.ea.population, cmd.population);
    set(&mut config.fit.ea.max_iterations, cmd.max_iterations);
    if let Some(names) = &cmd.methods {
        let mut methods: Vec<Method> = names
            .iter()
            .map(|s| s.trim().parse())
            .collect::<Result<_, _>>()?;
        if !methods.contains(&Method::None) {
            methods.insert(0, Method::None);
        }
        config.methods = methods;
    }
    eprintln!("seed: {}", config.seed);
    let report = strattree::sim::run_study(&dgp, &config)?;
    print!("{report}");
    if let Some(path) = &cmd.csv {
        emit(Some(path), &metrics_csv(&report)?)?;
    }
    if let Some(path) = &cmd.json {
        emit(Some(path), &to_json(&report)?)?;
    }
    Ok(())
}

fn metrics_csv(report: &StudyReport) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Internal(e.to_string());
    w.write_record([
        "method",
        "coverage",
        "coverage_se",
        "delta_length",
        "delta_length_se",
        "power",
        "power_se",
        "delta_rmse",
        "delta_rmse_se",
        "rmse",
        "mean_length",
        "reps",
        "collapsed",
    ])
    .map_err(fail)?;
    for r in &report.rows {
        let nums = [
            r.coverage,
            r.coverage_se,
            r.delta_length,
            r.delta_length_se,
            r.power,
            r.power_se,
            r.delta_rmse,
            r.delta_rmse_se,
            r.rmse,
            r.mean_length,
        ];
        let mut rec = vec![r.method.key().to_string()];
        rec.extend(nums.iter().map(f64::to_string));
        rec.push(r.reps.to_string());
        rec.push(r.collapsed.to_string());
        w.write_record(&rec).map_err(fail)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Internal(e.to_string()))
}

fn run_oracle(cmd: OracleCmd) -> CliResult<()> {
    let p = cmd.fit.prepare()?;
    let grid = p.config.split_grid.candidates(&p.pilot, &p.space)?;
    let (tree, objective) = strattree::search::exhaustive_search_with(
        &p.pilot,
        &p.space,
        p.config.max_depth,
        &grid,
        &p.config,
        cmd.budget,
        objective_for(&p.pilot),
    )?;
    write_tree(&cmd.tree, &tree)?;
    let doc = json!({
        "schema": ORACLE_SCHEMA,
        "version": VERSION,
        "objective": if objective.is_finite() { json!(objective) } else { json!(null) },
        "grid": grid,
        "tree": tree,
        "config": p.config,
    });
    emit(cmd.report.as_deref(), &to_json(&doc)?)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(input("--threads"))?;
    }
    match cli.command {
        Command::Fit(c) => run_fit(c),
        Command::CvFit(c) => run_cv_fit(c),
        Command::Assign(c) => run_assign(c),
        Command::Estimate(c) => run_estimate(c),
        Command::Simulate(c) => run_simulate(c),
        Command::Oracle(c) => run_oracle(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
