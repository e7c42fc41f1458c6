//! Experiment driver: flag and config-file parsing, validation, dispatch and
//! output files.
//!
//! Every option is a `key=value` pair. Flags (`--key value`) are read first,
//! then a `--config` file of `key=value` lines overrides them. The manifest
//! written next to the outputs uses the same syntax, so passing it back via
//! `--config` reproduces the run.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use clap::{Arg, ArgAction, Command as ClapCommand};
use evalexpr::{ContextWithMutableFunctions, ContextWithMutableVariables, Function, HashMapContext, Node, Value};

use crate::assumptions::{self, AssumptionConfig, Functional, SweepPoint};
use crate::eigen::{self, TolerancePolicy, WosInverse};
use crate::error::{Error, Result};
use crate::field::LevelTerm;
use crate::geometry::Domain;
use crate::mesh::MeshHierarchy;
use crate::mlmc::{self, LevelSelection, MlmcConfig};
use crate::problems::{self, Problem, ScalarField};

pub const SEED_ENV: &str = "FRACWOS_SEED";

/// Recognised keys and their help text.
const KEYS: &[(&str, &str)] = &[
    ("alpha", "stability index in (0, 2); a comma list for check-assumptions"),
    ("problem", "example1, example2, example3 or custom"),
    ("f", "source term expression in x, y (custom problem)"),
    ("g", "exterior data expression in x, y (custom problem)"),
    ("exact", "optional exact solution expression in x, y (custom problem)"),
    ("domain", "ball(cx, cy, r), box(x0, y0, x1, y1) or polygon((x, y), ...)"),
    ("l0", "coarsest mesh level"),
    ("L", "finest mesh level"),
    ("eps", "target RMS error in L2(D); a comma list for cost-study"),
    ("levels", "adaptive or fixed finest-level selection (solve)"),
    ("pilot", "pilot samples per level term"),
    ("budget", "abort when the projected cost in steps exceeds this"),
    ("tol", "eigenvalue residual tolerance"),
    ("B", "safety constant of the tolerance schedule"),
    ("m", "maximum Arnoldi steps"),
    ("policy", "relaxed or fixed solve tolerances (eig)"),
    ("relax_cap", "upper bound on the relaxation factor (eig)"),
    ("samples", "samples per level (variance-study) or per start point (check-assumptions)"),
    ("functional", "contraction or barrier (check-assumptions)"),
    ("mu", "contraction exponents, comma list"),
    ("t", "barrier exponents, comma list"),
    ("A", "barrier floors, comma list"),
    ("starts", "number of uniform start points or pairs"),
    ("seed", "master seed (falls back to $FRACWOS_SEED)"),
    ("workers", "worker threads (default: available parallelism)"),
    ("out", "output directory"),
];

/// Keys that do not influence results and are kept out of the manifest.
const RUNTIME_KEYS: &[&str] = &["workers", "out"];

const COMMANDS: &[(&str, &str)] = &[
    ("solve", "multilevel field solve"),
    ("eig", "smallest eigenvalue by inexact Arnoldi"),
    ("variance-study", "coupling variance per level transition and fitted rate"),
    ("cost-study", "multilevel vs single-level cost over a tolerance list"),
    ("check-assumptions", "one-step contraction / barrier functionals"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Workflow {
    Solve,
    Eig,
    VarianceStudy,
    CostStudy,
    CheckAssumptions,
}

impl Workflow {
    pub fn name(self) -> &'static str {
        COMMANDS[self as usize].0
    }
}

impl FromStr for Workflow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "solve" => Self::Solve,
            "eig" => Self::Eig,
            "variance-study" => Self::VarianceStudy,
            "cost-study" => Self::CostStudy,
            "check-assumptions" => Self::CheckAssumptions,
            _ => return Err(Error::Config(format!("unknown command `{s}`"))),
        })
    }
}

fn clap_command() -> ClapCommand {
    let mut cmd = ClapCommand::new("fracwos")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Walk-outside-spheres solvers for the fractional Laplacian")
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("PATH")
                .help("key=value file; its entries override flags"),
        );
    for (key, help) in KEYS {
        let mut arg = Arg::new(*key)
            .long(*key)
            .global(true)
            .value_name("VALUE")
            .action(ArgAction::Set)
            .help(*help);
        if *key == "seed" {
            arg = arg.env(SEED_ENV);
        }
        cmd = cmd.arg(arg);
    }
    for (name, about) in COMMANDS {
        cmd = cmd.subcommand(ClapCommand::new(*name).about(*about));
    }
    cmd
}

/// Raw options of one invocation after merging flags and the config file.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub workflow: Workflow,
    pub values: BTreeMap<String, String>,
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

impl Settings {
    pub fn from_args<I, T>(args: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<std::ffi::OsString> + Clone,
    {
        let matches = clap_command()
            .try_get_matches_from(args)
            .map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        let (name, sub) = matches.subcommand().expect("subcommand is required");
        let workflow: Workflow = name.parse()?;
        let mut values = BTreeMap::new();
        for (key, _) in KEYS {
            if let Some(v) = sub.get_one::<String>(key) {
                values.insert(key.to_string(), v.clone());
            }
        }
        if let Some(path) = sub.get_one::<String>("config") {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config `{path}`: {e}")))?;
            for (k, v) in parse_config(&text)? {
                if k == "command" {
                    if v != workflow.name() {
                        return Err(Error::Config(format!(
                            "config is for `{v}`, not `{}`",
                            workflow.name()
                        )));
                    }
                } else if KEYS.iter().any(|(key, _)| *key == k) {
                    values.insert(k, v);
                } else {
                    return Err(Error::Config(format!("unknown config key `{k}`")));
                }
            }
        }
        Ok(Self { workflow, values })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| Error::Config(format!("invalid value `{v}` for `{key}`: {e}")))
            })
            .transpose()
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|e| Error::Config(format!("invalid value `{t}` in `{key}`: {e}")))
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemSpec {
    Named(String),
    Custom {
        f: String,
        g: String,
        exact: Option<String>,
        domain: Domain,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionSweep {
    pub functional: Functional,
    pub alphas: Vec<f64>,
    pub mus: Vec<f64>,
    pub ts: Vec<f64>,
    pub floors: Vec<f64>,
    pub samples: u64,
    pub starts: usize,
    pub domain: Domain,
}

impl AssumptionSweep {
    pub fn grid(&self) -> Vec<SweepPoint> {
        let mut grid = Vec::new();
        for &alpha in &self.alphas {
            match self.functional {
                Functional::Contraction => {
                    for &mu in &self.mus {
                        grid.push(SweepPoint { alpha, mu_or_t: mu, a: f64::NAN });
                    }
                }
                Functional::Barrier => {
                    for &a in &self.floors {
                        for &t in &self.ts {
                            grid.push(SweepPoint { alpha, mu_or_t: t, a });
                        }
                    }
                }
            }
        }
        grid
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Task {
    Solve {
        problem: ProblemSpec,
        l0: usize,
        finest: usize,
        eps: f64,
        selection: LevelSelection,
        pilot: u64,
        budget: Option<f64>,
    },
    Eig {
        domain: Domain,
        l0: usize,
        finest: usize,
        tol: f64,
        safety: f64,
        m: usize,
        policy: TolerancePolicy,
    },
    VarianceStudy {
        problem: ProblemSpec,
        l0: usize,
        finest: usize,
        samples: u64,
    },
    CostStudy {
        problem: ProblemSpec,
        l0: usize,
        eps: Vec<f64>,
        pilot: u64,
        budget: Option<f64>,
    },
    CheckAssumptions(AssumptionSweep),
}

/// Validated, fully defaulted run description.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub alpha: Vec<f64>,
    pub seed: u64,
    pub workers: Option<usize>,
    pub out: PathBuf,
    pub task: Task,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

fn check_levels(l0: usize, finest: usize) -> Result<()> {
    check(l0 >= 1, || format!("l0 must be at least 1, got {l0}"))?;
    check(l0 <= finest, || format!("l0 must not exceed L, got l0={l0}, L={finest}"))
}

fn check_positive(key: &str, v: f64) -> Result<()> {
    check(v.is_finite() && v > 0.0, || format!("`{key}` must be positive, got {v}"))
}

fn problem_spec(s: &Settings) -> Result<ProblemSpec> {
    let custom = ["f", "g", "exact"].iter().any(|k| s.raw(k).is_some());
    let name = s.raw("problem").unwrap_or(if custom { "custom" } else { "example1" });
    if name == "custom" {
        let domain = s.get_or("domain", Domain::unit_ball())?;
        let expr = |k: &str| s.raw(k).map(str::to_string);
        let f = expr("f").unwrap_or_else(|| "0".into());
        let g = expr("g").unwrap_or_else(|| "0".into());
        let exact = expr("exact");
        // parse now so a bad expression is reported before any work
        for e in [Some(&f), Some(&g), exact.as_ref()].into_iter().flatten() {
            compile_expression(e)?;
        }
        return Ok(ProblemSpec::Custom { f, g, exact, domain });
    }
    check(!custom, || format!("f, g and exact need problem=custom, not `{name}`"))?;
    check(s.raw("domain").is_none(), || {
        format!("`{name}` is posed on the unit disc; domain needs problem=custom")
    })?;
    check(problems::by_name(name, 1.0).is_some(), || format!("unknown problem `{name}`"))?;
    Ok(ProblemSpec::Named(name.to_string()))
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let seed = s.get_or("seed", 0u64)?;
        let workers: Option<usize> = s.get("workers")?;
        if let Some(w) = workers {
            check(w >= 1, || "workers must be at least 1".into())?;
        }
        let out = PathBuf::from(s.raw("out").unwrap_or("."));
        let multi_alpha = s.workflow == Workflow::CheckAssumptions;
        let alpha = s.list("alpha", if multi_alpha { &[0.5] } else { &[] })?;
        check(!alpha.is_empty() || multi_alpha, || "`alpha` is required".into())?;
        check(multi_alpha || alpha.len() == 1, || "`alpha` takes a single value here".into())?;
        for &a in &alpha {
            check(a > 0.0 && a < 2.0, || format!("alpha must lie in (0, 2), got {a}"))?;
        }
        let budget = |s: &Settings| -> Result<Option<f64>> {
            let b: Option<f64> = s.get("budget")?;
            if let Some(b) = b {
                check_positive("budget", b)?;
            }
            Ok(b)
        };
        let pilot = |s: &Settings| -> Result<u64> {
            let p = s.get_or("pilot", MlmcConfig::new(1.0, 1, 1, 0).pilot_samples)?;
            check(p >= mlmc::MIN_PILOT_SAMPLES, || {
                format!("pilot must be at least {}", mlmc::MIN_PILOT_SAMPLES)
            })?;
            Ok(p)
        };
        let task = match s.workflow {
            Workflow::Solve => {
                let (l0, finest) = (s.get_or("l0", 3)?, s.get_or("L", 6)?);
                check_levels(l0, finest)?;
                let eps = s.get_or("eps", 1e-2)?;
                check_positive("eps", eps)?;
                let selection = match s.raw("levels").unwrap_or("adaptive") {
                    "adaptive" => LevelSelection::Adaptive,
                    "fixed" => LevelSelection::Fixed,
                    v => return Err(Error::Config(format!("levels must be adaptive or fixed, got `{v}`"))),
                };
                Task::Solve {
                    problem: problem_spec(s)?,
                    l0,
                    finest,
                    eps,
                    selection,
                    pilot: pilot(s)?,
                    budget: budget(s)?,
                }
            }
            Workflow::Eig => {
                let (l0, finest) = (s.get_or("l0", 3)?, s.get_or("L", 6)?);
                check_levels(l0, finest)?;
                let tol = s.get_or("tol", 0.01)?;
                let safety = s.get_or("B", 3.0)?;
                check_positive("tol", tol)?;
                check_positive("B", safety)?;
                let m = s.get_or("m", 5usize)?;
                check(m >= 1, || "m must be at least 1".into())?;
                let cap = s.get_or("relax_cap", eigen::DEFAULT_RELAX_CAP)?;
                check(cap >= 1.0, || format!("relax_cap must be at least 1, got {cap}"))?;
                let policy = match s.raw("policy").unwrap_or("relaxed") {
                    "relaxed" => TolerancePolicy::Relaxed { cap },
                    "fixed" => TolerancePolicy::Fixed,
                    v => return Err(Error::Config(format!("policy must be relaxed or fixed, got `{v}`"))),
                };
                Task::Eig {
                    domain: s.get_or("domain", Domain::unit_ball())?,
                    l0,
                    finest,
                    tol,
                    safety,
                    m,
                    policy,
                }
            }
            Workflow::VarianceStudy => {
                let (l0, finest) = (s.get_or("l0", 3)?, s.get_or("L", 7)?);
                check_levels(l0, finest)?;
                check(l0 < finest, || "variance-study needs l0 < L".into())?;
                let samples = s.get_or("samples", 400u64)?;
                check(samples >= 2, || "samples must be at least 2".into())?;
                Task::VarianceStudy {
                    problem: problem_spec(s)?,
                    l0,
                    finest,
                    samples,
                }
            }
            Workflow::CostStudy => {
                let l0 = s.get_or("l0", 3)?;
                check_levels(l0, l0)?;
                let eps = s.list("eps", &[2f64.powi(-6), 2f64.powi(-8)])?;
                check(!eps.is_empty(), || "eps list is empty".into())?;
                for &e in &eps {
                    check_positive("eps", e)?;
                }
                check(eps.windows(2).all(|w| w[1] < w[0]), || {
                    "eps list must be strictly decreasing".into()
                })?;
                Task::CostStudy {
                    problem: problem_spec(s)?,
                    l0,
                    eps,
                    pilot: pilot(s)?,
                    budget: budget(s)?,
                }
            }
            Workflow::CheckAssumptions => {
                let functional = match s.raw("functional").unwrap_or("contraction") {
                    "contraction" => Functional::Contraction,
                    "barrier" => Functional::Barrier,
                    v => {
                        return Err(Error::Config(format!(
                            "functional must be contraction or barrier, got `{v}`"
                        )))
                    }
                };
                let unit = |key: &str, v: &[f64]| -> Result<()> {
                    for &x in v {
                        check(x > 0.0 && x <= 1.0, || format!("`{key}` values must lie in (0, 1], got {x}"))?;
                    }
                    Ok(())
                };
                let mus = s.list("mu", &[1.0])?;
                let ts = s.list("t", &[1.0])?;
                let floors = s.list("A", &[1e4])?;
                unit("mu", &mus)?;
                unit("t", &ts)?;
                for &a in &floors {
                    check_positive("A", a)?;
                }
                let samples = s.get_or("samples", 1_000_000u64)?;
                check(samples >= 2, || "samples must be at least 2".into())?;
                let starts = s.get_or("starts", 20usize)?;
                check(starts >= 1, || "starts must be at least 1".into())?;
                Task::CheckAssumptions(AssumptionSweep {
                    functional,
                    alphas: alpha.clone(),
                    mus,
                    ts,
                    floors,
                    samples,
                    starts,
                    domain: s.get_or("domain", Domain::unit_square())?,
                })
            }
        };
        Ok(Self {
            alpha,
            seed,
            workers,
            out,
            task,
        })
    }

    pub fn workflow(&self) -> Workflow {
        match self.task {
            Task::Solve { .. } => Workflow::Solve,
            Task::Eig { .. } => Workflow::Eig,
            Task::VarianceStudy { .. } => Workflow::VarianceStudy,
            Task::CostStudy { .. } => Workflow::CostStudy,
            Task::CheckAssumptions(_) => Workflow::CheckAssumptions,
        }
    }

    /// Every result-determining setting, in config syntax.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let mut pairs = vec![("alpha", join(&self.alpha)), ("seed", self.seed.to_string())];
        let problem = |pairs: &mut Vec<(&'static str, String)>, p: &ProblemSpec| match p {
            ProblemSpec::Named(n) => pairs.push(("problem", n.clone())),
            ProblemSpec::Custom { f, g, exact, domain } => {
                pairs.push(("problem", "custom".into()));
                pairs.push(("f", f.clone()));
                pairs.push(("g", g.clone()));
                if let Some(e) = exact {
                    pairs.push(("exact", e.clone()));
                }
                pairs.push(("domain", domain.to_string()));
            }
        };
        match &self.task {
            Task::Solve { problem: p, l0, finest, eps, selection, pilot, budget } => {
                problem(&mut pairs, p);
                pairs.push(("l0", l0.to_string()));
                pairs.push(("L", finest.to_string()));
                pairs.push(("eps", eps.to_string()));
                let levels = match selection {
                    LevelSelection::Adaptive => "adaptive",
                    LevelSelection::Fixed => "fixed",
                };
                pairs.push(("levels", levels.into()));
                pairs.push(("pilot", pilot.to_string()));
                if let Some(b) = budget {
                    pairs.push(("budget", b.to_string()));
                }
            }
            Task::Eig { domain, l0, finest, tol, safety, m, policy } => {
                pairs.push(("domain", domain.to_string()));
                pairs.push(("l0", l0.to_string()));
                pairs.push(("L", finest.to_string()));
                pairs.push(("tol", tol.to_string()));
                pairs.push(("B", safety.to_string()));
                pairs.push(("m", m.to_string()));
                match policy {
                    TolerancePolicy::Relaxed { cap } => {
                        pairs.push(("policy", "relaxed".into()));
                        pairs.push(("relax_cap", cap.to_string()));
                    }
                    TolerancePolicy::Fixed => pairs.push(("policy", "fixed".into())),
                }
            }
            Task::VarianceStudy { problem: p, l0, finest, samples } => {
                problem(&mut pairs, p);
                pairs.push(("l0", l0.to_string()));
                pairs.push(("L", finest.to_string()));
                pairs.push(("samples", samples.to_string()));
            }
            Task::CostStudy { problem: p, l0, eps, pilot, budget } => {
                problem(&mut pairs, p);
                pairs.push(("l0", l0.to_string()));
                pairs.push(("eps", join(eps)));
                pairs.push(("pilot", pilot.to_string()));
                if let Some(b) = budget {
                    pairs.push(("budget", b.to_string()));
                }
            }
            Task::CheckAssumptions(sw) => {
                let functional = match sw.functional {
                    Functional::Contraction => "contraction",
                    Functional::Barrier => "barrier",
                };
                pairs.push(("functional", functional.into()));
                match sw.functional {
                    Functional::Contraction => pairs.push(("mu", join(&sw.mus))),
                    Functional::Barrier => {
                        pairs.push(("t", join(&sw.ts)));
                        pairs.push(("A", join(&sw.floors)));
                    }
                }
                pairs.push(("samples", sw.samples.to_string()));
                pairs.push(("starts", sw.starts.to_string()));
                pairs.push(("domain", sw.domain.to_string()));
            }
        }
        pairs
    }
}

thread_local! {
    static EXPR_CONTEXT: RefCell<HashMapContext> = RefCell::new(math_context());
}

fn math_context() -> HashMapContext {
    let mut ctx = HashMapContext::new();
    type Unary = fn(f64) -> f64;
    let unary: [(&str, Unary); 9] = [
        ("sin", f64::sin),
        ("cos", f64::cos),
        ("tan", f64::tan),
        ("exp", f64::exp),
        ("ln", f64::ln),
        ("sqrt", f64::sqrt),
        ("abs", f64::abs),
        ("sinh", f64::sinh),
        ("cosh", f64::cosh),
    ];
    for (name, f) in unary {
        ctx.set_function(
            name.into(),
            Function::new(move |v: &Value| Ok(Value::Float(f(v.as_number()?)))),
        )
        .expect("fresh context accepts functions");
    }
    ctx.set_value("pi".into(), Value::Float(std::f64::consts::PI))
        .expect("fresh context accepts values");
    ctx
}

fn compile_expression(expr: &str) -> Result<Node> {
    let err = |e: evalexpr::EvalexprError| Error::Expression {
        expr: expr.to_string(),
        message: e.to_string(),
    };
    let node = evalexpr::build_operator_tree(expr).map_err(err)?;
    evaluate(&node, 0.25, 0.25).map_err(err)?;
    Ok(node)
}

fn evaluate(node: &Node, x: f64, y: f64) -> evalexpr::EvalexprResult<f64> {
    EXPR_CONTEXT.with(|ctx| {
        let mut ctx = ctx.borrow_mut();
        ctx.set_value("x".into(), Value::Float(x))?;
        ctx.set_value("y".into(), Value::Float(y))?;
        node.eval_number_with_context(&*ctx)
    })
}

/// Compiles an expression in `x`, `y` into a field. Evaluation errors at run
/// time yield NaN, which the samplers report as non-finite output.
pub fn expression_field(expr: &str) -> Result<ScalarField> {
    let node = compile_expression(expr)?;
    if let Ok(c) = expr.trim().parse::<f64>() {
        return Ok(ScalarField::Constant(c));
    }
    Ok(ScalarField::from_fn(move |p| evaluate(&node, p.x, p.y).unwrap_or(f64::NAN)))
}

pub fn build_problem(spec: &ProblemSpec, alpha: f64) -> Result<Problem> {
    match spec {
        ProblemSpec::Named(name) => problems::by_name(name, alpha)
            .unwrap_or_else(|| Err(Error::Config(format!("unknown problem `{name}`")))),
        ProblemSpec::Custom { f, g, exact, domain } => Problem::new(
            "custom",
            alpha,
            domain.clone(),
            expression_field(f)?,
            expression_field(g)?,
            exact.as_deref().map(expression_field).transpose()?,
        ),
    }
}

fn hierarchy(domain: &Domain, finest: usize) -> Result<MeshHierarchy> {
    MeshHierarchy::for_domain(domain, finest)
}

/// What a run produced: files written and summary values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: Vec<(String, String)>,
}

impl Outcome {
    fn note(&mut self, key: &str, value: impl Display) {
        self.summary.push((key.to_string(), value.to_string()));
    }
}

fn create(dir: &Path, name: &str, outcome: &mut Outcome) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path)?;
    outcome.files.push(path);
    Ok(BufWriter::new(file))
}

/// Runs the configured workflow and writes its outputs and manifest.
pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    fs::create_dir_all(&cfg.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let started = Instant::now();
    let mut outcome = pool.install(|| dispatch(cfg))?;
    let elapsed = started.elapsed().as_secs_f64();

    let mut manifest = create(&cfg.out, "manifest.txt", &mut outcome)?;
    writeln!(manifest, "# fracwos {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(manifest, "command={}", cfg.workflow().name())?;
    for (k, v) in cfg.to_pairs() {
        debug_assert!(!RUNTIME_KEYS.contains(&k));
        writeln!(manifest, "{k}={v}")?;
    }
    for (k, v) in &outcome.summary {
        writeln!(manifest, "# {k}={v}")?;
    }
    writeln!(manifest, "# wall_clock_seconds={elapsed:.3}")?;
    manifest.flush()?;
    Ok(outcome)
}

fn dispatch(cfg: &RunConfig) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let alpha = cfg.alpha.first().copied().unwrap_or(f64::NAN);
    match &cfg.task {
        Task::Solve { problem, l0, finest, eps, selection, pilot, budget } => {
            let problem = build_problem(problem, alpha)?;
            let hier = hierarchy(&problem.domain, *finest)?;
            let run_cfg = MlmcConfig {
                pilot_samples: *pilot,
                budget: *budget,
                selection: *selection,
                ..MlmcConfig::new(*eps, *l0, *finest, cfg.seed)
            };
            let result = mlmc::run(&hier, &problem, &run_cfg)?;
            let mesh = hier.level(result.solution.level)?;
            let mut out = create(&cfg.out, "solution.csv", &mut outcome)?;
            mesh.write_csv(
                &mut out,
                &result.solution,
                &[("alpha", alpha.to_string()), ("eps", eps.to_string())],
            )?;
            out.flush()?;
            outcome.note("finest_level", result.plan.finest);
            outcome.note("total_cost", result.total_cost);
            outcome.note("statistical_error", result.statistical_error);
            for t in &result.plan.terms {
                let name = match t.term {
                    LevelTerm::Plain(l) => format!("samples_plain_{l}"),
                    LevelTerm::Transition(l) => format!("samples_transition_{l}"),
                };
                outcome.note(&name, t.used);
            }
            if let Some(exact) = &problem.exact {
                let err = mlmc::error_vs_exact(&result.solution, exact, mesh)?;
                outcome.note("l2_error", err.abs);
                if let Some(rel) = err.rel {
                    outcome.note("relative_l2_error", rel);
                }
            }
        }
        Task::Eig { domain, l0, finest, tol, safety, m, policy } => {
            let hier = Arc::new(hierarchy(domain, *finest)?);
            let mut op = WosInverse::new(hier, alpha, *l0, cfg.seed)?;
            let result = eigen::smallest_eigenvalue(&mut op, *tol, *safety, *m, *policy)?;
            let mut out = create(&cfg.out, "iters.csv", &mut outcome)?;
            eigen::write_iterations(&mut out, &result.records)?;
            out.flush()?;
            outcome.note("lambda", result.lambda);
            outcome.note("residual", result.residual);
            outcome.note("iterations", result.iterations);
            outcome.note("converged", result.converged);
            outcome.note("total_cost", result.total_cost);
        }
        Task::VarianceStudy { problem, l0, finest, samples } => {
            let problem = build_problem(problem, alpha)?;
            let hier = hierarchy(&problem.domain, *finest)?;
            let (rows, slope) = mlmc::variance_study(&hier, &problem, *l0, *finest, *samples, cfg.seed)?;
            let mut out = create(&cfg.out, "study.csv", &mut outcome)?;
            writeln!(out, "coarse_level,mesh_width,variance,mean_cost,samples")?;
            for r in &rows {
                writeln!(out, "{},{},{},{},{}", r.coarse_level, r.mesh_width, r.variance, r.mean_cost, r.samples)?;
            }
            out.flush()?;
            if let Some(s) = slope {
                outcome.note("slope", s);
            }
        }
        Task::CostStudy { problem, l0, eps, pilot, budget } => {
            let problem = build_problem(problem, alpha)?;
            let finest = eps.iter().map(|&e| mlmc::schedule_level(e)).max().unwrap_or(*l0).max(*l0);
            let hier = hierarchy(&problem.domain, finest)?;
            let rows = mlmc::cost_comparison(&hier, &problem, eps, *l0, *pilot, cfg.seed, *budget)?;
            let mut out = create(&cfg.out, "study.csv", &mut outcome)?;
            writeln!(out, "eps,finest,mlmc_cost,vanilla_cost,ratio,mlmc_error,vanilla_error")?;
            for r in &rows {
                let ratio = r.mlmc_cost as f64 / r.vanilla_cost as f64;
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.eps, r.finest, r.mlmc_cost, r.vanilla_cost, ratio, r.mlmc_error, r.vanilla_error
                )?;
            }
            out.flush()?;
            if let Some(last) = rows.last() {
                outcome.note("final_ratio", last.mlmc_cost as f64 / last.vanilla_cost as f64);
            }
        }
        Task::CheckAssumptions(sw) => {
            let template = AssumptionConfig {
                samples: sw.samples,
                starts: sw.starts,
                domain: sw.domain.clone(),
                seed: cfg.seed,
                ..AssumptionConfig::new(alpha)
            };
            let mut grid = sw.grid();
            if sw.functional == Functional::Contraction {
                // the floor is unused; keep the column finite
                for p in &mut grid {
                    p.a = template.a;
                }
            }
            let rows = assumptions::sweep(sw.functional, &grid, &template)?;
            let mut out = create(&cfg.out, "study.csv", &mut outcome)?;
            assumptions::write_sweep(&mut out, &rows)?;
            out.flush()?;
            if let Some(worst) = rows.iter().map(|r| r.max).reduce(f64::max) {
                outcome.note("max_I", worst);
            }
        }
    }
    Ok(outcome)
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    // let clap print help and version itself
    if let Err(e) = clap_command().try_get_matches_from(&args) {
        if !e.use_stderr() {
            let _ = e.print();
            return 0;
        }
    }
    let result = Settings::from_args(&args)
        .and_then(|s| RunConfig::from_settings(&s))
        .and_then(|cfg| execute(&cfg));
    match result {
        Ok(outcome) => {
            for (k, v) in &outcome.summary {
                println!("{k}={v}");
            }
            0
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("fracwos: error: {}", msg.lines().next().unwrap_or_default());
            2
        }
    }
}
