//! Scripted runs that wire the library together: kernel traces and
//! spectra at initialization, convergence sweeps, training dynamics,
//! gate comparisons, conv invariance and the oracle/theory check suites.
//!
//! Every run is described by an [`ExperimentSpec`] built from [`Settings`],
//! produces [`Artifacts`], and [`write_artifacts`] persists them together
//! with a re-runnable `manifest.cfg`.

mod checks;
mod conv;
mod dynamics;
mod sweeps;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::config::Settings;
use crate::data::{self, Dataset};
use crate::linalg::{Matrix, Prng};
use crate::network::{self, GatingVariant, NetConfig, Network};
use crate::report::{self, Cell, Plot, Table};
use crate::train::{self, NuKernel, Optimizer, OptimizerKind};
use crate::Error;

pub use checks::{oracle_checks, oracle_rows, soft_galu_kernel_checks, theory_checks, OracleGrid, OracleRow};
pub use conv::run_conv_invariance;
pub use dynamics::{run_dln_dynamics, run_gate_comparison, run_nu_track};
pub use sweeps::{run_convergence_sweep, run_ecdf_sweep, run_gram_trace};

/// Stream ids for [`Prng::derive`]; each run seed fans out into these.
pub(crate) const STREAM_NET: u64 = 1;
pub(crate) const STREAM_SOURCE: u64 = 2;
pub(crate) const STREAM_TRANSPLANT: u64 = 3;
pub(crate) const STREAM_RANDOM_GATES: u64 = 4;
pub(crate) const STREAM_INPUTS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Spectrum,
    Train,
    GramTrace,
    TheoryCheck,
    OracleCheck,
    NuTrack,
    GateCompare,
    Dln,
    ConvInvariance,
    Info,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::Spectrum,
        Command::Train,
        Command::GramTrace,
        Command::TheoryCheck,
        Command::OracleCheck,
        Command::NuTrack,
        Command::GateCompare,
        Command::Dln,
        Command::ConvInvariance,
        Command::Info,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Train => "train",
            Command::GramTrace => "gram-trace",
            Command::TheoryCheck => "theory-check",
            Command::OracleCheck => "oracle-check",
            Command::NuTrack => "nu-track",
            Command::GateCompare => "gate-compare",
            Command::Dln => "dln",
            Command::ConvInvariance => "conv-invariance",
            Command::Info => "info",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Command::Spectrum => "eigenvalue ECDF of K0 per depth and width against the ideal FRG curve",
            Command::Train => "train per depth/width/seed and record residual ratios",
            Command::GramTrace => "Monte Carlo K0 entries per depth against the closed form",
            Command::TheoryCheck => "closed-form predictions against Monte Carlo estimates",
            Command::OracleCheck => "layerwise computations against brute-force path sums",
            Command::NuTrack => "track nu = y' H^-1 y during training",
            Command::GateCompare => "adaptive vs frozen gates and learned vs random transplanted gates",
            Command::Dln => "deep linear network: K0 per depth and error dynamics",
            Command::ConvInvariance => "circular-conv output products under input rotation",
            Command::Info => "list commands, keys and defaults",
        }
    }

    /// Settings a run starts from before the config file and overrides.
    pub fn defaults(self) -> Settings {
        let mut s = Settings::new();
        let common = [
            ("net.variant", "frg"),
            ("net.d", "4"),
            ("net.w", "100"),
            ("net.sigma", "auto"),
            ("net.beta", "4"),
            ("net.epsilon", "0"),
            ("net.mu", "0.5"),
            ("data.kind", "experiment1"),
            ("data.n", "50"),
            ("data.d_in", "10"),
            ("data.seed", "0"),
            ("data.class_a", "4"),
            ("data.class_b", "7"),
            ("data.limit", "100"),
            ("data.test_fraction", "0.5"),
            ("opt.kind", "sgd"),
            ("opt.alpha", "auto"),
            ("opt.alpha_factor", "0.1"),
            ("opt.decay", "0.9"),
            ("opt.eps", "1e-8"),
            ("train.steps", "100"),
            ("train.snapshot_every", "0"),
            ("train.batch", "0"),
            ("nu.kernel", "feature"),
            ("run.seeds", "0..5"),
            ("run.format", "csv"),
        ];
        let specific: &[(&str, &str)] = match self {
            Command::Spectrum => &[("sweep.depths", "2,4,8"), ("sweep.widths", "25,500"), ("run.seeds", "0..20")],
            Command::Train => &[("sweep.depths", "2,4,8")],
            Command::GramTrace => &[("net.w", "500"), ("sweep.depths", "2,4,6,8"), ("run.seeds", "0..20")],
            Command::TheoryCheck => &[("run.seeds", "0..500")],
            Command::OracleCheck => &[("oracle.grid", "tiny"), ("run.seeds", "0")],
            Command::NuTrack => &[
                ("net.variant", "soft-galu"),
                ("net.w", "50"),
                ("data.kind", "gaussians"),
                ("data.n", "200"),
                ("opt.kind", "rmsprop"),
                ("opt.alpha", "1e-3"),
                ("train.steps", "200"),
                ("train.snapshot_every", "20"),
                ("run.seeds", "0"),
            ],
            Command::GateCompare => &[
                ("net.w", "50"),
                ("data.kind", "gaussians"),
                ("data.n", "200"),
                ("opt.kind", "rmsprop"),
                ("opt.alpha", "1e-3"),
                ("train.steps", "200"),
                ("train.snapshot_every", "20"),
                ("run.seeds", "0..3"),
            ],
            Command::Dln => &[
                ("net.variant", "dln"),
                ("sweep.depths", "2,4,6,8,10"),
                ("train.steps", "30"),
            ],
            Command::ConvInvariance => &[
                ("conv.d_in", "3"),
                ("conv.kernel", "2"),
                ("conv.layers", "2"),
                ("conv.sigma", "1"),
                ("conv.gating", "galu"),
                ("conv.mu", "0.5"),
                ("conv.draws", "500"),
                ("run.seeds", "0"),
            ],
            Command::Info => &[],
        };
        for (k, v) in common.iter().chain(specific) {
            s.set(k, *v).expect("default keys are valid");
        }
        s
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command `{s}`"))
    }
}

impl std::fmt::Display for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    CsvSvg,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "csv+svg" => Ok(OutputFormat::CsvSvg),
            other => Err(format!("unknown format `{other}` (csv | csv+svg)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataKind {
    Experiment1,
    Experiment2,
    Gaussians,
    Csv(PathBuf),
    Mnist { images: PathBuf, labels: PathBuf, class_a: u8, class_b: u8, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSeed {
    Fixed(u64),
    /// Use the run seed, so every run sees different data.
    Run,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub kind: DataKind,
    pub n: usize,
    pub d_in: usize,
    pub seed: DataSeed,
    pub test_fraction: f64,
}

impl DataSpec {
    pub fn seed_for(&self, run_seed: u64) -> u64 {
        match self.seed {
            DataSeed::Fixed(s) => s,
            DataSeed::Run => run_seed,
        }
    }

    pub fn load(&self, run_seed: u64) -> Result<Dataset, Error> {
        let seed = self.seed_for(run_seed);
        Ok(match &self.kind {
            DataKind::Experiment1 => data::gen_experiment1(self.n, seed)?,
            DataKind::Experiment2 => data::gen_experiment2(self.n, seed)?,
            DataKind::Gaussians => data::gen_two_gaussians(self.n, self.d_in, seed)?,
            DataKind::Csv(path) => data::load_csv(path, self.d_in)?,
            DataKind::Mnist { images, labels, class_a, class_b, limit } => {
                data::load_idx_binary_mnist(images, labels, *class_a, *class_b, *limit)?
            }
        })
    }
}

/// Network settings minus the input dimension, depth and width, which come
/// from the data and the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct NetTemplate {
    pub variant: GatingVariant,
    pub depth: usize,
    pub width: usize,
    /// `None` picks the variant default for each width.
    pub sigma: Option<f64>,
    pub beta: f64,
    pub epsilon: f64,
    pub mu: f64,
    pub train_gating: Option<bool>,
}

impl NetTemplate {
    pub fn config(&self, variant: GatingVariant, d_in: usize, width: usize, depth: usize) -> NetConfig {
        let mut c = NetConfig::new(variant, d_in, width, depth)
            .with_mu(self.mu)
            .with_soft(self.beta, self.epsilon);
        if let Some(sigma) = self.sigma {
            c = c.with_sigma(sigma);
        }
        if let Some(g) = self.train_gating {
            c.train_gating = g && variant == GatingVariant::SoftGalu;
        }
        c
    }

    /// Builds and initializes a net for `data`, registering the inputs when
    /// the gates are fixed random draws.
    pub fn build(&self, d_in: usize, width: usize, depth: usize, xs: &[Vec<f64>], seed: u64) -> Result<Network, Error> {
        let config = self.config(self.variant, d_in, width, depth);
        init_network(config, xs, seed)
    }
}

pub(crate) fn init_network(config: NetConfig, xs: &[Vec<f64>], seed: u64) -> Result<Network, Error> {
    let mut rng = Prng::derive(seed, STREAM_NET);
    let mut net = Network::init(config, &mut rng)?;
    if net.config().variant == GatingVariant::Frg {
        net.register_inputs(xs, &mut rng)?;
    }
    Ok(net)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptSpec {
    pub kind: OptimizerKind,
    /// `None` is `alpha_factor / ρ_max(K₀)`.
    pub alpha: Option<f64>,
    pub alpha_factor: f64,
    pub decay: f64,
    pub stabilizer: f64,
}

impl OptSpec {
    /// The optimizer for one run. For SGD, α is the effective step of
    /// `e ← e − αKe`.
    pub fn resolve(&self, k0: impl FnOnce() -> Result<Matrix, Error>) -> Result<Optimizer, Error> {
        let alpha = match self.alpha {
            Some(a) => a,
            None => train::step_from_spectrum(&k0()?, self.alpha_factor)?,
        };
        Ok(self.with_alpha(alpha))
    }

    pub fn with_alpha(&self, alpha: f64) -> Optimizer {
        match self.kind {
            OptimizerKind::Sgd => Optimizer::sgd_effective(alpha),
            OptimizerKind::RmsProp => {
                let mut o = Optimizer::rmsprop(alpha);
                o.decay = self.decay;
                o.stabilizer = self.stabilizer;
                o
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub d_in: usize,
    pub kernel: usize,
    pub layers: usize,
    pub sigma: f64,
    pub gating: String,
    pub mu: f64,
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub command: Command,
    pub net: NetTemplate,
    pub data: DataSpec,
    pub opt: OptSpec,
    pub seeds: Vec<u64>,
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub steps: usize,
    pub snapshot_every: Option<usize>,
    pub batch: Option<usize>,
    pub nu_kernel: NuKernel,
    pub conv: ConvSpec,
    pub grid: OracleGrid,
    pub format: OutputFormat,
    pub out_dir: PathBuf,
    /// The resolved settings, written back out as the manifest.
    pub settings: Settings,
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> Error {
    Error::Config(crate::config::ConfigError::BadValue { key: key.into(), value: value.into(), why: why.to_string() })
}

fn parse_key<T: FromStr>(s: &Settings, key: &str) -> Result<T, Error>
where
    T::Err: std::fmt::Display,
{
    let v = s.str(key)?;
    v.parse().map_err(|e| bad(key, v, e))
}

fn optional_count(s: &Settings, key: &str) -> Result<Option<usize>, Error> {
    Ok(Some(s.usize(key)?).filter(|&v| v > 0))
}

impl ExperimentSpec {
    /// `overrides` are applied on top of the command defaults.
    pub fn from_settings(command: Command, overrides: &Settings, out_dir: impl Into<PathBuf>) -> Result<Self, Error> {
        let mut s = command.defaults();
        s.merge(overrides);
        let variant: GatingVariant = parse_key(&s, "net.variant")?;
        let depth = s.usize("net.d")?;
        let width = s.usize("net.w")?;
        let train_gating = match s.get("net.train_gating") {
            Some(_) => Some(s.bool("net.train_gating")?),
            None => None,
        };
        let net = NetTemplate {
            variant,
            depth,
            width,
            sigma: s.f64_or_auto("net.sigma")?,
            beta: s.f64("net.beta")?,
            epsilon: s.f64("net.epsilon")?,
            mu: s.f64("net.mu")?,
            train_gating,
        };
        let kind = match s.str("data.kind")? {
            "experiment1" => DataKind::Experiment1,
            "experiment2" => DataKind::Experiment2,
            "gaussians" => DataKind::Gaussians,
            "csv" => DataKind::Csv(s.str("data.path")?.into()),
            "mnist" => DataKind::Mnist {
                images: s.str("data.images")?.into(),
                labels: s.str("data.labels")?.into(),
                class_a: parse_key(&s, "data.class_a")?,
                class_b: parse_key(&s, "data.class_b")?,
                limit: s.usize("data.limit")?,
            },
            other => return Err(bad("data.kind", other, "expected experiment1 | experiment2 | gaussians | csv | mnist")),
        };
        let d_in = match kind {
            DataKind::Experiment1 => 1,
            DataKind::Experiment2 => 2,
            DataKind::Mnist { .. } => 784,
            _ => s.usize("data.d_in")?,
        };
        let seed = match s.str("data.seed")? {
            "run" => DataSeed::Run,
            v => DataSeed::Fixed(v.parse().map_err(|e| bad("data.seed", v, e))?),
        };
        let data = DataSpec { kind, n: s.usize("data.n")?, d_in, seed, test_fraction: s.f64("data.test_fraction")? };
        let opt_kind = match s.str("opt.kind")? {
            "sgd" => OptimizerKind::Sgd,
            "rmsprop" => OptimizerKind::RmsProp,
            other => return Err(bad("opt.kind", other, "expected sgd | rmsprop")),
        };
        let opt = OptSpec {
            kind: opt_kind,
            alpha: s.f64_or_auto("opt.alpha")?,
            alpha_factor: s.f64("opt.alpha_factor")?,
            decay: s.f64("opt.decay")?,
            stabilizer: s.f64("opt.eps")?,
        };
        let depths = match s.get("sweep.depths") {
            Some(_) => s.usize_list("sweep.depths")?,
            None => vec![depth],
        };
        let widths = match s.get("sweep.widths") {
            Some(_) => s.usize_list("sweep.widths")?,
            None => vec![width],
        };
        let conv = ConvSpec {
            d_in: s.usize("conv.d_in").unwrap_or(3),
            kernel: s.usize("conv.kernel").unwrap_or(2),
            layers: s.usize("conv.layers").unwrap_or(2),
            sigma: s.f64("conv.sigma").unwrap_or(1.0),
            gating: s.get("conv.gating").unwrap_or("ones").to_string(),
            mu: s.f64("conv.mu").unwrap_or(0.5),
            draws: s.usize("conv.draws").unwrap_or(500),
        };
        let grid = match s.get("oracle.grid").unwrap_or("tiny") {
            "tiny" => OracleGrid::Tiny,
            "quick" => OracleGrid::Quick,
            other => return Err(bad("oracle.grid", other, "expected tiny | quick")),
        };
        let spec = ExperimentSpec {
            command,
            net,
            data,
            opt,
            seeds: s.seeds()?,
            depths,
            widths,
            steps: s.usize("train.steps")?,
            snapshot_every: optional_count(&s, "train.snapshot_every")?,
            batch: optional_count(&s, "train.batch")?,
            nu_kernel: parse_key(&s, "nu.kernel")?,
            conv,
            grid,
            format: parse_key(&s, "run.format")?,
            out_dir: out_dir.into(),
            settings: s,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), Error> {
        if self.depths.iter().any(|&d| d < 2) {
            return Err(Error::Usage("every depth must be at least 2".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Usage("every width must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn train_settings(&self) -> train::TrainSettings {
        train::TrainSettings {
            steps: self.steps,
            snapshot_every: self.snapshot_every,
            nu_kernel: self.nu_kernel,
            batch_size: self.batch,
            ..Default::default()
        }
    }
}

/// Whether a check gates the exit status or is only reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Assert,
    Report,
}

/// One measured quantity compared with its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub kind: CheckKind,
}

impl Check {
    /// Passes when `|measured - reference| <= tolerance`.
    pub fn near(name: impl Into<String>, measured: f64, reference: f64, tolerance: f64) -> Self {
        let pass = (measured - reference).abs() <= tolerance;
        Self { name: name.into(), measured, reference, tolerance, pass, kind: CheckKind::Assert }
    }

    /// Passes when `measured <= bound`; `reference` is the bound.
    pub fn at_most(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self { name: name.into(), measured, reference: bound, tolerance: 0.0, pass: measured <= bound, kind: CheckKind::Assert }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        let v = if ok { 1.0 } else { 0.0 };
        Self { name: name.into(), measured: v, reference: 1.0, tolerance: 0.0, pass: ok, kind: CheckKind::Assert }
    }

    pub fn report_only(mut self) -> Self {
        self.kind = CheckKind::Report;
        self
    }

    pub fn failed(&self) -> bool {
        self.kind == CheckKind::Assert && !self.pass
    }
}

pub fn checks_table(checks: &[Check]) -> Table {
    let mut t = Table::new(&["name", "measured", "reference", "tolerance", "pass", "kind"]);
    let num = |v: f64| if v.is_finite() { Cell::Num(v) } else { Cell::Text(format!("{v}")) };
    for c in checks {
        t.push(vec![
            c.name.clone().into(),
            num(c.measured),
            num(c.reference),
            num(c.tolerance),
            c.pass.into(),
            match c.kind {
                CheckKind::Assert => "assert",
                CheckKind::Report => "report",
            }
            .into(),
        ]);
    }
    t
}

/// Everything a run produced, keyed by relative output path.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub tables: Vec<(String, Table)>,
    pub plots: Vec<(String, Plot)>,
    pub nets: Vec<(String, Network)>,
    pub checks: Vec<Check>,
    /// Human-readable lines for the console.
    pub summary: Vec<String>,
}

impl Artifacts {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn all_passed(&self) -> bool {
        !self.checks.iter().any(Check::failed)
    }
}

pub fn run(spec: &ExperimentSpec) -> Result<Artifacts, Error> {
    match spec.command {
        Command::Spectrum => run_ecdf_sweep(spec),
        Command::Train => run_convergence_sweep(spec),
        Command::GramTrace => run_gram_trace(spec),
        Command::TheoryCheck => theory_checks(spec),
        Command::OracleCheck => oracle_checks(spec),
        Command::NuTrack => run_nu_track(spec),
        Command::GateCompare => run_gate_comparison(spec),
        Command::Dln => run_dln_dynamics(spec),
        Command::ConvInvariance => run_conv_invariance(spec),
        Command::Info => Ok(Artifacts { summary: info_lines(), ..Default::default() }),
    }
}

fn info_lines() -> Vec<String> {
    let mut out = vec![format!("gatelab {}", env!("CARGO_PKG_VERSION")), String::new(), "commands:".into()];
    for c in Command::ALL {
        out.push(format!("  {:<16} {}", c.name(), c.about()));
    }
    out.push(String::new());
    out.push("variants:".into());
    for v in GatingVariant::ALL {
        out.push(format!("  {}", v.name()));
    }
    out.push(String::new());
    out.push("config keys:".into());
    for (k, about) in crate::config::KEYS {
        out.push(format!("  {k:<22} {about}"));
    }
    out.push(String::new());
    out.push(format!(
        "weight files: magic {}, format version {}",
        String::from_utf8_lossy(network::MAGIC),
        network::FORMAT_VERSION
    ));
    out
}

fn io_error(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
    let context = context.into();
    move |source| Error::Io { context, source }
}

/// Writes tables, plots (for `csv+svg`), nets, a `checks.csv` when there
/// are checks, and `manifest.cfg`. Returns the written paths.
pub fn write_artifacts(spec: &ExperimentSpec, artifacts: &Artifacts) -> Result<Vec<PathBuf>, Error> {
    let dir = &spec.out_dir;
    std::fs::create_dir_all(dir).map_err(io_error(format!("creating {}", dir.display())))?;
    let mut written: Vec<(String, PathBuf)> = Vec::new();
    let mut tables: Vec<(&str, &Table)> = artifacts.tables.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let checks = checks_table(&artifacts.checks);
    if !artifacts.checks.is_empty() {
        tables.push(("checks.csv", &checks));
    }
    for (name, table) in tables {
        let path = dir.join(name);
        table.write_csv(&path)?;
        written.push((name.to_string(), path));
    }
    if spec.format == OutputFormat::CsvSvg {
        for (name, plot) in &artifacts.plots {
            let path = dir.join(name);
            report::write_svg(plot, &path)?;
            written.push((name.clone(), path));
        }
    }
    for (name, net) in &artifacts.nets {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_error(format!("creating {}", parent.display())))?;
        }
        network::save_net(&path, net)?;
        written.push((name.clone(), path));
    }
    let manifest = manifest_text(spec, &written)?;
    let path = dir.join("manifest.cfg");
    std::fs::write(&path, manifest).map_err(io_error(format!("writing {}", path.display())))?;
    let mut paths: Vec<PathBuf> = written.into_iter().map(|(_, p)| p).collect();
    paths.push(path);
    Ok(paths)
}

fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path).map_err(io_error(format!("reading {}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Comment header (command, time, source revision, output hashes) followed
/// by every resolved setting, so the file works as `--config` for a re-run.
fn manifest_text(spec: &ExperimentSpec, written: &[(String, PathBuf)]) -> Result<String, Error> {
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut out = String::new();
    writeln!(out, "# gatelab {} manifest", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(out, "# command: {}", spec.command).unwrap();
    writeln!(out, "# created: {created}").unwrap();
    writeln!(out, "# source: {}", git_describe()).unwrap();
    writeln!(out, "# rerun: gatelab {} --config manifest.cfg --out <dir>", spec.command).unwrap();
    for (name, path) in written {
        writeln!(out, "# sha256 {name} {}", sha256_file(path)?).unwrap();
    }
    out.push_str(&spec.settings.to_cfg());
    Ok(out)
}

/// Mean of equally long series, entry by entry.
pub(crate) fn mean_series(series: &[Vec<f64>]) -> Vec<f64> {
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| series.iter().map(|s| s[i]).sum::<f64>() / series.len() as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commands_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
            ExperimentSpec::from_settings(c, &Settings::new(), "out").unwrap();
        }
        assert!("bogus".parse::<Command>().is_err());
    }

    #[test]
    fn overrides_win_over_defaults() {
        let mut s = Settings::new();
        s.set("d", "8").unwrap();
        s.set("depths", "3,5").unwrap();
        let spec = ExperimentSpec::from_settings(Command::Train, &s, "out").unwrap();
        assert_eq!(spec.net.depth, 8);
        assert_eq!(spec.depths, vec![3, 5]);
        assert_eq!(spec.settings.get("net.d"), Some("8"));
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let mut s = Settings::new();
        s.set("net.variant", "tanh").unwrap();
        let err = ExperimentSpec::from_settings(Command::Train, &s, "out").unwrap_err();
        assert!(err.is_usage());
        let mut s = Settings::new();
        s.set("depths", "1,2").unwrap();
        assert!(ExperimentSpec::from_settings(Command::Train, &s, "out").unwrap_err().is_usage());
    }

    #[test]
    fn check_constructors() {
        assert!(Check::near("a", 1.0, 1.05, 0.1).pass);
        assert!(!Check::near("a", 1.0, 1.2, 0.1).pass);
        assert!(Check::at_most("b", 2.0, 2.0).pass);
        let r = Check::flag("c", false).report_only();
        assert!(!r.pass && !r.failed());
    }

    #[test]
    fn mean_series_averages_entrywise() {
        assert_eq!(mean_series(&[vec![1.0, 2.0], vec![3.0, 4.0]]), vec![2.0, 3.0]);
    }
}
