//! Command-line front end: TOML run configurations, the five commands and
//! their output files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clusters::{ClusterDecomposition, ClusterReport, ProxyRule};
use crate::coloring::ColorParams;
use crate::error::Error;
use crate::exact::{self, Event, MAX_EXACT_EDGES};
use crate::fk::{self, Algorithm, Chain, ChainSchedule, DumpHeader, EdgeConfig, FkParams, Start};
use crate::harness::{self, ExperimentPlan, ExperimentSummary, Statistic};
use crate::lattice::{build_box, BoundaryMode, BoxGeometry, Window};
use crate::report::{self, histogram_svg, num, scalar_table, Provenance, Table};
use crate::rng::{Pass, StreamKey};
use crate::unionfind::UnionFind;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CAP: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) => match e {
                Error::InvalidParameter { .. }
                | Error::UnsupportedDimension { .. }
                | Error::UnsupportedRegime(_)
                | Error::UnsupportedAlgorithm(_)
                | Error::InvalidWindow(_) => EXIT_CONFIG,
                Error::ResourceCap(_) | Error::TooManyEdges { .. } => EXIT_CAP,
                _ => EXIT_OTHER,
            },
            CliError::Io(_) => EXIT_OTHER,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "rcmlab", version, about = "Random-cluster and Potts coloring Monte Carlo lab")]
pub struct Cli {
    /// Print the configuration schema and exit.
    #[arg(long)]
    pub describe: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an FK chain, dump configurations and tabulate cluster statistics.
    Sample(RunArgs),
    /// Enumerate a small box exactly; FKG and duality reports.
    Exact(RunArgs),
    /// Replicated CLT experiment for the configured statistic.
    Clt(RunArgs),
    /// Colored-cluster experiment: empirical vectors and covariances.
    Color(RunArgs),
    /// Boundary-connection probabilities and their exponential decay.
    Decay(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads; does not change any output.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(i64),
    Many(Vec<i64>),
}

impl OneOrMany {
    fn to_vec(&self) -> Vec<i64> {
        match self {
            OneOrMany::One(t) => vec![*t],
            OneOrMany::Many(ts) => ts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    #[serde(default = "default_d")]
    pub d: usize,
    /// Box radius or increasing list of radii.
    pub t: Option<OneOrMany>,
    /// Explicit side lengths, for `sample` and `exact` only.
    pub sides: Option<Vec<usize>>,
    pub mode: BoundaryMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub p: Option<f64>,
    pub beta: Option<f64>,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_chains")]
    pub chains: usize,
    pub burnin: Option<usize>,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default)]
    pub start: Start,
    /// Kept sweeps for `sample`; the replicate count when unset.
    pub samples: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            algorithm: default_algorithm(),
            chains: default_chains(),
            burnin: None,
            thin: 1,
            start: Start::Open,
            samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColoringConfig {
    /// Number of colors for a uniform ν.
    pub colors: Option<usize>,
    pub nu: Option<Vec<f64>>,
    /// Ground color, 1-based.
    #[serde(default = "one")]
    pub ground: usize,
    /// Mixing law of the ground color.
    pub gamma: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub statistic: Option<Statistic>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    pub calibration_samples: Option<usize>,
    pub margin: Option<usize>,
    pub cutoff: Option<usize>,
    pub proxy: Option<ProxyRule>,
    #[serde(default = "default_max_vertices")]
    pub max_vertices: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            statistic: None,
            replicates: default_replicates(),
            repetitions: default_repetitions(),
            calibration_samples: None,
            margin: None,
            cutoff: None,
            proxy: None,
            max_vertices: default_max_vertices(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    #[serde(default = "default_n_min")]
    pub n_min: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            n_min: default_n_min(),
            n_max: default_n_max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactConfig {
    #[serde(default = "yes")]
    pub fkg: bool,
    #[serde(default)]
    pub duality: bool,
    /// Write the full probability table.
    #[serde(default)]
    pub table: bool,
}

impl Default for ExactConfig {
    fn default() -> Self {
        Self {
            fkg: true,
            duality: false,
            table: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatConfig {
    #[serde(default = "yes")]
    pub csv: bool,
    #[serde(default = "yes")]
    pub json: bool,
    #[serde(default = "yes")]
    pub svg: bool,
    /// Raw configuration dumps from `sample`.
    #[serde(default)]
    pub dumps: bool,
}

impl Default for FormatConfig {
    fn default() -> Self {
        Self {
            csv: true,
            json: true,
            svg: true,
            dumps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub verbosity: u8,
    pub lattice: LatticeConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub coloring: Option<ColoringConfig>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub decay: DecayConfig,
    #[serde(default)]
    pub exact: ExactConfig,
    #[serde(default)]
    pub formats: FormatConfig,
}

fn default_d() -> usize {
    2
}
fn default_algorithm() -> Algorithm {
    Algorithm::SwendsenWang
}
fn default_chains() -> usize {
    8
}
fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_replicates() -> usize {
    100
}
fn default_repetitions() -> usize {
    3
}
fn default_max_vertices() -> usize {
    1 << 22
}
fn default_n_min() -> usize {
    4
}
fn default_n_max() -> usize {
    20
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

pub const CONFIG_SCHEMA: &str = r#"# rcmlab run configuration (TOML). Unknown keys are rejected.
seed = 0                      # master seed (u64)
output = "out"                # output directory
verbosity = 0                 # 0 quiet, 1 progress on stderr

[lattice]
d = 2                         # dimension >= 2
t = [16, 32]                  # box radius or increasing radii; side = 2t + 1
# sides = [2, 2]              # explicit sides (sample, exact only)
mode = "wired"                # free | wired | periodic

[model]
p = 0.8                       # edge parameter in [0, 1]; or give beta instead
# beta = 0.8                  # p = 1 - exp(-2 beta)
q = 2.0                       # cluster weight > 0

[sampler]
algorithm = "swendsen-wang"   # swendsen-wang (integer q) | sweeny (q >= 1)
chains = 8                    # independent chains per pass
# burnin = 100                # default: 100 (sweeny), 10 * side (swendsen-wang)
thin = 1                      # sweeps between kept samples
start = "open"                # open | closed
# samples = 1000              # kept sweeps for `sample`

[coloring]                    # required by color statistics
colors = 2                    # uniform nu over this many colors; or nu = [..]
# nu = [0.5, 0.5]
ground = 1                    # ground color of the infinite cluster, 1-based
# gamma = [0.5, 0.5]          # mixing law of the ground color

[experiment]
statistic = "infinite-density"  # infinite-density | empirical-vector-fixed-r |
                                # empirical-vector-selfnorm | mixture |
                                # magnetization-ising | decay | conditions-mc
replicates = 100              # N per box size and repetition
repetitions = 3
# calibration_samples = 100   # default: replicates
# margin = 8                  # window margin; default t/4
# cutoff = 4                  # sigma^2 series cutoff; default min(t/8, margin)
# proxy = "boundary"          # boundary | largest | winding | none
max_vertices = 4194304

[decay]
n_min = 4
n_max = 20

[exact]
fkg = true
duality = false
table = false                 # write every configuration probability

[formats]
csv = true
json = true
svg = true
dumps = false                 # raw configuration dumps from `sample`
"#;

impl RunConfig {
    pub fn from_toml(s: &str) -> CliResult<Self> {
        toml::from_str(s).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let s = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&s)
    }

    /// sha256 of the canonical JSON form, ignoring where output goes and
    /// how chatty the run is.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("output");
            m.remove("verbosity");
            m.remove("formats");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn fk_params(&self) -> CliResult<FkParams> {
        let m = &self.model;
        match (m.p, m.beta) {
            (Some(p), None) => Ok(FkParams::new(p, m.q)?),
            (None, Some(b)) => Ok(FkParams::from_beta(b, m.q)?),
            _ => Err(config_err("model: give exactly one of p and beta")),
        }
    }

    pub fn radii(&self) -> CliResult<Vec<i64>> {
        self.lattice
            .t
            .as_ref()
            .map(OneOrMany::to_vec)
            .ok_or_else(|| config_err("lattice.t: missing"))
    }

    /// Geometries for `sample` and `exact`: either the explicit sides or one
    /// box per radius.
    pub fn geometries(&self) -> CliResult<Vec<(String, BoxGeometry)>> {
        let l = &self.lattice;
        match (&l.sides, &l.t) {
            (Some(_), Some(_)) => Err(config_err("lattice: give t or sides, not both")),
            (Some(s), None) => {
                if s.len() != l.d {
                    return Err(config_err(format!("lattice.sides: expected {} entries", l.d)));
                }
                let label = s.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("x");
                Ok(vec![(label, BoxGeometry::rectangle(s, l.mode)?)])
            }
            (None, Some(_)) => self
                .radii()?
                .into_iter()
                .map(|t| Ok((format!("t{t}"), build_box(l.d, t, l.mode)?)))
                .collect(),
            (None, None) => Err(config_err("lattice: missing t")),
        }
    }

    pub fn color_params(&self) -> CliResult<Option<ColorParams>> {
        let Some(c) = &self.coloring else {
            return Ok(None);
        };
        if c.ground == 0 {
            return Err(config_err("coloring.ground: colors are numbered from 1"));
        }
        let cp = match (&c.nu, c.colors) {
            (Some(nu), None) => ColorParams::new(nu.clone(), c.ground - 1)?,
            (None, Some(k)) => ColorParams::uniform(k, c.ground - 1)?,
            (Some(nu), Some(k)) if nu.len() == k => ColorParams::new(nu.clone(), c.ground - 1)?,
            _ => return Err(config_err("coloring: give colors or a matching nu")),
        };
        Ok(Some(match &c.gamma {
            Some(g) => cp.with_mixture(g.clone())?,
            None => cp,
        }))
    }

    pub fn plan(&self, statistic: Statistic) -> CliResult<ExperimentPlan> {
        if self.lattice.sides.is_some() {
            return Err(config_err("lattice.sides: experiments need box radii t"));
        }
        let ts = self.radii()?;
        if ts.is_empty() {
            return Err(config_err("lattice.t: empty"));
        }
        let e = &self.experiment;
        let s = &self.sampler;
        let plan = ExperimentPlan {
            d: self.lattice.d,
            ts,
            mode: self.lattice.mode,
            fk: self.fk_params()?,
            color: self.color_params()?,
            algorithm: s.algorithm,
            statistic,
            replicates: e.replicates,
            chains: s.chains,
            burnin: s.burnin,
            thin: s.thin,
            start: s.start,
            seed: self.seed,
            calibration_samples: e.calibration_samples,
            margin: e.margin,
            cutoff: e.cutoff,
            proxy: e.proxy,
            max_vertices: e.max_vertices,
            repetitions: e.repetitions,
            n_min: self.decay.n_min,
            n_max: self.decay.n_max,
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// Files written by one command.
#[derive(Debug, Default)]
pub struct Outputs {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn table(&mut self, name: &str, t: &Table, prov: &Provenance) -> CliResult<()> {
        let p = self.dir.join(name);
        t.save(&p, prov)?;
        self.files.push(p);
        Ok(())
    }

    fn text(&mut self, name: &str, s: &str) -> CliResult<()> {
        let p = self.dir.join(name);
        fs::write(&p, s)?;
        self.files.push(p);
        Ok(())
    }

    fn bytes(&mut self, name: &str, b: &[u8]) -> CliResult<()> {
        let p = self.dir.join(name);
        fs::write(&p, b)?;
        self.files.push(p);
        Ok(())
    }
}

#[derive(Serialize)]
struct SampleReport<'a> {
    geometry: &'a str,
    mode: BoundaryMode,
    p: f64,
    q: f64,
    algorithm: Algorithm,
    burnin: usize,
    thin: usize,
    report: &'a ClusterReport,
}

pub fn cmd_sample(cfg: &RunConfig, out: &mut Outputs, prov: &Provenance) -> CliResult<()> {
    let prm = cfg.fk_params()?;
    cfg.sampler.algorithm.check(&prm)?;
    let geoms = cfg.geometries()?;
    let rule = cfg.experiment.proxy;
    for (_, g) in &geoms {
        rule.unwrap_or(ProxyRule::default_for(g.mode())).check(g.mode())?;
        if g.num_vertices() > cfg.experiment.max_vertices {
            return Err(Error::ResourceCap(format!("{} vertices", g.num_vertices())).into());
        }
    }
    let n = cfg.sampler.samples.unwrap_or(cfg.experiment.replicates);
    if n == 0 {
        return Err(config_err("sampler.samples: must be >= 1"));
    }
    for (level, (label, g)) in geoms.iter().enumerate() {
        let burnin = cfg.sampler.burnin.unwrap_or(cfg.sampler.algorithm.default_burnin(g.sides()[0]));
        let schedule = ChainSchedule {
            sweeps: n,
            burnin,
            thin: cfg.sampler.thin,
        };
        let rng = StreamKey::new(Pass::Chain, 0, level as u16, 0).rng(cfg.seed);
        let chain = Chain::new(g, prm, cfg.sampler.algorithm, schedule, cfg.sampler.start, rng)?;
        let configs: Vec<EdgeConfig> = chain.collect();
        let rule = rule.unwrap_or(ProxyRule::default_for(g.mode()));
        let mut uf = UnionFind::new(g.num_nodes());
        let decs = configs
            .iter()
            .map(|w| ClusterDecomposition::with_scratch(w, g, rule, &mut uf))
            .collect::<crate::Result<Vec<_>>>()?;
        let margin = cfg
            .experiment
            .margin
            .unwrap_or(g.radius().map_or(0, |t| (t / 4) as usize));
        let w = Window::interior(g, margin)?;
        let cutoff = cfg
            .experiment
            .cutoff
            .unwrap_or(g.radius().map_or(0, |t| (t / 8) as usize))
            .min(w.margin_in(g));
        let rep = ClusterReport::from_samples(&decs, g, &w, Some(cutoff))?;
        if cfg.formats.dumps {
            let mut buf = Vec::new();
            fk::write_dump(&mut buf, &DumpHeader::new(g, &prm, cfg.sampler.algorithm, cfg.seed), &configs)?;
            out.bytes(&format!("edges_{label}.dump"), &buf)?;
        }
        if cfg.formats.csv {
            let mut fields = vec![
                ("samples", rep.samples.to_string()),
                ("proxy", rep.proxy.as_str().to_string()),
                ("window_size", rep.window_size.to_string()),
                ("theta", num(rep.theta)),
                ("theta_se", num(rep.theta_se)),
                ("chi_f", num(rep.chi_f)),
                ("chi_f_se", num(rep.chi_f_se)),
            ];
            if let Some(s) = &rep.sigma_sq {
                fields.push(("sigma_sq", num(s.value)));
                fields.push(("sigma_sq_se", num(s.se)));
                fields.push(("sigma_sq_cutoff", s.cutoff.to_string()));
                fields.push(("sigma_sq_tail", num(s.tail)));
            }
            out.table(&format!("cluster_report_{label}.csv"), &scalar_table(&fields), prov)?;
            let mut t = Table::new(&["size", "mean_count"]);
            for &(s, c) in &rep.size_histogram {
                t.push(vec![s.to_string(), num(c)]);
            }
            out.table(&format!("cluster_sizes_{label}.csv"), &t, prov)?;
        }
        if cfg.formats.json {
            let body = SampleReport {
                geometry: label,
                mode: g.mode(),
                p: prm.p(),
                q: prm.q(),
                algorithm: cfg.sampler.algorithm,
                burnin,
                thin: cfg.sampler.thin,
                report: &rep,
            };
            out.text(
                &format!("cluster_report_{label}.json"),
                &report::json_document(&body, prov).map_err(std::io::Error::from)?,
            )?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ExactReport {
    geometry: String,
    mode: BoundaryMode,
    p: f64,
    q: f64,
    edges: usize,
    log_partition: f64,
    normalization_error: f64,
    edge_marginals: Vec<f64>,
    cluster_law: Option<exact::ClusterLaw>,
    fkg: Option<exact::FkgReport>,
    duality: Option<exact::DualityReport>,
}

/// Single-edge events, then connection events between every pair of
/// vertices (only from the first vertex on larger graphs).
fn exact_events(g: &BoxGeometry) -> Vec<Event<'_>> {
    let mut ev: Vec<Event<'_>> = (0..g.num_edges()).map(exact::edge_event).collect();
    let n = g.num_vertices();
    let all_pairs = g.num_edges() <= 12;
    for x in 0..n {
        for y in x + 1..n {
            if all_pairs || x == 0 {
                ev.push(exact::connection_event(g, x, y));
            }
        }
    }
    ev
}

pub fn cmd_exact(cfg: &RunConfig, out: &mut Outputs, prov: &Provenance) -> CliResult<()> {
    let prm = cfg.fk_params()?;
    let geoms = cfg.geometries()?;
    for (_, g) in &geoms {
        if cfg.exact.duality && g.dim() != 2 {
            return Err(Error::UnsupportedDimension {
                dim: g.dim(),
                reason: "duality needs d = 2",
            }
            .into());
        }
        if cfg.exact.duality && g.mode() == BoundaryMode::Periodic {
            return Err(config_err("exact.duality: needs free or wired boundary"));
        }
        if g.num_edges() > MAX_EXACT_EDGES {
            return Err(Error::TooManyEdges {
                edges: g.num_edges(),
                cap: MAX_EXACT_EDGES,
            }
            .into());
        }
    }
    for (label, g) in &geoms {
        let dist = exact::enumerate(g, &prm)?;
        let rule = cfg.experiment.proxy.unwrap_or(ProxyRule::default_for(g.mode()));
        let center = (0..g.num_vertices())
            .find(|&v| g.coords(v).iter().all(|&c| c == 0))
            .unwrap_or(g.num_vertices() / 2);
        let cluster_law = if g.num_vertices() > 0 {
            Some(exact::exact_cluster_law(&dist, center, rule)?)
        } else {
            None
        };
        let fkg = if cfg.exact.fkg && prm.q() >= 1.0 {
            let ev = exact_events(g);
            (ev.len() >= 2).then(|| exact::fkg_check(&dist, &ev)).transpose()?
        } else {
            None
        };
        let duality = if cfg.exact.duality {
            Some(exact::duality_check(g, &prm, &exact_events(g))?)
        } else {
            None
        };
        let rep = ExactReport {
            geometry: label.clone(),
            mode: g.mode(),
            p: prm.p(),
            q: prm.q(),
            edges: g.num_edges(),
            log_partition: dist.log_z(),
            normalization_error: dist.normalization_error(),
            edge_marginals: dist.edge_marginals(),
            cluster_law,
            fkg,
            duality,
        };
        if cfg.formats.csv {
            let mut fields = vec![
                ("edges", rep.edges.to_string()),
                ("log_partition", num(rep.log_partition)),
                ("normalization_error", num(rep.normalization_error)),
            ];
            if let Some(f) = &rep.fkg {
                fields.push(("fkg_worst_covariance", num(f.worst_covariance)));
                fields.push(("fkg_events", f.events.to_string()));
            }
            if let Some(d) = &rep.duality {
                fields.push(("duality_max_discrepancy", num(d.max_discrepancy)));
                fields.push(("p_dual", num(d.p_dual)));
            }
            out.table(&format!("exact_{label}.csv"), &scalar_table(&fields), prov)?;
            let mut t = Table::new(&["edge", "a", "b", "probability"]);
            for (e, &m) in rep.edge_marginals.iter().enumerate() {
                let ed = g.edge(e);
                t.push(vec![e.to_string(), ed.a.to_string(), ed.b.to_string(), num(m)]);
            }
            out.table(&format!("edge_marginals_{label}.csv"), &t, prov)?;
            if let Some(law) = &rep.cluster_law {
                let mut t = Table::new(&["size", "finite", "proxy"]);
                for s in 1..law.finite.len() {
                    t.push(vec![s.to_string(), num(law.finite[s]), num(law.proxy[s])]);
                }
                out.table(&format!("cluster_law_{label}.csv"), &t, prov)?;
            }
            if cfg.exact.table {
                let mut t = Table::new(&["mask", "probability"]);
                for (m, pr) in dist.export() {
                    t.push(vec![m.to_string(), num(pr)]);
                }
                out.table(&format!("distribution_{label}.csv"), &t, prov)?;
            }
        }
        if cfg.formats.json {
            out.text(
                &format!("exact_{label}.json"),
                &report::json_document(&rep, prov).map_err(std::io::Error::from)?,
            )?;
        }
    }
    Ok(())
}

/// Writes the summary JSON, the per-replicate statistic table, per-level
/// moments, checks and histograms.
pub fn write_summary(
    s: &ExperimentSummary,
    formats: &FormatConfig,
    out: &mut Outputs,
    prov: &Provenance,
) -> CliResult<()> {
    if formats.json {
        out.text(
            "summary.json",
            &report::json_document(s, prov).map_err(std::io::Error::from)?,
        )?;
    }
    if formats.csv {
        if let Some(first) = s.samples.first() {
            let mut header = vec!["replicate".to_string(), "t".into(), "repetition".into()];
            header.extend(first.columns.iter().cloned());
            let mut t = Table::new(&header);
            for lvl in &s.samples {
                for (rep, rows) in lvl.values.iter().enumerate() {
                    for (i, row) in rows.iter().enumerate() {
                        let mut r = vec![i.to_string(), lvl.t.to_string(), rep.to_string()];
                        r.extend(row.iter().map(|&x| num(x)));
                        t.push(r);
                    }
                }
            }
            out.table("samples.csv", &t, prov)?;
        }
        if !s.levels.is_empty() {
            let mut t = Table::new(&[
                "t", "repetition", "column", "n", "mean", "variance", "skewness", "excess_kurtosis",
                "se_mean", "se_variance", "ks_statistic", "p_value", "smoothed_p_value",
            ]);
            for lvl in &s.levels {
                let reps = lvl.repetitions.iter().enumerate().map(|(i, r)| (i.to_string(), r));
                for (rep, cols) in reps.chain(std::iter::once(("pooled".to_string(), &lvl.pooled))) {
                    for c in cols {
                        let m = &c.moments;
                        let (ks, pv) = c
                            .normality
                            .map_or(("".into(), "".into()), |n| (num(n.ks_statistic), num(n.p_value)));
                        let sp = c.smoothed_normality.map_or(String::new(), |n| num(n.p_value));
                        t.push(vec![
                            lvl.t.to_string(),
                            rep.clone(),
                            c.name.clone(),
                            m.n.to_string(),
                            num(m.mean),
                            num(m.variance),
                            num(m.skewness),
                            num(m.excess_kurtosis),
                            num(m.se_mean),
                            num(m.se_variance),
                            ks,
                            pv,
                            sp,
                        ]);
                    }
                }
            }
            out.table("levels.csv", &t, prov)?;

            let mut t = Table::new(&["t", "column", "empirical", "empirical_se", "predicted", "predicted_se", "deviation"]);
            let mut cov = Table::new(&["t", "i", "j", "empirical", "predicted"]);
            for lvl in &s.levels {
                for v in &lvl.variance_checks {
                    t.push(vec![
                        lvl.t.to_string(),
                        v.column.clone(),
                        num(v.empirical),
                        num(v.empirical_se),
                        num(v.predicted),
                        num(v.predicted_se),
                        num(v.deviation),
                    ]);
                }
                if let Some(c) = &lvl.covariance {
                    for (i, row) in c.empirical.iter().enumerate() {
                        for (j, &x) in row.iter().enumerate() {
                            cov.push(vec![
                                lvl.t.to_string(),
                                (i + 1).to_string(),
                                (j + 1).to_string(),
                                num(x),
                                num(c.predicted[i][j]),
                            ]);
                        }
                    }
                }
            }
            if !t.is_empty() {
                out.table("variance_checks.csv", &t, prov)?;
            }
            if !cov.is_empty() {
                out.table("covariance.csv", &cov, prov)?;
            }
        }
        if let Some(c) = &s.calibration {
            let mut fields = vec![
                ("t", c.t.to_string()),
                ("window_size", c.window_size.to_string()),
                ("samples", c.samples.to_string()),
                ("theta", num(c.theta)),
                ("theta_se", num(c.theta_se)),
                ("chi_f", num(c.chi_f)),
                ("chi_f_se", num(c.chi_f_se)),
            ];
            if let Some(sg) = &c.sigma_sq {
                fields.push(("sigma_sq", num(sg.value)));
                fields.push(("sigma_sq_se", num(sg.se)));
                fields.push(("sigma_sq_cutoff", sg.cutoff.to_string()));
                fields.push(("sigma_sq_tail", num(sg.tail)));
            }
            out.table("calibration.csv", &scalar_table(&fields), prov)?;
        }
        if !s.decay.is_empty() {
            let mut t = Table::new(&["t", "n", "estimate"]);
            let mut f = Table::new(&["t", "gamma", "r_squared", "n_min", "n_max", "error"]);
            for d in &s.decay {
                for (n, e) in d.n.iter().zip(&d.estimates) {
                    t.push(vec![d.t.to_string(), n.to_string(), num(*e)]);
                }
                match &d.fit {
                    Some(fit) => f.push(vec![
                        d.t.to_string(),
                        num(fit.gamma),
                        num(fit.r_squared),
                        num(fit.n_min),
                        num(fit.n_max),
                        String::new(),
                    ]),
                    None => f.push(vec![
                        d.t.to_string(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        d.fit_error.clone().unwrap_or_default(),
                    ]),
                }
            }
            out.table("decay.csv", &t, prov)?;
            out.table("decay_fit.csv", &f, prov)?;
        }
        if !s.conditions.is_empty() {
            let mut t = Table::new(&["t", "n", "tail", "covariance"]);
            for (tt, c) in &s.conditions {
                for i in 0..c.n.len() {
                    t.push(vec![tt.to_string(), c.n[i].to_string(), num(c.tail[i]), num(c.covariance[i])]);
                }
            }
            out.table("conditions.csv", &t, prov)?;
        }
    }
    if formats.svg {
        for lvl in &s.samples {
            for (j, col) in lvl.columns.iter().enumerate() {
                let xs: Vec<f64> = lvl.values.iter().flatten().map(|r| r[j]).collect();
                let title = format!("{} t={} {}", s.plan.statistic.as_str(), lvl.t, col);
                out.text(&format!("hist_t{}_{}.svg", lvl.t, col), &histogram_svg(&xs, &title, prov))?;
            }
        }
    }
    Ok(())
}

fn run_plan(cfg: &RunConfig, statistic: Statistic, out: &mut Outputs, prov: &Provenance) -> CliResult<()> {
    let plan = cfg.plan(statistic)?;
    let summary = harness::run_experiment(&plan)?;
    write_summary(&summary, &cfg.formats, out, prov)
}

pub fn cmd_clt(cfg: &RunConfig, out: &mut Outputs, prov: &Provenance) -> CliResult<()> {
    let st = cfg.experiment.statistic.unwrap_or(Statistic::InfiniteDensity);
    run_plan(cfg, st, out, prov)
}

pub fn cmd_color(cfg: &RunConfig, out: &mut Outputs, prov: &Provenance) -> CliResult<()> {
    let st = cfg.experiment.statistic.unwrap_or(Statistic::EmpiricalVectorFixedR);
    if !matches!(
        st,
        Statistic::EmpiricalVectorFixedR
            | Statistic::EmpiricalVectorSelfnorm
            | Statistic::Mixture
            | Statistic::MagnetizationIsing
    ) {
        return Err(config_err(format!(
            "experiment.statistic: {} is not a coloring statistic",
            st.as_str()
        )));
    }
    run_plan(cfg, st, out, prov)
}

pub fn cmd_decay(cfg: &RunConfig, out: &mut Outputs, prov: &Provenance) -> CliResult<()> {
    match cfg.experiment.statistic {
        None | Some(Statistic::Decay) => run_plan(cfg, Statistic::Decay, out, prov),
        Some(s) => Err(config_err(format!(
            "experiment.statistic: decay runs cannot use {}",
            s.as_str()
        ))),
    }
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    threads: usize,
    wall_seconds: f64,
    files: Vec<String>,
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    if cli.describe {
        print!("{CONFIG_SCHEMA}");
        return 0;
    }
    let Some(cmd) = cli.command else {
        eprintln!("rcmlab: no command given; see --help");
        return EXIT_CONFIG;
    };
    match execute(&cmd) {
        Ok(out) => {
            for f in &out.files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("rcmlab: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: &Command) -> CliResult<Outputs> {
    let (name, args, run): (&str, &RunArgs, fn(&RunConfig, &mut Outputs, &Provenance) -> CliResult<()>) = match cmd {
        Command::Sample(a) => ("sample", a, cmd_sample),
        Command::Exact(a) => ("exact", a, cmd_exact),
        Command::Clt(a) => ("clt", a, cmd_clt),
        Command::Color(a) => ("color", a, cmd_color),
        Command::Decay(a) => ("decay", a, cmd_decay),
    };
    let cfg = RunConfig::load(&args.config)?;
    if args.threads == Some(0) {
        return Err(config_err("--threads: must be >= 1"));
    }
    let threads = args.threads.unwrap_or_else(rayon::current_num_threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    let dir = args.output.clone().unwrap_or_else(|| cfg.output.clone());
    let prov = Provenance::new(cfg.hash(), cfg.seed);
    let start = Instant::now();
    let mut out = Outputs::new(&dir)?;
    if cfg.verbosity > 0 {
        eprintln!("rcmlab {name}: config {} seed {} threads {threads}", prov.config_hash, cfg.seed);
    }
    pool.install(|| run(&cfg, &mut out, &prov))?;
    let info = RunInfo {
        command: name,
        threads,
        wall_seconds: start.elapsed().as_secs_f64(),
        files: out
            .files
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect(),
    };
    let p = dir.join("run_info.json");
    fs::write(&p, serde_json::to_string_pretty(&info).map_err(std::io::Error::from)? + "\n")?;
    out.files.push(p);
    Ok(out)
}
