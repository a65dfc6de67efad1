//! Replicated experiments: a calibration pass estimates θ, χ^f and σ² at
//! the largest box, then independent measurement passes form normalized
//! statistics at every box size and compare their laws with the Gaussian
//! limits predicted from the calibration.
//!
//! Replicates are produced by `chains` independent Markov chains; replicate
//! `i` belongs to a contiguous block of one chain. Chains run in parallel
//! and their outputs are collected in chain order, so every number depends
//! only on the plan and its seed.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clusters::{
    ClusterDecomposition, ConditionsAccumulator, ConditionsEstimate, ConnectionAccumulator,
    ProxyRule, SigmaSqEstimate, TwoPointAccumulator,
};
use crate::coloring::{
    color_clusters_with_ground, detect_phase, empirical_vector, predicted_covariance, ColorParams,
};
use crate::error::{invalid, Error, Result};
use crate::fk::{Algorithm, Chain, ChainSchedule, FkParams, Start};
use crate::lattice::{build_box, BoundaryMode, BoxGeometry, Window};
use crate::rng::{McRng, Pass, StreamKey};
use crate::stats::{self, DecayFit, Moments, NormalityResult};
use crate::unionfind::UnionFind;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    InfiniteDensity,
    EmpiricalVectorFixedR,
    EmpiricalVectorSelfnorm,
    Mixture,
    MagnetizationIsing,
    Decay,
    ConditionsMc,
}

impl Statistic {
    pub fn as_str(&self) -> &'static str {
        match self {
            Statistic::InfiniteDensity => "infinite-density",
            Statistic::EmpiricalVectorFixedR => "empirical-vector-fixed-r",
            Statistic::EmpiricalVectorSelfnorm => "empirical-vector-selfnorm",
            Statistic::Mixture => "mixture",
            Statistic::MagnetizationIsing => "magnetization-ising",
            Statistic::Decay => "decay",
            Statistic::ConditionsMc => "conditions-mc",
        }
    }

    fn needs_colors(&self) -> bool {
        matches!(
            self,
            Statistic::EmpiricalVectorFixedR
                | Statistic::EmpiricalVectorSelfnorm
                | Statistic::Mixture
                | Statistic::MagnetizationIsing
        )
    }

    /// Whether the statistic produces one value vector per replicate.
    fn per_replicate(&self) -> bool {
        !matches!(self, Statistic::Decay | Statistic::ConditionsMc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub d: usize,
    /// Box radii, strictly increasing; the box at radius t has side 2t+1.
    pub ts: Vec<i64>,
    pub mode: BoundaryMode,
    pub fk: FkParams,
    pub color: Option<ColorParams>,
    pub algorithm: Algorithm,
    pub statistic: Statistic,
    /// Replicates N per box size and repetition.
    pub replicates: usize,
    pub chains: usize,
    /// Burn-in sweeps per chain; the algorithm default when unset.
    pub burnin: Option<usize>,
    pub thin: usize,
    pub start: Start,
    pub seed: u64,
    /// Kept samples of the calibration pass; N when unset.
    pub calibration_samples: Option<usize>,
    /// Window margin in shells; t/4 when unset.
    pub margin: Option<usize>,
    /// σ² series cutoff K; t/8 (at most the margin) when unset.
    pub cutoff: Option<usize>,
    /// Proxy rule for Î; the mode default when unset.
    pub proxy: Option<ProxyRule>,
    pub max_vertices: usize,
    /// Independent repetitions of the measurement pass.
    pub repetitions: usize,
    /// n-range of the decay fit, and n_max of the conditions diagnostics.
    pub n_min: usize,
    pub n_max: usize,
}

impl ExperimentPlan {
    /// A plan with the usual defaults for everything but the model.
    pub fn new(d: usize, ts: Vec<i64>, mode: BoundaryMode, fk: FkParams, statistic: Statistic) -> Self {
        Self {
            d,
            ts,
            mode,
            fk,
            color: None,
            algorithm: Algorithm::SwendsenWang,
            statistic,
            replicates: 100,
            chains: 8,
            burnin: None,
            thin: 1,
            start: Start::Open,
            seed: 0,
            calibration_samples: None,
            margin: None,
            cutoff: None,
            proxy: None,
            max_vertices: 1 << 22,
            repetitions: 3,
            n_min: 4,
            n_max: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(invalid("d", format!("dimension must be >= 2, got {}", self.d)));
        }
        if self.ts.is_empty() {
            return Err(invalid("t", "need at least one box size"));
        }
        if self.ts.windows(2).any(|w| w[0] >= w[1]) || self.ts[0] < 0 {
            return Err(invalid("t", "box radii must be >= 0 and strictly increasing"));
        }
        if self.replicates < 2 {
            return Err(invalid("replicates", "need N >= 2"));
        }
        if self.chains == 0 {
            return Err(invalid("chains", "must be >= 1"));
        }
        if self.thin == 0 {
            return Err(invalid("thin", "must be >= 1"));
        }
        if self.repetitions == 0 || self.repetitions > 254 {
            return Err(invalid("repetitions", "must lie in 1..=254"));
        }
        if self.calibration_samples == Some(0) {
            return Err(invalid("calibration_samples", "must be >= 1"));
        }
        self.algorithm.check(&self.fk)?;
        self.proxy_rule().check(self.mode)?;
        if self.statistic.needs_colors() && self.color.is_none() {
            return Err(invalid("coloring", format!("statistic {} needs color parameters", self.statistic.as_str())));
        }
        if self.statistic == Statistic::MagnetizationIsing && self.color.as_ref().is_some_and(|c| c.q_c() != 2) {
            return Err(invalid("colors", "the Ising magnetization needs 2 colors"));
        }
        if self.statistic == Statistic::Mixture && self.color.as_ref().is_some_and(|c| c.gamma().is_none()) {
            return Err(invalid("mixture", "the mixture statistic needs a mixing law"));
        }
        if self.statistic == Statistic::Decay && (self.n_min > self.n_max || self.n_max == 0) {
            return Err(invalid("decay", "need 0 < n_min <= n_max"));
        }
        let t_max = *self.ts.last().expect("nonempty");
        let side = (2 * t_max + 1) as f64;
        let vertices = side.powi(self.d as i32);
        if vertices > self.max_vertices as f64 {
            return Err(Error::ResourceCap(format!(
                "box of radius {t_max} in d = {} has {vertices} vertices, cap is {}",
                self.d, self.max_vertices
            )));
        }
        Ok(())
    }

    pub fn proxy_rule(&self) -> ProxyRule {
        self.proxy.unwrap_or(ProxyRule::default_for(self.mode))
    }

    pub fn margin_for(&self, t: i64) -> usize {
        self.margin.unwrap_or((t / 4) as usize)
    }

    pub fn cutoff_for(&self, t: i64) -> usize {
        self.cutoff
            .unwrap_or_else(|| ((t / 8) as usize).min(self.margin_for(t)))
    }

    pub fn burnin_for(&self, side: usize) -> usize {
        self.burnin.unwrap_or(self.algorithm.default_burnin(side))
    }

    fn window(&self, g: &BoxGeometry, t: i64) -> Result<Window> {
        Window::interior(g, self.margin_for(t))
    }
}

/// Q = (|Λ ∩ Î| - θ|Λ|) / |Λ|^{1/2}.
pub fn stat_infinite_density(count: u64, theta: f64, size: u64) -> f64 {
    (count as f64 - theta * size as f64) / (size as f64).sqrt()
}

/// (n - |Λ|((1-θ)ν + θ e_c)) / |Λ|^{1/2} with centering color c.
pub fn stat_empirical_vector(counts: &[u64], size: u64, theta: f64, nu: &[f64], center: usize) -> Vec<f64> {
    let s = size as f64;
    counts
        .iter()
        .zip(nu)
        .enumerate()
        .map(|(k, (&n, &v))| {
            let c = (1.0 - theta) * v + if k == center { theta } else { 0.0 };
            (n as f64 - s * c) / s.sqrt()
        })
        .collect()
}

/// √|Λ| (m - sign(m) θ) with sign(0) = +1.
pub fn stat_ising_magnetization(m: f64, theta: f64, size: u64) -> f64 {
    let sign = if m >= 0.0 { 1.0 } else { -1.0 };
    (size as f64).sqrt() * (m - sign * theta)
}

/// χ^f σ_ν² + (z - m)² σ_φ²: limiting variance of ⟨Q, b⟩ when the finite
/// clusters carry values of mean m and variance σ_ν² and the proxy carries z.
pub fn annealed_variance(chi_f: f64, var_nu: f64, z: f64, m: f64, sigma_sq: f64) -> f64 {
    chi_f * var_nu + (z - m) * (z - m) * sigma_sq
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub column: String,
    pub empirical: f64,
    pub empirical_se: f64,
    pub predicted: f64,
    pub predicted_se: f64,
    /// |empirical - predicted| / predicted.
    pub deviation: f64,
}

/// Relative deviation of the sample variance from a prediction.
pub fn variance_crosscheck(column: &str, samples: &[f64], predicted: f64, predicted_se: f64) -> Result<VarianceCheck> {
    let mo = stats::moments(samples)?;
    if predicted <= 0.0 {
        if mo.variance > 0.0 {
            return Err(Error::Inconsistent(format!(
                "{column}: predicted variance {predicted} but empirical {}",
                mo.variance
            )));
        }
        return Ok(VarianceCheck {
            column: column.to_string(),
            empirical: mo.variance,
            empirical_se: mo.se_variance,
            predicted,
            predicted_se,
            deviation: 0.0,
        });
    }
    Ok(VarianceCheck {
        column: column.to_string(),
        empirical: mo.variance,
        empirical_se: mo.se_variance,
        predicted,
        predicted_se,
        deviation: (mo.variance - predicted).abs() / predicted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub t: i64,
    pub window_size: usize,
    pub samples: usize,
    pub theta: f64,
    pub theta_se: f64,
    pub chi_f: f64,
    pub chi_f_se: f64,
    pub sigma_sq: Option<SigmaSqEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    pub moments: Moments,
    pub normality: Option<NormalityResult>,
    /// Spacing of the lattice the column lives on.
    pub lattice_step: Option<f64>,
    /// Normality after adding uniform noise of one lattice step. Reported
    /// alongside the raw test, never in place of it.
    pub smoothed_normality: Option<NormalityResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCheck {
    pub empirical: Vec<Vec<f64>>,
    pub predicted: Vec<Vec<f64>>,
    pub relative_frobenius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub t: i64,
    pub side: usize,
    pub window_size: usize,
    pub columns: Vec<String>,
    /// Per repetition, per column.
    pub repetitions: Vec<Vec<ColumnSummary>>,
    /// All repetitions pooled.
    pub pooled: Vec<ColumnSummary>,
    /// Per column: not rejected, i.e. p < 0.01 in at most half of the
    /// repetitions.
    pub normality_passed: Vec<Option<bool>>,
    pub variance_checks: Vec<VarianceCheck>,
    pub covariance: Option<CovarianceCheck>,
    /// max |1ᵀQ| over replicates for vector statistics.
    pub max_abs_component_sum: Option<f64>,
    /// Replicates whose detected phase equals the ground color, and how many
    /// of those had fixed-r and self-normalized vectors differing.
    pub phase_hits: Option<(usize, usize)>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    pub t: i64,
    pub window_size: usize,
    pub samples: usize,
    pub n: Vec<usize>,
    pub estimates: Vec<f64>,
    pub fit: Option<DecayFit>,
    pub fit_error: Option<String>,
}

/// Raw per-replicate values of one box size.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSamples {
    pub t: i64,
    pub columns: Vec<String>,
    /// `values[repetition][replicate][column]`.
    pub values: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: String,
    pub tool_version: String,
    pub plan: ExperimentPlan,
    pub proxy: ProxyRule,
    pub calibration: Option<Calibration>,
    pub levels: Vec<LevelSummary>,
    pub decay: Vec<DecaySummary>,
    pub conditions: Vec<(i64, ConditionsEstimate)>,
    #[serde(skip)]
    pub samples: Vec<LevelSamples>,
}

/// Sizes of the per-chain sample blocks.
fn blocks(total: usize, chains: usize) -> Vec<usize> {
    let c = chains.min(total).max(1);
    (0..c).map(|i| total / c + usize::from(i < total % c)).collect()
}

/// Run the plan's chains on `g`, feeding every kept decomposition to a
/// per-chain accumulator. Accumulators come back in chain order.
fn run_chains<A, I, S>(
    plan: &ExperimentPlan,
    g: &BoxGeometry,
    pass: Pass,
    repetition: u8,
    level: u16,
    total: usize,
    init: I,
    step: S,
) -> Result<Vec<A>>
where
    A: Send,
    I: Fn() -> A + Sync,
    S: Fn(&mut A, &ClusterDecomposition, &mut McRng) + Sync,
{
    let rule = plan.proxy_rule();
    let burnin = plan.burnin_for(g.sides()[0]);
    blocks(total, plan.chains)
        .into_par_iter()
        .enumerate()
        .map(|(c, len)| {
            let rng = StreamKey::new(pass, repetition, level, c as u32).rng(plan.seed);
            let schedule = ChainSchedule {
                sweeps: len,
                burnin,
                thin: plan.thin,
            };
            let mut chain = Chain::new(g, plan.fk, plan.algorithm, schedule, plan.start, rng)?;
            let mut uf = UnionFind::new(g.num_nodes());
            let mut acc = init();
            for _ in 0..len {
                chain
                    .advance()
                    .ok_or_else(|| Error::ContractViolation("chain ended early".into()))?;
                let dec = ClusterDecomposition::with_scratch(&chain.state().edges, g, rule, &mut uf)?;
                step(&mut acc, &dec, &mut chain.state_mut().rng);
            }
            Ok(acc)
        })
        .collect()
}

struct CalibAcc {
    theta: Vec<f64>,
    chi: Vec<f64>,
    two_point: Option<TwoPointAccumulator>,
}

fn calibrate(plan: &ExperimentPlan) -> Result<Calibration> {
    let t = *plan.ts.last().expect("validated");
    let g = build_box(plan.d, t, plan.mode)?;
    let w = plan.window(&g, t)?;
    let cutoff = plan.cutoff_for(t);
    let with_sigma = cutoff <= w.margin_in(&g);
    let total = plan.calibration_samples.unwrap_or(plan.replicates);
    let ws = w.size() as f64;
    let accs = run_chains(
        plan,
        &g,
        Pass::Calibration,
        0,
        0,
        total,
        || CalibAcc {
            theta: Vec::new(),
            chi: Vec::new(),
            two_point: with_sigma.then(|| TwoPointAccumulator::new(&g, &w, cutoff).expect("room checked")),
        },
        |acc, dec, _| {
            acc.theta.push(dec.proxy_count(&g, &w) as f64 / ws);
            acc.chi.push(dec.finite_sum_sq(&g, &w) as f64 / ws);
            if let Some(tp) = acc.two_point.as_mut() {
                tp.add(&dec.proxy_indicator());
            }
        },
    )?;
    let mut theta = Vec::with_capacity(total);
    let mut chi = Vec::with_capacity(total);
    let mut tp: Option<TwoPointAccumulator> = None;
    for a in accs {
        theta.extend(a.theta);
        chi.extend(a.chi);
        if let Some(x) = a.two_point {
            match tp.as_mut() {
                Some(t) => t.merge(x),
                None => tp = Some(x),
            }
        }
    }
    let se = |xs: &[f64]| {
        if xs.len() > 1 {
            (stats::variance(xs) / xs.len() as f64).sqrt()
        } else {
            f64::NAN
        }
    };
    Ok(Calibration {
        t,
        window_size: w.size(),
        samples: total,
        theta: stats::mean(&theta),
        theta_se: se(&theta),
        chi_f: stats::mean(&chi),
        chi_f_se: se(&chi),
        sigma_sq: tp.map(|t| t.finish()).transpose()?,
    })
}

struct Record {
    values: Vec<f64>,
    /// Component sum of the vector statistic.
    sum: f64,
    /// (detected phase, ground color, fixed-r and self-normalized agree).
    phase: Option<(usize, usize, bool)>,
}

fn columns(plan: &ExperimentPlan) -> Vec<String> {
    let q = plan.color.as_ref().map_or(0, |c| c.q_c());
    match plan.statistic {
        Statistic::InfiniteDensity => vec!["q".into()],
        Statistic::MagnetizationIsing => vec!["sign_centered".into(), "naive".into()],
        Statistic::EmpiricalVectorFixedR | Statistic::EmpiricalVectorSelfnorm | Statistic::Mixture => {
            (1..=q).map(|k| format!("q{k}")).collect()
        }
        Statistic::Decay | Statistic::ConditionsMc => Vec::new(),
    }
}

fn record(
    plan: &ExperimentPlan,
    cal: &Calibration,
    g: &BoxGeometry,
    w: &Window,
    dec: &ClusterDecomposition,
    rng: &mut McRng,
) -> Record {
    let theta = cal.theta;
    if plan.statistic == Statistic::InfiniteDensity {
        let q = stat_infinite_density(dec.proxy_count(g, w), theta, w.size() as u64);
        return Record {
            values: vec![q],
            sum: q,
            phase: None,
        };
    }
    let cp = plan.color.as_ref().expect("validated");
    let ground = match plan.statistic {
        Statistic::Mixture | Statistic::MagnetizationIsing => cp.draw_ground(rng),
        _ => cp.ground(),
    };
    let spins = color_clusters_with_ground(dec, cp, ground, rng);
    let ev = empirical_vector(&spins, g, w);
    if plan.statistic == Statistic::MagnetizationIsing {
        let m = ev.magnetization.expect("two colors");
        return Record {
            values: vec![
                stat_ising_magnetization(m, theta, ev.size),
                (ev.size as f64).sqrt() * (m - theta),
            ],
            sum: 0.0,
            phase: None,
        };
    }
    let r_hat = detect_phase(&ev, theta.clamp(0.0, 1.0), cp.nu()).expect("shapes match");
    let fixed = stat_empirical_vector(&ev.counts, ev.size, theta, cp.nu(), ground);
    let selfnorm = stat_empirical_vector(&ev.counts, ev.size, theta, cp.nu(), r_hat);
    let values = match plan.statistic {
        Statistic::EmpiricalVectorFixedR => fixed.clone(),
        _ => selfnorm.clone(),
    };
    Record {
        sum: values.iter().sum(),
        values,
        phase: Some((r_hat, ground, fixed == selfnorm)),
    }
}

fn try_normality(xs: &[f64]) -> Result<Option<NormalityResult>> {
    match stats::normality_test(xs) {
        Ok(r) => Ok(Some(r)),
        Err(Error::InsufficientData(_)) | Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn summarize_columns(
    names: &[String],
    steps: &[Option<f64>],
    rows: &[&Vec<f64>],
    smoothing: StreamKey,
    seed: u64,
) -> Result<Vec<ColumnSummary>> {
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let xs: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let smoothed_normality = match steps[j] {
                Some(h) => {
                    let mut rng = StreamKey { chain: j as u32, ..smoothing }.rng(seed);
                    let ys: Vec<f64> = xs.iter().map(|x| x + h * (rng.random::<f64>() - 0.5)).collect();
                    try_normality(&ys)?
                }
                None => None,
            };
            Ok(ColumnSummary {
                name: name.clone(),
                moments: stats::moments(&xs)?,
                normality: try_normality(&xs)?,
                lattice_step: steps[j],
                smoothed_normality,
            })
        })
        .collect()
}

fn lattice_steps(plan: &ExperimentPlan, columns: usize, window_size: usize) -> Vec<Option<f64>> {
    let unit = 1.0 / (window_size as f64).sqrt();
    let step = match plan.statistic {
        Statistic::MagnetizationIsing => 2.0 * unit,
        _ => unit,
    };
    vec![Some(step); columns]
}

fn measure_level(
    plan: &ExperimentPlan,
    cal: &Calibration,
    level: usize,
    t: i64,
) -> Result<(LevelSummary, LevelSamples)> {
    let g = build_box(plan.d, t, plan.mode)?;
    let w = plan.window(&g, t)?;
    let names = columns(plan);
    let mut per_rep: Vec<Vec<Record>> = Vec::with_capacity(plan.repetitions);
    for rep in 0..plan.repetitions {
        let accs = run_chains(
            plan,
            &g,
            Pass::Measurement,
            rep as u8,
            level as u16,
            plan.replicates,
            Vec::new,
            |acc: &mut Vec<Record>, dec, rng| acc.push(record(plan, cal, &g, &w, dec, rng)),
        )?;
        per_rep.push(accs.into_iter().flatten().collect());
    }

    let steps = lattice_steps(plan, names.len(), w.size());
    let mut repetitions = Vec::with_capacity(plan.repetitions);
    for (rep, recs) in per_rep.iter().enumerate() {
        let rows: Vec<&Vec<f64>> = recs.iter().map(|r| &r.values).collect();
        let key = StreamKey::new(Pass::Smoothing, rep as u8, level as u16, 0);
        repetitions.push(summarize_columns(&names, &steps, &rows, key, plan.seed)?);
    }
    let all: Vec<&Record> = per_rep.iter().flatten().collect();
    let rows: Vec<&Vec<f64>> = all.iter().map(|r| &r.values).collect();
    let key = StreamKey::new(Pass::Smoothing, u8::MAX, level as u16, 0);
    let pooled = summarize_columns(&names, &steps, &rows, key, plan.seed)?;
    let normality_passed = (0..names.len())
        .map(|j| {
            let ps: Vec<f64> = repetitions
                .iter()
                .filter_map(|rep: &Vec<ColumnSummary>| rep[j].normality.map(|n| n.p_value))
                .collect();
            (ps.len() == plan.repetitions).then(|| {
                let rejected = ps.iter().filter(|&&p| p < 0.01).count();
                2 * rejected <= ps.len()
            })
        })
        .collect();

    let mut notes = Vec::new();
    let sigma = cal.sigma_sq.as_ref();
    let (sigma_sq, sigma_se) = match (plan.proxy_rule(), sigma) {
        (ProxyRule::None, _) => (Some(0.0), 0.0),
        (_, Some(s)) => (Some(s.value.max(0.0)), s.se),
        (_, None) => {
            notes.push("sigma_sq unavailable: cutoff exceeds the calibration window margin".into());
            (None, f64::NAN)
        }
    };
    let mut variance_checks = Vec::new();
    let mut covariance = None;
    let column = |j: usize| -> Vec<f64> { all.iter().map(|r| r.values[j]).collect() };
    match plan.statistic {
        Statistic::InfiniteDensity => {
            if let Some(s2) = sigma_sq {
                push_check(&mut variance_checks, &mut notes, "q", &column(0), s2, sigma_se);
            }
        }
        Statistic::MagnetizationIsing => {
            if let Some(s2) = sigma_sq {
                let se = (cal.chi_f_se.powi(2) + sigma_se.powi(2)).sqrt();
                push_check(&mut variance_checks, &mut notes, "sign_centered", &column(0), cal.chi_f + s2, se);
            }
        }
        Statistic::EmpiricalVectorFixedR | Statistic::EmpiricalVectorSelfnorm | Statistic::Mixture => {
            if let Some(s2) = sigma_sq {
                let cp = plan.color.as_ref().expect("validated");
                let theta = cal.theta.clamp(0.0, 1.0);
                let predicted = match (plan.statistic, cp.gamma()) {
                    (Statistic::Mixture, Some(gamma)) => mixture_covariance(cp, gamma, cal.chi_f, s2)?,
                    _ => predicted_covariance(cp, cal.chi_f, s2, theta)?,
                };
                let vecs: Vec<Vec<f64>> = all.iter().map(|r| r.values.clone()).collect();
                let empirical = stats::covariance_matrix(&vecs)?;
                covariance = Some(CovarianceCheck {
                    relative_frobenius: stats::relative_frobenius(&empirical, &predicted),
                    empirical,
                    predicted,
                });
            }
        }
        Statistic::Decay | Statistic::ConditionsMc => {}
    }
    let vector = matches!(
        plan.statistic,
        Statistic::EmpiricalVectorFixedR | Statistic::EmpiricalVectorSelfnorm | Statistic::Mixture
    );
    let max_abs_component_sum = vector.then(|| all.iter().map(|r| r.sum.abs()).fold(0.0, f64::max));
    let phase_hits = vector.then(|| {
        let hits: Vec<bool> = all
            .iter()
            .filter_map(|r| r.phase)
            .filter(|&(r_hat, ground, _)| r_hat == ground)
            .map(|(_, _, same)| same)
            .collect();
        (hits.len(), hits.iter().filter(|&&s| !s).count())
    });

    let summary = LevelSummary {
        t,
        side: g.sides()[0],
        window_size: w.size(),
        columns: names.clone(),
        repetitions,
        pooled,
        normality_passed,
        variance_checks,
        covariance,
        max_abs_component_sum,
        phase_hits,
        notes,
    };
    let samples = LevelSamples {
        t,
        columns: names,
        values: per_rep
            .into_iter()
            .map(|recs| recs.into_iter().map(|r| r.values).collect())
            .collect(),
    };
    Ok((summary, samples))
}

fn push_check(
    out: &mut Vec<VarianceCheck>,
    notes: &mut Vec<String>,
    column: &str,
    xs: &[f64],
    predicted: f64,
    predicted_se: f64,
) {
    match variance_crosscheck(column, xs, predicted, predicted_se) {
        Ok(c) => out.push(c),
        Err(e) => notes.push(e.to_string()),
    }
}

/// Covariance of X + S(e_Z - ν) with Z ~ γ: χ(D_ν - ννᵀ) + σ² Σ_r γ_r (e_r - ν)(e_r - ν)ᵀ.
pub fn mixture_covariance(cp: &ColorParams, gamma: &[f64], chi_f: f64, sigma_sq: f64) -> Result<Vec<Vec<f64>>> {
    let q = cp.q_c();
    let mut c = vec![vec![0.0; q]; q];
    for (r, &gr) in gamma.iter().enumerate() {
        let cpr = ColorParams::new(cp.nu().to_vec(), r)?;
        let m = predicted_covariance(&cpr, chi_f, sigma_sq, 0.0)?;
        for i in 0..q {
            for j in 0..q {
                c[i][j] += gr * m[i][j];
            }
        }
    }
    Ok(c)
}

fn measure_decay(plan: &ExperimentPlan, level: usize, t: i64) -> Result<DecaySummary> {
    let g = build_box(plan.d, t, plan.mode)?;
    let margin = plan.margin.unwrap_or(plan.n_max);
    let w = Window::interior(&g, margin)?;
    let accs = run_chains(
        plan,
        &g,
        Pass::Measurement,
        0,
        level as u16,
        plan.replicates,
        || ConnectionAccumulator::new(&g, &w, plan.n_max),
        |acc, dec, _| {
            if let Ok(a) = acc.as_mut() {
                a.add(dec, &g);
            }
        },
    )?;
    let mut total: Option<ConnectionAccumulator> = None;
    for a in accs {
        let a = a?;
        match total.as_mut() {
            Some(t) => t.merge(&a),
            None => total = Some(a),
        }
    }
    let est = total.ok_or(Error::EmptySamples)?.finish()?;
    let n: Vec<usize> = (plan.n_min..=plan.n_max).collect();
    let estimates: Vec<f64> = n.iter().map(|&k| est[k]).collect();
    let ns: Vec<f64> = n.iter().map(|&k| k as f64).collect();
    let (fit, fit_error) = match stats::decay_fit(&ns, &estimates) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(DecaySummary {
        t,
        window_size: w.size(),
        samples: plan.replicates,
        n,
        estimates,
        fit,
        fit_error,
    })
}

fn measure_conditions(plan: &ExperimentPlan, level: usize, t: i64) -> Result<ConditionsEstimate> {
    let g = build_box(plan.d, t, plan.mode)?;
    let w = plan.window(&g, t)?;
    let max_n = plan.n_max.min(w.side(0) - 1);
    let accs = run_chains(
        plan,
        &g,
        Pass::Measurement,
        0,
        level as u16,
        plan.replicates,
        || ConditionsAccumulator::new(&g, &w, max_n),
        |acc, dec, _| {
            if let Ok(a) = acc.as_mut() {
                a.add(dec, &g);
            }
        },
    )?;
    let mut total: Option<ConditionsAccumulator> = None;
    for a in accs {
        let a = a?;
        match total.as_mut() {
            Some(t) => t.merge(&a),
            None => total = Some(a),
        }
    }
    total.ok_or(Error::EmptySamples)?.finish()
}

/// Calibration pass, then one measurement pass per repetition and box size.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentSummary> {
    plan.validate()?;
    let mut summary = ExperimentSummary {
        schema_version: SCHEMA_VERSION.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        plan: plan.clone(),
        proxy: plan.proxy_rule(),
        calibration: None,
        levels: Vec::new(),
        decay: Vec::new(),
        conditions: Vec::new(),
        samples: Vec::new(),
    };
    match plan.statistic {
        Statistic::Decay => {
            for (i, &t) in plan.ts.iter().enumerate() {
                summary.decay.push(measure_decay(plan, i, t)?);
            }
        }
        Statistic::ConditionsMc => {
            for (i, &t) in plan.ts.iter().enumerate() {
                summary.conditions.push((t, measure_conditions(plan, i, t)?));
            }
        }
        s => {
            debug_assert!(s.per_replicate());
            let cal = calibrate(plan)?;
            for (i, &t) in plan.ts.iter().enumerate() {
                let (lvl, samples) = measure_level(plan, &cal, i, t)?;
                summary.levels.push(lvl);
                summary.samples.push(samples);
            }
            summary.calibration = Some(cal);
        }
    }
    Ok(summary)
}
