//! Brute-force enumeration of the random-cluster measure on small boxes.
//!
//! Configurations are bitmasks: bit `e` is edge `e` of the geometry.
//! Parallel sums run over fixed-size chunks and are folded in chunk order,
//! so results do not depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clusters::{ClusterDecomposition, ProxyRule};
use crate::error::{invalid, Error, Result};
use crate::fk::{log_weight_parts, EdgeConfig, FkParams};
use crate::lattice::{dual_geometry, BoxGeometry};
use crate::unionfind::UnionFind;

/// Largest edge count accepted by [`enumerate`].
pub const MAX_EXACT_EDGES: usize = 24;

const CHUNK: usize = 1 << 14;

/// A predicate on configuration bitmasks.
pub type Event<'a> = Box<dyn Fn(u64) -> bool + Sync + 'a>;

#[derive(Debug, Clone)]
pub struct ExactDistribution {
    geom: BoxGeometry,
    params: FkParams,
    probs: Vec<f64>,
    log_z: f64,
}

pub fn enumerate(g: &BoxGeometry, prm: &FkParams) -> Result<ExactDistribution> {
    let m = g.num_edges();
    if m > MAX_EXACT_EDGES {
        return Err(Error::TooManyEdges {
            edges: m,
            cap: MAX_EXACT_EDGES,
        });
    }
    let total = 1usize << m;
    let mut logw = vec![0.0f64; total];
    logw.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
        let mut uf = UnionFind::new(g.num_nodes());
        for (i, slot) in chunk.iter_mut().enumerate() {
            let mask = (c * CHUNK + i) as u64;
            let k = mask_cluster_count(g, mask, &mut uf);
            let open = mask.count_ones() as usize;
            *slot = log_weight_parts(open, m - open, k, prm);
        }
    });
    let max = chunked_fold(&logw, f64::NEG_INFINITY, |a, &b| a.max(b), f64::max);
    logw.par_iter_mut().for_each(|w| *w = (*w - max).exp());
    let sum = chunked_fold(&logw, 0.0, |a, &b| a + b, |a, b| a + b);
    logw.par_iter_mut().for_each(|w| *w /= sum);
    Ok(ExactDistribution {
        geom: g.clone(),
        params: *prm,
        probs: logw,
        log_z: max + sum.ln(),
    })
}

fn chunked_fold<T: Sync>(
    xs: &[T],
    init: f64,
    f: impl Fn(f64, &T) -> f64 + Sync,
    merge: impl Fn(f64, f64) -> f64,
) -> f64 {
    let parts: Vec<f64> = xs
        .par_chunks(CHUNK)
        .map(|c| c.iter().fold(init, &f))
        .collect();
    parts.into_iter().fold(init, merge)
}

/// k(ω) for a bitmask configuration.
pub fn mask_cluster_count(g: &BoxGeometry, mask: u64, uf: &mut UnionFind) -> usize {
    uf.reset(g.num_nodes());
    let mut k = g.num_nodes();
    let mut bits = mask;
    while bits != 0 {
        let e = bits.trailing_zeros() as usize;
        bits &= bits - 1;
        let edge = g.edge(e);
        if uf.union(edge.a as usize, edge.b as usize) {
            k -= 1;
        }
    }
    k
}

/// Whether nodes `x` and `y` are joined by open edges of `mask`.
pub fn mask_connected(g: &BoxGeometry, mask: u64, x: usize, y: usize) -> bool {
    let mut uf = UnionFind::new(g.num_nodes());
    let mut bits = mask;
    while bits != 0 {
        let e = bits.trailing_zeros() as usize;
        bits &= bits - 1;
        let edge = g.edge(e);
        uf.union(edge.a as usize, edge.b as usize);
    }
    uf.same(x, y)
}

impl ExactDistribution {
    pub fn geometry(&self) -> &BoxGeometry {
        &self.geom
    }

    pub fn params(&self) -> &FkParams {
        &self.params
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, mask: u64) -> f64 {
        self.probs[mask as usize]
    }

    /// ln Z of the unnormalized weights.
    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }

    pub fn num_edges(&self) -> usize {
        self.geom.num_edges()
    }

    /// |Σ probabilities - 1|.
    pub fn normalization_error(&self) -> f64 {
        (chunked_fold(&self.probs, 0.0, |a, &b| a + b, |a, b| a + b) - 1.0).abs()
    }

    /// E[f(ω)].
    pub fn expect(&self, f: impl Fn(u64) -> f64 + Sync) -> f64 {
        let parts: Vec<f64> = self
            .probs
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                chunk
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| if p == 0.0 { 0.0 } else { p * f((c * CHUNK + i) as u64) })
                    .sum::<f64>()
            })
            .collect();
        parts.into_iter().sum()
    }

    pub fn edge_marginals(&self) -> Vec<f64> {
        (0..self.num_edges())
            .map(|e| event_prob(self, |m| m >> e & 1 == 1))
            .collect()
    }

    /// (mask, probability) records.
    pub fn export(&self) -> Vec<(u64, f64)> {
        self.probs
            .iter()
            .enumerate()
            .map(|(m, &p)| (m as u64, p))
            .collect()
    }
}

pub fn event_prob(dist: &ExactDistribution, a: impl Fn(u64) -> bool + Sync) -> f64 {
    dist.expect(|m| if a(m) { 1.0 } else { 0.0 })
}

/// Cov(1_A, 1_B) = φ(A ∩ B) - φ(A)φ(B).
pub fn cov(
    dist: &ExactDistribution,
    a: impl Fn(u64) -> bool + Sync,
    b: impl Fn(u64) -> bool + Sync,
) -> f64 {
    let pab = event_prob(dist, |m| a(m) && b(m));
    pab - event_prob(dist, &a) * event_prob(dist, &b)
}

/// Edge `e` open.
pub fn edge_event<'a>(e: usize) -> Event<'a> {
    Box::new(move |m| m >> e & 1 == 1)
}

/// Nodes `x` and `y` connected.
pub fn connection_event(g: &BoxGeometry, x: usize, y: usize) -> Event<'_> {
    Box::new(move |m| mask_connected(g, m, x, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FkgReport {
    pub worst_covariance: f64,
    /// Indices of the events realizing the worst covariance.
    pub worst_pair: (usize, usize),
    pub events: usize,
}

/// Minimum pairwise covariance over a family of increasing events.
///
/// Every event is first checked to be increasing: on every configuration
/// (or a strided sample of 4096 when there are more), opening any closed
/// edge must not destroy the event.
pub fn fkg_check(dist: &ExactDistribution, events: &[Event<'_>]) -> Result<FkgReport> {
    if dist.params.q() < 1.0 {
        return Err(Error::UnsupportedRegime(format!(
            "FKG needs q >= 1, got {}",
            dist.params.q()
        )));
    }
    if events.len() < 2 {
        return Err(invalid("events", "need at least two events"));
    }
    let m = dist.num_edges();
    let total = 1u64 << m;
    let step = (total / 4096).max(1);
    for (i, ev) in events.iter().enumerate() {
        let mut mask = 0u64;
        while mask < total {
            if ev(mask) {
                for e in 0..m {
                    if mask >> e & 1 == 0 && !ev(mask | 1 << e) {
                        return Err(Error::ContractViolation(format!(
                            "event {i} is not increasing: mask {mask:#x} loses it when edge {e} opens"
                        )));
                    }
                }
            }
            mask += step;
        }
    }
    let ind: Vec<Vec<bool>> = events
        .iter()
        .map(|ev| (0..total).into_par_iter().map(ev).collect())
        .collect();
    let p: Vec<f64> = ind
        .iter()
        .map(|a| dist.expect(|mask| f64::from(u8::from(a[mask as usize]))))
        .collect();
    let mut worst = f64::INFINITY;
    let mut pair = (0, 1);
    for i in 0..events.len() {
        for j in i + 1..events.len() {
            let pij = dist.expect(|mask| {
                let k = mask as usize;
                f64::from(u8::from(ind[i][k] && ind[j][k]))
            });
            let c = pij - p[i] * p[j];
            if c < worst {
                worst = c;
                pair = (i, j);
            }
        }
    }
    Ok(FkgReport {
        worst_covariance: worst,
        worst_pair: pair,
        events: events.len(),
    })
}

/// Dual parameter p* = q(1-p) / (p + q(1-p)), so that F(p)F(p*) = 1 with
/// F(x) = x / (√q (1-x)). By convention 0* = 1 and 1* = 0.
pub fn dual_p(p: f64, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid("p", format!("must lie in [0, 1], got {p}")));
    }
    if !(q > 0.0) {
        return Err(invalid("q", format!("must be > 0, got {q}")));
    }
    if p == 0.0 {
        return Ok(1.0);
    }
    if p == 1.0 {
        return Ok(0.0);
    }
    let a = q * (1.0 - p);
    Ok(a / (p + a))
}

/// Self-dual point √q / (1 + √q).
pub fn self_dual_point(q: f64) -> f64 {
    q.sqrt() / (1.0 + q.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub max_discrepancy: f64,
    pub primal: Vec<f64>,
    pub dual: Vec<f64>,
    pub p_dual: f64,
}

/// Compare φ_{Λ,p,q}(A) with φ_{Λ*,p*,q}(A*) on the matched dual box, where
/// A* holds for ω* iff A holds for ω(e) = 1 - ω*(s(e)). The boundary
/// condition of the dual box is the opposite of the primal one.
pub fn duality_check(
    g: &BoxGeometry,
    prm: &FkParams,
    events: &[Event<'_>],
) -> Result<DualityReport> {
    let dg = dual_geometry(g)?;
    let p_star = dual_p(prm.p(), prm.q())?;
    let primal = enumerate(g, prm)?;
    let dual = enumerate(dg.dual(), &FkParams::new(p_star, prm.q())?)?;
    let m = g.num_edges();
    let perm: Vec<usize> = (0..dg.dual().num_edges()).map(|f| dg.primal_edge(f)).collect();
    let full = (1u64 << m) - 1;
    let to_primal = |mstar: u64| -> u64 {
        let mut omega = 0u64;
        for (f, &e) in perm.iter().enumerate() {
            if mstar >> f & 1 == 1 {
                omega |= 1 << e;
            }
        }
        full & !omega
    };
    let mut report = DualityReport {
        max_discrepancy: 0.0,
        primal: Vec::new(),
        dual: Vec::new(),
        p_dual: p_star,
    };
    for ev in events {
        let a = event_prob(&primal, ev);
        let b = event_prob(&dual, |ms| ev(to_primal(ms)));
        report.max_discrepancy = report.max_discrepancy.max((a - b).abs());
        report.primal.push(a);
        report.dual.push(b);
    }
    Ok(report)
}

/// Exact law of |C(x)|, split by membership of x in Î.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLaw {
    /// `finite[s]` = P(|C(x)| = s, x ∉ Î).
    pub finite: Vec<f64>,
    /// `proxy[s]` = P(|C(x)| = s, x ∈ Î).
    pub proxy: Vec<f64>,
    /// P(x ∈ Î).
    pub theta_x: f64,
    /// Σ_y P(y ∈ Î) / |Λ|.
    pub theta: f64,
    /// Σ_y E|C'(y)| / |Λ|.
    pub chi_f: f64,
}

pub fn exact_cluster_law(dist: &ExactDistribution, x: usize, rule: ProxyRule) -> Result<ClusterLaw> {
    let g = &dist.geom;
    let n = g.num_vertices();
    if x >= n {
        return Err(invalid("x", format!("vertex {x} outside the box")));
    }
    rule.check(g.mode())?;
    let m = g.num_edges();
    let rows: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = dist
        .probs
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut fin = vec![0.0; n + 1];
            let mut prox = vec![0.0; n + 1];
            let (mut th, mut chi) = (0.0, 0.0);
            let mut uf = UnionFind::new(g.num_nodes());
            for (i, &p) in chunk.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let omega = EdgeConfig::from_mask((c * CHUNK + i) as u64, m);
                let dec = ClusterDecomposition::with_scratch(&omega, g, rule, &mut uf)
                    .expect("shape and rule checked");
                let s = dec.cluster_size(x);
                if dec.in_proxy(x) {
                    prox[s] += p;
                } else {
                    fin[s] += p;
                }
                th += p * dec.proxy_size() as f64;
                let sq: f64 = (0..dec.num_clusters())
                    .filter(|&l| !dec.is_proxy_cluster(l))
                    .map(|l| (dec.size(l) * dec.size(l)) as f64)
                    .sum();
                chi += p * sq;
            }
            (fin, prox, th, chi)
        })
        .collect();
    let mut law = ClusterLaw {
        finite: vec![0.0; n + 1],
        proxy: vec![0.0; n + 1],
        theta_x: 0.0,
        theta: 0.0,
        chi_f: 0.0,
    };
    for (fin, prox, th, chi) in rows {
        for s in 0..=n {
            law.finite[s] += fin[s];
            law.proxy[s] += prox[s];
        }
        law.theta += th;
        law.chi_f += chi;
    }
    law.theta_x = law.proxy.iter().sum();
    law.theta /= n as f64;
    law.chi_f /= n as f64;
    Ok(law)
}
