//! Random-cluster measure on a box and Markov chains targeting it.
//!
//! The boundary condition is carried by the geometry: a wired box has a
//! ghost node fused to its outer boundary, and the cluster count `k(ω)`
//! counts components of the graph on vertices plus ghost, so the ghost's
//! component is always counted once.

use std::fmt;
use std::io::{self, BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::BoxGeometry;
use crate::rng::{self, McRng};
use crate::unionfind::UnionFind;

/// Open-bond probability `p` and cluster weight `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FkParams {
    p: f64,
    q: f64,
    beta: f64,
}

impl FkParams {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid("p", format!("must lie in [0, 1], got {p}")));
        }
        if !(q > 0.0) || !q.is_finite() {
            return Err(invalid("q", format!("must be a positive real, got {q}")));
        }
        Ok(Self {
            p,
            q,
            beta: -0.5 * (-p).ln_1p(),
        })
    }

    /// Parameters at inverse temperature `beta`, with p = 1 - e^{-2β}.
    pub fn from_beta(beta: f64, q: f64) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(invalid("beta", format!("must be >= 0, got {beta}")));
        }
        let mut prm = Self::new(-(-2.0 * beta).exp_m1(), q)?;
        prm.beta = beta;
        Ok(prm)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// β = -½ ln(1 - p); infinite at p = 1.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `Some(q)` when q is a positive integer.
    pub fn integer_q(&self) -> Option<u32> {
        (self.q.fract() == 0.0 && self.q >= 1.0 && self.q <= 255.0).then_some(self.q as u32)
    }
}

/// One bit per edge in geometry order; `true` is open.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct EdgeConfig {
    bits: Vec<bool>,
}

impl fmt::Debug for EdgeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect();
        write!(f, "EdgeConfig({s})")
    }
}

impl EdgeConfig {
    pub fn closed(n: usize) -> Self {
        Self {
            bits: vec![false; n],
        }
    }

    pub fn open(n: usize) -> Self {
        Self { bits: vec![true; n] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Bit `e` of `mask` is edge `e`.
    pub fn from_mask(mask: u64, n: usize) -> Self {
        Self {
            bits: (0..n).map(|e| mask >> e & 1 == 1).collect(),
        }
    }

    pub fn to_mask(&self) -> u64 {
        assert!(self.bits.len() <= 64, "mask needs at most 64 edges");
        self.bits
            .iter()
            .enumerate()
            .fold(0u64, |m, (e, &b)| m | (u64::from(b) << e))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn is_open(&self, e: usize) -> bool {
        self.bits[e]
    }

    #[inline]
    pub fn set(&mut self, e: usize, open: bool) {
        self.bits[e] = open;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_open(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Packed little-endian bitstring: edge `e` is bit `e % 8` of byte `e / 8`.
    pub fn pack(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (e, &b) in self.bits.iter().enumerate() {
            if b {
                out[e / 8] |= 1 << (e % 8);
            }
        }
        out
    }

    pub fn unpack(bytes: &[u8], n: usize) -> Result<Self> {
        if bytes.len() != n.div_ceil(8) {
            return Err(Error::ShapeMismatch {
                expected: n.div_ceil(8),
                got: bytes.len(),
            });
        }
        Ok(Self {
            bits: (0..n).map(|e| bytes[e / 8] >> (e % 8) & 1 == 1).collect(),
        })
    }

    pub(crate) fn check(&self, g: &BoxGeometry) -> Result<()> {
        if self.bits.len() != g.num_edges() {
            return Err(Error::ShapeMismatch {
                expected: g.num_edges(),
                got: self.bits.len(),
            });
        }
        Ok(())
    }
}

/// Number of components of the open subgraph, ghost component included.
pub fn cluster_count(g: &BoxGeometry, omega: &EdgeConfig, uf: &mut UnionFind) -> usize {
    uf.reset(g.num_nodes());
    let mut k = g.num_nodes();
    for (e, edge) in g.edges().iter().enumerate() {
        if omega.is_open(e) && uf.union(edge.a as usize, edge.b as usize) {
            k -= 1;
        }
    }
    k
}

/// ln of the unnormalized weight ∏ p^ω(e) (1-p)^{1-ω(e)} · q^{k(ω)}.
pub fn log_fk_weight(omega: &EdgeConfig, g: &BoxGeometry, prm: &FkParams) -> Result<f64> {
    omega.check(g)?;
    let mut uf = UnionFind::new(g.num_nodes());
    let k = cluster_count(g, omega, &mut uf);
    let open = omega.count_open();
    Ok(log_weight_parts(open, omega.len() - open, k, prm))
}

pub(crate) fn log_weight_parts(open: usize, closed: usize, k: usize, prm: &FkParams) -> f64 {
    let term = |n: usize, x: f64| if n == 0 { 0.0 } else { n as f64 * x.ln() };
    term(open, prm.p) + term(closed, 1.0 - prm.p) + k as f64 * prm.q.ln()
}

/// Unnormalized FK weight of `omega`.
pub fn fk_weight(omega: &EdgeConfig, g: &BoxGeometry, prm: &FkParams) -> Result<f64> {
    log_fk_weight(omega, g, prm).map(f64::exp)
}

/// Conditional probability that an edge is open given the rest of the
/// configuration: `p` if its endpoints are joined without it, otherwise
/// `p / (p + q(1-p))`.
pub fn heatbath_edge_prob(connected_without_e: bool, prm: &FkParams) -> Result<f64> {
    if prm.q < 1.0 {
        return Err(Error::UnsupportedRegime(format!(
            "single-bond dynamics need q >= 1, got q = {}",
            prm.q
        )));
    }
    Ok(heatbath_unchecked(connected_without_e, prm))
}

#[inline]
fn heatbath_unchecked(connected: bool, prm: &FkParams) -> f64 {
    if connected {
        prm.p
    } else {
        prm.p / (prm.p + prm.q * (1.0 - prm.p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Single-bond heat bath in geometry edge order.
    Sweeny,
    SwendsenWang,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Sweeny => "sweeny",
            Algorithm::SwendsenWang => "swendsen-wang",
        }
    }

    pub fn check(&self, prm: &FkParams) -> Result<()> {
        match self {
            Algorithm::Sweeny if prm.q < 1.0 => Err(Error::UnsupportedRegime(format!(
                "Sweeny dynamics need q >= 1, got q = {}",
                prm.q
            ))),
            Algorithm::SwendsenWang if prm.integer_q().is_none() => {
                Err(Error::UnsupportedAlgorithm(format!(
                    "Swendsen-Wang needs an integer q in 1..=255, got q = {}",
                    prm.q
                )))
            }
            _ => Ok(()),
        }
    }

    /// Conservative burn-in: 10·L sweeps for Swendsen–Wang, 100 for Sweeny.
    pub fn default_burnin(&self, side: usize) -> usize {
        match self {
            Algorithm::Sweeny => 100,
            Algorithm::SwendsenWang => 10 * side,
        }
    }
}

/// Starting configuration of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    #[default]
    Open,
    Closed,
}

/// Scratch space for "are u and v joined without edge e" queries.
///
/// Two breadth-first searches grow alternately from u and from v; the
/// search stops as soon as they meet or one side runs out, so the cost is
/// bounded by the smaller of the two clusters when they are disjoint.
#[derive(Debug, Clone)]
pub struct Connectivity {
    mark: Vec<u32>,
    stamp: u32,
    qa: Vec<u32>,
    qb: Vec<u32>,
}

impl Connectivity {
    pub fn new(nodes: usize) -> Self {
        Self {
            mark: vec![0; nodes],
            stamp: 0,
            qa: Vec::new(),
            qb: Vec::new(),
        }
    }

    pub fn connected_without(
        &mut self,
        g: &BoxGeometry,
        omega: &EdgeConfig,
        u: usize,
        v: usize,
        skip: usize,
    ) -> bool {
        if u == v {
            return true;
        }
        if self.stamp >= u32::MAX - 2 {
            self.mark.iter_mut().for_each(|m| *m = 0);
            self.stamp = 0;
        }
        let sa = self.stamp + 1;
        let sb = self.stamp + 2;
        self.stamp += 2;
        self.qa.clear();
        self.qb.clear();
        self.mark[u] = sa;
        self.mark[v] = sb;
        self.qa.push(u as u32);
        self.qb.push(v as u32);
        let (mut ha, mut hb) = (0usize, 0usize);
        loop {
            if ha == self.qa.len() || hb == self.qb.len() {
                return false;
            }
            let x = self.qa[ha] as usize;
            ha += 1;
            for &(w, e) in g.neighbors(x) {
                let (w, e) = (w as usize, e as usize);
                if e == skip || !omega.is_open(e) {
                    continue;
                }
                if self.mark[w] == sb {
                    return true;
                }
                if self.mark[w] != sa {
                    self.mark[w] = sa;
                    self.qa.push(w as u32);
                }
            }
            let y = self.qb[hb] as usize;
            hb += 1;
            for &(w, e) in g.neighbors(y) {
                let (w, e) = (w as usize, e as usize);
                if e == skip || !omega.is_open(e) {
                    continue;
                }
                if self.mark[w] == sa {
                    return true;
                }
                if self.mark[w] != sb {
                    self.mark[w] = sb;
                    self.qb.push(w as u32);
                }
            }
        }
    }
}

/// Full state of one Markov chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub edges: EdgeConfig,
    /// Companion spins of the last Swendsen–Wang sweep, one per node; the
    /// ghost of a wired box always carries color 0.
    pub spins: Vec<u8>,
    pub rng: McRng,
    pub sweeps: u64,
    uf: UnionFind,
    conn: Connectivity,
}

impl ChainState {
    pub fn new(g: &BoxGeometry, start: Start, rng: McRng) -> Self {
        let edges = match start {
            Start::Open => EdgeConfig::open(g.num_edges()),
            Start::Closed => EdgeConfig::closed(g.num_edges()),
        };
        Self::from_edges(g, edges, rng)
    }

    pub fn from_edges(g: &BoxGeometry, edges: EdgeConfig, rng: McRng) -> Self {
        Self {
            edges,
            spins: vec![0; g.num_nodes()],
            rng,
            sweeps: 0,
            uf: UnionFind::new(g.num_nodes()),
            conn: Connectivity::new(g.num_nodes()),
        }
    }
}

/// One heat-bath pass over every edge in geometry order.
pub fn sweeny_sweep(st: &mut ChainState, g: &BoxGeometry, prm: &FkParams) -> Result<()> {
    Algorithm::Sweeny.check(prm)?;
    st.edges.check(g)?;
    let p_far = heatbath_unchecked(false, prm);
    for (e, edge) in g.edges().iter().enumerate() {
        let (u, v) = (edge.a as usize, edge.b as usize);
        let prob = if prm.q == 1.0 || st.conn.connected_without(g, &st.edges, u, v, e) {
            prm.p
        } else {
            p_far
        };
        let open = st.rng.random::<f64>() < prob;
        st.edges.set(e, open);
    }
    st.sweeps += 1;
    Ok(())
}

/// One Swendsen–Wang sweep: color the clusters of the current edges
/// uniformly (the ghost cluster keeps color 0), then open each edge with
/// equal-colored endpoints with probability `p`. For q = 1 this reduces to
/// independent Bernoulli(p) resampling.
pub fn sw_sweep(st: &mut ChainState, g: &BoxGeometry, prm: &FkParams) -> Result<()> {
    Algorithm::SwendsenWang.check(prm)?;
    st.edges.check(g)?;
    let q = prm.integer_q().unwrap_or(1);
    if q == 1 {
        for e in 0..g.num_edges() {
            let open = st.rng.random::<f64>() < prm.p;
            st.edges.set(e, open);
        }
        st.sweeps += 1;
        return Ok(());
    }

    let nodes = g.num_nodes();
    st.uf.reset(nodes);
    for (e, edge) in g.edges().iter().enumerate() {
        if st.edges.is_open(e) {
            st.uf.union(edge.a as usize, edge.b as usize);
        }
    }
    const UNSET: u8 = u8::MAX;
    let mut root_color = vec![UNSET; nodes];
    if let Some(ghost) = g.ghost() {
        let r = st.uf.find(ghost);
        root_color[r] = 0;
    }
    for v in 0..nodes {
        let r = st.uf.find(v);
        if root_color[r] == UNSET {
            root_color[r] = st.rng.random_range(0..q) as u8;
        }
        st.spins[v] = root_color[r];
    }

    for (e, edge) in g.edges().iter().enumerate() {
        let open = st.spins[edge.a as usize] == st.spins[edge.b as usize]
            && st.rng.random::<f64>() < prm.p;
        st.edges.set(e, open);
    }
    st.sweeps += 1;
    Ok(())
}

pub fn sweep(
    alg: Algorithm,
    st: &mut ChainState,
    g: &BoxGeometry,
    prm: &FkParams,
) -> Result<()> {
    match alg {
        Algorithm::Sweeny => sweeny_sweep(st, g, prm),
        Algorithm::SwendsenWang => sw_sweep(st, g, prm),
    }
}

/// Burn-in, thinning and length of a chain run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSchedule {
    pub sweeps: usize,
    pub burnin: usize,
    pub thin: usize,
}

impl ChainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps == 0 {
            return Err(invalid("sweeps", "must be > 0"));
        }
        if self.thin == 0 {
            return Err(invalid("thin", "must be >= 1"));
        }
        Ok(())
    }
}

/// Stream of kept configurations of one chain.
pub struct Chain<'g> {
    geom: &'g BoxGeometry,
    prm: FkParams,
    alg: Algorithm,
    schedule: ChainSchedule,
    state: ChainState,
    yielded: usize,
    burned: bool,
}

impl<'g> Chain<'g> {
    pub fn new(
        geom: &'g BoxGeometry,
        prm: FkParams,
        alg: Algorithm,
        schedule: ChainSchedule,
        start: Start,
        rng: McRng,
    ) -> Result<Self> {
        alg.check(&prm)?;
        schedule.validate()?;
        Ok(Self {
            geom,
            prm,
            alg,
            schedule,
            state: ChainState::new(geom, start, rng),
            yielded: 0,
            burned: false,
        })
    }

    /// Advance to the next kept configuration without cloning it.
    pub fn advance(&mut self) -> Option<&ChainState> {
        if self.yielded == self.schedule.sweeps {
            return None;
        }
        if !self.burned {
            for _ in 0..self.schedule.burnin {
                sweep(self.alg, &mut self.state, self.geom, &self.prm).ok()?;
            }
            self.burned = true;
        }
        for _ in 0..self.schedule.thin {
            sweep(self.alg, &mut self.state, self.geom, &self.prm).ok()?;
        }
        self.yielded += 1;
        Some(&self.state)
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut ChainState {
        &mut self.state
    }
}

impl Iterator for Chain<'_> {
    type Item = EdgeConfig;

    fn next(&mut self) -> Option<EdgeConfig> {
        self.advance().map(|s| s.edges.clone())
    }
}

/// `sweeps` kept configurations after `burnin` discarded sweeps, keeping
/// every `thin`-th, started from the all-open configuration.
pub fn run_chain(
    g: &BoxGeometry,
    prm: FkParams,
    alg: Algorithm,
    sweeps: usize,
    burnin: usize,
    thin: usize,
    seed: u64,
) -> Result<Chain<'_>> {
    Chain::new(
        g,
        prm,
        alg,
        ChainSchedule {
            sweeps,
            burnin,
            thin,
        },
        Start::Open,
        rng::stream(seed, 0),
    )
}

/// Header of a raw configuration dump.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpHeader {
    pub d: usize,
    pub t: String,
    pub mode: String,
    pub p: f64,
    pub q: f64,
    pub algorithm: String,
    pub seed: u64,
    pub edges: usize,
}

impl DumpHeader {
    pub fn new(g: &BoxGeometry, prm: &FkParams, alg: Algorithm, seed: u64) -> Self {
        let t = match g.radius() {
            Some(t) => t.to_string(),
            None => g
                .sides()
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join("x"),
        };
        Self {
            d: g.dim(),
            t,
            mode: g.mode().as_str().to_string(),
            p: prm.p(),
            q: prm.q(),
            algorithm: alg.as_str().to_string(),
            seed,
            edges: g.num_edges(),
        }
    }

    fn b(&self) -> u8 {
        u8::from(self.mode == "wired")
    }
}

/// Text dump: one header line, then one hex-encoded packed bitstring per
/// kept configuration.
pub fn write_dump<W: Write>(w: &mut W, header: &DumpHeader, configs: &[EdgeConfig]) -> io::Result<()> {
    writeln!(
        w,
        "# rcmlab-edges d={} t={} mode={} p={} q={} b={} algorithm={} seed={} edges={}",
        header.d,
        header.t,
        header.mode,
        header.p,
        header.q,
        header.b(),
        header.algorithm,
        header.seed,
        header.edges
    )?;
    for c in configs {
        writeln!(w, "{}", hex::encode(c.pack()))?;
    }
    Ok(())
}

pub fn read_dump<R: BufRead>(r: R) -> Result<(DumpHeader, Vec<EdgeConfig>)> {
    let bad = |m: &str| invalid("dump", m.to_string());
    let mut lines = r.lines();
    let head = lines
        .next()
        .ok_or_else(|| bad("empty file"))?
        .map_err(|e| bad(&e.to_string()))?;
    let mut fields = std::collections::HashMap::new();
    for tok in head.trim_start_matches("# rcmlab-edges").split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| bad("malformed header"))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| fields.get(k).cloned().ok_or_else(|| bad(&format!("missing {k}")));
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(k)) };
    let header = DumpHeader {
        d: num("d")? as usize,
        t: get("t")?,
        mode: get("mode")?,
        p: num("p")?,
        q: num("q")?,
        algorithm: get("algorithm")?,
        seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
        edges: num("edges")? as usize,
    };
    let mut configs = Vec::new();
    for line in lines {
        let line = line.map_err(|e| bad(&e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let bytes = hex::decode(line.trim()).map_err(|e| bad(&e.to_string()))?;
        configs.push(EdgeConfig::unpack(&bytes, header.edges)?);
    }
    Ok((header, configs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_box, BoundaryMode};
    use crate::rng::stream;
    use rand::Rng;

    fn random_config(n: usize, density: f64, rng: &mut McRng) -> EdgeConfig {
        EdgeConfig::from_bits((0..n).map(|_| rng.random::<f64>() < density).collect())
    }

    #[test]
    fn parameters() {
        let prm = FkParams::new(0.8, 2.0).unwrap();
        let back = FkParams::from_beta(prm.beta(), 2.0).unwrap();
        assert!((back.p() - 0.8).abs() < 1e-15);
        assert_eq!(FkParams::new(1.0, 2.0).unwrap().beta(), f64::INFINITY);
        assert_eq!(prm.integer_q(), Some(2));
        assert_eq!(FkParams::new(0.5, 1.5).unwrap().integer_q(), None);
        for (p, q, field) in [(-0.1, 1.0, "p"), (1.1, 1.0, "p"), (0.5, 0.0, "q"), (0.5, -1.0, "q")] {
            match FkParams::new(p, q) {
                Err(Error::InvalidParameter { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn weights_of_extreme_configurations() {
        let prm = FkParams::new(0.3, 2.0).unwrap();
        let g = build_box(2, 1, BoundaryMode::Free).unwrap();
        let open = log_fk_weight(&EdgeConfig::open(12), &g, &prm).unwrap();
        assert!((open - (12.0 * 0.3f64.ln() + 2.0f64.ln())).abs() < 1e-12);
        let closed = log_fk_weight(&EdgeConfig::closed(12), &g, &prm).unwrap();
        assert!((closed - (12.0 * 0.7f64.ln() + 9.0 * 2.0f64.ln())).abs() < 1e-12);
        let w = build_box(2, 1, BoundaryMode::Wired).unwrap();
        let closed = log_fk_weight(&EdgeConfig::closed(24), &w, &prm).unwrap();
        assert!((closed - (24.0 * 0.7f64.ln() + 10.0 * 2.0f64.ln())).abs() < 1e-12);
        assert!(matches!(
            log_fk_weight(&EdgeConfig::closed(5), &g, &prm),
            Err(Error::ShapeMismatch { .. })
        ));
        let zero = FkParams::new(0.0, 2.0).unwrap();
        assert!((fk_weight(&EdgeConfig::closed(12), &g, &zero).unwrap() / 512.0 - 1.0).abs() < 1e-14);
        assert_eq!(fk_weight(&EdgeConfig::open(12), &g, &zero).unwrap(), 0.0);
    }

    #[test]
    fn heatbath_probabilities() {
        let prm = FkParams::new(0.4, 3.0).unwrap();
        assert_eq!(heatbath_edge_prob(true, &prm).unwrap(), 0.4);
        let closed = heatbath_edge_prob(false, &prm).unwrap();
        assert!((closed - 0.4 / (0.4 + 3.0 * 0.6)).abs() < 1e-15);
        let q_small = FkParams::new(0.4, 0.5).unwrap();
        assert!(matches!(heatbath_edge_prob(true, &q_small), Err(Error::UnsupportedRegime(_))));
    }

    #[test]
    fn heatbath_matches_weight_ratio() {
        let mut rng = stream(3, 0);
        for mode in [BoundaryMode::Free, BoundaryMode::Wired, BoundaryMode::Periodic] {
            let g = build_box(2, 2, mode).unwrap();
            let prm = FkParams::new(0.55, 2.5).unwrap();
            let mut conn = Connectivity::new(g.num_nodes());
            for _ in 0..50 {
                let mut w = random_config(g.num_edges(), 0.5, &mut rng);
                let e = rng.random_range(0..g.num_edges());
                let ed = g.edge(e);
                let linked = conn.connected_without(&g, &w, ed.a as usize, ed.b as usize, e);
                w.set(e, true);
                let up = fk_weight(&w, &g, &prm).unwrap();
                w.set(e, false);
                let down = fk_weight(&w, &g, &prm).unwrap();
                let expect = up / (up + down);
                assert!((heatbath_edge_prob(linked, &prm).unwrap() - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn connectivity_agrees_with_union_find() {
        let g = build_box(2, 3, BoundaryMode::Wired).unwrap();
        let mut conn = Connectivity::new(g.num_nodes());
        let mut rng = stream(4, 0);
        let mut uf = UnionFind::new(g.num_nodes());
        for _ in 0..200 {
            let w = random_config(g.num_edges(), 0.45, &mut rng);
            let e = rng.random_range(0..g.num_edges());
            let ed = g.edge(e);
            uf.reset(g.num_nodes());
            for (f, edge) in g.edges().iter().enumerate() {
                if f != e && w.is_open(f) {
                    uf.union(edge.a as usize, edge.b as usize);
                }
            }
            let expect = uf.same(ed.a as usize, ed.b as usize);
            assert_eq!(conn.connected_without(&g, &w, ed.a as usize, ed.b as usize, e), expect);
        }
    }

    #[test]
    fn algorithm_domains() {
        let q_half = FkParams::new(0.5, 0.5).unwrap();
        assert!(matches!(Algorithm::Sweeny.check(&q_half), Err(Error::UnsupportedRegime(_))));
        let q_frac = FkParams::new(0.5, 1.5).unwrap();
        assert!(Algorithm::Sweeny.check(&q_frac).is_ok());
        assert!(matches!(
            Algorithm::SwendsenWang.check(&q_frac),
            Err(Error::UnsupportedAlgorithm(_))
        ));
    }

    #[test]
    fn degenerate_p_freezes_the_chain() {
        let g = build_box(2, 2, BoundaryMode::Wired).unwrap();
        let zero = FkParams::new(0.0, 2.0).unwrap();
        let one = FkParams::new(1.0, 2.0).unwrap();
        for alg in [Algorithm::Sweeny, Algorithm::SwendsenWang] {
            let mut st = ChainState::new(&g, Start::Open, stream(1, 0));
            sweep(alg, &mut st, &g, &zero).unwrap();
            assert_eq!(st.edges.count_open(), 0, "{alg:?}");
            let mut st = ChainState::new(&g, Start::Open, stream(1, 0));
            sweep(alg, &mut st, &g, &one).unwrap();
            assert_eq!(st.edges.count_open(), g.num_edges(), "{alg:?}");
        }
        let mut st = ChainState::new(&g, Start::Closed, stream(1, 0));
        sweep(Algorithm::Sweeny, &mut st, &g, &one).unwrap();
        assert_eq!(st.edges.count_open(), g.num_edges());
    }

    #[test]
    fn percolation_sweeps_are_bernoulli() {
        let g = build_box(2, 6, BoundaryMode::Free).unwrap();
        let prm = FkParams::new(0.3, 1.0).unwrap();
        for alg in [Algorithm::Sweeny, Algorithm::SwendsenWang] {
            let chain = run_chain(&g, prm, alg, 400, 5, 1, 9).unwrap();
            let (mut open, mut total) = (0usize, 0usize);
            for w in chain {
                open += w.count_open();
                total += w.len();
            }
            let f = open as f64 / total as f64;
            let se = (0.3f64 * 0.7 / total as f64).sqrt();
            assert!((f - 0.3).abs() < 5.0 * se, "{alg:?}: {f}");
        }
    }

    #[test]
    fn chains_are_reproducible() {
        let g = build_box(2, 3, BoundaryMode::Periodic).unwrap();
        let prm = FkParams::new(0.6, 2.0).unwrap();
        for alg in [Algorithm::Sweeny, Algorithm::SwendsenWang] {
            let a: Vec<EdgeConfig> = run_chain(&g, prm, alg, 20, 3, 2, 77).unwrap().collect();
            let b: Vec<EdgeConfig> = run_chain(&g, prm, alg, 20, 3, 2, 77).unwrap().collect();
            let c: Vec<EdgeConfig> = run_chain(&g, prm, alg, 20, 3, 2, 78).unwrap().collect();
            assert_eq!(a.len(), 20);
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn schedule_validation() {
        let bad = ChainSchedule {
            sweeps: 10,
            burnin: 0,
            thin: 0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dump_round_trip() {
        let g = build_box(2, 2, BoundaryMode::Wired).unwrap();
        let prm = FkParams::new(0.7, 2.0).unwrap();
        let configs: Vec<EdgeConfig> = run_chain(&g, prm, Algorithm::SwendsenWang, 5, 2, 1, 1).unwrap().collect();
        let header = DumpHeader::new(&g, &prm, Algorithm::SwendsenWang, 1);
        let mut buf = Vec::new();
        write_dump(&mut buf, &header, &configs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# rcmlab-edges d=2 t=2 mode=wired p=0.7 q=2 b=1 algorithm=swendsen-wang seed=1"));
        let (h, back) = read_dump(buf.as_slice()).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, configs);
    }
}
