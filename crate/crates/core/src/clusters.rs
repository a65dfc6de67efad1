//! Cluster decomposition of edge configurations and the cluster functionals
//! estimated from samples of them.
//!
//! Translation-averaged estimators run over a [`Window`] of base points.
//! Offsets `k` must keep `x + k` inside the box, so the window margin bounds
//! the admissible offsets.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fk::EdgeConfig;
use crate::lattice::{BoundaryMode, BoxGeometry, Window};
use crate::stats;
use crate::unionfind::UnionFind;

/// Finite-volume stand-in for the infinite cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyRule {
    /// Wired: the cluster of the ghost. Free: every cluster holding an open
    /// bond from the outer shell of the box into its interior.
    Boundary,
    /// The largest cluster (lowest label on ties), if it has two or more
    /// vertices.
    Largest,
    /// Clusters that wind around the torus (periodic boxes only).
    Winding,
    /// No proxy: every cluster counts as finite.
    None,
}

impl ProxyRule {
    pub fn default_for(mode: BoundaryMode) -> Self {
        match mode {
            BoundaryMode::Free | BoundaryMode::Wired => ProxyRule::Boundary,
            BoundaryMode::Periodic => ProxyRule::Largest,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ProxyRule::Boundary => "boundary",
            ProxyRule::Largest => "largest",
            ProxyRule::Winding => "winding",
            ProxyRule::None => "none",
        }
    }

    pub fn check(&self, mode: BoundaryMode) -> Result<()> {
        match (self, mode) {
            (ProxyRule::Boundary, BoundaryMode::Periodic) => {
                Err(invalid("proxy", "a torus has no boundary; use largest or winding"))
            }
            (ProxyRule::Winding, m) if m != BoundaryMode::Periodic => {
                Err(invalid("proxy", "winding needs a periodic box"))
            }
            _ => Ok(()),
        }
    }
}

/// Partition of the box vertices into open clusters.
///
/// Cluster labels are dense and ordered by the smallest vertex index of
/// each cluster. The ghost of a wired box is not a vertex and never counts
/// towards sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDecomposition {
    labels: Vec<u32>,
    sizes: Vec<u32>,
    reps: Vec<u32>,
    proxy: Vec<bool>,
    ghost_label: Option<u32>,
    rule: ProxyRule,
}

/// Decomposition with the default proxy rule of the geometry's mode.
pub fn components(omega: &EdgeConfig, g: &BoxGeometry) -> Result<ClusterDecomposition> {
    ClusterDecomposition::new(omega, g, ProxyRule::default_for(g.mode()))
}

/// Vertex indices of the proxy Î.
pub fn infinite_proxy(dec: &ClusterDecomposition) -> Vec<usize> {
    (0..dec.num_vertices()).filter(|&v| dec.in_proxy(v)).collect()
}

impl ClusterDecomposition {
    pub fn new(omega: &EdgeConfig, g: &BoxGeometry, rule: ProxyRule) -> Result<Self> {
        let mut uf = UnionFind::new(g.num_nodes());
        Self::with_scratch(omega, g, rule, &mut uf)
    }

    /// As [`ClusterDecomposition::new`], reusing a union-find buffer.
    pub fn with_scratch(
        omega: &EdgeConfig,
        g: &BoxGeometry,
        rule: ProxyRule,
        uf: &mut UnionFind,
    ) -> Result<Self> {
        omega.check(g)?;
        rule.check(g.mode())?;
        let n = g.num_vertices();
        uf.reset(g.num_nodes());
        for (e, edge) in g.edges().iter().enumerate() {
            if omega.is_open(e) {
                uf.union(edge.a as usize, edge.b as usize);
            }
        }
        const UNSET: u32 = u32::MAX;
        let mut root_label = vec![UNSET; g.num_nodes()];
        let mut labels = Vec::with_capacity(n);
        let mut sizes = Vec::new();
        let mut reps = Vec::new();
        for v in 0..n {
            let r = uf.find(v);
            if root_label[r] == UNSET {
                root_label[r] = sizes.len() as u32;
                sizes.push(0);
                reps.push(v as u32);
            }
            let l = root_label[r];
            sizes[l as usize] += 1;
            labels.push(l);
        }
        let ghost_label = g.ghost().and_then(|gh| {
            let l = root_label[uf.find(gh)];
            (l != UNSET).then_some(l)
        });
        let mut dec = Self {
            proxy: vec![false; sizes.len()],
            labels,
            sizes,
            reps,
            ghost_label,
            rule,
        };
        dec.mark_proxy(omega, g);
        Ok(dec)
    }

    fn mark_proxy(&mut self, omega: &EdgeConfig, g: &BoxGeometry) {
        match self.rule {
            ProxyRule::None => {}
            ProxyRule::Boundary => match g.mode() {
                BoundaryMode::Wired => {
                    if let Some(l) = self.ghost_label {
                        self.proxy[l as usize] = true;
                    }
                }
                _ => {
                    for e in 0..g.num_inner_edges() {
                        if omega.is_open(e) && g.crosses_into_shell(e) {
                            let l = self.labels[g.edge(e).a as usize];
                            self.proxy[l as usize] = true;
                        }
                    }
                }
            },
            ProxyRule::Largest => {
                if let Some((l, s)) = self.largest() {
                    if s >= 2 {
                        self.proxy[l] = true;
                    }
                }
            }
            ProxyRule::Winding => {
                for l in winding_clusters(self, omega, g) {
                    self.proxy[l] = true;
                }
            }
        }
    }

    pub fn rule(&self) -> ProxyRule {
        self.rule
    }

    pub fn num_vertices(&self) -> usize {
        self.labels.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.sizes.len()
    }

    #[inline]
    pub fn label(&self, v: usize) -> usize {
        self.labels[v] as usize
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of vertices in cluster `l`.
    pub fn size(&self, l: usize) -> usize {
        self.sizes[l] as usize
    }

    pub fn sizes(&self) -> &[u32] {
        &self.sizes
    }

    /// Smallest vertex index of cluster `l`.
    pub fn representative(&self, l: usize) -> usize {
        self.reps[l] as usize
    }

    /// |C(v)|.
    #[inline]
    pub fn cluster_size(&self, v: usize) -> usize {
        self.sizes[self.labels[v] as usize] as usize
    }

    #[inline]
    pub fn in_proxy(&self, v: usize) -> bool {
        self.proxy[self.labels[v] as usize]
    }

    pub fn is_proxy_cluster(&self, l: usize) -> bool {
        self.proxy[l]
    }

    /// Label of the cluster joined to the ghost, if any vertex is.
    pub fn ghost_label(&self) -> Option<usize> {
        self.ghost_label.map(|l| l as usize)
    }

    pub fn proxy_size(&self) -> usize {
        self.sizes
            .iter()
            .zip(&self.proxy)
            .filter(|(_, &p)| p)
            .map(|(&s, _)| s as usize)
            .sum()
    }

    /// 0/1 indicator of Î per vertex.
    pub fn proxy_indicator(&self) -> Vec<u8> {
        self.labels
            .iter()
            .map(|&l| u8::from(self.proxy[l as usize]))
            .collect()
    }

    /// Label and size of the largest cluster; ties go to the lower label.
    pub fn largest(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        for (l, &s) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(_, b)| s as usize > b) {
                best = Some((l, s as usize));
            }
        }
        best
    }

    /// Number of finite (non-proxy) clusters of each size.
    pub fn size_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for (l, &s) in self.sizes.iter().enumerate() {
            if !self.proxy[l] {
                *h.entry(s as usize).or_insert(0) += 1;
            }
        }
        h
    }

    /// Members of each cluster in increasing vertex order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s as usize)).collect();
        for (v, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(v);
        }
        out
    }

    /// |A ∩ W| for every cluster A.
    pub fn window_sizes(&self, g: &BoxGeometry, w: &Window) -> Vec<u64> {
        let mut out = vec![0u64; self.sizes.len()];
        for (start, len) in w.runs(g) {
            for &l in &self.labels[start..start + len] {
                out[l as usize] += 1;
            }
        }
        out
    }

    /// |Î ∩ W|.
    pub fn proxy_count(&self, g: &BoxGeometry, w: &Window) -> u64 {
        let mut c = 0u64;
        for (start, len) in w.runs(g) {
            for &l in &self.labels[start..start + len] {
                c += u64::from(self.proxy[l as usize]);
            }
        }
        c
    }

    /// Σ over finite clusters A of |A ∩ W|².
    pub fn finite_sum_sq(&self, g: &BoxGeometry, w: &Window) -> u64 {
        self.window_sizes(g, w)
            .iter()
            .enumerate()
            .filter(|(l, _)| !self.proxy[*l])
            .map(|(_, &s)| s * s)
            .sum()
    }
}

fn winding_clusters(dec: &ClusterDecomposition, omega: &EdgeConfig, g: &BoxGeometry) -> Vec<usize> {
    let d = g.dim();
    let n = g.num_vertices();
    let mut disp = vec![0i64; n * d];
    let mut seen = vec![false; n];
    let mut winds = vec![false; dec.num_clusters()];
    let mut queue = VecDeque::new();
    for l in 0..dec.num_clusters() {
        let root = dec.representative(l);
        seen[root] = true;
        queue.push_back(root);
        while let Some(x) = queue.pop_front() {
            for &(w, e) in g.neighbors(x) {
                let (w, e) = (w as usize, e as usize);
                if !omega.is_open(e) {
                    continue;
                }
                let (axis, sign) = g.edge_step(e);
                let step = if g.edge(e).a as usize == x { sign } else { -sign };
                if !seen[w] {
                    seen[w] = true;
                    for i in 0..d {
                        disp[w * d + i] = disp[x * d + i];
                    }
                    disp[w * d + axis] += step;
                    queue.push_back(w);
                } else {
                    let mismatch = (0..d).any(|i| {
                        let expect = disp[x * d + i] + if i == axis { step } else { 0 };
                        disp[w * d + i] != expect
                    });
                    if mismatch {
                        winds[l] = true;
                    }
                }
            }
        }
    }
    (0..winds.len()).filter(|&l| winds[l]).collect()
}

/// Cluster labels by breadth-first search, ordered like
/// [`ClusterDecomposition::labels`]. Ghost connections are ignored, so this
/// agrees with the union-find labelling on free and periodic boxes.
pub fn bfs_labels(omega: &EdgeConfig, g: &BoxGeometry) -> Vec<u32> {
    let n = g.num_vertices();
    let mut labels = vec![u32::MAX; n];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for s in 0..n {
        if labels[s] != u32::MAX {
            continue;
        }
        labels[s] = next;
        queue.push_back(s);
        while let Some(x) = queue.pop_front() {
            for &(w, e) in g.neighbors(x) {
                let w = w as usize;
                if w < n && omega.is_open(e as usize) && labels[w] == u32::MAX {
                    labels[w] = next;
                    queue.push_back(w);
                }
            }
        }
        next += 1;
    }
    labels
}

/// Both sides of Σ_{A finite} |A ∩ W|² = Σ_{x ∈ W, x ∉ Î} |C(x) ∩ W|. The
/// right-hand side is evaluated by a fresh search from every window point.
pub fn sum_sq_identity_check(
    dec: &ClusterDecomposition,
    omega: &EdgeConfig,
    g: &BoxGeometry,
    w: &Window,
) -> (u64, u64) {
    let lhs = dec.finite_sum_sq(g, w);
    let n = g.num_vertices();
    let mut stamp = vec![usize::MAX; g.num_nodes()];
    let mut queue = VecDeque::new();
    let mut rhs = 0u64;
    for x in w.vertices(g) {
        if dec.in_proxy(x) {
            continue;
        }
        stamp[x] = x;
        queue.push_back(x);
        let mut count = 0u64;
        while let Some(y) = queue.pop_front() {
            if y < n && w.contains(g, y) {
                count += 1;
            }
            for &(z, e) in g.neighbors(y) {
                let z = z as usize;
                if omega.is_open(e as usize) && stamp[z] != x {
                    stamp[z] = x;
                    queue.push_back(z);
                }
            }
        }
        rhs += count;
    }
    (lhs, rhs)
}

fn nonempty<T>(xs: &[T]) -> Result<()> {
    if xs.is_empty() {
        Err(Error::EmptySamples)
    } else {
        Ok(())
    }
}

/// Fraction of window points in Î, averaged over samples.
pub fn theta_hat(decs: &[ClusterDecomposition], g: &BoxGeometry, w: &Window) -> Result<f64> {
    nonempty(decs)?;
    let tot: u64 = decs.iter().map(|d| d.proxy_count(g, w)).sum();
    Ok(tot as f64 / (decs.len() * w.size()) as f64)
}

/// Σ_{A finite} |A ∩ W|² / |W|, averaged over samples. On the full box
/// this is the spatial average of |C'(x)|.
pub fn chi_f_hat(decs: &[ClusterDecomposition], g: &BoxGeometry, w: &Window) -> Result<f64> {
    nonempty(decs)?;
    let tot: u64 = decs.iter().map(|d| d.finite_sum_sq(g, w)).sum();
    Ok(tot as f64 / (decs.len() * w.size()) as f64)
}

fn check_offset_room(g: &BoxGeometry, w: &Window, reach: usize) -> Result<()> {
    let m = w.margin_in(g);
    if reach > m {
        return Err(Error::InvalidWindow(format!(
            "offsets up to {reach} need a window margin >= {reach}, have {m}"
        )));
    }
    Ok(())
}

fn offset_delta(g: &BoxGeometry, k: &[i64]) -> isize {
    k.iter()
        .zip(g.strides())
        .map(|(&ki, &s)| ki as isize * s as isize)
        .sum()
}

/// All offsets with ‖k‖_∞ ≤ cutoff, in lexicographic order.
pub fn offsets_within(d: usize, cutoff: usize) -> Vec<Vec<i64>> {
    let c = cutoff as i64;
    let mut out = vec![Vec::new()];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|p: Vec<i64>| {
                (-c..=c).map(move |x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    out
}

/// Streaming estimator of the two-point function of Î and of the
/// truncated variance series Σ_{‖k‖_∞ ≤ K} (φ(x ∈ Î, x+k ∈ Î) - θ²).
#[derive(Debug, Clone)]
pub struct TwoPointAccumulator {
    cutoff: usize,
    offsets: Vec<Vec<i64>>,
    deltas: Vec<isize>,
    last_shell: Vec<bool>,
    runs: Vec<(usize, usize)>,
    window_size: usize,
    sums: Vec<u64>,
    per_sample_pairs: Vec<f64>,
    per_sample_count: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSqEstimate {
    pub cutoff: usize,
    pub samples: usize,
    pub theta: f64,
    /// Truncated series value.
    pub value: f64,
    /// Jackknife standard error over samples.
    pub se: f64,
    /// Contribution of the outermost shell ‖k‖_∞ = K, a heuristic for the
    /// truncation error.
    pub tail: f64,
    /// Two-point estimates, aligned with [`offsets_within`].
    pub two_point: Vec<f64>,
}

impl TwoPointAccumulator {
    pub fn new(g: &BoxGeometry, w: &Window, cutoff: usize) -> Result<Self> {
        check_offset_room(g, w, cutoff)?;
        let offsets = offsets_within(g.dim(), cutoff);
        let deltas = offsets.iter().map(|k| offset_delta(g, k)).collect();
        let last_shell = offsets
            .iter()
            .map(|k| k.iter().map(|x| x.unsigned_abs() as usize).max() == Some(cutoff))
            .collect();
        Ok(Self {
            cutoff,
            sums: vec![0; offsets.len()],
            offsets,
            deltas,
            last_shell,
            runs: w.runs(g),
            window_size: w.size(),
            per_sample_pairs: Vec::new(),
            per_sample_count: Vec::new(),
        })
    }

    pub fn offsets(&self) -> &[Vec<i64>] {
        &self.offsets
    }

    /// Add one sample, given its Î indicator over all vertices.
    pub fn add(&mut self, ind: &[u8]) {
        let mut count = 0u64;
        for &(s, l) in &self.runs {
            count += ind[s..s + l].iter().map(|&b| u64::from(b)).sum::<u64>();
        }
        let mut pairs = 0u64;
        for (slot, &delta) in self.sums.iter_mut().zip(&self.deltas) {
            let mut t = 0u64;
            for &(s, l) in &self.runs {
                let shifted = (s as isize + delta) as usize;
                t += ind[s..s + l]
                    .iter()
                    .zip(&ind[shifted..shifted + l])
                    .map(|(&a, &b)| u64::from(a & b))
                    .sum::<u64>();
            }
            *slot += t;
            pairs += t;
        }
        self.per_sample_pairs.push(pairs as f64);
        self.per_sample_count.push(count as f64);
    }

    pub fn samples(&self) -> usize {
        self.per_sample_count.len()
    }

    /// Append the samples of another accumulator over the same window.
    pub fn merge(&mut self, other: Self) {
        debug_assert_eq!(self.deltas, other.deltas);
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.per_sample_pairs.extend(other.per_sample_pairs);
        self.per_sample_count.extend(other.per_sample_count);
    }

    pub fn finish(&self) -> Result<SigmaSqEstimate> {
        let n = self.samples();
        if n == 0 {
            return Err(Error::EmptySamples);
        }
        let norm = (n * self.window_size) as f64;
        let theta = self.per_sample_count.iter().sum::<f64>() / norm;
        let th2 = theta * theta;
        let two_point: Vec<f64> = self.sums.iter().map(|&s| s as f64 / norm).collect();
        let value: f64 = two_point.iter().map(|t| t - th2).sum();
        let tail: f64 = two_point
            .iter()
            .zip(&self.last_shell)
            .filter(|(_, &l)| l)
            .map(|(t, _)| t - th2)
            .sum();
        let m = self.offsets.len() as f64;
        let ta: f64 = self.per_sample_pairs.iter().sum();
        let tb: f64 = self.per_sample_count.iter().sum();
        let w = self.window_size as f64;
        let se = stats::jackknife_se(n, |i| {
            let k = (n - 1) as f64 * w;
            let th = (tb - self.per_sample_count[i]) / k;
            (ta - self.per_sample_pairs[i]) / k - m * th * th
        });
        Ok(SigmaSqEstimate {
            cutoff: self.cutoff,
            samples: n,
            theta,
            value,
            se,
            tail,
            two_point,
        })
    }
}

/// φ(x ∈ Î, x + k ∈ Î) averaged over samples and window points x.
pub fn two_point_hat(
    decs: &[ClusterDecomposition],
    g: &BoxGeometry,
    w: &Window,
    k: &[i64],
) -> Result<f64> {
    nonempty(decs)?;
    let reach = k.iter().map(|x| x.unsigned_abs() as usize).max().unwrap_or(0);
    check_offset_room(g, w, reach)?;
    let delta = offset_delta(g, k);
    let runs = w.runs(g);
    let mut tot = 0u64;
    for d in decs {
        for &(s, l) in &runs {
            for x in s..s + l {
                let y = (x as isize + delta) as usize;
                tot += u64::from(d.in_proxy(x) && d.in_proxy(y));
            }
        }
    }
    Ok(tot as f64 / (decs.len() * w.size()) as f64)
}

/// Truncated series for σ² with cutoff K.
pub fn sigma_sq_hat(
    decs: &[ClusterDecomposition],
    g: &BoxGeometry,
    w: &Window,
    cutoff: usize,
) -> Result<SigmaSqEstimate> {
    nonempty(decs)?;
    let mut acc = TwoPointAccumulator::new(g, w, cutoff)?;
    for d in decs {
        acc.add(&d.proxy_indicator());
    }
    acc.finish()
}

/// Streaming estimator of the summability diagnostics along e₁ with
/// r_n = n/4: the finite-cluster tail P(∞ > |C(0)| ≥ r_n) and the
/// covariance of 1{|C(x)| ≥ r_n} and 1{|C(x + n e₁)| ≥ r_n}, Î counting
/// as infinite. Both x and x + n e₁ range over the window.
#[derive(Debug, Clone)]
pub struct ConditionsAccumulator {
    max_n: usize,
    window: Window,
    stride: usize,
    tail_hits: Vec<u64>,
    tail_norm: u64,
    sxy: Vec<u64>,
    sx: Vec<u64>,
    sy: Vec<u64>,
    pairs: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionsEstimate {
    pub n: Vec<usize>,
    pub tail: Vec<f64>,
    pub covariance: Vec<f64>,
}

impl ConditionsAccumulator {
    pub fn new(g: &BoxGeometry, w: &Window, max_n: usize) -> Result<Self> {
        if max_n == 0 {
            return Err(invalid("max_n", "must be >= 1"));
        }
        if w.side(0) <= max_n {
            return Err(Error::InvalidWindow(format!(
                "window side {} along e1 cannot hold pairs at distance {max_n}",
                w.side(0)
            )));
        }
        Ok(Self {
            max_n,
            window: w.clone(),
            stride: g.strides()[0],
            tail_hits: vec![0; max_n],
            tail_norm: 0,
            sxy: vec![0; max_n],
            sx: vec![0; max_n],
            sy: vec![0; max_n],
            pairs: vec![0; max_n],
        })
    }

    pub fn add(&mut self, dec: &ClusterDecomposition, g: &BoxGeometry) {
        let verts = self.window.vertices(g);
        self.tail_norm += verts.len() as u64;
        let size = |v: usize| -> f64 {
            if dec.in_proxy(v) {
                f64::INFINITY
            } else {
                dec.cluster_size(v) as f64
            }
        };
        let hi0 = self.window.hi()[0];
        let first: Vec<usize> = verts.iter().map(|&x| x / self.stride).collect();
        for n in 1..=self.max_n {
            let r = n as f64 / 4.0;
            let i = n - 1;
            for (&x, &x0) in verts.iter().zip(&first) {
                let sx = size(x);
                if sx.is_finite() && sx >= r {
                    self.tail_hits[i] += 1;
                }
                if x0 + n < hi0 {
                    let y = x + n * self.stride;
                    let a = u64::from(sx >= r);
                    let b = u64::from(size(y) >= r);
                    self.sxy[i] += a * b;
                    self.sx[i] += a;
                    self.sy[i] += b;
                    self.pairs[i] += 1;
                }
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.tail_hits.iter_mut().zip(&other.tail_hits) {
            *a += b;
        }
        for (a, b) in self.sxy.iter_mut().zip(&other.sxy) {
            *a += b;
        }
        for (a, b) in self.sx.iter_mut().zip(&other.sx) {
            *a += b;
        }
        for (a, b) in self.sy.iter_mut().zip(&other.sy) {
            *a += b;
        }
        for (a, b) in self.pairs.iter_mut().zip(&other.pairs) {
            *a += b;
        }
        self.tail_norm += other.tail_norm;
    }

    pub fn finish(&self) -> Result<ConditionsEstimate> {
        if self.tail_norm == 0 {
            return Err(Error::EmptySamples);
        }
        let tail = self
            .tail_hits
            .iter()
            .map(|&h| h as f64 / self.tail_norm as f64)
            .collect();
        let covariance = (0..self.max_n)
            .map(|i| {
                let p = self.pairs[i] as f64;
                self.sxy[i] as f64 / p - (self.sx[i] as f64 / p) * (self.sy[i] as f64 / p)
            })
            .collect();
        Ok(ConditionsEstimate {
            n: (1..=self.max_n).collect(),
            tail,
            covariance,
        })
    }
}

pub fn condition_m_hat(
    decs: &[ClusterDecomposition],
    g: &BoxGeometry,
    w: &Window,
    max_n: usize,
) -> Result<Vec<f64>> {
    conditions(decs, g, w, max_n).map(|c| c.tail)
}

pub fn condition_c_hat(
    decs: &[ClusterDecomposition],
    g: &BoxGeometry,
    w: &Window,
    max_n: usize,
) -> Result<Vec<f64>> {
    conditions(decs, g, w, max_n).map(|c| c.covariance)
}

fn conditions(
    decs: &[ClusterDecomposition],
    g: &BoxGeometry,
    w: &Window,
    max_n: usize,
) -> Result<ConditionsEstimate> {
    nonempty(decs)?;
    let mut acc = ConditionsAccumulator::new(g, w, max_n)?;
    for d in decs {
        acc.add(d, g);
    }
    acc.finish()
}

/// Streaming estimator of φ(x ↔ ∂B(x, n)) for n = 1..=n_max, with B the
/// ℓ¹ ball, averaged over window points x.
///
/// A cluster reaches ℓ¹ distance n from x iff max over sign vectors s of
/// (max_{y ∈ C} s·y) - s·x is at least n, so each sample costs one pass
/// over the vertices plus one pass over the window.
#[derive(Debug, Clone)]
pub struct ConnectionAccumulator {
    n_max: usize,
    window: Window,
    hits: Vec<u64>,
    norm: u64,
}

impl ConnectionAccumulator {
    pub fn new(g: &BoxGeometry, w: &Window, n_max: usize) -> Result<Self> {
        check_offset_room(g, w, n_max)?;
        Ok(Self {
            n_max,
            window: w.clone(),
            hits: vec![0; n_max + 1],
            norm: 0,
        })
    }

    pub fn add(&mut self, dec: &ClusterDecomposition, g: &BoxGeometry) {
        let d = g.dim();
        let signs = 1usize << d;
        let dot = |local: &[usize], s: usize| -> i64 {
            (0..d)
                .map(|i| if s >> i & 1 == 1 { -(local[i] as i64) } else { local[i] as i64 })
                .sum()
        };
        let mut ext = vec![i64::MIN; dec.num_clusters() * signs];
        let mut local = vec![0usize; d];
        for v in 0..dec.num_vertices() {
            g.local_into(v, &mut local);
            let l = dec.label(v);
            for s in 0..signs {
                let slot = &mut ext[l * signs + s];
                *slot = (*slot).max(dot(&local, s));
            }
        }
        for x in self.window.vertices(g) {
            g.local_into(x, &mut local);
            let l = dec.label(x);
            let reach = (0..signs)
                .map(|s| ext[l * signs + s] - dot(&local, s))
                .max()
                .unwrap_or(0)
                .max(0) as usize;
            for n in 0..=reach.min(self.n_max) {
                self.hits[n] += 1;
            }
            self.norm += 1;
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.hits.iter_mut().zip(&other.hits) {
            *a += b;
        }
        self.norm += other.norm;
    }

    /// Estimates indexed by n = 0..=n_max.
    pub fn finish(&self) -> Result<Vec<f64>> {
        if self.norm == 0 {
            return Err(Error::EmptySamples);
        }
        Ok(self.hits.iter().map(|&h| h as f64 / self.norm as f64).collect())
    }
}

pub fn boundary_connection_hat(
    decs: &[ClusterDecomposition],
    g: &BoxGeometry,
    w: &Window,
    n: usize,
) -> Result<f64> {
    nonempty(decs)?;
    let mut acc = ConnectionAccumulator::new(g, w, n)?;
    for d in decs {
        acc.add(d, g);
    }
    Ok(acc.finish()?[n])
}

/// Flat summary of a set of sampled decompositions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub samples: usize,
    pub proxy: ProxyRule,
    pub window_size: usize,
    pub theta: f64,
    pub theta_se: f64,
    pub chi_f: f64,
    pub chi_f_se: f64,
    /// (size, mean number of finite clusters of that size per sample).
    pub size_histogram: Vec<(usize, f64)>,
    pub sigma_sq: Option<SigmaSqEstimate>,
}

impl ClusterReport {
    /// `cutoff` of `None` skips the two-point series.
    pub fn from_samples(
        decs: &[ClusterDecomposition],
        g: &BoxGeometry,
        w: &Window,
        cutoff: Option<usize>,
    ) -> Result<Self> {
        nonempty(decs)?;
        let ws = w.size() as f64;
        let th: Vec<f64> = decs.iter().map(|d| d.proxy_count(g, w) as f64 / ws).collect();
        let ch: Vec<f64> = decs.iter().map(|d| d.finite_sum_sq(g, w) as f64 / ws).collect();
        let se = |xs: &[f64]| {
            if xs.len() > 1 {
                (stats::variance(xs) / xs.len() as f64).sqrt()
            } else {
                f64::NAN
            }
        };
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for d in decs {
            for (s, c) in d.size_histogram() {
                *hist.entry(s).or_insert(0) += c;
            }
        }
        let n = decs.len() as f64;
        Ok(Self {
            samples: decs.len(),
            proxy: decs[0].rule(),
            window_size: w.size(),
            theta: stats::mean(&th),
            theta_se: se(&th),
            chi_f: stats::mean(&ch),
            chi_f_se: se(&ch),
            size_histogram: hist.into_iter().map(|(s, c)| (s, c as f64 / n)).collect(),
            sigma_sq: cutoff.map(|k| sigma_sq_hat(decs, g, w, k)).transpose()?,
        })
    }
}
