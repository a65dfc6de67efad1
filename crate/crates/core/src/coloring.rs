//! Divide-and-color: finite clusters draw independent colors from ν, the
//! proxy clusters take the ground color. Also the empirical color vector,
//! the phase detector, the predicted covariance, and a single-site Potts
//! heat bath used as an independent route to the same spin law.
//!
//! Colors are 0-based here (`0..q_c`); files and configs use 1-based
//! colors. For two colors the spin of color 0 is +1 and of color 1 is -1.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clusters::{ClusterDecomposition, ProxyRule};
use crate::error::{invalid, Error, Result};
use crate::exact::ExactDistribution;
use crate::fk::EdgeConfig;
use crate::lattice::{BoxGeometry, Window};
use crate::unionfind::UnionFind;

/// Color law ν, ground color r and an optional mixing law γ over ground
/// colors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorParams {
    nu: Vec<f64>,
    ground: usize,
    gamma: Option<Vec<f64>>,
}

fn check_prob_vector(field: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(invalid(field, "entries must be finite and >= 0"));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(invalid(field, format!("entries must sum to 1, got {s}")));
    }
    Ok(())
}

impl ColorParams {
    pub fn new(nu: Vec<f64>, ground: usize) -> Result<Self> {
        if nu.len() < 2 || nu.len() > 255 {
            return Err(invalid("colors", format!("need 2..=255 colors, got {}", nu.len())));
        }
        check_prob_vector("nu", &nu)?;
        if ground >= nu.len() {
            return Err(invalid("ground", format!("color {ground} out of range")));
        }
        Ok(Self {
            nu,
            ground,
            gamma: None,
        })
    }

    pub fn uniform(q_c: usize, ground: usize) -> Result<Self> {
        Self::new(vec![1.0 / q_c as f64; q_c], ground)
    }

    pub fn with_mixture(mut self, gamma: Vec<f64>) -> Result<Self> {
        if gamma.len() != self.nu.len() {
            return Err(invalid("mixture", "must have one weight per color"));
        }
        check_prob_vector("mixture", &gamma)?;
        self.gamma = Some(gamma);
        Ok(self)
    }

    pub fn q_c(&self) -> usize {
        self.nu.len()
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn ground(&self) -> usize {
        self.ground
    }

    pub fn gamma(&self) -> Option<&[f64]> {
        self.gamma.as_deref()
    }

    /// Ground color for one replicate: Z ~ γ if a mixture is set, else r.
    pub fn draw_ground<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.gamma {
            Some(g) => categorical(g, rng),
            None => self.ground,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        categorical(&self.nu, rng)
    }
}

fn categorical<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in w.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Color per vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpinConfig {
    colors: Vec<u8>,
    q_c: usize,
}

impl SpinConfig {
    pub fn new(colors: Vec<u8>, q_c: usize) -> Result<Self> {
        if let Some(&c) = colors.iter().find(|&&c| c as usize >= q_c) {
            return Err(invalid("colors", format!("color {c} out of range 0..{q_c}")));
        }
        Ok(Self { colors, q_c })
    }

    pub fn constant(n: usize, color: usize, q_c: usize) -> Self {
        Self {
            colors: vec![color as u8; n],
            q_c,
        }
    }

    pub fn colors(&self) -> &[u8] {
        &self.colors
    }

    pub fn color(&self, v: usize) -> usize {
        self.colors[v] as usize
    }

    pub fn q_c(&self) -> usize {
        self.q_c
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    /// Whether every cluster of `dec` is monochromatic.
    pub fn is_monochromatic_on(&self, dec: &ClusterDecomposition) -> bool {
        let mut seen = vec![u8::MAX; dec.num_clusters()];
        for (v, &c) in self.colors.iter().enumerate() {
            let l = dec.label(v);
            if seen[l] == u8::MAX {
                seen[l] = c;
            } else if seen[l] != c {
                return false;
            }
        }
        true
    }
}

/// One ν-draw per finite cluster in label order; proxy clusters get the
/// ground color of `cp`.
pub fn color_clusters<R: Rng + ?Sized>(
    dec: &ClusterDecomposition,
    cp: &ColorParams,
    rng: &mut R,
) -> SpinConfig {
    color_clusters_with_ground(dec, cp, cp.ground(), rng)
}

pub fn color_clusters_with_ground<R: Rng + ?Sized>(
    dec: &ClusterDecomposition,
    cp: &ColorParams,
    ground: usize,
    rng: &mut R,
) -> SpinConfig {
    let cluster_color: Vec<u8> = (0..dec.num_clusters())
        .map(|l| {
            if dec.is_proxy_cluster(l) {
                ground as u8
            } else {
                cp.draw(rng) as u8
            }
        })
        .collect();
    SpinConfig {
        colors: dec.labels().iter().map(|&l| cluster_color[l as usize]).collect(),
        q_c: cp.q_c(),
    }
}

/// Factor coloring: every vertex carries an independent ν-distributed
/// mark, and a finite cluster takes the mark of its smallest vertex.
pub fn color_by_marks<R: Rng + ?Sized>(
    dec: &ClusterDecomposition,
    cp: &ColorParams,
    rng: &mut R,
) -> SpinConfig {
    let marks: Vec<u8> = (0..dec.num_vertices()).map(|_| cp.draw(rng) as u8).collect();
    color_from_marks(dec, cp, &marks)
}

/// The factor map of [`color_by_marks`] for given marks.
pub fn color_from_marks(dec: &ClusterDecomposition, cp: &ColorParams, marks: &[u8]) -> SpinConfig {
    let colors = dec
        .labels()
        .iter()
        .map(|&l| {
            let l = l as usize;
            if dec.is_proxy_cluster(l) {
                cp.ground() as u8
            } else {
                marks[dec.representative(l)]
            }
        })
        .collect();
    SpinConfig {
        colors,
        q_c: cp.q_c(),
    }
}

/// Color counts over a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalVector {
    pub counts: Vec<u64>,
    pub size: u64,
    /// (n₀ - n₁) / |W| when there are two colors.
    pub magnetization: Option<f64>,
}

pub fn empirical_vector(s: &SpinConfig, g: &BoxGeometry, w: &Window) -> EmpiricalVector {
    let mut counts = vec![0u64; s.q_c];
    for (start, len) in w.runs(g) {
        for &c in &s.colors[start..start + len] {
            counts[c as usize] += 1;
        }
    }
    let size = w.size() as u64;
    let magnetization =
        (s.q_c == 2).then(|| (counts[0] as f64 - counts[1] as f64) / size as f64);
    EmpiricalVector {
        counts,
        size,
        magnetization,
    }
}

/// argmax_k n_k - |W|(1 - θ) ν_k, lowest index on ties.
pub fn detect_phase(ev: &EmpiricalVector, theta: f64, nu: &[f64]) -> Result<usize> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(invalid("theta", format!("must lie in [0, 1], got {theta}")));
    }
    if nu.len() != ev.counts.len() {
        return Err(Error::ShapeMismatch {
            expected: ev.counts.len(),
            got: nu.len(),
        });
    }
    let scale = ev.size as f64 * (1.0 - theta);
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (k, (&n, &v)) in ev.counts.iter().zip(nu).enumerate() {
        let val = n as f64 - scale * v;
        if val > best_val {
            best_val = val;
            best = k;
        }
    }
    Ok(best)
}

/// C = χ(D_ν - ννᵀ) + σ²(e_r - ν)(e_r - ν)ᵀ.
pub fn predicted_covariance(
    cp: &ColorParams,
    chi_f: f64,
    sigma_sq: f64,
    theta: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(chi_f >= 0.0) {
        return Err(invalid("chi_f", format!("must be >= 0, got {chi_f}")));
    }
    if !(sigma_sq >= 0.0) {
        return Err(invalid("sigma_sq", format!("must be >= 0, got {sigma_sq}")));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(invalid("theta", format!("must lie in [0, 1], got {theta}")));
    }
    let nu = cp.nu();
    let q = nu.len();
    let d: Vec<f64> = (0..q)
        .map(|i| f64::from(u8::from(i == cp.ground())) - nu[i])
        .collect();
    Ok((0..q)
        .map(|i| {
            (0..q)
                .map(|j| {
                    let diag = if i == j { nu[i] } else { 0.0 };
                    chi_f * (diag - nu[i] * nu[j]) + sigma_sq * d[i] * d[j]
                })
                .collect()
        })
        .collect())
}

/// Q(b) = χ(⟨D_ν b, b⟩ - ⟨ν, b⟩²) + σ²⟨e_r - ν, b⟩².
pub fn quadratic_form(cp: &ColorParams, chi_f: f64, sigma_sq: f64, b: &[f64]) -> f64 {
    let nu = cp.nu();
    let dnu: f64 = nu.iter().zip(b).map(|(n, x)| n * x * x).sum();
    let mean: f64 = nu.iter().zip(b).map(|(n, x)| n * x).sum();
    let shift = b[cp.ground()] - mean;
    chi_f * (dnu - mean * mean) + sigma_sq * shift * shift
}

/// Single-site heat bath for the q-color Potts model with weight
/// exp(-2β · #disagreeing bonds), visiting vertices in index order. In a
/// wired box the ghost carries the fixed color `ground`.
pub fn potts_heatbath<R: Rng + ?Sized>(
    s: &mut SpinConfig,
    g: &BoxGeometry,
    beta: f64,
    ground: usize,
    sweeps: usize,
    rng: &mut R,
) -> Result<()> {
    if !(beta >= 0.0) {
        return Err(invalid("beta", format!("must be >= 0, got {beta}")));
    }
    if s.len() != g.num_vertices() {
        return Err(Error::ShapeMismatch {
            expected: g.num_vertices(),
            got: s.len(),
        });
    }
    if ground >= s.q_c {
        return Err(invalid("ground", format!("color {ground} out of range")));
    }
    let q = s.q_c;
    let mut agree = vec![0u32; q];
    let mut w = vec![0.0f64; q];
    for _ in 0..sweeps {
        for v in 0..g.num_vertices() {
            agree.iter_mut().for_each(|a| *a = 0);
            for &(u, _) in g.neighbors(v) {
                let u = u as usize;
                let c = if g.is_ghost(u) { ground } else { s.colors[u] as usize };
                agree[c] += 1;
            }
            let top = *agree.iter().max().unwrap_or(&0);
            for c in 0..q {
                let gap = f64::from(top - agree[c]);
                w[c] = if gap == 0.0 { 1.0 } else { (-2.0 * beta * gap).exp() };
            }
            s.colors[v] = categorical_unnormalized(&w, rng) as u8;
        }
    }
    Ok(())
}

fn categorical_unnormalized<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> usize {
    let total: f64 = w.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &x) in w.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Exact joint law of (color(x), color(y)) under FK + coloring, summing the
/// coloring analytically over every enumerated edge configuration.
pub fn exact_pair_law(
    dist: &ExactDistribution,
    x: usize,
    y: usize,
    cp: &ColorParams,
    rule: ProxyRule,
) -> Result<Vec<Vec<f64>>> {
    let g = dist.geometry();
    if x >= g.num_vertices() || y >= g.num_vertices() {
        return Err(invalid("vertex", "outside the box"));
    }
    rule.check(g.mode())?;
    let q = cp.q_c();
    let nu = cp.nu();
    let r = cp.ground();
    let m = g.num_edges();
    let mut law = vec![vec![0.0; q]; q];
    let mut uf = UnionFind::new(g.num_nodes());
    for (mask, &p) in dist.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let omega = EdgeConfig::from_mask(mask as u64, m);
        let dec = ClusterDecomposition::with_scratch(&omega, g, rule, &mut uf)?;
        let marg = |v: usize| -> Vec<f64> {
            if dec.in_proxy(v) {
                (0..q).map(|c| f64::from(u8::from(c == r))).collect()
            } else {
                nu.to_vec()
            }
        };
        if dec.label(x) == dec.label(y) {
            let mx = marg(x);
            for c in 0..q {
                law[c][c] += p * mx[c];
            }
        } else {
            let (mx, my) = (marg(x), marg(y));
            for a in 0..q {
                for b in 0..q {
                    law[a][b] += p * mx[a] * my[b];
                }
            }
        }
    }
    Ok(law)
}

/// Spin dump: one header line, then one byte per vertex holding its
/// 1-based color, per configuration.
pub fn write_spin_dump<W: Write>(w: &mut W, header: &str, configs: &[SpinConfig]) -> io::Result<()> {
    writeln!(w, "# rcmlab-spins {header}")?;
    for s in configs {
        let bytes: Vec<u8> = s.colors.iter().map(|&c| c + 1).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::enumerate;
    use crate::fk::FkParams;
    use crate::lattice::{build_box, BoundaryMode};
    use crate::rng::stream;

    #[test]
    fn parameter_validation() {
        assert!(ColorParams::new(vec![1.0], 0).is_err());
        assert!(ColorParams::new(vec![0.5, 0.4], 0).is_err());
        assert!(ColorParams::new(vec![0.5, 0.5], 2).is_err());
        assert!(ColorParams::new(vec![1.5, -0.5], 0).is_err());
        assert!(ColorParams::uniform(3, 0).unwrap().with_mixture(vec![0.5, 0.5]).is_err());
        let cp = ColorParams::uniform(4, 3).unwrap();
        assert_eq!(cp.nu(), &[0.25; 4]);
        assert!(SpinConfig::new(vec![0, 4], 4).is_err());
    }

    #[test]
    fn clusters_are_monochromatic_and_proxy_takes_the_ground() {
        let g = build_box(2, 4, BoundaryMode::Wired).unwrap();
        let mut rng = stream(5, 0);
        let cp = ColorParams::uniform(3, 2).unwrap();
        let chain = crate::fk::run_chain(&g, FkParams::new(0.6, 3.0).unwrap(), crate::fk::Algorithm::SwendsenWang, 5, 10, 1, 3).unwrap();
        for w in chain {
            let dec = ClusterDecomposition::new(&w, &g, ProxyRule::Boundary).unwrap();
            let s = color_clusters(&dec, &cp, &mut rng);
            assert!(s.is_monochromatic_on(&dec));
            for v in 0..g.num_vertices() {
                if dec.in_proxy(v) {
                    assert_eq!(s.color(v), 2);
                }
            }
            let m = color_by_marks(&dec, &cp, &mut rng);
            assert!(m.is_monochromatic_on(&dec));
        }
    }

    #[test]
    fn marks_color_each_cluster_by_its_smallest_vertex() {
        let g = build_box(2, 1, BoundaryMode::Free).unwrap();
        let mut w = crate::fk::EdgeConfig::closed(g.num_edges());
        w.set(0, true);
        let dec = ClusterDecomposition::new(&w, &g, ProxyRule::None).unwrap();
        let cp = ColorParams::uniform(3, 0).unwrap();
        let marks = [2u8, 1, 0, 1, 2, 0, 1, 2, 0];
        let s = color_from_marks(&dec, &cp, &marks);
        let e = g.edge(0);
        let low = e.a.min(e.b) as usize;
        assert_eq!(s.color(e.a as usize), marks[low] as usize);
        assert_eq!(s.color(e.b as usize), marks[low] as usize);
    }

    #[test]
    fn independent_coloring_frequencies() {
        let g = build_box(2, 10, BoundaryMode::Free).unwrap();
        let dec = ClusterDecomposition::new(&crate::fk::EdgeConfig::closed(g.num_edges()), &g, ProxyRule::None).unwrap();
        let cp = ColorParams::new(vec![0.2, 0.3, 0.5], 0).unwrap();
        let w = Window::full(&g);
        let mut rng = stream(6, 0);
        let mut tot = [0u64; 3];
        let reps = 200;
        for _ in 0..reps {
            let ev = empirical_vector(&color_clusters(&dec, &cp, &mut rng), &g, &w);
            assert_eq!(ev.counts.iter().sum::<u64>(), ev.size);
            for k in 0..3 {
                tot[k] += ev.counts[k];
            }
        }
        let n = (reps * w.size()) as f64;
        for k in 0..3 {
            let f = tot[k] as f64 / n;
            let se = (cp.nu()[k] * (1.0 - cp.nu()[k]) / n).sqrt();
            assert!((f - cp.nu()[k]).abs() < 5.0 * se);
        }
    }

    #[test]
    fn magnetization_and_phase() {
        let g = build_box(2, 1, BoundaryMode::Free).unwrap();
        let w = Window::full(&g);
        let s = SpinConfig::new(vec![0, 0, 0, 1, 1, 0, 0, 0, 0], 2).unwrap();
        let ev = empirical_vector(&s, &g, &w);
        assert_eq!(ev.counts, vec![7, 2]);
        assert!((ev.magnetization.unwrap() - 5.0 / 9.0).abs() < 1e-15);
        assert_eq!(detect_phase(&ev, 0.5, &[0.5, 0.5]).unwrap(), 0);
        let tie = EmpiricalVector {
            counts: vec![3, 3],
            size: 6,
            magnetization: Some(0.0),
        };
        assert_eq!(detect_phase(&tie, 0.2, &[0.5, 0.5]).unwrap(), 0);
        assert!(detect_phase(&tie, 1.2, &[0.5, 0.5]).is_err());
        assert!(detect_phase(&tie, 0.2, &[0.5, 0.25, 0.25]).is_err());
        assert!(empirical_vector(&SpinConfig::constant(9, 1, 3), &g, &w).magnetization.is_none());
    }

    #[test]
    fn covariance_prediction() {
        let cp = ColorParams::new(vec![0.2, 0.3, 0.5], 1).unwrap();
        let c = predicted_covariance(&cp, 1.7, 0.4, 0.9).unwrap();
        for row in &c {
            assert!(row.iter().sum::<f64>().abs() < 1e-14);
        }
        let b = [0.3, -1.2, 2.0];
        let direct: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| b[i] * c[i][j] * b[j]).sum();
        assert!((quadratic_form(&cp, 1.7, 0.4, &b) - direct).abs() < 1e-12);
        let ht = predicted_covariance(&ColorParams::uniform(3, 0).unwrap(), 2.0, 0.0, 0.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = 2.0 / 9.0 * (if i == j { 3.0 } else { 0.0 } - 1.0);
                assert!((ht[i][j] - expect).abs() < 1e-15);
            }
        }
        assert!(predicted_covariance(&cp, -1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn heatbath_extremes() {
        let g = build_box(2, 3, BoundaryMode::Wired).unwrap();
        let mut rng = stream(8, 0);
        let mut s = SpinConfig::constant(g.num_vertices(), 1, 3);
        potts_heatbath(&mut s, &g, f64::INFINITY, 1, 5, &mut rng).unwrap();
        assert!(s.colors().iter().all(|&c| c == 1));
        let free = build_box(2, 10, BoundaryMode::Free).unwrap();
        let mut s = SpinConfig::constant(free.num_vertices(), 0, 2);
        potts_heatbath(&mut s, &free, 0.0, 0, 1, &mut rng).unwrap();
        let ones = s.colors().iter().filter(|&&c| c == 1).count() as f64;
        let n = free.num_vertices() as f64;
        assert!((ones / n - 0.5).abs() < 5.0 * (0.25 / n).sqrt());
        assert!(potts_heatbath(&mut s, &g, 0.1, 0, 1, &mut rng).is_err());
        assert!(potts_heatbath(&mut s, &free, -1.0, 0, 1, &mut rng).is_err());
    }

    #[test]
    fn fk_coloring_reproduces_potts_pair_law() {
        let g = crate::lattice::BoxGeometry::rectangle(&[2, 3], BoundaryMode::Free).unwrap();
        let beta = 0.4;
        let q = 3usize;
        let n = g.num_vertices();
        let (x, y) = (0, n - 1);
        let mut law = vec![vec![0.0; q]; q];
        let mut z = 0.0;
        for code in 0..q.pow(n as u32) {
            let spins: Vec<usize> = (0..n).map(|v| code / q.pow(v as u32) % q).collect();
            let dis = g.edges().iter().filter(|e| spins[e.a as usize] != spins[e.b as usize]).count();
            let wt = (-2.0 * beta * dis as f64).exp();
            law[spins[x]][spins[y]] += wt;
            z += wt;
        }
        let dist = enumerate(&g, &FkParams::from_beta(beta, q as f64).unwrap()).unwrap();
        let fk = exact_pair_law(&dist, x, y, &ColorParams::uniform(q, 0).unwrap(), ProxyRule::None).unwrap();
        for a in 0..q {
            for b in 0..q {
                assert!((law[a][b] / z - fk[a][b]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn spin_dump_uses_one_based_bytes() {
        let mut buf = Vec::new();
        let s = SpinConfig::new(vec![0, 2, 1], 3).unwrap();
        write_spin_dump(&mut buf, "d=2", &[s]).unwrap();
        assert_eq!(buf, b"# rcmlab-spins d=2\n\x01\x03\x02");
    }
}
