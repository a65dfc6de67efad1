//! Finite boxes of the hypercubic lattice.
//!
//! Vertices are indexed row-major over local coordinates (last axis
//! fastest). Inner bonds come first, ordered by (lower vertex, axis); in
//! wired mode the bonds that leave the box follow, ordered by (vertex, axis,
//! sign). All outside vertices of a wired box are fused into one ghost node
//! with index `num_vertices()`, so the boundary bonds become ordinary edges
//! to the ghost.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    Free,
    Wired,
    Periodic,
}

impl BoundaryMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryMode::Free => "free",
            BoundaryMode::Wired => "wired",
            BoundaryMode::Periodic => "periodic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub a: u32,
    pub b: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Step {
    axis: u8,
    sign: i8,
}

#[derive(Debug, Clone)]
pub struct BoxGeometry {
    dim: usize,
    sides: Vec<usize>,
    origin: Vec<i64>,
    strides: Vec<usize>,
    mode: BoundaryMode,
    num_vertices: usize,
    edges: Vec<Edge>,
    steps: Vec<Step>,
    num_inner: usize,
    adj_offsets: Vec<u32>,
    adj: Vec<(u32, u32)>,
}

/// The box Λ_t = {x : |x|_∞ ≤ t} of Z^d.
pub fn build_box(d: usize, t: i64, mode: BoundaryMode) -> Result<BoxGeometry> {
    if t < 0 {
        return Err(invalid("t", format!("box radius must be >= 0, got {t}")));
    }
    BoxGeometry::new(&vec![(2 * t + 1) as usize; d], &vec![-t; d], mode)
}

/// Outer vertex boundary {y ∉ Λ : |x - y|_1 = 1 for some x ∈ Λ}, as
/// coordinates. Empty for a torus.
pub fn boundary(g: &BoxGeometry) -> Vec<Vec<i64>> {
    if g.mode == BoundaryMode::Periodic {
        return Vec::new();
    }
    let mut out = BTreeSet::new();
    for v in 0..g.num_vertices {
        let c = g.coords(v);
        for axis in 0..g.dim {
            for sign in [-1i64, 1] {
                let mut y = c.clone();
                y[axis] += sign;
                if g.index_of(&y).is_none() {
                    out.insert(y);
                }
            }
        }
    }
    out.into_iter().collect()
}

impl BoxGeometry {
    /// Rectangular box with the given side lengths whose lowest corner sits
    /// at `origin`.
    pub fn new(sides: &[usize], origin: &[i64], mode: BoundaryMode) -> Result<Self> {
        let dim = sides.len();
        if dim < 2 {
            return Err(invalid("d", format!("dimension must be >= 2, got {dim}")));
        }
        if origin.len() != dim {
            return Err(invalid("origin", "length must equal the dimension"));
        }
        if sides.contains(&0) {
            return Err(invalid("sides", "every side must be >= 1"));
        }
        if mode == BoundaryMode::Periodic && sides.contains(&2) {
            return Err(invalid("sides", "periodic sides of length 2 create double bonds"));
        }
        let num_vertices: usize = sides.iter().product();
        if num_vertices > u32::MAX as usize / 2 {
            return Err(Error::ResourceCap(format!("{num_vertices} vertices")));
        }
        let mut strides = vec![1usize; dim];
        for i in (0..dim - 1).rev() {
            strides[i] = strides[i + 1] * sides[i + 1];
        }
        let mut g = BoxGeometry {
            dim,
            sides: sides.to_vec(),
            origin: origin.to_vec(),
            strides,
            mode,
            num_vertices,
            edges: Vec::new(),
            steps: Vec::new(),
            num_inner: 0,
            adj_offsets: Vec::new(),
            adj: Vec::new(),
        };
        g.build_edges();
        g.build_adjacency();
        Ok(g)
    }

    /// Rectangular box with its lowest corner at the origin.
    pub fn rectangle(sides: &[usize], mode: BoundaryMode) -> Result<Self> {
        Self::new(sides, &vec![0; sides.len()], mode)
    }

    fn build_edges(&mut self) {
        let mut local = vec![0usize; self.dim];
        for v in 0..self.num_vertices {
            self.local_into(v, &mut local);
            for axis in 0..self.dim {
                let side = self.sides[axis];
                if local[axis] + 1 < side {
                    let w = v + self.strides[axis];
                    self.push_edge(v, w, axis, 1);
                } else if self.mode == BoundaryMode::Periodic && side > 1 {
                    let w = v + self.strides[axis] - side * self.strides[axis];
                    self.push_edge(v, w, axis, 1);
                }
            }
        }
        self.num_inner = self.edges.len();
        if self.mode == BoundaryMode::Wired {
            let ghost = self.num_vertices;
            for v in 0..self.num_vertices {
                self.local_into(v, &mut local);
                for axis in 0..self.dim {
                    if local[axis] == 0 {
                        self.push_edge(v, ghost, axis, -1);
                    }
                    if local[axis] + 1 == self.sides[axis] {
                        self.push_edge(v, ghost, axis, 1);
                    }
                }
            }
        }
    }

    fn push_edge(&mut self, a: usize, b: usize, axis: usize, sign: i8) {
        self.edges.push(Edge {
            a: a as u32,
            b: b as u32,
        });
        self.steps.push(Step {
            axis: axis as u8,
            sign,
        });
    }

    fn build_adjacency(&mut self) {
        let nodes = self.num_nodes();
        let mut deg = vec![0u32; nodes + 1];
        for e in &self.edges {
            deg[e.a as usize + 1] += 1;
            deg[e.b as usize + 1] += 1;
        }
        for i in 0..nodes {
            deg[i + 1] += deg[i];
        }
        let mut fill = deg.clone();
        let mut adj = vec![(0u32, 0u32); 2 * self.edges.len()];
        for (i, e) in self.edges.iter().enumerate() {
            adj[fill[e.a as usize] as usize] = (e.b, i as u32);
            fill[e.a as usize] += 1;
            adj[fill[e.b as usize] as usize] = (e.a, i as u32);
            fill[e.b as usize] += 1;
        }
        self.adj_offsets = deg;
        self.adj = adj;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn origin(&self) -> &[i64] {
        &self.origin
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn mode(&self) -> BoundaryMode {
        self.mode
    }

    /// Number of lattice vertices in the box (ghost excluded).
    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    /// Vertices plus the ghost node of a wired box.
    pub fn num_nodes(&self) -> usize {
        self.num_vertices + usize::from(self.mode == BoundaryMode::Wired)
    }

    pub fn ghost(&self) -> Option<usize> {
        (self.mode == BoundaryMode::Wired).then_some(self.num_vertices)
    }

    pub fn is_ghost(&self, node: usize) -> bool {
        node == self.num_vertices && self.mode == BoundaryMode::Wired
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Bonds with both endpoints in the box (including torus wraps).
    pub fn num_inner_edges(&self) -> usize {
        self.num_inner
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> Edge {
        self.edges[e]
    }

    pub fn is_boundary_bond(&self, e: usize) -> bool {
        e >= self.num_inner
    }

    /// `(neighbor, edge)` pairs incident to `node`.
    pub fn neighbors(&self, node: usize) -> &[(u32, u32)] {
        let lo = self.adj_offsets[node] as usize;
        let hi = self.adj_offsets[node + 1] as usize;
        &self.adj[lo..hi]
    }

    pub fn local_into(&self, v: usize, out: &mut [usize]) {
        let mut rest = v;
        for i in 0..self.dim {
            out[i] = rest / self.strides[i];
            rest %= self.strides[i];
        }
    }

    pub fn local(&self, v: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        self.local_into(v, &mut out);
        out
    }

    pub fn coords(&self, v: usize) -> Vec<i64> {
        self.local(v)
            .iter()
            .zip(&self.origin)
            .map(|(&l, &o)| l as i64 + o)
            .collect()
    }

    pub fn index_of(&self, coords: &[i64]) -> Option<usize> {
        if coords.len() != self.dim {
            return None;
        }
        let mut idx = 0usize;
        for i in 0..self.dim {
            let l = coords[i] - self.origin[i];
            if l < 0 || l as usize >= self.sides[i] {
                return None;
            }
            idx += l as usize * self.strides[i];
        }
        Some(idx)
    }

    /// Geometric endpoints of an edge: the inside endpoint `a` and
    /// `a + sign * e_axis`, which lies outside the box for boundary bonds
    /// and torus wraps.
    pub fn edge_endpoint_coords(&self, e: usize) -> (Vec<i64>, Vec<i64>) {
        let a = self.coords(self.edges[e].a as usize);
        let mut b = a.clone();
        let s = self.steps[e];
        b[s.axis as usize] += s.sign as i64;
        (a, b)
    }

    pub fn edge_axis(&self, e: usize) -> usize {
        self.steps[e].axis as usize
    }

    /// Axis and sign of the unit step from `a` to `b` along edge `e`.
    pub fn edge_step(&self, e: usize) -> (usize, i64) {
        let s = self.steps[e];
        (s.axis as usize, s.sign as i64)
    }

    /// Whether vertex `v` lies on a face of the box.
    pub fn on_shell(&self, v: usize) -> bool {
        let mut rest = v;
        for i in 0..self.dim {
            let l = rest / self.strides[i];
            rest %= self.strides[i];
            if l == 0 || l + 1 == self.sides[i] {
                return true;
            }
        }
        false
    }

    /// Inner bond joining an interior vertex to a face vertex.
    pub fn crosses_into_shell(&self, e: usize) -> bool {
        if e >= self.num_inner || self.mode == BoundaryMode::Periodic {
            return false;
        }
        let Edge { a, b } = self.edges[e];
        self.on_shell(a as usize) != self.on_shell(b as usize)
    }

    /// Largest `t` such that the box is Λ_t, if it is one.
    pub fn radius(&self) -> Option<i64> {
        let s = self.sides[0];
        if s % 2 == 1 && self.sides.iter().all(|&x| x == s) {
            let t = (s / 2) as i64;
            if self.origin.iter().all(|&o| o == -t) {
                return Some(t);
            }
        }
        None
    }

    fn edge_key(a: Vec<i64>, b: Vec<i64>) -> (Vec<i64>, Vec<i64>) {
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    fn edge_lookup(&self) -> HashMap<(Vec<i64>, Vec<i64>), usize> {
        (0..self.edges.len())
            .map(|e| {
                let (a, b) = self.edge_endpoint_coords(e);
                (Self::edge_key(a, b), e)
            })
            .collect()
    }
}

/// A d = 2 box together with its planar dual.
///
/// Dual vertex coordinates are integers `c` standing for the point
/// `c + (1/2, 1/2)`. The dual of a wired m×n box is the free (m+1)×(n+1)
/// box; the dual of a free m×n box is the wired (m-1)×(n-1) box.
#[derive(Debug, Clone)]
pub struct DualGeometry {
    dual: BoxGeometry,
    to_dual: Vec<u32>,
    to_primal: Vec<u32>,
}

pub fn dual_geometry(g: &BoxGeometry) -> Result<DualGeometry> {
    if g.dim != 2 {
        return Err(Error::UnsupportedDimension {
            dim: g.dim,
            reason: "planar duality needs d = 2",
        });
    }
    let dual = match g.mode {
        BoundaryMode::Wired => {
            let sides = [g.sides[0] + 1, g.sides[1] + 1];
            let origin = [g.origin[0] - 1, g.origin[1] - 1];
            BoxGeometry::new(&sides, &origin, BoundaryMode::Free)?
        }
        BoundaryMode::Free => {
            if g.sides.iter().any(|&s| s < 2) {
                return Err(invalid("sides", "a free box needs sides >= 2 to have a dual"));
            }
            let sides = [g.sides[0] - 1, g.sides[1] - 1];
            BoxGeometry::new(&sides, &g.origin, BoundaryMode::Wired)?
        }
        BoundaryMode::Periodic => {
            return Err(invalid("mode", "the torus is not planar"));
        }
    };
    let primal_lookup = g.edge_lookup();
    let dual_lookup = dual.edge_lookup();
    let mut to_dual = vec![u32::MAX; g.num_edges()];
    for (e, slot) in to_dual.iter_mut().enumerate() {
        let key = crossing(g.edge_endpoint_coords(e), false);
        *slot = *dual_lookup
            .get(&key)
            .ok_or_else(|| Error::ContractViolation(format!("no dual edge for primal edge {e}")))?
            as u32;
    }
    let mut to_primal = vec![u32::MAX; dual.num_edges()];
    for (f, slot) in to_primal.iter_mut().enumerate() {
        let key = crossing(dual.edge_endpoint_coords(f), true);
        *slot = *primal_lookup
            .get(&key)
            .ok_or_else(|| Error::ContractViolation(format!("no primal edge for dual edge {f}")))?
            as u32;
    }
    Ok(DualGeometry {
        dual,
        to_dual,
        to_primal,
    })
}

/// Endpoints of the bond crossing the given one, in the other lattice's
/// integer coordinates. Primal (c, c + e_i) is crossed by dual
/// (c - e_j, c); dual (c, c + e_i) is crossed by primal
/// (c + e_i, c + e_i + e_j), where j is the other axis.
fn crossing((a, b): (Vec<i64>, Vec<i64>), from_dual: bool) -> (Vec<i64>, Vec<i64>) {
    let i = usize::from(a[0] == b[0]);
    let j = 1 - i;
    let lo = if a <= b { a } else { b };
    if from_dual {
        let mut u = lo;
        u[i] += 1;
        let mut w = u.clone();
        w[j] += 1;
        BoxGeometry::edge_key(u, w)
    } else {
        let mut u = lo.clone();
        u[j] -= 1;
        BoxGeometry::edge_key(u, lo)
    }
}

impl DualGeometry {
    pub fn dual(&self) -> &BoxGeometry {
        &self.dual
    }

    /// s(e) for a primal edge.
    pub fn dual_edge(&self, e: usize) -> usize {
        self.to_dual[e] as usize
    }

    /// s(f) for a dual edge.
    pub fn primal_edge(&self, f: usize) -> usize {
        self.to_primal[f] as usize
    }

    /// Planar position of a dual vertex.
    pub fn dual_position(&self, v: usize) -> [f64; 2] {
        let c = self.dual.coords(v);
        [c[0] as f64 + 0.5, c[1] as f64 + 0.5]
    }

    pub fn is_involution(&self) -> bool {
        self.to_dual.len() == self.to_primal.len()
            && (0..self.to_dual.len()).all(|e| self.primal_edge(self.dual_edge(e)) == e)
            && (0..self.to_primal.len()).all(|f| self.dual_edge(self.primal_edge(f)) == f)
    }
}

/// Sub-box of a geometry given by half-open local ranges per axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    lo: Vec<usize>,
    hi: Vec<usize>,
}

impl Window {
    pub fn new(g: &BoxGeometry, lo: Vec<usize>, hi: Vec<usize>) -> Result<Self> {
        if lo.len() != g.dim() || hi.len() != g.dim() {
            return Err(Error::InvalidWindow("dimension mismatch".into()));
        }
        for i in 0..g.dim() {
            if lo[i] >= hi[i] || hi[i] > g.sides()[i] {
                return Err(Error::InvalidWindow(format!(
                    "axis {i}: range {}..{} not inside 0..{}",
                    lo[i],
                    hi[i],
                    g.sides()[i]
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// The whole box.
    pub fn full(g: &BoxGeometry) -> Self {
        Self {
            lo: vec![0; g.dim()],
            hi: g.sides().to_vec(),
        }
    }

    /// Vertices at least `margin` shells away from every face.
    pub fn interior(g: &BoxGeometry, margin: usize) -> Result<Self> {
        let lo = vec![margin; g.dim()];
        let hi: Vec<usize> = g.sides().iter().map(|&s| s.saturating_sub(margin)).collect();
        Self::new(g, lo, hi)
            .map_err(|_| Error::InvalidWindow(format!("margin {margin} leaves no interior")))
    }

    pub fn lo(&self) -> &[usize] {
        &self.lo
    }

    pub fn hi(&self) -> &[usize] {
        &self.hi
    }

    pub fn side(&self, axis: usize) -> usize {
        self.hi[axis] - self.lo[axis]
    }

    pub fn size(&self) -> usize {
        (0..self.lo.len()).map(|i| self.side(i)).product()
    }

    /// Smallest distance (in shells) from the window to a face of `g`.
    pub fn margin_in(&self, g: &BoxGeometry) -> usize {
        (0..self.lo.len())
            .map(|i| self.lo[i].min(g.sides()[i] - self.hi[i]))
            .min()
            .unwrap_or(0)
    }

    pub fn contains_local(&self, local: &[usize]) -> bool {
        local
            .iter()
            .enumerate()
            .all(|(i, &l)| l >= self.lo[i] && l < self.hi[i])
    }

    pub fn contains(&self, g: &BoxGeometry, v: usize) -> bool {
        v < g.num_vertices() && self.contains_local(&g.local(v))
    }

    /// Start index and length of each contiguous run along the last axis.
    pub fn runs(&self, g: &BoxGeometry) -> Vec<(usize, usize)> {
        let d = self.lo.len();
        let len = self.side(d - 1);
        let mut out = Vec::with_capacity(self.size() / len);
        let mut cur = self.lo.clone();
        loop {
            let start: usize = (0..d).map(|i| cur[i] * g.strides()[i]).sum();
            out.push((start, len));
            let mut axis = d - 1;
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                cur[axis] += 1;
                if cur[axis] < self.hi[axis] {
                    break;
                }
                cur[axis] = self.lo[axis];
            }
        }
    }

    pub fn vertices(&self, g: &BoxGeometry) -> Vec<usize> {
        self.runs(g)
            .into_iter()
            .flat_map(|(s, l)| s..s + l)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l1(a: &[i64], b: &[i64]) -> i64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
    }

    #[test]
    fn small_boxes() {
        let g = build_box(2, 0, BoundaryMode::Free).unwrap();
        assert_eq!((g.num_vertices(), g.num_edges()), (1, 0));
        let g = build_box(2, 1, BoundaryMode::Free).unwrap();
        assert_eq!((g.num_vertices(), g.num_edges()), (9, 12));
        let g = build_box(3, 1, BoundaryMode::Free).unwrap();
        assert_eq!((g.num_vertices(), g.num_edges()), (27, 54));
        let g = build_box(2, 1, BoundaryMode::Wired).unwrap();
        assert_eq!((g.num_vertices(), g.num_nodes(), g.num_edges()), (9, 10, 24));
        assert_eq!(g.num_inner_edges(), 12);
        let g = build_box(2, 2, BoundaryMode::Periodic).unwrap();
        assert_eq!(g.num_edges(), 50);
    }

    #[test]
    fn bad_parameters() {
        assert!(matches!(build_box(1, 3, BoundaryMode::Free), Err(Error::InvalidParameter { .. })));
        assert!(matches!(build_box(2, -1, BoundaryMode::Free), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn free_edge_count_matches_enumeration() {
        for d in 2..=3usize {
            for t in 0..=3i64 {
                let g = build_box(d, t, BoundaryMode::Free).unwrap();
                let pts: Vec<Vec<i64>> = (0..g.num_vertices()).map(|v| g.coords(v)).collect();
                let mut brute = 0;
                for i in 0..pts.len() {
                    for j in i + 1..pts.len() {
                        if l1(&pts[i], &pts[j]) == 1 {
                            brute += 1;
                        }
                    }
                }
                let side = (2 * t + 1) as usize;
                assert_eq!(g.num_edges(), brute);
                assert_eq!(g.num_edges(), d * (side - 1) * side.pow(d as u32 - 1));
                for e in 0..g.num_edges() {
                    let (a, b) = g.edge_endpoint_coords(e);
                    assert_eq!(l1(&a, &b), 1);
                }
            }
        }
    }

    #[test]
    fn boundary_sets() {
        assert_eq!(boundary(&build_box(2, 1, BoundaryMode::Free).unwrap()).len(), 12);
        assert_eq!(boundary(&build_box(2, 0, BoundaryMode::Wired).unwrap()).len(), 4);
        assert_eq!(boundary(&build_box(3, 1, BoundaryMode::Free).unwrap()).len(), 54);
        assert!(boundary(&build_box(2, 2, BoundaryMode::Periodic).unwrap()).is_empty());
        let g = build_box(2, 2, BoundaryMode::Free).unwrap();
        for y in boundary(&g) {
            assert!(g.index_of(&y).is_none());
            assert!((0..g.num_vertices()).any(|v| l1(&g.coords(v), &y) == 1));
        }
    }

    #[test]
    fn wired_ghost_bonds_match_boundary() {
        let g = build_box(2, 2, BoundaryMode::Wired).unwrap();
        let ghost = g.ghost().unwrap();
        let bonds = (0..g.num_edges()).filter(|&e| g.is_boundary_bond(e)).count();
        assert_eq!(bonds, boundary(&g).len());
        for e in 0..g.num_edges() {
            assert_eq!(g.is_boundary_bond(e), g.edge(e).b as usize == ghost);
        }
    }

    #[test]
    fn edge_order_is_deterministic() {
        let a = build_box(3, 2, BoundaryMode::Wired).unwrap();
        let b = build_box(3, 2, BoundaryMode::Wired).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_eq!(a.coords(0), vec![-2, -2, -2]);
        assert_eq!(a.coords(1), vec![-2, -2, -1]);
    }

    #[test]
    fn dual_involution_and_counts() {
        for mode in [BoundaryMode::Free, BoundaryMode::Wired] {
            for t in 1..=3 {
                let g = build_box(2, t, mode).unwrap();
                let dg = dual_geometry(&g).unwrap();
                assert!(dg.is_involution());
                assert_eq!(dg.dual().num_edges(), g.num_edges());
            }
        }
        let g = BoxGeometry::rectangle(&[2, 3], BoundaryMode::Free).unwrap();
        assert_eq!(dual_geometry(&g).unwrap().dual().sides(), &[1, 2]);
    }

    #[test]
    fn dual_crossing_of_horizontal_edge() {
        let g = build_box(2, 1, BoundaryMode::Free).unwrap();
        let (o, x) = (g.index_of(&[0, 0]).unwrap(), g.index_of(&[1, 0]).unwrap());
        let e = (0..g.num_edges())
            .find(|&e| {
                let ed = g.edge(e);
                (ed.a as usize, ed.b as usize) == (o.min(x), o.max(x))
            })
            .unwrap();
        let dg = dual_geometry(&g).unwrap();
        let f = dg.dual().edge(dg.dual_edge(e));
        let mut ends = [dg.dual_position(f.a as usize), dg.dual_position(f.b as usize)];
        ends.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(ends, [[0.5, -0.5], [0.5, 0.5]]);
    }

    #[test]
    fn dual_needs_two_dimensions() {
        let g = build_box(3, 1, BoundaryMode::Free).unwrap();
        assert!(matches!(dual_geometry(&g), Err(Error::UnsupportedDimension { dim: 3, .. })));
        let g = build_box(2, 1, BoundaryMode::Periodic).unwrap();
        assert!(dual_geometry(&g).is_err());
    }

    #[test]
    fn windows() {
        let g = build_box(2, 4, BoundaryMode::Free).unwrap();
        let w = Window::interior(&g, 2).unwrap();
        assert_eq!(w.size(), 25);
        assert_eq!(w.margin_in(&g), 2);
        assert_eq!(w.vertices(&g).len(), 25);
        assert!(w.vertices(&g).iter().all(|&v| g.coords(v).iter().all(|c| c.abs() <= 2)));
        assert!(matches!(Window::interior(&g, 5), Err(Error::InvalidWindow(_))));
        assert_eq!(Window::full(&g).size(), 81);
    }
}
