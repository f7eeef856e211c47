//! Space meshes: P1 bars on an interval, Q1 quads on an axis-aligned
//! structured layout with rectangular holes.
//!
//! A mesh is a set of leaves of a forest of dyadic trees rooted at the base
//! cells of a [`Layout`]. Uniform refinement keeps the mesh conforming;
//! marked refinement in 2D produces hanging nodes (at most one per side,
//! neighbour levels differ by at most one).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

/// Base cell layout of the domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub dim: usize,
    pub origin: [f64; 2],
    pub cell: [f64; 2],
    pub cells: [usize; 2],
    /// Cell-index rectangles `[i0, i1, j0, j1)` removed from the box.
    pub holes: Vec<[usize; 4]>,
    active: Vec<bool>,
}

/// Side numbering. In 1D only `LEFT` and `RIGHT` occur.
pub const BOTTOM: usize = 0;
pub const RIGHT: usize = 1;
pub const TOP: usize = 2;
pub const LEFT: usize = 3;

impl Layout {
    pub fn interval(origin: f64, length: f64, elements: usize) -> Result<Self> {
        if !(length > 0.0) || elements == 0 {
            return Err(Error::InvalidProblem("interval needs length > 0 and elements >= 1".into()));
        }
        Ok(Layout {
            dim: 1,
            origin: [origin, 0.0],
            cell: [length / elements as f64, 1.0],
            cells: [elements, 1],
            holes: vec![],
            active: vec![true; elements],
        })
    }

    pub fn quads(origin: [f64; 2], cell: [f64; 2], cells: [usize; 2], holes: Vec<[usize; 4]>) -> Result<Self> {
        if !(cell[0] > 0.0 && cell[1] > 0.0) || cells[0] == 0 || cells[1] == 0 {
            return Err(Error::InvalidProblem("quad layout needs positive cell sizes and counts".into()));
        }
        let mut active = vec![true; cells[0] * cells[1]];
        for h in &holes {
            if h[0] >= h[1] || h[2] >= h[3] || h[1] > cells[0] || h[3] > cells[1] {
                return Err(Error::InvalidProblem(format!("hole {h:?} outside the cell box")));
            }
            for j in h[2]..h[3] {
                for i in h[0]..h[1] {
                    active[j * cells[0] + i] = false;
                }
            }
        }
        if !active.iter().any(|&a| a) {
            return Err(Error::InvalidProblem("domain has no active cell".into()));
        }
        Ok(Layout { dim: 2, origin, cell, cells, holes, active })
    }

    pub fn is_active(&self, i: i64, j: i64) -> bool {
        if i < 0 || j < 0 || i >= self.cells[0] as i64 || j >= self.cells[1] as i64 {
            return false;
        }
        self.active[j as usize * self.cells[0] + i as usize]
    }

    fn hole_of(&self, i: i64, j: i64) -> Option<usize> {
        self.holes.iter().position(|h| {
            i >= h[0] as i64 && i < h[1] as i64 && j >= h[2] as i64 && j < h[3] as i64
        })
    }

    /// Tag of base-cell side, or `None` when the side is interior.
    pub fn side_tag(&self, i: usize, j: usize, side: usize) -> Option<String> {
        let (i, j) = (i as i64, j as i64);
        let (ni, nj) = match side {
            BOTTOM => (i, j - 1),
            RIGHT => (i + 1, j),
            TOP => (i, j + 1),
            _ => (i - 1, j),
        };
        if self.is_active(ni, nj) {
            return None;
        }
        if let Some(h) = self.hole_of(ni, nj) {
            return Some(format!("hole{h}"));
        }
        let name = match side {
            BOTTOM => "bottom",
            RIGHT => "right",
            TOP => "top",
            _ => "left",
        };
        Some(name.to_string())
    }

    /// All boundary tags present on the base layout.
    pub fn tags(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for j in 0..self.cells[1] {
            for i in 0..self.cells[0] {
                if !self.is_active(i as i64, j as i64) {
                    continue;
                }
                for side in self.sides() {
                    if let Some(t) = self.side_tag(i, j, side) {
                        out.insert(t);
                    }
                }
            }
        }
        out
    }

    pub fn sides(&self) -> Vec<usize> {
        if self.dim == 1 {
            vec![LEFT, RIGHT]
        } else {
            vec![BOTTOM, RIGHT, TOP, LEFT]
        }
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    fn hash_into(&self, h: &mut Fnv) {
        h.write_u64(self.dim as u64);
        for v in self.origin.iter().chain(&self.cell) {
            h.write_u64(v.to_bits());
        }
        for &c in &self.cells {
            h.write_u64(c as u64);
        }
        for a in &self.active {
            h.write_u64(*a as u64);
        }
    }
}

/// Small deterministic hash used for content-derived identifiers.
pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) fn new() -> Self {
        Fnv(0xcbf29ce484222325)
    }

    pub(crate) fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Leaf {
    pub level: u8,
    pub i: u32,
    pub j: u32,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct BoundaryEdge {
    pub element: usize,
    pub side: usize,
    /// End nodes ordered by increasing coordinate; in 1D both entries coincide.
    pub nodes: [usize; 2],
    pub tag: String,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Hanging {
    pub node: usize,
    pub parents: [usize; 2],
}

#[derive(Clone, Debug)]
pub struct SpaceMesh {
    pub id: u64,
    pub parent: Option<u64>,
    pub layout: Arc<Layout>,
    pub leaves: Vec<Leaf>,
    leaf_index: HashMap<Leaf, usize>,
    pub max_level: u8,
    pub nodes: Vec<[f64; 2]>,
    /// Corner nodes: 1D `[left, right, -, -]`; 2D counter-clockwise from the
    /// lower-left corner.
    pub elements: Vec<[usize; 4]>,
    /// `[xmin, xmax, ymin, ymax]`.
    pub bounds: Vec<[f64; 4]>,
    pub boundary: Vec<BoundaryEdge>,
    pub hanging: Vec<Hanging>,
    pub dirichlet: Vec<bool>,
    dirichlet_tags: BTreeSet<String>,
}

impl SpaceMesh {
    pub fn base(layout: Arc<Layout>, dirichlet_tags: &BTreeSet<String>) -> Self {
        let mut leaves = Vec::new();
        for j in 0..layout.cells[1] {
            for i in 0..layout.cells[0] {
                if layout.is_active(i as i64, j as i64) {
                    leaves.push(Leaf { level: 0, i: i as u32, j: j as u32 });
                }
            }
        }
        Self::from_leaves(layout, leaves, dirichlet_tags.clone(), None)
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn nodes_per_element(&self) -> usize {
        if self.dim() == 1 {
            2
        } else {
            4
        }
    }

    pub fn element_nodes(&self, e: usize) -> &[usize] {
        &self.elements[e][..self.nodes_per_element()]
    }

    pub fn dirichlet_tags(&self) -> &BTreeSet<String> {
        &self.dirichlet_tags
    }

    /// Largest element diameter.
    pub fn h_max(&self) -> f64 {
        self.bounds
            .iter()
            .map(|b| {
                if self.dim() == 1 {
                    b[1] - b[0]
                } else {
                    ((b[1] - b[0]).powi(2) + (b[3] - b[2]).powi(2)).sqrt()
                }
            })
            .fold(0.0, f64::max)
    }

    fn from_leaves(layout: Arc<Layout>, mut leaves: Vec<Leaf>, dirichlet_tags: BTreeSet<String>, parent: Option<u64>) -> Self {
        let dim = layout.dim;
        let max_level = leaves.iter().map(|l| l.level).max().unwrap_or(0);
        // Geometric order: rows bottom-up, then left-right, finest resolution.
        leaves.sort_by_key(|l| {
            let s = max_level - l.level;
            ((l.j as u64) << s, (l.i as u64) << s, l.level)
        });
        let scale = [layout.cell[0] / (1u64 << max_level) as f64, layout.cell[1] / (1u64 << max_level) as f64];
        let corner_keys = |l: &Leaf| -> [(u64, u64); 4] {
            let s = max_level - l.level;
            let (x0, x1) = ((l.i as u64) << s, ((l.i as u64) + 1) << s);
            if dim == 1 {
                [(0, x0), (0, x1), (0, x1), (0, x0)]
            } else {
                let (y0, y1) = ((l.j as u64) << s, ((l.j as u64) + 1) << s);
                [(y0, x0), (y0, x1), (y1, x1), (y1, x0)]
            }
        };
        let mut keyset = BTreeMap::new();
        for l in &leaves {
            for k in corner_keys(l) {
                keyset.insert(k, 0usize);
            }
        }
        let mut nodes = Vec::with_capacity(keyset.len());
        for (n, (k, v)) in keyset.iter_mut().enumerate() {
            *v = n;
            let x = layout.origin[0] + k.1 as f64 * scale[0];
            let y = if dim == 1 { 0.0 } else { layout.origin[1] + k.0 as f64 * scale[1] };
            nodes.push([x, y]);
        }
        let mut elements = Vec::with_capacity(leaves.len());
        let mut bounds = Vec::with_capacity(leaves.len());
        for l in &leaves {
            let ks = corner_keys(l);
            let ids = ks.map(|k| keyset[&k]);
            elements.push(ids);
            let (a, c) = (nodes[ids[0]], nodes[ids[2]]);
            bounds.push([a[0], c[0], a[1], if dim == 1 { 0.0 } else { c[1] }]);
        }
        // Boundary edges and hanging nodes.
        let mut boundary = Vec::new();
        let mut hanging_map = BTreeMap::new();
        let full = 1u64 << max_level;
        for (e, l) in leaves.iter().enumerate() {
            let ks = corner_keys(l);
            let s = max_level - l.level;
            let bi = (l.i >> (l.level as u32)) as usize;
            let bj = (l.j >> (l.level as u32)) as usize;
            for side in layout.sides() {
                let (ka, kb) = side_keys(dim, &ks, side);
                // Is the side on the boundary of its base cell?
                let on_base_edge = match side {
                    LEFT => ks[0].1 % full == 0,
                    RIGHT => ks[1].1 % full == 0,
                    BOTTOM => ks[0].0 % full == 0,
                    _ => ks[2].0 % full == 0,
                };
                if on_base_edge {
                    if let Some(tag) = layout.side_tag(bi, bj, side) {
                        let (na, nb) = (keyset[&ka], keyset[&kb]);
                        boundary.push(BoundaryEdge { element: e, side, nodes: [na, nb], tag });
                        continue;
                    }
                }
                if dim == 2 && s >= 1 {
                    let mid = ((ka.0 + kb.0) / 2, (ka.1 + kb.1) / 2);
                    if let Some(&h) = keyset.get(&mid) {
                        hanging_map.insert(h, [keyset[&ka], keyset[&kb]]);
                    }
                }
            }
        }
        let hanging: Vec<Hanging> = hanging_map.into_iter().map(|(node, parents)| Hanging { node, parents }).collect();
        let mut dirichlet = vec![false; nodes.len()];
        for b in &boundary {
            if dirichlet_tags.contains(&b.tag) {
                dirichlet[b.nodes[0]] = true;
                dirichlet[b.nodes[1]] = true;
            }
        }
        let mut h = Fnv::new();
        layout.hash_into(&mut h);
        for l in &leaves {
            h.write_u64(((l.level as u64) << 56) ^ ((l.i as u64) << 28) ^ l.j as u64);
        }
        for t in &dirichlet_tags {
            for b in t.bytes() {
                h.write_u64(b as u64);
            }
        }
        let leaf_index = leaves.iter().enumerate().map(|(n, l)| (*l, n)).collect();
        SpaceMesh {
            id: h.finish(),
            parent,
            layout,
            leaves,
            leaf_index,
            max_level,
            nodes,
            elements,
            bounds,
            boundary,
            hanging,
            dirichlet,
            dirichlet_tags,
        }
    }

    /// Splits the marked elements (2 children in 1D, 4 in 2D). In 2D the
    /// result is balanced so that neighbouring levels differ by at most one.
    pub fn refine(&self, marked: &[bool]) -> Result<SpaceMesh> {
        if marked.len() != self.n_elements() {
            return Err(Error::InvalidArgument("mark vector length differs from element count".into()));
        }
        let mut set: BTreeSet<Leaf> = self.leaves.iter().copied().collect();
        let mut to_split: Vec<Leaf> = self.leaves.iter().zip(marked).filter(|(_, &m)| m).map(|(l, _)| *l).collect();
        loop {
            for l in to_split.drain(..) {
                if set.remove(&l) {
                    for c in children(self.dim(), &l) {
                        set.insert(c);
                    }
                }
            }
            if self.dim() == 1 {
                break;
            }
            // 2:1 balance: any leaf adjacent to a leaf two or more levels finer splits.
            let mut need = BTreeSet::new();
            for l in &set {
                if l.level < 2 {
                    continue;
                }
                let (i, j) = (l.i as i64, l.j as i64);
                for (di, dj) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                    if let Some(n) = find_containing(&set, l.level, i + di, j + dj) {
                        if n.level + 1 < l.level {
                            need.insert(n);
                        }
                    }
                }
            }
            if need.is_empty() {
                break;
            }
            to_split.extend(need);
        }
        Ok(Self::from_leaves(self.layout.clone(), set.into_iter().collect(), self.dirichlet_tags.clone(), Some(self.id)))
    }

    pub fn refine_uniform(&self) -> SpaceMesh {
        self.refine(&vec![true; self.n_elements()]).expect("uniform marks")
    }

    pub fn refine_uniform_times(&self, times: usize) -> SpaceMesh {
        let mut m = self.clone();
        for _ in 0..times {
            m = m.refine_uniform();
        }
        m
    }

    /// Element containing the point; points on shared sides resolve to one
    /// of the adjacent elements.
    pub fn locate(&self, x: f64, y: f64) -> Option<usize> {
        let lay = &self.layout;
        let xs = (x - lay.origin[0]) / lay.cell[0];
        let ys = if self.dim() == 1 { 0.5 } else { (y - lay.origin[1]) / lay.cell[1] };
        for level in 0..=self.max_level {
            let f = (1u64 << level) as f64;
            let nx = (lay.cells[0] as u64) << level;
            let ny = if self.dim() == 1 { 1 } else { (lay.cells[1] as u64) << level };
            let i = ((xs * f).floor().max(0.0) as u64).min(nx - 1);
            let j = if self.dim() == 1 { 0 } else { ((ys * f).floor().max(0.0) as u64).min(ny - 1) };
            if let Some(&e) = self.leaf_index.get(&Leaf { level, i: i as u32, j: j as u32 }) {
                return Some(e);
            }
        }
        None
    }

    /// Whether every element of `self` lies inside an element of `coarse`.
    pub fn is_nested_in(&self, coarse: &SpaceMesh) -> bool {
        if *self.layout != *coarse.layout || self.dirichlet_tags != coarse.dirichlet_tags {
            return false;
        }
        self.leaves.iter().all(|l| ancestor_in(&coarse.leaf_index, l).is_some())
    }

    /// For each element of `self`, the element of `coarse` containing it.
    pub fn ancestors_in(&self, coarse: &SpaceMesh) -> Result<Vec<usize>> {
        if *self.layout != *coarse.layout {
            return Err(Error::NotNested("different base layouts".into()));
        }
        self.leaves
            .iter()
            .map(|l| ancestor_in(&coarse.leaf_index, l).ok_or_else(|| Error::NotNested(format!("mesh {:016x} not inside {:016x}", self.id, coarse.id))))
            .collect()
    }

    /// Values of the element's shape functions at `(x, y)`.
    pub fn shape_values(&self, e: usize, x: f64, y: f64) -> [f64; 4] {
        let b = self.bounds[e];
        let s = (x - b[0]) / (b[1] - b[0]);
        if self.dim() == 1 {
            return [1.0 - s, s, 0.0, 0.0];
        }
        let t = (y - b[2]) / (b[3] - b[2]);
        [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t]
    }

    /// Evaluates a nodal field at a point of element `e`.
    pub fn eval_nodal(&self, field: &[f64], e: usize, x: f64, y: f64) -> f64 {
        let n = self.shape_values(e, x, y);
        self.element_nodes(e).iter().zip(n).map(|(&i, w)| field[i] * w).sum()
    }

    /// Gradient of a nodal field inside element `e`.
    pub fn grad_nodal(&self, field: &[f64], e: usize, x: f64, y: f64) -> [f64; 2] {
        let b = self.bounds[e];
        let nn = self.element_nodes(e);
        let hx = b[1] - b[0];
        if self.dim() == 1 {
            return [(field[nn[1]] - field[nn[0]]) / hx, 0.0];
        }
        let hy = b[3] - b[2];
        let s = (x - b[0]) / hx;
        let t = (y - b[2]) / hy;
        let u = [field[nn[0]], field[nn[1]], field[nn[2]], field[nn[3]]];
        let gx = ((u[1] - u[0]) * (1.0 - t) + (u[2] - u[3]) * t) / hx;
        let gy = ((u[3] - u[0]) * (1.0 - s) + (u[2] - u[1]) * s) / hy;
        [gx, gy]
    }

    /// Exact transfer of a nodal field to a nested finer mesh.
    pub fn transfer_nodal(&self, field: &[f64], fine: &SpaceMesh) -> Result<Vec<f64>> {
        if field.len() != self.n_nodes() {
            return Err(Error::InvalidArgument("field length differs from node count".into()));
        }
        if fine.id == self.id {
            return Ok(field.to_vec());
        }
        let anc = fine.ancestors_in(self)?;
        let mut out = vec![0.0; fine.n_nodes()];
        for (e, &a) in anc.iter().enumerate() {
            for &n in fine.element_nodes(e) {
                let p = fine.nodes[n];
                out[n] = self.eval_nodal(field, a, p[0], p[1]);
            }
        }
        Ok(out)
    }

    /// Boundary edges carrying one of the given tags.
    pub fn edges_with_tags<'a>(&'a self, tags: &'a BTreeSet<String>) -> impl Iterator<Item = &'a BoundaryEdge> + 'a {
        self.boundary.iter().filter(move |b| tags.contains(&b.tag))
    }

    /// JSON dump with keys nodes, elements, boundary, constraints, parent.
    pub fn to_json(&self) -> serde_json::Value {
        let npe = self.nodes_per_element();
        serde_json::json!({
            "id": format!("{:016x}", self.id),
            "dim": self.dim(),
            "nodes": self.nodes.iter().map(|p| if self.dim() == 1 { vec![p[0]] } else { p.to_vec() }).collect::<Vec<_>>(),
            "elements": self.elements.iter().map(|e| e[..npe].to_vec()).collect::<Vec<_>>(),
            "boundary": self.boundary,
            "constraints": self.hanging,
            "parent": self.parent.map(|p| format!("{p:016x}")),
        })
    }
}

fn side_keys(dim: usize, ks: &[(u64, u64); 4], side: usize) -> ((u64, u64), (u64, u64)) {
    if dim == 1 {
        return if side == LEFT { (ks[0], ks[0]) } else { (ks[1], ks[1]) };
    }
    match side {
        BOTTOM => (ks[0], ks[1]),
        RIGHT => (ks[1], ks[2]),
        TOP => (ks[3], ks[2]),
        _ => (ks[0], ks[3]),
    }
}

fn children(dim: usize, l: &Leaf) -> Vec<Leaf> {
    let lv = l.level + 1;
    if dim == 1 {
        return vec![Leaf { level: lv, i: 2 * l.i, j: 0 }, Leaf { level: lv, i: 2 * l.i + 1, j: 0 }];
    }
    let mut out = Vec::with_capacity(4);
    for dj in 0..2 {
        for di in 0..2 {
            out.push(Leaf { level: lv, i: 2 * l.i + di, j: 2 * l.j + dj });
        }
    }
    out
}

fn find_containing(set: &BTreeSet<Leaf>, level: u8, i: i64, j: i64) -> Option<Leaf> {
    if i < 0 || j < 0 {
        return None;
    }
    (0..=level).rev().find_map(|lv| {
        let s = (level - lv) as u32;
        let cand = Leaf { level: lv, i: (i >> s) as u32, j: (j >> s) as u32 };
        set.contains(&cand).then_some(cand)
    })
}

fn ancestor_in(index: &HashMap<Leaf, usize>, l: &Leaf) -> Option<usize> {
    (0..=l.level).rev().find_map(|lv| {
        let s = (l.level - lv) as u32;
        index.get(&Leaf { level: lv, i: l.i >> s, j: l.j >> s }).copied()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn interval_mesh() {
        let lay = Arc::new(Layout::interval(0.0, 1.0, 20).unwrap());
        let m = SpaceMesh::base(lay, &tags(&["left", "right"]));
        assert_eq!(m.n_nodes(), 21);
        assert_eq!(m.n_elements(), 20);
        assert!(m.dirichlet[0] && m.dirichlet[20]);
        assert_eq!(m.dirichlet.iter().filter(|&&d| d).count(), 2);
        assert!((m.h_max() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn quarter_domain_with_hole() {
        let lay = Arc::new(Layout::quads([0.0, 0.0], [0.1, 0.1], [10, 10], vec![[2, 7, 0, 3]]).unwrap());
        assert_eq!(lay.tags(), tags(&["bottom", "hole0", "left", "right", "top"]));
        let m = SpaceMesh::base(lay, &tags(&["right", "top"]));
        assert_eq!(m.n_elements(), 85);
        // 11x11 grid minus the 4x3 nodes touching only hole cells (the hole
        // reaches the bottom edge).
        assert_eq!(m.n_nodes(), 121 - 12);
        assert!(m.hanging.is_empty());
        let hole_len: f64 = m
            .boundary
            .iter()
            .filter(|b| b.tag == "hole0")
            .map(|b| {
                let (a, c) = (m.nodes[b.nodes[0]], m.nodes[b.nodes[1]]);
                (c[0] - a[0]).abs() + (c[1] - a[1]).abs()
            })
            .sum();
        assert!((hole_len - 1.1).abs() < 1e-12);
    }

    #[test]
    fn marking_one_corner_quad_gives_hanging_nodes() {
        let lay = Arc::new(Layout::quads([0.0, 0.0], [1.0, 1.0], [2, 2], vec![]).unwrap());
        let m = SpaceMesh::base(lay, &tags(&["left", "right", "top", "bottom"]));
        let mut marks = vec![false; 4];
        marks[0] = true;
        let f = m.refine(&marks).unwrap();
        assert_eq!(f.n_elements(), 7);
        assert_eq!(f.hanging.len(), 2);
        assert!(f.is_nested_in(&m));
        assert!(!m.is_nested_in(&f));
    }

    #[test]
    fn balance_cascades() {
        let lay = Arc::new(Layout::quads([0.0, 0.0], [1.0, 1.0], [2, 1], vec![]).unwrap());
        let m = SpaceMesh::base(lay, &tags(&["left"]));
        // Refine the left cell, then the child in its lower-right corner.
        let m1 = m.refine(&[true, false]).unwrap();
        let mut marks = vec![false; m1.n_elements()];
        let target = m1.locate(0.75, 0.25).unwrap();
        marks[target] = true;
        let m2 = m1.refine(&marks).unwrap();
        // The right base cell must have been split to keep the 2:1 rule.
        assert_eq!(m2.n_elements(), 3 + 4 + 4);
    }

    #[test]
    fn transfer_is_exact_for_bilinear() {
        let lay = Arc::new(Layout::quads([0.0, 0.0], [0.5, 0.5], [2, 2], vec![]).unwrap());
        let m = SpaceMesh::base(lay, &tags(&["left"]));
        let f: Vec<f64> = m.nodes.iter().map(|p| 1.0 + 2.0 * p[0] - p[1] + 3.0 * p[0] * p[1]).collect();
        let fine = m.refine_uniform_times(2);
        let g = m.transfer_nodal(&f, &fine).unwrap();
        for (p, v) in fine.nodes.iter().zip(&g) {
            let exact = 1.0 + 2.0 * p[0] - p[1] + 3.0 * p[0] * p[1];
            assert!((v - exact).abs() < 1e-13);
        }
        assert!(matches!(fine.transfer_nodal(&g, &m), Err(Error::NotNested(_))));
    }
}
