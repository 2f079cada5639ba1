//! Quadratic-Lagrange meshes over the medial half-plane: structured mapped
//! (transfinite) meshing of quadrilateral patches and import of externally
//! generated meshes.
//!
//! Local orderings, fixed here once for the whole crate and for the import
//! format:
//! - quad9: corners 0-3 counter-clockwise starting at reference (-1,-1),
//!   edge midpoints 4-7 (midpoint `4+k` on the edge from corner `k` to
//!   corner `k+1`), center 8.
//! - tri6: corners 0-2 at reference (0,0), (1,0), (0,1); midsides 3-5
//!   (midside `3+k` on the edge from corner `k` to corner `k+1`).
//! - local edge `k` runs counter-clockwise from corner `k`, so for a
//!   positively oriented element the outward normal is the edge tangent
//!   rotated by -90 degrees.

use std::collections::BTreeMap;

use crate::geometry::{BoundaryCondition, ResonatorGeometry, COORD_TOL};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Quad9,
    Tri6,
}

impl ElementKind {
    pub fn n_nodes(self) -> usize {
        match self {
            ElementKind::Quad9 => 9,
            ElementKind::Tri6 => 6,
        }
    }

    pub fn n_edges(self) -> usize {
        match self {
            ElementKind::Quad9 => 4,
            ElementKind::Tri6 => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub kind: ElementKind,
    /// Node ids in the local ordering documented above.
    pub nodes: Vec<usize>,
    /// Index of the geometry region this element discretises.
    pub region: usize,
}

/// A tagged element edge on the resonator boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    pub element: usize,
    pub local_edge: usize,
    pub condition: BoundaryCondition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<Node>,
    pub elements: Vec<Element>,
    pub boundary_edges: Vec<BoundaryEdge>,
}

// ---------------------------------------------------------------------------
// shape functions and quadrature
// ---------------------------------------------------------------------------

fn lag1d(t: f64) -> [f64; 3] {
    [0.5 * t * (t - 1.0), 1.0 - t * t, 0.5 * t * (t + 1.0)]
}

fn lag1d_d(t: f64) -> [f64; 3] {
    [t - 0.5, -2.0 * t, t + 0.5]
}

/// Reference coordinates of the quad9 nodes.
pub const QUAD9_REF: [(f64, f64); 9] = [
    (-1.0, -1.0),
    (1.0, -1.0),
    (1.0, 1.0),
    (-1.0, 1.0),
    (0.0, -1.0),
    (1.0, 0.0),
    (0.0, 1.0),
    (-1.0, 0.0),
    (0.0, 0.0),
];

/// Reference coordinates of the tri6 nodes.
pub const TRI6_REF: [(f64, f64); 6] = [
    (0.0, 0.0),
    (1.0, 0.0),
    (0.0, 1.0),
    (0.5, 0.0),
    (0.5, 0.5),
    (0.0, 0.5),
];

// quad9: index of the 1D basis function (by reference coordinate -1/0/+1)
// along each axis, per node
fn quad9_idx(c: f64) -> usize {
    if c < -0.5 {
        0
    } else if c > 0.5 {
        2
    } else {
        1
    }
}

/// Shape-function values and reference-coordinate gradients at a reference
/// point. Total on the reference element; callers keep points in range.
pub fn shape_eval(kind: ElementKind, rp: (f64, f64)) -> (Vec<f64>, Vec<(f64, f64)>) {
    let (r, s) = rp;
    match kind {
        ElementKind::Quad9 => {
            let lr = lag1d(r);
            let ls = lag1d(s);
            let dr = lag1d_d(r);
            let ds = lag1d_d(s);
            let mut vals = Vec::with_capacity(9);
            let mut grads = Vec::with_capacity(9);
            for &(cr, cs) in &QUAD9_REF {
                let (i, j) = (quad9_idx(cr), quad9_idx(cs));
                vals.push(lr[i] * ls[j]);
                grads.push((dr[i] * ls[j], lr[i] * ds[j]));
            }
            (vals, grads)
        }
        ElementKind::Tri6 => {
            let l0 = 1.0 - r - s;
            let (l1, l2) = (r, s);
            let vals = vec![
                l0 * (2.0 * l0 - 1.0),
                l1 * (2.0 * l1 - 1.0),
                l2 * (2.0 * l2 - 1.0),
                4.0 * l0 * l1,
                4.0 * l1 * l2,
                4.0 * l2 * l0,
            ];
            // d l0/dr = -1, d l0/ds = -1
            let grads = vec![
                (1.0 - 4.0 * l0, 1.0 - 4.0 * l0),
                (4.0 * l1 - 1.0, 0.0),
                (0.0, 4.0 * l2 - 1.0),
                (4.0 * (l0 - l1), -4.0 * l1),
                (4.0 * l2, 4.0 * l1),
                (-4.0 * l2, 4.0 * (l0 - l2)),
            ];
            (vals, grads)
        }
    }
}

/// 3-point Gauss rule on [-1, 1] (exact through degree 5).
pub fn gauss3() -> [(f64, f64); 3] {
    let p = (0.6_f64).sqrt();
    [(-p, 5.0 / 9.0), (0.0, 8.0 / 9.0), (p, 5.0 / 9.0)]
}

/// Area quadrature on the reference element: 3x3 Gauss for quads, a 7-point
/// degree-5 rule for triangles. Returns (reference point, weight).
pub fn quadrature(kind: ElementKind) -> Vec<((f64, f64), f64)> {
    match kind {
        ElementKind::Quad9 => {
            let g = gauss3();
            let mut out = Vec::with_capacity(9);
            for &(r, wr) in &g {
                for &(s, ws) in &g {
                    out.push(((r, s), wr * ws));
                }
            }
            out
        }
        ElementKind::Tri6 => {
            let a1 = 0.059_715_871_789_770;
            let b1 = 0.470_142_064_105_115;
            let w1 = 0.132_394_152_788_506;
            let a2 = 0.797_426_985_353_087;
            let b2 = 0.101_286_507_323_456;
            let w2 = 0.125_939_180_544_827;
            let pts = [
                ((1.0 / 3.0, 1.0 / 3.0), 0.225),
                ((a1, b1), w1),
                ((b1, a1), w1),
                ((b1, b1), w1),
                ((a2, b2), w2),
                ((b2, a2), w2),
                ((b2, b2), w2),
            ];
            // barycentric weights sum to 1; reference-triangle area is 1/2
            pts.iter().map(|&(p, w)| (p, 0.5 * w)).collect()
        }
    }
}

/// Reduced quadrature for derivative-based diagnostics: 2x2 Gauss for quads
/// (the derivative superconvergence points of quadratic elements, where the
/// interpolation error of first derivatives is smallest), 3 midside points
/// for triangles.
pub fn diagnostic_quadrature(kind: ElementKind) -> Vec<((f64, f64), f64)> {
    match kind {
        ElementKind::Quad9 => {
            let p = 1.0 / 3.0_f64.sqrt();
            let mut out = Vec::with_capacity(4);
            for &r in &[-p, p] {
                for &s in &[-p, p] {
                    out.push(((r, s), 1.0));
                }
            }
            out
        }
        ElementKind::Tri6 => {
            let w = 1.0 / 6.0;
            vec![((0.5, 0.0), w), ((0.5, 0.5), w), ((0.0, 0.5), w)]
        }
    }
}

/// Local node indices along edge `k` (corner, midside, corner).
pub fn edge_nodes(kind: ElementKind, edge: usize) -> [usize; 3] {
    match kind {
        ElementKind::Quad9 => [edge, 4 + edge, (edge + 1) % 4],
        ElementKind::Tri6 => [edge, 3 + edge, (edge + 1) % 3],
    }
}

/// Reference coordinates of a point on edge `k` at 1D parameter t in [-1,1],
/// traversing the edge counter-clockwise, together with d(ref)/dt.
pub fn edge_point(kind: ElementKind, edge: usize, t: f64) -> ((f64, f64), (f64, f64)) {
    let n = edge_nodes(kind, edge);
    let refc: &[(f64, f64)] = match kind {
        ElementKind::Quad9 => &QUAD9_REF,
        ElementKind::Tri6 => &TRI6_REF,
    };
    let (a, b) = (refc[n[0]], refc[n[2]]);
    let u = 0.5 * (t + 1.0);
    (
        (a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1)),
        (0.5 * (b.0 - a.0), 0.5 * (b.1 - a.1)),
    )
}

/// Geometry of an element at one reference point: physical position,
/// Jacobian determinant of the reference map, shape values, and gradients
/// with respect to physical (x, y).
#[derive(Debug, Clone)]
pub struct MappedPoint {
    pub x: f64,
    pub y: f64,
    pub det_j: f64,
    /// Jacobian [[dx/dr, dx/ds], [dy/dr, dy/ds]].
    pub jac: [[f64; 2]; 2],
    pub values: Vec<f64>,
    pub grads_xy: Vec<(f64, f64)>,
}

impl Mesh {
    /// Evaluates the reference-to-physical map of `elem` at `rp`.
    pub fn map_point(&self, elem: &Element, rp: (f64, f64)) -> MappedPoint {
        let (values, grads) = shape_eval(elem.kind, rp);
        let mut x = 0.0;
        let mut y = 0.0;
        let mut j = [[0.0_f64; 2]; 2];
        for (i, &nid) in elem.nodes.iter().enumerate() {
            let n = self.nodes[nid];
            x += values[i] * n.x;
            y += values[i] * n.y;
            j[0][0] += grads[i].0 * n.x;
            j[0][1] += grads[i].1 * n.x;
            j[1][0] += grads[i].0 * n.y;
            j[1][1] += grads[i].1 * n.y;
        }
        let det_j = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let inv = [
            [j[1][1] / det_j, -j[0][1] / det_j],
            [-j[1][0] / det_j, j[0][0] / det_j],
        ];
        let grads_xy = grads
            .iter()
            .map(|g| (g.0 * inv[0][0] + g.1 * inv[1][0], g.0 * inv[0][1] + g.1 * inv[1][1]))
            .collect();
        MappedPoint { x, y, det_j, jac: j, values, grads_xy }
    }

    /// Global node ids along a boundary edge (corner, midside, corner).
    pub fn boundary_edge_node_ids(&self, be: &BoundaryEdge) -> [usize; 3] {
        let elem = &self.elements[be.element];
        edge_nodes(elem.kind, be.local_edge).map(|l| elem.nodes[l])
    }

    /// Outward unit normal of a boundary edge at 1D parameter t in [-1,1].
    /// Elements are positively oriented, so the normal is the physical edge
    /// tangent rotated by -90 degrees.
    pub fn boundary_normal(&self, be: &BoundaryEdge, t: f64) -> (f64, f64) {
        let elem = &self.elements[be.element];
        let (rp, dref) = edge_point(elem.kind, be.local_edge, t);
        let mp = self.map_point(elem, rp);
        let tx = mp.jac[0][0] * dref.0 + mp.jac[0][1] * dref.1;
        let ty = mp.jac[1][0] * dref.0 + mp.jac[1][1] * dref.1;
        let l = tx.hypot(ty);
        (ty / l, -tx / l)
    }

    /// Length element |d(x,y)/dt| of a boundary edge at parameter t.
    pub fn boundary_jacobian(&self, be: &BoundaryEdge, t: f64) -> f64 {
        let elem = &self.elements[be.element];
        let (rp, dref) = edge_point(elem.kind, be.local_edge, t);
        let mp = self.map_point(elem, rp);
        let tx = mp.jac[0][0] * dref.0 + mp.jac[0][1] * dref.1;
        let ty = mp.jac[1][0] * dref.0 + mp.jac[1][1] * dref.1;
        tx.hypot(ty)
    }

    /// Structural checks shared by the mapped mesher and the importer:
    /// positive Jacobians, dense node usage, conformity (each interior edge
    /// shared by exactly two elements), and full boundary tagging.
    pub fn validate(&self, geometry: &ResonatorGeometry) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::Mesh(format!("node ids not dense at {i}")));
            }
            if n.x < -COORD_TOL {
                return Err(Error::Mesh(format!("node {i} has negative x")));
            }
        }
        for (ei, e) in self.elements.iter().enumerate() {
            if e.nodes.len() != e.kind.n_nodes() {
                return Err(Error::Mesh(format!("element {ei}: wrong node count")));
            }
            if e.region >= geometry.regions.len() {
                return Err(Error::Mesh(format!("element {ei}: region id out of range")));
            }
            for &n in &e.nodes {
                if n >= self.nodes.len() {
                    return Err(Error::Mesh(format!("element {ei} references undefined node {n}")));
                }
            }
            for (rp, _) in quadrature(e.kind) {
                let mp = self.map_point(e, rp);
                if mp.det_j <= 0.0 {
                    return Err(Error::Mesh(format!(
                        "element {ei}: nonpositive Jacobian {:.3e}",
                        mp.det_j
                    )));
                }
            }
        }
        // conformity and boundary coverage via the corner-pair edge map
        let mut edge_use: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
        for (ei, e) in self.elements.iter().enumerate() {
            for le in 0..e.kind.n_edges() {
                let n = edge_nodes(e.kind, le).map(|l| e.nodes[l]);
                let key = (n[0].min(n[2]), n[0].max(n[2]));
                edge_use.entry(key).or_default().push((ei, le));
            }
        }
        let mut tagged: BTreeMap<(usize, usize), &BoundaryCondition> = BTreeMap::new();
        for be in &self.boundary_edges {
            let n = self.boundary_edge_node_ids(be);
            tagged.insert((n[0].min(n[2]), n[0].max(n[2])), &be.condition);
        }
        for (key, users) in &edge_use {
            match users.len() {
                1 => {
                    let (a, b) = (self.nodes[key.0], self.nodes[key.1]);
                    let on_axis = a.x.abs() <= COORD_TOL && b.x.abs() <= COORD_TOL;
                    if !on_axis && !tagged.contains_key(key) {
                        return Err(Error::Mesh(format!(
                            "untagged external edge between nodes {} and {} \
                             (T-junction or missing boundary condition)",
                            key.0, key.1
                        )));
                    }
                }
                2 => {
                    // interior edges must share the midside node too
                    let (e0, l0) = users[0];
                    let (e1, l1) = users[1];
                    let m0 = self.elements[e0].nodes[edge_nodes(self.elements[e0].kind, l0)[1]];
                    let m1 = self.elements[e1].nodes[edge_nodes(self.elements[e1].kind, l1)[1]];
                    if m0 != m1 {
                        return Err(Error::Mesh(format!(
                            "interior edge between nodes {} and {} has unmerged midside nodes",
                            key.0, key.1
                        )));
                    }
                    if tagged.contains_key(key) {
                        return Err(Error::Mesh(format!(
                            "interior edge between nodes {} and {} carries a boundary tag",
                            key.0, key.1
                        )));
                    }
                }
                n => {
                    return Err(Error::Mesh(format!(
                        "edge between nodes {} and {} used by {n} elements",
                        key.0, key.1
                    )));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// mapped (transfinite) meshing
// ---------------------------------------------------------------------------

/// Arc-length parameterization of a polyline: p(t) for t in [0,1].
struct ArcPolyline {
    pts: Vec<(f64, f64)>,
    cum: Vec<f64>,
}

impl ArcPolyline {
    fn new(pts: Vec<(f64, f64)>) -> Self {
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            cum.push(cum.last().unwrap() + d);
        }
        ArcPolyline { pts, cum }
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    fn at(&self, t: f64) -> (f64, f64) {
        if t <= 0.0 {
            return self.pts[0];
        }
        if t >= 1.0 {
            return *self.pts.last().unwrap();
        }
        let s = t * self.length();
        let k = match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.pts.len() - 2),
            Err(i) => i - 1,
        };
        let seg = self.cum[k + 1] - self.cum[k];
        let u = if seg > 0.0 { (s - self.cum[k]) / seg } else { 0.0 };
        (
            self.pts[k].0 + u * (self.pts[k + 1].0 - self.pts[k].0),
            self.pts[k].1 + u * (self.pts[k + 1].1 - self.pts[k].1),
        )
    }
}

/// Merges physical points into unique node ids with a spatial hash.
struct NodePool {
    nodes: Vec<Node>,
    grid: BTreeMap<(i64, i64), Vec<usize>>,
    tol: f64,
}

impl NodePool {
    fn new(tol: f64) -> Self {
        NodePool { nodes: Vec::new(), grid: BTreeMap::new(), tol }
    }

    fn insert(&mut self, x: f64, y: f64) -> usize {
        let x = if x.abs() <= self.tol { 0.0 } else { x };
        let (ci, cj) = ((x / self.tol).round() as i64, (y / self.tol).round() as i64);
        for di in -1..=1 {
            for dj in -1..=1 {
                if let Some(ids) = self.grid.get(&(ci + di, cj + dj)) {
                    for &id in ids {
                        let n = self.nodes[id];
                        if (n.x - x).abs() <= self.tol && (n.y - y).abs() <= self.tol {
                            return id;
                        }
                    }
                }
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node { id, x, y });
        self.grid.entry((ci, cj)).or_default().push(id);
        id
    }
}

/// Structured meshing of every region as a transfinite (Coons) patch.
/// Shared region sides produce coincident nodes which are merged, so the
/// result is conforming; any subdivision mismatch between neighbours
/// surfaces as a validation error.
pub fn map_mesh(geometry: &ResonatorGeometry) -> Result<Mesh> {
    let mut diam = 0.0_f64;
    for r in &geometry.regions {
        for &(x, y) in &r.vertices {
            diam = diam.max(x.abs()).max(y.abs());
        }
    }
    let tol = (diam * 1e-8).max(1e-14);
    let mut pool = NodePool::new(tol);
    let mut elements = Vec::new();
    let mut boundary_edges = Vec::new();

    for (ri, region) in geometry.regions.iter().enumerate() {
        let nx = region.edge_counts[0];
        let ny = region.edge_counts[1];
        let sides: Vec<ArcPolyline> =
            (0..4).map(|s| ArcPolyline::new(region.side_polyline(s))).collect();
        for (s, side) in sides.iter().enumerate() {
            if side.length() <= tol {
                return Err(Error::Mesh(format!("region {ri}: side {s} is degenerate")));
            }
        }
        let c: [(f64, f64); 4] = [0, 1, 2, 3].map(|k| region.vertices[region.corners[k]]);
        // Coons patch over the four arc-length-parameterized sides
        let point = |u: f64, v: f64| -> (f64, f64) {
            let bot = sides[0].at(u);
            let right = sides[1].at(v);
            let top = sides[2].at(1.0 - u);
            let left = sides[3].at(1.0 - v);
            let px = (1.0 - v) * bot.0 + v * top.0 + (1.0 - u) * left.0 + u * right.0
                - ((1.0 - u) * (1.0 - v) * c[0].0
                    + u * (1.0 - v) * c[1].0
                    + u * v * c[2].0
                    + (1.0 - u) * v * c[3].0);
            let py = (1.0 - v) * bot.1 + v * top.1 + (1.0 - u) * left.1 + u * right.1
                - ((1.0 - u) * (1.0 - v) * c[0].1
                    + u * (1.0 - v) * c[1].1
                    + u * v * c[2].1
                    + (1.0 - u) * v * c[3].1);
            (px, py)
        };
        let cols = 2 * nx + 1;
        let rows = 2 * ny + 1;
        let mut grid = vec![0usize; cols * rows];
        for j in 0..rows {
            for i in 0..cols {
                let (x, y) = point(i as f64 / (cols - 1) as f64, j as f64 / (rows - 1) as f64);
                grid[j * cols + i] = pool.insert(x, y);
            }
        }
        let elem_base = elements.len();
        for j in 0..ny {
            for i in 0..nx {
                let g = |di: usize, dj: usize| grid[(2 * j + dj) * cols + 2 * i + di];
                elements.push(Element {
                    kind: ElementKind::Quad9,
                    nodes: vec![
                        g(0, 0),
                        g(2, 0),
                        g(2, 2),
                        g(0, 2),
                        g(1, 0),
                        g(2, 1),
                        g(1, 2),
                        g(0, 1),
                        g(1, 1),
                    ],
                    region: ri,
                });
            }
        }
        // boundary tags: cells along the tagged side, matching local edge
        for tag in geometry.boundaries.iter().filter(|b| b.region == ri) {
            let cells: Vec<(usize, usize)> = match tag.side {
                0 => (0..nx).map(|i| (i, 0)).collect(),
                1 => (0..ny).map(|j| (j * nx + (nx - 1), 1)).collect(),
                2 => (0..nx).map(|i| ((ny - 1) * nx + (nx - 1 - i), 2)).collect(),
                _ => (0..ny).map(|j| ((ny - 1 - j) * nx, 3)).collect(),
            };
            for (cell, local_edge) in cells {
                boundary_edges.push(BoundaryEdge {
                    element: elem_base + cell,
                    local_edge,
                    condition: tag.condition.clone(),
                });
            }
        }
    }

    let mesh = Mesh { nodes: pool.nodes, elements, boundary_edges };
    mesh.validate(geometry)?;
    Ok(mesh)
}

// ---------------------------------------------------------------------------
// import
// ---------------------------------------------------------------------------

/// Reads a line-oriented mesh file:
/// `node <id> <x> <y>`, `elem <id> <quad9|tri6> <region> <node ids...>`,
/// `bedge <elem> <local_edge> <bc_name>`. Blank lines and `#` comments are
/// skipped. Radiation-match parameters are taken from the geometry's tag.
pub fn import_mesh(text: &str, geometry: &ResonatorGeometry) -> Result<Mesh> {
    let mut nodes: Vec<Node> = Vec::new();
    let mut elements = Vec::new();
    let mut boundary_edges = Vec::new();
    let radiation_tag = geometry.boundaries.iter().find_map(|b| match &b.condition {
        c @ BoundaryCondition::RadiationMatch { .. } => Some(c.clone()),
        _ => None,
    });
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        let kind = tok.next().unwrap();
        let bad = |what: &str| Error::Mesh(format!("line {}: {what}", ln + 1));
        match kind {
            "node" => {
                let id: usize =
                    tok.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad node id"))?;
                let x: f64 =
                    tok.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad node x"))?;
                let y: f64 =
                    tok.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad node y"))?;
                if id != nodes.len() {
                    return Err(bad("node ids must be dense and in order"));
                }
                nodes.push(Node { id, x, y });
            }
            "elem" => {
                let id: usize =
                    tok.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad elem id"))?;
                if id != elements.len() {
                    return Err(bad("element ids must be dense and in order"));
                }
                let ekind = match tok.next() {
                    Some("quad9") => ElementKind::Quad9,
                    Some("tri6") => ElementKind::Tri6,
                    _ => return Err(bad("element kind must be quad9 or tri6")),
                };
                let region: usize =
                    tok.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad region id"))?;
                let ids: Vec<usize> = tok
                    .map(|t| t.parse().map_err(|_| bad("bad node reference")))
                    .collect::<Result<_>>()?;
                if ids.len() != ekind.n_nodes() {
                    return Err(bad("wrong number of element nodes"));
                }
                elements.push(Element { kind: ekind, nodes: ids, region });
            }
            "bedge" => {
                let element: usize =
                    tok.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad elem ref"))?;
                let local_edge: usize =
                    tok.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad local edge"))?;
                let condition = match tok.next() {
                    Some("electric_wall") => BoundaryCondition::ElectricWall,
                    Some("magnetic_wall") => BoundaryCondition::MagneticWall,
                    Some("radiation_match") => radiation_tag
                        .clone()
                        .ok_or_else(|| bad("radiation_match tag needs geometry parameters"))?,
                    _ => return Err(bad("unknown boundary condition")),
                };
                boundary_edges.push(BoundaryEdge { element, local_edge, condition });
            }
            other => return Err(bad(&format!("unknown record {other:?}"))),
        }
    }
    let mesh = Mesh { nodes, elements, boundary_edges };
    mesh.validate(geometry)?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_cylindrical_cavity, parse_geometry};
    use approx::assert_relative_eq;

    #[test]
    fn quad9_nodal_property() {
        for (i, &rp) in QUAD9_REF.iter().enumerate() {
            let (vals, _) = shape_eval(ElementKind::Quad9, rp);
            for (k, v) in vals.iter().enumerate() {
                let expect = if k == i { 1.0 } else { 0.0 };
                assert_relative_eq!(*v, expect, epsilon = 1e-14);
            }
        }
        let (vals, _) = shape_eval(ElementKind::Quad9, (0.0, 0.0));
        assert_relative_eq!(vals[8], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn tri6_nodal_property() {
        for (i, &rp) in TRI6_REF.iter().enumerate() {
            let (vals, _) = shape_eval(ElementKind::Tri6, rp);
            for (k, v) in vals.iter().enumerate() {
                let expect = if k == i { 1.0 } else { 0.0 };
                assert_relative_eq!(*v, expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        for kind in [ElementKind::Quad9, ElementKind::Tri6] {
            for (rp, _) in quadrature(kind) {
                let (vals, grads) = shape_eval(kind, rp);
                let s: f64 = vals.iter().sum();
                let gx: f64 = grads.iter().map(|g| g.0).sum();
                let gy: f64 = grads.iter().map(|g| g.1).sum();
                assert_relative_eq!(s, 1.0, epsilon = 1e-14);
                assert!(gx.abs() < 1e-14 && gy.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn quad9_reproduces_biquadratics() {
        // interpolating r^2 s^2 at the nodes must reproduce it exactly
        for (rp, _) in quadrature(ElementKind::Quad9) {
            let (vals, _) = shape_eval(ElementKind::Quad9, rp);
            let interp: f64 = QUAD9_REF
                .iter()
                .zip(&vals)
                .map(|(&(r, s), v)| v * r * r * s * s)
                .sum();
            assert_relative_eq!(interp, rp.0 * rp.0 * rp.1 * rp.1, epsilon = 1e-13);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-6;
        for kind in [ElementKind::Quad9, ElementKind::Tri6] {
            let probe = match kind {
                ElementKind::Quad9 => (0.3, -0.4),
                ElementKind::Tri6 => (0.25, 0.3),
            };
            let (_, grads) = shape_eval(kind, probe);
            let (vxp, _) = shape_eval(kind, (probe.0 + h, probe.1));
            let (vxm, _) = shape_eval(kind, (probe.0 - h, probe.1));
            let (vyp, _) = shape_eval(kind, (probe.0, probe.1 + h));
            let (vym, _) = shape_eval(kind, (probe.0, probe.1 - h));
            for i in 0..kind.n_nodes() {
                assert_relative_eq!(grads[i].0, (vxp[i] - vxm[i]) / (2.0 * h), epsilon = 1e-8);
                assert_relative_eq!(grads[i].1, (vyp[i] - vym[i]) / (2.0 * h), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn gauss_exactness() {
        // 3x3 Gauss integrates x^4 y^4 over [-1,1]^2 to 4/25
        let mut s = 0.0;
        for ((r, t), w) in quadrature(ElementKind::Quad9) {
            s += w * r.powi(4) * t.powi(4);
        }
        assert_relative_eq!(s, 4.0 / 25.0, epsilon = 1e-14);
        // triangle rule integrates degree-5 monomials exactly:
        // int r^3 s^2 over the unit triangle = 3!2!/(3+2+2)! = 1/420
        let mut s = 0.0;
        for ((r, t), w) in quadrature(ElementKind::Tri6) {
            s += w * r.powi(3) * t.powi(2);
        }
        assert_relative_eq!(s, 1.0 / 420.0, epsilon = 1e-14);
    }

    #[test]
    fn single_patch_counts() {
        let mut geo = make_cylindrical_cavity(2.0, 1.0, 1.0).unwrap();
        geo.regions[0].edge_counts = [3, 2, 3, 2];
        let mesh = map_mesh(&geo).unwrap();
        assert_eq!(mesh.elements.len(), 6);
        assert_eq!(mesh.nodes.len(), 35);
        assert_eq!(mesh.boundary_edges.len(), 3 + 2 + 3);
    }

    #[test]
    fn two_patches_merge_shared_nodes() {
        let text = r#"
length_unit = 1.0

[materials.vacuum]
eps_perp = 1.0
eps_para = 1.0

[[regions]]
material = "vacuum"
vertices = [[1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0]]
edge_counts = [1, 1]

[[regions]]
material = "vacuum"
vertices = [[2.0, 0.0], [3.0, 0.0], [3.0, 1.0], [2.0, 1.0]]
edge_counts = [1, 1]

[[boundaries]]
region = 0
side = 0
condition = "electric_wall"
[[boundaries]]
region = 0
side = 2
condition = "electric_wall"
[[boundaries]]
region = 0
side = 3
condition = "electric_wall"
[[boundaries]]
region = 1
side = 0
condition = "electric_wall"
[[boundaries]]
region = 1
side = 1
condition = "electric_wall"
[[boundaries]]
region = 1
side = 2
condition = "electric_wall"
"#;
        let (geo, _) = parse_geometry(text).unwrap();
        let mesh = map_mesh(&geo).unwrap();
        assert_eq!(mesh.elements.len(), 2);
        assert_eq!(mesh.nodes.len(), 15);
    }

    #[test]
    fn mismatched_shared_counts_rejected() {
        let text = r#"
length_unit = 1.0

[materials.vacuum]
eps_perp = 1.0
eps_para = 1.0

[[regions]]
material = "vacuum"
vertices = [[1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0]]
edge_counts = [1, 1]

[[regions]]
material = "vacuum"
vertices = [[2.0, 0.0], [3.0, 0.0], [3.0, 1.0], [2.0, 1.0]]
edge_counts = [1, 2]

[[boundaries]]
region = 0
side = 0
condition = "electric_wall"
[[boundaries]]
region = 0
side = 2
condition = "electric_wall"
[[boundaries]]
region = 0
side = 3
condition = "electric_wall"
[[boundaries]]
region = 1
side = 0
condition = "electric_wall"
[[boundaries]]
region = 1
side = 1
condition = "electric_wall"
[[boundaries]]
region = 1
side = 2
condition = "electric_wall"
"#;
        let (geo, _) = parse_geometry(text).unwrap();
        assert!(map_mesh(&geo).is_err());
    }

    #[test]
    fn refinement_preserves_area() {
        let mut geo = make_cylindrical_cavity(1.0, 1.0, 1.0).unwrap();
        geo.regions[0].edge_counts = [4, 4, 4, 4];
        let area = |mesh: &Mesh| -> f64 {
            let mut a = 0.0;
            for e in &mesh.elements {
                for (rp, w) in quadrature(e.kind) {
                    a += w * mesh.map_point(e, rp).det_j;
                }
            }
            a
        };
        let coarse = map_mesh(&geo).unwrap();
        geo.regions[0].edge_counts = [8, 8, 8, 8];
        let fine = map_mesh(&geo).unwrap();
        assert_eq!(fine.elements.len(), 4 * coarse.elements.len());
        assert_relative_eq!(area(&coarse), 1.0, epsilon = 1e-12);
        assert_relative_eq!(area(&fine), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn import_single_quad9() {
        let geo = make_cylindrical_cavity(1.0, 1.0, 1.0).unwrap();
        // unit square shifted off-axis so all four edges need tags
        let text = r#"
node 0 0.0 0.0
node 1 1.0 0.0
node 2 1.0 1.0
node 3 0.0 1.0
node 4 0.5 0.0
node 5 1.0 0.5
node 6 0.5 1.0
node 7 0.0 0.5
node 8 0.5 0.5
elem 0 quad9 0 0 1 2 3 4 5 6 7 8
bedge 0 0 electric_wall
bedge 0 1 electric_wall
bedge 0 2 electric_wall
"#;
        let mesh = import_mesh(text, &geo).unwrap();
        assert_eq!(mesh.nodes.len(), 9);
        assert_eq!(mesh.elements.len(), 1);
    }

    #[test]
    fn import_rejects_undefined_node() {
        let geo = make_cylindrical_cavity(1.0, 1.0, 1.0).unwrap();
        let text = "node 0 0.0 0.0\nelem 0 quad9 0 0 1 2 3 4 5 6 7 99\n";
        assert!(import_mesh(text, &geo).is_err());
    }

    #[test]
    fn boundary_normals_point_outward() {
        let geo = make_cylindrical_cavity(1.0, 2.0, 1.0).unwrap();
        let mesh = map_mesh(&geo).unwrap();
        for be in &mesh.boundary_edges {
            let (nx, ny) = mesh.boundary_normal(be, 0.0);
            let elem = &mesh.elements[be.element];
            let (rp, _) = edge_point(elem.kind, be.local_edge, 0.0);
            let mp = mesh.map_point(elem, rp);
            // walking inward from the edge midpoint against the normal must
            // stay inside the rectangle
            let inner = (mp.x - 0.05 * nx, mp.y - 0.05 * ny);
            assert!(inner.0 > 0.0 && inner.0 < 1.0 && inner.1 > 0.0 && inner.1 < 2.0);
            assert_relative_eq!(nx.hypot(ny), 1.0, epsilon = 1e-12);
        }
    }
}
