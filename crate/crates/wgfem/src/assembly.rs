//! Assembly of the sparse generalized eigenproblem `K h = lambda Mm h`
//! (with boundary-constraint rows `C h = 0`) for one azimuthal order M.
//!
//! The three field components per node are, in order: Hrad (radial), Hazi
//! (azimuthal, with the factor i absorbed so coefficients stay real), Haxi
//! (axial). The stiffness integrand is the curl-curl (Laplacian) energy
//! divided by the permittivities plus `alpha` times the divergence penalty;
//! the mass integrand is `x * Ni * Nj` per component, so the eigenvalue is
//! `lambda = (2 pi f / c)^2`.

use std::collections::BTreeMap;

use num_complex::Complex;

use crate::geometry::{BoundaryCondition, ResonatorGeometry, TangentToggle};
use crate::mesh::{edge_nodes, edge_point, quadrature, BoundaryEdge, Mesh};
use crate::{Error, Result, CBAR};

pub type C64 = Complex<f64>;

/// Field component, also the within-node dof offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Rad = 0,
    Azi = 1,
    Axi = 2,
}

pub const COMPONENTS: [Component; 3] = [Component::Rad, Component::Azi, Component::Axi];

/// Node/component to global dof numbering: dof = 3*node + component.
#[derive(Debug, Clone, Copy)]
pub struct DofMap {
    pub n_nodes: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> Self {
        DofMap { n_nodes: mesh.nodes.len() }
    }

    pub fn index(&self, node: usize, comp: Component) -> usize {
        3 * node + comp as usize
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.n_nodes
    }
}

/// (row, col, value) matrix entry; duplicates are summed.
pub type Triplet = (usize, usize, f64);

/// One sparse constraint row: sorted (dof, coefficient) pairs.
pub type SparseRow = Vec<(usize, C64)>;

/// Everything the eigensolver needs for one azimuthal order.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub n_dofs: usize,
    pub m: u32,
    pub alpha: f64,
    pub k: Vec<Triplet>,
    pub mm: Vec<Triplet>,
    /// Reduced constraint rows: mutually orthonormal, full rank.
    pub constraints: Vec<SparseRow>,
    /// True when any boundary carries a radiation match (complex rows).
    pub complex_constraints: bool,
}

const RAD: usize = 0;
const AZI: usize = 1;
const AXI: usize = 2;

/// Galerkin stiffness matrix: curl-curl energy scaled by the inverse
/// permittivities plus `alpha` times the divergence penalty, both with the
/// axisymmetric volume weight x.
pub fn assemble_stiffness(
    mesh: &Mesh,
    geometry: &ResonatorGeometry,
    m: u32,
    alpha: f64,
) -> Result<Vec<Triplet>> {
    let dofs = DofMap::new(mesh);
    let mf = m as f64;
    let mut triplets = Vec::new();
    for elem in &mesh.elements {
        let mat = &geometry.materials[geometry.regions[elem.region].material];
        if !(mat.eps_perp > 0.0) || !(mat.eps_para > 0.0) {
            return Err(Error::Assembly(format!(
                "material {:?} has nonpositive permittivity",
                mat.name
            )));
        }
        // weights on the perpendicular- and parallel-permittivity terms of
        // the curl energy; for isotropic media both collapse to 1/eps
        let wp = 1.0 / mat.eps_para;
        let wl = 1.0 / mat.eps_perp;
        let nn = elem.kind.n_nodes();
        let mut local = vec![0.0_f64; (3 * nn) * (3 * nn)];
        for (rp, w) in quadrature(elem.kind) {
            let mp = mesh.map_point(elem, rp);
            if mp.det_j <= 0.0 {
                return Err(Error::Assembly("element with nonpositive Jacobian".into()));
            }
            let x = mp.x;
            if !(x > 0.0) {
                return Err(Error::Assembly("quadrature point on or left of the axis".into()));
            }
            let scale = w * mp.det_j;
            for a in 0..nn {
                let na = mp.values[a];
                let (dxa, dya) = mp.grads_xy[a];
                for b in 0..nn {
                    let nb = mp.values[b];
                    let (dxb, dyb) = mp.grads_xy[b];
                    // each product is grouped so the (a <-> b)-swapped entry
                    // evaluates to the bitwise-identical value, making the
                    // assembled matrix exactly symmetric
                    let nanb = na * nb;
                    let mut l = [[0.0_f64; 3]; 3];
                    // curl-curl ("Laplacian") terms
                    l[AZI][AZI] = wp * (nanb / x + (dxa * nb + na * dxb) + x * (dxa * dxb))
                        + wl * (x * (dya * dyb));
                    l[AZI][RAD] = wp * (-mf * nanb / x - mf * (dxa * nb));
                    l[RAD][AZI] = wp * (-mf * nanb / x - mf * (na * dxb));
                    l[RAD][RAD] = wp * (mf * mf * nanb / x) + wl * (x * (dya * dyb));
                    l[AXI][AXI] = wl * (mf * mf * nanb / x + x * (dxa * dxb));
                    l[AXI][AZI] = wl * (-mf * (na * dyb));
                    l[AZI][AXI] = wl * (-mf * (dya * nb));
                    l[AXI][RAD] = wl * (-x * (dxa * dyb));
                    l[RAD][AXI] = wl * (-x * (dya * dxb));
                    if alpha != 0.0 {
                        // divergence penalty: x * div(H~) * div(H) with
                        // div = (Hrad - M*Hazi)/x + dHrad/dx + dHaxi/dy
                        let mut p = [[0.0_f64; 3]; 3];
                        p[RAD][RAD] = nanb / x + (dxa * nb + na * dxb) + x * (dxa * dxb);
                        p[AZI][RAD] = -mf * nanb / x - mf * (na * dxb);
                        p[RAD][AZI] = -mf * nanb / x - mf * (dxa * nb);
                        p[AZI][AZI] = mf * mf * nanb / x;
                        p[AXI][RAD] = dya * nb + x * (dya * dxb);
                        p[RAD][AXI] = na * dyb + x * (dxa * dyb);
                        p[AXI][AZI] = -mf * (dya * nb);
                        p[AZI][AXI] = -mf * (na * dyb);
                        p[AXI][AXI] = x * (dya * dyb);
                        for ca in 0..3 {
                            for cb in 0..3 {
                                l[ca][cb] += alpha * p[ca][cb];
                            }
                        }
                    }
                    for ca in 0..3 {
                        for cb in 0..3 {
                            local[(3 * a + ca) * 3 * nn + 3 * b + cb] += scale * l[ca][cb];
                        }
                    }
                }
            }
        }
        for a in 0..3 * nn {
            for b in 0..3 * nn {
                let v = local[a * 3 * nn + b];
                if v != 0.0 {
                    let ga = dofs.index(elem.nodes[a / 3], COMPONENTS[a % 3]);
                    let gb = dofs.index(elem.nodes[b / 3], COMPONENTS[b % 3]);
                    triplets.push((ga, gb, v));
                }
            }
        }
    }
    Ok(triplets)
}

/// Mass matrix: block-diagonal over components, `x Ni Nj` per block.
pub fn assemble_mass(mesh: &Mesh) -> Vec<Triplet> {
    let dofs = DofMap::new(mesh);
    let mut triplets = Vec::new();
    for elem in &mesh.elements {
        let nn = elem.kind.n_nodes();
        let mut local = vec![0.0_f64; nn * nn];
        for (rp, w) in quadrature(elem.kind) {
            let mp = mesh.map_point(elem, rp);
            let scale = w * mp.det_j * mp.x;
            for a in 0..nn {
                for b in 0..nn {
                    local[a * nn + b] += scale * (mp.values[a] * mp.values[b]);
                }
            }
        }
        for a in 0..nn {
            for b in 0..nn {
                let v = local[a * nn + b];
                if v != 0.0 {
                    for comp in COMPONENTS {
                        triplets.push((
                            dofs.index(elem.nodes[a], comp),
                            dofs.index(elem.nodes[b], comp),
                            v,
                        ));
                    }
                }
            }
        }
    }
    triplets
}

// ---------------------------------------------------------------------------
// boundary-constraint rows
// ---------------------------------------------------------------------------

/// Context for building the constraint rows at one boundary collocation
/// node: position, outward normal, inverse permittivities, and the sparse
/// building blocks (nodal value and the two gradient rows per component).
struct RowCtx {
    x: f64,
    nx: f64,
    ny: f64,
    mf: f64,
    /// 1/eps_perp of the adjacent element's material.
    wper: f64,
    /// 1/eps_para.
    wpar: f64,
    /// Dof of the collocation node per component.
    val_dof: [usize; 3],
    /// (dof, d/dx of shape) over the adjacent element, per component.
    dx: [Vec<(usize, f64)>; 3],
    /// (dof, d/dy of shape).
    dy: [Vec<(usize, f64)>; 3],
}

type RowAcc = BTreeMap<usize, C64>;

fn add(row: &mut RowAcc, dof: usize, c: C64) {
    if c != C64::ZERO {
        *row.entry(dof).or_insert(C64::ZERO) += c;
    }
}

fn add_scaled(row: &mut RowAcc, entries: &[(usize, f64)], c: C64) {
    for &(dof, v) in entries {
        add(row, dof, c * v);
    }
}

impl RowCtx {
    /// Normal in-plane component vanishes: Hrad*nx + Haxi*ny = 0.
    fn row_normal_h(&self) -> RowAcc {
        let mut r = RowAcc::new();
        add(&mut r, self.val_dof[RAD], C64::from(self.nx));
        add(&mut r, self.val_dof[AXI], C64::from(self.ny));
        r
    }

    /// In-plane curl component vanishes: dHrad/dy - dHaxi/dx = 0.
    fn row_plane_curl(&self) -> RowAcc {
        let mut r = RowAcc::new();
        add_scaled(&mut r, &self.dy[RAD], C64::ONE);
        add_scaled(&mut r, &self.dx[AXI], -C64::ONE);
        r
    }

    /// x * Daxi as a row: Hazi - M*Hrad + x * dHazi/dx.
    fn x_daxi(&self) -> RowAcc {
        let mut r = RowAcc::new();
        add(&mut r, self.val_dof[AZI], C64::ONE);
        add(&mut r, self.val_dof[RAD], C64::from(-self.mf));
        add_scaled(&mut r, &self.dx[AZI], C64::from(self.x));
        r
    }

    /// x * Drad as a row: M*Haxi - x * dHazi/dy.
    fn x_drad(&self) -> RowAcc {
        let mut r = RowAcc::new();
        add(&mut r, self.val_dof[AXI], C64::from(self.mf));
        add_scaled(&mut r, &self.dy[AZI], C64::from(-self.x));
        r
    }

    fn merge(into: &mut RowAcc, from: RowAcc, c: C64) {
        for (dof, v) in from {
            add(into, dof, c * v);
        }
    }

    /// Tangential E vanishes (times x): wpar*(x Daxi)*nx - wper*(x Drad)*ny.
    fn row_tangential_e(&self) -> RowAcc {
        let mut r = RowAcc::new();
        Self::merge(&mut r, self.x_daxi(), C64::from(self.wpar * self.nx));
        Self::merge(&mut r, self.x_drad(), C64::from(-self.wper * self.ny));
        r
    }

    /// Tangential in-plane H vanishes: Haxi*nx - Hrad*ny = 0.
    fn row_tangential_h(&self) -> RowAcc {
        let mut r = RowAcc::new();
        add(&mut r, self.val_dof[AXI], C64::from(self.nx));
        add(&mut r, self.val_dof[RAD], C64::from(-self.ny));
        r
    }

    /// Azimuthal component vanishes: Hazi = 0.
    fn row_azi(&self) -> RowAcc {
        let mut r = RowAcc::new();
        add(&mut r, self.val_dof[AZI], C64::ONE);
        r
    }

    /// Normal D vanishes (times x): (x Drad)*nx + (x Daxi)*ny.
    fn row_normal_d(&self) -> RowAcc {
        let mut r = RowAcc::new();
        Self::merge(&mut r, self.x_drad(), C64::from(self.nx));
        Self::merge(&mut r, self.x_daxi(), C64::from(self.ny));
        r
    }

    fn electric_wall(&self) -> [RowAcc; 3] {
        [self.row_normal_h(), self.row_plane_curl(), self.row_tangential_e()]
    }

    fn magnetic_wall(&self) -> [RowAcc; 3] {
        [self.row_tangential_h(), self.row_azi(), self.row_normal_d()]
    }

    /// Traveling-wave match mixing electric- and magnetic-wall content with
    /// weights cEW = cos(mix), cMW = sin(mix) at match frequency mf_hz.
    fn radiation_match(&self, mix: f64, toggle: TangentToggle, mf_hz: f64) -> [RowAcc; 3] {
        let cew = C64::from(mix.cos());
        let cmw = C64::from(mix.sin());
        let kbar = CBAR * mf_hz; // free-space wavenumber at the match frequency
        let i = C64::new(0.0, 1.0);
        // row 1: -i*cMW*(x*Hazi)*kbar + cEW*(x * tangential-D content)
        let mut r1 = RowAcc::new();
        add(&mut r1, self.val_dof[AZI], -i * cmw * C64::from(kbar * self.x));
        let mut tang_d = RowAcc::new();
        Self::merge(&mut tang_d, self.x_daxi(), C64::from(self.nx));
        Self::merge(&mut tang_d, self.x_drad(), C64::from(-self.ny));
        Self::merge(&mut r1, tang_d, cew);
        // row 2: -i*cEW*(in-plane curl) + cMW*kbar*(tangential H)
        let mut r2 = RowAcc::new();
        Self::merge(&mut r2, self.row_plane_curl(), -i * cew);
        Self::merge(&mut r2, self.row_tangential_h(), cmw * C64::from(kbar));
        // row 3: which tangential field stays pinned
        let r3 = match toggle {
            TangentToggle::Magnetic => {
                let mut r = RowAcc::new();
                Self::merge(&mut r, self.row_normal_h(), C64::from(kbar));
                r
            }
            TangentToggle::Electric => self.row_normal_d(),
        };
        [r1, r2, r3]
    }
}

fn row_to_sparse(row: RowAcc) -> SparseRow {
    row.into_iter().filter(|(_, v)| v.norm_sqr() > 0.0).collect()
}

/// Collocated constraint rows at every boundary-edge node. Returns the raw
/// (unreduced) rows in deterministic order and whether any are complex.
pub fn assemble_constraints(
    mesh: &Mesh,
    geometry: &ResonatorGeometry,
    m: u32,
) -> Result<(Vec<(usize, SparseRow)>, bool)> {
    let dofs = DofMap::new(mesh);
    let mut rows = Vec::new();
    let mut complex = false;
    // Each boundary node is collocated once per distinct (condition, outward
    // normal). Collinear neighbouring edges would otherwise both emit
    // derivative rows at their shared node, and the two one-sided rows differ
    // exactly by a tangential derivative of already-pinned values — an exact
    // linear dependency distributed over several nodes, which no local
    // elimination can remove reliably.
    let mut seen: std::collections::HashSet<(usize, u64, i64, i64)> = Default::default();
    for be in &mesh.boundary_edges {
        let elem = &mesh.elements[be.element];
        for (slot, t) in [(-1.0_f64, 0), (0.0, 1), (1.0, 2)].map(|(t, s)| (s, t)) {
            let node = elem.nodes[edge_nodes(elem.kind, be.local_edge)[slot]];
            let (nx, ny) = mesh.boundary_normal(be, t);
            let cond_hash = {
                use std::hash::{Hash, Hasher};
                let mut h = std::collections::hash_map::DefaultHasher::new();
                match &be.condition {
                    BoundaryCondition::ElectricWall => 0u8.hash(&mut h),
                    BoundaryCondition::MagneticWall => 1u8.hash(&mut h),
                    BoundaryCondition::RadiationMatch {
                        mix_angle,
                        tangent_toggle,
                        match_frequency,
                    } => {
                        2u8.hash(&mut h);
                        mix_angle.to_bits().hash(&mut h);
                        (*tangent_toggle == TangentToggle::Magnetic).hash(&mut h);
                        match_frequency.to_bits().hash(&mut h);
                    }
                }
                h.finish()
            };
            let quant = |v: f64| (v / 1e-6).round() as i64;
            if !seen.insert((node, cond_hash, quant(nx), quant(ny))) {
                continue;
            }
            let ctx = row_ctx(mesh, geometry, &dofs, be, slot, t, m)?;
            let built = match &be.condition {
                BoundaryCondition::ElectricWall => ctx.electric_wall(),
                BoundaryCondition::MagneticWall => ctx.magnetic_wall(),
                BoundaryCondition::RadiationMatch { mix_angle, tangent_toggle, match_frequency } => {
                    complex = true;
                    ctx.radiation_match(*mix_angle, *tangent_toggle, *match_frequency)
                }
            };
            for r in built {
                let r = row_to_sparse(r);
                if !r.is_empty() {
                    rows.push((node, r));
                }
            }
        }
    }
    rows.extend(axis_regularity_rows(mesh, &dofs, m));
    Ok((rows, complex))
}

/// Essential regularity conditions on nodes lying exactly on the axis.
/// They follow from finiteness of the 1/x energy terms: for M = 0,
/// Hrad = Hazi = 0; for M = 1, Haxi = 0 and Hrad = Hazi; for M >= 2 all
/// three components vanish.
fn axis_regularity_rows(mesh: &Mesh, dofs: &DofMap, m: u32) -> Vec<(usize, SparseRow)> {
    let xmax = mesh.nodes.iter().fold(0.0_f64, |a, n| a.max(n.x.abs()));
    let tol = 1e-12 * xmax.max(1e-300);
    let mut rows = Vec::new();
    for n in &mesh.nodes {
        if n.x.abs() > tol {
            continue;
        }
        let rad = dofs.index(n.id, Component::Rad);
        let azi = dofs.index(n.id, Component::Azi);
        let axi = dofs.index(n.id, Component::Axi);
        let one = C64::from(1.0);
        match m {
            0 => {
                rows.push((n.id, vec![(rad, one)]));
                rows.push((n.id, vec![(azi, one)]));
            }
            1 => {
                rows.push((n.id, vec![(axi, one)]));
                rows.push((n.id, vec![(rad, one), (azi, -one)]));
            }
            _ => {
                rows.push((n.id, vec![(rad, one)]));
                rows.push((n.id, vec![(azi, one)]));
                rows.push((n.id, vec![(axi, one)]));
            }
        }
    }
    rows
}

fn row_ctx(
    mesh: &Mesh,
    geometry: &ResonatorGeometry,
    dofs: &DofMap,
    be: &BoundaryEdge,
    slot: usize,
    t: f64,
    m: u32,
) -> Result<RowCtx> {
    let elem = &mesh.elements[be.element];
    let (rp, _) = edge_point(elem.kind, be.local_edge, t);
    let mp = mesh.map_point(elem, rp);
    let (nx, ny) = mesh.boundary_normal(be, t);
    let node = elem.nodes[edge_nodes(elem.kind, be.local_edge)[slot]];
    let mat = &geometry.materials[geometry.regions[elem.region].material];
    let mut dx: [Vec<(usize, f64)>; 3] = Default::default();
    let mut dy: [Vec<(usize, f64)>; 3] = Default::default();
    for comp in COMPONENTS {
        for (i, &nid) in elem.nodes.iter().enumerate() {
            let g = mp.grads_xy[i];
            if g.0 != 0.0 {
                dx[comp as usize].push((dofs.index(nid, comp), g.0));
            }
            if g.1 != 0.0 {
                dy[comp as usize].push((dofs.index(nid, comp), g.1));
            }
        }
    }
    Ok(RowCtx {
        x: mp.x,
        nx,
        ny,
        mf: m as f64,
        wper: 1.0 / mat.eps_perp,
        wpar: 1.0 / mat.eps_para,
        val_dof: [
            dofs.index(node, Component::Rad),
            dofs.index(node, Component::Azi),
            dofs.index(node, Component::Axi),
        ],
        dx,
        dy,
    })
}

// ---------------------------------------------------------------------------
// rank reduction
// ---------------------------------------------------------------------------

fn inner(a: &SparseRow, b: &SparseRow) -> C64 {
    // both sorted by dof
    let mut s = C64::ZERO;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1.conj() * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

fn axpy(y: &mut SparseRow, c: C64, x: &SparseRow) {
    // y += c*x, keeping sortedness
    let mut out = Vec::with_capacity(y.len() + x.len());
    let (mut i, mut j) = (0, 0);
    while i < y.len() || j < x.len() {
        if j >= x.len() || (i < y.len() && y[i].0 < x[j].0) {
            out.push(y[i]);
            i += 1;
        } else if i >= y.len() || x[j].0 < y[i].0 {
            out.push((x[j].0, c * x[j].1));
            j += 1;
        } else {
            out.push((y[i].0, y[i].1 + c * x[j].1));
            i += 1;
            j += 1;
        }
    }
    *y = out;
}

fn norm(a: &SparseRow) -> f64 {
    a.iter().map(|(_, v)| v.norm_sqr()).sum::<f64>().sqrt()
}

fn scale_row(a: &mut SparseRow, s: f64) {
    for (_, v) in a.iter_mut() {
        *v *= s;
    }
}

/// Removes redundant constraint rows in two stages.
///
/// Rows collocated at the same boundary node (edges meeting at that node each
/// contribute a full set) are frequently identical or exact linear
/// combinations. Stage one therefore reduces each node group by a small dense
/// SVD, keeping right-singular directions above a 1e-10 relative tolerance —
/// this is exact rank-revealing elimination and cannot manufacture content
/// outside the original row space. Stage two orthonormalizes the surviving
/// rows globally by modified Gram-Schmidt with re-orthogonalization; after
/// stage one the cross-node rows are far from parallel, so remainders below
/// the 1e-3 cutoff are amplified roundoff and are dropped. (A plain global
/// Gram-Schmidt over the raw rows is numerically unsafe here: normalizing the
/// roundoff remainder of a nearly dependent row seeds a component outside the
/// row space that later normalizations amplify into spurious constraints
/// which lock the physical modes.)
pub fn reduce_constraints(raw: &[(usize, SparseRow)]) -> Vec<SparseRow> {
    // stage 1: exact per-node SVD reduction
    let mut groups: std::collections::BTreeMap<usize, Vec<&SparseRow>> = Default::default();
    for (node, row) in raw {
        if !row.is_empty() {
            groups.entry(*node).or_default().push(row);
        }
    }
    let mut stage1: Vec<SparseRow> = Vec::new();
    for rows in groups.values() {
        let support: std::collections::BTreeSet<usize> =
            rows.iter().flat_map(|r| r.iter().map(|&(d, _)| d)).collect();
        let support: Vec<usize> = support.into_iter().collect();
        let col_of: std::collections::HashMap<usize, usize> =
            support.iter().enumerate().map(|(c, &d)| (d, c)).collect();
        let mut a = faer::Mat::<C64>::zeros(rows.len(), support.len());
        for (k, r) in rows.iter().enumerate() {
            let nn = norm(r);
            for &(d, v) in r.iter() {
                a[(k, col_of[&d])] = v / nn;
            }
        }
        let svd = a.svd().expect("constraint group SVD failed");
        let s = svd.S().column_vector();
        let v = svd.V();
        let smax = (0..s.nrows()).map(|k| s[k].re).fold(0.0_f64, f64::max);
        for k in 0..rows.len().min(support.len()) {
            if s[k].re > 1e-10 * smax {
                let row: SparseRow = support
                    .iter()
                    .enumerate()
                    .map(|(c, &d)| (d, v[(c, k)].conj()))
                    .filter(|(_, x)| x.norm_sqr() > 1e-28)
                    .collect();
                stage1.push(row);
            }
        }
    }
    // stage 2: global modified Gram-Schmidt
    let mut basis: Vec<SparseRow> = Vec::new();
    for row in &stage1 {
        let n0 = norm(row);
        if n0 == 0.0 {
            continue;
        }
        let mut r = row.clone();
        scale_row(&mut r, 1.0 / n0);
        for _ in 0..2 {
            for q in &basis {
                let c = inner(q, &r);
                if c != C64::ZERO {
                    axpy(&mut r, -c, q);
                }
            }
        }
        let n = norm(&r);
        if n > 1e-3 {
            scale_row(&mut r, 1.0 / n);
            r.retain(|(_, v)| v.norm_sqr() > 0.0);
            basis.push(r);
        }
    }
    basis
}

/// Full assembly: stiffness, mass, and reduced constraints.
pub fn assemble_system(
    mesh: &Mesh,
    geometry: &ResonatorGeometry,
    m: u32,
    alpha: f64,
) -> Result<AssembledSystem> {
    let dofs = DofMap::new(mesh);
    let k = assemble_stiffness(mesh, geometry, m, alpha)?;
    let mm = assemble_mass(mesh);
    let (raw, complex_constraints) = assemble_constraints(mesh, geometry, m)?;
    let constraints = reduce_constraints(&raw);
    Ok(AssembledSystem {
        n_dofs: dofs.n_dofs(),
        m,
        alpha,
        k,
        mm,
        constraints,
        complex_constraints,
    })
}

/// Writes triplets as `row col value` lines for external diffing.
pub fn dump_coordinate(triplets: &[Triplet], out: &mut impl std::io::Write) -> Result<()> {
    for &(r, c, v) in triplets {
        writeln!(out, "{r} {c} {v:.17e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{parse_geometry, Material, Region};
    use crate::mesh::map_mesh;
    use approx::assert_relative_eq;

    fn unit_square_offset() -> (ResonatorGeometry, Mesh) {
        let geo = ResonatorGeometry {
            materials: vec![Material::vacuum()],
            regions: vec![Region {
                vertices: vec![(1.0, 0.0), (2.0, 0.0), (2.0, 1.0), (1.0, 1.0)],
                material: 0,
                edge_counts: [1, 1, 1, 1],
                corners: [0, 1, 2, 3],
            }],
            boundaries: (0..4)
                .map(|side| crate::geometry::BoundaryTag {
                    region: 0,
                    side,
                    condition: BoundaryCondition::ElectricWall,
                })
                .collect(),
        };
        let mesh = map_mesh(&geo).unwrap();
        (geo, mesh)
    }

    fn quadratic_form(trips: &[Triplet], h: &[f64]) -> f64 {
        trips.iter().map(|&(r, c, v)| h[r] * v * h[c]).sum()
    }

    #[test]
    fn penalty_vanishes_for_constant_axial_field() {
        let (geo, mesh) = unit_square_offset();
        for m in [0u32, 5] {
            let k1 = assemble_stiffness(&mesh, &geo, m, 1.0).unwrap();
            let k0 = assemble_stiffness(&mesh, &geo, m, 0.0).unwrap();
            // H = (0, 0, 1): divergence-free, so the penalty quadratic form
            // (difference of the two assemblies) must vanish
            let mut h = vec![0.0; 3 * mesh.nodes.len()];
            for n in 0..mesh.nodes.len() {
                h[3 * n + 2] = 1.0;
            }
            let qp = quadratic_form(&k1, &h) - quadratic_form(&k0, &h);
            assert!(qp.abs() < 1e-12, "penalty form = {qp}");
        }
    }

    #[test]
    fn azimuthal_block_decouples_at_m0() {
        let (geo, mesh) = unit_square_offset();
        let k = assemble_stiffness(&mesh, &geo, 0, 0.0).unwrap();
        for &(r, c, v) in &k {
            let (cr, cc) = (r % 3, c % 3);
            if (cr == 1) != (cc == 1) {
                assert!(v.abs() < 1e-14, "m=0 coupling entry ({r},{c}) = {v}");
            }
        }
    }

    #[test]
    fn stiffness_exactly_symmetric() {
        let (mut geo, _) = unit_square_offset();
        geo.regions[0].edge_counts = [3, 3, 3, 3];
        let mesh = map_mesh(&geo).unwrap();
        let k = assemble_stiffness(&mesh, &geo, 7, 1.0).unwrap();
        let n = 3 * mesh.nodes.len();
        let mut dense = vec![0.0_f64; n * n];
        for &(r, c, v) in &k {
            dense[r * n + c] += v;
        }
        let mut max_asym = 0.0_f64;
        for r in 0..n {
            for c in 0..n {
                max_asym = max_asym.max((dense[r * n + c] - dense[c * n + r]).abs());
            }
        }
        assert_eq!(max_asym, 0.0);
    }

    #[test]
    fn anisotropic_matches_isotropic_when_equal() {
        let (mut geo, mesh) = unit_square_offset();
        geo.materials[0].eps_perp = 3.7;
        geo.materials[0].eps_para = 3.7;
        let k_iso = assemble_stiffness(&mesh, &geo, 3, 1.0).unwrap();
        // the same physics expressed with explicitly different-but-equal
        // tensor entries must agree to rounding
        geo.materials[0].eps_perp = 3.7 * (1.0 + 1e-15);
        let k_ani = assemble_stiffness(&mesh, &geo, 3, 1.0).unwrap();
        // compare densely: the sparsity pattern may differ at exact zeros
        let n = 3 * mesh.nodes.len();
        let mut d_iso = vec![0.0_f64; n * n];
        let mut d_ani = vec![0.0_f64; n * n];
        for &(r, c, v) in &k_iso {
            d_iso[r * n + c] += v;
        }
        for &(r, c, v) in &k_ani {
            d_ani[r * n + c] += v;
        }
        let scale = d_iso.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for (a, b) in d_iso.iter().zip(&d_ani) {
            assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn mass_block_sum_is_first_moment() {
        let (_, mesh) = unit_square_offset();
        let mm = assemble_mass(&mesh);
        // sum over one component block = integral of x over [1,2]x[0,1] = 3/2
        let s: f64 = mm.iter().filter(|t| t.0 % 3 == 0 && t.1 % 3 == 0).map(|t| t.2).sum();
        assert_relative_eq!(s, 1.5, epsilon = 1e-12);
        // strictly block-diagonal across components
        assert!(mm.iter().all(|t| t.0 % 3 == t.1 % 3));
    }

    #[test]
    fn mass_positive_semidefinite() {
        let (geo, _) = unit_square_offset();
        let mut geo = geo;
        geo.regions[0].edge_counts = [2, 2, 2, 2];
        let mesh = map_mesh(&geo).unwrap();
        let mm = assemble_mass(&mesh);
        let n = 3 * mesh.nodes.len();
        let mut a = faer::Mat::<C64>::zeros(n, n);
        for &(r, c, v) in &mm {
            a[(r, c)] += C64::from(v);
        }
        let eig = a.eigen().unwrap();
        let s = eig.S();
        let sv = s.column_vector();
        for i in 0..n {
            assert!(sv[i].re > -1e-10, "mass eigenvalue {}", sv[i]);
            assert!(sv[i].im.abs() < 1e-10);
        }
    }

    #[test]
    fn vertical_electric_wall_pins_hrad() {
        // wall with normal (1,0): the normal-component row must reduce to a
        // single Hrad entry
        let (geo, mesh) = unit_square_offset();
        let (rows, complex) = assemble_constraints(&mesh, &geo, 0).unwrap();
        assert!(!complex);
        let wall_rows: Vec<_> =
            rows.iter().map(|(_, r)| r).filter(|r| r.len() == 1 && r[0].0 % 3 == 0).collect();
        assert!(!wall_rows.is_empty());
        // single-entry Hrad rows arise exactly on the two walls with a
        // horizontal normal (x = 1 and x = 2)
        let mut saw_right = false;
        for r in wall_rows {
            let x = mesh.nodes[r[0].0 / 3].x;
            assert!((x - 2.0).abs() < 1e-12 || (x - 1.0).abs() < 1e-12, "x = {x}");
            saw_right |= (x - 2.0).abs() < 1e-12;
        }
        assert!(saw_right);
    }

    #[test]
    fn equatorial_magnetic_wall_pins_hazi_and_hrad() {
        let (mut geo, _) = unit_square_offset();
        geo.boundaries[2].condition = BoundaryCondition::MagneticWall; // top, n = (0,1)
        let mesh = map_mesh(&geo).unwrap();
        let (rows, _) = assemble_constraints(&mesh, &geo, 0).unwrap();
        // single-entry rows on top-edge nodes must pin Hazi (tangential-H row
        // with nx=0 gives Hrad; the azi row gives Hazi)
        let singles: Vec<_> = rows
            .iter()
            .map(|(_, r)| r)
            .filter(|r| r.len() == 1 && mesh.nodes[r[0].0 / 3].y > 1.0 - 1e-9)
            .map(|r| r[0].0 % 3)
            .collect();
        assert!(singles.contains(&0), "Hrad pinned");
        assert!(singles.contains(&1), "Hazi pinned");
    }

    #[test]
    fn duality_maps_electric_rows_to_magnetic_rows() {
        // the normal-rotation {nx -> -ny, ny -> nx} must map the electric
        // rows onto the magnetic rows (up to sign)
        let (geo, mesh) = unit_square_offset();
        let dofs = DofMap::new(&mesh);
        let be = &mesh.boundary_edges[0];
        for m in [0u32, 4] {
            for t in [-0.3_f64, 0.6] {
                // build a context with a fabricated, non-axis-aligned normal
                let mut ctx = row_ctx(&mesh, &geo, &dofs, be, 1, t, m).unwrap();
                let (nx, ny) = (0.6, 0.8);
                ctx.nx = nx;
                ctx.ny = ny;
                let ew = ctx.electric_wall();
                ctx.nx = -ny;
                ctx.ny = nx;
                let mw = ctx.magnetic_wall();
                // normal-H row -> minus the tangential-H row:
                // H.(nx,ny) under (nx,ny)->(-ny,nx) gives
                // Haxi*(-ny) - Hrad*nx = -(Hrad*nx + Haxi*ny)
                let a = row_to_sparse(ew[0].clone());
                let b = row_to_sparse(mw[0].clone());
                assert_eq!(a.len(), b.len());
                for (x, y) in a.iter().zip(&b) {
                    assert_eq!(x.0, y.0);
                    assert_relative_eq!(x.1.re, -y.1.re, epsilon = 1e-13);
                }
                // tangential-E row -> normal-D row (isotropic, unit eps)
                let a = row_to_sparse(ew[2].clone());
                let b = row_to_sparse(mw[2].clone());
                assert_eq!(a.len(), b.len());
                for (x, y) in a.iter().zip(&b) {
                    assert_eq!(x.0, y.0);
                    assert_relative_eq!(x.1.re, y.1.re, epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn radiation_rows_match_independent_transcription() {
        let (mut geo, _) = unit_square_offset();
        let mf_hz = 2.0e14;
        geo.boundaries[1].condition = BoundaryCondition::RadiationMatch {
            mix_angle: std::f64::consts::FRAC_PI_4,
            tangent_toggle: TangentToggle::Magnetic,
            match_frequency: mf_hz,
        };
        let mesh = map_mesh(&geo).unwrap();
        let dofs = DofMap::new(&mesh);
        let be = mesh
            .boundary_edges
            .iter()
            .find(|b| matches!(b.condition, BoundaryCondition::RadiationMatch { .. }))
            .unwrap();
        let m = 11u32;
        let ctx = row_ctx(&mesh, &geo, &dofs, be, 1, 0.0, m).unwrap();
        let rows = ctx.radiation_match(std::f64::consts::FRAC_PI_4, TangentToggle::Magnetic, mf_hz);
        // independent transcription of the first mixed row:
        //   -i*cMW*Hazi*kbar*x
        //   + cEW*( Hazi*nx - Hrad*M*nx - Haxi*M*ny
        //           + dHazi/dx*nx*x + dHazi/dy*ny*x )
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let kbar = CBAR * mf_hz;
        let i = C64::new(0.0, 1.0);
        let mut expect = RowAcc::new();
        add(&mut expect, ctx.val_dof[AZI], -i * s * kbar * ctx.x);
        add(&mut expect, ctx.val_dof[AZI], C64::from(s * ctx.nx));
        add(&mut expect, ctx.val_dof[RAD], C64::from(-s * ctx.nx * m as f64));
        add(&mut expect, ctx.val_dof[AXI], C64::from(-s * ctx.ny * m as f64));
        for &(dof, g) in &ctx.dx[AZI] {
            add(&mut expect, dof, C64::from(s * ctx.nx * ctx.x * g));
        }
        for &(dof, g) in &ctx.dy[AZI] {
            add(&mut expect, dof, C64::from(s * ctx.ny * ctx.x * g));
        }
        let got = row_to_sparse(rows[0].clone());
        let want = row_to_sparse(expect);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.0, w.0);
            assert_relative_eq!(g.1.re, w.1.re, epsilon = 1e-14 * kbar);
            assert_relative_eq!(g.1.im, w.1.im, epsilon = 1e-14 * kbar);
        }
    }

    #[test]
    fn reduced_constraints_are_orthonormal_and_prune_duplicates() {
        let (geo, mesh) = unit_square_offset();
        let (raw, _) = assemble_constraints(&mesh, &geo, 1).unwrap();
        let reduced = reduce_constraints(&raw);
        assert!(reduced.len() < raw.len(), "corner duplicates must be pruned");
        for (i, a) in reduced.iter().enumerate() {
            for (j, b) in reduced.iter().enumerate() {
                let d = inner(a, b);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d.re - expect).abs() < 1e-10 && d.im.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constraints_on_parsed_multi_region_geometry() {
        let text = r#"
length_unit = 1.0

[materials.a]
eps_perp = 2.0
eps_para = 3.0

[[regions]]
material = "a"
vertices = [[0.5, 0.0], [1.5, 0.0], [1.5, 1.0], [0.5, 1.0]]
edge_counts = [2, 2]

[[boundaries]]
region = 0
side = 0
condition = "electric_wall"
[[boundaries]]
region = 0
side = 1
condition = "electric_wall"
[[boundaries]]
region = 0
side = 2
condition = "electric_wall"
[[boundaries]]
region = 0
side = 3
condition = "magnetic_wall"
"#;
        let (geo, _) = parse_geometry(text).unwrap();
        let mesh = map_mesh(&geo).unwrap();
        let sys = assemble_system(&mesh, &geo, 2, 1.0).unwrap();
        assert!(!sys.complex_constraints);
        assert!(!sys.constraints.is_empty());
        assert_eq!(sys.n_dofs, 3 * mesh.nodes.len());
    }
}
