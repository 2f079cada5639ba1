//! Resonator cross-section description: material regions on the medial
//! half-plane, boundary-condition tags, and solver settings, plus the
//! text-file format they are read from.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance used when matching coordinates of shared region edges.
pub const COORD_TOL: f64 = 1e-9;

/// A lossless dielectric with a diagonal, axisymmetric permittivity tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub name: String,
    /// Relative permittivity in the radial/azimuthal directions.
    pub eps_perp: f64,
    /// Relative permittivity in the axial direction.
    pub eps_para: f64,
}

impl Material {
    pub fn vacuum() -> Self {
        Material { name: "vacuum".into(), eps_perp: 1.0, eps_para: 1.0 }
    }

    pub fn is_isotropic(&self) -> bool {
        self.eps_perp == self.eps_para
    }
}

/// Which tangential field the radiation match leaves free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TangentToggle {
    Magnetic,
    Electric,
}

/// Boundary condition attached to an external boundary side.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryCondition {
    /// Perfect electric conductor: tangential H free, normal H zero.
    ElectricWall,
    /// Dual wall, used mainly on symmetry planes.
    MagneticWall,
    /// Traveling-wave impedance match producing complex eigenfrequencies.
    RadiationMatch {
        /// Electric/magnetic mixing angle in radians; 0 degenerates to an
        /// electric wall, pi/2 to a magnetic wall.
        mix_angle: f64,
        tangent_toggle: TangentToggle,
        /// Match frequency [Hz] at which the impedance condition is tuned.
        match_frequency: f64,
    },
}

/// One mapped-mesh patch: a quadrilateral whose four sides are polylines
/// through `vertices`, delimited by the `corners` indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    /// Polygon vertices in metres, counter-clockwise, x >= 0.
    pub vertices: Vec<(f64, f64)>,
    /// Index into `ResonatorGeometry::materials`.
    pub material: usize,
    /// Elements along each of the four sides; opposite sides must agree.
    pub edge_counts: [usize; 4],
    /// Vertex indices of the four patch corners, counter-clockwise.
    /// Side `k` runs from `corners[k]` to `corners[(k+1)%4]`.
    pub corners: [usize; 4],
}

impl Region {
    /// The vertex chain of side `k`, from corner `k` to corner `k+1`.
    pub fn side_polyline(&self, side: usize) -> Vec<(f64, f64)> {
        let n = self.vertices.len();
        let start = self.corners[side];
        let end = self.corners[(side + 1) % 4];
        let mut out = vec![self.vertices[start]];
        let mut i = start;
        while i != end {
            i = (i + 1) % n;
            out.push(self.vertices[i]);
        }
        out
    }

    /// Straight segments of side `k` as endpoint pairs.
    pub fn side_segments(&self, side: usize) -> Vec<((f64, f64), (f64, f64))> {
        let p = self.side_polyline(side);
        p.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn signed_area(&self) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        0.5 * (0..n)
            .map(|i| {
                let (x1, y1) = v[i];
                let (x2, y2) = v[(i + 1) % n];
                x1 * y2 - x2 * y1
            })
            .sum::<f64>()
    }
}

/// Tag binding a boundary condition to one side of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTag {
    pub region: usize,
    pub side: usize,
    pub condition: BoundaryCondition,
}

/// The complete model input: materials, patch regions and boundary tags.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonatorGeometry {
    pub materials: Vec<Material>,
    pub regions: Vec<Region>,
    pub boundaries: Vec<BoundaryTag>,
}

/// Eigensolver settings carried alongside the geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Azimuthal mode order M.
    pub m: u32,
    pub n_modes: usize,
    /// Search-target frequency [Hz].
    pub shift_frequency: f64,
    /// Penalty-term coefficient (1.0 suppresses spurious modes; 0 reveals them).
    pub alpha: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { m: 0, n_modes: 4, shift_frequency: 0.0, alpha: 1.0 }
    }
}

// ---------------------------------------------------------------------------
// file format (TOML)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct FileRoot {
    length_unit: f64,
    #[serde(default)]
    materials: BTreeMap<String, FileMaterial>,
    #[serde(default)]
    regions: Vec<FileRegion>,
    #[serde(default)]
    boundaries: Vec<FileBoundary>,
    solver: Option<FileSolver>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileMaterial {
    eps_perp: f64,
    eps_para: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileRegion {
    vertices: Vec<[f64; 2]>,
    material: String,
    /// Either `[nx, ny]` or all four per-side counts.
    edge_counts: Vec<usize>,
    corners: Option<[usize; 4]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileBoundary {
    region: usize,
    side: usize,
    condition: String,
    mix_angle_deg: Option<f64>,
    tangent_toggle: Option<String>,
    match_frequency_hz: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileSolver {
    m: u32,
    n_modes: usize,
    shift_frequency_hz: f64,
    alpha: Option<f64>,
}

/// Parses a geometry file, validates all structural invariants, and returns
/// the geometry (coordinates converted to metres) with its solver settings.
pub fn parse_geometry(text: &str) -> Result<(ResonatorGeometry, SolverSettings)> {
    let root: FileRoot = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if !(root.length_unit > 0.0) {
        return Err(Error::Validation("length_unit must be positive".into()));
    }
    let mut materials = Vec::new();
    let mut mat_index = BTreeMap::new();
    for (name, m) in &root.materials {
        mat_index.insert(name.clone(), materials.len());
        materials.push(Material { name: name.clone(), eps_perp: m.eps_perp, eps_para: m.eps_para });
    }
    let mut regions = Vec::new();
    for (ri, fr) in root.regions.iter().enumerate() {
        let material = *mat_index
            .get(&fr.material)
            .ok_or_else(|| Error::Validation(format!("region {ri}: unknown material {:?}", fr.material)))?;
        let vertices: Vec<(f64, f64)> = fr
            .vertices
            .iter()
            .map(|v| (v[0] * root.length_unit, v[1] * root.length_unit))
            .collect();
        let corners = match fr.corners {
            Some(c) => c,
            None => {
                if vertices.len() != 4 {
                    return Err(Error::Validation(format!(
                        "region {ri}: corners required when vertex count != 4"
                    )));
                }
                [0, 1, 2, 3]
            }
        };
        let edge_counts: [usize; 4] = match fr.edge_counts.len() {
            2 => [fr.edge_counts[0], fr.edge_counts[1], fr.edge_counts[0], fr.edge_counts[1]],
            4 => [fr.edge_counts[0], fr.edge_counts[1], fr.edge_counts[2], fr.edge_counts[3]],
            n => {
                return Err(Error::Validation(format!(
                    "region {ri}: edge_counts must have 2 or 4 entries, got {n}"
                )))
            }
        };
        regions.push(Region { vertices, material, edge_counts, corners });
    }
    let mut boundaries = Vec::new();
    for (bi, fb) in root.boundaries.iter().enumerate() {
        let condition = match fb.condition.as_str() {
            "electric_wall" => BoundaryCondition::ElectricWall,
            "magnetic_wall" => BoundaryCondition::MagneticWall,
            "radiation_match" => {
                let match_frequency = fb.match_frequency_hz.ok_or_else(|| {
                    Error::Validation(format!("boundary {bi}: radiation_match requires match_frequency_hz"))
                })?;
                let mix_angle = fb.mix_angle_deg.unwrap_or(45.0).to_radians();
                let tangent_toggle = match fb.tangent_toggle.as_deref() {
                    None | Some("magnetic") => TangentToggle::Magnetic,
                    Some("electric") => TangentToggle::Electric,
                    Some(other) => {
                        return Err(Error::Validation(format!(
                            "boundary {bi}: unknown tangent_toggle {other:?}"
                        )))
                    }
                };
                BoundaryCondition::RadiationMatch { mix_angle, tangent_toggle, match_frequency }
            }
            other => {
                return Err(Error::Validation(format!("boundary {bi}: unknown condition {other:?}")))
            }
        };
        boundaries.push(BoundaryTag { region: fb.region, side: fb.side, condition });
    }
    let geometry = ResonatorGeometry { materials, regions, boundaries };
    validate(&geometry)?;
    let settings = match root.solver {
        Some(s) => SolverSettings {
            m: s.m,
            n_modes: s.n_modes,
            shift_frequency: s.shift_frequency_hz,
            alpha: s.alpha.unwrap_or(1.0),
        },
        None => SolverSettings::default(),
    };
    if settings.n_modes == 0 {
        return Err(Error::Validation("n_modes must be >= 1".into()));
    }
    if settings.alpha < 0.0 {
        return Err(Error::Validation("alpha must be >= 0".into()));
    }
    Ok((geometry, settings))
}

/// Serializes a geometry + settings back to file text (coordinates in
/// metres, `length_unit = 1`). `parse_geometry` of the output reproduces the
/// input structurally.
pub fn serialize_geometry(geometry: &ResonatorGeometry, settings: &SolverSettings) -> String {
    let materials = geometry
        .materials
        .iter()
        .map(|m| (m.name.clone(), FileMaterial { eps_perp: m.eps_perp, eps_para: m.eps_para }))
        .collect();
    let regions = geometry
        .regions
        .iter()
        .map(|r| FileRegion {
            vertices: r.vertices.iter().map(|&(x, y)| [x, y]).collect(),
            material: geometry.materials[r.material].name.clone(),
            edge_counts: r.edge_counts.to_vec(),
            corners: Some(r.corners),
        })
        .collect();
    let boundaries = geometry
        .boundaries
        .iter()
        .map(|b| {
            let (condition, mix, tng, mf) = match &b.condition {
                BoundaryCondition::ElectricWall => ("electric_wall", None, None, None),
                BoundaryCondition::MagneticWall => ("magnetic_wall", None, None, None),
                BoundaryCondition::RadiationMatch { mix_angle, tangent_toggle, match_frequency } => (
                    "radiation_match",
                    Some(mix_angle.to_degrees()),
                    Some(
                        match tangent_toggle {
                            TangentToggle::Magnetic => "magnetic",
                            TangentToggle::Electric => "electric",
                        }
                        .to_string(),
                    ),
                    Some(*match_frequency),
                ),
            };
            FileBoundary {
                region: b.region,
                side: b.side,
                condition: condition.into(),
                mix_angle_deg: mix,
                tangent_toggle: tng,
                match_frequency_hz: mf,
            }
        })
        .collect();
    let root = FileRoot {
        length_unit: 1.0,
        materials,
        regions,
        boundaries,
        solver: Some(FileSolver {
            m: settings.m,
            n_modes: settings.n_modes,
            shift_frequency_hz: settings.shift_frequency,
            alpha: Some(settings.alpha),
        }),
    };
    toml::to_string(&root).expect("geometry serialization cannot fail")
}

/// Rectangular cavity [0, radius] x [0, height] with a uniform isotropic
/// fill and electric walls on the three outer edges. The axis side (x = 0)
/// is deliberately left untagged: field regularity at the axis follows from
/// the weak form itself, and clamping components there would over-constrain
/// azimuthal orders M >= 1.
pub fn make_cylindrical_cavity(radius: f64, height: f64, eps: f64) -> Result<ResonatorGeometry> {
    if !(radius > 0.0) || !(height > 0.0) {
        return Err(Error::Validation("cavity radius and height must be positive".into()));
    }
    if eps < 1.0 - 1e-12 {
        return Err(Error::Validation("relative permittivity must be >= 1".into()));
    }
    let material = Material { name: "fill".into(), eps_perp: eps, eps_para: eps };
    let region = Region {
        vertices: vec![(0.0, 0.0), (radius, 0.0), (radius, height), (0.0, height)],
        material: 0,
        edge_counts: [8, 8, 8, 8],
        corners: [0, 1, 2, 3],
    };
    let boundaries = [0, 1, 2]
        .map(|side| BoundaryTag { region: 0, side, condition: BoundaryCondition::ElectricWall })
        .to_vec();
    let geometry =
        ResonatorGeometry { materials: vec![material], regions: vec![region], boundaries };
    validate(&geometry)?;
    Ok(geometry)
}

// ---------------------------------------------------------------------------
// validation
// ---------------------------------------------------------------------------

fn seg_key(a: (f64, f64), b: (f64, f64)) -> ([i64; 4], [i64; 4]) {
    let q = |v: f64| (v / COORD_TOL).round() as i64;
    (
        [q(a.0), q(a.1), q(b.0), q(b.1)],
        [q(b.0), q(b.1), q(a.0), q(a.1)],
    )
}

/// True when segments (p1,p2) and (p3,p4) cross at a point interior to both.
fn segments_cross(p1: (f64, f64), p2: (f64, f64), p3: (f64, f64), p4: (f64, f64)) -> bool {
    let d = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
        (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
    };
    let d1 = d(p3, p4, p1);
    let d2 = d(p3, p4, p2);
    let d3 = d(p1, p2, p3);
    let d4 = d(p1, p2, p4);
    let scale = (p2.0 - p1.0).hypot(p2.1 - p1.1) * (p4.0 - p3.0).hypot(p4.1 - p3.1);
    let eps = 1e-12 * scale.max(1e-30);
    d1 * d2 < -eps * eps && d3 * d4 < -eps * eps
}

fn point_in_polygon(p: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (x1, y1) = poly[i];
        let (x2, y2) = poly[(i + 1) % n];
        if (y1 > p.1) != (y2 > p.1) {
            let xint = x1 + (p.1 - y1) / (y2 - y1) * (x2 - x1);
            if p.0 < xint {
                inside = !inside;
            }
        }
    }
    inside
}

/// A point strictly interior to a simple polygon.
fn interior_point(poly: &[(f64, f64)]) -> (f64, f64) {
    // area-weighted centroid, falling back to diagonal midpoints for
    // non-convex shapes where the centroid falls outside
    let n = poly.len();
    let mut a = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let (x1, y1) = poly[i];
        let (x2, y2) = poly[(i + 1) % n];
        let w = x1 * y2 - x2 * y1;
        a += w;
        cx += (x1 + x2) * w;
        cy += (y1 + y2) * w;
    }
    let c = (cx / (3.0 * a), cy / (3.0 * a));
    if point_in_polygon(c, poly) {
        return c;
    }
    for i in 0..n {
        for j in i + 2..n {
            let mid = ((poly[i].0 + poly[j].0) / 2.0, (poly[i].1 + poly[j].1) / 2.0);
            if point_in_polygon(mid, poly) {
                return mid;
            }
        }
    }
    c
}

fn is_axis_segment(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0.abs() <= COORD_TOL && b.0.abs() <= COORD_TOL
}

/// Checks every structural invariant of a geometry; returns the first
/// violation found.
pub fn validate(geometry: &ResonatorGeometry) -> Result<()> {
    for m in &geometry.materials {
        if m.eps_perp < 1.0 - 1e-12 || m.eps_para < 1.0 - 1e-12 {
            return Err(Error::Validation(format!(
                "material {:?}: permittivities must be >= 1",
                m.name
            )));
        }
    }
    for (ri, r) in geometry.regions.iter().enumerate() {
        if r.material >= geometry.materials.len() {
            return Err(Error::Validation(format!("region {ri}: material index out of range")));
        }
        if r.vertices.len() < 4 {
            return Err(Error::Validation(format!("region {ri}: needs at least 4 vertices")));
        }
        for (vi, &(x, _)) in r.vertices.iter().enumerate() {
            if x < -COORD_TOL {
                return Err(Error::Validation(format!(
                    "region {ri} vertex {vi}: x coordinate negative"
                )));
            }
        }
        if r.signed_area() <= 0.0 {
            return Err(Error::Validation(format!(
                "region {ri}: polygon must be counter-clockwise with positive area"
            )));
        }
        // simple polygon: no two non-adjacent edges cross
        let n = r.vertices.len();
        for i in 0..n {
            for j in i + 1..n {
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                if segments_cross(
                    r.vertices[i],
                    r.vertices[(i + 1) % n],
                    r.vertices[j],
                    r.vertices[(j + 1) % n],
                ) {
                    return Err(Error::Validation(format!(
                        "region {ri}: polygon self-intersects (edges {i} and {j})"
                    )));
                }
            }
        }
        // corner indices must advance monotonically around the polygon
        let mut covered = 0usize;
        for s in 0..4 {
            covered += r.side_polyline(s).len() - 1;
        }
        if covered != n {
            return Err(Error::Validation(format!(
                "region {ri}: corner indices do not partition the polygon"
            )));
        }
        for c in r.corners {
            if c >= n {
                return Err(Error::Validation(format!("region {ri}: corner index out of range")));
            }
        }
        if r.edge_counts[0] != r.edge_counts[2] || r.edge_counts[1] != r.edge_counts[3] {
            return Err(Error::Validation(format!(
                "region {ri}: opposite edge counts differ"
            )));
        }
        if r.edge_counts.iter().any(|&c| c == 0) {
            return Err(Error::Validation(format!("region {ri}: edge counts must be positive")));
        }
    }
    // pairwise interior disjointness: shared edges are allowed, crossings
    // and containment are not
    for i in 0..geometry.regions.len() {
        for j in i + 1..geometry.regions.len() {
            let (a, b) = (&geometry.regions[i], &geometry.regions[j]);
            let na = a.vertices.len();
            let nb = b.vertices.len();
            for p in 0..na {
                for q in 0..nb {
                    if segments_cross(
                        a.vertices[p],
                        a.vertices[(p + 1) % na],
                        b.vertices[q],
                        b.vertices[(q + 1) % nb],
                    ) {
                        return Err(Error::Validation(format!(
                            "regions {i} and {j} overlap (edge crossing)"
                        )));
                    }
                }
            }
            if point_in_polygon(interior_point(&a.vertices), &b.vertices)
                || point_in_polygon(interior_point(&b.vertices), &a.vertices)
            {
                return Err(Error::Validation(format!("regions {i} and {j} overlap")));
            }
        }
    }
    // boundary tags reference valid sides, at most one per side
    let mut tag_count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (bi, b) in geometry.boundaries.iter().enumerate() {
        if b.region >= geometry.regions.len() {
            return Err(Error::Validation(format!("boundary {bi}: region index out of range")));
        }
        if b.side >= 4 {
            return Err(Error::Validation(format!("boundary {bi}: side index must be 0..3")));
        }
        *tag_count.entry((b.region, b.side)).or_insert(0) += 1;
    }
    for (&(r, s), &c) in &tag_count {
        if c >= 2 {
            return Err(Error::Validation(format!("region {r} side {s} tagged {c} times")));
        }
    }
    // every external, off-axis segment must lie on a tagged side; shared
    // (internal) sides must not be tagged; axis segments stay untagged
    let mut seg_owner: BTreeMap<[i64; 4], Vec<(usize, usize)>> = BTreeMap::new();
    for (ri, r) in geometry.regions.iter().enumerate() {
        for s in 0..4 {
            for (p1, p2) in r.side_segments(s) {
                let (k1, k2) = seg_key(p1, p2);
                let key = if k1 <= k2 { k1 } else { k2 };
                seg_owner.entry(key).or_default().push((ri, s));
            }
        }
    }
    for (ri, r) in geometry.regions.iter().enumerate() {
        for s in 0..4 {
            let tagged = tag_count.contains_key(&(ri, s));
            for (p1, p2) in r.side_segments(s) {
                let (k1, k2) = seg_key(p1, p2);
                let key = if k1 <= k2 { k1 } else { k2 };
                let owners = &seg_owner[&key];
                let shared = owners.len() > 1;
                let axis = is_axis_segment(p1, p2);
                if shared && tagged {
                    return Err(Error::Validation(format!(
                        "region {ri} side {s}: internal (shared) side carries a boundary tag"
                    )));
                }
                if !shared && !axis && !tagged {
                    return Err(Error::Validation(format!(
                        "region {ri} side {s}: external edge has no boundary condition"
                    )));
                }
                if axis && tagged {
                    return Err(Error::Validation(format!(
                        "region {ri} side {s}: on-axis edge must stay untagged"
                    )));
                }
            }
        }
    }
    // radiation tags need a positive match frequency
    for (bi, b) in geometry.boundaries.iter().enumerate() {
        if let BoundaryCondition::RadiationMatch { match_frequency, .. } = b.condition {
            if !(match_frequency > 0.0) {
                return Err(Error::Validation(format!(
                    "boundary {bi}: match_frequency must be positive"
                )));
            }
        }
    }
    Ok(())
}
