//! Derived fields and per-mode figures of merit: mode volume, electric
//! filling factors, the wall-loss characteristic length Lambda with its
//! quality factor, radiative-Q lower bound, and field export.
//!
//! The electric displacement is computed from the curl of H with the
//! constant -i/(2 pi f) prefactor dropped; every reported scalar is a ratio
//! of quadratics in the field, so the prefactor cancels. Exported D/E fields
//! are therefore in scaled units.

use std::collections::BTreeMap;
use std::io::Write;

use num_complex::Complex;

use crate::eigensolve::ModeSolution;
use crate::geometry::{BoundaryCondition, ResonatorGeometry};
use crate::mesh::{quadrature, ElementKind, Mesh};
use crate::{Error, Result, MU_0, SPEED_OF_LIGHT};

pub type C64 = Complex<f64>;

/// Field values and first derivatives at one physical point.
#[derive(Debug, Clone, Copy)]
pub struct FieldSample {
    pub x: f64,
    pub y: f64,
    pub hrad: C64,
    pub hazi: C64,
    pub haxi: C64,
    pub hrad_x: C64,
    pub hrad_y: C64,
    pub hazi_x: C64,
    pub hazi_y: C64,
    pub haxi_x: C64,
    pub haxi_y: C64,
}

impl FieldSample {
    /// (Hrad - M*Hazi)/x + dHrad/dx + dHaxi/dy — should vanish for
    /// physical modes.
    pub fn div_h(&self, m: u32) -> C64 {
        (self.hrad - self.hazi * m as f64) / self.x + self.hrad_x + self.haxi_y
    }

    /// Scaled displacement components (curl of H without the -i/(2 pi f)
    /// prefactor).
    pub fn d_field(&self, m: u32) -> (C64, C64, C64) {
        let mf = m as f64;
        let drad = (self.haxi * mf - self.hazi_y * self.x) / self.x;
        let dazi = -self.haxi_x + self.hrad_y;
        let daxi = (self.hazi - self.hrad * mf + self.hazi_x * self.x) / self.x;
        (drad, dazi, daxi)
    }

    /// Electric energy density eps*|E|^2 = |D_perp|^2/eps_perp +
    /// |D_para|^2/eps_para (scaled units).
    pub fn elec_energy(&self, m: u32, eps_perp: f64, eps_para: f64) -> f64 {
        let (drad, dazi, daxi) = self.d_field(m);
        (drad.norm_sqr() + dazi.norm_sqr()) / eps_perp + daxi.norm_sqr() / eps_para
    }

    pub fn mag_energy(&self) -> f64 {
        self.hrad.norm_sqr() + self.hazi.norm_sqr() + self.haxi.norm_sqr()
    }
}

/// Evaluates H and its gradients inside element `elem` at reference point
/// `rp`, from interleaved nodal coefficients.
pub fn sample_fields(mesh: &Mesh, elem: usize, rp: (f64, f64), coeffs: &[C64]) -> FieldSample {
    let e = &mesh.elements[elem];
    let mp = mesh.map_point(e, rp);
    let mut s = FieldSample {
        x: mp.x,
        y: mp.y,
        hrad: C64::ZERO,
        hazi: C64::ZERO,
        haxi: C64::ZERO,
        hrad_x: C64::ZERO,
        hrad_y: C64::ZERO,
        hazi_x: C64::ZERO,
        hazi_y: C64::ZERO,
        haxi_x: C64::ZERO,
        haxi_y: C64::ZERO,
    };
    for (i, &nid) in e.nodes.iter().enumerate() {
        let n = mp.values[i];
        let (gx, gy) = mp.grads_xy[i];
        let (cr, ca, cy) = (coeffs[3 * nid], coeffs[3 * nid + 1], coeffs[3 * nid + 2]);
        s.hrad += cr * n;
        s.hazi += ca * n;
        s.haxi += cy * n;
        s.hrad_x += cr * gx;
        s.hrad_y += cr * gy;
        s.hazi_x += ca * gx;
        s.hazi_y += ca * gy;
        s.haxi_x += cy * gx;
        s.haxi_y += cy * gy;
    }
    s
}

/// Relative divergence diagnostic: x-weighted L2 norm of div H over a
/// gradient-scaled norm of H itself.
pub fn divergence_rel(mesh: &Mesh, m: u32, coeffs: &[C64]) -> f64 {
    let mf = m as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (ei, e) in mesh.elements.iter().enumerate() {
        for (rp, w) in crate::mesh::diagnostic_quadrature(e.kind) {
            let mp = mesh.map_point(e, rp);
            let s = sample_fields(mesh, ei, rp, coeffs);
            let dv = w * mp.det_j * s.x;
            num += dv * s.div_h(m).norm_sqr();
            let grads = s.hrad_x.norm_sqr()
                + s.hrad_y.norm_sqr()
                + s.hazi_x.norm_sqr()
                + s.hazi_y.norm_sqr()
                + s.haxi_x.norm_sqr()
                + s.haxi_y.norm_sqr();
            den += dv * (grads + (mf * mf + 1.0) / (s.x * s.x) * s.mag_energy());
        }
    }
    (num / den).sqrt()
}

fn eps_of(geometry: &ResonatorGeometry, region: usize) -> (f64, f64) {
    let m = &geometry.materials[geometry.regions[region].material];
    (m.eps_perp, m.eps_para)
}

/// Electric-energy mode volume: integral of eps|E|^2 over the support
/// regions (x-weighted, times 2 pi) divided by the peak of eps|E|^2 over
/// the quadrature points of the support. `standing_wave` applies the
/// standing-wave convention (doubled numerator, quadrupled denominator).
pub fn mode_volume(
    mode: &ModeSolution,
    mesh: &Mesh,
    geometry: &ResonatorGeometry,
    support: &[usize],
    standing_wave: bool,
) -> Result<f64> {
    if support.is_empty() {
        return Err(Error::Postprocess("empty support selection".into()));
    }
    let mut integral = 0.0;
    let mut peak = 0.0_f64;
    for (ei, e) in mesh.elements.iter().enumerate() {
        if !support.contains(&e.region) {
            continue;
        }
        let (ep, el) = eps_of(geometry, e.region);
        for (rp, w) in quadrature(e.kind) {
            let mp = mesh.map_point(e, rp);
            let s = sample_fields(mesh, ei, rp, &mode.coefficients);
            let ed = s.elec_energy(mode.m, ep, el);
            integral += w * mp.det_j * s.x * ed;
            peak = peak.max(ed);
        }
    }
    if peak <= 0.0 {
        return Err(Error::Postprocess("field vanishes on the support selection".into()));
    }
    let volume = 2.0 * std::f64::consts::PI * integral / peak;
    Ok(if standing_wave { 0.5 * volume } else { volume })
}

/// Per-(material, direction) electric filling factors. Directions are
/// "radial", "azimuthal" (both weighted by 1/eps_perp) and "axial"
/// (1/eps_para); entries over all materials and directions sum to 1.
pub fn filling_factors(
    mode: &ModeSolution,
    mesh: &Mesh,
    geometry: &ResonatorGeometry,
) -> BTreeMap<(String, String), f64> {
    let mut per: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut total = 0.0;
    for (ei, e) in mesh.elements.iter().enumerate() {
        let (ep, el) = eps_of(geometry, e.region);
        let mat = geometry.materials[geometry.regions[e.region].material].name.clone();
        for (rp, w) in quadrature(e.kind) {
            let mp = mesh.map_point(e, rp);
            let s = sample_fields(mesh, ei, rp, &mode.coefficients);
            let (drad, dazi, daxi) = s.d_field(mode.m);
            let dv = w * mp.det_j * s.x;
            let er = dv * drad.norm_sqr() / ep;
            let ea = dv * dazi.norm_sqr() / ep;
            let ey = dv * daxi.norm_sqr() / el;
            *per.entry((mat.clone(), "radial".into())).or_insert(0.0) += er;
            *per.entry((mat.clone(), "azimuthal".into())).or_insert(0.0) += ea;
            *per.entry((mat.clone(), "axial".into())).or_insert(0.0) += ey;
            total += er + ea + ey;
        }
    }
    for v in per.values_mut() {
        *v /= total;
    }
    per
}

/// Surface-loss specification for `wall_loss`.
#[derive(Debug, Clone, Copy)]
pub enum WallSpec {
    /// Surface resistance in ohms per square.
    SurfaceResistance(f64),
    /// Bulk conductivity in S/m (surface resistance from the skin depth).
    Conductivity(f64),
}

/// Characteristic length Lambda = int |H|^2 dV / int |n x H|^2 dS over the
/// electric-wall boundary, and the wall-loss quality factor it implies.
pub fn wall_loss(
    mode: &ModeSolution,
    mesh: &Mesh,
    geometry: &ResonatorGeometry,
    spec: WallSpec,
) -> Result<(f64, f64)> {
    let _ = geometry;
    let lambda = wall_lambda(mode, mesh)?;
    let f = mode.frequency.re;
    let q = match spec {
        WallSpec::SurfaceResistance(rs) => 2.0 * std::f64::consts::PI * f * MU_0 / rs * lambda,
        WallSpec::Conductivity(sigma) => {
            (4.0 * std::f64::consts::PI * f * MU_0 * sigma).sqrt() * lambda
        }
    };
    Ok((lambda, q))
}

fn wall_lambda(mode: &ModeSolution, mesh: &Mesh) -> Result<f64> {
    // volume integral of |H|^2 (the 2 pi x weight appears in both integrals)
    let mut vol = 0.0;
    for (ei, e) in mesh.elements.iter().enumerate() {
        for (rp, w) in quadrature(e.kind) {
            let mp = mesh.map_point(e, rp);
            let s = sample_fields(mesh, ei, rp, &mode.coefficients);
            vol += w * mp.det_j * s.x * s.mag_energy();
        }
    }
    // surface integral of |n x H|^2 over electric walls
    let mut surf = 0.0;
    let mut any_wall = false;
    for be in &mesh.boundary_edges {
        if be.condition != BoundaryCondition::ElectricWall {
            continue;
        }
        any_wall = true;
        for (t, w) in crate::mesh::gauss3() {
            let (rp, _) = crate::mesh::edge_point(
                mesh.elements[be.element].kind,
                be.local_edge,
                t,
            );
            let s = sample_fields(mesh, be.element, rp, &mode.coefficients);
            let (nx, ny) = mesh.boundary_normal(be, t);
            let tangential =
                s.hazi.norm_sqr() + (s.haxi * nx - s.hrad * ny).norm_sqr();
            surf += w * mesh.boundary_jacobian(be, t) * s.x * tangential;
        }
    }
    if !any_wall {
        return Err(Error::Postprocess("no electric-wall segments on this mesh".into()));
    }
    if surf < 1e-300 {
        return Err(Error::Postprocess(
            "wall field numerically zero; Lambda is effectively infinite at this precision".into(),
        ));
    }
    Ok(vol / surf)
}

/// Radiative-Q lower bound (8 pi f / c) * Lambda, for a mode solved with
/// the enclosing electric wall placed in the radiation zone.
pub fn q_rad_lower(mode: &ModeSolution, mesh: &Mesh) -> Result<f64> {
    let lambda = wall_lambda(mode, mesh)?;
    Ok(8.0 * std::f64::consts::PI * mode.frequency.re / SPEED_OF_LIGHT * lambda)
}

/// Scalar quantities accepted by `export_fields`.
pub const EXPORT_QUANTITIES: [&str; 7] =
    ["AbsMagEnDens", "ElecEnDens", "DivH", "Hrad", "Hazi", "Haxi", "AbsElecEnDensLog"];

/// Writes a legacy-ASCII unstructured-grid file with one point scalar per
/// mesh node. Derivative-based quantities are averaged over the elements
/// adjacent to each node.
pub fn export_fields(
    mode: &ModeSolution,
    mesh: &Mesh,
    geometry: &ResonatorGeometry,
    quantity: &str,
    out: &mut impl Write,
) -> Result<()> {
    if !EXPORT_QUANTITIES.contains(&quantity) {
        return Err(Error::Postprocess(format!("unknown quantity {quantity:?}")));
    }
    let mut values = vec![0.0_f64; mesh.nodes.len()];
    let mut counts = vec![0u32; mesh.nodes.len()];
    for (ei, e) in mesh.elements.iter().enumerate() {
        let refc: &[(f64, f64)] = match e.kind {
            ElementKind::Quad9 => &crate::mesh::QUAD9_REF,
            ElementKind::Tri6 => &crate::mesh::TRI6_REF,
        };
        let (ep, el) = eps_of(geometry, e.region);
        for (i, &nid) in e.nodes.iter().enumerate() {
            // nudge axis nodes inward so 1/x quantities stay finite
            let mut rp = refc[i];
            if mesh.nodes[nid].x.abs() < 1e-300 {
                let shrink = 1.0 - 1e-6;
                rp = match e.kind {
                    ElementKind::Quad9 => (rp.0 * shrink, rp.1 * shrink),
                    ElementKind::Tri6 => (
                        (rp.0 - 1.0 / 3.0) * shrink + 1.0 / 3.0,
                        (rp.1 - 1.0 / 3.0) * shrink + 1.0 / 3.0,
                    ),
                };
            }
            let s = sample_fields(mesh, ei, rp, &mode.coefficients);
            let v = match quantity {
                "AbsMagEnDens" => s.mag_energy(),
                "ElecEnDens" => s.elec_energy(mode.m, ep, el),
                "AbsElecEnDensLog" => (s.elec_energy(mode.m, ep, el) + 1e-10).log10(),
                "DivH" => s.div_h(mode.m).re,
                "Hrad" => s.hrad.re,
                "Hazi" => s.hazi.re,
                "Haxi" => s.haxi.re,
                _ => unreachable!(),
            };
            values[nid] += v;
            counts[nid] += 1;
        }
    }
    for (v, &c) in values.iter_mut().zip(&counts) {
        if c > 0 {
            *v /= c as f64;
        }
    }
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "wgfem {quantity}")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.nodes.len())?;
    for n in &mesh.nodes {
        writeln!(out, "{:.8e} {:.8e} 0.0", n.x, n.y)?;
    }
    let total: usize = mesh.elements.iter().map(|e| e.kind.n_nodes() + 1).sum();
    writeln!(out, "CELLS {} {}", mesh.elements.len(), total)?;
    for e in &mesh.elements {
        let ids: Vec<String> = e.nodes.iter().map(|n| n.to_string()).collect();
        writeln!(out, "{} {}", e.kind.n_nodes(), ids.join(" "))?;
    }
    writeln!(out, "CELL_TYPES {}", mesh.elements.len())?;
    for e in &mesh.elements {
        // 28 = biquadratic quad, 22 = quadratic triangle
        let t = match e.kind {
            ElementKind::Quad9 => 28,
            ElementKind::Tri6 => 22,
        };
        writeln!(out, "{t}")?;
    }
    writeln!(out, "POINT_DATA {}", mesh.nodes.len())?;
    writeln!(out, "SCALARS {quantity} double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for v in &values {
        writeln!(out, "{v:.8e}")?;
    }
    Ok(())
}

/// Postprocessed scalars for one mode, exportable as one CSV row.
#[derive(Debug, Clone)]
pub struct ModeReport {
    pub m: u32,
    pub f_re: f64,
    pub f_im: f64,
    pub div_rel: f64,
    pub v_mode: f64,
    pub lambda: f64,
    pub q_wall: f64,
    pub q_rad_lower: f64,
    /// ((material, direction), factor) pairs in a fixed sorted order.
    pub filling: Vec<((String, String), f64)>,
}

impl ModeReport {
    pub fn csv_header(&self) -> String {
        let mut cols = vec![
            "M".to_string(),
            "f_re_hz".into(),
            "f_im_hz".into(),
            "div_rel".into(),
            "V_mode_m3".into(),
            "Lambda_m".into(),
            "Q_wall".into(),
            "Q_rad_lower".into(),
        ];
        for ((mat, dir), _) in &self.filling {
            cols.push(format!("filling:{mat}:{dir}"));
        }
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.m.to_string(),
            format!("{:.8e}", self.f_re),
            format!("{:.8e}", self.f_im),
            format!("{:.8e}", self.div_rel),
            format!("{:.8e}", self.v_mode),
            format!("{:.8e}", self.lambda),
            format!("{:.8e}", self.q_wall),
            format!("{:.8e}", self.q_rad_lower),
        ];
        for (_, v) in &self.filling {
            cols.push(format!("{v:.8e}"));
        }
        cols.join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensolve::ModeSolution;
    use crate::geometry::make_cylindrical_cavity;
    use crate::mesh::map_mesh;
    use crate::oracle::{bessel_j, bessel_zero, CavityFamily};
    use approx::assert_relative_eq;

    /// Interpolates the closed-form TM010 field of the unit cylinder onto
    /// the mesh: Hazi(r) ~ J1(x01 r), all other components zero.
    fn tm010_mode(mesh: &Mesh) -> ModeSolution {
        let x01 = bessel_zero(CavityFamily::Tm, 0, 1);
        let mut coeffs = vec![C64::ZERO; 3 * mesh.nodes.len()];
        for n in &mesh.nodes {
            coeffs[3 * n.id + 1] = C64::from(bessel_j(1, x01 * n.x));
        }
        let f = SPEED_OF_LIGHT * x01 / (2.0 * std::f64::consts::PI);
        ModeSolution {
            frequency: C64::from(f),
            eigenvalue: C64::from((crate::CBAR * f).powi(2)),
            coefficients: coeffs,
            m: 0,
            divergence_rel: f64::NAN,
        }
    }

    fn cavity_16() -> (crate::geometry::ResonatorGeometry, Mesh) {
        let mut geo = make_cylindrical_cavity(1.0, 1.0, 1.0).unwrap();
        geo.regions[0].edge_counts = [16, 16, 16, 16];
        let mesh = map_mesh(&geo).unwrap();
        (geo, mesh)
    }

    #[test]
    fn tm010_interpolant_has_small_divergence() {
        let (_, mesh) = cavity_16();
        let mode = tm010_mode(&mesh);
        // pure azimuthal field at M=0 is exactly divergence-free; the
        // diagnostic sees only interpolation error
        assert!(divergence_rel(&mesh, 0, &mode.coefficients) < 1e-3);
    }

    #[test]
    fn tm010_mode_volume_matches_bessel_integral() {
        let (geo, mesh) = cavity_16();
        let mode = tm010_mode(&mesh);
        let x01 = bessel_zero(CavityFamily::Tm, 0, 1);
        // V = 2 pi a^2 d J1(x01)^2 / 2 for the unit cylinder
        let expect = std::f64::consts::PI * bessel_j(1, x01).powi(2);
        let v = mode_volume(&mode, &mesh, &geo, &[0], false).unwrap();
        assert_relative_eq!(v, expect, max_relative = 1e-2);
        assert_relative_eq!(v, 0.8468, max_relative = 1e-2);
        // standing-wave convention halves the volume
        let vsw = mode_volume(&mode, &mesh, &geo, &[0], true).unwrap();
        assert_relative_eq!(vsw, 0.5 * v, max_relative = 1e-12);
        assert!(mode_volume(&mode, &mesh, &geo, &[], false).is_err());
    }

    #[test]
    fn filling_factors_sum_to_one() {
        let (geo, mesh) = cavity_16();
        let mode = tm010_mode(&mesh);
        let f = filling_factors(&mode, &mesh, &geo);
        let sum: f64 = f.values().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-6);
        // TM010: E is purely axial
        assert!(f[&("fill".to_string(), "axial".to_string())] > 0.999);
    }

    #[test]
    fn lambda_scale_invariant_and_tm010_value() {
        let (geo, mesh) = cavity_16();
        let mut mode = tm010_mode(&mesh);
        let (l1, q1) = wall_loss(&mode, &mesh, &geo, WallSpec::SurfaceResistance(7e-3)).unwrap();
        for c in mode.coefficients.iter_mut() {
            *c *= 3.25;
        }
        let (l2, q2) = wall_loss(&mode, &mesh, &geo, WallSpec::SurfaceResistance(7e-3)).unwrap();
        assert_relative_eq!(l1, l2, max_relative = 1e-12);
        assert_relative_eq!(q1, q2, max_relative = 1e-12);
        // closed-form for TM010 with uniform wall field: Lambda = ad/(2(a+d));
        // the FEM wall misses only the untagged axis (zero measure)
        assert_relative_eq!(l1, 0.25, max_relative = 2e-2);
    }

    #[test]
    fn q_wall_conductivity_form_matches_surface_resistance() {
        let (geo, mesh) = cavity_16();
        let mode = tm010_mode(&mesh);
        let sigma = 5.8e7; // copper at room temperature
        let f = mode.frequency.re;
        let rs = (std::f64::consts::PI * f * MU_0 / sigma).sqrt();
        let (_, q_sigma) = wall_loss(&mode, &mesh, &geo, WallSpec::Conductivity(sigma)).unwrap();
        let (_, q_rs) =
            wall_loss(&mode, &mesh, &geo, WallSpec::SurfaceResistance(rs)).unwrap();
        assert_relative_eq!(q_sigma, q_rs, max_relative = 1e-10);
    }

    #[test]
    fn q_rad_lower_is_linear_in_lambda() {
        let (_, mesh) = cavity_16();
        let mode = tm010_mode(&mesh);
        let q = q_rad_lower(&mode, &mesh).unwrap();
        let lambda = wall_lambda(&mode, &mesh).unwrap();
        assert_relative_eq!(
            q,
            8.0 * std::f64::consts::PI * mode.frequency.re / SPEED_OF_LIGHT * lambda,
            max_relative = 1e-12
        );
    }

    #[test]
    fn export_writes_vtk_with_expected_peak_location() {
        let (geo, mesh) = cavity_16();
        let mode = tm010_mode(&mesh);
        let mut buf = Vec::new();
        export_fields(&mode, &mesh, &geo, "AbsMagEnDens", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0"));
        assert!(text.contains("POINT_DATA"));
        // the scalar block holds one value per node; its max must sit at the
        // radius where J1(x01 r) peaks: r = x'11/x01 = 1.8412/2.4048 = 0.7656
        let scalars: Vec<f64> = text
            .lines()
            .skip_while(|l| !l.starts_with("LOOKUP_TABLE"))
            .skip(1)
            .map(|l| l.parse().unwrap())
            .collect();
        assert_eq!(scalars.len(), mesh.nodes.len());
        let imax = scalars
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!((mesh.nodes[imax].x - 0.7656).abs() < 0.05, "peak at x = {}", mesh.nodes[imax].x);

        assert!(export_fields(&mode, &mesh, &geo, "bogus", &mut Vec::new()).is_err());
    }

    #[test]
    fn spurious_gradient_field_has_large_divergence() {
        let (_, mesh) = cavity_16();
        // H = grad(psi) with psi = x^2 y has divergence 2y + Hrad/x != 0
        let mut coeffs = vec![C64::ZERO; 3 * mesh.nodes.len()];
        for n in &mesh.nodes {
            coeffs[3 * n.id] = C64::from(2.0 * n.x * n.y);
            coeffs[3 * n.id + 2] = C64::from(n.x * n.x);
        }
        assert!(divergence_rel(&mesh, 0, &coeffs) > 0.1);
    }
}
