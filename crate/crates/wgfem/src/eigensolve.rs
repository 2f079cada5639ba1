//! Shift-invert Arnoldi eigensolver for the constrained generalized
//! eigenproblem `K h = lambda Mm h`, `C h = 0`.
//!
//! Boundary constraints are coupled through Lagrange multipliers into a
//! saddle-point system which is factorized once per shift; the Krylov
//! iteration then runs on the inverse operator with the mass-weighted inner
//! product. Closed lossless resonators give a real pencil (eigenvalues on
//! the positive real axis); radiation-matched boundaries make the saddle
//! system complex symmetric — not Hermitian — and eigenfrequencies move off
//! the real axis, with Q = Re(f)/(2 Im(f)).

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet as FaerTriplet};
use faer::Mat;
use num_complex::Complex;

use crate::assembly::{AssembledSystem, SparseRow, Triplet};
use crate::geometry::{BoundaryCondition, ResonatorGeometry, SolverSettings};
use crate::mesh::Mesh;
use crate::{Error, Result, CBAR};

pub type C64 = Complex<f64>;

/// One eigenmode: complex frequency, eigenvalue, and the nodal coefficients
/// of (Hrad, Hazi, Haxi), interleaved per node and normalized to unit mass
/// norm.
#[derive(Debug, Clone)]
pub struct ModeSolution {
    pub frequency: C64,
    pub eigenvalue: C64,
    pub coefficients: Vec<C64>,
    pub m: u32,
    /// Relative divergence diagnostic; NaN until `filter_spurious` runs.
    pub divergence_rel: f64,
}

impl ModeSolution {
    /// Radiative quality factor Re(f)/(2 Im(f)); infinite when the
    /// imaginary part is at or below numerical noise.
    pub fn q_inf(&self) -> f64 {
        let im = self.frequency.im;
        if im <= 1e-9 * self.frequency.re.abs() {
            f64::INFINITY
        } else {
            self.frequency.re / (2.0 * im)
        }
    }
}

fn spmv(trips: &[Triplet], x: &[C64], y: &mut [C64]) {
    for v in y.iter_mut() {
        *v = C64::ZERO;
    }
    for &(r, c, v) in trips {
        y[r] += x[c] * v;
    }
}

fn dot_conj(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Deterministic pseudo-random start vector.
fn seeded_vector(n: usize, seed: u64) -> Vec<C64> {
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).max(1);
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            C64::from((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
        })
        .collect()
}

struct SaddleSolver {
    lu: Lu<usize, C64>,
    n: usize,
    nt: usize,
}

impl SaddleSolver {
    fn build(system: &AssembledSystem, sigma: C64) -> Result<Self> {
        let n = system.n_dofs;
        let nc = system.constraints.len();
        let nt = n + nc;
        let mut max_a = 0.0_f64;
        for &(_, _, v) in &system.k {
            max_a = max_a.max(v.abs());
        }
        for &(_, _, v) in &system.mm {
            max_a = max_a.max((sigma * v).norm());
        }
        let s = if max_a > 0.0 { max_a } else { 1.0 };
        let mut trips: Vec<FaerTriplet<usize, usize, C64>> =
            Vec::with_capacity(system.k.len() + system.mm.len() + 2 * nc * 8);
        for &(r, c, v) in &system.k {
            trips.push(FaerTriplet::new(r, c, C64::from(v)));
        }
        for &(r, c, v) in &system.mm {
            trips.push(FaerTriplet::new(r, c, -sigma * v));
        }
        for (i, row) in system.constraints.iter().enumerate() {
            for &(dof, v) in row {
                // plain (non-conjugated) transpose keeps the system complex
                // symmetric
                trips.push(FaerTriplet::new(n + i, dof, v * s));
                trips.push(FaerTriplet::new(dof, n + i, v * s));
            }
        }
        let a = SparseColMat::<usize, C64>::try_new_from_triplets(nt, nt, &trips)
            .map_err(|e| Error::Solve(format!("saddle matrix build failed: {e:?}")))?;
        let sym = SymbolicLu::try_new(a.symbolic())
            .map_err(|e| Error::Solve(format!("symbolic factorization failed: {e:?}")))?;
        let lu = Lu::try_new_with_symbolic(sym, a.as_ref())
            .map_err(|e| Error::Solve(format!("LU factorization failed at the shift: {e:?}")))?;
        Ok(SaddleSolver { lu, n, nt })
    }

    /// Applies (K - sigma Mm)^-1 restricted to the constraint null space.
    fn apply(&self, rhs_top: &[C64]) -> Vec<C64> {
        let mut rhs = Mat::<C64>::zeros(self.nt, 1);
        for (i, &v) in rhs_top.iter().enumerate() {
            rhs[(i, 0)] = v;
        }
        self.lu.solve_in_place_with_conj(faer::Conj::No, rhs.as_mut());
        (0..self.n).map(|i| rhs[(i, 0)]).collect()
    }
}

struct RitzPair {
    lambda: C64,
    vector: Vec<C64>,
    arnoldi_residual: f64,
}

/// Shift-invert Arnoldi with the Mm inner product. Returns Ritz pairs of the
/// original pencil.
fn arnoldi(
    solver: &SaddleSolver,
    mm: &[Triplet],
    sigma: C64,
    op_scale: f64,
    steps: usize,
) -> Result<Vec<RitzPair>> {
    let n = solver.n;
    let mut mw = vec![C64::ZERO; n];
    // start vector pushed through the operator once so it satisfies the
    // constraints and lies in the operator's range
    // The raw shift-invert operator has eigenvalues 1/(lambda - sigma),
    // whose magnitude scales as 1/|sigma|; rescaling by op_scale keeps the
    // Hessenberg entries O(1) so the absolute breakdown test below stays
    // meaningful at any unit system.
    let rescale = |v: &mut Vec<C64>| {
        for x in v.iter_mut() {
            *x *= op_scale;
        }
    };
    let start = seeded_vector(n, 7);
    let mut mv = vec![C64::ZERO; n];
    spmv(mm, &start, &mut mv);
    let mut v = solver.apply(&mv);
    rescale(&mut v);
    spmv(mm, &v, &mut mw);
    let nrm = dot_conj(&v, &mw).re.max(0.0).sqrt();
    if !(nrm > 0.0) {
        return Err(Error::Solve("degenerate start vector".into()));
    }
    for (x, y) in v.iter_mut().zip(mw.iter_mut()) {
        *x /= nrm;
        *y /= nrm;
    }
    let mut basis: Vec<Vec<C64>> = vec![v];
    let mut mbasis: Vec<Vec<C64>> = vec![mw.clone()];
    let m_steps = steps.min(n);
    let mut h = Mat::<C64>::zeros(m_steps + 1, m_steps);
    let mut k_done = 0;
    for k in 0..m_steps {
        spmv(mm, &basis[k], &mut mw);
        let mut w = solver.apply(&mw);
        rescale(&mut w);
        for _pass in 0..2 {
            for j in 0..=k {
                let c = dot_conj(&mbasis[j], &w);
                if c != C64::ZERO {
                    h[(j, k)] += c;
                    for (wi, bi) in w.iter_mut().zip(&basis[j]) {
                        *wi -= c * bi;
                    }
                }
            }
        }
        spmv(mm, &w, &mut mw);
        let nrm = dot_conj(&w, &mw).re.max(0.0).sqrt();
        h[(k + 1, k)] = C64::from(nrm);
        k_done = k + 1;
        if nrm < 1e-13 {
            break; // invariant subspace found
        }
        for (x, y) in w.iter_mut().zip(mw.iter_mut()) {
            *x /= nrm;
            *y /= nrm;
        }
        basis.push(w);
        mbasis.push(mw.clone());
    }
    let m = k_done;
    let mut hm = Mat::<C64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            hm[(i, j)] = h[(i, j)];
        }
    }
    let eig = hm
        .eigen()
        .map_err(|e| Error::Solve(format!("dense eigendecomposition failed: {e:?}")))?;
    let thetas = eig.S().column_vector().to_owned();
    let u = eig.U();
    let tail = h[(m, m.saturating_sub(1))].norm();
    let mut pairs = Vec::new();
    for p in 0..m {
        let theta: C64 = thetas[p];
        if theta.norm() < 1e-300 {
            continue;
        }
        let lambda = sigma + op_scale * theta.inv();
        let mut vec = vec![C64::ZERO; n];
        for j in 0..m {
            let c = u[(j, p)];
            for (vi, bi) in vec.iter_mut().zip(&basis[j]) {
                *vi += c * bi;
            }
        }
        let res = tail * u[(m - 1, p)].norm() / theta.norm();
        pairs.push(RitzPair { lambda, vector: vec, arnoldi_residual: res });
    }
    Ok(pairs)
}

fn constraint_projection_residual(rows: &[SparseRow], r: &mut [C64]) {
    // r <- r - sum_i <c_i, r> c_i  (rows are orthonormal)
    for row in rows {
        let mut c = C64::ZERO;
        for &(dof, v) in row {
            c += v.conj() * r[dof];
        }
        if c != C64::ZERO {
            for &(dof, v) in row {
                r[dof] -= c * v;
            }
        }
    }
}

fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Relative residual of (lambda, h) against the full constrained pencil,
/// with the multiplier chosen optimally.
fn pencil_residual(system: &AssembledSystem, lambda: C64, hvec: &[C64]) -> f64 {
    let n = system.n_dofs;
    let mut kh = vec![C64::ZERO; n];
    let mut mh = vec![C64::ZERO; n];
    spmv(&system.k, hvec, &mut kh);
    spmv(&system.mm, hvec, &mut mh);
    let nk = vec_norm(&kh);
    let nm = vec_norm(&mh) * lambda.norm();
    let mut r: Vec<C64> = kh.iter().zip(&mh).map(|(a, b)| a - lambda * b).collect();
    constraint_projection_residual(&system.constraints, &mut r);
    vec_norm(&r) / (nk + nm).max(1e-300)
}

fn constraint_violation(system: &AssembledSystem, hvec: &[C64]) -> f64 {
    let mut s = 0.0_f64;
    for row in &system.constraints {
        let mut c = C64::ZERO;
        for &(dof, v) in row {
            c += v * hvec[dof];
        }
        s += c.norm_sqr();
    }
    s.sqrt() / vec_norm(hvec).max(1e-300)
}

/// Crude eigenvalue-scale estimate used to place a shift when none given.
fn lambda_scale(system: &AssembledSystem) -> f64 {
    let n = system.n_dofs;
    let v = seeded_vector(n, 3);
    let mut kv = vec![C64::ZERO; n];
    let mut mv = vec![C64::ZERO; n];
    spmv(&system.k, &v, &mut kv);
    spmv(&system.mm, &v, &mut mv);
    let num = dot_conj(&v, &kv).re.abs();
    let den = dot_conj(&v, &mv).re.abs().max(1e-300);
    (num / den).max(1e-300)
}

/// Solves for the `n_modes` eigenpairs nearest the shift frequency. Zero or
/// near-zero eigenvalues (below (2 pi / c)^2, i.e. under 1 Hz) are gauge
/// artifacts and are discarded.
pub fn solve_modes(
    system: &AssembledSystem,
    settings: &SolverSettings,
) -> Result<Vec<ModeSolution>> {
    if settings.shift_frequency < 0.0 {
        return Err(Error::Solve("shift frequency must be nonnegative".into()));
    }
    let sigma = if settings.shift_frequency > 0.0 {
        C64::from((CBAR * settings.shift_frequency).powi(2))
    } else {
        // shift slightly below the spectrum so the factorization stays away
        // from the (near-singular) origin
        C64::from(-1e-2 * lambda_scale(system))
    };
    let solver = SaddleSolver::build(system, sigma)?;
    let lambda_min = (CBAR * 1.0).powi(2);
    let mut steps = (2 * settings.n_modes + 24).max(40);
    for attempt in 0..3 {
        let pairs = arnoldi(&solver, &system.mm, sigma, sigma.norm().max(1e-300), steps)?;
        let dbg = std::env::var("WGFEM_DEBUG_EIG").is_ok();
        let mut modes = Vec::new();
        for p in pairs {
            if dbg {
                eprintln!(
                    "ritz lambda={:.6e}+{:.2e}i arn_res={:.2e}",
                    p.lambda.re, p.lambda.im, p.arnoldi_residual
                );
            }
            if p.arnoldi_residual > 1e-9 {
                continue;
            }
            if p.lambda.re < lambda_min || p.lambda.norm() < lambda_min {
                continue;
            }
            let mut h = p.vector;
            // unit mass norm
            let mut mh = vec![C64::ZERO; h.len()];
            spmv(&system.mm, &h, &mut mh);
            let nrm = dot_conj(&h, &mh).re.max(0.0).sqrt();
            if !(nrm > 0.0) {
                continue;
            }
            for v in h.iter_mut() {
                *v /= nrm;
            }
            let mut lambda = p.lambda;
            if !system.complex_constraints {
                // real pencil: strip roundoff imaginary parts and fix the
                // arbitrary complex phase
                lambda = C64::from(lambda.re);
                let phase = h
                    .iter()
                    .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))
                    .map(|v| v / v.norm())
                    .unwrap_or(C64::ONE);
                for v in h.iter_mut() {
                    *v = C64::from((*v * phase.conj()).re);
                }
            }
            let pr = pencil_residual(system, lambda, &h);
            let cv = constraint_violation(system, &h);
            if dbg {
                eprintln!("  pencil_res={pr:.2e} constraint_viol={cv:.2e}");
            }
            if pr > 1e-8 {
                continue;
            }
            if cv > 1e-8 {
                continue;
            }
            let f = lambda.sqrt() / CBAR;
            let f = if f.im < 0.0 { -f } else { f };
            modes.push(ModeSolution {
                frequency: f,
                eigenvalue: lambda,
                coefficients: h,
                m: system.m,
                divergence_rel: f64::NAN,
            });
        }
        modes.sort_by(|a, b| {
            let da = (a.frequency.re - settings.shift_frequency).abs();
            let db = (b.frequency.re - settings.shift_frequency).abs();
            da.total_cmp(&db)
        });
        modes.dedup_by(|a, b| {
            (a.frequency - b.frequency).norm() < 1e-9 * b.frequency.norm().max(1.0)
        });
        if modes.len() >= settings.n_modes || attempt == 2 {
            modes.truncate(settings.n_modes);
            if modes.is_empty() {
                return Err(Error::Solve(
                    "no converged eigenpairs near the shift; enlarge the search or check the shift"
                        .into(),
                ));
            }
            return Ok(modes);
        }
        steps *= 2;
    }
    unreachable!()
}

/// Rotates the coefficient vectors of a near-degenerate eigenvalue cluster
/// so that the divergence quadratic form is diagonal over the cluster
/// subspace.
///
/// The penalty operator gives every spurious gradient mode an eigenvalue
/// alpha times a scalar-Laplacian eigenvalue; for simple geometries these
/// can coincide *exactly* with physical eigenvalues (an empty cylinder with
/// alpha = 1 puts a gradient partner right on top of every TE mode). The
/// eigensolver then returns arbitrary mixtures within the degenerate
/// subspace, and the per-mode divergence diagnostic is meaningless.
/// Diagonalizing div against the gradient-scaled field norm inside each
/// cluster recovers the clean physical/spurious split; well-separated modes
/// form singleton clusters and are untouched.
fn demix_degenerate(solutions: &mut [ModeSolution], mesh: &Mesh) {
    use crate::mesh::diagnostic_quadrature as quadrature;
    use crate::postprocess::sample_fields;

    let mut order: Vec<usize> = (0..solutions.len()).collect();
    order.sort_by(|&a, &b| solutions[a].eigenvalue.re.total_cmp(&solutions[b].eigenvalue.re));
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() {
            let la = solutions[order[j - 1]].eigenvalue.re;
            let lb = solutions[order[j]].eigenvalue.re;
            if solutions[order[j]].m == solutions[order[i]].m
                && (lb - la).abs() <= 1e-4 * lb.abs().max(la.abs())
            {
                j += 1;
            } else {
                break;
            }
        }
        let idx = &order[i..j];
        let k = idx.len();
        if k >= 2 {
            let m = solutions[idx[0]].m;
            let mf = m as f64;
            // Divergence Gram `d` and gradient-scaled norm Gram `b` over the
            // cluster members, matching the divergence_rel metric.
            let mut d = Mat::<C64>::zeros(k, k);
            let mut b = Mat::<C64>::zeros(k, k);
            for (ei, e) in mesh.elements.iter().enumerate() {
                for (rp, w) in quadrature(e.kind) {
                    let samples: Vec<_> = idx
                        .iter()
                        .map(|&s| sample_fields(mesh, ei, rp, &solutions[s].coefficients))
                        .collect();
                    let mp = mesh.map_point(e, rp);
                    let dv = w * mp.det_j * samples[0].x;
                    let divs: Vec<C64> = samples.iter().map(|s| s.div_h(m)).collect();
                    for a in 0..k {
                        for c in 0..k {
                            d[(a, c)] += divs[a].conj() * divs[c] * dv;
                            let (sa, sc) = (&samples[a], &samples[c]);
                            let grads = sa.hrad_x.conj() * sc.hrad_x
                                + sa.hrad_y.conj() * sc.hrad_y
                                + sa.hazi_x.conj() * sc.hazi_x
                                + sa.hazi_y.conj() * sc.hazi_y
                                + sa.haxi_x.conj() * sc.haxi_x
                                + sa.haxi_y.conj() * sc.haxi_y;
                            let vals = sa.hrad.conj() * sc.hrad
                                + sa.hazi.conj() * sc.hazi
                                + sa.haxi.conj() * sc.haxi;
                            b[(a, c)] +=
                                (grads + vals * ((mf * mf + 1.0) / (samples[0].x * samples[0].x)))
                                    * dv;
                        }
                    }
                }
            }
            // Generalized Hermitian eigenproblem d z = theta b z via the
            // inverse square root of b.
            let be = b.self_adjoint_eigen(faer::Side::Lower).expect("cluster norm eigen");
            let bs = be.S().column_vector().to_owned();
            let smax = (0..k).map(|r| bs[r].re).fold(0.0_f64, f64::max);
            let mut w = be.U().to_owned();
            for c in 0..k {
                let s = bs[c].re.max(1e-14 * smax);
                let inv = C64::from(1.0 / s.sqrt());
                for r in 0..k {
                    w[(r, c)] *= inv;
                }
            }
            let mut a = w.adjoint() * &d * &w;
            for r in 0..k {
                for c in 0..r {
                    let h = 0.5 * (a[(r, c)] + a[(c, r)].conj());
                    a[(r, c)] = h;
                    a[(c, r)] = h.conj();
                }
            }
            let ae = a.self_adjoint_eigen(faer::Side::Lower).expect("cluster div eigen");
            let rot = &w * ae.U();
            let n = solutions[idx[0]].coefficients.len();
            let mut fresh = vec![vec![C64::ZERO; n]; k];
            for (r, f) in fresh.iter_mut().enumerate() {
                for (ii, &s) in idx.iter().enumerate() {
                    let c = rot[(ii, r)];
                    for (fv, &sv) in f.iter_mut().zip(&solutions[s].coefficients) {
                        *fv += sv * c;
                    }
                }
                let nrm = f.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                if nrm > 0.0 {
                    for v in f.iter_mut() {
                        *v /= nrm;
                    }
                }
            }
            for (f, &s) in fresh.into_iter().zip(idx) {
                solutions[s].coefficients = f;
            }
        }
        i = j;
    }
}

/// Computes the divergence diagnostic for each mode and splits the list
/// into (physical, spurious) by the threshold.
///
/// Near-degenerate eigenvalue clusters are first rotated so the divergence
/// form is diagonal over each cluster; see `demix_degenerate`.
pub fn filter_spurious(
    mut solutions: Vec<ModeSolution>,
    mesh: &Mesh,
    threshold: f64,
) -> (Vec<ModeSolution>, Vec<ModeSolution>) {
    demix_degenerate(&mut solutions, mesh);
    let mut physical = Vec::new();
    let mut spurious = Vec::new();
    for mut s in solutions {
        s.divergence_rel = crate::postprocess::divergence_rel(mesh, s.m, &s.coefficients);
        if s.divergence_rel <= threshold {
            physical.push(s);
        } else {
            spurious.push(s);
        }
    }
    (physical, spurious)
}

/// Self-consistent radiation solve: the match frequency of every
/// radiation-matched boundary is iterated to the real part of the resulting
/// eigenfrequency.
pub fn solve_radiation(
    geometry: &ResonatorGeometry,
    mesh: &Mesh,
    settings: &SolverSettings,
    initial_mf: f64,
    max_iters: usize,
    tol: f64,
) -> Result<ModeSolution> {
    if !(initial_mf > 0.0) {
        return Err(Error::Solve("initial match frequency must be positive".into()));
    }
    if !geometry
        .boundaries
        .iter()
        .any(|b| matches!(b.condition, BoundaryCondition::RadiationMatch { .. }))
    {
        return Err(Error::Solve("no radiation-matched boundary in this geometry".into()));
    }
    let max_iters = if max_iters == 0 { 8 } else { max_iters };
    let tol = if tol > 0.0 { tol } else { 1e-6 };
    let mut mf = initial_mf;
    let mut track: Option<f64> = None;
    let mut last: Option<ModeSolution> = None;
    for _ in 0..max_iters {
        let mut geo = geometry.clone();
        for b in geo.boundaries.iter_mut() {
            if let BoundaryCondition::RadiationMatch { match_frequency, .. } = &mut b.condition {
                *match_frequency = mf;
            }
        }
        let system = crate::assembly::assemble_system(mesh, &geo, settings.m, settings.alpha)?;
        let solved = solve_modes(&system, settings)?;
        let target = track.unwrap_or(if settings.shift_frequency > 0.0 {
            settings.shift_frequency
        } else {
            mf
        });
        let best = solved
            .into_iter()
            .min_by(|a, b| {
                (a.frequency.re - target).abs().total_cmp(&(b.frequency.re - target).abs())
            })
            .ok_or_else(|| Error::Solve("radiation solve returned no modes".into()))?;
        let new_mf = best.frequency.re;
        let rel = (new_mf - mf).abs() / mf;
        track = Some(new_mf);
        last = Some(best);
        mf = new_mf;
        if rel < tol {
            return Ok(last.unwrap());
        }
    }
    let l = last.unwrap();
    Err(Error::Solve(format!(
        "radiation fixed point did not converge: last iterates {:.9e} and {:.9e} Hz",
        mf,
        l.frequency.re
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_system;
    use crate::geometry::{make_cylindrical_cavity, TangentToggle};
    use crate::mesh::map_mesh;
    use crate::oracle::cylinder_modes;
    use approx::assert_relative_eq;

    fn solve_cavity(
        radius: f64,
        height: f64,
        eps: f64,
        n: usize,
        m: u32,
        modes: usize,
        shift: f64,
    ) -> Vec<ModeSolution> {
        let mut geo = make_cylindrical_cavity(radius, height, eps).unwrap();
        geo.regions[0].edge_counts = [n, n, n, n];
        let mesh = map_mesh(&geo).unwrap();
        let system = assemble_system(&mesh, &geo, m, 1.0).unwrap();
        let settings = SolverSettings { m, n_modes: modes, shift_frequency: shift, alpha: 1.0 };
        let sols = solve_modes(&system, &settings).unwrap();
        let (physical, _) = filter_spurious(sols, &mesh, 1e-3);
        physical
    }

    #[test]
    fn tm010_matches_oracle() {
        let oracle = cylinder_modes(1.0, 1.0, 1.0, 0, 1).unwrap()[0].frequency;
        let modes = solve_cavity(1.0, 1.0, 1.0, 8, 0, 2, oracle);
        let best = modes
            .iter()
            .min_by(|a, b| {
                (a.frequency.re - oracle).abs().total_cmp(&(b.frequency.re - oracle).abs())
            })
            .unwrap();
        assert_relative_eq!(best.frequency.re, oracle, max_relative = 1e-3);
        assert_eq!(best.frequency.im, 0.0);
    }

    #[test]
    fn te111_matches_oracle() {
        let oracle = cylinder_modes(1.0, 1.0, 1.0, 1, 1).unwrap()[0].frequency;
        let modes = solve_cavity(1.0, 1.0, 1.0, 8, 1, 2, oracle);
        let best = &modes[0];
        assert_relative_eq!(best.frequency.re, oracle, max_relative = 1e-3);
    }

    #[test]
    fn dielectric_fill_scales_frequencies() {
        let f_vac = solve_cavity(1.0, 1.0, 1.0, 6, 0, 1, 1.147e8)[0].frequency.re;
        let f_eps4 = solve_cavity(1.0, 1.0, 4.0, 6, 0, 1, 1.147e8 / 2.0)[0].frequency.re;
        assert_relative_eq!(f_eps4, 0.5 * f_vac, max_relative = 1e-9);
    }

    #[test]
    fn length_scaling_inverts_frequencies() {
        let f1 = solve_cavity(1.0, 1.0, 1.0, 6, 0, 1, 1.147e8)[0].frequency.re;
        let f2 = solve_cavity(2.0, 2.0, 1.0, 6, 0, 1, 1.147e8 / 2.0)[0].frequency.re;
        assert_relative_eq!(f2, 0.5 * f1, max_relative = 1e-10);
    }

    #[test]
    fn shift_invariance() {
        let oracle = cylinder_modes(1.0, 1.0, 1.0, 0, 1).unwrap()[0].frequency;
        let lo = solve_cavity(1.0, 1.0, 1.0, 6, 0, 1, 0.9 * oracle)[0].frequency.re;
        let hi = solve_cavity(1.0, 1.0, 1.0, 6, 0, 1, 1.1 * oracle)[0].frequency.re;
        assert_relative_eq!(lo, hi, max_relative = 1e-9);
    }

    #[test]
    fn modes_are_mass_orthogonal() {
        let modes = solve_cavity(1.0, 1.0, 1.0, 8, 0, 4, 1.5e8);
        let mut geo = make_cylindrical_cavity(1.0, 1.0, 1.0).unwrap();
        geo.regions[0].edge_counts = [8, 8, 8, 8];
        let mesh = map_mesh(&geo).unwrap();
        let mm = crate::assembly::assemble_mass(&mesh);
        for i in 0..modes.len() {
            for j in 0..modes.len() {
                if (modes[i].frequency - modes[j].frequency).norm() < 1.0 {
                    continue;
                }
                let mut mh = vec![C64::ZERO; modes[j].coefficients.len()];
                spmv(&mm, &modes[j].coefficients, &mut mh);
                let d = dot_conj(&modes[i].coefficients, &mh);
                assert!(d.norm() < 1e-8, "modes {i},{j} overlap {d}");
            }
        }
    }

    #[test]
    fn threshold_infinity_flags_nothing() {
        let mut geo = make_cylindrical_cavity(1.0, 1.0, 1.0).unwrap();
        geo.regions[0].edge_counts = [6, 6, 6, 6];
        let mesh = map_mesh(&geo).unwrap();
        let system = assemble_system(&mesh, &geo, 0, 1.0).unwrap();
        let settings = SolverSettings { m: 0, n_modes: 3, shift_frequency: 1.5e8, alpha: 1.0 };
        let sols = solve_modes(&system, &settings).unwrap();
        let n = sols.len();
        let (physical, spurious) = filter_spurious(sols, &mesh, f64::INFINITY);
        assert_eq!(physical.len(), n);
        assert!(spurious.is_empty());
    }

    #[test]
    fn radiation_match_at_zero_mix_is_closed() {
        // mix angle 0 with the magnetic tangent toggle is electric-wall
        // content: the eigenfrequency must stay real and match the closed
        // cavity
        let oracle = cylinder_modes(1.0, 1.0, 1.0, 0, 1).unwrap()[0].frequency;
        let mut geo = make_cylindrical_cavity(1.0, 1.0, 1.0).unwrap();
        geo.regions[0].edge_counts = [6, 6, 6, 6];
        geo.boundaries[1].condition = BoundaryCondition::RadiationMatch {
            mix_angle: 0.0,
            tangent_toggle: TangentToggle::Magnetic,
            match_frequency: oracle,
        };
        let mesh = map_mesh(&geo).unwrap();
        let settings = SolverSettings { m: 0, n_modes: 1, shift_frequency: oracle, alpha: 1.0 };
        let mode = solve_radiation(&geo, &mesh, &settings, oracle * 1.05, 8, 1e-6).unwrap();
        assert_relative_eq!(mode.frequency.re, oracle, max_relative = 1e-3);
        assert!(mode.frequency.im.abs() < 1e-6 * mode.frequency.re);
        assert!(mode.q_inf().is_infinite());
    }
}
