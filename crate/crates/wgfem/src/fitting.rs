//! Mode identification and least-squares permittivity fitting.
//!
//! A sweep over azimuthal orders produces a catalog of simulated modes with
//! filling factors (the filling factors quantify each frequency's
//! sensitivity to the dielectric constants). Measured resonances are tied to
//! catalog entries by label, and a damped Gauss-Newton loop adjusts
//! (eps_perp, eps_para) of one material to minimize the summed squared
//! frequency residuals.

use std::collections::BTreeMap;

use crate::assembly::assemble_system;
use crate::eigensolve::{filter_spurious, solve_modes};
use crate::geometry::{ResonatorGeometry, SolverSettings};
use crate::mesh::Mesh;
use crate::{Error, Result};

/// One experimentally measured resonance. Width, turnover temperature and
/// Kramers splitting are opaque metadata: carried through, never computed.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredResonance {
    pub label: String,
    pub frequency: f64,
    pub width_hz: Option<f64>,
    pub turnover_k: Option<f64>,
    pub kramers_split_hz: Option<f64>,
}

/// Map from measured-resonance label to (azimuthal order M, index into the
/// ascending-frequency list of simulated modes at that M).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Identification {
    pub entries: BTreeMap<String, (u32, usize)>,
    pub locked: bool,
}

impl Identification {
    /// The mapping must be injective over simulated modes.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (label, pair) in &self.entries {
            if !seen.insert(*pair) {
                return Err(Error::Fit(format!(
                    "identification is not injective: (M={}, index={}) assigned twice, second time to '{}'",
                    pair.0, pair.1, label
                )));
            }
        }
        Ok(())
    }
}

/// One row of a mode-sweep catalog.
#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub m: u32,
    pub mode_index: usize,
    pub frequency: f64,
    pub divergence_rel: f64,
    /// ((material, direction), fraction) pairs, same convention as
    /// `postprocess::filling_factors`.
    pub filling: Vec<((String, String), f64)>,
}

/// Ambiguity report entry from `suggest_identification`: a measured line
/// with several simulated candidates inside the gap.
#[derive(Debug, Clone)]
pub struct Ambiguity {
    pub label: String,
    /// (M, mode_index, frequency) of every candidate within the gap.
    pub candidates: Vec<(u32, usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct FitStep {
    pub eps_perp: f64,
    pub eps_para: f64,
    pub chi2: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub eps_perp: f64,
    pub eps_para: f64,
    /// (label, simulated minus measured frequency in MHz) at the fitted
    /// permittivities.
    pub residuals_mhz: Vec<(String, f64)>,
    pub chi2: f64,
    pub trace: Vec<FitStep>,
    pub iterations: usize,
}

/// Solves the lowest `n_modes` physical modes for each azimuthal order in
/// `m_range` and returns the combined catalog, sorted by frequency within
/// each M.
pub fn sweep_modes(
    geometry: &ResonatorGeometry,
    mesh: &Mesh,
    m_range: &[u32],
    n_modes: usize,
    shift_frequency: f64,
) -> Result<Vec<CatalogEntry>> {
    if m_range.is_empty() {
        return Err(Error::Fit("empty azimuthal-order range for sweep".into()));
    }
    if n_modes == 0 {
        return Err(Error::Fit("sweep requested zero modes".into()));
    }
    let mut catalog = Vec::new();
    for &m in m_range {
        let rows = sweep_single_m(geometry, mesh, m, n_modes, shift_frequency)
            .map_err(|e| Error::Fit(format!("sweep at M={m} failed: {e}")))?;
        catalog.extend(rows);
    }
    Ok(catalog)
}

fn sweep_single_m(
    geometry: &ResonatorGeometry,
    mesh: &Mesh,
    m: u32,
    n_modes: usize,
    shift_frequency: f64,
) -> Result<Vec<CatalogEntry>> {
    let system = assemble_system(mesh, geometry, m, 1.0)?;
    // over-solve so modes lost to the spurious filter do not shift indices
    let settings = SolverSettings {
        m,
        n_modes: n_modes + 4,
        shift_frequency,
        alpha: 1.0,
    };
    let solved = solve_modes(&system, &settings)?;
    let (mut physical, _) = filter_spurious(solved, mesh, 1e-3);
    physical.sort_by(|a, b| a.frequency.re.total_cmp(&b.frequency.re));
    physical.truncate(n_modes);
    let mut rows = Vec::with_capacity(physical.len());
    for (idx, mode) in physical.iter().enumerate() {
        let filling = crate::postprocess::filling_factors(mode, mesh, geometry);
        rows.push(CatalogEntry {
            m,
            mode_index: idx,
            frequency: mode.frequency.re,
            divergence_rel: mode.divergence_rel,
            filling: filling.into_iter().collect(),
        });
    }
    Ok(rows)
}

/// Greedy nearest-frequency injective assignment of measured lines to
/// catalog modes, within `max_gap_hz`. Lines with two or more candidates
/// inside the gap are additionally reported as ambiguous; unassignable
/// lines are simply absent from the result.
pub fn suggest_identification(
    catalog: &[CatalogEntry],
    measured: &[MeasuredResonance],
    max_gap_hz: f64,
) -> Result<(Identification, Vec<Ambiguity>)> {
    if catalog.is_empty() {
        return Err(Error::Fit("empty catalog for identification".into()));
    }
    let mut ambiguities = Vec::new();
    for r in measured {
        let candidates: Vec<_> = catalog
            .iter()
            .filter(|c| (c.frequency - r.frequency).abs() <= max_gap_hz)
            .map(|c| (c.m, c.mode_index, c.frequency))
            .collect();
        if candidates.len() >= 2 {
            ambiguities.push(Ambiguity { label: r.label.clone(), candidates });
        }
    }
    // global greedy: repeatedly take the closest remaining (line, mode) pair
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, r) in measured.iter().enumerate() {
        for (j, c) in catalog.iter().enumerate() {
            let gap = (c.frequency - r.frequency).abs();
            if gap <= max_gap_hz {
                pairs.push((gap, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut line_used = vec![false; measured.len()];
    let mut mode_used = vec![false; catalog.len()];
    let mut id = Identification::default();
    for (_, i, j) in pairs {
        if line_used[i] || mode_used[j] {
            continue;
        }
        line_used[i] = true;
        mode_used[j] = true;
        id.entries.insert(
            measured[i].label.clone(),
            (catalog[j].m, catalog[j].mode_index),
        );
    }
    Ok((id, ambiguities))
}

// ---------------------------------------------------------------------------
// permittivity fitting
// ---------------------------------------------------------------------------

struct Forward<'a> {
    geometry: &'a ResonatorGeometry,
    mesh: &'a Mesh,
    material: usize,
    /// per azimuthal order: how many ascending modes to solve and which
    /// (label, index) pairs to read off
    groups: Vec<(u32, usize, Vec<(String, usize)>)>,
}

impl<'a> Forward<'a> {
    fn new(
        geometry: &'a ResonatorGeometry,
        mesh: &'a Mesh,
        material: &str,
        identification: &Identification,
    ) -> Result<Self> {
        let material_idx = geometry
            .materials
            .iter()
            .position(|mat| mat.name == material)
            .ok_or_else(|| Error::Fit(format!("unknown material '{material}' in fit")))?;
        let mut by_m: BTreeMap<u32, Vec<(String, usize)>> = BTreeMap::new();
        for (label, &(m, idx)) in &identification.entries {
            by_m.entry(m).or_default().push((label.clone(), idx));
        }
        let groups = by_m
            .into_iter()
            .map(|(m, labels)| {
                let n = labels.iter().map(|&(_, i)| i).max().unwrap() + 1;
                (m, n, labels)
            })
            .collect();
        Ok(Forward { geometry, mesh, material: material_idx, groups })
    }

    /// Simulated frequency per label at the given permittivities. When a
    /// previous iterate is supplied, modes are tracked by nearest frequency
    /// to it instead of by index, which keeps the identification stable
    /// across eigenvalue-ordering swaps.
    fn evaluate(
        &self,
        eps: (f64, f64),
        previous: Option<&BTreeMap<String, f64>>,
    ) -> Result<BTreeMap<String, f64>> {
        let mut geo = self.geometry.clone();
        geo.materials[self.material].eps_perp = eps.0;
        geo.materials[self.material].eps_para = eps.1;
        let mut out = BTreeMap::new();
        for (m, n, labels) in &self.groups {
            let rows = sweep_single_m(&geo, self.mesh, *m, *n, 0.0)
                .map_err(|e| Error::Fit(format!("forward solve at M={m} failed: {e}")))?;
            for (label, idx) in labels {
                let f = match previous.and_then(|p| p.get(label)) {
                    Some(&fp) => {
                        rows.iter()
                            .map(|r| r.frequency)
                            .min_by(|a, b| (a - fp).abs().total_cmp(&(b - fp).abs()))
                            .ok_or_else(|| Error::Fit("forward solve returned no modes".into()))?
                    }
                    None => {
                        rows.get(*idx)
                            .ok_or_else(|| {
                                Error::Fit(format!(
                                    "identification '{label}' references mode index {idx} at M={m}, but only {} modes were found",
                                    rows.len()
                                ))
                            })?
                            .frequency
                    }
                };
                out.insert(label.clone(), f);
            }
        }
        Ok(out)
    }
}

fn chi2(sim: &BTreeMap<String, f64>, meas: &BTreeMap<String, f64>) -> f64 {
    meas.iter()
        .map(|(label, &fm)| {
            let d = sim[label] - fm;
            d * d
        })
        .sum()
}

/// Least-squares fit of one material's (eps_perp, eps_para) to the measured
/// frequencies under a locked identification.
///
/// Damped Gauss-Newton with a finite-difference Jacobian (absolute step
/// 1e-3 in each permittivity); convergence when the parameter step drops
/// below 1e-5 in both components, error after 30 outer iterations.
pub fn fit_permittivities(
    geometry: &ResonatorGeometry,
    mesh: &Mesh,
    material: &str,
    measured: &[MeasuredResonance],
    identification: &Identification,
    initial: (f64, f64),
) -> Result<FitResult> {
    if !identification.locked {
        return Err(Error::Fit("identification must be locked before fitting".into()));
    }
    identification.validate()?;
    if !(initial.0 > 1.0) || !(initial.1 > 1.0) {
        return Err(Error::Fit("initial permittivities must exceed 1".into()));
    }
    let mut meas_map = BTreeMap::new();
    for label in identification.entries.keys() {
        let r = measured
            .iter()
            .find(|r| &r.label == label)
            .ok_or_else(|| Error::Fit(format!("identified label '{label}' has no measured line")))?;
        meas_map.insert(label.clone(), r.frequency);
    }
    if meas_map.is_empty() {
        return Err(Error::Fit("no identified resonances to fit against".into()));
    }
    let forward = Forward::new(geometry, mesh, material, identification)?;
    const FD_STEP: f64 = 1e-3;
    const STEP_TOL: f64 = 1e-5;
    const MAX_ITERS: usize = 30;

    let mut eps = initial;
    let mut sim = forward.evaluate(eps, None)?;
    let mut cur_chi2 = chi2(&sim, &meas_map);
    let mut damping = 1e-12_f64;
    let mut trace = vec![FitStep { eps_perp: eps.0, eps_para: eps.1, chi2: cur_chi2 }];
    let labels: Vec<String> = meas_map.keys().cloned().collect();

    for iter in 0..MAX_ITERS {
        // finite-difference Jacobian of the residual vector
        let sim_dp = forward.evaluate((eps.0 + FD_STEP, eps.1), Some(&sim))?;
        let sim_dl = forward.evaluate((eps.0, eps.1 + FD_STEP), Some(&sim))?;
        let mut jtj = [[0.0_f64; 2]; 2];
        let mut jtr = [0.0_f64; 2];
        for label in &labels {
            let r = sim[label] - meas_map[label];
            let j0 = (sim_dp[label] - sim[label]) / FD_STEP;
            let j1 = (sim_dl[label] - sim[label]) / FD_STEP;
            jtj[0][0] += j0 * j0;
            jtj[0][1] += j0 * j1;
            jtj[1][1] += j1 * j1;
            jtr[0] += j0 * r;
            jtr[1] += j1 * r;
        }
        jtj[1][0] = jtj[0][1];
        let mut accepted = false;
        let mut step = [0.0_f64; 2];
        for _try in 0..12 {
            let a00 = jtj[0][0] * (1.0 + damping);
            let a11 = jtj[1][1] * (1.0 + damping);
            let det = a00 * a11 - jtj[0][1] * jtj[1][0];
            if det.abs() < 1e-300 {
                return Err(Error::Fit(
                    "singular normal equations: the identified modes do not constrain both permittivities".into(),
                ));
            }
            step[0] = -(a11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
            step[1] = -(a00 * jtr[1] - jtj[1][0] * jtr[0]) / det;
            let trial = (eps.0 + step[0], eps.1 + step[1]);
            if !(trial.0 > 1.0) || !(trial.1 > 1.0) {
                damping = (damping * 10.0).max(1e-8);
                continue;
            }
            let trial_sim = forward.evaluate(trial, Some(&sim))?;
            let trial_chi2 = chi2(&trial_sim, &meas_map);
            if trial_chi2 <= cur_chi2 {
                eps = trial;
                sim = trial_sim;
                cur_chi2 = trial_chi2;
                damping = (damping / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            damping = (damping * 10.0).max(1e-8);
        }
        trace.push(FitStep { eps_perp: eps.0, eps_para: eps.1, chi2: cur_chi2 });
        let step_small = step[0].abs() < STEP_TOL && step[1].abs() < STEP_TOL;
        if step_small || (!accepted && cur_chi2 < 1.0) {
            let residuals_mhz = labels
                .iter()
                .map(|l| (l.clone(), (sim[l] - meas_map[l]) / 1e6))
                .collect();
            return Ok(FitResult {
                eps_perp: eps.0,
                eps_para: eps.1,
                residuals_mhz,
                chi2: cur_chi2,
                trace,
                iterations: iter + 1,
            });
        }
        if !accepted {
            return Err(Error::Fit(
                "no descent step found: chi-square landscape is not locally quadratic here".into(),
            ));
        }
    }
    Err(Error::Fit(format!(
        "permittivity fit did not converge within {MAX_ITERS} iterations"
    )))
}

// ---------------------------------------------------------------------------
// CSV interchange
// ---------------------------------------------------------------------------

fn parse_opt(field: Option<&str>, what: &str, line_no: usize) -> Result<Option<f64>> {
    match field.map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => s
            .parse::<f64>()
            .map(Some)
            .map_err(|_| Error::Parse(format!("line {line_no}: bad {what} '{s}'"))),
    }
}

/// Parses `label,freq_hz[,width_hz,turnover_k,kramers_hz]`; a header row
/// starting with `label` is skipped.
pub fn parse_measured_csv(text: &str) -> Result<Vec<MeasuredResonance>> {
    let mut out: Vec<MeasuredResonance> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let label = fields.next().unwrap().trim().to_string();
        if i == 0 && label == "label" {
            continue;
        }
        let freq = fields
            .next()
            .map(str::trim)
            .ok_or_else(|| Error::Parse(format!("line {line_no}: missing frequency")))?
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("line {line_no}: bad frequency")))?;
        if !(freq > 0.0) {
            return Err(Error::Parse(format!(
                "line {line_no}: frequency must be positive"
            )));
        }
        if out.iter().any(|r| r.label == label) {
            return Err(Error::Parse(format!(
                "line {line_no}: duplicate label '{label}'"
            )));
        }
        out.push(MeasuredResonance {
            label,
            frequency: freq,
            width_hz: parse_opt(fields.next(), "width", line_no)?,
            turnover_k: parse_opt(fields.next(), "turnover temperature", line_no)?,
            kramers_split_hz: parse_opt(fields.next(), "Kramers splitting", line_no)?,
        });
    }
    Ok(out)
}

/// Parses `label,M,mode_index`; a header row starting with `label` is
/// skipped. The returned identification is locked.
pub fn parse_identification_csv(text: &str) -> Result<Identification> {
    let mut id = Identification { entries: BTreeMap::new(), locked: true };
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 && fields[0] == "label" {
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::Parse(format!(
                "line {line_no}: expected label,M,mode_index"
            )));
        }
        let m = fields[1]
            .parse::<u32>()
            .map_err(|_| Error::Parse(format!("line {line_no}: bad azimuthal order")))?;
        let idx = fields[2]
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("line {line_no}: bad mode index")))?;
        if id.entries.insert(fields[0].to_string(), (m, idx)).is_some() {
            return Err(Error::Parse(format!(
                "line {line_no}: duplicate label '{}'",
                fields[0]
            )));
        }
    }
    id.validate()?;
    Ok(id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_cylindrical_cavity;
    use crate::mesh::map_mesh;
    use crate::oracle::cylinder_modes;
    use approx::assert_relative_eq;

    fn sapphire_cavity(n: usize, eps: (f64, f64)) -> (ResonatorGeometry, Mesh) {
        let mut geo = make_cylindrical_cavity(0.025, 0.025, 1.0).unwrap();
        geo.materials[0].name = "sapphire".into();
        geo.materials[0].eps_perp = eps.0;
        geo.materials[0].eps_para = eps.1;
        geo.regions[0].edge_counts = [n, n, n, n];
        let mesh = map_mesh(&geo).unwrap();
        (geo, mesh)
    }

    #[test]
    fn sweep_matches_cylinder_oracle() {
        let mut geo = make_cylindrical_cavity(1.0, 1.0, 1.0).unwrap();
        geo.regions[0].edge_counts = [8, 8, 8, 8];
        let mesh = map_mesh(&geo).unwrap();
        let catalog = sweep_modes(&geo, &mesh, &[0, 1], 3, 0.0).unwrap();
        assert_eq!(catalog.len(), 6);
        for m in [0u32, 1] {
            let rows: Vec<_> = catalog.iter().filter(|c| c.m == m).collect();
            let oracle = cylinder_modes(1.0, 1.0, 1.0, m, 3).unwrap();
            for (i, row) in rows.iter().enumerate() {
                assert_eq!(row.mode_index, i);
                assert_relative_eq!(row.frequency, oracle[i].frequency, max_relative = 2e-3);
                if i > 0 {
                    assert!(row.frequency >= rows[i - 1].frequency);
                }
                let total: f64 = row.filling.iter().map(|&(_, f)| f).sum();
                assert_relative_eq!(total, 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn sweep_rejects_empty_range() {
        let geo = make_cylindrical_cavity(1.0, 1.0, 1.0).unwrap();
        let mesh = map_mesh(&geo).unwrap();
        assert!(sweep_modes(&geo, &mesh, &[], 3, 0.0).is_err());
    }

    #[test]
    fn identity_identification_and_ambiguity() {
        let catalog = vec![
            CatalogEntry { m: 0, mode_index: 0, frequency: 1.0e9, divergence_rel: 0.0, filling: vec![] },
            CatalogEntry { m: 1, mode_index: 0, frequency: 2.0e9, divergence_rel: 0.0, filling: vec![] },
        ];
        let measured = vec![
            MeasuredResonance { label: "a".into(), frequency: 1.0e9, width_hz: None, turnover_k: None, kramers_split_hz: None },
            MeasuredResonance { label: "b".into(), frequency: 2.0e9, width_hz: None, turnover_k: None, kramers_split_hz: None },
        ];
        let (id, amb) = suggest_identification(&catalog, &measured, 1e6).unwrap();
        assert!(amb.is_empty());
        assert_eq!(id.entries["a"], (0, 0));
        assert_eq!(id.entries["b"], (1, 0));
    }

    #[test]
    fn near_degenerate_candidates_are_flagged() {
        let catalog = vec![
            CatalogEntry { m: 3, mode_index: 0, frequency: 5.0e9, divergence_rel: 0.0, filling: vec![] },
            CatalogEntry { m: 7, mode_index: 1, frequency: 5.000001e9, divergence_rel: 0.0, filling: vec![] },
        ];
        let measured = vec![MeasuredResonance {
            label: "x".into(),
            frequency: 5.0000004e9,
            width_hz: None,
            turnover_k: None,
            kramers_split_hz: None,
        }];
        let (_, amb) = suggest_identification(&catalog, &measured, 1e6).unwrap();
        assert_eq!(amb.len(), 1);
        assert_eq!(amb[0].label, "x");
        assert_eq!(amb[0].candidates.len(), 2);
    }

    #[test]
    fn measured_csv_round_trip() {
        let text = "label,freq_hz,width_hz,turnover_k,kramers_hz\nS2_9,9.204e9,300.0,,50.0\nS2_10,9.96e9\n";
        let rows = parse_measured_csv(text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].label, "S2_9");
        assert_eq!(rows[0].width_hz, Some(300.0));
        assert_eq!(rows[0].turnover_k, None);
        assert_eq!(rows[0].kramers_split_hz, Some(50.0));
        assert_eq!(rows[1].width_hz, None);
        assert!(parse_measured_csv("a,1e9\na,2e9\n").is_err());
        assert!(parse_measured_csv("a,-1e9\n").is_err());
    }

    #[test]
    fn identification_csv_checks_injectivity() {
        let id = parse_identification_csv("label,M,mode_index\na,6,0\nb,7,0\n").unwrap();
        assert!(id.locked);
        assert_eq!(id.entries["a"], (6, 0));
        assert!(parse_identification_csv("a,6,0\nb,6,0\n").is_err());
        assert!(parse_identification_csv("a,6\n").is_err());
    }

    #[test]
    fn jacobian_sign_and_filling_estimate() {
        let (geo, mesh) = sapphire_cavity(5, (9.30, 11.40));
        let mut id = Identification::default();
        id.entries.insert("m0".into(), (0, 0));
        let fwd = Forward::new(&geo, &mesh, "sapphire", &id).unwrap();
        let base = fwd.evaluate((9.30, 11.40), None).unwrap();
        let f0 = base["m0"];
        let dp = fwd.evaluate((9.30 + 1e-3, 11.40), Some(&base)).unwrap()["m0"];
        let dl = fwd.evaluate((9.30, 11.40 + 1e-3), Some(&base)).unwrap()["m0"];
        let j_perp = (dp - f0) / 1e-3;
        let j_para = (dl - f0) / 1e-3;
        // frequency falls as permittivity rises, for whichever polarization
        // carries the mode's electric energy
        let catalog = sweep_single_m(&geo, &mesh, 0, 1, 0.0).unwrap();
        let mut f_perp = 0.0;
        let mut f_para = 0.0;
        for ((_, dir), frac) in &catalog[0].filling {
            if dir == "axial" {
                f_para += frac;
            } else {
                f_perp += frac;
            }
        }
        let est_perp = -(f0 / 2.0) * f_perp / 9.30;
        let est_para = -(f0 / 2.0) * f_para / 11.40;
        if f_perp > 1e-3 {
            assert!(j_perp < 0.0);
            assert_relative_eq!(j_perp, est_perp, max_relative = 0.2);
        }
        if f_para > 1e-3 {
            assert!(j_para < 0.0);
            assert_relative_eq!(j_para, est_para, max_relative = 0.2);
        }
    }

    #[test]
    fn identity_fit_is_a_fixed_point() {
        let (geo, mesh) = sapphire_cavity(4, (9.30, 11.40));
        let mut id = Identification { entries: BTreeMap::new(), locked: true };
        id.entries.insert("m0_0".into(), (0, 0));
        id.entries.insert("m1_0".into(), (1, 0));
        let fwd = Forward::new(&geo, &mesh, "sapphire", &id).unwrap();
        let sim = fwd.evaluate((9.30, 11.40), None).unwrap();
        let measured: Vec<MeasuredResonance> = sim
            .iter()
            .map(|(l, &f)| MeasuredResonance {
                label: l.clone(),
                frequency: f,
                width_hz: None,
                turnover_k: None,
                kramers_split_hz: None,
            })
            .collect();
        let fit = fit_permittivities(&geo, &mesh, "sapphire", &measured, &id, (9.30, 11.40)).unwrap();
        assert_relative_eq!(fit.eps_perp, 9.30, epsilon = 1e-6);
        assert_relative_eq!(fit.eps_para, 11.40, epsilon = 1e-6);
        assert!(fit.chi2 < 1.0);
        // chi-square never increases along the trace
        for w in fit.trace.windows(2) {
            assert!(w[1].chi2 <= w[0].chi2 + 1e-9);
        }
    }

    #[test]
    fn synthetic_round_trip_recovers_planted_permittivities() {
        let (geo, mesh) = sapphire_cavity(4, (9.30, 11.40));
        let mut id = Identification { entries: BTreeMap::new(), locked: true };
        id.entries.insert("m0_0".into(), (0, 0));
        id.entries.insert("m0_1".into(), (0, 1));
        id.entries.insert("m1_0".into(), (1, 0));
        id.entries.insert("m1_1".into(), (1, 1));
        let fwd = Forward::new(&geo, &mesh, "sapphire", &id).unwrap();
        let sim = fwd.evaluate((9.30, 11.40), None).unwrap();
        let measured: Vec<MeasuredResonance> = sim
            .iter()
            .map(|(l, &f)| MeasuredResonance {
                label: l.clone(),
                frequency: f,
                width_hz: None,
                turnover_k: None,
                kramers_split_hz: None,
            })
            .collect();
        let start = (9.30 * 1.005, 11.40 * 0.995);
        let fit = fit_permittivities(&geo, &mesh, "sapphire", &measured, &id, start).unwrap();
        assert!((fit.eps_perp - 9.30).abs() < 1e-3, "eps_perp {}", fit.eps_perp);
        assert!((fit.eps_para - 11.40).abs() < 1e-3, "eps_para {}", fit.eps_para);
    }

    #[test]
    fn unlocked_identification_rejected() {
        let (geo, mesh) = sapphire_cavity(3, (9.3, 11.4));
        let id = Identification { entries: BTreeMap::new(), locked: false };
        assert!(fit_permittivities(&geo, &mesh, "sapphire", &[], &id, (9.3, 11.4)).is_err());
    }
}
