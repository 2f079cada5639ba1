//! Command-line front end for the wgfem whispering-gallery-mode solver.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 input error.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use wgfem::eigensolve::ModeSolution;
use wgfem::fitting;
use wgfem::geometry::{ResonatorGeometry, SolverSettings};
use wgfem::mesh::Mesh;
use wgfem::postprocess::{ModeReport, WallSpec};
use wgfem::{assembly, eigensolve, oracle};

#[derive(Parser)]
#[command(
    name = "wgfem",
    version,
    about = "Axisymmetric finite-element eigensolver for whispering-gallery modes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve eigenmodes of a geometry and write modes.csv
    Solve(SolveArgs),
    /// Solve and postprocess: mode volume, filling factors, Q factors
    Post(PostArgs),
    /// Catalog modes across a range of azimuthal orders
    Sweep(SweepArgs),
    /// Fit material permittivities to measured frequencies
    Fit(FitArgs),
    /// Analytic cylindrical-cavity frequencies (validation reference)
    Oracle(OracleArgs),
    /// Validate a geometry file and its mesh without solving
    MeshCheck(MeshCheckArgs),
}

#[derive(Args)]
struct CommonSolve {
    /// Geometry description (TOML)
    geometry: PathBuf,
    /// Azimuthal mode order M (overrides the geometry file)
    #[arg(long)]
    m: Option<u32>,
    /// Number of modes to solve (overrides the geometry file)
    #[arg(long)]
    modes: Option<usize>,
    /// Shift frequency in Hz; modes nearest this value are found (overrides
    /// the geometry file)
    #[arg(long)]
    shift: Option<f64>,
    /// Divergence penalty coefficient (overrides the geometry file)
    #[arg(long)]
    alpha: Option<f64>,
    /// External mesh file (line format); otherwise the geometry is mapped
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Spurious-mode divergence threshold
    #[arg(long, default_value_t = 1e-3)]
    div_threshold: f64,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonSolve,
    /// Self-consistent radiation solve (requires a radiation-matched
    /// boundary); iterates the match frequency to the eigenfrequency
    #[arg(long)]
    radiation: bool,
    /// Initial match frequency for --radiation [Hz]
    #[arg(long)]
    initial_mf: Option<f64>,
    /// Also report modes flagged as spurious
    #[arg(long)]
    keep_spurious: bool,
}

#[derive(Args)]
struct PostArgs {
    #[command(flatten)]
    common: CommonSolve,
    /// Wall surface resistance [ohm]
    #[arg(long)]
    rs: Option<f64>,
    /// Wall bulk conductivity [S/m] (alternative to --rs)
    #[arg(long)]
    sigma: Option<f64>,
    /// Halve the mode volume for a standing-wave doublet partner
    #[arg(long)]
    standing_wave: bool,
    /// Comma-separated material names restricting the mode-volume support
    #[arg(long)]
    support: Option<String>,
    /// Comma-separated field quantities to export as VTK
    #[arg(long)]
    export: Option<String>,
    /// Self-consistent radiation solve before postprocessing
    #[arg(long)]
    radiation: bool,
    /// Initial match frequency for --radiation [Hz]
    #[arg(long)]
    initial_mf: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Geometry description (TOML)
    geometry: PathBuf,
    /// Azimuthal orders, e.g. "0,1,2" or "3..=8"
    #[arg(long)]
    m_range: String,
    /// Modes per azimuthal order
    #[arg(long, default_value_t = 4)]
    modes: usize,
    /// Shift frequency in Hz
    #[arg(long, default_value_t = 0.0)]
    shift: f64,
    /// External mesh file
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Parallel workers (env WGFEM_WORKERS overrides the default)
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Geometry description (TOML)
    geometry: PathBuf,
    /// Measured resonances: label,freq_hz[,width_hz,turnover_k,kramers_hz]
    #[arg(long)]
    measured: PathBuf,
    /// Locked identification: label,M,mode_index
    #[arg(long)]
    identification: PathBuf,
    /// Material whose permittivities are adjusted
    #[arg(long)]
    material: String,
    /// Initial transverse permittivity
    #[arg(long)]
    eps_perp: f64,
    /// Initial axial permittivity
    #[arg(long)]
    eps_para: f64,
    /// External mesh file
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    /// Cavity radius [m]
    #[arg(long)]
    radius: f64,
    /// Cavity height [m]
    #[arg(long)]
    height: f64,
    /// Relative permittivity of the fill
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    /// Azimuthal mode order M
    #[arg(long, default_value_t = 0)]
    m: u32,
    /// Number of modes
    #[arg(long, default_value_t = 4)]
    modes: usize,
}

#[derive(Args)]
struct MeshCheckArgs {
    /// Geometry description (TOML)
    geometry: PathBuf,
    /// External mesh file
    #[arg(long)]
    mesh: Option<PathBuf>,
}

fn default_workers() -> usize {
    std::env::var("WGFEM_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                wgfem::Error::Solve(_) | wgfem::Error::Postprocess(_) | wgfem::Error::Fit(_) => 1,
                _ => 2,
            }
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> wgfem::Result<()> {
    match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Post(a) => cmd_post(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::MeshCheck(a) => cmd_mesh_check(a),
    }
}

fn read_text(path: &Path) -> wgfem::Result<String> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            wgfem::Error::Parse(format!("file not found: {}", path.display()))
        } else {
            wgfem::Error::Io(e)
        }
    })
}

fn load_problem(
    geometry_path: &Path,
    mesh_path: Option<&Path>,
) -> wgfem::Result<(ResonatorGeometry, SolverSettings, Mesh)> {
    let (geo, settings) = wgfem::parse_geometry(&read_text(geometry_path)?)?;
    let mesh = match mesh_path {
        Some(p) => wgfem::import_mesh(&read_text(p)?, &geo)?,
        None => wgfem::map_mesh(&geo)?,
    };
    Ok((geo, settings, mesh))
}

struct Manifest {
    command: String,
    inputs: Vec<PathBuf>,
    settings: serde_json::Value,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl Manifest {
    fn new(
        command: &str,
        inputs: Vec<PathBuf>,
        settings: serde_json::Value,
        started: Instant,
    ) -> Self {
        Manifest { command: command.into(), inputs, settings, outputs: Vec::new(), started }
    }

    fn write(mut self, out_dir: &Path) -> wgfem::Result<()> {
        let path = out_dir.join("manifest.json");
        let doc = serde_json::json!({
            "tool": "wgfem",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "inputs": self.inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "settings": self.settings,
            "outputs": self.outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "wall_clock_seconds": self.started.elapsed().as_secs_f64(),
        });
        self.outputs.push(path.clone());
        fs::write(&path, serde_json::to_string_pretty(&doc).unwrap() + "\n")?;
        Ok(())
    }
}

fn ensure_out_dir(dir: &Path) -> wgfem::Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

fn solve_common(
    common: &CommonSolve,
    radiation: bool,
    initial_mf: Option<f64>,
) -> wgfem::Result<(ResonatorGeometry, Mesh, SolverSettings, Vec<ModeSolution>, Vec<ModeSolution>)> {
    let (geo, file_settings, mesh) = load_problem(&common.geometry, common.mesh.as_deref())?;
    let settings = SolverSettings {
        m: common.m.unwrap_or(file_settings.m),
        n_modes: common.modes.unwrap_or(file_settings.n_modes),
        shift_frequency: common.shift.unwrap_or(file_settings.shift_frequency),
        alpha: common.alpha.unwrap_or(file_settings.alpha),
    };
    let (physical, spurious) = if radiation {
        let mf = initial_mf
            .or((settings.shift_frequency > 0.0).then_some(settings.shift_frequency))
            .ok_or_else(|| {
                wgfem::Error::Parse("--radiation needs --initial-mf or --shift".into())
            })?;
        let mode = eigensolve::solve_radiation(&geo, &mesh, &settings, mf, 12, 1e-7)?;
        eigensolve::filter_spurious(vec![mode], &mesh, common.div_threshold)
    } else {
        let system = assembly::assemble_system(&mesh, &geo, settings.m, settings.alpha)?;
        let solved = eigensolve::solve_modes(&system, &settings)?;
        eigensolve::filter_spurious(solved, &mesh, common.div_threshold)
    };
    Ok((geo, mesh, settings, physical, spurious))
}

fn settings_json(common: &CommonSolve, settings: &SolverSettings) -> serde_json::Value {
    serde_json::json!({
        "m": settings.m,
        "modes": settings.n_modes,
        "shift_hz": settings.shift_frequency,
        "alpha": settings.alpha,
        "div_threshold": common.div_threshold,
        "mesh": common.mesh.as_ref().map(|p| p.display().to_string()),
    })
}

fn cmd_solve(args: SolveArgs) -> wgfem::Result<()> {
    let c = &args.common;
    let t0 = Instant::now();
    ensure_out_dir(&c.out)?;
    let (_, _, settings, physical, spurious) = solve_common(c, args.radiation, args.initial_mf)?;
    let mut sj = settings_json(c, &settings);
    sj["radiation"] = serde_json::json!(args.radiation);
    sj["initial_mf_hz"] = serde_json::json!(args.initial_mf);
    sj["keep_spurious"] = serde_json::json!(args.keep_spurious);
    let mut manifest = Manifest::new("solve", vec![c.geometry.clone()], sj, t0);

    let mut csv = String::from("M,f_re_hz,f_im_hz,div_rel,spurious\n");
    for (flag, set) in [(0, &physical), (1, &spurious)] {
        if flag == 1 && !args.keep_spurious {
            continue;
        }
        for s in set.iter() {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                s.m,
                sig9(s.frequency.re),
                sig9(s.frequency.im),
                sig9(s.divergence_rel),
                flag
            ));
        }
    }
    let path = c.out.join("modes.csv");
    fs::write(&path, &csv)?;
    manifest.outputs.push(path);
    for s in &physical {
        let q = s.q_inf();
        println!(
            "M={} f = {} + {}i Hz  div_rel = {}  Q_inf = {}",
            s.m,
            sig9(s.frequency.re),
            sig9(s.frequency.im),
            sig9(s.divergence_rel),
            if q.is_infinite() { "inf".into() } else { sig9(q) }
        );
    }
    if !args.keep_spurious && !spurious.is_empty() {
        eprintln!("note: {} mode(s) flagged spurious and dropped", spurious.len());
    }
    manifest.write(&c.out)
}

fn support_regions(geo: &ResonatorGeometry, selector: Option<&str>) -> wgfem::Result<Vec<usize>> {
    match selector {
        None => Ok((0..geo.regions.len()).collect()),
        Some(list) => {
            let names: Vec<&str> = list.split(',').map(str::trim).collect();
            for n in &names {
                if !geo.materials.iter().any(|m| m.name == *n) {
                    return Err(wgfem::Error::Parse(format!("unknown material '{n}' in --support")));
                }
            }
            let regions: Vec<usize> = (0..geo.regions.len())
                .filter(|&r| names.contains(&geo.materials[geo.regions[r].material].name.as_str()))
                .collect();
            if regions.is_empty() {
                return Err(wgfem::Error::Parse("--support matches no region".into()));
            }
            Ok(regions)
        }
    }
}

fn cmd_post(args: PostArgs) -> wgfem::Result<()> {
    let c = &args.common;
    let t0 = Instant::now();
    ensure_out_dir(&c.out)?;
    if args.rs.is_some() && args.sigma.is_some() {
        return Err(wgfem::Error::Parse("give either --rs or --sigma, not both".into()));
    }
    let (geo, mesh, settings, physical, _) = solve_common(c, args.radiation, args.initial_mf)?;
    let mut sj = settings_json(c, &settings);
    sj["rs_ohm"] = serde_json::json!(args.rs);
    sj["sigma_s_per_m"] = serde_json::json!(args.sigma);
    sj["standing_wave"] = serde_json::json!(args.standing_wave);
    sj["support"] = serde_json::json!(args.support);
    sj["export"] = serde_json::json!(args.export);
    sj["radiation"] = serde_json::json!(args.radiation);
    sj["initial_mf_hz"] = serde_json::json!(args.initial_mf);
    let mut manifest = Manifest::new("post", vec![c.geometry.clone()], sj, t0);
    if physical.is_empty() {
        return Err(wgfem::Error::Postprocess("all modes were flagged spurious".into()));
    }
    let support = support_regions(&geo, args.support.as_deref())?;
    let spec = match (args.rs, args.sigma) {
        (Some(rs), _) => Some(WallSpec::SurfaceResistance(rs)),
        (_, Some(sg)) => Some(WallSpec::Conductivity(sg)),
        _ => None,
    };
    let export: Vec<String> = args
        .export
        .as_deref()
        .map(|s| s.split(',').map(|q| q.trim().to_string()).collect())
        .unwrap_or_default();

    let mut csv = String::new();
    for (i, mode) in physical.iter().enumerate() {
        let filling: Vec<_> = wgfem::filling_factors(mode, &mesh, &geo).into_iter().collect();
        let has_ew = mesh
            .boundary_edges
            .iter()
            .any(|b| matches!(b.condition, wgfem::BoundaryCondition::ElectricWall));
        let (lambda, q_wall) = match (spec, has_ew) {
            (Some(sp), true) => wgfem::wall_loss(mode, &mesh, &geo, sp)?,
            (None, true) => (wgfem::wall_loss(mode, &mesh, &geo, WallSpec::SurfaceResistance(1.0))?.0, f64::NAN),
            _ => (f64::NAN, f64::NAN),
        };
        let q_rad = if has_ew { wgfem::q_rad_lower(mode, &mesh)? } else { f64::NAN };
        let report = ModeReport {
            m: mode.m,
            f_re: mode.frequency.re,
            f_im: mode.frequency.im,
            div_rel: mode.divergence_rel,
            v_mode: wgfem::mode_volume(mode, &mesh, &geo, &support, args.standing_wave)?,
            lambda,
            q_wall,
            q_rad_lower: q_rad,
            filling,
        };
        if i == 0 {
            csv.push_str(&report.csv_header());
            csv.push('\n');
        }
        csv.push_str(&report.csv_row());
        csv.push('\n');
        for qty in &export {
            let path = c.out.join(format!("mode{}_M{}_{}.vtk", i, mode.m, qty));
            let mut buf = Vec::new();
            wgfem::export_fields(mode, &mesh, &geo, qty, &mut buf)?;
            fs::write(&path, buf)?;
            manifest.outputs.push(path);
        }
    }
    let path = c.out.join("report.csv");
    fs::write(&path, &csv)?;
    print!("{csv}");
    manifest.outputs.push(path);
    manifest.write(&c.out)
}

fn parse_m_range(text: &str) -> wgfem::Result<Vec<u32>> {
    let text = text.trim();
    let bad = || wgfem::Error::Parse(format!("cannot parse azimuthal-order range '{text}'"));
    if let Some((lo, hi)) = text.split_once("..=") {
        let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u32 = hi.trim().parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u32 = hi.trim().parse().map_err(|_| bad())?;
        if hi <= lo {
            return Err(bad());
        }
        return Ok((lo..hi).collect());
    }
    text.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

fn cmd_sweep(args: SweepArgs) -> wgfem::Result<()> {
    let t0 = Instant::now();
    ensure_out_dir(&args.out)?;
    let m_range = parse_m_range(&args.m_range)?;
    let settings = serde_json::json!({
        "m_range": m_range, "modes": args.modes, "shift_hz": args.shift,
        "workers": args.workers,
        "mesh": args.mesh.as_ref().map(|p| p.display().to_string()),
    });
    let mut manifest = Manifest::new("sweep", vec![args.geometry.clone()], settings, t0);
    let (geo, _, mesh) = load_problem(&args.geometry, args.mesh.as_deref())?;

    let workers = args.workers.max(1).min(m_range.len().max(1));
    let mut catalog = if workers <= 1 {
        fitting::sweep_modes(&geo, &mesh, &m_range, args.modes, args.shift)?
    } else {
        let chunks: Vec<Vec<u32>> = (0..workers)
            .map(|w| m_range.iter().copied().skip(w).step_by(workers).collect())
            .collect();
        let results: Vec<wgfem::Result<Vec<fitting::CatalogEntry>>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunks
                    .iter()
                    .filter(|ch| !ch.is_empty())
                    .map(|ch| {
                        let geo = &geo;
                        let mesh = &mesh;
                        scope.spawn(move || {
                            fitting::sweep_modes(geo, mesh, ch, args.modes, args.shift)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
        let mut all = Vec::new();
        for r in results {
            all.extend(r?);
        }
        all
    };
    // deterministic ordering independent of worker count
    catalog.sort_by(|a, b| (a.m, a.mode_index).cmp(&(b.m, b.mode_index)));

    let mut csv = String::new();
    for (i, row) in catalog.iter().enumerate() {
        if i == 0 {
            csv.push_str("M,mode_index,f_hz,div_rel");
            for ((mat, dir), _) in &row.filling {
                csv.push_str(&format!(",filling:{mat}:{dir}"));
            }
            csv.push('\n');
        }
        csv.push_str(&format!(
            "{},{},{},{}",
            row.m,
            row.mode_index,
            sig9(row.frequency),
            sig9(row.divergence_rel)
        ));
        for (_, v) in &row.filling {
            csv.push_str(&format!(",{}", sig9(*v)));
        }
        csv.push('\n');
    }
    let path = args.out.join("catalog.csv");
    fs::write(&path, &csv)?;
    print!("{csv}");
    manifest.outputs.push(path);
    manifest.write(&args.out)
}

fn cmd_fit(args: FitArgs) -> wgfem::Result<()> {
    let t0 = Instant::now();
    ensure_out_dir(&args.out)?;
    let settings = serde_json::json!({
        "material": args.material, "eps_perp_initial": args.eps_perp,
        "eps_para_initial": args.eps_para,
        "mesh": args.mesh.as_ref().map(|p| p.display().to_string()),
    });
    let mut manifest = Manifest::new(
        "fit",
        vec![args.geometry.clone(), args.measured.clone(), args.identification.clone()],
        settings,
        t0,
    );
    let (geo, _, mesh) = load_problem(&args.geometry, args.mesh.as_deref())?;
    let measured = fitting::parse_measured_csv(&read_text(&args.measured)?)?;
    if measured.is_empty() {
        return Err(wgfem::Error::Parse("measured CSV contains no resonances".into()));
    }
    let identification = fitting::parse_identification_csv(&read_text(&args.identification)?)?;
    let fit = fitting::fit_permittivities(
        &geo,
        &mesh,
        &args.material,
        &measured,
        &identification,
        (args.eps_perp, args.eps_para),
    )?;
    println!("fitted eps_perp = {}", sig9(fit.eps_perp));
    println!("fitted eps_para = {}", sig9(fit.eps_para));
    println!("chi2 = {} Hz^2 after {} iteration(s)", sig9(fit.chi2), fit.iterations);
    println!("label,residual_mhz");
    let mut csv = String::from("label,residual_mhz\n");
    for (label, r) in &fit.residuals_mhz {
        println!("{label},{}", sig9(*r));
        csv.push_str(&format!("{label},{}\n", sig9(*r)));
    }
    let path = args.out.join("fit.csv");
    fs::write(&path, &csv)?;
    manifest.outputs.push(path);
    manifest.write(&args.out)
}

fn cmd_oracle(args: OracleArgs) -> wgfem::Result<()> {
    let modes = oracle::cylinder_modes(args.radius, args.height, args.eps, args.m, args.modes)?;
    println!("family,m,n,p,f_hz");
    for md in modes {
        let fam = match md.family {
            oracle::CavityFamily::Te => "TE",
            oracle::CavityFamily::Tm => "TM",
        };
        println!("{fam},{},{},{},{}", md.m, md.n, md.p, sig9(md.frequency));
    }
    Ok(())
}

fn cmd_mesh_check(args: MeshCheckArgs) -> wgfem::Result<()> {
    let (geo, _, mesh) = load_problem(&args.geometry, args.mesh.as_deref())?;
    mesh.validate(&geo)?;
    println!(
        "ok: {} nodes, {} elements, {} tagged boundary edges, {} region(s), {} material(s)",
        mesh.nodes.len(),
        mesh.elements.len(),
        mesh.boundary_edges.len(),
        geo.regions.len(),
        geo.materials.len()
    );
    Ok(())
}
