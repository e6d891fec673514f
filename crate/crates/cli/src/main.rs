use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qclab::dynamics::{self, PhaseState, Scheme, SimConfig};
use qclab::lab::{self, ConvergeConfig, RunRecord};
use qclab::qref::{self, GridHamiltonian, Laplacian};
use qclab::{espec, gibbs, rng, wkb, ModelSpec, ModelSystem};

#[derive(Parser)]
#[command(name = "qcmd", version, about = "Quantum-classical model lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect the registered potential families.
    Model {
        #[command(subcommand)]
        action: ModelAction,
    },
    /// Adiabatic spectrum, first gap and kappa on a uniform grid.
    Spectrum {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 256)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Integrate one trajectory.
    Run(RunArgs),
    /// WKB fields on the ground branch.
    Wkb {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "M")]
        mass: f64,
        #[arg(long)]
        k: i64,
        #[arg(long, default_value = "bo")]
        scheme: Scheme,
        #[arg(long, default_value_t = 256)]
        ngrid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid eigenpairs of V - (1/2M) d^2/dX^2 nearest a target energy.
    #[command(allow_negative_numbers = true)]
    Qref {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "M")]
        mass: f64,
        #[arg(long)]
        ngrid: usize,
        #[arg(long)]
        etarget: f64,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value = "spectral")]
        laplacian: Laplacian,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gibbs observable with the r-free value, kappa and gap diagnostics.
    Gibbs(GibbsArgs),
    /// Oscillatory-integral demos over a list of M.
    Oscint {
        #[arg(long)]
        demo: String,
        #[arg(long = "M", value_delimiter = ',', default_value = "100,1000,10000")]
        masses: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantum versus classical observables over an M sweep, with a rate fit.
    #[command(allow_negative_numbers = true)]
    Converge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "bo")]
        scheme: Scheme,
        #[arg(long = "M", value_delimiter = ',')]
        masses: Option<Vec<f64>>,
        /// Classical energy window; defaults to max lambda_0 + (max - min) / 4.
        #[arg(long)]
        energy: Option<f64>,
        #[arg(long)]
        x_surface: Option<f64>,
        #[arg(long, default_value_t = 4)]
        returns: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rate table (M, error, fit) from a run record.
    Plotdata {
        record: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rerun a record and compare every number bit for bit.
    Replay { record: PathBuf },
}

#[derive(Subcommand)]
enum ModelAction {
    List,
    Show {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    scheme: Scheme,
    #[arg(long = "M")]
    mass: Option<f64>,
    #[arg(long)]
    dt: f64,
    #[arg(long)]
    tfinal: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    x0: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    p0: f64,
    /// Add the first-order adiabatic admixture to the initial Ehrenfest amplitude.
    #[arg(long)]
    perp: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct GibbsArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "T")]
    temperature: Option<f64>,
    #[arg(long, default_value = "cos")]
    g: String,
    #[arg(long, default_value_t = 4096)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    ngrid: usize,
    #[arg(long, default_value_t = 0.0)]
    x_c: f64,
    /// Also run Langevin and Smoluchowski chains and compare.
    #[arg(long)]
    compare: bool,
    #[arg(long, default_value_t = 2000.0)]
    tfinal: f64,
    #[arg(long)]
    out: PathBuf,
}

fn load(path: &Path) -> Result<(ModelSpec, ModelSystem)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec = ModelSpec::from_json(&text)?;
    let model = ModelSystem::build(&spec)?;
    Ok((spec, model))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn f(x: f64) -> String {
    format!("{x:e}")
}

fn mass_of(model: &ModelSystem, given: Option<f64>) -> f64 {
    given.unwrap_or(model.masses[0])
}

fn spectrum(config: &Path, n: usize, out: &Path) -> Result<()> {
    let (_, model) = load(config)?;
    let grid: Vec<f64> = (0..n).map(|i| model.length * i as f64 / n as f64).collect();
    let field = espec::eigendecompose_field(&model, &grid)?;
    let d = model.levels;
    let c = if d >= 2 { espec::detect_gap(&field)? } else { f64::NAN };
    let mut w = writer(out)?;
    let mut header = vec!["X".to_string()];
    header.extend((0..d).map(|k| format!("lambda_{k}")));
    header.extend(["lambda_bar_1".into(), "c".into(), "kappa".into()]);
    w.write_record(&header)?;
    for (i, &x) in grid.iter().enumerate() {
        let mut row = vec![f(x)];
        row.extend(field.lambdas[i].iter().map(|v| f(*v)));
        let gap = if d >= 2 { field.gaps[i][1] } else { f64::NAN };
        // kappa of the segment from X_c = 0 to X
        let kappa = if d >= 2 && c > 0.0 {
            espec::kappa(&model, (0.0, x), 0.0, model.temperature, 2, 33).map_or(f64::NAN, |k| k.kappa)
        } else {
            f64::NAN
        };
        row.extend([f(gap), f(c), f(kappa)]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn run(a: &RunArgs) -> Result<()> {
    let (_, model) = load(&a.config)?;
    let mass = mass_of(&model, a.mass);
    let x0 = match a.x0 {
        Some(x) => x,
        None => lab::widest_gap_point(&model, 256)?,
    };
    let init = match a.scheme {
        Scheme::Ehrenfest => PhaseState::ehrenfest_start(&model, x0, a.p0, mass, a.perp)?,
        Scheme::Bo | Scheme::SymplecticEuler => PhaseState::bo_start(&model, x0, a.p0)?,
        Scheme::Langevin | Scheme::Smoluchowski => PhaseState::classical(x0, a.p0),
    };
    let mut cfg = SimConfig::new(a.scheme, a.tfinal, a.dt, mass);
    cfg.temperature = model.temperature;
    cfg.friction = model.friction;
    let mut r = rng::stream(a.seed, 0);
    let traj = dynamics::simulate(&model, &init, &cfg, Some(&mut r))?;
    let mut w = writer(&a.out)?;
    let mut header: Vec<String> = ["t", "X", "p", "H", "z"].iter().map(|s| s.to_string()).collect();
    let ehrenfest = a.scheme == Scheme::Ehrenfest;
    if ehrenfest {
        header.extend((0..model.levels).map(|k| format!("phi_re_{k}")));
        header.extend((0..model.levels).map(|k| format!("phi_im_{k}")));
    }
    w.write_record(&header)?;
    for (i, s) in traj.samples.iter().enumerate() {
        let mut row = vec![f(s.t), f(s.x), f(s.p), f(s.h), f(s.z)];
        if ehrenfest {
            row.extend(traj.phi[i].iter().map(|c| f(c.re)));
            row.extend(traj.phi[i].iter().map(|c| f(c.im)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn wkb_cmd(config: &Path, mass: f64, k: i64, scheme: Scheme, n: usize, out: &Path) -> Result<()> {
    let (_, model) = load(config)?;
    let x_surface = lab::widest_gap_point(&model, 256)?;
    let field = match scheme {
        Scheme::Bo => {
            let e = wkb::quantized_energy(&model, k, mass)?;
            wkb::WkbField::bo(&model, e, mass, n, x_surface)?
        }
        Scheme::Ehrenfest => wkb::WkbField::ehrenfest(&model, k, mass, n, x_surface)?,
        other => bail!("wkb fields exist for bo and ehrenfest, not {other}"),
    };
    let d = field.psi[0].len();
    let mut w = writer(out)?;
    let mut header: Vec<String> = ["X", "theta", "p", "G", "rho"].iter().map(|s| s.to_string()).collect();
    header.extend((0..d).flat_map(|c| [format!("psi_re_{c}"), format!("psi_im_{c}")]));
    w.write_record(&header)?;
    for i in 0..field.grid.len() {
        let mut row = vec![f(field.grid[i]), f(field.theta[i]), f(field.p[i]), f(field.g[i]), f(field.rho[i])];
        row.extend(field.psi[i].iter().flat_map(|c| [f(c.re), f(c.im)]));
        w.write_record(&row)?;
    }
    w.flush()?;
    eprintln!("E = {:.12}, action = {:.12}, laps = {}, holonomy = {}", field.energy, field.action, field.loops, field.holonomy);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn qref_cmd(config: &Path, mass: f64, n: usize, target: f64, count: usize, lap: Laplacian, out: &Path) -> Result<()> {
    let (_, model) = load(config)?;
    let h = GridHamiltonian::assemble(&model, mass, n, lap, target)?;
    let pairs = qref::eigensolve_near(&h, target, count)?;
    let gs: Vec<(String, lab::Observable)> =
        ["cos", "sin", "cos2"].iter().map(|g| Ok((g.to_string(), lab::observable(g, model.length)?))).collect::<Result<_>>()?;
    let mut w = writer(out)?;
    let mut header: Vec<String> = ["index", "E", "residual"].iter().map(|s| s.to_string()).collect();
    header.extend(gs.iter().map(|(name, _)| format!("g_{name}")));
    w.write_record(&header)?;
    for (i, p) in pairs.iter().enumerate() {
        let rho = p.density();
        let mut row = vec![i.to_string(), f(p.energy), f(p.residual)];
        row.extend(gs.iter().map(|(_, g)| f(qref::observable(&rho, model.length, g.as_ref()))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Returns false when the equilibrium comparison fails its bound.
fn gibbs_cmd(a: &GibbsArgs) -> Result<bool> {
    let (spec, model) = load(&a.config)?;
    let t = a.temperature.unwrap_or(model.temperature);
    if !(t > 0.0) {
        bail!("temperature must be > 0 (use --T or set T in the config)");
    }
    let g = lab::observable(&a.g, model.length)?;
    let obs = gibbs::gibbs_observable(&model, g.as_ref(), t, a.ngrid, a.x_c, a.samples, a.seed)?;
    let diagnostics = if model.levels >= 2 {
        Some(gibbs::corrected_potential(&model, t, gibbs::CORRECTION_COEFFICIENT, a.ngrid)?.diagnostics)
    } else {
        None
    };
    let mut pass = true;
    let compare = if a.compare {
        let budget = gibbs::Budget { t_final: a.tfinal, grid: a.ngrid, samples_per_point: a.samples, ..Default::default() };
        let rep = gibbs::equilibrium_compare(&model, g.as_ref(), t, &budget, a.x_c, a.seed)?;
        pass = rep.pass;
        Some(rep)
    } else {
        None
    };
    let report = serde_json::json!({
        "model": spec,
        "T": t,
        "g": a.g,
        "samples": a.samples,
        "seed": a.seed,
        "x_c": a.x_c,
        "value": obs.value,
        "r_free": obs.r_free,
        "difference": obs.difference,
        "mc_error": obs.mc_error,
        "kappa": obs.kappa,
        "temperature_ratio": obs.temperature_ratio,
        "diagnostics": diagnostics,
        "equilibrium": compare,
    });
    fs::write(&a.out, serde_json::to_string_pretty(&report)?)?;
    Ok(pass)
}

fn oscint_cmd(demo: &str, masses: &[f64], out: &Path) -> Result<()> {
    let rows = lab::oscint_demo(demo, masses)?;
    let mut w = writer(out)?;
    w.write_record(["M", "re", "im", "abs", "reference", "error"])?;
    for r in rows {
        w.write_record([f(r.mass), f(r.re), f(r.im), f(r.magnitude), f(r.reference), f(r.error)])?;
    }
    w.flush()?;
    Ok(())
}

fn default_energy(model: &ModelSystem) -> Result<f64> {
    let prof = wkb::branch_profile(model, 1024)?;
    let min = prof.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = prof.max_value();
    Ok(max + 0.25 * (max - min).max(1.0))
}

#[allow(clippy::too_many_arguments)]
fn converge_cmd(
    config: &Path,
    scheme: Scheme,
    masses: Option<Vec<f64>>,
    energy: Option<f64>,
    x_surface: Option<f64>,
    returns: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let (spec, model) = load(config)?;
    let masses = masses.unwrap_or_else(|| spec.masses.clone());
    let energy = match energy {
        Some(e) => e,
        None => default_energy(&model)?,
    };
    let mut cfg = ConvergeConfig::new(scheme, &masses, energy);
    cfg.x_surface = x_surface;
    cfg.returns = returns;
    cfg.seed = seed;
    let rec = lab::converge(&spec, &cfg)?;
    fs::write(out, rec.to_json()?)?;
    for c in &rec.cells {
        eprintln!("M = {:>8}  k = {:>4}  n = {:>5}  error = {:.4e}", c.mass, c.k, c.n_grid, c.error);
    }
    if let Some(fit) = &rec.fit {
        eprintln!("alpha = {:.4} +- {:.4} {:?}", fit.alpha, fit.stderr, fit.flags);
    }
    Ok(())
}

fn read_record(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(RunRecord::from_json(&text)?)
}

fn plotdata(record: &Path, out: &Path) -> Result<()> {
    let rec = read_record(record)?;
    let mut w = writer(out)?;
    w.write_record(["M", "error", "fit"])?;
    for (m, e, fit) in rec.rate_table() {
        w.write_record([f(m), f(e), f(fit)])?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Model { action: ModelAction::List } => {
            for (name, about) in qclab::model::FAMILIES {
                println!("{name:<16} {about}");
            }
            Ok(true)
        }
        Command::Model { action: ModelAction::Show { config } } => load(&config).and_then(|(spec, model)| {
            println!("{}", spec.to_json()?);
            println!("levels = {}, L = {}, masses = {:?}", model.levels, model.length, model.masses);
            Ok(true)
        }),
        Command::Spectrum { config, grid, out } => spectrum(&config, grid, &out).map(|_| true),
        Command::Run(a) => run(&a).map(|_| true),
        Command::Wkb { config, mass, k, scheme, ngrid, out } => wkb_cmd(&config, mass, k, scheme, ngrid, &out).map(|_| true),
        Command::Qref { config, mass, ngrid, etarget, count, laplacian, out } => {
            qref_cmd(&config, mass, ngrid, etarget, count, laplacian, &out).map(|_| true)
        }
        Command::Gibbs(a) => gibbs_cmd(&a),
        Command::Oscint { demo, masses, out } => oscint_cmd(&demo, &masses, &out).map(|_| true),
        Command::Converge { config, scheme, masses, energy, x_surface, returns, seed, out } => {
            converge_cmd(&config, scheme, masses, energy, x_surface, returns, seed, &out).map(|_| true)
        }
        Command::Plotdata { record, out } => plotdata(&record, &out).map(|_| true),
        Command::Replay { record } => read_record(&record).and_then(|rec| {
            let again = lab::replay(&rec)?;
            let same = again.fingerprint() == rec.fingerprint();
            println!("{}", if same { "identical" } else { "differs" });
            Ok(same)
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
