use clap::{Args, Parser, Subcommand, ValueEnum};
use kerrpulse::events::{self, RoleMap, SynthConfig};
use kerrpulse::model::{PumpPulse, ResonatorParams, RunConfig, TimeGrid};
use kerrpulse::moments::{analysis_grid, two_time_from_state, evolve_moments_on};
use kerrpulse::multiphoton::{self, Convention, CorrectionOrder, McmcConfig};
use kerrpulse::observables::{self, simulate_point};
use kerrpulse::pump::{pump_grid, solve_pump};
use kerrpulse::schmidt::{self, output_squeezing};
use kerrpulse::{stats, Error};
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const OUT_DIR_ENV: &str = "KERRPULSE_OUT_DIR";

#[derive(Parser)]
#[command(name = "kerrpulse", version, about = "Pulsed squeezed-light simulation and coincidence analysis for Kerr microresonators")]
struct Cli {
    /// Output directory; falls back to $KERRPULSE_OUT_DIR, then ./out.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep pulse energy, duration and detuning; photon number, g², G̃, spectrum, squeezing.
    Simulate(SimulateArgs),
    /// Single operating point: pump, moments, two-time correlators, Schmidt modes and JTA.
    Decompose(ConfigArg),
    /// Synthetic time-tag stream from the configured operating point.
    Synth(SynthArgs),
    /// Coincidence correction of a time-tag file.
    Correct(CorrectArgs),
    /// Energy-distance permutation test between two sample files.
    Stats(StatsArgs),
    /// Summarise the manifests found in the output directory.
    Report,
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum DetuningMode {
    Zero,
    Opt,
    Both,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pulse energies in pJ.
    #[arg(long, value_delimiter = ',', default_value = "100,200,400,800,1200,1600")]
    energies: Vec<f64>,
    /// Pulse durations in ps; defaults to the configured duration.
    #[arg(long, value_delimiter = ',')]
    durations: Vec<f64>,
    #[arg(long, value_enum, default_value = "both")]
    detuning: DetuningMode,
    /// Δ_opt search window in units of γ_tot.
    #[arg(long, value_delimiter = ',', default_value = "-1,8")]
    opt_range: Vec<f64>,
    /// Also write two-time products (G̃ and spectrum) per point.
    #[arg(long)]
    correlations: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pulses: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Four,
    Six,
}

#[derive(Args)]
struct CorrectArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Time-tag CSV.
    #[arg(long)]
    events: PathBuf,
    #[arg(long, value_enum, default_value = "four")]
    order: OrderArg,
    /// Fit per-port efficiencies from the singles instead of using the configured ones.
    #[arg(long)]
    fit_eta: bool,
}

#[derive(Args)]
struct StatsArgs {
    /// CSV of sample points, one per line.
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long, default_value_t = stats::DEFAULT_PERMUTATIONS)]
    permutations: usize,
    /// Matched sample sizes for a p-value sweep.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<usize>,
}

#[derive(Serialize)]
struct Stage {
    name: String,
    seconds: f64,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    version: &'static str,
    seed: u64,
    config: Option<RunConfig>,
    outputs: Vec<String>,
    stages: Vec<Stage>,
}

const MANIFEST: &str = "manifest.json";

struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl Run {
    fn new(dir: PathBuf, command: &str, seed: u64, config: Option<RunConfig>) -> kerrpulse::Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Run {
            dir,
            manifest: RunManifest { command: command.into(), version: env!("CARGO_PKG_VERSION"), seed, config, outputs: Vec::new(), stages: Vec::new() },
            clock: Instant::now(),
        })
    }

    fn stage(&mut self, name: &str) {
        let seconds = self.clock.elapsed().as_secs_f64();
        self.manifest.stages.push(Stage { name: name.into(), seconds });
        self.clock = Instant::now();
    }

    /// Writes through a temporary file and renames, with a manifest reference line for CSVs.
    fn write(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> kerrpulse::Result<()>) -> kerrpulse::Result<()> {
        let mut buf = Vec::new();
        if name.ends_with(".csv") {
            writeln!(buf, "# manifest={MANIFEST}")?;
        }
        f(&mut buf)?;
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, &buf)?;
        fs::rename(&tmp, &path)?;
        self.manifest.outputs.push(name.into());
        Ok(())
    }

    fn finish(mut self) -> kerrpulse::Result<PathBuf> {
        self.manifest.outputs.push(MANIFEST.into());
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Format(e.to_string()))?;
        let path = self.dir.join(MANIFEST);
        fs::write(&path, text)?;
        Ok(path)
    }
}

fn load_config(path: &Option<PathBuf>) -> kerrpulse::Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            RunConfig::parse(&text)
        }
    }
}

fn json<T: Serialize>(v: &T) -> kerrpulse::Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))
}

#[derive(Serialize)]
struct PointSummary {
    duration_ps: f64,
    energy_pj: f64,
    mode: &'static str,
    delta_p: f64,
    n_per_pulse: f64,
    g2: f64,
    purity: f64,
    xi_db: f64,
    xi_out_db: f64,
    captured: f64,
}

fn simulate(cli: &Cli, a: &SimulateArgs, dir: PathBuf) -> kerrpulse::Result<PathBuf> {
    let cfg = load_config(&a.config)?;
    let mut run = Run::new(dir, "simulate", cli.seed, Some(cfg.clone()))?;
    if a.opt_range.len() != 2 {
        return Err(Error::Config("--opt-range takes two values".into()));
    }
    let durations = if a.durations.is_empty() { vec![cfg.pulse.duration_t] } else { a.durations.clone() };
    let modes: Vec<&'static str> = match a.detuning {
        DetuningMode::Zero => vec!["zero"],
        DetuningMode::Opt => vec!["opt"],
        DetuningMode::Both => vec!["zero", "opt"],
    };
    let gamma = cfg.params.gamma_tot();
    let mut rows: Vec<PointSummary> = Vec::new();
    let mut truncated: Vec<String> = Vec::new();
    for &t in &durations {
        for mode in &modes {
            for &e in &a.energies {
                let pulse = PumpPulse::new(e * 1e-12 * cfg.pulse.rep_rate, cfg.pulse.rep_rate, t, cfg.pulse.carrier_omega_p)?;
                let params = match *mode {
                    "zero" => cfg.params.with_detuning(0.0),
                    _ => {
                        let range = (a.opt_range[0] * gamma, a.opt_range[1] * gamma);
                        match observables::optimal_detuning(&cfg.params, &pulse, range) {
                            Ok(d) => cfg.params.with_detuning(d),
                            Err(err @ Error::ThresholdExceeded { .. }) => {
                                truncated.push(format!("T={t} {mode} stopped at {e} pJ: {err}"));
                                break;
                            }
                            Err(err @ Error::Bracket { .. }) => {
                                truncated.push(format!("T={t} {mode} skipped {e} pJ: {err}"));
                                continue;
                            }
                            Err(err) => return Err(err),
                        }
                    }
                };
                let point = match point_summary(&params, &pulse, &cfg.grid, *mode, a.correlations) {
                    Ok(p) => p,
                    Err(err @ Error::ThresholdExceeded { .. }) => {
                        truncated.push(format!("T={t} {mode} stopped at {e} pJ: {err}"));
                        break;
                    }
                    Err(err) => return Err(err),
                };
                let tag = format!("T{t}_{mode}_{e}pJ");
                run.write(&format!("flux_{tag}.csv"), |w| {
                    writeln!(w, "t_ps,flux_per_ps")?;
                    for (k, f) in point.flux.iter().enumerate() {
                        writeln!(w, "{},{:.10e}", point.flux_grid.t(k), f)?;
                    }
                    Ok(())
                })?;
                if let Some((taus, g1, omegas, spec)) = &point.correlations {
                    run.write(&format!("g1_{tag}.csv"), |w| {
                        writeln!(w, "tau_ps,g1_tilde")?;
                        for (x, y) in taus.iter().zip(g1) {
                            writeln!(w, "{x},{y:.10e}")?;
                        }
                        Ok(())
                    })?;
                    run.write(&format!("spectrum_{tag}.csv"), |w| {
                        writeln!(w, "omega_rad_per_ps,spectrum")?;
                        for (x, y) in omegas.iter().zip(spec) {
                            writeln!(w, "{x:.8e},{y:.10e}")?;
                        }
                        Ok(())
                    })?;
                }
                rows.push(point.summary);
            }
        }
    }
    run.stage("sweep");
    run.write("summary.csv", |w| {
        writeln!(w, "duration_ps,energy_pj,mode,delta_p,n_per_pulse,g2,purity,xi_db,xi_out_db,captured")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{:.8e},{:.8e},{:.8},{:.8},{:.6},{:.6},{:.6}",
                r.duration_ps, r.energy_pj, r.mode, r.delta_p, r.n_per_pulse, r.g2, r.purity, r.xi_db, r.xi_out_db, r.captured
            )?;
        }
        for m in &truncated {
            writeln!(w, "# truncated: {m}")?;
        }
        Ok(())
    })?;
    run.write("summary.json", |w| {
        w.extend(json(&serde_json::json!({ "points": rows, "truncated": truncated }))?.bytes());
        Ok(())
    })?;
    run.finish()
}

struct PointOut {
    summary: PointSummary,
    flux: Vec<f64>,
    flux_grid: TimeGrid,
    correlations: Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)>,
}

fn point_summary(params: &ResonatorParams, pulse: &PumpPulse, grid: &TimeGrid, mode: &'static str, correlations: bool) -> kerrpulse::Result<PointOut> {
    let sim = simulate_point(params, pulse)?;
    let (agrid, captured) = analysis_grid(&sim.state, grid.n_points, grid.dt)?;
    let state = evolve_moments_on(&sim.traj, params, &agrid)?;
    let tt = two_time_from_state(&sim.traj, params, &state, &agrid)?;
    let dec = schmidt::decompose(&tt)?;
    let (_, xi_out_db) = output_squeezing(dec.xi_max(), params.p_e())?;
    let g2 = observables::g2_from_schmidt(&dec).unwrap_or(f64::NAN);
    let corr = correlations.then(|| {
        let (taus, g1) = observables::g1_tilde(&tt);
        let omegas = observables::nyquist_omegas(&agrid, 201);
        let spec = observables::single_photon_spectrum(&tt, &omegas);
        (taus, g1, omegas, spec)
    });
    Ok(PointOut {
        summary: PointSummary {
            duration_ps: pulse.duration_t,
            energy_pj: pulse.energy_pj(),
            mode,
            delta_p: params.delta_p,
            n_per_pulse: sim.n_per_pulse,
            g2,
            purity: dec.purity(),
            xi_db: dec.xi_max() * kerrpulse::model::DB_PER_NEPER,
            xi_out_db,
            captured,
        },
        flux: sim.flux,
        flux_grid: sim.state.grid,
        correlations: corr,
    })
}

/// Pump, moments and Schmidt decomposition for the configured point on an
/// analysis grid placed over the emission.
fn analyse(cfg: &RunConfig) -> kerrpulse::Result<(kerrpulse::moments::TwoTimeMoment, schmidt::SchmidtDecomposition, f64)> {
    let fine = pump_grid(&cfg.params, &cfg.pulse, observables::FINE_DT, observables::RINGDOWN_LIFETIMES);
    let traj = solve_pump(&cfg.params, &cfg.pulse, &fine)?;
    let st = kerrpulse::moments::evolve_moments(&traj, &cfg.params)?;
    let (agrid, captured) = analysis_grid(&st, cfg.grid.n_points, cfg.grid.dt)?;
    let state = evolve_moments_on(&traj, &cfg.params, &agrid)?;
    let tt = two_time_from_state(&traj, &cfg.params, &state, &agrid)?;
    let dec = schmidt::decompose(&tt)?;
    Ok((tt, dec, captured))
}

fn decompose(cli: &Cli, a: &ConfigArg, dir: PathBuf) -> kerrpulse::Result<PathBuf> {
    let cfg = load_config(&a.config)?;
    let mut run = Run::new(dir, "decompose", cli.seed, Some(cfg.clone()))?;
    let fine = pump_grid(&cfg.params, &cfg.pulse, observables::FINE_DT, observables::RINGDOWN_LIFETIMES);
    let traj = solve_pump(&cfg.params, &cfg.pulse, &fine)?;
    run.write("pump.csv", |w| traj.write_csv(w))?;
    run.stage("pump");
    let (tt, dec, captured) = analyse(&cfg)?;
    run.stage("moments");
    run.write("m_matrix.csv", |w| tt.write_csv(w, "m"))?;
    run.write("c_matrix.csv", |w| tt.write_csv(w, "c"))?;
    run.write("schmidt.csv", |w| dec.write_csv(w, cfg.params.p_e()))?;
    let j = schmidt::jta(&dec);
    run.write("jta.csv", |w| j.write_csv(w))?;
    let rn = multiphoton::rn_from_schmidt(&dec, 30);
    run.write("rn.csv", |w| {
        writeln!(w, "n,r_n")?;
        for (n, r) in rn.r.iter().enumerate() {
            writeln!(w, "{n},{r:.10e}")?;
        }
        Ok(())
    })?;
    run.stage("decompose");
    let summary = serde_json::json!({
        "analysis_grid": { "t_start": tt.grid.t_start, "dt": tt.grid.dt, "n": tt.grid.n_points, "captured_fraction": captured },
        "mean_pairs": dec.mean_pairs(),
        "schmidt_number": dec.schmidt_number(),
        "purity": dec.purity(),
        "g2": observables::g2_from_schmidt(&dec).ok(),
        "xi_max": dec.xi_max(),
        "xi_out_db": output_squeezing(dec.xi_max(), cfg.params.p_e())?.1,
        "jti_purity_bound": schmidt::purity_bound(&j.jti()).ok(),
        "rn_tail": rn.tail,
    });
    run.write("decompose.json", |w| {
        w.extend(json(&summary)?.bytes());
        Ok(())
    })?;
    run.finish()
}

fn synth(cli: &Cli, a: &SynthArgs, dir: PathBuf) -> kerrpulse::Result<PathBuf> {
    let cfg = load_config(&a.config)?;
    let mut run = Run::new(dir, "synth", cli.seed, Some(cfg.clone()))?;
    let (_, dec, _) = analyse(&cfg)?;
    let j = schmidt::jta(&dec);
    run.stage("decompose");
    let sc = SynthConfig { mcmc: McmcConfig { seed: cli.seed, ..SynthConfig::default().mcmc }, ..SynthConfig::default() };
    let stream = events::synthesize(&dec, &j, &cfg.detection, a.pulses, cli.seed, &sc)?;
    run.stage("synthesize");
    run.write("events.csv", |w| events::write_stream(&stream, w))?;
    run.write("roles.json", |w| {
        w.extend(json(&RoleMap::from_model(&cfg.detection))?.bytes());
        Ok(())
    })?;
    run.finish()
}

fn correct(cli: &Cli, a: &CorrectArgs, dir: PathBuf) -> kerrpulse::Result<PathBuf> {
    let cfg = load_config(&a.config)?;
    let mut run = Run::new(dir, "correct", cli.seed, Some(cfg.clone()))?;
    let stream = events::ingest(&a.events)?;
    let (tt, dec, _) = analyse(&cfg)?;
    let roles = RoleMap::from_model(&cfg.detection);
    let hist = events::histogram(&stream, &tt.grid, &roles)?;
    run.stage("histogram");
    let rn = multiphoton::rn_from_schmidt(&dec, multiphoton::detection::N_MAX_CAP);
    let model = if a.fit_eta {
        let ss: Vec<f64> = roles.channels(events::Role::Signal).iter().map(|c| hist.click_probability(*c)).collect();
        let si: Vec<f64> = roles.channels(events::Role::Idler).iter().map(|c| hist.click_probability(*c)).collect();
        multiphoton::fit_efficiencies(&ss, &si, &rn)?
    } else {
        cfg.detection.clone()
    };
    let det = multiphoton::detection_probs(&model, multiphoton::detection::N_MAX_CAP)?;
    let order = match a.order {
        OrderArg::Four => CorrectionOrder::FourFold,
        OrderArg::Six => CorrectionOrder::SixFold,
    };
    let p6 = hist.p6m();
    let (result, note) = match multiphoton::correct_p1(&hist.p2(), &hist.p4m(), Some(&p6), &det, &rn, order, Convention::AllPairings) {
        Ok(r) => (Some(r), None),
        Err(Error::NoMultipair) => (None, Some("multi-pair contribution negligible, correction not applied")),
        Err(e) => return Err(e),
    };
    run.stage("correct");
    for (name, m) in [("p2.csv", hist.p2()), ("p4m.csv", hist.p4m())] {
        run.write(name, |w| events::write_matrix_csv(&m, w))?;
    }
    let w11 = det.w1[1];
    let p1 = result.as_ref().map_or_else(|| hist.p2() / w11.max(f64::MIN_POSITIVE), |r| r.p1_estimate.clone());
    run.write("p1_corrected.csv", |w| events::write_matrix_csv(&p1, w))?;
    let report = serde_json::json!({
        "n_pulses": hist.n_pulses,
        "efficiencies": model,
        "grid": { "t_start": tt.grid.t_start, "dt": tt.grid.dt, "n": tt.grid.n_points },
        "correction": result,
        "note": note,
        "purity_bound_raw": schmidt::purity_bound(&hist.p2()).ok(),
        "rn_tail": rn.tail,
    });
    run.write("correction.json", |w| {
        w.extend(json(&report)?.bytes());
        Ok(())
    })?;
    run.finish()
}

fn read_points(path: &Path) -> kerrpulse::Result<Vec<Vec<f64>>> {
    let m = events::read_matrix_csv(std::io::BufReader::new(fs::File::open(path)?))?;
    Ok(m.row_iter().map(|r| r.iter().cloned().collect()).collect())
}

fn stats_cmd(cli: &Cli, a: &StatsArgs, dir: PathBuf) -> kerrpulse::Result<PathBuf> {
    let mut run = Run::new(dir, "stats", cli.seed, None)?;
    let x = read_points(&a.x)?;
    let y = read_points(&a.y)?;
    let res = stats::permutation_test(&x, &y, a.permutations, cli.seed)?;
    run.write("energy_test.json", |w| {
        w.extend(json(&res)?.bytes());
        Ok(())
    })?;
    if !a.sweep.is_empty() {
        let sweep = stats::sample_size_sweep(&x, &y, &a.sweep, a.permutations, cli.seed)?;
        run.write("pvalue_sweep.csv", |w| {
            writeln!(w, "sample_size,d2,p_value")?;
            for r in &sweep {
                writeln!(w, "{},{:.10e},{:.6}", r.sample_sizes.0, r.d2, r.p_value)?;
            }
            Ok(())
        })?;
    }
    run.stage("stats");
    println!("{}", json(&res)?);
    run.finish()
}

fn report(dir: &Path) -> kerrpulse::Result<()> {
    let mut found = 0;
    let mut paths: Vec<PathBuf> = vec![dir.join(MANIFEST)];
    if let Ok(rd) = fs::read_dir(dir) {
        for e in rd.flatten() {
            if e.path().is_dir() {
                paths.push(e.path().join(MANIFEST));
            }
        }
    }
    paths.sort();
    for p in paths.iter().filter(|p| p.exists()) {
        let text = fs::read_to_string(p)?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
        let outputs = v["outputs"].as_array().map_or(0, |a| a.len());
        let secs: f64 = v["stages"].as_array().map_or(0.0, |a| a.iter().filter_map(|s| s["seconds"].as_f64()).sum());
        println!("{}  command={} seed={} outputs={} time={:.2}s", p.display(), v["command"].as_str().unwrap_or("?"), v["seed"], outputs, secs);
        found += 1;
    }
    if found == 0 {
        return Err(Error::Format(format!("no {MANIFEST} under {}", dir.display())));
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Coverage(_) => 2,
        Error::Parse(_) | Error::Format(_) | Error::Shape(_) | Error::GridMismatch(_) | Error::Io(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let dir = cli
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let result = match &cli.cmd {
        Command::Simulate(a) => simulate(&cli, a, dir).map(Some),
        Command::Decompose(a) => decompose(&cli, a, dir).map(Some),
        Command::Synth(a) => synth(&cli, a, dir).map(Some),
        Command::Correct(a) => correct(&cli, a, dir).map(Some),
        Command::Stats(a) => stats_cmd(&cli, a, dir).map(Some),
        Command::Report => report(&dir).map(|_| None),
    };
    match result {
        Ok(Some(m)) => {
            eprintln!("wrote {}", m.display());
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
