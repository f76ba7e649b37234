//! `dbmc` — command-line front end for the molecular MIMO link simulator.
//!
//! Subcommands: `taps` (closed-form or fitted channel taps), `simulate-channel`
//! (random-walk hitting histograms), `fit` (response-coefficient recovery from
//! histograms), `ber` (one Monte Carlo experiment) and `sweep` (BER across a
//! parameter axis). All outputs are CSV with a `#`-prefixed metadata block.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.

mod settings;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use dbmc_core::{
    empirical_cdf, fit_response, interpolate_params, read_fit_table, run_experiment,
    simulate_hits, sweep, write_ber_csv, write_fit_table, BerRecord, Detector, Error,
    ExperimentConfig, FitParams, Geometry, HitHistogram, Result, Scene, Scheme, SweepAxis,
    TapProvenance, TapSet, TapSource, GEOMETRY_NOTE, TOOL_VERSION,
};

use settings::FileConfig;

#[derive(Parser)]
#[command(
    name = "dbmc",
    version,
    about = "Link-level simulator for diffusion-based molecular MIMO communication"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat key-value JSON config file; command-line flags override it
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed for all randomness
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file (stdout when omitted)
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Worker thread count; never changes any output byte except wall-clock
    /// metadata
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write channel taps from the closed-form or fitted responses
    Taps(TapsArgs),
    /// Run the Brownian random-walk simulator and write a hitting histogram
    SimulateChannel(SimulateArgs),
    /// Fit response coefficients to simulated hitting histograms
    Fit(FitArgs),
    /// Run one Monte Carlo BER experiment
    Ber(BerArgs),
    /// Run BER experiments across a parameter axis
    Sweep(SweepArgs),
}

/// Scenario flags shared by every subcommand.
#[derive(Args, Clone)]
struct GeometryArgs {
    /// Tx-to-aligned-Rx-center distance d (µm)
    #[arg(long = "d")]
    d: Option<f64>,
    /// Antenna separation a (µm)
    #[arg(long = "a")]
    a: Option<f64>,
    /// Receiver sphere radius r (µm)
    #[arg(long = "r")]
    r: Option<f64>,
    /// Diffusion coefficient D (µm²/s)
    #[arg(long = "D")]
    diffusion: Option<f64>,
    /// Symbol duration Ts (s)
    #[arg(long = "Ts")]
    ts: Option<f64>,
    /// Channel memory length L
    #[arg(long = "L")]
    memory: Option<usize>,
}

/// Fitted-response coefficients, individually overridable.
#[derive(Args, Clone)]
struct CoeffArgs {
    #[arg(long)]
    b1: Option<f64>,
    #[arg(long)]
    b2: Option<f64>,
    #[arg(long)]
    b3: Option<f64>,
    #[arg(long)]
    b4: Option<f64>,
    #[arg(long)]
    b5: Option<f64>,
    #[arg(long)]
    b6: Option<f64>,
}

#[derive(Args)]
struct TapsArgs {
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Tap model: `analytic` (SISO closed form) or `fitted` (2x2 responses)
    #[arg(long, default_value = "analytic")]
    model: String,
    #[command(flatten)]
    coeffs: CoeffArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Molecules to release
    #[arg(long)]
    n: Option<u64>,
    /// Random-walk time step (s)
    #[arg(long)]
    dt: Option<f64>,
    /// Scene layout: `siso` or `mimo`
    #[arg(long)]
    scenario: Option<String>,
    /// Releasing transmit antenna (1 or 2; mimo only)
    #[arg(long)]
    source: Option<usize>,
    /// Histogram bin width (s); defaults to Ts
    #[arg(long)]
    bin: Option<f64>,
    /// Total simulated time (s); defaults to (L+1) Ts
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// MIMO hitting-histogram CSV files (one fit table row each)
    #[arg(long = "input", value_name = "FILE", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
}

#[derive(Args, Clone)]
struct BerArgs {
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Spatial scheme: siso, repetition or alamouti
    #[arg(long)]
    scheme: Option<String>,
    /// Detector: atd or mlse
    #[arg(long)]
    detector: Option<String>,
    /// Molecules per ON symbol per antenna
    #[arg(long = "N")]
    molecules: Option<u64>,
    /// Bits per realization
    #[arg(long = "K")]
    bits: Option<usize>,
    /// Number of realizations
    #[arg(long = "R")]
    realizations: Option<usize>,
    /// Tap source: `analytic`, `fitted`, or a tap CSV path
    #[arg(long)]
    taps: Option<String>,
    #[command(flatten)]
    coeffs: CoeffArgs,
    /// Fit table CSV; its row matching the geometry (or a grid
    /// interpolation) supplies the fitted coefficients
    #[arg(long, value_name = "FILE")]
    params: Option<PathBuf>,
    /// Release N molecules for SISO too, instead of the power-normalized 2N
    #[arg(long)]
    no_power_normalization: bool,
    /// Noise-free channel emitting rounded expected counts (oracle runs;
    /// flagged in the output metadata)
    #[arg(long)]
    expectation_mode: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    ber: BerArgs,
    /// Sweep axis: N, a or D
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Schemes to run (default: all three)
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    /// Detectors to run (default: both)
    #[arg(long, value_delimiter = ',')]
    detectors: Option<Vec<String>>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = u8::from(e.use_stderr()); // help/version exit 0
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(threads) = cli.threads.or(file.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    let seed = cli.seed.or(file.seed).unwrap_or(1);

    match &cli.command {
        Command::Taps(args) => cmd_taps(args, &file, cli.out.as_deref()),
        Command::SimulateChannel(args) => cmd_simulate(args, &file, seed, cli.out.as_deref()),
        Command::Fit(args) => cmd_fit(args, cli.out.as_deref()),
        Command::Ber(args) => cmd_ber(args, &file, seed, cli.out.as_deref()),
        Command::Sweep(args) => cmd_sweep(args, &file, seed, cli.out.as_deref()),
    }
}

/// Writes through a closure to `--out` or stdout.
fn with_output<F>(out: Option<&std::path::Path>, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match out {
        Some(path) => {
            let mut file = BufWriter::new(File::create(path)?);
            write(&mut file)?;
            file.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = BufWriter::new(stdout.lock());
            write(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn resolve_geometry(args: &GeometryArgs, file: &FileConfig) -> Result<Geometry> {
    let reference = Geometry::reference();
    Geometry::new(
        args.d.or(file.d).unwrap_or(reference.distance),
        args.a.or(file.a).unwrap_or(reference.separation),
        args.r.or(file.r).unwrap_or(reference.radius),
        args.diffusion.or(file.diffusion).unwrap_or(reference.diffusion),
        args.ts.or(file.ts).unwrap_or(reference.symbol_duration),
        args.memory.or(file.memory).unwrap_or(reference.memory),
    )
}

fn resolve_coeffs(args: &CoeffArgs, file: &FileConfig) -> Result<FitParams> {
    let base = FitParams::analytic().as_array();
    FitParams::new([
        args.b1.or(file.b1).unwrap_or(base[0]),
        args.b2.or(file.b2).unwrap_or(base[1]),
        args.b3.or(file.b3).unwrap_or(base[2]),
        args.b4.or(file.b4).unwrap_or(base[3]),
        args.b5.or(file.b5).unwrap_or(base[4]),
        args.b6.or(file.b6).unwrap_or(base[5]),
    ])
}

fn geometry_meta(g: &Geometry) -> Vec<(&'static str, String)> {
    vec![
        ("d", g.distance.to_string()),
        ("a", g.separation.to_string()),
        ("r", g.radius.to_string()),
        ("D", g.diffusion.to_string()),
        ("Ts", g.symbol_duration.to_string()),
        ("L", g.memory.to_string()),
    ]
}

fn as_ref_meta<'a>(meta: &'a [(&'static str, String)]) -> Vec<(&'a str, String)> {
    meta.iter().map(|(k, v)| (*k, v.clone())).collect()
}

const B_KEYS: [&str; 6] = ["b1", "b2", "b3", "b4", "b5", "b6"];

fn cmd_taps(args: &TapsArgs, file: &FileConfig, out: Option<&std::path::Path>) -> Result<()> {
    let g = resolve_geometry(&args.geometry, file)?;
    let (taps, provenance, fitted_with) = match args.model.as_str() {
        "analytic" => (dbmc_core::siso_taps(&g)?, TapProvenance::Analytic, None),
        "fitted" => {
            let p = resolve_coeffs(&args.coeffs, file)?;
            (
                dbmc_core::symmetric_mimo_taps(&g, &p)?,
                TapProvenance::Fitted,
                Some(p),
            )
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown tap model `{other}` (use analytic or fitted)"
            )))
        }
    };
    let mut meta = vec![
        ("tool", TOOL_VERSION.to_string()),
        ("command", "taps".to_string()),
        ("model", args.model.clone()),
        ("provenance", provenance.to_string()),
    ];
    meta.extend(geometry_meta(&g));
    if let Some(p) = fitted_with {
        for (key, b) in B_KEYS.iter().zip(p.as_array()) {
            meta.push((key, b.to_string()));
        }
    }
    meta.push(("note", GEOMETRY_NOTE.to_string()));
    with_output(out, |mut w| taps.write_csv(&as_ref_meta(&meta), &mut w))
}

fn cmd_simulate(
    args: &SimulateArgs,
    file: &FileConfig,
    seed: u64,
    out: Option<&std::path::Path>,
) -> Result<()> {
    let g = resolve_geometry(&args.geometry, file)?;
    let n = args.n.or(file.n).unwrap_or(100_000);
    let dt = args.dt.or(file.dt).unwrap_or(dbmc_core::DEFAULT_DT);
    let scenario = args
        .scenario
        .clone()
        .or_else(|| file.scenario.clone())
        .unwrap_or_else(|| "mimo".to_string());
    let source = args.source.or(file.source).unwrap_or(1);
    let bin = args.bin.or(file.bin).unwrap_or(g.symbol_duration);
    let default_horizon = g.tap_count() as f64 * g.symbol_duration;
    let horizon = args.horizon.or(file.horizon).unwrap_or(default_horizon);

    let mut scene = match scenario.as_str() {
        "siso" => Scene::siso(&g, dt)?,
        "mimo" => Scene::symmetric_mimo(&g, dt)?,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown scenario `{other}` (use siso or mimo)"
            )))
        }
    };
    scene.horizon = horizon;
    if !(scene.horizon >= dt) {
        return Err(Error::InvalidConfig(format!("horizon {horizon} is below dt {dt}")));
    }
    if source == 0 || source > scene.emitters.len() {
        return Err(Error::InvalidConfig(format!(
            "source {source} does not exist in the {scenario} scenario"
        )));
    }

    let hist = simulate_hits(&scene, source - 1, n, bin, seed)?;

    let mut meta = vec![
        ("tool", TOOL_VERSION.to_string()),
        ("command", "simulate-channel".to_string()),
    ];
    meta.extend(geometry_meta(&g));
    meta.extend([
        ("scenario", scenario),
        ("source", source.to_string()),
        ("dt", dt.to_string()),
        ("horizon", horizon.to_string()),
        ("bin_width", bin.to_string()),
        ("molecules", n.to_string()),
        ("seed", seed.to_string()),
        ("note", GEOMETRY_NOTE.to_string()),
    ]);
    with_output(out, |mut w| hist.write_csv(&as_ref_meta(&meta), &mut w))
}

/// Pulls a float out of histogram metadata.
fn meta_f64(meta: &[(String, String)], key: &str, path: &std::path::Path) -> Result<f64> {
    dbmc_core::report::meta_value(meta, key)
        .ok_or_else(|| Error::Parse(format!("{}: missing `{key}` metadata", path.display())))?
        .parse()
        .map_err(|e| Error::Parse(format!("{}: {key}: {e}", path.display())))
}

fn cmd_fit(args: &FitArgs, out: Option<&std::path::Path>) -> Result<()> {
    let mut rows = Vec::new();
    let mut meta = vec![
        ("tool", TOOL_VERSION.to_string()),
        ("command", "fit".to_string()),
        ("provenance", "fitted".to_string()),
    ];
    for path in &args.inputs {
        let reader = BufReader::new(File::open(path)?);
        let (hist, hist_meta) = HitHistogram::read_csv(reader)?;
        let scenario = dbmc_core::report::meta_value(&hist_meta, "scenario").unwrap_or("");
        if scenario != "mimo" {
            return Err(Error::InvalidConfig(format!(
                "{}: fitting needs a mimo-scenario histogram with direct and cross absorbers, got `{scenario}`",
                path.display()
            )));
        }
        if hist.absorber_count() != 2 {
            return Err(Error::InvalidConfig(format!(
                "{}: expected 2 absorbers, found {}",
                path.display(),
                hist.absorber_count()
            )));
        }
        let g = Geometry::new(
            meta_f64(&hist_meta, "d", path)?,
            meta_f64(&hist_meta, "a", path)?,
            meta_f64(&hist_meta, "r", path)?,
            meta_f64(&hist_meta, "D", path)?,
            meta_f64(&hist_meta, "Ts", path)?,
            meta_f64(&hist_meta, "L", path)? as usize,
        )?;
        let source = meta_f64(&hist_meta, "source", path)? as usize;
        // the absorber aligned with the source sees the direct link
        let (direct_idx, cross_idx) = if source == 2 { (1, 0) } else { (0, 1) };
        let direct = empirical_cdf(&hist, direct_idx)?;
        let cross = empirical_cdf(&hist, cross_idx)?;
        let fitted = fit_response(&g, &direct, &cross)?;
        meta.push((
            "residual_norms",
            format!(
                "{}: direct {:e} cross {:e}",
                path.display(),
                fitted.direct.residual_norm,
                fitted.cross.residual_norm
            ),
        ));
        rows.push((g, fitted.params));
    }
    with_output(out, |mut w| write_fit_table(&rows, &as_ref_meta(&meta), &mut w))
}

/// Everything `ber`- and `sweep`-shaped commands share.
struct ResolvedExperiment {
    config: ExperimentConfig,
    source: Option<TapSource>,
    /// Taps loaded directly from a CSV file (usable by `ber` only).
    tap_file: Option<(TapSet, TapProvenance)>,
    taps_label: String,
}

fn resolve_experiment(args: &BerArgs, file: &FileConfig, seed: u64) -> Result<ResolvedExperiment> {
    let geometry = resolve_geometry(&args.geometry, file)?;
    let scheme = Scheme::from_str(
        &args
            .scheme
            .clone()
            .or_else(|| file.scheme.clone())
            .ok_or_else(|| Error::InvalidConfig("--scheme is required".into()))?,
    )?;
    let detector = Detector::from_str(
        &args
            .detector
            .clone()
            .or_else(|| file.detector.clone())
            .ok_or_else(|| Error::InvalidConfig("--detector is required".into()))?,
    )?;
    let config = ExperimentConfig {
        scheme,
        detector,
        geometry: geometry.clone(),
        molecules: args.molecules.or(file.molecules).unwrap_or(1000),
        bits_per_frame: args.bits.or(file.bits).unwrap_or(10_000),
        realizations: args.realizations.or(file.realizations).unwrap_or(100),
        seed,
        power_normalized: !args.no_power_normalization && file.power_normalized.unwrap_or(true),
        expectation_mode: args.expectation_mode,
    };

    let taps_label = args
        .taps
        .clone()
        .or_else(|| file.taps.clone())
        .unwrap_or_else(|| "analytic".to_string());
    let (source, tap_file) = match taps_label.as_str() {
        "analytic" => (Some(TapSource::Analytic), None),
        "fitted" => {
            let params = match &args.params {
                Some(table) => fitted_params_from_table(table, &geometry)?,
                None => resolve_coeffs(&args.coeffs, file)?,
            };
            (Some(TapSource::Fitted(params)), None)
        }
        path => {
            let reader = BufReader::new(File::open(path)?);
            let (taps, meta) = TapSet::read_csv(reader)?;
            let provenance = dbmc_core::report::meta_value(&meta, "provenance")
                .map(TapProvenance::from_str)
                .transpose()?
                .unwrap_or(TapProvenance::Particle);
            (None, Some((taps, provenance)))
        }
    };
    Ok(ResolvedExperiment {
        config,
        source,
        tap_file,
        taps_label,
    })
}

/// Looks the geometry up in a fit table, interpolating when it sits between
/// grid nodes.
fn fitted_params_from_table(path: &std::path::Path, g: &Geometry) -> Result<FitParams> {
    let reader = BufReader::new(File::open(path)?);
    let (table, _) = read_fit_table(reader, g.symbol_duration, g.memory)?;
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0);
    for (node, params) in &table {
        if close(node.distance, g.distance)
            && close(node.separation, g.separation)
            && close(node.radius, g.radius)
            && close(node.diffusion, g.diffusion)
        {
            return Ok(*params);
        }
    }
    interpolate_params(&table, g)
}

fn experiment_meta(
    resolved: &ResolvedExperiment,
    records: &[BerRecord],
) -> Vec<(&'static str, String)> {
    let cfg = &resolved.config;
    let mut meta = vec![
        ("tool", TOOL_VERSION.to_string()),
        ("taps", resolved.taps_label.clone()),
    ];
    meta.extend(geometry_meta(&cfg.geometry));
    meta.extend([
        ("K", cfg.bits_per_frame.to_string()),
        ("R", cfg.realizations.to_string()),
        ("power_normalized", cfg.power_normalized.to_string()),
        ("expectation_mode", cfg.expectation_mode.to_string()),
        ("seed", cfg.seed.to_string()),
        ("note", GEOMETRY_NOTE.to_string()),
    ]);
    if let Some(first) = records.first() {
        meta.push(("tap_provenance", first.provenance.to_string()));
    }
    let wall: f64 = records.iter().map(|r| r.wall_clock_s).sum();
    meta.push(("wall_clock_s", format!("{wall:.6}")));
    meta
}

fn cmd_ber(args: &BerArgs, file: &FileConfig, seed: u64, out: Option<&std::path::Path>) -> Result<()> {
    let resolved = resolve_experiment(args, file, seed)?;
    let cfg = &resolved.config;
    let record = match (&resolved.tap_file, &resolved.source) {
        (Some((taps, provenance)), _) => run_experiment(cfg, taps, *provenance)?,
        (None, Some(source)) => {
            let taps = source.build(cfg.scheme, &cfg.geometry)?;
            run_experiment(cfg, &taps, source.provenance())?
        }
        (None, None) => unreachable!("resolve_experiment always yields a tap source"),
    };
    let records = vec![record];
    let mut meta = experiment_meta(&resolved, &records);
    meta.insert(1, ("command", "ber".to_string()));
    with_output(out, |mut w| write_ber_csv(&records, &as_ref_meta(&meta), &mut w))
}

fn cmd_sweep(
    args: &SweepArgs,
    file: &FileConfig,
    seed: u64,
    out: Option<&std::path::Path>,
) -> Result<()> {
    // a sweep regenerates taps per point, so a fixed tap file cannot be used
    if let Some(label) = args.ber.taps.as_deref().or(file.taps.as_deref()) {
        if label != "analytic" && label != "fitted" {
            return Err(Error::InvalidConfig(
                "sweep regenerates taps per point; use --taps analytic or fitted".into(),
            ));
        }
    }
    // scheme/detector are placeholders here; the combo list below decides
    let mut base_args = args.ber.clone();
    let single_scheme = base_args.scheme.clone().or_else(|| file.scheme.clone());
    let single_detector = base_args.detector.clone().or_else(|| file.detector.clone());
    base_args.scheme = Some(single_scheme.clone().unwrap_or_else(|| "siso".into()));
    base_args.detector = Some(single_detector.clone().unwrap_or_else(|| "atd".into()));
    let resolved = resolve_experiment(&base_args, file, seed)?;
    let source = resolved
        .source
        .clone()
        .expect("tap file use rejected above");

    let axis = SweepAxis::from_str(&args.axis)?;
    let schemes: Vec<Scheme> = match (&args.schemes, &single_scheme) {
        (Some(list), _) => list.iter().map(|s| Scheme::from_str(s)).collect::<Result<_>>()?,
        (None, Some(one)) => vec![Scheme::from_str(one)?],
        (None, None) => Scheme::ALL.to_vec(),
    };
    let detectors: Vec<Detector> = match (&args.detectors, &single_detector) {
        (Some(list), _) => list.iter().map(|d| Detector::from_str(d)).collect::<Result<_>>()?,
        (None, Some(one)) => vec![Detector::from_str(one)?],
        (None, None) => Detector::ALL.to_vec(),
    };
    let combos: Vec<(Scheme, Detector)> = schemes
        .iter()
        .flat_map(|&s| detectors.iter().map(move |&d| (s, d)))
        .collect();

    let records = sweep(&resolved.config, &combos, axis, &args.values, &source)?;
    let mut meta = experiment_meta(&resolved, &records);
    meta.insert(1, ("command", "sweep".to_string()));
    meta.insert(2, ("axis", axis.to_string()));
    meta.insert(
        3,
        (
            "values",
            args.values
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        ),
    );
    with_output(out, |mut w| write_ber_csv(&records, &as_ref_meta(&meta), &mut w))
}
