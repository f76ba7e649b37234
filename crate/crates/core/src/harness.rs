//! Seeded Monte Carlo BER experiments and parameter sweeps.
//!
//! One experiment runs `R` independent channel realizations of `K` random
//! bits each. Realization `r` draws everything it needs from its own ChaCha8
//! stream `(master seed, r)`, so the aggregate is deterministic in the
//! master seed and independent of how realizations are scheduled across
//! threads.
//!
//! For a fair power comparison the SISO scheme releases `2N` molecules per
//! ON symbol when `power_normalized` is set (two antennas' worth), while
//! each MIMO antenna releases `N`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::analytic::{fitted_siso_taps, siso_taps, symmetric_mimo_taps, FitParams};
use crate::detect::{alamouti_mlse_detect, atd_detect, mlse_detect, EffectiveChannel};
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::link::{
    channel_expectation, channel_transmit, egc_combine, encode_alamouti, encode_repetition,
    encode_siso, ook_map, random_bits,
};
use crate::report::format_sig;
use crate::taps::TapSet;

/// Spatial transmission scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Siso,
    Repetition,
    Alamouti,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Siso, Scheme::Repetition, Scheme::Alamouti];

    pub fn is_mimo(self) -> bool {
        !matches!(self, Scheme::Siso)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Siso => "siso",
            Scheme::Repetition => "repetition",
            Scheme::Alamouti => "alamouti",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "siso" => Ok(Scheme::Siso),
            "repetition" => Ok(Scheme::Repetition),
            "alamouti" => Ok(Scheme::Alamouti),
            other => Err(Error::Parse(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Detection algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detector {
    Atd,
    Mlse,
}

impl Detector {
    pub const ALL: [Detector; 2] = [Detector::Atd, Detector::Mlse];
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Detector::Atd => "atd",
            Detector::Mlse => "mlse",
        })
    }
}

impl FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "atd" => Ok(Detector::Atd),
            "mlse" => Ok(Detector::Mlse),
            other => Err(Error::Parse(format!("unknown detector `{other}`"))),
        }
    }
}

/// Where the channel taps of an experiment came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapProvenance {
    Analytic,
    Fitted,
    Particle,
}

impl fmt::Display for TapProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TapProvenance::Analytic => "analytic",
            TapProvenance::Fitted => "fitted",
            TapProvenance::Particle => "particle",
        })
    }
}

impl FromStr for TapProvenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(TapProvenance::Analytic),
            "fitted" => Ok(TapProvenance::Fitted),
            "particle" => Ok(TapProvenance::Particle),
            other => Err(Error::Parse(format!("unknown tap provenance `{other}`"))),
        }
    }
}

/// One BER experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub detector: Detector,
    pub geometry: Geometry,
    /// Molecules `N` per ON symbol per antenna (MIMO baseline).
    pub molecules: u64,
    /// Bits per realization `K`.
    pub bits_per_frame: usize,
    /// Number of realizations `R`.
    pub realizations: usize,
    pub seed: u64,
    /// SISO releases `2N` per ON symbol when set.
    pub power_normalized: bool,
    /// Replace binomial sampling by rounded expected counts (detector
    /// oracle tests only; flagged in all outputs).
    pub expectation_mode: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.molecules == 0 {
            return Err(Error::InvalidConfig("N must be at least 1".into()));
        }
        if self.bits_per_frame < self.geometry.memory + 1 {
            return Err(Error::InvalidConfig(format!(
                "K = {} is below the channel memory L + 1 = {}",
                self.bits_per_frame,
                self.geometry.memory + 1
            )));
        }
        if self.realizations == 0 {
            return Err(Error::InvalidConfig("R must be at least 1".into()));
        }
        Ok(())
    }

    /// Molecules actually released per ON symbol: `2N` for power-normalized
    /// SISO, `N` otherwise.
    pub fn effective_molecules(&self) -> u64 {
        if self.scheme == Scheme::Siso && self.power_normalized {
            2 * self.molecules
        } else {
            self.molecules
        }
    }
}

/// Outcome of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct BerRecord {
    pub scheme: Scheme,
    pub detector: Detector,
    /// Effective molecules per ON symbol (after power normalization).
    pub molecules: u64,
    pub separation: f64,
    pub diffusion: f64,
    pub symbol_duration: f64,
    pub memory: usize,
    pub bits: u64,
    pub errors: u64,
    pub ber: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed: u64,
    pub provenance: TapProvenance,
    pub expectation_mode: bool,
    /// Not part of the CSV rows; surfaces only in metadata.
    pub wall_clock_s: f64,
}

const WILSON_Z: f64 = 1.959963984540054; // 95%

/// Wilson score interval for `errors` successes in `trials` Bernoulli
/// trials at 95% confidence.
pub fn wilson_interval(errors: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn check_taps(cfg: &ExperimentConfig, taps: &TapSet) -> Result<()> {
    let (want_rx, want_tx) = if cfg.scheme.is_mimo() { (2, 2) } else { (1, 1) };
    if taps.rx_count() != want_rx || taps.tx_count() != want_tx {
        return Err(Error::InvalidConfig(format!(
            "{} experiments need a {want_rx}x{want_tx} tap set, got {}x{}",
            cfg.scheme,
            taps.rx_count(),
            taps.tx_count()
        )));
    }
    if taps.memory() != cfg.geometry.memory {
        return Err(Error::InvalidConfig(format!(
            "tap set has memory {} but the geometry says L = {}",
            taps.memory(),
            cfg.geometry.memory
        )));
    }
    Ok(())
}

/// Runs the full `K x R` Monte Carlo experiment.
///
/// Error counting compares the first `K` detected bits against the `K`
/// transmitted data bits, so an Alamouti pad bit is never counted. The
/// record is bit-identical across repeated calls and thread counts.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    taps: &TapSet,
    provenance: TapProvenance,
) -> Result<BerRecord> {
    cfg.validate()?;
    check_taps(cfg, taps)?;
    let n_eff = cfg.effective_molecules();
    let detector_channel = match (cfg.detector, cfg.scheme) {
        (Detector::Atd, _) => None,
        (Detector::Mlse, Scheme::Siso) => Some(EffectiveChannel::siso(taps, n_eff)?),
        (Detector::Mlse, Scheme::Repetition) => {
            Some(EffectiveChannel::repetition_egc(taps, cfg.molecules)?)
        }
        (Detector::Mlse, Scheme::Alamouti) => {
            Some(EffectiveChannel::alamouti_combined(taps, cfg.molecules)?)
        }
    };

    let start = Instant::now();
    let k = cfg.bits_per_frame;
    let per_realization: Vec<u64> = (0..cfg.realizations as u64)
        .into_par_iter()
        .map(|realization| -> Result<u64> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(realization);
            let bits = random_bits(k, &mut rng);
            let channel_seed: u64 = rng.random();

            let matrix = match cfg.scheme {
                Scheme::Siso => encode_siso(ook_map(&bits, n_eff)?),
                Scheme::Repetition => encode_repetition(&ook_map(&bits, cfg.molecules)?),
                Scheme::Alamouti => {
                    encode_alamouti(&ook_map(&bits, cfg.molecules)?, cfg.molecules)?.matrix
                }
            };
            let slots = matrix.slot_count();
            let rx = if cfg.expectation_mode {
                channel_expectation(&matrix, taps)?
            } else {
                channel_transmit(&matrix, taps, channel_seed)?
            };
            let combined = egc_combine(&rx)?;
            let observed = &combined[..slots]; // guard slots carry no data

            let detected = match (cfg.detector, cfg.scheme) {
                (Detector::Atd, _) => atd_detect(observed),
                (Detector::Mlse, Scheme::Alamouti) => {
                    alamouti_mlse_detect(observed, detector_channel.as_ref().unwrap())?
                }
                (Detector::Mlse, _) => mlse_detect(observed, detector_channel.as_ref().unwrap()),
            };

            let errors = bits
                .iter()
                .zip(detected.iter())
                .filter(|(tx, rx)| tx != rx)
                .count() as u64;
            Ok(errors)
        })
        .collect::<Result<_>>()?;

    let errors: u64 = per_realization.iter().sum();
    let bits = (k * cfg.realizations) as u64;
    let (ci_low, ci_high) = wilson_interval(errors, bits);
    Ok(BerRecord {
        scheme: cfg.scheme,
        detector: cfg.detector,
        molecules: n_eff,
        separation: cfg.geometry.separation,
        diffusion: cfg.geometry.diffusion,
        symbol_duration: cfg.geometry.symbol_duration,
        memory: cfg.geometry.memory,
        bits,
        errors,
        ber: errors as f64 / bits as f64,
        ci_low,
        ci_high,
        seed: cfg.seed,
        provenance,
        expectation_mode: cfg.expectation_mode,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

/// How sweeps (and the CLI) obtain taps for a scheme and geometry.
#[derive(Debug, Clone)]
pub enum TapSource {
    /// Closed-form responses (cross links use the isolated-sphere form at
    /// distance `d'`).
    Analytic,
    /// Response functions with fitted coefficients.
    Fitted(FitParams),
}

impl TapSource {
    pub fn provenance(&self) -> TapProvenance {
        match self {
            TapSource::Analytic => TapProvenance::Analytic,
            TapSource::Fitted(_) => TapProvenance::Fitted,
        }
    }

    /// Builds the tap set an experiment of `scheme` needs at geometry `g`.
    pub fn build(&self, scheme: Scheme, g: &Geometry) -> Result<TapSet> {
        match (self, scheme) {
            (TapSource::Analytic, Scheme::Siso) => siso_taps(g),
            (TapSource::Analytic, _) => symmetric_mimo_taps(g, &FitParams::analytic()),
            (TapSource::Fitted(p), Scheme::Siso) => fitted_siso_taps(g, p),
            (TapSource::Fitted(p), _) => symmetric_mimo_taps(g, p),
        }
    }
}

/// Sweep axis; `N` varies the molecule count, `a` the antenna separation,
/// `D` the diffusion coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Molecules,
    Separation,
    Diffusion,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Molecules => "N",
            SweepAxis::Separation => "a",
            SweepAxis::Diffusion => "D",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "N" => Ok(SweepAxis::Molecules),
            "a" => Ok(SweepAxis::Separation),
            "D" => Ok(SweepAxis::Diffusion),
            other => Err(Error::Parse(format!("unknown sweep axis `{other}` (use N, a or D)"))),
        }
    }
}

/// Runs `run_experiment` for every sweep value and requested
/// (scheme, detector) combination, in that order (values outermost).
/// Taps are rebuilt from `source` at every point, so geometry changes take
/// effect; the master seed is shared across points, which reuses the same
/// bit sequences for a lower-variance comparison along the axis.
pub fn sweep(
    base: &ExperimentConfig,
    combos: &[(Scheme, Detector)],
    axis: SweepAxis,
    values: &[f64],
    source: &TapSource,
) -> Result<Vec<BerRecord>> {
    if combos.is_empty() || values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value and one combination".into()));
    }
    let mut records = Vec::with_capacity(values.len() * combos.len());
    for &value in values {
        for &(scheme, detector) in combos {
            let mut cfg = base.clone();
            cfg.scheme = scheme;
            cfg.detector = detector;
            match axis {
                SweepAxis::Molecules => {
                    if !(value >= 1.0) || value.fract() != 0.0 {
                        return Err(Error::InvalidConfig(format!(
                            "N sweep values must be positive integers, got {value}"
                        )));
                    }
                    cfg.molecules = value as u64;
                }
                SweepAxis::Separation => {
                    cfg.geometry.separation = value;
                    cfg.geometry.validate()?;
                }
                SweepAxis::Diffusion => {
                    cfg.geometry.diffusion = value;
                    cfg.geometry.validate()?;
                }
            }
            let taps = source.build(scheme, &cfg.geometry)?;
            records.push(run_experiment(&cfg, &taps, source.provenance())?);
        }
    }
    Ok(records)
}

/// BER CSV header.
pub const BER_HEADER: &str = "scheme,detector,N,a,D,Ts,L,bits,errors,ber,ci_low,ci_high,seed";

/// Writes BER records as CSV (floats at 6 significant digits) behind a
/// `#`-prefixed metadata block. Wall-clock time is deliberately absent from
/// the rows; emit it as a metadata line if needed so outputs stay
/// byte-comparable.
pub fn write_ber_csv<W: Write>(
    records: &[BerRecord],
    meta: &[(&str, String)],
    w: &mut W,
) -> Result<()> {
    for (key, value) in meta {
        writeln!(w, "# {key}: {value}")?;
    }
    writeln!(w, "{BER_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scheme,
            r.detector,
            r.molecules,
            format_sig(r.separation, 6),
            format_sig(r.diffusion, 6),
            format_sig(r.symbol_duration, 6),
            r.memory,
            r.bits,
            r.errors,
            format_sig(r.ber, 6),
            format_sig(r.ci_low, 6),
            format_sig(r.ci_high, 6),
            r.seed
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            scheme: Scheme::Siso,
            detector: Detector::Atd,
            geometry: Geometry::reference(),
            molecules: 1000,
            bits_per_frame: 500,
            realizations: 4,
            seed: 42,
            power_normalized: true,
            expectation_mode: false,
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = base_config();
        cfg.bits_per_frame = 3; // below L + 1 = 4
        assert!(cfg.validate().is_err());
        cfg.bits_per_frame = 4;
        cfg.realizations = 0;
        assert!(cfg.validate().is_err());
        cfg.realizations = 1;
        cfg.molecules = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn power_normalization_doubles_siso() {
        let cfg = base_config();
        assert_eq!(cfg.effective_molecules(), 2000);
        let mut rep = base_config();
        rep.scheme = Scheme::Repetition;
        assert_eq!(rep.effective_molecules(), 1000);
        let mut raw = base_config();
        raw.power_normalized = false;
        assert_eq!(raw.effective_molecules(), 1000);
    }

    #[test]
    fn zero_taps_atd_gives_coin_flip_ber() {
        let cfg = base_config();
        let taps = TapSet::siso(vec![0.0; 4]).unwrap();
        let record = run_experiment(&cfg, &taps, TapProvenance::Analytic).unwrap();
        // all-silent channel: ATD outputs zeros, errors = number of 1 bits
        let n = record.bits as f64;
        let sd = (0.25 * n).sqrt();
        assert!(
            (record.errors as f64 - 0.5 * n).abs() < 3.0 * sd,
            "errors {} out of band around {}",
            record.errors,
            0.5 * n
        );
        assert_eq!(record.bits, 2000);
        assert!(record.ci_low <= record.ber && record.ber <= record.ci_high);
    }

    #[test]
    fn expectation_mode_mlse_is_error_free() {
        for scheme in Scheme::ALL {
            let mut cfg = base_config();
            cfg.scheme = scheme;
            cfg.detector = Detector::Mlse;
            cfg.expectation_mode = true;
            cfg.bits_per_frame = 64;
            cfg.realizations = 2;
            let source = TapSource::Analytic;
            let taps = source.build(scheme, &cfg.geometry).unwrap();
            let record = run_experiment(&cfg, &taps, source.provenance()).unwrap();
            assert_eq!(record.errors, 0, "{scheme} should decode its own expectation");
        }
    }

    #[test]
    fn records_are_deterministic_and_thread_independent() {
        let mut cfg = base_config();
        cfg.scheme = Scheme::Repetition;
        cfg.detector = Detector::Mlse;
        cfg.bits_per_frame = 200;
        cfg.realizations = 6;
        let taps = TapSource::Analytic.build(Scheme::Repetition, &cfg.geometry).unwrap();
        let reference = run_experiment(&cfg, &taps, TapProvenance::Analytic).unwrap();
        for threads in [1usize, 3] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            let record =
                pool.install(|| run_experiment(&cfg, &taps, TapProvenance::Analytic).unwrap());
            assert_eq!(record.errors, reference.errors);
            assert_eq!(record.ber, reference.ber);
        }
    }

    #[test]
    fn alamouti_pad_bit_is_not_counted() {
        let mut cfg = base_config();
        cfg.scheme = Scheme::Alamouti;
        cfg.detector = Detector::Mlse;
        cfg.bits_per_frame = 7; // odd: encoder pads to 8 slots
        cfg.realizations = 3;
        cfg.expectation_mode = true;
        let taps = TapSource::Analytic.build(Scheme::Alamouti, &cfg.geometry).unwrap();
        let record = run_experiment(&cfg, &taps, TapProvenance::Analytic).unwrap();
        assert_eq!(record.bits, 21); // 7 bits x 3 realizations, no pad
        assert_eq!(record.errors, 0);
    }

    #[test]
    fn realizations_use_distinct_streams() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        a.set_stream(0);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        b.set_stream(1);
        assert_ne!(random_bits(64, &mut a), random_bits(64, &mut b));
    }

    #[test]
    fn wilson_interval_basics() {
        let (lo, hi) = wilson_interval(0, 1000);
        assert!(lo.abs() < 1e-12, "zero-error lower bound is {lo}");
        assert!(hi > 0.0 && hi < 0.01);
        let (lo, hi) = wilson_interval(500, 1000);
        assert!(lo < 0.5 && 0.5 < hi);
        assert!(hi - 0.5 < 0.04);
        let (lo, hi) = wilson_interval(1000, 1000);
        assert!(lo > 0.99);
        assert!(hi > 1.0 - 1e-12);
    }

    #[test]
    fn sweep_order_and_cardinality() {
        let mut base = base_config();
        base.bits_per_frame = 50;
        base.realizations = 2;
        let combos = [
            (Scheme::Siso, Detector::Atd),
            (Scheme::Repetition, Detector::Atd),
        ];
        let records = sweep(
            &base,
            &combos,
            SweepAxis::Molecules,
            &[500.0, 1000.0],
            &TapSource::Analytic,
        )
        .unwrap();
        assert_eq!(records.len(), 4);
        // value-major order
        assert_eq!(records[0].molecules, 1000); // siso, power normalized 2 * 500
        assert_eq!(records[0].scheme, Scheme::Siso);
        assert_eq!(records[1].molecules, 500);
        assert_eq!(records[1].scheme, Scheme::Repetition);
        assert_eq!(records[2].molecules, 2000);
        assert_eq!(records[3].molecules, 1000);
        // fractional N refused
        assert!(sweep(
            &base,
            &combos,
            SweepAxis::Molecules,
            &[500.5],
            &TapSource::Analytic
        )
        .is_err());
        // invalid separation refused
        assert!(sweep(
            &base,
            &combos,
            SweepAxis::Separation,
            &[-2.0],
            &TapSource::Analytic
        )
        .is_err());
    }

    #[test]
    fn ber_csv_shape() {
        let mut cfg = base_config();
        cfg.bits_per_frame = 50;
        cfg.realizations = 2;
        let taps = TapSource::Analytic.build(Scheme::Siso, &cfg.geometry).unwrap();
        let record = run_experiment(&cfg, &taps, TapProvenance::Analytic).unwrap();
        let mut buf = Vec::new();
        write_ber_csv(&[record], &[("seed", "42".into())], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# seed: 42");
        assert_eq!(lines.next().unwrap(), BER_HEADER);
        let row = lines.next().unwrap();
        assert!(row.starts_with("siso,atd,2000,11.0000,100.000,0.600000,3,100,"));
    }
}
