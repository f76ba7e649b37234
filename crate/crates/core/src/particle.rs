//! Brownian random-walk Monte Carlo for hitting histograms and empirical
//! channel taps.
//!
//! Molecules take independent Gaussian steps with per-axis standard
//! deviation `sqrt(2 D dt)`. A molecule whose end-of-step position lies
//! inside any absorbing sphere is counted once for that sphere, in the time
//! bin containing the current time, and removed from the environment.
//! There is no intra-step bridge correction: with the default
//! `dt = 1e-4 s` the step scale (~0.14 µm for D = 100 µm²/s) is far below
//! the 5 µm receiver radius, and the resulting small negative bias in the
//! hitting probability stays within the statistical tolerances used
//! throughout. Molecules still diffusing at the simulation horizon are
//! discarded.
//!
//! Every molecule draws its trajectory from its own ChaCha8 stream keyed by
//! `(seed, molecule index)`, so results are bit-identical for any degree of
//! parallelism.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::report::parse_prefixed_csv;
use crate::taps::TapSet;

/// Default simulation time step (s).
pub const DEFAULT_DT: f64 = 1e-4;

/// Statistical floor for tap estimation.
pub const MIN_ESTIMATION_MOLECULES: u64 = 10_000;

/// An absorbing sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: [f64; 3], radius: f64) -> Self {
        Sphere { center, radius }
    }

    /// True when `point` lies inside or on the sphere.
    pub fn contains(&self, point: [f64; 3]) -> bool {
        let dx = point[0] - self.center[0];
        let dy = point[1] - self.center[1];
        let dz = point[2] - self.center[2];
        dx * dx + dy * dy + dz * dz <= self.radius * self.radius
    }
}

/// Propagation environment: point emitters and absorbing spheres in an
/// infinite fluid without drift.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub emitters: Vec<[f64; 3]>,
    pub absorbers: Vec<Sphere>,
    /// Diffusion coefficient `D` (µm²/s).
    pub diffusion: f64,
    /// Simulation time step (s).
    pub dt: f64,
    /// Total simulated time (s).
    pub horizon: f64,
}

impl Scene {
    /// Validates: positive `D` and `dt`, `horizon >= dt`, positive sphere
    /// radii, pairwise non-overlapping absorbers, and no emitter inside an
    /// absorber.
    pub fn new(
        emitters: Vec<[f64; 3]>,
        absorbers: Vec<Sphere>,
        diffusion: f64,
        dt: f64,
        horizon: f64,
    ) -> Result<Self> {
        let fail = |msg: String| Err(Error::InvalidScene(msg));
        if !(diffusion > 0.0) || !diffusion.is_finite() {
            return fail(format!("diffusion coefficient must be positive, got {diffusion}"));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return fail(format!("dt must be positive, got {dt}"));
        }
        if !(horizon >= dt) || !horizon.is_finite() {
            return fail(format!("horizon must be at least dt, got {horizon}"));
        }
        for (i, s) in absorbers.iter().enumerate() {
            if !(s.radius > 0.0) {
                return fail(format!("absorber {i} has non-positive radius {}", s.radius));
            }
        }
        for i in 0..absorbers.len() {
            for j in i + 1..absorbers.len() {
                let a = &absorbers[i];
                let b = &absorbers[j];
                let dist = distance(a.center, b.center);
                if dist < a.radius + b.radius {
                    return fail(format!(
                        "absorbers {i} and {j} overlap (center distance {dist}, radii {} + {})",
                        a.radius, b.radius
                    ));
                }
            }
        }
        for (e, pos) in emitters.iter().enumerate() {
            if let Some(a) = absorbers.iter().position(|s| s.contains(*pos)) {
                return fail(format!("emitter {e} lies inside absorber {a}"));
            }
        }
        Ok(Scene {
            emitters,
            absorbers,
            diffusion,
            dt,
            horizon,
        })
    }

    /// Single link: Tx at the origin, one absorbing sphere centered at
    /// `(d, 0, 0)`. Horizon covers the full channel memory, `(L+1) Ts`.
    pub fn siso(g: &Geometry, dt: f64) -> Result<Self> {
        g.validate()?;
        Scene::new(
            vec![[0.0; 3]],
            vec![Sphere::new([g.distance, 0.0, 0.0], g.radius)],
            g.diffusion,
            dt,
            g.tap_count() as f64 * g.symbol_duration,
        )
    }

    /// Symmetric 2x2 layout: Tx1 at the origin, Rx1 at `(d, 0, 0)`,
    /// Tx2 at `(0, a, 0)`, Rx2 at `(d, a, 0)`.
    pub fn symmetric_mimo(g: &Geometry, dt: f64) -> Result<Self> {
        g.validate()?;
        Scene::new(
            vec![[0.0; 3], [0.0, g.separation, 0.0]],
            vec![
                Sphere::new([g.distance, 0.0, 0.0], g.radius),
                Sphere::new([g.distance, g.separation, 0.0], g.radius),
            ],
            g.diffusion,
            dt,
            g.tap_count() as f64 * g.symbol_duration,
        )
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// First-arrival counts per absorber and time bin.
#[derive(Debug, Clone, PartialEq)]
pub struct HitHistogram {
    /// Time bin width (s); bin `b` covers `(b*w, (b+1)*w]`.
    pub bin_width: f64,
    /// `counts[absorber][bin]`.
    pub counts: Vec<Vec<u64>>,
    /// Number of molecules released.
    pub molecules: u64,
}

impl HitHistogram {
    pub fn absorber_count(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_count(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn total_absorbed(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Writes `absorber,bin,count` rows (1-based absorber index) preceded by
    /// `#`-prefixed metadata lines.
    pub fn write_csv<W: Write>(&self, meta: &[(&str, String)], w: &mut W) -> Result<()> {
        for (key, value) in meta {
            writeln!(w, "# {key}: {value}")?;
        }
        writeln!(w, "absorber,bin,count")?;
        for (a, bins) in self.counts.iter().enumerate() {
            for (b, count) in bins.iter().enumerate() {
                writeln!(w, "{},{},{}", a + 1, b, count)?;
            }
        }
        Ok(())
    }

    /// Reads a CSV produced by [`HitHistogram::write_csv`]. `bin_width` and
    /// `molecules` are recovered from the metadata keys of the same name.
    pub fn read_csv<R: BufRead>(r: R) -> Result<(Self, Vec<(String, String)>)> {
        let (meta, header, rows) = parse_prefixed_csv(r)?;
        if header != "absorber,bin,count" {
            return Err(Error::Parse(format!("unexpected histogram header: {header}")));
        }
        let get = |key: &str| {
            crate::report::meta_value(&meta, key)
                .ok_or_else(|| Error::Parse(format!("histogram CSV is missing `{key}` metadata")))
        };
        let bin_width: f64 = get("bin_width")?
            .parse()
            .map_err(|e| Error::Parse(format!("bin_width: {e}")))?;
        let molecules: u64 = get("molecules")?
            .parse()
            .map_err(|e| Error::Parse(format!("molecules: {e}")))?;
        let mut entries = Vec::with_capacity(rows.len());
        let mut absorber_max = 0usize;
        let mut bin_max = 0usize;
        for (n, row) in rows.iter().enumerate() {
            let fields: Vec<&str> = row.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Parse(format!("histogram row {n} has {} fields", fields.len())));
            }
            let absorber: usize = fields[0]
                .parse()
                .map_err(|e| Error::Parse(format!("histogram row {n} absorber: {e}")))?;
            let bin: usize = fields[1]
                .parse()
                .map_err(|e| Error::Parse(format!("histogram row {n} bin: {e}")))?;
            let count: u64 = fields[2]
                .parse()
                .map_err(|e| Error::Parse(format!("histogram row {n} count: {e}")))?;
            if absorber == 0 {
                return Err(Error::Parse(format!("histogram row {n}: absorbers are 1-based")));
            }
            absorber_max = absorber_max.max(absorber);
            bin_max = bin_max.max(bin);
            entries.push((absorber - 1, bin, count));
        }
        if entries.is_empty() {
            return Err(Error::Parse("histogram CSV has no data rows".into()));
        }
        let mut counts = vec![vec![0u64; bin_max + 1]; absorber_max];
        for (a, b, c) in entries {
            counts[a][b] = c;
        }
        Ok((
            HitHistogram {
                bin_width,
                counts,
                molecules,
            },
            meta,
        ))
    }
}

/// Releases `n_molecules` from `scene.emitters[source]` and histograms the
/// first arrivals at each absorber in bins of width `bin_width`.
///
/// `bin_width` must be an integer multiple of `scene.dt` so binning is
/// exact. Deterministic for a given `(scene, source, n_molecules, seed)`
/// and independent of the rayon thread count.
pub fn simulate_hits(
    scene: &Scene,
    source: usize,
    n_molecules: u64,
    bin_width: f64,
    seed: u64,
) -> Result<HitHistogram> {
    if n_molecules == 0 {
        return Err(Error::InvalidScene("at least one molecule is required".into()));
    }
    if source >= scene.emitters.len() {
        return Err(Error::IndexOutOfRange {
            what: "emitter",
            index: source,
            count: scene.emitters.len(),
        });
    }
    let steps_per_bin = exact_multiple(bin_width, scene.dt)?;
    let total_steps = (scene.horizon / scene.dt + 0.5).floor() as u64;
    let bins = total_steps.div_ceil(steps_per_bin) as usize;
    let origin = scene.emitters[source];
    let sigma = (2.0 * scene.diffusion * scene.dt).sqrt();
    let absorber_count = scene.absorbers.len();

    let zero = || vec![vec![0u64; bins]; absorber_count];
    let counts = (0..n_molecules)
        .into_par_iter()
        .fold(zero, |mut acc, molecule| {
            if let Some((absorber, bin)) =
                walk_molecule(scene, origin, sigma, total_steps, steps_per_bin, seed, molecule)
            {
                acc[absorber][bin] += 1;
            }
            acc
        })
        .reduce(zero, |mut a, b| {
            for (ra, rb) in a.iter_mut().zip(b) {
                for (ca, cb) in ra.iter_mut().zip(rb) {
                    *ca += cb;
                }
            }
            a
        });

    Ok(HitHistogram {
        bin_width,
        counts,
        molecules: n_molecules,
    })
}

/// One molecule trajectory; returns the absorbing sphere and time bin of the
/// first arrival, or `None` if the molecule outlives the horizon.
fn walk_molecule(
    scene: &Scene,
    origin: [f64; 3],
    sigma: f64,
    total_steps: u64,
    steps_per_bin: u64,
    seed: u64,
    molecule: u64,
) -> Option<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(molecule);
    let mut pos = origin;
    for step in 1..=total_steps {
        pos[0] += sigma * rng.sample::<f64, _>(StandardNormal);
        pos[1] += sigma * rng.sample::<f64, _>(StandardNormal);
        pos[2] += sigma * rng.sample::<f64, _>(StandardNormal);
        for (a, sphere) in scene.absorbers.iter().enumerate() {
            if sphere.contains(pos) {
                let bin = ((step - 1) / steps_per_bin) as usize;
                return Some((a, bin));
            }
        }
    }
    None
}

/// Checks that `value` is an integer multiple of `dt` and returns the
/// multiplier.
fn exact_multiple(value: f64, dt: f64) -> Result<u64> {
    if !(value > 0.0) {
        return Err(Error::MisalignedBinning {
            bin_width: value,
            dt,
        });
    }
    let ratio = value / dt;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * rounded {
        return Err(Error::MisalignedBinning {
            bin_width: value,
            dt,
        });
    }
    Ok(rounded as u64)
}

/// Empirical 2x2 tap estimates with per-tap binomial standard errors.
#[derive(Debug, Clone)]
pub struct EstimatedTaps {
    pub taps: TapSet,
    std_err: Vec<f64>, // same [rx][tx][lag] layout as TapSet
    lag_count: usize,
}

impl EstimatedTaps {
    /// Standard error `sqrt(h (1-h) / n)` of the tap estimate at
    /// `(rx, tx, lag)`, 0-based.
    pub fn std_err(&self, rx: usize, tx: usize, lag: usize) -> f64 {
        self.std_err[(rx * 2 + tx) * self.lag_count + lag]
    }
}

/// Estimates all four subchannels of the symmetric 2x2 scene by running the
/// random walk once per transmit antenna.
///
/// Each run derives its own seed from `(seed, source)`, so the two runs are
/// statistically independent while the whole estimate stays deterministic
/// in `seed`. Tap `h_{j,i}[l]` is the fraction of molecules from Tx `i`
/// absorbed by Rx `j` in bin `l`.
pub fn estimate_mimo_taps(
    g: &Geometry,
    n_molecules: u64,
    dt: f64,
    seed: u64,
) -> Result<EstimatedTaps> {
    if n_molecules < MIN_ESTIMATION_MOLECULES {
        return Err(Error::InvalidScene(format!(
            "tap estimation needs at least {MIN_ESTIMATION_MOLECULES} molecules, got {n_molecules}"
        )));
    }
    let scene = Scene::symmetric_mimo(g, dt)?;
    let lag_count = g.tap_count();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); 4]; // h11, h12, h21, h22
    for source in 0..2 {
        let hist = simulate_hits(
            &scene,
            source,
            n_molecules,
            g.symbol_duration,
            source_seed(seed, source),
        )?;
        for rx in 0..2 {
            let row: Vec<f64> = (0..lag_count)
                .map(|lag| hist.counts[rx][lag] as f64 / n_molecules as f64)
                .collect();
            rows[rx * 2 + source] = row;
        }
    }
    let n = n_molecules as f64;
    let std_err: Vec<f64> = rows
        .iter()
        .flat_map(|row| row.iter().map(|&h| (h * (1.0 - h) / n).sqrt()))
        .collect();
    let taps = TapSet::mimo(
        rows[0].clone(),
        rows[1].clone(),
        rows[2].clone(),
        rows[3].clone(),
    )?;
    Ok(EstimatedTaps {
        taps,
        std_err,
        lag_count,
    })
}

/// Derives the per-source simulation seed used by [`estimate_mimo_taps`].
pub fn source_seed(seed: u64, source: usize) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(source as u64 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_scene() -> Scene {
        Scene::siso(&Geometry::reference(), 1e-3).unwrap()
    }

    #[test]
    fn scene_invariants() {
        // overlapping absorbers
        let overlap = Scene::new(
            vec![[0.0; 3]],
            vec![
                Sphere::new([10.0, 0.0, 0.0], 5.0),
                Sphere::new([15.0, 0.0, 0.0], 5.0),
            ],
            100.0,
            1e-3,
            1.0,
        );
        assert!(overlap.is_err());
        // emitter inside an absorber
        let inside = Scene::new(
            vec![[10.0, 0.0, 0.0]],
            vec![Sphere::new([11.0, 0.0, 0.0], 5.0)],
            100.0,
            1e-3,
            1.0,
        );
        assert!(inside.is_err());
        assert!(Scene::new(vec![[0.0; 3]], vec![], 100.0, 1e-3, 1e-4).is_err()); // horizon < dt
    }

    #[test]
    fn binning_must_align_with_dt() {
        let scene = small_scene();
        assert!(matches!(
            simulate_hits(&scene, 0, 10, 0.0015, 1),
            Err(Error::MisalignedBinning { .. })
        ));
        assert!(simulate_hits(&scene, 0, 10, 0.6, 1).is_ok());
        assert!(matches!(
            simulate_hits(&scene, 0, 0, 0.6, 1),
            Err(Error::InvalidScene(_))
        ));
        assert!(matches!(
            simulate_hits(&scene, 1, 10, 0.6, 1),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn no_absorbers_means_no_hits() {
        let scene = Scene::new(vec![[0.0; 3]], vec![], 100.0, 1e-3, 0.5).unwrap();
        let hist = simulate_hits(&scene, 0, 500, 0.1, 7).unwrap();
        assert_eq!(hist.absorber_count(), 0);
        assert_eq!(hist.total_absorbed(), 0);
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        let scene = small_scene();
        let a = simulate_hits(&scene, 0, 2000, 0.6, 42).unwrap();
        let b = simulate_hits(&scene, 0, 2000, 0.6, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_hits(&scene, 0, 2000, 0.6, 43).unwrap();
        assert_ne!(a, c);
        // first passage only: at most one arrival per molecule
        assert!(a.total_absorbed() <= 2000);
        assert_eq!(a.bin_count(), 4);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let scene = small_scene();
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = pool1.install(|| simulate_hits(&scene, 0, 3000, 0.6, 9).unwrap());
        let b = pool4.install(|| simulate_hits(&scene, 0, 3000, 0.6, 9).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn histogram_csv_round_trip() {
        let hist = HitHistogram {
            bin_width: 0.6,
            counts: vec![vec![3, 1, 0, 2], vec![0, 0, 1, 0]],
            molecules: 10,
        };
        let mut buf = Vec::new();
        hist.write_csv(
            &[
                ("bin_width", "0.6".into()),
                ("molecules", "10".into()),
            ],
            &mut buf,
        )
        .unwrap();
        let (back, _) = HitHistogram::read_csv(&buf[..]).unwrap();
        assert_eq!(back, hist);
    }

    #[test]
    fn source_seeds_are_distinct() {
        assert_ne!(source_seed(5, 0), source_seed(5, 1));
        assert_ne!(source_seed(5, 0), 5);
    }
}
