//! Link-level simulation of diffusion-based molecular communication with
//! spatial diversity.
//!
//! The crate models a symmetric 2x2 molecular MIMO link (plus its SISO
//! baseline) end to end:
//!
//! * [`analytic`] — closed-form SISO hitting probability, fitted MIMO
//!   response functions and tap extraction;
//! * [`particle`] — Brownian random-walk Monte Carlo for empirical hitting
//!   histograms and tap estimates;
//! * [`fit`] — nonlinear least-squares recovery of the response
//!   coefficients and interpolation across scenario grids;
//! * [`link`] — OOK mapping, repetition and Alamouti-type spatial coding,
//!   the binomial counting channel and equal-gain combining;
//! * [`detect`] — adaptive threshold detection and MLSE (Viterbi and
//!   exhaustive oracles, including the joint two-slot Alamouti form);
//! * [`harness`] — seeded, thread-count-independent Monte Carlo BER
//!   experiments and parameter sweeps.
//!
//! Everything randomized is driven by ChaCha8 streams keyed by explicit
//! seeds, so identical inputs give bit-identical outputs regardless of
//! parallelism.

pub mod analytic;
pub mod detect;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod harness;
pub mod link;
pub mod particle;
pub mod report;
pub mod taps;

pub use analytic::{
    fitted_cdf_cross, fitted_cdf_direct, fitted_siso_taps, hitting_cdf_siso, siso_taps,
    symmetric_mimo_taps, taps_from_cdf, FitParams,
};
pub use detect::{
    alamouti_mlse_bruteforce, alamouti_mlse_detect, atd_detect, mlse_branch_metric,
    mlse_bruteforce, mlse_detect, path_metric, EffectiveChannel,
};
pub use error::{Error, Result};
pub use fit::{
    empirical_cdf, fit_response, fit_response_with, interpolate_params, read_fit_table,
    write_fit_table, CurveFit, FitOptions, ResponseFit,
};
pub use geometry::Geometry;
pub use harness::{
    run_experiment, sweep, wilson_interval, write_ber_csv, BerRecord, Detector, ExperimentConfig,
    Scheme, SweepAxis, TapProvenance, TapSource,
};
pub use link::{
    channel_expectation, channel_transmit, egc_combine, encode_alamouti, encode_repetition,
    encode_siso, expected_rx, ook_map, random_bits, AlamoutiFrame, RxSeries, TransmitMatrix,
};
pub use particle::{
    estimate_mimo_taps, simulate_hits, EstimatedTaps, HitHistogram, Scene, Sphere, DEFAULT_DT,
};
pub use report::{format_sig, GEOMETRY_NOTE, TOOL_VERSION};
pub use taps::TapSet;
