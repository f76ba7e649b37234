//! Nonlinear least-squares recovery of the response-function coefficients,
//! plus multilinear interpolation of fitted coefficients across a scenario
//! grid.
//!
//! The direct and cross responses are decoupled 3-parameter problems, each
//! solved by a damped Gauss-Newton (Levenberg-Marquardt) iteration with a
//! centrally differenced Jacobian. The initial guess is the closed-form
//! reduction point `(1, 0.5, 0.5)`.

use std::io::{BufRead, Write};

use crate::analytic::{response_shape, FitParams};
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::particle::HitHistogram;
use crate::report::{format_sig, parse_prefixed_csv};

/// Cumulative hit fraction of one absorber at each bin edge
/// `t = w, 2w, ...` where `w` is the histogram bin width.
pub fn empirical_cdf(hist: &HitHistogram, absorber: usize) -> Result<Vec<(f64, f64)>> {
    if absorber >= hist.absorber_count() {
        return Err(Error::IndexOutOfRange {
            what: "absorber",
            index: absorber,
            count: hist.absorber_count(),
        });
    }
    if hist.bin_count() == 0 || hist.molecules == 0 {
        return Err(Error::EmptyHistogram);
    }
    let n = hist.molecules as f64;
    let mut cumulative = 0u64;
    Ok(hist.counts[absorber]
        .iter()
        .enumerate()
        .map(|(bin, &count)| {
            cumulative += count;
            ((bin + 1) as f64 * hist.bin_width, cumulative as f64 / n)
        })
        .collect())
}

/// Iteration controls for the damped Gauss-Newton fit.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Hard iteration cap; exceeding it is a non-convergence error.
    pub max_iterations: usize,
    /// Convergence: accepted parameter step with `max |delta| <` this.
    pub step_tolerance: f64,
    /// Relative step for the central-difference Jacobian.
    pub jacobian_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 500,
            step_tolerance: 1e-10,
            jacobian_step: 1e-6,
        }
    }
}

/// Result of one 3-parameter curve fit.
#[derive(Debug, Clone)]
pub struct CurveFit {
    pub coeffs: [f64; 3],
    /// `sqrt(sum of squared residuals)` at the solution.
    pub residual_norm: f64,
    pub iterations: usize,
    /// Residual norm after each accepted iteration (starting value first);
    /// never increases.
    pub residual_history: Vec<f64>,
}

/// Both fits together with the combined, validated parameter set.
#[derive(Debug, Clone)]
pub struct ResponseFit {
    pub params: FitParams,
    pub direct: CurveFit,
    pub cross: CurveFit,
}

/// Fits `(b1, b2, b3)` to the direct CDF and `(b4, b5, b6)` to the cross
/// CDF with default [`FitOptions`]. Points are `(t, probability)` pairs
/// with `t > 0`; at least 4 points per CDF are required.
pub fn fit_response(
    g: &Geometry,
    direct: &[(f64, f64)],
    cross: &[(f64, f64)],
) -> Result<ResponseFit> {
    fit_response_with(g, direct, cross, &FitOptions::default())
}

/// [`fit_response`] with explicit iteration controls.
pub fn fit_response_with(
    g: &Geometry,
    direct: &[(f64, f64)],
    cross: &[(f64, f64)],
    opts: &FitOptions,
) -> Result<ResponseFit> {
    g.validate()?;
    let radius = g.radius;
    let diffusion = g.diffusion;
    let d_direct = g.distance;
    let d_cross = g.cross_distance();
    let direct_fit = fit_curve(
        |b, t| response_shape(b, d_direct, radius, diffusion, t),
        direct,
        opts,
    )?;
    let cross_fit = fit_curve(
        |b, t| response_shape(b, d_cross, radius, diffusion, t),
        cross,
        opts,
    )?;
    let params = FitParams::from_parts(direct_fit.coeffs, cross_fit.coeffs)?;
    Ok(ResponseFit {
        params,
        direct: direct_fit,
        cross: cross_fit,
    })
}

/// Sanity domain probed during iteration; mirrors the [`FitParams`] bounds
/// for one response.
fn in_domain(b: [f64; 3]) -> bool {
    b.iter().all(|v| v.is_finite()) && b[0] > 0.0 && b[2] > 0.0 && b[2] < 1.5
}

/// Damped Gauss-Newton minimization of `sum_i (model(b, t_i) - y_i)^2`.
pub fn fit_curve<M>(model: M, points: &[(f64, f64)], opts: &FitOptions) -> Result<CurveFit>
where
    M: Fn([f64; 3], f64) -> f64,
{
    if points.len() < 4 {
        return Err(Error::TooFewPoints {
            got: points.len(),
            need: 4,
        });
    }
    for &(t, y) in points {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::NonPositiveTime(t));
        }
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Parse(format!("CDF value {y} at t = {t} is outside [0, 1]")));
        }
    }

    let sse = |b: [f64; 3]| -> f64 {
        points
            .iter()
            .map(|&(t, y)| {
                let r = model(b, t) - y;
                r * r
            })
            .sum()
    };

    let mut b = [1.0, 0.5, 0.5];
    let mut current = sse(b);
    let mut damping = 1e-3;
    let mut history = vec![current.sqrt()];

    for iteration in 1..=opts.max_iterations {
        if current == 0.0 {
            return Ok(CurveFit {
                coeffs: b,
                residual_norm: 0.0,
                iterations: iteration - 1,
                residual_history: history,
            });
        }

        // centrally differenced Jacobian and normal equations
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for &(t, y) in points {
            let mut grad = [0.0f64; 3];
            for j in 0..3 {
                let h = opts.jacobian_step * b[j].abs().max(1e-8);
                let mut plus = b;
                plus[j] += h;
                let mut minus = b;
                minus[j] -= h;
                grad[j] = (model(plus, t) - model(minus, t)) / (2.0 * h);
            }
            let residual = model(b, t) - y;
            for j in 0..3 {
                jtr[j] += grad[j] * residual;
                for k in 0..3 {
                    jtj[j][k] += grad[j] * grad[k];
                }
            }
        }

        // inner damping loop: grow lambda until a step is accepted
        let mut accepted = false;
        for _ in 0..60 {
            let mut a = jtj;
            for j in 0..3 {
                a[j][j] += damping * jtj[j][j].max(1e-12);
            }
            let rhs = [-jtr[0], -jtr[1], -jtr[2]];
            let Some(delta) = solve3(a, rhs) else {
                damping *= 10.0;
                continue;
            };
            let candidate = [b[0] + delta[0], b[1] + delta[1], b[2] + delta[2]];
            if !in_domain(candidate) {
                damping *= 10.0;
                continue;
            }
            let next = sse(candidate);
            if next < current {
                let step = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
                b = candidate;
                current = next;
                history.push(current.sqrt());
                damping = (damping / 10.0).max(1e-14);
                accepted = true;
                if step < opts.step_tolerance {
                    return Ok(CurveFit {
                        coeffs: b,
                        residual_norm: current.sqrt(),
                        iterations: iteration,
                        residual_history: history,
                    });
                }
                break;
            }
            damping *= 10.0;
        }

        if !accepted {
            // no descent direction left: the iterate is a numerical minimum
            return Ok(CurveFit {
                coeffs: b,
                residual_norm: current.sqrt(),
                iterations: iteration,
                residual_history: history,
            });
        }
    }

    Err(Error::FitDidNotConverge {
        iterations: opts.max_iterations,
        residual: current.sqrt(),
        coeffs: b,
    })
}

/// 3x3 linear solve by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let factor = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0f64; 3];
    for col in (0..3).rev() {
        let mut sum = b[col];
        for k in col + 1..3 {
            sum -= a[col][k] * x[k];
        }
        x[col] = sum / a[col][col];
        if !x[col].is_finite() {
            return None;
        }
    }
    Some(x)
}

// ---------------------------------------------------------------------------
// Grid interpolation
// ---------------------------------------------------------------------------

const AXES: usize = 4; // d, a, r, D

fn axis_values(g: &Geometry) -> [f64; AXES] {
    [g.distance, g.separation, g.radius, g.diffusion]
}

const AXIS_NAMES: [&str; AXES] = ["d", "a", "r", "D"];

fn axis_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Multilinear interpolation of fitted coefficients over a rectilinear
/// `(d, a, r, D)` grid.
///
/// The table must contain one entry per grid node (every combination of the
/// distinct per-axis values). Queries outside the grid's bounding box are
/// refused rather than extrapolated; queries on a node return that node's
/// parameters exactly.
pub fn interpolate_params(table: &[(Geometry, FitParams)], query: &Geometry) -> Result<FitParams> {
    if table.is_empty() {
        return Err(Error::IncompleteGrid("table is empty".into()));
    }

    // distinct sorted values per axis
    let mut axes: [Vec<f64>; AXES] = Default::default();
    for (g, _) in table {
        for (axis, value) in axis_values(g).into_iter().enumerate() {
            if !axes[axis].iter().any(|&v| axis_eq(v, value)) {
                axes[axis].push(value);
            }
        }
    }
    for axis in axes.iter_mut() {
        axis.sort_by(f64::total_cmp);
    }
    let expected: usize = axes.iter().map(Vec::len).product();
    if table.len() != expected {
        return Err(Error::IncompleteGrid(format!(
            "grid needs {expected} nodes ({} x {} x {} x {} distinct d/a/r/D values), table has {}",
            axes[0].len(),
            axes[1].len(),
            axes[2].len(),
            axes[3].len(),
            table.len()
        )));
    }

    // node lookup keyed by per-axis indices
    let index_of = |axis: usize, value: f64| axes[axis].iter().position(|&v| axis_eq(v, value));
    let mut nodes: Vec<Option<&FitParams>> = vec![None; expected];
    let strides = {
        let mut s = [0usize; AXES];
        let mut acc = 1;
        for axis in (0..AXES).rev() {
            s[axis] = acc;
            acc *= axes[axis].len();
        }
        s
    };
    for (g, p) in table {
        let mut flat = 0;
        for (axis, value) in axis_values(g).into_iter().enumerate() {
            flat += strides[axis] * index_of(axis, value).expect("value collected above");
        }
        if nodes[flat].is_some() {
            return Err(Error::IncompleteGrid(format!(
                "duplicate grid node at d={}, a={}, r={}, D={}",
                g.distance, g.separation, g.radius, g.diffusion
            )));
        }
        nodes[flat] = Some(p);
    }

    // bracket the query on every axis
    let q = axis_values(query);
    let mut lower = [0usize; AXES];
    let mut weight = [0.0f64; AXES]; // blend toward the upper neighbor
    for axis in 0..AXES {
        let values = &axes[axis];
        let v = q[axis];
        if let Some(i) = values.iter().position(|&x| axis_eq(x, v)) {
            lower[axis] = i;
            weight[axis] = 0.0;
            continue;
        }
        if v < values[0] || v > *values.last().unwrap() || values.len() == 1 {
            return Err(Error::OutsideGrid(format!(
                "{} = {v} is outside the table range [{}, {}]",
                AXIS_NAMES[axis],
                values[0],
                values.last().unwrap()
            )));
        }
        let upper = values.iter().position(|&x| v < x).unwrap();
        lower[axis] = upper - 1;
        weight[axis] = (v - values[upper - 1]) / (values[upper] - values[upper - 1]);
    }

    // blend the 2^4 cell corners
    let mut coeffs = [0.0f64; 6];
    for corner in 0..(1usize << AXES) {
        let mut w = 1.0;
        let mut flat = 0;
        for axis in 0..AXES {
            let hi = (corner >> axis) & 1 == 1;
            w *= if hi { weight[axis] } else { 1.0 - weight[axis] };
            let idx = lower[axis] + usize::from(hi && weight[axis] > 0.0);
            flat += strides[axis] * idx;
        }
        if w == 0.0 {
            continue;
        }
        let p = nodes[flat].expect("complete grid");
        for (c, b) in coeffs.iter_mut().zip(p.as_array()) {
            *c += w * b;
        }
    }
    FitParams::new(coeffs)
}

// ---------------------------------------------------------------------------
// FitParams CSV table
// ---------------------------------------------------------------------------

const FIT_HEADER: &str = "d,a,r,D,b1,b2,b3,b4,b5,b6";

/// Writes one `d,a,r,D,b1..b6` row per scenario, preceded by `#` metadata.
pub fn write_fit_table<W: Write>(
    rows: &[(Geometry, FitParams)],
    meta: &[(&str, String)],
    w: &mut W,
) -> Result<()> {
    for (key, value) in meta {
        writeln!(w, "# {key}: {value}")?;
    }
    writeln!(w, "{FIT_HEADER}")?;
    for (g, p) in rows {
        let b = p.as_array();
        writeln!(
            w,
            "{},{},{},{},{}",
            format_sig(g.distance, 12),
            format_sig(g.separation, 12),
            format_sig(g.radius, 12),
            format_sig(g.diffusion, 12),
            b.map(|v| format_sig(v, 12)).join(",")
        )?;
    }
    Ok(())
}

/// Reads a table written by [`write_fit_table`]. The CSV does not carry
/// `Ts`/`L`, which do not affect the continuous-time responses, so the
/// caller supplies them for the reconstructed geometries.
pub fn read_fit_table<R: BufRead>(
    r: R,
    symbol_duration: f64,
    memory: usize,
) -> Result<(Vec<(Geometry, FitParams)>, Vec<(String, String)>)> {
    let (meta, header, rows) = parse_prefixed_csv(r)?;
    if header != FIT_HEADER {
        return Err(Error::Parse(format!("unexpected fit table header: {header}")));
    }
    let mut out = Vec::with_capacity(rows.len());
    for (n, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::Parse(format!("fit row {n} has {} fields", fields.len())));
        }
        let mut values = [0.0f64; 10];
        for (slot, field) in values.iter_mut().zip(&fields) {
            *slot = field
                .parse()
                .map_err(|e| Error::Parse(format!("fit row {n}: {e}")))?;
        }
        let g = Geometry::new(
            values[0],
            values[1],
            values[2],
            values[3],
            symbol_duration,
            memory,
        )?;
        let p = FitParams::new([
            values[4], values[5], values[6], values[7], values[8], values[9],
        ])?;
        out.push((g, p));
    }
    Ok((out, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::hitting_cdf_siso;
    use approx::assert_abs_diff_eq;

    #[test]
    fn empirical_cdf_running_sum() {
        let hist = HitHistogram {
            bin_width: 0.6,
            counts: vec![vec![100, 50, 25]],
            molecules: 1000,
        };
        let cdf = empirical_cdf(&hist, 0).unwrap();
        assert_eq!(cdf.len(), 3);
        assert_abs_diff_eq!(cdf[0].0, 0.6);
        assert_abs_diff_eq!(cdf[0].1, 0.100);
        assert_abs_diff_eq!(cdf[1].1, 0.150);
        assert_abs_diff_eq!(cdf[2].1, 0.175);
        // nondecreasing for any input
        assert!(cdf.windows(2).all(|w| w[1].1 >= w[0].1));
    }

    #[test]
    fn empirical_cdf_zero_and_errors() {
        let hist = HitHistogram {
            bin_width: 0.6,
            counts: vec![vec![0, 0, 0]],
            molecules: 100,
        };
        let cdf = empirical_cdf(&hist, 0).unwrap();
        assert!(cdf.iter().all(|&(_, p)| p == 0.0));
        assert!(empirical_cdf(&hist, 1).is_err());
    }

    #[test]
    fn recovers_known_parameters() {
        let g = Geometry::reference();
        let truth = [0.93, 0.48, 0.55];
        let points: Vec<(f64, f64)> = (1..=20)
            .map(|i| {
                let t = 0.15 * i as f64;
                (t, response_shape(truth, g.distance, g.radius, g.diffusion, t))
            })
            .collect();
        let fit = fit_curve(
            |b, t| response_shape(b, g.distance, g.radius, g.diffusion, t),
            &points,
            &FitOptions::default(),
        )
        .unwrap();
        for (got, want) in fit.coeffs.iter().zip(truth) {
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn exact_closed_form_recovers_reduction_point() {
        let g = Geometry::reference();
        let points: Vec<(f64, f64)> = (1..=12)
            .map(|i| {
                let t = 0.2 * i as f64;
                (t, hitting_cdf_siso(&g, t).unwrap())
            })
            .collect();
        let fit = fit_curve(
            |b, t| response_shape(b, g.distance, g.radius, g.diffusion, t),
            &points,
            &FitOptions::default(),
        )
        .unwrap();
        for (got, want) in fit.coeffs.iter().zip([1.0, 0.5, 0.5]) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        assert!(fit.residual_norm < 1e-10);
    }

    #[test]
    fn residual_history_is_monotone() {
        let g = Geometry::reference();
        // noisy-ish data still in the model family's neighborhood
        let points: Vec<(f64, f64)> = (1..=16)
            .map(|i| {
                let t = 0.2 * i as f64;
                let wiggle = 1.0 + 0.02 * if i % 2 == 0 { 1.0 } else { -1.0 };
                (
                    t,
                    (response_shape([0.9, 0.52, 0.47], g.distance, g.radius, g.diffusion, t)
                        * wiggle)
                        .min(1.0),
                )
            })
            .collect();
        let fit = fit_curve(
            |b, t| response_shape(b, g.distance, g.radius, g.diffusion, t),
            &points,
            &FitOptions::default(),
        )
        .unwrap();
        assert!(
            fit.residual_history.windows(2).all(|w| w[1] <= w[0]),
            "accepted residuals increased: {:?}",
            fit.residual_history
        );
    }

    #[test]
    fn iteration_cap_reports_best_so_far() {
        let g = Geometry::reference();
        let points: Vec<(f64, f64)> = (1..=20)
            .map(|i| {
                let t = 0.15 * i as f64;
                (t, response_shape([0.8, 0.6, 0.4], g.distance, g.radius, g.diffusion, t))
            })
            .collect();
        let opts = FitOptions {
            max_iterations: 1,
            ..FitOptions::default()
        };
        let err = fit_curve(
            |b, t| response_shape(b, g.distance, g.radius, g.diffusion, t),
            &points,
            &opts,
        )
        .unwrap_err();
        match err {
            Error::FitDidNotConverge {
                iterations,
                residual,
                coeffs,
            } => {
                assert_eq!(iterations, 1);
                assert!(residual.is_finite());
                assert!(in_domain(coeffs));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn fit_rejects_bad_input() {
        let g = Geometry::reference();
        let short = [(0.6, 0.1), (1.2, 0.2), (1.8, 0.3)];
        assert!(matches!(
            fit_response(&g, &short, &short),
            Err(Error::TooFewPoints { .. })
        ));
        let bad_t = [(0.0, 0.0), (0.6, 0.1), (1.2, 0.2), (1.8, 0.3)];
        assert!(fit_response(&g, &bad_t, &bad_t).is_err());
        let bad_y = [(0.6, 0.1), (1.2, 1.2), (1.8, 0.3), (2.4, 0.4)];
        assert!(fit_response(&g, &bad_y, &bad_y).is_err());
    }

    fn grid_geometry(d: f64, a: f64) -> Geometry {
        Geometry::new(d, a, 5.0, 100.0, 0.6, 3).unwrap()
    }

    fn grid_params(seed: f64) -> FitParams {
        FitParams::new([
            0.9 + 0.01 * seed,
            0.5 + 0.002 * seed,
            0.5 - 0.003 * seed,
            0.8 + 0.01 * seed,
            0.5 + 0.001 * seed,
            0.55 - 0.002 * seed,
        ])
        .unwrap()
    }

    fn grid_table() -> Vec<(Geometry, FitParams)> {
        let mut table = Vec::new();
        let mut k = 0.0;
        for &d in &[15.0, 20.0] {
            for &a in &[11.0, 13.0, 17.0] {
                table.push((grid_geometry(d, a), grid_params(k)));
                k += 1.0;
            }
        }
        table
    }

    #[test]
    fn interpolation_exact_on_nodes() {
        let table = grid_table();
        for (g, p) in &table {
            let q = interpolate_params(&table, g).unwrap();
            assert_eq!(q.as_array(), p.as_array());
        }
    }

    #[test]
    fn interpolation_midpoint_is_mean() {
        let table = grid_table();
        let q = grid_geometry(20.0, 12.0); // midway between a = 11 and a = 13
        let got = interpolate_params(&table, &q).unwrap().as_array();
        let lo = interpolate_params(&table, &grid_geometry(20.0, 11.0)).unwrap().as_array();
        let hi = interpolate_params(&table, &grid_geometry(20.0, 13.0)).unwrap().as_array();
        for i in 0..6 {
            assert_abs_diff_eq!(got[i], 0.5 * (lo[i] + hi[i]), epsilon = 1e-12);
        }
    }

    #[test]
    fn interpolation_continuous_at_interior_node() {
        let table = grid_table();
        let eps = 1e-7;
        let at = interpolate_params(&table, &grid_geometry(20.0, 13.0)).unwrap().as_array();
        let below = interpolate_params(&table, &grid_geometry(20.0, 13.0 - eps)).unwrap().as_array();
        let above = interpolate_params(&table, &grid_geometry(20.0, 13.0 + eps)).unwrap().as_array();
        for i in 0..6 {
            assert!((below[i] - at[i]).abs() < 1e-5);
            assert!((above[i] - at[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn interpolation_refuses_extrapolation_and_bad_grids() {
        let table = grid_table();
        assert!(matches!(
            interpolate_params(&table, &grid_geometry(20.0, 18.0)),
            Err(Error::OutsideGrid(_))
        ));
        assert!(matches!(
            interpolate_params(&table, &grid_geometry(14.0, 12.0)),
            Err(Error::OutsideGrid(_))
        ));
        // r is a degenerate axis: a differing query is out of hull
        let off_axis = Geometry::new(20.0, 12.0, 6.0, 100.0, 0.6, 3).unwrap();
        assert!(interpolate_params(&table, &off_axis).is_err());
        // incomplete grid
        let mut broken = grid_table();
        broken.pop();
        assert!(matches!(
            interpolate_params(&broken, &grid_geometry(20.0, 12.0)),
            Err(Error::IncompleteGrid(_))
        ));
    }

    #[test]
    fn fit_table_round_trip() {
        let rows = grid_table();
        let mut buf = Vec::new();
        write_fit_table(&rows, &[("provenance", "fitted".into())], &mut buf).unwrap();
        let (back, meta) = read_fit_table(&buf[..], 0.6, 3).unwrap();
        assert_eq!(back.len(), rows.len());
        assert_eq!(meta[0].0, "provenance");
        for ((g0, p0), (g1, p1)) in rows.iter().zip(&back) {
            assert_eq!(g0.distance, g1.distance);
            assert_eq!(g0.separation, g1.separation);
            for (a, b) in p0.as_array().iter().zip(p1.as_array()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
