//! Discrete channel taps for all subchannels of a link.
//!
//! `taps.tap(j, i, l)` is the probability that a molecule emitted by Tx `i`
//! at the start of slot 0 is absorbed by Rx `j` during slot `l`. Indices are
//! 0-based in the API; the CSV form uses the conventional 1-based antenna
//! numbering.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::report::{format_sig, parse_prefixed_csv};

/// Row-sum slack for accumulated rounding when validating `sum_l h[l] <= 1`.
const ROW_SUM_SLACK: f64 = 1e-12;

/// Channel coefficients `h_{j,i}[l]` for `j < rx_count`, `i < tx_count`,
/// `l <= memory`.
#[derive(Debug, Clone, PartialEq)]
pub struct TapSet {
    rx_count: usize,
    tx_count: usize,
    lag_count: usize,
    values: Vec<f64>, // [rx][tx][lag], row-major
}

impl TapSet {
    /// Builds a tap set from a flat `[rx][tx][lag]` value vector.
    ///
    /// Every tap must lie in `[0, 1]` and each `(rx, tx)` row must sum to
    /// at most 1 (a molecule is absorbed at most once).
    pub fn new(rx_count: usize, tx_count: usize, lag_count: usize, values: Vec<f64>) -> Result<Self> {
        if rx_count == 0 || tx_count == 0 || lag_count == 0 {
            return Err(Error::InvalidTaps(
                "rx, tx and lag counts must all be positive".into(),
            ));
        }
        if values.len() != rx_count * tx_count * lag_count {
            return Err(Error::InvalidTaps(format!(
                "expected {} values for a {}x{} set with {} lags, got {}",
                rx_count * tx_count * lag_count,
                rx_count,
                tx_count,
                lag_count,
                values.len()
            )));
        }
        let set = TapSet {
            rx_count,
            tx_count,
            lag_count,
            values,
        };
        for rx in 0..rx_count {
            for tx in 0..tx_count {
                let row = set.row(rx, tx);
                let mut sum = 0.0;
                for (lag, &h) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(&h) || !h.is_finite() {
                        return Err(Error::InvalidTaps(format!(
                            "h[{rx},{tx}][{lag}] = {h} is outside [0, 1]"
                        )));
                    }
                    sum += h;
                }
                if sum > 1.0 + ROW_SUM_SLACK {
                    return Err(Error::InvalidTaps(format!(
                        "taps for (rx {rx}, tx {tx}) sum to {sum} > 1"
                    )));
                }
            }
        }
        Ok(set)
    }

    /// Single-subchannel set (one Tx, one Rx).
    pub fn siso(row: Vec<f64>) -> Result<Self> {
        let lags = row.len();
        TapSet::new(1, 1, lags, row)
    }

    /// Symmetric 2x2 set with `h11 = h22 = direct` and `h12 = h21 = cross`.
    pub fn symmetric(direct: Vec<f64>, cross: Vec<f64>) -> Result<Self> {
        if direct.len() != cross.len() {
            return Err(Error::InvalidTaps(format!(
                "direct row has {} lags but cross row has {}",
                direct.len(),
                cross.len()
            )));
        }
        let lags = direct.len();
        let mut values = Vec::with_capacity(4 * lags);
        values.extend_from_slice(&direct); // h11
        values.extend_from_slice(&cross); // h12
        values.extend_from_slice(&cross); // h21
        values.extend_from_slice(&direct); // h22
        TapSet::new(2, 2, lags, values)
    }

    /// General 2x2 set from the four subchannel rows.
    pub fn mimo(h11: Vec<f64>, h12: Vec<f64>, h21: Vec<f64>, h22: Vec<f64>) -> Result<Self> {
        let lags = h11.len();
        if [&h12, &h21, &h22].iter().any(|r| r.len() != lags) {
            return Err(Error::InvalidTaps(
                "all four subchannel rows must have the same number of lags".into(),
            ));
        }
        let mut values = Vec::with_capacity(4 * lags);
        values.extend_from_slice(&h11);
        values.extend_from_slice(&h12);
        values.extend_from_slice(&h21);
        values.extend_from_slice(&h22);
        TapSet::new(2, 2, lags, values)
    }

    pub fn rx_count(&self) -> usize {
        self.rx_count
    }

    pub fn tx_count(&self) -> usize {
        self.tx_count
    }

    /// Number of lags, `L + 1`.
    pub fn lag_count(&self) -> usize {
        self.lag_count
    }

    /// Channel memory `L`.
    pub fn memory(&self) -> usize {
        self.lag_count - 1
    }

    /// `h_{rx,tx}[lag]` with 0-based indices.
    pub fn tap(&self, rx: usize, tx: usize, lag: usize) -> f64 {
        self.values[(rx * self.tx_count + tx) * self.lag_count + lag]
    }

    /// All lags of one subchannel.
    pub fn row(&self, rx: usize, tx: usize) -> &[f64] {
        let start = (rx * self.tx_count + tx) * self.lag_count;
        &self.values[start..start + self.lag_count]
    }

    /// Per-lag sum over transmit antennas for one receive antenna,
    /// `sum_i h_{rx,i}[l]`.
    pub fn combined_rx_row(&self, rx: usize) -> Vec<f64> {
        (0..self.lag_count)
            .map(|lag| (0..self.tx_count).map(|tx| self.tap(rx, tx, lag)).sum())
            .collect()
    }

    /// Writes `rx,tx,lag,prob` rows (1-based antennas, 12 significant
    /// digits) preceded by `#`-prefixed metadata lines.
    pub fn write_csv<W: Write>(&self, meta: &[(&str, String)], w: &mut W) -> Result<()> {
        for (key, value) in meta {
            writeln!(w, "# {key}: {value}")?;
        }
        writeln!(w, "rx,tx,lag,prob")?;
        for rx in 0..self.rx_count {
            for tx in 0..self.tx_count {
                for lag in 0..self.lag_count {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        rx + 1,
                        tx + 1,
                        lag,
                        format_sig(self.tap(rx, tx, lag), 12)
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Reads a CSV produced by [`TapSet::write_csv`]. Returns the set and
    /// the metadata key/value pairs.
    pub fn read_csv<R: BufRead>(r: R) -> Result<(Self, Vec<(String, String)>)> {
        let (meta, header, rows) = parse_prefixed_csv(r)?;
        if header != "rx,tx,lag,prob" {
            return Err(Error::Parse(format!("unexpected tap CSV header: {header}")));
        }
        let mut parsed = Vec::with_capacity(rows.len());
        let mut rx_max = 0usize;
        let mut tx_max = 0usize;
        let mut lag_max = 0usize;
        for (n, row) in rows.iter().enumerate() {
            let fields: Vec<&str> = row.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Parse(format!("tap row {n} has {} fields", fields.len())));
            }
            let rx: usize = fields[0]
                .parse()
                .map_err(|e| Error::Parse(format!("tap row {n} rx: {e}")))?;
            let tx: usize = fields[1]
                .parse()
                .map_err(|e| Error::Parse(format!("tap row {n} tx: {e}")))?;
            let lag: usize = fields[2]
                .parse()
                .map_err(|e| Error::Parse(format!("tap row {n} lag: {e}")))?;
            let prob: f64 = fields[3]
                .parse()
                .map_err(|e| Error::Parse(format!("tap row {n} prob: {e}")))?;
            if rx == 0 || tx == 0 {
                return Err(Error::Parse(format!("tap row {n}: antennas are 1-based")));
            }
            rx_max = rx_max.max(rx);
            tx_max = tx_max.max(tx);
            lag_max = lag_max.max(lag);
            parsed.push((rx - 1, tx - 1, lag, prob));
        }
        if parsed.is_empty() {
            return Err(Error::Parse("tap CSV has no data rows".into()));
        }
        let lag_count = lag_max + 1;
        let mut values = vec![f64::NAN; rx_max * tx_max * lag_count];
        for (rx, tx, lag, prob) in parsed {
            values[(rx * tx_max + tx) * lag_count + lag] = prob;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Parse(
                "tap CSV does not cover every (rx, tx, lag) combination".into(),
            ));
        }
        Ok((TapSet::new(rx_max, tx_max, lag_count, values)?, meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_row_sums() {
        assert!(TapSet::siso(vec![0.5, 0.6]).is_err()); // sums to 1.1
        assert!(TapSet::siso(vec![-0.1]).is_err());
        assert!(TapSet::siso(vec![1.1]).is_err());
        assert!(TapSet::siso(vec![0.5, 0.5]).is_ok()); // sums to exactly 1
    }

    #[test]
    fn symmetric_layout() {
        let set = TapSet::symmetric(vec![0.04, 0.03], vec![0.02, 0.01]).unwrap();
        assert_eq!(set.tap(0, 0, 0), 0.04);
        assert_eq!(set.tap(1, 1, 0), 0.04);
        assert_eq!(set.tap(0, 1, 1), 0.01);
        assert_eq!(set.tap(1, 0, 1), 0.01);
        assert_eq!(set.combined_rx_row(0), vec![0.06, 0.04]);
    }

    #[test]
    fn csv_round_trip() {
        let set = TapSet::symmetric(vec![0.042725880057699366, 0.04], vec![0.0227, 0.01]).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&[("model", "analytic".into())], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# model: analytic\nrx,tx,lag,prob\n"));
        let (back, meta) = TapSet::read_csv(&buf[..]).unwrap();
        assert_eq!(meta[0], ("model".to_string(), "analytic".to_string()));
        assert_eq!(back.rx_count(), 2);
        for rx in 0..2 {
            for tx in 0..2 {
                for lag in 0..2 {
                    let a = set.tap(rx, tx, lag);
                    let b = back.tap(rx, tx, lag);
                    assert!((a - b).abs() <= 1e-12 * a.max(1e-300), "{a} vs {b}");
                }
            }
        }
    }
}
