//! OOK modulation, spatial encoding, the binomial discrete-time channel and
//! equal-gain combining.
//!
//! Bits are `u8` values in `{0, 1}`. An ON symbol releases `N` molecules at
//! the start of its slot, an OFF symbol releases none. The number of
//! molecules received by antenna `j` in slot `k` is a sum of independent
//! binomial draws, one per transmit antenna and channel lag:
//!
//! ```text
//! y_j[k] ~ sum_i sum_l Binomial(x_i[k-l], h_{j,i}[l])      x at k < 0 is 0
//! ```
//!
//! Every frame is followed by `L` silent guard slots so the trailing
//! dispersion of the last symbols is still observed; the emitted series
//! therefore has `slots + L` entries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::taps::TapSet;

/// Draws `k` independent uniform bits.
pub fn random_bits<R: Rng>(k: usize, rng: &mut R) -> Vec<u8> {
    (0..k).map(|_| u8::from(rng.random_bool(0.5))).collect()
}

/// OOK mapping: bit 1 becomes `molecules`, bit 0 becomes 0.
pub fn ook_map(bits: &[u8], molecules: u64) -> Result<Vec<u64>> {
    if molecules == 0 {
        return Err(Error::InvalidConfig(
            "OOK needs at least one molecule per ON symbol".into(),
        ));
    }
    bits.iter()
        .enumerate()
        .map(|(position, &bit)| match bit {
            0 => Ok(0),
            1 => Ok(molecules),
            value => Err(Error::InvalidBit { value, position }),
        })
        .collect()
}

/// Per-slot emission counts of every transmit antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitMatrix {
    rows: Vec<Vec<u64>>, // rows[antenna][slot]
}

impl TransmitMatrix {
    pub fn new(rows: Vec<Vec<u64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidConfig("at least one antenna row required".into()));
        }
        let slots = rows[0].len();
        if rows.iter().any(|r| r.len() != slots) {
            return Err(Error::LengthMismatch(
                "antenna rows must all have the same slot count".into(),
            ));
        }
        Ok(TransmitMatrix { rows })
    }

    pub fn antenna_count(&self) -> usize {
        self.rows.len()
    }

    pub fn slot_count(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, antenna: usize) -> &[u64] {
        &self.rows[antenna]
    }

    /// Emission at `(antenna, slot)`; slots before the frame are silent.
    fn emission(&self, antenna: usize, slot: isize) -> u64 {
        if slot < 0 || slot as usize >= self.slot_count() {
            0
        } else {
            self.rows[antenna][slot as usize]
        }
    }
}

/// Single-antenna frame.
pub fn encode_siso(symbols: Vec<u64>) -> TransmitMatrix {
    TransmitMatrix { rows: vec![symbols] }
}

/// Repetition coding: both antennas transmit the same symbol in the same
/// slot, `x1[k] = x2[k] = s_k`.
pub fn encode_repetition(symbols: &[u64]) -> TransmitMatrix {
    TransmitMatrix {
        rows: vec![symbols.to_vec(), symbols.to_vec()],
    }
}

/// Alamouti-type frame plus a flag recording whether a trailing pad symbol
/// was appended to make the length even.
#[derive(Debug, Clone, PartialEq)]
pub struct AlamoutiFrame {
    pub matrix: TransmitMatrix,
    pub padded: bool,
}

/// Alamouti-type coding for non-negative symbols.
///
/// The classical code's negation and conjugation have no molecular
/// counterpart, so negated entries are replaced by `N - s`: for each symbol
/// pair `(s_k, s_{k+1})` slot `k` transmits `(s_k, s_{k+1})` and slot `k+1`
/// transmits `(N - s_{k+1}, s_k)`. Note that an all-zero pair still emits
/// `N` molecules in its second slot. Odd-length input is padded with a
/// trailing OFF symbol.
pub fn encode_alamouti(symbols: &[u64], molecules: u64) -> Result<AlamoutiFrame> {
    for (position, &s) in symbols.iter().enumerate() {
        if s != 0 && s != molecules {
            return Err(Error::InvalidSymbol {
                value: s,
                position,
                molecules,
            });
        }
    }
    let mut s = symbols.to_vec();
    let padded = s.len() % 2 == 1;
    if padded {
        s.push(0);
    }
    let slots = s.len();
    let mut tx1 = Vec::with_capacity(slots);
    let mut tx2 = Vec::with_capacity(slots);
    for pair in s.chunks_exact(2) {
        let (first, second) = (pair[0], pair[1]);
        tx1.push(first);
        tx2.push(second);
        tx1.push(molecules - second);
        tx2.push(first);
    }
    Ok(AlamoutiFrame {
        matrix: TransmitMatrix { rows: vec![tx1, tx2] },
        padded,
    })
}

/// Received molecule counts per antenna; length is the frame slot count
/// plus the `L` guard slots.
#[derive(Debug, Clone, PartialEq)]
pub struct RxSeries {
    rows: Vec<Vec<u64>>,
}

impl RxSeries {
    pub fn antenna_count(&self) -> usize {
        self.rows.len()
    }

    pub fn slot_count(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn row(&self, antenna: usize) -> &[u64] {
        &self.rows[antenna]
    }
}

fn check_shapes(x: &TransmitMatrix, taps: &TapSet) -> Result<()> {
    if taps.tx_count() != x.antenna_count() {
        return Err(Error::LengthMismatch(format!(
            "transmit matrix has {} antennas but the tap set covers {}",
            x.antenna_count(),
            taps.tx_count()
        )));
    }
    Ok(())
}

/// Samples the binomial counting channel. Deterministic given `seed`; the
/// output covers `x.slot_count() + taps.memory()` slots.
pub fn channel_transmit(x: &TransmitMatrix, taps: &TapSet, seed: u64) -> Result<RxSeries> {
    check_shapes(x, taps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let memory = taps.memory();
    let out_slots = x.slot_count() + memory;
    let mut rows = Vec::with_capacity(taps.rx_count());
    for rx in 0..taps.rx_count() {
        let mut series = Vec::with_capacity(out_slots);
        for k in 0..out_slots {
            let mut count = 0u64;
            for tx in 0..x.antenna_count() {
                for lag in 0..=memory.min(k) {
                    let trials = x.emission(tx, k as isize - lag as isize);
                    let p = taps.tap(rx, tx, lag);
                    if trials > 0 && p > 0.0 {
                        let bin = Binomial::new(trials, p).map_err(|e| {
                            Error::InvalidTaps(format!("binomial({trials}, {p}): {e}"))
                        })?;
                        count += bin.sample(&mut rng);
                    }
                }
            }
            series.push(count);
        }
        rows.push(series);
    }
    Ok(RxSeries { rows })
}

/// Exact expected received counts (float), same slot layout as
/// [`channel_transmit`].
pub fn expected_rx(x: &TransmitMatrix, taps: &TapSet) -> Result<Vec<Vec<f64>>> {
    check_shapes(x, taps)?;
    let memory = taps.memory();
    let out_slots = x.slot_count() + memory;
    let mut rows = Vec::with_capacity(taps.rx_count());
    for rx in 0..taps.rx_count() {
        let mut series = Vec::with_capacity(out_slots);
        for k in 0..out_slots {
            let mut mean = 0.0f64;
            for tx in 0..x.antenna_count() {
                for lag in 0..=memory.min(k) {
                    mean += x.emission(tx, k as isize - lag as isize) as f64
                        * taps.tap(rx, tx, lag);
                }
            }
            series.push(mean);
        }
        rows.push(series);
    }
    Ok(rows)
}

/// Noise-free channel for detector oracle tests: emits the expected counts
/// rounded to the nearest integer.
pub fn channel_expectation(x: &TransmitMatrix, taps: &TapSet) -> Result<RxSeries> {
    let rows = expected_rx(x, taps)?
        .into_iter()
        .map(|row| row.into_iter().map(|m| m.round() as u64).collect())
        .collect();
    Ok(RxSeries { rows })
}

/// Equal-gain combining: the per-slot sum over all receive antennas. For a
/// single antenna this is the identity.
pub fn egc_combine(rx: &RxSeries) -> Result<Vec<u64>> {
    if rx.rows.is_empty() {
        return Err(Error::LengthMismatch("no receive antennas to combine".into()));
    }
    let slots = rx.rows[0].len();
    if rx.rows.iter().any(|r| r.len() != slots) {
        return Err(Error::LengthMismatch(
            "receive series differ in length".into(),
        ));
    }
    Ok((0..slots)
        .map(|k| rx.rows.iter().map(|r| r[k]).sum())
        .collect())
}
