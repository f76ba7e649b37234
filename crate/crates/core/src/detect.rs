//! Detection: adaptive thresholding and maximum-likelihood sequence
//! estimation over the counting channel.
//!
//! The ATD decides 1 whenever the current count exceeds the previous one and
//! needs no channel knowledge. MLSE runs a Viterbi trellis over the last `L`
//! bits with the squared-Euclidean branch metric
//!
//! ```text
//! (y[k] - sum_l N * h_hat[l] * u[k-l])^2
//! ```
//!
//! For Alamouti-type frames the two slots of a code pair are evaluated
//! jointly: the trellis runs over the summed per-slot emission level
//! `z[k] = (x1[k] + x2[k]) / N` in `{0, 1, 2}`, whose value pair per data
//! pair follows from the code matrix, against the combined taps
//! `h_hat = h11 + h12`.
//!
//! All detectors break metric ties deterministically toward 0 bits: among
//! all metric-minimizing sequences they return the lexicographically
//! smallest (earliest bit most significant, 0 < 1). The exhaustive-search
//! oracles implement the same rule, so detector and oracle agree even on
//! tied instances.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::taps::TapSet;

/// Longest sequence the exhaustive oracles accept (`2^K` paths).
pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Effective channel handed to MLSE: tap estimates `h_hat[0..=L]` and the
/// per-antenna molecule count `N` of an ON symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannel {
    taps: Vec<f64>,
    molecules: u64,
}

impl EffectiveChannel {
    /// Taps may reach 2 because equal-gain combining of a repetition frame
    /// doubles the combined per-antenna response.
    pub fn new(taps: Vec<f64>, molecules: u64) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidTaps("effective channel needs at least one tap".into()));
        }
        if molecules == 0 {
            return Err(Error::InvalidConfig("molecule count must be positive".into()));
        }
        for (lag, &h) in taps.iter().enumerate() {
            if !h.is_finite() || !(0.0..=2.0).contains(&h) {
                return Err(Error::InvalidTaps(format!(
                    "effective tap h_hat[{lag}] = {h} is outside [0, 2]"
                )));
            }
        }
        Ok(EffectiveChannel { taps, molecules })
    }

    /// Single-antenna link: the subchannel taps themselves.
    pub fn siso(taps: &TapSet, molecules: u64) -> Result<Self> {
        if taps.rx_count() != 1 || taps.tx_count() != 1 {
            return Err(Error::InvalidTaps(format!(
                "SISO detection needs a 1x1 tap set, got {}x{}",
                taps.rx_count(),
                taps.tx_count()
            )));
        }
        EffectiveChannel::new(taps.row(0, 0).to_vec(), molecules)
    }

    /// Repetition coding with EGC: `h_hat[l] = 2 (h11[l] + h12[l])`.
    pub fn repetition_egc(taps: &TapSet, molecules: u64) -> Result<Self> {
        let combined = mimo_combined(taps)?;
        EffectiveChannel::new(combined.iter().map(|h| 2.0 * h).collect(), molecules)
    }

    /// Alamouti-type coding with EGC: `h_hat[l] = h11[l] + h12[l]`, applied
    /// to the summed emission level of both antennas.
    pub fn alamouti_combined(taps: &TapSet, molecules: u64) -> Result<Self> {
        EffectiveChannel::new(mimo_combined(taps)?, molecules)
    }

    /// Channel memory `L`.
    pub fn memory(&self) -> usize {
        self.taps.len() - 1
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn molecules(&self) -> u64 {
        self.molecules
    }
}

fn mimo_combined(taps: &TapSet) -> Result<Vec<f64>> {
    if taps.rx_count() != 2 || taps.tx_count() != 2 {
        return Err(Error::InvalidTaps(format!(
            "MIMO detection needs a 2x2 tap set, got {}x{}",
            taps.rx_count(),
            taps.tx_count()
        )));
    }
    Ok(taps.combined_rx_row(0))
}

/// Adaptive threshold detector: `u[k] = 1` iff `y[k] > y[k-1]`, with
/// `y[-1] = 0`.
pub fn atd_detect(y: &[u64]) -> Vec<u8> {
    let mut prev = 0u64;
    y.iter()
        .map(|&current| {
            let bit = u8::from(current > prev);
            prev = current;
            bit
        })
        .collect()
}

/// Squared-Euclidean branch metric for one slot. `window[l]` is the
/// candidate bit `u[k-l]`, so `window[0]` is the current bit and the window
/// spans the full channel memory (`L + 1` entries).
pub fn mlse_branch_metric(y_k: u64, window: &[u8], ch: &EffectiveChannel) -> f64 {
    debug_assert_eq!(window.len(), ch.taps.len());
    let n = ch.molecules as f64;
    let mut reconstruction = 0.0;
    for (lag, &bit) in window.iter().enumerate() {
        if bit != 0 {
            reconstruction += n * ch.taps[lag];
        }
    }
    let diff = y_k as f64 - reconstruction;
    diff * diff
}

/// Branch metric for one slot of the joint Alamouti trellis; `levels[l]` is
/// the summed emission level `z[k-l]` in `{0, 1, 2}`.
fn level_branch_metric(y_k: u64, levels: &[u8], ch: &EffectiveChannel) -> f64 {
    let n = ch.molecules as f64;
    let mut reconstruction = 0.0;
    for (lag, &z) in levels.iter().enumerate() {
        if z != 0 {
            reconstruction += n * ch.taps[lag] * z as f64;
        }
    }
    let diff = y_k as f64 - reconstruction;
    diff * diff
}

/// Walks two survivor paths backwards until they merge and compares the
/// diverging spans lexicographically (earliest symbol first). `symbols` and
/// `preds` are the per-step traceback tables.
fn compare_survivors(
    mut step: usize,
    mut state_a: usize,
    mut state_b: usize,
    preds: &[Vec<u32>],
    symbols: &[Vec<u8>],
) -> Ordering {
    if state_a == state_b {
        return Ordering::Equal;
    }
    let mut rev_a = Vec::new();
    let mut rev_b = Vec::new();
    loop {
        rev_a.push(symbols[step][state_a]);
        rev_b.push(symbols[step][state_b]);
        state_a = preds[step][state_a] as usize;
        state_b = preds[step][state_b] as usize;
        if step == 0 || state_a == state_b {
            break;
        }
        step -= 1;
    }
    // both spans cover the same slots; compare earliest-first
    for (a, b) in rev_a.iter().rev().zip(rev_b.iter().rev()) {
        match a.cmp(b) {
            Ordering::Equal => {}
            other => return other,
        }
    }
    Ordering::Equal
}

/// Viterbi MLSE over the binary trellis of the last `L` bits.
///
/// Returns the metric-minimizing bit sequence (free-end termination,
/// traceback from the best end state), with ties resolved toward the
/// lexicographically smallest sequence. The sequence this returns always
/// satisfies `path_metric(returned) <= path_metric(truth)` for any other
/// candidate of the same length.
pub fn mlse_detect(y: &[u64], ch: &EffectiveChannel) -> Vec<u8> {
    let slots = y.len();
    if slots == 0 {
        return Vec::new();
    }
    let memory = ch.memory();
    let states = 1usize << memory;
    let mask = states - 1;

    let mut metrics = vec![f64::INFINITY; states];
    metrics[0] = 0.0; // cold start: all earlier bits are 0
    let mut preds: Vec<Vec<u32>> = Vec::with_capacity(slots);
    let mut bits: Vec<Vec<u8>> = Vec::with_capacity(slots);
    let mut window = vec![0u8; memory + 1];

    for k in 0..slots {
        let mut next = vec![f64::INFINITY; states];
        let mut pred_row = vec![0u32; states];
        let mut bit_row = vec![0u8; states];
        for prev in 0..states {
            let base = metrics[prev];
            if !base.is_finite() {
                continue;
            }
            for bit in 0..2u8 {
                window[0] = bit;
                for lag in 1..=memory {
                    window[lag] = ((prev >> (lag - 1)) & 1) as u8;
                }
                let cand = base + mlse_branch_metric(y[k], &window, ch);
                let target = ((prev << 1) | bit as usize) & mask;
                let better = if cand < next[target] {
                    true
                } else if cand == next[target] {
                    // tie: keep the lexicographically smaller path
                    let prefix = if k == 0 {
                        Ordering::Equal
                    } else {
                        compare_survivors(
                            k - 1,
                            prev,
                            pred_row[target] as usize,
                            &preds,
                            &bits,
                        )
                    };
                    prefix
                        .then(bit.cmp(&bit_row[target]))
                        .is_lt()
                } else {
                    false
                };
                if better {
                    next[target] = cand;
                    pred_row[target] = prev as u32;
                    bit_row[target] = bit;
                }
            }
        }
        metrics = next;
        preds.push(pred_row);
        bits.push(bit_row);
    }

    // free-end traceback from the best (tie: lexicographically smallest) state
    let mut best = 0usize;
    for state in 1..states {
        match metrics[state].partial_cmp(&metrics[best]) {
            Some(Ordering::Less) => best = state,
            Some(Ordering::Equal) => {
                if compare_survivors(slots - 1, state, best, &preds, &bits).is_lt() {
                    best = state;
                }
            }
            _ => {}
        }
    }

    let mut decoded = vec![0u8; slots];
    let mut state = best;
    for k in (0..slots).rev() {
        decoded[k] = bits[k][state];
        state = preds[k][state] as usize;
    }
    decoded
}

/// Exhaustive-search oracle for [`mlse_detect`]: minimizes the identical
/// path metric over all `2^K` sequences, scanning them in lexicographic
/// order and keeping strict improvements only (same tie rule).
pub fn mlse_bruteforce(y: &[u64], ch: &EffectiveChannel) -> Result<Vec<u8>> {
    let slots = y.len();
    if slots > BRUTE_FORCE_LIMIT {
        return Err(Error::BruteForceTooLong {
            len: slots,
            max: BRUTE_FORCE_LIMIT,
        });
    }
    if slots == 0 {
        return Ok(Vec::new());
    }
    let memory = ch.memory();
    let mut best_bits = Vec::new();
    let mut best_metric = f64::INFINITY;
    let mut candidate = vec![0u8; slots];
    let mut window = vec![0u8; memory + 1];
    for code in 0u64..(1u64 << slots) {
        for (k, bit) in candidate.iter_mut().enumerate() {
            *bit = ((code >> (slots - 1 - k)) & 1) as u8;
        }
        let mut metric = 0.0;
        for k in 0..slots {
            for lag in 0..=memory {
                window[lag] = if k >= lag { candidate[k - lag] } else { 0 };
            }
            metric += mlse_branch_metric(y[k], &window, ch);
        }
        if metric < best_metric {
            best_metric = metric;
            best_bits = candidate.clone();
        }
    }
    Ok(best_bits)
}

/// Summed emission levels `(z[2p], z[2p+1])` in units of `N` for each data
/// bit pair, in lexicographic pair order (0,0), (0,1), (1,0), (1,1).
///
/// From the code matrix: slot one carries `s_k + s_{k+1}`, slot two carries
/// `(N - s_{k+1}) + s_k`.
const PAIR_LEVELS: [(u8, u8); 4] = [(0, 1), (1, 0), (1, 2), (2, 1)];

fn pow3(n: usize) -> usize {
    3usize.pow(n as u32)
}

/// Pushes a new level into a base-3 encoded history (most recent level in
/// the lowest digit).
fn push_level(state: usize, level: u8, memory: usize) -> usize {
    if memory == 0 {
        0
    } else {
        level as usize + 3 * (state % pow3(memory - 1))
    }
}

fn level_window(current: u8, state: usize, memory: usize, out: &mut [u8]) {
    out[0] = current;
    let mut digits = state;
    for slot in out.iter_mut().skip(1).take(memory) {
        *slot = (digits % 3) as u8;
        digits /= 3;
    }
}

/// Joint two-slot MLSE for Alamouti-type frames.
///
/// Each trellis transition consumes one data bit pair and two received
/// counts; the state is the last `L` summed emission levels. Requires an
/// even slot count. Ties resolve toward the lexicographically smallest bit
/// sequence, i.e. toward pair (0,0).
pub fn alamouti_mlse_detect(y: &[u64], ch: &EffectiveChannel) -> Result<Vec<u8>> {
    if y.len() % 2 != 0 {
        return Err(Error::OddSlotCount(y.len()));
    }
    let pairs = y.len() / 2;
    if pairs == 0 {
        return Ok(Vec::new());
    }
    let memory = ch.memory();
    let states = pow3(memory);

    let mut metrics = vec![f64::INFINITY; states];
    metrics[0] = 0.0;
    let mut preds: Vec<Vec<u32>> = Vec::with_capacity(pairs);
    let mut pair_choices: Vec<Vec<u8>> = Vec::with_capacity(pairs);
    let mut window = vec![0u8; memory + 1];

    for p in 0..pairs {
        let mut next = vec![f64::INFINITY; states];
        let mut pred_row = vec![0u32; states];
        let mut pair_row = vec![0u8; states];
        for prev in 0..states {
            let base = metrics[prev];
            if !base.is_finite() {
                continue;
            }
            for (pair_idx, &(z1, z2)) in PAIR_LEVELS.iter().enumerate() {
                level_window(z1, prev, memory, &mut window);
                let after_first = base + level_branch_metric(y[2 * p], &window, ch);
                let mid = push_level(prev, z1, memory);
                level_window(z2, mid, memory, &mut window);
                let cand = after_first + level_branch_metric(y[2 * p + 1], &window, ch);
                let target = push_level(mid, z2, memory);
                let better = if cand < next[target] {
                    true
                } else if cand == next[target] {
                    let prefix = if p == 0 {
                        Ordering::Equal
                    } else {
                        compare_survivors(
                            p - 1,
                            prev,
                            pred_row[target] as usize,
                            &preds,
                            &pair_choices,
                        )
                    };
                    prefix
                        .then((pair_idx as u8).cmp(&pair_row[target]))
                        .is_lt()
                } else {
                    false
                };
                if better {
                    next[target] = cand;
                    pred_row[target] = prev as u32;
                    pair_row[target] = pair_idx as u8;
                }
            }
        }
        metrics = next;
        preds.push(pred_row);
        pair_choices.push(pair_row);
    }

    let mut best = usize::MAX;
    for state in 0..states {
        if !metrics[state].is_finite() {
            continue;
        }
        if best == usize::MAX {
            best = state;
            continue;
        }
        match metrics[state].partial_cmp(&metrics[best]) {
            Some(Ordering::Less) => best = state,
            Some(Ordering::Equal) => {
                if compare_survivors(pairs - 1, state, best, &preds, &pair_choices).is_lt() {
                    best = state;
                }
            }
            _ => {}
        }
    }

    let mut decoded = vec![0u8; 2 * pairs];
    let mut state = best;
    for p in (0..pairs).rev() {
        let pair_idx = pair_choices[p][state];
        decoded[2 * p] = pair_idx >> 1;
        decoded[2 * p + 1] = pair_idx & 1;
        state = preds[p][state] as usize;
    }
    Ok(decoded)
}

/// Exhaustive pair-sequence oracle for [`alamouti_mlse_detect`], scanning
/// bit sequences in lexicographic order with strict improvement.
pub fn alamouti_mlse_bruteforce(y: &[u64], ch: &EffectiveChannel) -> Result<Vec<u8>> {
    if y.len() % 2 != 0 {
        return Err(Error::OddSlotCount(y.len()));
    }
    let slots = y.len();
    if slots > BRUTE_FORCE_LIMIT {
        return Err(Error::BruteForceTooLong {
            len: slots,
            max: BRUTE_FORCE_LIMIT,
        });
    }
    if slots == 0 {
        return Ok(Vec::new());
    }
    let memory = ch.memory();
    let mut best_bits = Vec::new();
    let mut best_metric = f64::INFINITY;
    let mut bits = vec![0u8; slots];
    let mut levels = vec![0u8; slots];
    let mut window = vec![0u8; memory + 1];
    for code in 0u64..(1u64 << slots) {
        for (k, bit) in bits.iter_mut().enumerate() {
            *bit = ((code >> (slots - 1 - k)) & 1) as u8;
        }
        for (p, pair) in bits.chunks_exact(2).enumerate() {
            let idx = (pair[0] * 2 + pair[1]) as usize;
            let (z1, z2) = PAIR_LEVELS[idx];
            levels[2 * p] = z1;
            levels[2 * p + 1] = z2;
        }
        let mut metric = 0.0;
        for k in 0..slots {
            for lag in 0..=memory {
                window[lag] = if k >= lag { levels[k - lag] } else { 0 };
            }
            metric += level_branch_metric(y[k], &window, ch);
        }
        if metric < best_metric {
            best_metric = metric;
            best_bits = bits.clone();
        }
    }
    Ok(best_bits)
}

/// Path metric of a full candidate sequence (used by optimality checks).
pub fn path_metric(y: &[u64], bits: &[u8], ch: &EffectiveChannel) -> f64 {
    let memory = ch.memory();
    let mut window = vec![0u8; memory + 1];
    let mut metric = 0.0;
    for k in 0..y.len() {
        for lag in 0..=memory {
            window[lag] = if k >= lag { bits[k - lag] } else { 0 };
        }
        metric += mlse_branch_metric(y[k], &window, ch);
    }
    metric
}
