//! Output formatting shared by the CSV writers.
//!
//! All CSV files use `,` separators, `\n` line endings and UTF-8, with a
//! `#`-prefixed metadata block before the header row. Float formatting is
//! fixed here so that identical runs produce byte-identical files.

use std::io::BufRead;

use crate::error::{Error, Result};

/// Tool identification embedded in output metadata.
pub const TOOL_VERSION: &str = concat!("dbmc ", env!("CARGO_PKG_VERSION"));

/// Modeling note attached to every output that involves the link geometry:
/// the receive antennas are simulated as free-standing absorbing spheres,
/// without a reflecting receiver body between them.
pub const GEOMETRY_NOTE: &str =
    "receive antennas are free-standing absorbing spheres (no reflecting receiver body)";

/// Formats `x` with `sig` significant digits.
///
/// Values whose decimal exponent lies in `[-4, sig)` are printed
/// positionally (`0.0427258800577`, `11.0000`), everything else in
/// scientific notation (`1.53746e-12`). The mapping from value to string is
/// a pure function, which is what the byte-determinism contract relies on.
pub fn format_sig(x: f64, sig: usize) -> String {
    assert!(sig >= 1);
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", sig - 1, x);
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if exp >= -4 && exp < sig as i32 {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        sci
    }
}

/// Splits a prefixed CSV stream into metadata pairs, the header line and
/// the data rows. Metadata lines look like `# key: value`.
pub fn parse_prefixed_csv<R: BufRead>(r: R) -> Result<(Vec<(String, String)>, String, Vec<String>)> {
    let mut meta = Vec::new();
    let mut header = None;
    let mut rows = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim_start();
            match rest.split_once(':') {
                Some((k, v)) => meta.push((k.trim().to_string(), v.trim().to_string())),
                None => meta.push((rest.to_string(), String::new())),
            }
        } else if header.is_none() {
            header = Some(line);
        } else {
            rows.push(line);
        }
    }
    let header = header.ok_or_else(|| Error::Parse("missing CSV header".into()))?;
    Ok((meta, header, rows))
}

/// Looks up a metadata key (first match wins).
pub fn meta_value<'a>(meta: &'a [(String, String)], key: &str) -> Option<&'a str> {
    meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_sig(0.0, 6), "0");
        assert_eq!(format_sig(11.0, 6), "11.0000");
        assert_eq!(format_sig(0.6, 6), "0.600000");
        assert_eq!(format_sig(0.042725880057699366, 12), "0.0427258800577");
        assert_eq!(format_sig(1.5374597944280349e-12, 6), "1.53746e-12");
        assert_eq!(format_sig(-2.5, 3), "-2.50");
        assert_eq!(format_sig(1234567.0, 6), "1.23457e6");
        assert_eq!(format_sig(100.0, 6), "100.000");
    }

    #[test]
    fn prefixed_csv_parsing() {
        let text = "# tool: dbmc 0.1.0\n# n: 5\nabsorber,bin,count\n1,0,3\n";
        let (meta, header, rows) = parse_prefixed_csv(text.as_bytes()).unwrap();
        assert_eq!(meta_value(&meta, "n"), Some("5"));
        assert_eq!(header, "absorber,bin,count");
        assert_eq!(rows, vec!["1,0,3"]);
    }
}
