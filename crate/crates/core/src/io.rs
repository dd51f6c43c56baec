//! CSV curve files: header `x,rate`, one row per node of the padded grid,
//! values written with 17 significant digits.

use std::io::{Read, Write};
use std::path::Path;

use crate::curve_space::{ForwardCurve, MaturityGrid};
use crate::error::{Error, Result};

/// Relative tolerance on the node spacing.
const SPACING_TOLERANCE: f64 = 1e-9;

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Reads a curve whose rows cover `[0, x_max + pad]`.
pub fn read_curve_from<R: Read>(reader: R, pad: f64) -> Result<ForwardCurve> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.len() != 2 || &header[0] != "x" || &header[1] != "rate" {
        let got: Vec<&str> = header.iter().collect();
        return Err(parse_err(
            1,
            format!("expected header 'x,rate', got '{}'", got.join(",")),
        ));
    }
    let mut xs = Vec::new();
    let mut rates = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 2 {
            return Err(parse_err(
                line,
                format!("expected 2 fields, got {}", rec.len()),
            ));
        }
        let field = |i: usize, name: &str| -> Result<f64> {
            let v: f64 = rec[i]
                .parse()
                .map_err(|_| parse_err(line, format!("bad {name} '{}'", &rec[i])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite {name}")));
            }
            Ok(v)
        };
        let x = field(0, "x")?;
        let r = field(1, "rate")?;
        if let Some(&prev) = xs.last() {
            if !(x > prev) {
                return Err(parse_err(
                    line,
                    format!("x column not increasing at x = {x}"),
                ));
            }
        } else if x != 0.0 {
            return Err(parse_err(
                line,
                format!("first node must be x = 0, got {x}"),
            ));
        }
        xs.push(x);
        rates.push(r);
    }
    if xs.len() < 3 {
        return Err(parse_err(
            0,
            format!("need at least 3 rows, got {}", xs.len()),
        ));
    }
    let n = xs.len();
    let span = xs[n - 1];
    let h = span / (n - 1) as f64;
    for (i, &x) in xs.iter().enumerate() {
        if (x - i as f64 * h).abs() > SPACING_TOLERANCE * span.max(1.0) {
            return Err(parse_err(
                i as u64 + 2,
                format!("non-uniform spacing at x = {x}"),
            ));
        }
    }
    let grid = MaturityGrid::new(span - pad, pad, n)?;
    ForwardCurve::from_values(grid, rates)
}

pub fn read_curve(path: &Path, pad: f64) -> Result<ForwardCurve> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_curve_from(file, pad)
}

/// Writes columns of equal length under the given header.
pub fn write_columns_to<W: Write>(writer: W, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    let n = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != n) || columns.len() != header.len() {
        return Err(Error::Parameter("column shapes do not match header".into()));
    }
    for i in 0..n {
        w.write_record(columns.iter().map(|c| format!("{:.16e}", c[i])))
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve_to<W: Write>(writer: W, curve: &ForwardCurve) -> Result<()> {
    let xs: Vec<f64> = curve.grid().nodes().collect();
    write_columns_to(writer, &["x", "rate"], &[&xs, curve.values()])
}

pub fn write_curve(path: &Path, curve: &ForwardCurve) -> Result<()> {
    let file =
        std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_curve_to(file, curve)
}

pub fn write_columns(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    let file =
        std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_columns_to(file, header, columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(c: &ForwardCurve) -> ForwardCurve {
        let mut buf = Vec::new();
        write_curve_to(&mut buf, c).unwrap();
        read_curve_from(buf.as_slice(), c.grid().pad()).unwrap()
    }

    #[test]
    fn curve_round_trip_is_bit_stable() {
        let g = MaturityGrid::standard();
        let c = ForwardCurve::from_fn(g, |x| 0.03 + 0.01 * (-0.37 * x).exp() + 1e-17 * x);
        let back = round_trip(&c);
        assert_eq!(back.values(), c.values());
        assert_eq!(back.grid().len(), g.len());
        assert!((back.grid().x_max() - 10.0).abs() < 1e-12);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_curve_to(&mut a, &c).unwrap();
        write_curve_to(&mut b, &back).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_files() {
        let bad_header = "t,rate\n0,0.01\n1,0.01\n2,0.01\n";
        assert!(matches!(
            read_curve_from(bad_header.as_bytes(), 0.0),
            Err(Error::Parse { line: 1, .. })
        ));
        let non_monotone = "x,rate\n0,0.01\n1,0.01\n0.5,0.01\n";
        match read_curve_from(non_monotone.as_bytes(), 0.0) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("increasing"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let garbage = "x,rate\n0,0.01\n1,abc\n2,0.01\n";
        assert!(matches!(
            read_curve_from(garbage.as_bytes(), 0.0),
            Err(Error::Parse { line: 3, .. })
        ));
        let uneven = "x,rate\n0,0.01\n1,0.01\n2.5,0.01\n";
        assert!(read_curve_from(uneven.as_bytes(), 0.0).is_err());
        let short_pad = "x,rate\n0,0.01\n1,0.01\n2,0.01\n";
        assert!(read_curve_from(short_pad.as_bytes(), 5.0).is_err());
    }
}
