//! Artifact writers. Floats in CSV use C's `%.17g`, which round-trips every
//! f64 exactly; files are written to a temporary name and renamed.

use hjbflow_core::fnspace::{FieldPath, MeasureFlow};
use std::fmt::Write as _;
use std::io;
use std::path::Path;

/// Version of the CSV and JSON layouts described in docs/FORMATS.md.
pub const SCHEMA_VERSION: u32 = 1;

/// `%.17g`.
pub fn fmt_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // Rust's `{:.16e}` rounds to 17 significant digits exactly once.
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if (-4..17).contains(&exp) {
        if exp >= 0 {
            let split = exp as usize + 1;
            out.push_str(&digits[..split]);
            let frac = digits[split..].trim_end_matches('0');
            if !frac.is_empty() {
                out.push('.');
                out.push_str(frac);
            }
        } else {
            out.push_str("0.");
            out.push_str(&"0".repeat((-exp - 1) as usize));
            out.push_str(digits.trim_end_matches('0'));
        }
    } else {
        out.push_str(&digits[..1]);
        let frac = digits[1..].trim_end_matches('0');
        if !frac.is_empty() {
            out.push('.');
            out.push_str(frac);
        }
        let _ = write!(out, "e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    out
}

/// Writes `contents` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "artifact path has no file name"))?;
    let tmp = path.with_file_name(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

/// Rows of `t,x,<columns…>` over every time node and grid point.
pub fn paths_csv(columns: &[(&str, &FieldPath)]) -> String {
    let first = columns[0].1;
    let grid = first.grid();
    let mut s = String::from("t,x");
    for (name, _) in columns {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    for (i, &t) in first.time().nodes().iter().enumerate() {
        for j in 0..grid.n_points() {
            s.push_str(&fmt_g17(t));
            s.push(',');
            s.push_str(&fmt_g17(grid.x(j)));
            for (_, p) in columns {
                s.push(',');
                s.push_str(&fmt_g17(p.field(i).values()[j]));
            }
            s.push('\n');
        }
    }
    s
}

pub fn flow_csv(flow: &MeasureFlow) -> String {
    let grid = flow.grid();
    let mut s = String::from("t,x,mu\n");
    for (i, &t) in flow.time().nodes().iter().enumerate() {
        for (j, v) in flow.density(i).values().iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", fmt_g17(t), fmt_g17(grid.x(j)), fmt_g17(*v));
        }
    }
    s
}

/// A CSV table with a header and preformatted cells.
pub fn table_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

/// JSON value of an f64; non-finite numbers become strings.
pub fn json_f64(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::Value::from(x)
    } else {
        serde_json::Value::from(fmt_g17(x))
    }
}

pub fn json_opt(x: Option<f64>) -> serde_json::Value {
    x.map_or(serde_json::Value::Null, json_f64)
}
