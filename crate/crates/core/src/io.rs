//! Plain-text record formats.
//!
//! Every file starts with `# key: value` header lines followed by
//! whitespace-separated records. Floats are written with `{:.17e}` so values
//! round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use faer::Mat;

use crate::error::{Error, Result};
use crate::hinv::Mode;
use crate::pauli::StringFeatures;
use crate::perturbation::ClusterEntry;
use crate::spectral::Spectrum;
use crate::C64;

pub type Header = Vec<(String, String)>;

pub fn header_line(out: &mut String, key: &str, value: &str) {
    let _ = writeln!(out, "# {key}: {value}");
}

fn render_header(header: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in header {
        header_line(&mut out, k, v);
    }
    out
}

/// Split a file into its header map and record lines.
pub fn parse_text(text: &str) -> (Header, Vec<&str>) {
    let mut header = Vec::new();
    let mut records = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once(':') {
                header.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        records.push(t);
    }
    (header, records)
}

pub fn header_get<'a>(header: &'a [(String, String)], key: &str) -> Option<&'a str> {
    header.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn f64_field(s: &str, line: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::parse(format!("bad number {s:?} in {line:?}")))
}

fn usize_field(s: &str, line: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::parse(format!("bad integer {s:?} in {line:?}")))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

pub fn append_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(contents.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Sparse `(row, col, re, im)` records of a complex matrix; exact zeros are skipped.
pub fn render_matrix(header: &[(String, String)], m: &Mat<C64>) -> String {
    let mut out = render_header(header);
    header_line(&mut out, "shape", &format!("{} {}", m.nrows(), m.ncols()));
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v.re != 0.0 || v.im != 0.0 {
                let _ = writeln!(out, "{i} {j} {:.17e} {:.17e}", v.re, v.im);
            }
        }
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<(Header, Mat<C64>)> {
    let (header, records) = parse_text(text);
    let shape = header_get(&header, "shape").ok_or_else(|| Error::parse("matrix file lacks a shape header"))?;
    let dims: Vec<usize> = shape.split_whitespace().map(|s| usize_field(s, shape)).collect::<Result<_>>()?;
    if dims.len() != 2 {
        return Err(Error::parse(format!("bad shape {shape:?}")));
    }
    let mut m = Mat::<C64>::zeros(dims[0], dims[1]);
    for line in records {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(Error::parse(format!("matrix record needs 4 fields: {line:?}")));
        }
        let (i, j) = (usize_field(f[0], line)?, usize_field(f[1], line)?);
        if i >= dims[0] || j >= dims[1] {
            return Err(Error::parse(format!("index out of range in {line:?}")));
        }
        m[(i, j)] = C64::new(f64_field(f[2], line)?, f64_field(f[3], line)?);
    }
    Ok((header, m))
}

/// `(re λ, im λ, average order)` per eigenvalue.
pub fn render_spectrum(header: &[(String, String)], s: &Spectrum) -> String {
    let mut out = render_header(header);
    header_line(&mut out, "columns", "re_lambda im_lambda average_order");
    for (l, k) in s.eigenvalues().iter().zip(s.orders()) {
        let _ = writeln!(out, "{:.17e} {:.17e} {:.17e}", l.re, l.im, k);
    }
    out
}

pub fn parse_spectrum(text: &str) -> Result<Vec<(C64, f64)>> {
    let (_, records) = parse_text(text);
    records
        .into_iter()
        .map(|line| {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(Error::parse(format!("spectrum record needs 3 fields: {line:?}")));
            }
            Ok((C64::new(f64_field(f[0], line)?, f64_field(f[1], line)?), f64_field(f[2], line)?))
        })
        .collect()
}

/// `(re λ, im λ, re c, im c, error)` per mode.
pub fn render_modes(header: &[(String, String)], modes: &[Mode]) -> String {
    let mut out = render_header(header);
    header_line(&mut out, "columns", "re_lambda im_lambda re_c im_c error");
    for m in modes {
        let _ = writeln!(
            out,
            "{:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
            m.lambda.re, m.lambda.im, m.amplitude.re, m.amplitude.im, m.error
        );
    }
    out
}

pub fn parse_modes(text: &str) -> Result<Vec<Mode>> {
    let (_, records) = parse_text(text);
    records
        .into_iter()
        .map(|line| {
            let f: Vec<f64> = line.split_whitespace().map(|s| f64_field(s, line)).collect::<Result<_>>()?;
            if f.len() != 5 {
                return Err(Error::parse(format!("mode record needs 5 fields: {line:?}")));
            }
            Ok(Mode { lambda: C64::new(f[0], f[1]), amplitude: C64::new(f[2], f[3]), error: f[4] })
        })
        .collect()
}

/// `(k, p, e, count, center)` per subcluster class.
pub fn render_cluster_table<'a>(
    header: &[(String, String)],
    table: impl IntoIterator<Item = (&'a StringFeatures, &'a ClusterEntry)>,
) -> String {
    let mut out = render_header(header);
    header_line(&mut out, "columns", "k p e count center");
    for (f, e) in table {
        let _ = writeln!(out, "{} {} {} {} {:.17e}", f.order, f.adjacent_pairs, f.edge_nonidentities, e.count, e.center);
    }
    out
}

pub fn parse_cluster_table(text: &str) -> Result<Vec<(StringFeatures, ClusterEntry)>> {
    let (_, records) = parse_text(text);
    records
        .into_iter()
        .map(|line| {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(Error::parse(format!("cluster record needs 5 fields: {line:?}")));
            }
            let features = StringFeatures {
                order: usize_field(f[0], line)?,
                adjacent_pairs: usize_field(f[1], line)?,
                edge_nonidentities: usize_field(f[2], line)?,
            };
            Ok((features, ClusterEntry { count: usize_field(f[3], line)?, center: f64_field(f[4], line)? }))
        })
        .collect()
}
