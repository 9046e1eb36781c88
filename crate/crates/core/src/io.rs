//! Point cloud files: whitespace-separated `x y z` text, OFF and CSV.
//!
//! Writers print every coordinate with Rust's shortest round-trip decimal
//! form, so saving and loading reproduces the coordinates bit for bit.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloudFormat {
    XyzAscii,
    Off,
    Csv,
}

impl CloudFormat {
    /// Guesses the format from the file extension; `.xyz`, `.txt` and
    /// `.pts` map to plain text.
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "xyz" | "txt" | "pts" => Some(Self::XyzAscii),
            "off" => Some(Self::Off),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::XyzAscii => "xyz",
            Self::Off => "off",
            Self::Csv => "csv",
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" | "xyz-ascii" => Ok(Self::XyzAscii),
            "off" => Ok(Self::Off),
            "csv" => Ok(Self::Csv),
            other => Err(Error::InvalidArgument {
                op: "CloudFormat",
                reason: format!("unknown format {other:?}; expected xyz-ascii, off or csv"),
            }),
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_coords<'a>(fields: impl Iterator<Item = &'a str>, line: usize) -> Result<Vec3> {
    let mut p = [0.0f64; 3];
    let mut fields = fields;
    for (k, slot) in p.iter_mut().enumerate() {
        let f = fields
            .next()
            .ok_or_else(|| parse_err(line, format!("expected 3 coordinates, found {k}")))?;
        *slot = f
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("invalid number {:?}", f.trim())))?;
        if !slot.is_finite() {
            return Err(parse_err(line, "coordinates must be finite"));
        }
    }
    Ok(p)
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_xyz(text: &str) -> Result<Vec<Vec3>> {
    content_lines(text)
        .map(|(n, l)| parse_coords(l.split_whitespace(), n))
        .collect()
}

pub fn parse_csv(text: &str) -> Result<Vec<Vec3>> {
    let mut lines = content_lines(text).peekable();
    if let Some((_, first)) = lines.peek() {
        let looks_numeric = first
            .split(',')
            .next()
            .is_some_and(|f| f.trim().parse::<f64>().is_ok());
        if !looks_numeric {
            lines.next();
        }
    }
    lines.map(|(n, l)| parse_coords(l.split(','), n)).collect()
}

/// Reads the vertices of an OFF file; faces are ignored.
pub fn parse_off(text: &str) -> Result<Vec<Vec3>> {
    let mut lines = content_lines(text);
    let (n, header) = lines.next().ok_or(Error::EmptyInput { op: "parse_off" })?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| parse_err(n, "missing OFF header"))?
        .trim();
    let (count_line, counts) = if rest.is_empty() {
        lines.next().ok_or_else(|| parse_err(n, "missing vertex count line"))?
    } else {
        (n, rest)
    };
    let nv: usize = counts
        .split_whitespace()
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(count_line, "invalid vertex count"))?;
    let mut pts = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (n, l) = lines.next().ok_or_else(|| {
            parse_err(count_line, format!("header declares {nv} vertices but only {} follow", pts.len()))
        })?;
        pts.push(parse_coords(l.split_whitespace(), n)?);
    }
    Ok(pts)
}

pub fn parse_cloud(text: &str, format: CloudFormat) -> Result<PointCloud> {
    let pts = match format {
        CloudFormat::XyzAscii => parse_xyz(text)?,
        CloudFormat::Off => parse_off(text)?,
        CloudFormat::Csv => parse_csv(text)?,
    };
    if pts.is_empty() {
        return Err(Error::EmptyInput { op: "load_cloud" });
    }
    Ok(PointCloud::from_points(&pts))
}

/// Loads a cloud; with `normalize`, centers it and scales its largest radius
/// to 1.
pub fn load_cloud(path: &Path, format: CloudFormat, normalize: bool) -> Result<PointCloud> {
    let cloud = parse_cloud(&std::fs::read_to_string(path)?, format)?;
    Ok(if normalize { cloud.normalized() } else { cloud })
}

pub fn format_cloud(cloud: &PointCloud, format: CloudFormat) -> String {
    let mut out = String::new();
    let sep = if format == CloudFormat::Csv { "," } else { " " };
    match format {
        CloudFormat::Off => {
            let _ = writeln!(out, "OFF\n{} 0 0", cloud.len());
        }
        CloudFormat::Csv => out.push_str("x,y,z\n"),
        CloudFormat::XyzAscii => {}
    }
    for p in cloud.coords() {
        let _ = writeln!(out, "{}{sep}{}{sep}{}", p[0], p[1], p[2]);
    }
    out
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    std::fs::write(path, format_cloud(cloud, format))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn xyz_example() {
        let c = parse_cloud("0 0 0\n1 0 0\n0 1 0\n", CloudFormat::XyzAscii).unwrap();
        assert_eq!(c.coords(), vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!(matches!(parse_cloud("", CloudFormat::XyzAscii), Err(Error::EmptyInput { .. })));
        match parse_cloud("0 0 0\n1 x 0\n", CloudFormat::XyzAscii) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn off_examples() {
        let ok = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        assert_eq!(parse_cloud(ok, CloudFormat::Off).unwrap().len(), 3);
        let inline = "OFF 2 0 0\n0 0 0\n1 1 1\n";
        assert_eq!(parse_cloud(inline, CloudFormat::Off).unwrap().len(), 2);
        let short = "OFF\n4 0 0\n0 0 0\n1 0 0\n";
        assert!(matches!(parse_cloud(short, CloudFormat::Off), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_cloud("PLY\n", CloudFormat::Off), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn csv_with_and_without_header() {
        let a = parse_cloud("x,y,z\n1,2,3\n", CloudFormat::Csv).unwrap();
        let b = parse_cloud("1, 2, 3\n", CloudFormat::Csv).unwrap();
        assert_eq!(a.coords(), b.coords());
    }

    #[test]
    fn normalization_maps_radius_to_one() {
        let c = parse_cloud("0 0 0\n4 0 0\n0 3 1\n", CloudFormat::XyzAscii).unwrap().normalized();
        assert!((c.radius() - 1.0).abs() <= 1e-12);
        assert!(c.centroid().iter().all(|v| v.abs() <= 1e-12));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(pts in proptest::collection::vec(proptest::array::uniform3(-1e6f64..1e6), 1..20)) {
            let cloud = PointCloud::from_points(&pts);
            for f in [CloudFormat::XyzAscii, CloudFormat::Off, CloudFormat::Csv] {
                let back = parse_cloud(&format_cloud(&cloud, f), f).unwrap();
                for (a, b) in back.coords().iter().zip(&pts) {
                    for k in 0..3 {
                        prop_assert_eq!(a[k].to_bits(), b[k].to_bits());
                    }
                }
            }
        }
    }
}
