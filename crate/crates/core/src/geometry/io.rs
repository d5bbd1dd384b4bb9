//! Airfoil coordinate files (Selig order) and CST coefficient files.

use std::fmt::Write as _;

use super::{split_cst14, AirfoilGeom, GeometryError, SurfaceCurve, CST_ORDER};

/// Selig-ordered coordinates: upper surface from the trailing edge to the
/// leading edge, then the lower surface back to the trailing edge.
pub fn write_coordinates(airfoil: &AirfoilGeom, header: &str) -> String {
    let s = airfoil.sample();
    let mut out = String::new();
    for line in header.lines() {
        let _ = writeln!(out, "# {line}");
    }
    for i in (0..s.x.len()).rev() {
        let _ = writeln!(out, "{} {}", s.x[i], s.upper[i]);
    }
    for i in 1..s.x.len() {
        let _ = writeln!(out, "{} {}", s.x[i], s.lower[i]);
    }
    out
}

/// Parse Selig-ordered coordinates into upper and lower curves, each
/// running from the leading edge to the trailing edge.
pub fn read_coordinates(text: &str) -> Result<(SurfaceCurve, SurfaceCurve), GeometryError> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace().map(str::parse::<f64>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(x)), Some(Ok(y)), None) => pts.push((x, y)),
            _ => return Err(GeometryError::Parse(format!("line {}: expected `x y`", n + 1))),
        }
    }
    if pts.len() < 5 {
        return Err(GeometryError::Parse("too few coordinate points".into()));
    }
    let le = pts
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let upper: Vec<(f64, f64)> = pts[..=le].iter().rev().copied().collect();
    let lower: Vec<(f64, f64)> = pts[le..].to_vec();
    let to_curve = |p: Vec<(f64, f64)>| {
        let (x, y): (Vec<f64>, Vec<f64>) = p.into_iter().unzip();
        SurfaceCurve::new(x, y)
    };
    Ok((to_curve(upper)?, to_curve(lower)?))
}

/// CST file: the 14 coefficients (upper then lower) on the first line and
/// `t_max` on the second.
pub fn write_cst(airfoil: &AirfoilGeom) -> String {
    let coeffs: Vec<String> = airfoil.cst14().iter().map(|c| c.to_string()).collect();
    format!("{}\n{}\n", coeffs.join(" "), airfoil.t_max)
}

pub fn read_cst(text: &str) -> Result<AirfoilGeom, GeometryError> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let parse_line = |l: Option<&str>| -> Result<Vec<f64>, GeometryError> {
        l.ok_or_else(|| GeometryError::Parse("missing line".into()))?
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| GeometryError::Parse(format!("{v}: {e}"))))
            .collect()
    };
    let coeffs = parse_line(lines.next())?;
    if coeffs.len() != 2 * CST_ORDER {
        return Err(GeometryError::Parse(format!(
            "expected {} coefficients, found {}",
            2 * CST_ORDER,
            coeffs.len()
        )));
    }
    let t = parse_line(lines.next())?;
    if t.len() != 1 {
        return Err(GeometryError::Parse("second line must hold t_max only".into()));
    }
    let (upper, lower) = split_cst14(&coeffs)?;
    AirfoilGeom::new(upper, lower, t[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::cst_fit;

    fn airfoil() -> AirfoilGeom {
        AirfoilGeom::new(
            [0.13, 0.16, 0.15, 0.19, 0.17, 0.2, 0.22],
            [-0.13, -0.12, -0.15, -0.05, -0.06, 0.04, 0.08],
            0.095,
        )
        .unwrap()
    }

    #[test]
    fn cst_file_round_trip_is_exact() {
        let a = airfoil();
        let back = read_cst(&write_cst(&a)).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn coordinates_reconstruct_surfaces() {
        let a = airfoil();
        let text = write_coordinates(&a, "test airfoil");
        assert!(text.starts_with("# test airfoil\n1 0\n"));
        let (up, lo) = read_coordinates(&text).unwrap();
        assert_eq!(up.len(), 201);
        assert_eq!(lo.len(), 201);
        let fu = cst_fit(&up).unwrap();
        for (p, q) in fu.iter().zip(&a.cst_upper) {
            assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(read_coordinates("1 0\n0.5 abc\n").is_err());
        assert!(read_cst("0.1 0.2\n0.095\n").is_err());
    }
}
