//! CSV, JSON and SVG renderings of computed objects. All writers are pure
//! functions of their input, so equal inputs give byte-identical output.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{EndpointJacobian, Trajectory};
use crate::geodesic::{hamiltonian, NormalGeodesic};
use crate::metric::SphereSample;
use crate::structure::Structure;

fn csv_string(header: Vec<String>, rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn labels(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// `tau,x1,..,xn` at every grid instant.
pub fn trajectory_csv(traj: &Trajectory) -> Result<String> {
    let n = traj.states.first().map_or(0, |x| x.len());
    let header = std::iter::once("tau".to_string()).chain(labels("x", n)).collect();
    let rows = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, x)| std::iter::once(num(*t)).chain(x.iter().map(|v| num(*v))).collect());
    csv_string(header, rows)
}

/// The L₂-scaled endpoint Jacobian, one row per state coordinate; column
/// `j·k + i` is the derivative along field `i` on interval `j`.
pub fn jacobian_csv(jac: &EndpointJacobian) -> Result<String> {
    let header = std::iter::once("row".to_string())
        .chain((0..jac.m).flat_map(|j| (1..=jac.k).map(move |i| format!("u{i}_{j}"))))
        .collect();
    let rows = (0..jac.matrix.nrows()).map(|r| {
        std::iter::once(format!("x{}", r + 1))
            .chain(jac.matrix.row(r).iter().map(|v| num(*v)))
            .collect()
    });
    csv_string(header, rows)
}

/// `tau,x1..xn,xi1..xin,H` along a sampled normal geodesic.
pub fn geodesic_csv(s: &Structure, geo: &NormalGeodesic) -> Result<String> {
    let n = s.dim();
    let header = std::iter::once("tau".to_string())
        .chain(labels("x", n))
        .chain(labels("xi", n))
        .chain(std::iter::once("H".to_string()))
        .collect();
    let rows = geo.times().into_iter().zip(&geo.path).map(|(t, c)| {
        std::iter::once(num(t))
            .chain(c.x.iter().map(|v| num(*v)))
            .chain(c.xi.iter().map(|v| num(*v)))
            .chain(std::iter::once(num(hamiltonian(s, c))))
            .collect()
    });
    csv_string(header, rows)
}

/// `xi1..xin,x1..xn,minimal` for each sphere sample point.
pub fn sphere_csv(sample: &SphereSample) -> Result<String> {
    let n = sample.center.len();
    let header = labels("xi", n).chain(labels("x", n)).chain(std::iter::once("minimal".to_string())).collect();
    let rows = sample.points.iter().map(|p| {
        p.lambda0
            .xi
            .iter()
            .map(|v| num(*v))
            .chain(p.endpoint.iter().map(|v| num(*v)))
            .chain(std::iter::once(p.minimal.to_string()))
            .collect()
    });
    csv_string(header, rows)
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

/// Slab `|x_axis − value| ≤ half_width` whose points are projected to the
/// plane of coordinates `(horizontal, vertical)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicePlane {
    pub axis: usize,
    pub value: f64,
    pub half_width: f64,
    pub horizontal: usize,
    pub vertical: usize,
}

impl SlicePlane {
    /// Slice `x_axis = value` shown in the two remaining coordinates
    /// (for `n = 2` the slab covers everything).
    pub fn new(n: usize, axis: usize, value: f64, half_width: f64) -> Result<Self> {
        if n < 2 || (n > 2 && axis >= n) {
            return Err(Error::InvalidParameter(format!("no slice axis {axis} in dimension {n}")));
        }
        if n == 2 {
            return Ok(Self {
                axis: 2,
                value,
                half_width: f64::INFINITY,
                horizontal: 0,
                vertical: 1,
            });
        }
        let mut rest = (0..n).filter(|&i| i != axis);
        Ok(Self {
            axis,
            value,
            half_width,
            horizontal: rest.next().expect("n ≥ 3"),
            vertical: rest.next().expect("n ≥ 3"),
        })
    }

    fn contains(&self, x: &nalgebra::DVector<f64>) -> bool {
        self.axis >= x.len() || (x[self.axis] - self.value).abs() <= self.half_width
    }
}

/// Renders the slab of sphere points as an SVG scatter plot: minimal
/// points solid, non-minimal points hollow.
pub fn sphere_svg(sample: &SphereSample, slice: &SlicePlane) -> String {
    let pts: Vec<(f64, f64, bool)> = sample
        .points
        .iter()
        .filter(|p| slice.contains(&p.endpoint))
        .map(|p| (p.endpoint[slice.horizontal], p.endpoint[slice.vertical], p.minimal))
        .collect();
    let extent = pts
        .iter()
        .flat_map(|(a, b, _)| [a.abs(), b.abs()])
        .fold(0.0_f64, f64::max)
        .max(1e-9)
        * 1.1;
    let size = 400.0;
    let map = |v: f64| size * 0.5 * (1.0 + v / extent);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r##"<line x1="0" y1="{c}" x2="{size}" y2="{c}" stroke="#bbb"/><line x1="{c}" y1="0" x2="{c}" y2="{size}" stroke="#bbb"/>"##,
        c = size / 2.0
    );
    for (a, b, minimal) in &pts {
        let fill = if *minimal { "black" } else { "none" };
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.3}" cy="{:.3}" r="2.5" fill="{fill}" stroke="black"/>"#,
            map(*a),
            size - map(*b)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="6" y="16" font-size="12">x{} = {} ± {}, t = {}</text>"#,
        slice.axis + 1,
        slice.value,
        slice.half_width,
        sample.radius
    );
    svg.push_str("</svg>\n");
    svg
}
