//! CSV writers for every pipeline output. Floats use 17 significant digits
//! (`{:.16e}`), `.` as decimal separator and `\n` line endings.

use std::io::{self, Write};

use crate::attractor::{CellSet, ZLabel};
use crate::aubry::GraphPoint;
use crate::flow::{FlowKind, Trajectory};
use crate::measures::{LimitStudyRow, OccupationMeasure};
use crate::model::PhasePoint;
use crate::scalar::Scalar;
use crate::value::{GridField, VectorField};

fn f<T: Scalar>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

fn axis_names(prefix: &str, dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("{prefix}{i}")).collect()
}

fn header(w: &mut impl Write, cols: &[String]) -> io::Result<()> {
    writeln!(w, "{}", cols.join(","))
}

fn row(w: &mut impl Write, cols: &[String]) -> io::Result<()> {
    w.write_all(cols.join(",").as_bytes())?;
    w.write_all(b"\n")
}

/// `x0[,x1],u` in row-major node order.
pub fn write_value<T: Scalar>(w: &mut impl Write, u: &GridField<T>) -> io::Result<()> {
    let dim = u.grid.dim;
    let mut cols = axis_names("x", dim);
    cols.push("u".into());
    header(w, &cols)?;
    for (i, v) in u.values.iter().enumerate() {
        let x = u.grid.node(i);
        let mut r: Vec<String> = x[..dim].iter().map(|c| f(*c)).collect();
        r.push(f(*v));
        row(w, &r)?;
    }
    Ok(())
}

/// `x0[,x1],du0[,du1],kink`.
pub fn write_gradient<T: Scalar>(w: &mut impl Write, du: &VectorField<T>) -> io::Result<()> {
    let dim = du.grid.dim;
    let mut cols = axis_names("x", dim);
    cols.extend(axis_names("du", dim));
    cols.push("kink".into());
    header(w, &cols)?;
    for (i, g) in du.values.iter().enumerate() {
        let x = du.grid.node(i);
        let mut r: Vec<String> = x[..dim].iter().chain(&g[..dim]).map(|c| f(*c)).collect();
        r.push(if du.is_kink(i) { "1" } else { "0" }.into());
        row(w, &r)?;
    }
    Ok(())
}

/// `t,x0[,x1],p0[,p1]` (`v…` columns for a Lagrangian trajectory).
pub fn write_trajectory<T: Scalar>(w: &mut impl Write, traj: &Trajectory<T>) -> io::Result<()> {
    let dim = traj.dim;
    let mut cols = vec!["t".to_string()];
    cols.extend(axis_names("x", dim));
    cols.extend(axis_names(if traj.kind == FlowKind::Lagrangian { "v" } else { "p" }, dim));
    header(w, &cols)?;
    for i in 0..traj.len() {
        let r: Vec<String> =
            std::iter::once(&traj.times[i]).chain(&traj.x[i][..dim]).chain(&traj.y[i][..dim]).map(|c| f(*c)).collect();
        row(w, &r)?;
    }
    Ok(())
}

fn graph_points<T: Scalar>(w: &mut impl Write, dim: usize, points: &[GraphPoint<T>], with_fwd: bool) -> io::Result<()> {
    let mut cols = axis_names("x", dim);
    cols.extend(axis_names("p", dim));
    cols.push("defect".into());
    if with_fwd {
        cols.push("fwd_dist".into());
    }
    header(w, &cols)?;
    for g in points {
        let mut r: Vec<String> = g.point.x[..dim].iter().chain(&g.point.p[..dim]).map(|c| f(*c)).collect();
        r.push(f(g.defect));
        if with_fwd {
            r.push(f(g.fwd_dist));
        }
        row(w, &r)?;
    }
    Ok(())
}

/// `x0[,x1],p0[,p1],defect`.
pub fn write_sigma<T: Scalar>(w: &mut impl Write, dim: usize, points: &[GraphPoint<T>]) -> io::Result<()> {
    graph_points(w, dim, points, false)
}

/// `x0[,x1],p0[,p1],defect,fwd_dist`.
pub fn write_aubry<T: Scalar>(w: &mut impl Write, dim: usize, points: &[GraphPoint<T>]) -> io::Result<()> {
    graph_points(w, dim, points, true)
}

/// `x0[,x1],p0[,p1],label` at the centres of the `Z0` and `Zminus` cells;
/// every cell not listed is `Zplus`.
pub fn write_zsets<T: Scalar>(w: &mut impl Write, z: &CellSet<T>) -> io::Result<()> {
    let dim = z.grid.dim;
    let mut cols = axis_names("x", dim);
    cols.extend(axis_names("p", dim));
    cols.push("label".into());
    header(w, &cols)?;
    let labels = z.labels.as_deref();
    for c in z.indices() {
        let label = labels.map_or(ZLabel::Z0, |l| l[c]);
        let pp = z.grid.center(c);
        let mut r: Vec<String> = pp.x[..dim].iter().chain(&pp.p[..dim]).map(|v| f(*v)).collect();
        r.push(label.as_str().into());
        row(w, &r)?;
    }
    Ok(())
}

/// `x0[,x1],p0[,p1],hw_x0[,hw_x1],hw_p0[,hw_p1]`: cell centres and
/// half-widths.
pub fn write_cells<T: Scalar>(w: &mut impl Write, cells: &CellSet<T>) -> io::Result<()> {
    let dim = cells.grid.dim;
    let mut cols = axis_names("x", dim);
    cols.extend(axis_names("p", dim));
    cols.extend(axis_names("hw_x", dim));
    cols.extend(axis_names("hw_p", dim));
    header(w, &cols)?;
    let hw = cells.grid.half_widths();
    for c in cells.indices() {
        let pp = cells.grid.center(c);
        let r: Vec<String> = pp.x[..dim].iter().chain(&pp.p[..dim]).chain(&hw[..2 * dim]).map(|v| f(*v)).collect();
        row(w, &r)?;
    }
    Ok(())
}

/// `x0[,x1],p0[,p1]`.
pub fn write_points<T: Scalar>(w: &mut impl Write, dim: usize, points: &[PhasePoint<T>]) -> io::Result<()> {
    let mut cols = axis_names("x", dim);
    cols.extend(axis_names("p", dim));
    header(w, &cols)?;
    for pp in points {
        let r: Vec<String> = pp.x[..dim].iter().chain(&pp.p[..dim]).map(|v| f(*v)).collect();
        row(w, &r)?;
    }
    Ok(())
}

/// `x0[,x1],v0[,v1],weight`, one row per support cell at its centroid.
pub fn write_measure<T: Scalar>(w: &mut impl Write, mu: &OccupationMeasure<T>) -> io::Result<()> {
    let dim = mu.grid.dim;
    let mut cols = axis_names("x", dim);
    cols.extend(axis_names("v", dim));
    cols.push("weight".into());
    header(w, &cols)?;
    for c in &mu.cells {
        let mut r: Vec<String> = c.centroid.x[..dim].iter().chain(&c.centroid.v[..dim]).map(|v| f(*v)).collect();
        r.push(f(c.weight));
        row(w, &r)?;
    }
    Ok(())
}

/// `lambda,sup_lambda_u,alpha_hat,mather_distance,iterations`.
pub fn write_limits(w: &mut impl Write, rows: &[LimitStudyRow]) -> io::Result<()> {
    header(w, &["lambda", "sup_lambda_u", "alpha_hat", "mather_distance", "iterations"].map(String::from))?;
    for r in rows {
        row(w, &[f(r.lambda), f(r.sup_lambda_u), f(r.alpha_hat), f(r.mather_distance), r.iterations.to_string()])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::TorusGrid;

    #[test]
    fn value_rows_use_seventeen_digits() {
        let u = GridField::from_fn(TorusGrid::new(1, &[16]).unwrap(), |x| x[0] / 3.0);
        let mut out = Vec::new();
        write_value(&mut out, &u).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.split('\n').collect();
        assert_eq!(lines[0], "x0,u");
        assert_eq!(lines.len(), 18);
        assert_eq!(lines[17], "");
        let v: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(v[1].split('e').next().unwrap().replace(['.', '-'], "").len(), 17);
        let parsed: f64 = v[1].parse().unwrap();
        assert_eq!(parsed, u.values[1]);
        assert!(!text.contains('\r'));
    }
}
