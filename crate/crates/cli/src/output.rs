//! CSV tables, profile series and SVG renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use aoa_nav_core::bench::{ProfileData, RunRecord};
use aoa_nav_core::world::Environment;
use aoa_nav_core::Point;
use nalgebra::Matrix2;
use serde::Serialize;

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// `tau` column followed by one column per variant.
pub fn profile_csv(p: &ProfileData) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["tau".to_string()];
    header.extend(p.curves.keys().cloned());
    w.write_record(&header)?;
    for (i, tau) in p.taus.iter().enumerate() {
        let mut row = vec![tau.to_string()];
        row.extend(p.curves.values().map(|c| c[i].to_string()));
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn parse_profile_csv(text: &str) -> Result<ProfileData> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut rows = r.records();
    let Some(header) = rows.next() else {
        bail!("profile CSV has no header");
    };
    let header = header?;
    if header.get(0) != Some("tau") {
        bail!("profile CSV must start with a tau column");
    }
    let names: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut taus = Vec::new();
    let mut curves: BTreeMap<String, Vec<f64>> = names.iter().map(|n| (n.clone(), Vec::new())).collect();
    for row in rows {
        let row = row?;
        if row.len() != names.len() + 1 {
            bail!("profile row has {} fields, expected {}", row.len(), names.len() + 1);
        }
        taus.push(row[0].parse()?);
        for (n, v) in names.iter().zip(row.iter().skip(1)) {
            curves.get_mut(n).expect("column exists").push(v.parse()?);
        }
    }
    Ok(ProfileData { taus, curves })
}

/// Semi-axes `n_std * sqrt(eig)` (major first) and the major axis angle.
pub fn ellipse_axes(cov: &Matrix2<f64>, n_std: f64) -> (f64, f64, f64) {
    let eig = cov.symmetric_eigen();
    let (i, j) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let v = eig.eigenvectors.column(i);
    (
        n_std * eig.eigenvalues[i].max(0.0).sqrt(),
        n_std * eig.eigenvalues[j].max(0.0).sqrt(),
        v[1].atan2(v[0]),
    )
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Step plot of the profile curves over `tau`.
pub fn profile_svg(p: &ProfileData) -> String {
    let (w, h, m) = (480.0, 320.0, 40.0);
    let (t0, t1) = match (p.taus.first(), p.taus.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        _ => (1.0, 3.0),
    };
    let sx = |t: f64| m + (t - t0) / (t1 - t0) * (w - 2.0 * m);
    let sy = |v: f64| h - m - v * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * m,
        h - 2.0 * m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12">tau</text>"#, w / 2.0, h - 8.0);
    for (k, (name, curve)) in p.curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        for (i, (&t, &v)) in p.taus.iter().zip(curve).enumerate() {
            if i == 0 {
                let _ = write!(d, "M{:.2},{:.2}", sx(t), sy(v));
            } else {
                let _ = write!(d, " H{:.2} V{:.2}", sx(t), sy(v));
            }
        }
        let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{name}</text>"#,
            m + 8.0,
            m + 16.0 + 14.0 * k as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Top view of a trajectory with covariance ellipses at sampled steps.
pub fn trajectory_svg(env: Option<&Environment>, path: &[Point], ellipses: &[(Point, Matrix2<f64>)], n_std: f64) -> String {
    let mut pts: Vec<Point> = path.to_vec();
    if let Some(env) = env {
        pts.push(env.bounds.min);
        pts.push(env.bounds.max);
    }
    let (mut lo, mut hi) = (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in &pts {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if !lo.x.is_finite() {
        lo = Point::zeros();
        hi = Point::new(1.0, 1.0);
    }
    let span = (hi - lo).amax().max(1e-9);
    let scale = 500.0 / span;
    let (w, h) = ((hi.x - lo.x) * scale + 40.0, (hi.y - lo.y) * scale + 40.0);
    let tx = |p: &Point| (20.0 + (p.x - lo.x) * scale, h - 20.0 - (p.y - lo.y) * scale);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#);
    if let Some(env) = env {
        for wall in &env.walls {
            let (a, b) = (tx(&wall.a), tx(&wall.b));
            let _ = writeln!(s, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#, a.0, a.1, b.0, b.1);
        }
        for o in &env.obstacles {
            let c = tx(&o.center);
            let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="#bbbbbb"/>"##, c.0, c.1, o.radius * scale);
        }
        let t = tx(&env.tx);
        let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="5" fill="#d62728"/>"##, t.0, t.1);
    }
    if !path.is_empty() {
        let d: Vec<String> = path.iter().map(|p| tx(p)).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##, d.join(" "));
    }
    for (c, cov) in ellipses {
        let (a, b, ang) = ellipse_axes(cov, n_std);
        let (cx, cy) = tx(c);
        // the y axis is flipped on screen, so angles change sign
        let _ = writeln!(
            s,
            r##"<ellipse cx="{cx:.2}" cy="{cy:.2}" rx="{:.3}" ry="{:.3}" transform="rotate({:.3} {cx:.2} {cy:.2})" fill="none" stroke="#2ca02c"/>"##,
            a * scale,
            b * scale,
            -ang.to_degrees()
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
