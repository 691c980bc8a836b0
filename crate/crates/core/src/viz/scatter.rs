use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub code: String,
    pub x: f64,
    pub y: f64,
    pub color_value: f64,
}

/// Relative ranks `r/S` with mid-ranks for ties. Codes whose value is missing
/// are left out and returned separately.
pub fn rank_colors(values: &[(String, Option<f64>)]) -> (Vec<(String, f64)>, Vec<String>) {
    let present: Vec<(&String, f64)> = values.iter().filter_map(|(c, v)| v.map(|v| (c, v))).collect();
    let omitted = values.iter().filter(|(_, v)| v.is_none()).map(|(c, _)| c.clone()).collect();
    let s = present.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| present[a].1.total_cmp(&present[b].1));
    let mut colors = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && present[order[j + 1]].1 == present[order[i]].1 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            colors[order[k]] = mid / s as f64;
        }
        i = j + 1;
    }
    let ranked = present.iter().zip(colors).map(|((c, _), v)| ((*c).clone(), v)).collect();
    (ranked, omitted)
}

pub fn write_scatter_csv<W: Write>(points: &[ScatterPoint], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for p in points {
        wtr.serialize(p)?;
    }
    wtr.flush().map_err(|e| Error::io("<scatter>", e))?;
    Ok(())
}

pub fn read_scatter_csv<R: Read>(r: R) -> Result<Vec<ScatterPoint>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["code", "x", "y", "color_value"] {
        return Err(Error::Schema(format!("unexpected scatter header {:?}", headers)));
    }
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

const RAMP: [(f64, [u8; 3]); 5] = [
    (0.0, [68, 1, 84]),
    (0.25, [59, 82, 139]),
    (0.5, [33, 145, 140]),
    (0.75, [94, 201, 98]),
    (1.0, [253, 231, 37]),
];

/// Color for a position `t ∈ [0, 1]` on the scale.
pub fn ramp_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let k = RAMP.iter().position(|(s, _)| t <= *s).unwrap_or(RAMP.len() - 1).max(1);
    let (s0, c0) = RAMP[k - 1];
    let (s1, c1) = RAMP[k];
    let f = (t - s0) / (s1 - s0);
    let mix = |a: u8, b: u8| (a as f64 + f * (b as f64 - a as f64)).round() as u8;
    [mix(c0[0], c1[0]), mix(c0[1], c1[1]), mix(c0[2], c1[2])]
}

fn hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Static SVG scatter with one circle per point and a gradient legend running
/// from `c = 1/S` to `c = 1`.
pub fn write_scatter_svg<W: Write>(points: &[ScatterPoint], attribute: &str, mut w: W) -> Result<()> {
    let (width, height, margin, legend_w) = (640.0, 520.0, 40.0, 90.0);
    let plot_w = width - 2.0 * margin - legend_w;
    let plot_h = height - 2.0 * margin;
    let bounds = |f: fn(&ScatterPoint) -> f64| {
        let lo = points.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0) - 1.0, hi.max(0.0) + 1.0) }
    };
    let (x0, x1) = bounds(|p| p.x);
    let (y0, y1) = bounds(|p| p.y);
    let lo_c = 1.0 / points.len().max(1) as f64;
    let scale = |c: f64| if lo_c < 1.0 { (c - lo_c) / (1.0 - lo_c) } else { 1.0 };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    s.push_str("<defs><linearGradient id=\"scale\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">");
    for (stop, c) in RAMP {
        let _ = write!(s, r#"<stop offset="{stop}" stop-color="{}"/>"#, hex(c));
    }
    s.push_str("</linearGradient></defs>\n");
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{margin}" y="{}" font-family="sans-serif" font-size="14">t-SNE of code embeddings, colored by {}</text>"#,
        margin - 12.0,
        escape(attribute)
    );
    for p in points {
        let cx = margin + (p.x - x0) / (x1 - x0) * plot_w;
        let cy = margin + plot_h - (p.y - y0) / (y1 - y0) * plot_h;
        let _ = writeln!(
            s,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="4" fill="{}"><title>{} {:.4}</title></circle>"#,
            hex(ramp_color(scale(p.color_value))),
            escape(&p.code),
            p.color_value
        );
    }
    let lx = width - margin - legend_w + 30.0;
    let _ = writeln!(
        s,
        r#"<rect x="{lx}" y="{margin}" width="16" height="{plot_h}" fill="url(#scale)" stroke="black" stroke-width="0.5"/>"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">1</text>"#, lx + 22.0, margin + 8.0);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{lo_c:.3}</text>"#,
        lx + 22.0,
        margin + plot_h
    );
    s.push_str("</svg>\n");
    w.write_all(s.as_bytes()).map_err(|e| Error::io("<svg>", e))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn named(values: &[f64]) -> Vec<(String, Option<f64>)> {
        values.iter().enumerate().map(|(i, v)| (format!("C{i}"), Some(*v))).collect()
    }

    #[test]
    fn rank_color_examples() {
        let (c, _) = rank_colors(&named(&[3.0, 9.0, 1.0, 5.0, 4.0, 8.0, 7.0, 2.0, 10.0, 6.0]));
        assert_eq!(c.iter().find(|(k, _)| k == "C3").unwrap().1, 0.5);
        let mut vals: Vec<f64> = c.iter().map(|(_, v)| *v).collect();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, (1..=10).map(|r| r as f64 / 10.0).collect::<Vec<_>>());
        let (eq, _) = rank_colors(&named(&[2.0; 6]));
        assert!(eq.iter().all(|(_, v)| (*v - 7.0 / 12.0).abs() < 1e-15));
    }

    #[test]
    fn missing_values_are_omitted() {
        let vals = vec![("A".to_string(), Some(1.0)), ("B".to_string(), None), ("C".to_string(), Some(0.5))];
        let (c, omitted) = rank_colors(&vals);
        assert_eq!(omitted, vec!["B"]);
        assert_eq!(c, vec![("A".to_string(), 1.0), ("C".to_string(), 0.5)]);
    }

    proptest! {
        #[test]
        fn monotone_transform_invariant(v in prop::collection::vec(-5.0f64..5.0, 1..30)) {
            let (a, _) = rank_colors(&named(&v));
            let t: Vec<f64> = v.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
            let (b, _) = rank_colors(&named(&t));
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn svg_and_csv() {
        let points: Vec<ScatterPoint> = (0..150)
            .map(|i| ScatterPoint { code: format!("S{i:03}"), x: (i as f64).sin(), y: i as f64 * 0.1, color_value: (i + 1) as f64 / 150.0 })
            .collect();
        let mut svg = Vec::new();
        write_scatter_svg(&points, "std60", &mut svg).unwrap();
        let text = String::from_utf8(svg).unwrap();
        assert_eq!(text.matches("<circle").count(), 150);
        assert!(text.contains(&hex(ramp_color(0.0))) && text.contains(&hex(ramp_color(1.0))));
        let mut buf = Vec::new();
        write_scatter_csv(&points, &mut buf).unwrap();
        assert!(buf.starts_with(b"code,x,y,color_value\n"));
        assert_eq!(read_scatter_csv(buf.as_slice()).unwrap(), points);
    }

    #[test]
    fn ramp_endpoints_and_monotone_luminance() {
        assert_eq!(ramp_color(0.0), RAMP[0].1);
        assert_eq!(ramp_color(1.0), RAMP[4].1);
        let lum = |c: [u8; 3]| 0.2126 * c[0] as f64 + 0.7152 * c[1] as f64 + 0.0722 * c[2] as f64;
        let l: Vec<f64> = (0..=20).map(|i| lum(ramp_color(i as f64 / 20.0))).collect();
        assert!(l.windows(2).all(|w| w[1] >= w[0]));
    }
}
