use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use super::CliError;

/// Severity colours, lightest for normal and darkest for the most severe level.
pub const PALETTE: [&str; 6] = ["#fee8c8", "#fdbb84", "#fc8d59", "#e34a33", "#b30000", "#4d0000"];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 40.0;
const LEGEND_WIDTH: f64 = 110.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlotPoint {
    pub severity: u8,
    pub pc1: f64,
    pub pc2: f64,
}

/// Reads `severity`, `pc1` and `pc2` from an embedding CSV.
pub fn read_points(path: &Path) -> Result<Vec<PlotPoint>, CliError> {
    let file = std::fs::File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::Plot(format!("missing column {name}")))
    };
    let (si, xi, yi) = (column("severity")?, column("pc1")?, column("pc2")?);
    let mut points = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let bad = |col: &str| CliError::Plot(format!("row {row}: bad {col} value"));
        let p = PlotPoint {
            severity: field(si).parse().map_err(|_| bad("severity"))?,
            pc1: field(xi).parse().map_err(|_| bad("pc1"))?,
            pc2: field(yi).parse().map_err(|_| bad("pc2"))?,
        };
        if !p.pc1.is_finite() || !p.pc2.is_finite() {
            return Err(bad("coordinate"));
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(CliError::Plot("embedding CSV has no rows".into()));
    }
    Ok(points)
}

/// Palette entry for `severity` when the largest level present is `max`.
pub fn color_for(severity: u8, max: u8) -> &'static str {
    let last = PALETTE.len() - 1;
    let idx = if usize::from(max) <= last {
        usize::from(severity)
    } else {
        (f64::from(severity) * last as f64 / f64::from(max)).round() as usize
    };
    PALETTE[idx.min(last)]
}

fn scale(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    if hi - lo <= f64::EPSILON {
        return (out_lo + out_hi) / 2.0;
    }
    out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
}

/// Standalone SVG scatter of `(pc1, pc2)` coloured by severity, with a legend.
pub fn render_svg(points: &[PlotPoint]) -> String {
    let levels: BTreeSet<u8> = points.iter().map(|p| p.severity).collect();
    let max = levels.iter().copied().max().unwrap_or(0);
    let bounds = |f: fn(&PlotPoint) -> f64| {
        points
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (x0, x1) = bounds(|p| p.pc1);
    let (y0, y1) = bounds(|p| p.pc2);
    let plot_right = WIDTH - LEGEND_WIDTH;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        plot_right - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">pc1</text>"#,
        (MARGIN + plot_right - MARGIN) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">pc2</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    let _ = writeln!(s, r#"<g id="points">"#);
    for p in points {
        let cx = scale(p.pc1, x0, x1, MARGIN + 6.0, plot_right - MARGIN - 6.0);
        let cy = scale(p.pc2, y0, y1, HEIGHT - MARGIN - 6.0, MARGIN + 6.0);
        let _ = writeln!(
            s,
            r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="3.5" fill="{}" stroke="#333" stroke-width="0.4" data-severity="{}"/>"##,
            color_for(p.severity, max),
            p.severity
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="legend">"#);
    for (i, level) in levels.iter().enumerate() {
        let y = MARGIN + 10.0 + 20.0 * i as f64;
        let x = plot_right + 10.0;
        let _ = writeln!(
            s,
            r##"<rect x="{x}" y="{}" width="12" height="12" fill="{}" stroke="#333" stroke-width="0.4"/>"##,
            y - 10.0,
            color_for(*level, max)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="12">severity {level}</text>"#,
            x + 18.0
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

/// Renders the embedding CSV at `input` to `output`. Nothing is written on error.
pub fn plot_embedding(input: &Path, output: &Path) -> Result<(), CliError> {
    let svg = render_svg(&read_points(input)?);
    std::fs::write(output, svg).map_err(|source| CliError::Io {
        path: output.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(levels: &[u8]) -> Vec<PlotPoint> {
        levels
            .iter()
            .enumerate()
            .map(|(i, &s)| PlotPoint {
                severity: s,
                pc1: i as f64,
                pc2: (i * i) as f64,
            })
            .collect()
    }

    #[test]
    fn legend_has_one_entry_per_level() {
        let svg = render_svg(&pts(&[0, 1, 2, 3, 4, 5, 5, 0]));
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let legend = doc
            .descendants()
            .find(|n| n.attribute("id") == Some("legend"))
            .unwrap();
        assert_eq!(legend.children().filter(|n| n.has_tag_name("text")).count(), 6);
        let circles = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
        assert_eq!(circles, 8);
    }

    #[test]
    fn palette_darkens_with_severity() {
        let lum = |hex: &str| {
            let v = u32::from_str_radix(&hex[1..], 16).unwrap();
            let (r, g, b) = (v >> 16, (v >> 8) & 0xff, v & 0xff);
            0.2126 * r as f64 + 0.7152 * g as f64 + 0.0722 * b as f64
        };
        for w in PALETTE.windows(2) {
            assert!(lum(w[0]) > lum(w[1]));
        }
        assert_eq!(color_for(0, 9), PALETTE[0]);
        assert_eq!(color_for(9, 9), PALETTE[5]);
    }

    #[test]
    fn single_point_and_empty_input() {
        let svg = render_svg(&pts(&[2]));
        roxmltree::Document::parse(&svg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("e.csv");
        std::fs::write(&csv, "subject_id,severity,dist_to_anchor,pc1,pc2\n").unwrap();
        let out = dir.path().join("e.svg");
        assert!(plot_embedding(&csv, &out).is_err());
        assert!(!out.exists());
    }
}
