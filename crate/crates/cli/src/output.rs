use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// A column-major table written as CSV with `#` comment lines above the header.
pub struct Table {
    title: String,
    columns: Vec<(String, String)>,
    rows: Vec<Vec<String>>,
}

impl Table {
    /// `columns` pairs each name with a one-line description.
    pub fn new(title: &str, columns: Vec<(String, String)>) -> Self {
        Self { title: title.into(), columns, rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.push(row.iter().map(|v| num(*v)).collect());
    }

    pub fn render(&self, config_hash: &str) -> String {
        let mut s = String::new();
        writeln!(s, "# {}", self.title).unwrap();
        writeln!(s, "# config_sha256: {config_hash}").unwrap();
        for (name, doc) in &self.columns {
            writeln!(s, "# {name}: {doc}").unwrap();
        }
        let names: Vec<&str> = self.columns.iter().map(|c| c.0.as_str()).collect();
        writeln!(s, "{}", names.join(",")).unwrap();
        for r in &self.rows {
            writeln!(s, "{}", r.join(",")).unwrap();
        }
        s
    }

    pub fn write(&self, dir: &Path, name: &str, config_hash: &str) -> Result<PathBuf> {
        let path = dir.join(name);
        std::fs::write(&path, self.render(config_hash)).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Shortest round-trip representation, so output is reproducible bit for bit.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn col(name: impl Into<String>, doc: impl Into<String>) -> (String, String) {
    (name.into(), doc.into())
}

/// Static line plot; every series shares the x values.
pub fn line_svg(title: &str, x: &[f64], series: &[(&str, &[f64], &str)]) -> String {
    let (w, h, pad) = (640.0, 400.0, 48.0);
    let (x0, x1) = bounds(x.iter());
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.1.iter()));
    let sx = |v: f64| pad + (v - x0) / (x1 - x0).max(1e-300) * (w - 2.0 * pad);
    let sy = |v: f64| h - pad - (v - y0) / (y1 - y0).max(1e-300) * (h - 2.0 * pad);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{pad}" y="24" font-family="sans-serif" font-size="14">{title}</text>"#).unwrap();
    writeln!(
        s,
        r#"<path d="M{pad},{} H{} M{pad},{} V{pad}" stroke="black" fill="none"/>"#,
        h - pad,
        w - pad,
        h - pad
    )
    .unwrap();
    writeln!(s, r#"<text x="{pad}" y="{}" font-family="sans-serif" font-size="11">{x0:.3}</text>"#, h - pad + 16.0).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{x1:.3}</text>"#, w - pad - 24.0, h - pad + 16.0).unwrap();
    writeln!(s, r#"<text x="4" y="{}" font-family="sans-serif" font-size="11">{y0:.3}</text>"#, h - pad).unwrap();
    writeln!(s, r#"<text x="4" y="{}" font-family="sans-serif" font-size="11">{y1:.3}</text>"#, pad + 4.0).unwrap();
    for (_, ys, style) in series {
        let pts: Vec<String> = x.iter().zip(ys.iter()).map(|(a, b)| format!("{:.2},{:.2}", sx(*a), sy(*b))).collect();
        writeln!(s, r#"<polyline points="{}" fill="none" {style}/>"#, pts.join(" ")).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn bounds<'a>(it: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if lo.is_finite() && hi > lo {
        (lo, hi)
    } else {
        (lo.min(0.0), lo.max(0.0) + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_carries_hash_and_semantics() {
        let mut t = Table::new("demo", vec![col("s", "time"), col("v", "value")]);
        t.push_numbers(&[0.5, 1e-20]);
        let out = t.render("abc");
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[1], "# config_sha256: abc");
        assert_eq!(lines[2], "# s: time");
        assert_eq!(lines[4], "s,v");
        assert_eq!(lines[5], "0.5,1e-20");
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }
}
