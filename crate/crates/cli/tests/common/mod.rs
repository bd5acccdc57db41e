#![allow(dead_code)]

use std::path::Path;

use mfentropy_cli::RunConfig;

/// A parsed CSV: header names and numeric rows (empty cells become NaN).
pub struct Csv {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Csv {
    pub fn read(path: &Path) -> Csv {
        let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let mut comments = vec![];
        let mut lines = text.lines();
        let header = loop {
            let l = lines.next().expect("header row");
            match l.strip_prefix("# ") {
                Some(c) => comments.push(c.to_string()),
                None => break l.split(',').map(String::from).collect::<Vec<_>>(),
            }
        };
        let rows = lines
            .map(|l| l.split(',').map(|c| if c.is_empty() { f64::NAN } else { c.parse().unwrap() }).collect())
            .collect();
        Csv { comments, header, rows }
    }

    pub fn col(&self, name: &str) -> Vec<f64> {
        let j = self.header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn cols_with_prefix(&self, prefix: &str) -> Vec<Vec<f64>> {
        self.header
            .iter()
            .filter(|h| h.starts_with(prefix))
            .map(|h| self.col(h))
            .collect()
    }
}

pub fn config(text: &str, dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::parse(text).unwrap();
    cfg.output.dir = dir.display().to_string();
    cfg
}
