//! On-disk formats: provenance-stamped CSV tables, JSON documents and
//! quick-look SVG histograms.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::stats;

/// Identifies the run that produced a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            config_hash: config_hash.into(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// The `# ...` line opening every CSV file.
    pub fn comment(&self) -> String {
        format!(
            "# rcmlab config_hash={} seed={} version={}",
            self.config_hash, self.seed, self.tool_version
        )
    }
}

/// A CSV table: header plus string rows, written behind a provenance line.
#[derive(Debug, Clone, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write<W: Write>(&self, out: W, prov: &Provenance) -> io::Result<()> {
        let mut out = out;
        writeln!(out, "{}", prov.comment())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path, prov: &Provenance) -> io::Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf, prov)?;
        fs::write(path, buf)
    }
}

/// Shortest round-trip representation; non-finite values print as `nan`,
/// `inf` or `-inf`.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:?}")
    }
}

/// A two-column `field,value` table for named scalars.
pub fn scalar_table(fields: &[(&str, String)]) -> Table {
    let mut t = Table::new(&["field", "value"]);
    for (k, v) in fields {
        t.push(vec![k.to_string(), v.clone()]);
    }
    t
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON with a top-level `provenance` object merged into `body`.
pub fn json_document<T: Serialize>(body: &T, prov: &Provenance) -> serde_json::Result<String> {
    let mut s = serde_json::to_string_pretty(&Stamped {
        provenance: prov,
        body,
    })?;
    s.push('\n');
    Ok(s)
}

/// Histogram with ⌈√N⌉ bins and the normal density of matching mean and
/// variance drawn on top.
pub fn histogram_svg(values: &[f64], title: &str, prov: &Provenance) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(
        svg,
        "<!-- config_hash={} seed={} version={} -->",
        prov.config_hash, prov.seed, prov.tool_version
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let finite: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.len() < 2 {
        svg.push_str("</svg>\n");
        return svg;
    }
    let n = finite.len();
    let bins = (n as f64).sqrt().ceil() as usize;
    let (lo, hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in &finite {
        let b = (((x - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let mean = stats::mean(&finite);
    let sd = stats::variance(&finite).sqrt();
    let density = |x: f64| {
        if sd > 0.0 {
            (-0.5 * ((x - mean) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
        } else {
            0.0
        }
    };
    let hist_max = counts.iter().copied().max().unwrap_or(1) as f64 / (n as f64 * width);
    let ymax = hist_max.max(density(mean)) * 1.05;
    let sx = |x: f64| PAD + (x - lo) / (hi - lo) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - y / ymax * (H - 2.0 * PAD);
    for (i, &c) in counts.iter().enumerate() {
        let x0 = lo + i as f64 * width;
        let y = c as f64 / (n as f64 * width);
        let _ = writeln!(
            svg,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="#3182bd" stroke-width="0.5"/>"##,
            sx(x0),
            sy(y),
            sx(x0 + width) - sx(x0),
            sy(0.0) - sy(y)
        );
    }
    let mut path = String::new();
    for k in 0..=200 {
        let x = lo + (hi - lo) * k as f64 / 200.0;
        let _ = write!(path, "{}{:.2},{:.2} ", if k == 0 { "M" } else { "L" }, sx(x), sy(density(x)));
    }
    let _ = writeln!(
        svg,
        r##"<path d="{}" fill="none" stroke="#de2d26" stroke-width="1.5"/>"##,
        path.trim_end()
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="black"/>"#,
        sy(0.0),
        W - PAD
    );
    for (x, anchor) in [(lo, "start"), (hi, "end")] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{:.4}</text>"#,
            sx(x),
            H - PAD + 15.0,
            x
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">N={n} mean={mean:.4} sd={sd:.4}</text>"#,
        W - PAD,
        PAD
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_starts_with_provenance() {
        let prov = Provenance::new("abc", 7);
        let mut t = Table::new(&["replicate", "t", "value"]);
        t.push(vec!["0".into(), "4".into(), num(0.5)]);
        let mut buf = Vec::new();
        t.write(&mut buf, &prov).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert!(lines.next().unwrap().starts_with("# rcmlab config_hash=abc seed=7"));
        assert_eq!(lines.next().unwrap(), "replicate,t,value");
        assert_eq!(lines.next().unwrap(), "0,4,0.5");
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, -3.25e-17, 1.0 / 3.0, 12345.0] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(f64::NAN), "nan");
        assert_eq!(num(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn histogram_has_sqrt_n_bins() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let svg = histogram_svg(&xs, "x", &Provenance::new("h", 1));
        assert_eq!(svg.matches("<rect x=").count(), 10);
        assert!(svg.contains("config_hash=h"));
        assert!(svg.contains("<path"));
    }

    #[test]
    fn json_document_is_stamped() {
        #[derive(Serialize)]
        struct B {
            x: u32,
        }
        let s = json_document(&B { x: 3 }, &Provenance::new("h", 2)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["x"], 3);
        assert_eq!(v["provenance"]["seed"], 2);
    }
}
