//! Atomic file output, CSV tables and SVG scatter plots.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Write `bytes` to a sibling temp file, fsync it, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// An in-memory RFC 4180 table: comma separated, CRLF line endings, quoted where needed.
pub struct Csv {
    writer: csv::Writer<Vec<u8>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(Vec::new());
        writer
            .write_record(header)
            .expect("writing to memory cannot fail");
        Csv { writer }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.writer
            .write_record(fields)
            .expect("writing to memory cannot fail");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.writer
            .into_inner()
            .expect("flushing to memory cannot fail")
    }

    pub fn write(self, path: &Path) -> Result<()> {
        write_atomic(path, &self.into_bytes())
    }
}

/// Parse CSV text into rows of fields, header included.
pub fn parse_csv(text: &str) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("malformed CSV: {e}")))
}

/// Shortest round-tripping decimal form of a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// `x,y,label` table for a labelled point set.
pub fn points_csv(points: &Tensor, labels: &[usize]) -> Csv {
    let mut csv = Csv::new(&["x", "y", "label"]);
    for (i, &l) in labels.iter().enumerate() {
        let r = points.row(i);
        csv.row(&[fmt_f64(r[0]), fmt_f64(r[1]), l.to_string()]);
    }
    csv
}

pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

const VIEW: f64 = 600.0;
const EXTENT: f64 = 3.0;

/// Scatter plot on a fixed 600x600 canvas covering `[-3, 3]^2`, one circle per
/// point, coloured by label. Points outside the window are clamped to its edge.
pub fn scatter_svg(points: &Tensor, labels: &[usize]) -> String {
    let map = |v: f64| (v.clamp(-EXTENT, EXTENT) + EXTENT) / (2.0 * EXTENT) * VIEW;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 600 600" width="600" height="600">"#
    );
    let _ = writeln!(s, r##"<rect width="600" height="600" fill="#ffffff"/>"##);
    for (i, &l) in labels.iter().enumerate() {
        let r = points.row(i);
        let (cx, cy) = (map(r[0]), VIEW - map(r[1]));
        let _ = writeln!(
            s,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="1.5" fill="{}"/>"#,
            PALETTE[l % PALETTE.len()]
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quoting_round_trip() {
        let mut csv = Csv::new(&["a", "b"]);
        csv.row(&["plain".into(), "has,comma".into()]);
        csv.row(&["say \"hi\"".into(), "two\nlines".into()]);
        let text = String::from_utf8(csv.into_bytes()).unwrap();
        assert_eq!(
            text,
            "a,b\r\nplain,\"has,comma\"\r\n\"say \"\"hi\"\"\",\"two\nlines\"\r\n"
        );
        let rows = parse_csv(&text).unwrap();
        assert_eq!(
            rows[2],
            vec!["say \"hi\"".to_string(), "two\nlines".to_string()]
        );
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 12345.678] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn svg_layout() {
        let pts = Tensor::from_rows(&[[0.0, 0.0], [-3.0, 3.0], [10.0, -10.0]]);
        let svg = scatter_svg(&pts, &[0, 1, 9]);
        assert!(svg.contains(r#"viewBox="0 0 600 600""#));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains(r#"cx="300.00" cy="300.00""#));
        assert!(svg.contains(r#"cx="0.00" cy="0.00""#));
        assert!(svg.contains(r##"cx="600.00" cy="600.00" r="1.5" fill="#ff7f0e""##));
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        let names: Vec<_> = fs::read_dir(p.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }
}
