//! Dataset CSV: a `# F=<f> T=<t>` header, then one window per line with
//! `F·T` row-major values followed by an integer label.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::sea_state::SEA_STATE_CLASSES;
use super::window::{LabeledDataset, TimeWindow};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Loads a sea-state CSV (labels `1..=5`).
pub fn load_csv(path: &Path, f: usize, t: usize) -> Result<LabeledDataset> {
    load_csv_with_classes(path, f, t, SEA_STATE_CLASSES)
}

pub fn load_csv_with_classes(path: &Path, f: usize, t: usize, n_classes: usize) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
    let (hf, ht) = parse_header(header).ok_or_else(|| parse_err(1, format!("expected `# F=<f> T=<t>`, got `{header}`")))?;
    if (hf, ht) != (f, t) {
        return Err(parse_err(1, format!("header declares F={hf} T={ht}, expected F={f} T={t}")));
    }
    let width = f * t;
    let mut windows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width + 1 {
            return Err(parse_err(
                lineno,
                format!("row has {} fields, expected {} values plus a label", fields.len(), width),
            ));
        }
        let values = fields[..width]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| parse_err(lineno, format!("bad value `{s}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        let label: usize = fields[width]
            .parse()
            .map_err(|e| parse_err(lineno, format!("bad label `{}`: {e}", fields[width])))?;
        if label == 0 || label > n_classes {
            return Err(Error::Validation(format!(
                "{} line {lineno}: label {label} outside 1..={n_classes}",
                path.display()
            )));
        }
        let window = TimeWindow::new(Tensor::new(vec![f, t], values)?, label)
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        windows.push(window);
    }
    LabeledDataset::new(windows, n_classes)
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let rest = line.trim().strip_prefix('#')?;
    let mut f = None;
    let mut t = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("F=") {
            f = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("T=") {
            t = v.parse().ok();
        }
    }
    Some((f?, t?))
}

/// Serializes a dataset. Values use the shortest round-trip representation,
/// so `load_csv(save_csv(d))` reproduces `d` exactly.
pub fn to_csv_string(d: &LabeledDataset) -> String {
    let (f, t) = d.window_shape().unwrap_or((0, 0));
    let mut out = format!("# F={f} T={t}\n");
    for w in d.windows() {
        for v in w.values.data() {
            write!(out, "{v:?},").unwrap();
        }
        writeln!(out, "{}", w.label).unwrap();
    }
    out
}

pub fn save_csv(d: &LabeledDataset, path: &Path) -> Result<()> {
    fs::write(path, to_csv_string(d)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("d.csv");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "# F=1 T=2\n0.5,1.5,1\n-2,3e-1,4\n");
        let d = load_csv(&p, 1, 2).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels(), vec![1, 4]);
        assert_eq!(d.windows()[1].values.data(), &[-2.0, 0.3]);
    }

    #[test]
    fn missing_label_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "# F=1 T=2\n0.5,1.5,1\n0.5,1.5\n");
        match load_csv(&p, 1, 2) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "# F=1 T=2\n0.5,1.5,9\n");
        assert!(matches!(load_csv(&p, 1, 2), Err(Error::Validation(_))));
    }

    #[test]
    fn header_is_required() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "0.5,1.5,1\n");
        assert!(matches!(load_csv(&p, 1, 2), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn save_then_load_is_identity() {
        let windows = vec![
            TimeWindow::new(Tensor::new(vec![2, 2], vec![0.1, -1.0 / 3.0, 1e-300, 7.0]).unwrap(), 2).unwrap(),
            TimeWindow::new(Tensor::new(vec![2, 2], vec![std::f64::consts::PI, 0.0, -0.0, 5.5]).unwrap(), 5).unwrap(),
        ];
        let d = LabeledDataset::new(windows, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.csv");
        save_csv(&d, &p).unwrap();
        assert_eq!(load_csv(&p, 2, 2).unwrap(), d);
    }
}
