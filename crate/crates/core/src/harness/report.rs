//! CSV reports: `accuracy.csv`, `per_class.csv` and one `confusion_h{h}.csv`
//! per horizon.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::EvalReport;
use crate::{Error, Result};

pub const ACCURACY_FILE: &str = "accuracy.csv";
pub const PER_CLASS_FILE: &str = "per_class.csv";

pub fn confusion_file(horizon: f64) -> String {
    format!("confusion_h{horizon}.csv")
}

/// Writes the report into `dir` and returns the written paths.
pub fn write_report(report: &EvalReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if report.num_test_sequences == 0 {
        return Err(Error::invalid("refusing to report on an empty test set"));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        files.push(path);
        Ok(())
    };

    let mut acc = String::from("horizon_s,accuracy\n");
    for (h, a) in report.horizons.iter().zip(&report.accuracy_at) {
        writeln!(acc, "{h},{a}").expect("string write");
    }
    put(ACCURACY_FILE.into(), acc)?;

    let mut per = String::from("horizon_s,class,accuracy\n");
    for (h, row) in report.horizons.iter().zip(&report.per_class_accuracy_at) {
        for (c, a) in row.iter().enumerate() {
            match a {
                Some(a) => writeln!(per, "{h},{c},{a}"),
                None => writeln!(per, "{h},{c},"),
            }
            .expect("string write");
        }
    }
    put(PER_CLASS_FILE.into(), per)?;

    for (h, cm) in report.horizons.iter().zip(&report.confusion_at) {
        let mut text = String::from("actual");
        for c in 0..report.num_classes {
            write!(text, ",pred_{c}").expect("string write");
        }
        text.push('\n');
        for (c, row) in cm.iter().enumerate() {
            write!(text, "{c}").expect("string write");
            for n in row {
                write!(text, ",{n}").expect("string write");
            }
            text.push('\n');
        }
        put(confusion_file(*h), text)?;
    }
    Ok(files)
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_rows(path: &Path, header: &str) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == header => {}
        other => return Err(malformed(path, format!("expected header {header:?}, found {other:?}"))),
    }
    Ok(lines.map(|l| l.split(',').map(str::to_string).collect()).collect())
}

fn parse<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T> {
    s.parse().map_err(|_| malformed(path, format!("cannot parse {s:?}")))
}

/// Reads a report written by [`write_report`].
pub fn read_report(dir: impl AsRef<Path>) -> Result<EvalReport> {
    let dir = dir.as_ref();
    let acc_path = dir.join(ACCURACY_FILE);
    let horizons: Vec<f64> = read_rows(&acc_path, "horizon_s,accuracy")?
        .iter()
        .map(|r| parse(&acc_path, &r[0]))
        .collect::<Result<_>>()?;
    let mut confusions = Vec::new();
    for &h in &horizons {
        let path = dir.join(confusion_file(h));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let header = text.lines().next().unwrap_or_default().to_string();
        let cm: Vec<Vec<usize>> = read_rows(&path, &header)?
            .iter()
            .map(|r| r[1..].iter().map(|v| parse(&path, v)).collect())
            .collect::<Result<_>>()?;
        confusions.push(cm);
    }
    let report = EvalReport::from_confusions(horizons, confusions)?;

    // The derived files must agree with the confusion matrices.
    let stored: Vec<f64> = read_rows(&acc_path, "horizon_s,accuracy")?
        .iter()
        .map(|r| {
            r.get(1)
                .map_or(Err(malformed(&acc_path, "missing column")), |v| parse(&acc_path, v))
        })
        .collect::<Result<_>>()?;
    if stored != report.accuracy_at {
        return Err(malformed(&acc_path, "accuracies disagree with the confusion matrices"));
    }
    let per_path = dir.join(PER_CLASS_FILE);
    let rows = read_rows(&per_path, "horizon_s,class,accuracy")?;
    let expected: usize = report.horizons.len() * report.num_classes;
    if rows.len() != expected {
        return Err(malformed(
            &per_path,
            format!("expected {expected} rows, found {}", rows.len()),
        ));
    }
    for (i, r) in rows.iter().enumerate() {
        let (hi, c) = (i / report.num_classes, i % report.num_classes);
        let value: Option<f64> = match r.get(2).map(String::as_str) {
            Some("") | None => None,
            Some(v) => Some(parse(&per_path, v)?),
        };
        if value != report.per_class_accuracy_at[hi][c] {
            return Err(malformed(
                &per_path,
                format!("row {} disagrees with the confusion matrices", i + 2),
            ));
        }
    }
    Ok(report)
}
