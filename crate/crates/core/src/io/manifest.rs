use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{IqtError, Result};

pub const MANIFEST_HEADER: [&str; 3] = ["ref_path", "dist_path", "mos"];

/// One reference/distorted pair with its mean opinion score.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub ref_path: PathBuf,
    pub dist_path: PathBuf,
    pub mos: f64,
}

/// Reads a `ref_path,dist_path,mos` CSV. Relative paths are resolved
/// against the directory holding the manifest.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| IqtError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest_str(&text, base, path)
}

pub(crate) fn parse_manifest_str(text: &str, base: &Path, origin: &Path) -> Result<Vec<ManifestRow>> {
    let err = |line: u64, msg: String| IqtError::Manifest {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut records = reader.records();
    match records.next() {
        None => return Err(err(1, "missing header `ref_path,dist_path,mos`".into())),
        Some(Err(e)) => return Err(err(1, e.to_string())),
        Some(Ok(header)) => {
            if header.iter().ne(MANIFEST_HEADER) {
                return Err(err(
                    1,
                    format!(
                        "header must be exactly `ref_path,dist_path,mos`, found `{}`",
                        header.iter().collect::<Vec<_>>().join(",")
                    ),
                ));
            }
        }
    }

    let mut rows = Vec::new();
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(err(line, format!("expected 3 fields, found {}", record.len())));
        }
        let mos: f64 = record[2]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| err(line, format!("mos `{}` is not a finite number", &record[2])))?;
        if record[0].is_empty() || record[1].is_empty() {
            return Err(err(line, "empty path".into()));
        }
        rows.push(ManifestRow {
            ref_path: base.join(&record[0]),
            dist_path: base.join(&record[1]),
            mos,
        });
    }
    Ok(rows)
}

/// Writes rows with paths exactly as given.
pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("ref_path,dist_path,mos\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.ref_path.display(),
            r.dist_path.display(),
            r.mos
        ));
    }
    fs::write(path, out).map_err(|e| IqtError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<ManifestRow>> {
        parse_manifest_str(text, Path::new("/data"), Path::new("/data/m.csv"))
    }

    #[test]
    fn empty_body_is_empty_list() {
        assert!(parse("ref_path,dist_path,mos\n").unwrap().is_empty());
    }

    #[test]
    fn rows_in_order_with_resolved_paths() {
        let rows = parse("ref_path,dist_path,mos\na.ppm,b.ppm,1.5\nc.ppm,/abs/d.ppm,2\ne.ppm,f.ppm,-3e-1\n").unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].ref_path, PathBuf::from("/data/a.ppm"));
        assert_eq!(rows[1].dist_path, PathBuf::from("/abs/d.ppm"));
        assert_eq!(rows.iter().map(|r| r.mos).collect::<Vec<_>>(), vec![1.5, 2.0, -0.3]);
    }

    #[test]
    fn non_numeric_mos_names_line() {
        let err = parse("ref_path,dist_path,mos\na.ppm,b.ppm,abc\n").unwrap_err();
        match err {
            IqtError::Manifest { line, ref msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("abc"));
            }
            other => panic!("{other:?}"),
        }
        let err = parse("ref_path,dist_path,mos\na,b,1\nc,d,1\ne,f,nan\n").unwrap_err();
        assert!(matches!(err, IqtError::Manifest { line: 4, .. }));
    }

    #[test]
    fn bad_header_and_field_count() {
        assert!(matches!(parse("ref,dist,mos\n"), Err(IqtError::Manifest { line: 1, .. })));
        assert!(matches!(parse(""), Err(IqtError::Manifest { line: 1, .. })));
        assert!(matches!(
            parse("ref_path,dist_path,mos\na,b\n"),
            Err(IqtError::Manifest { line: 2, .. })
        ));
    }
}
