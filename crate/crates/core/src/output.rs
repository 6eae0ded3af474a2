//! File output with write-then-rename, so a failed run never leaves a
//! truncated CSV behind.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Writes `header` and `rows` as CSV to a sibling temp file, then renames it.
pub fn write_csv_atomic<S: AsRef<str>>(
    path: impl AsRef<Path>,
    header: &[&str],
    rows: &[Vec<S>],
) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(row.iter().map(|s| s.as_ref()))?;
    }
    let bytes = wtr.into_inner().map_err(|e| crate::Error::Io(e.to_string()))?;
    write_bytes_atomic(path, &bytes)
}

pub fn write_bytes_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_partial_file_remains() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.csv");
        write_csv_atomic(&p, &["a", "b"], &[vec!["1", "0.5"]]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n1,0.5\n");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
