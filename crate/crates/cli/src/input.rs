//! Point lists from CSV files.

use std::path::Path;

use anyhow::{bail, Context, Result};

/// Reads one point per row. Rows whose first cell is not a number (a header)
/// are skipped; all points must have the same dimension.
pub fn read_points(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.get(0).is_none_or(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        let p = rec
            .iter()
            .filter(|c| !c.is_empty())
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .with_context(|| format!("{}: row {}", path.display(), line + 1))?;
        if let Some(first) = out.first() {
            if first.len() != p.len() {
                bail!(
                    "{}: row {} has {} coordinates, expected {}",
                    path.display(),
                    line + 1,
                    p.len(),
                    first.len()
                );
            }
        }
        out.push(p);
    }
    if out.is_empty() {
        bail!("{}: no points", path.display());
    }
    Ok(out)
}
