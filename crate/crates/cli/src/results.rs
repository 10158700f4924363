//! `results.csv`: one row per (model, σ).

use std::path::Path;

use anyhow::{bail, Context, Result};
use wipu_core::metrics::MetricRow;

/// Bumped whenever a CSV layout changes; recorded in every manifest.
pub const CSV_SCHEMA: u32 = 1;
pub const RESULTS_HEADER: [&str; 5] = ["model", "sigma", "psnr_db", "ssim", "n_images"];

/// A results row as stored: metrics rounded to 4 decimals.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub sigma: f32,
    pub psnr_db: f64,
    pub ssim: f64,
    pub n_images: usize,
}

impl From<&MetricRow> for ResultRow {
    fn from(r: &MetricRow) -> Self {
        ResultRow { model: r.model.clone(), sigma: r.sigma, psnr_db: r.psnr_db, ssim: r.ssim, n_images: r.n_images }
    }
}

impl ResultRow {
    fn key(&self) -> (&str, u32) {
        (&self.model, self.sigma.to_bits())
    }
}

pub fn format_sigma(s: f32) -> String {
    s.to_string()
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != RESULTS_HEADER {
        bail!(
            "{}: unrecognised results header `{}` (schema {CSV_SCHEMA} expects `{}`)",
            path.display(),
            header.join(","),
            RESULTS_HEADER.join(",")
        );
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        let field = |k: usize| rec.get(k).unwrap_or_default().trim();
        let parse_err = |what: &str| format!("{}: row {}: bad {what}", path.display(), i + 2);
        rows.push(ResultRow {
            model: field(0).to_string(),
            sigma: field(1).parse().with_context(|| parse_err("sigma"))?,
            psnr_db: field(2).parse().with_context(|| parse_err("psnr_db"))?,
            ssim: field(3).parse().with_context(|| parse_err("ssim"))?,
            n_images: field(4).parse().with_context(|| parse_err("n_images"))?,
        });
    }
    Ok(rows)
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            format_sigma(r.sigma),
            format!("{:.4}", r.psnr_db),
            format!("{:.4}", r.ssim),
            r.n_images.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Replaces rows with the same (model, σ) in place and appends the rest, so
/// rerunning an evaluation leaves the file unchanged.
pub fn upsert(existing: &mut Vec<ResultRow>, new: impl IntoIterator<Item = ResultRow>) {
    for row in new {
        match existing.iter_mut().find(|r| r.key() == row.key()) {
            Some(slot) => *slot = row,
            None => existing.push(row),
        }
    }
}

/// Reads `path` if present, merges `new` in and writes it back.
pub fn update_results(path: &Path, new: impl IntoIterator<Item = ResultRow>) -> Result<Vec<ResultRow>> {
    let mut rows = if path.exists() { read_results(path)? } else { Vec::new() };
    upsert(&mut rows, new);
    write_results(path, &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str, sigma: f32, psnr: f64) -> ResultRow {
        ResultRow { model: model.into(), sigma, psnr_db: psnr, ssim: 0.5, n_images: 10 }
    }

    #[test]
    fn write_read_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let rows = vec![row("unet", 15.0, 30.12346), row("unet", 7.5, 33.0)];
        write_results(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "model,sigma,psnr_db,ssim,n_images\nunet,15,30.1235,0.5000,10\nunet,7.5,33.0000,0.5000,10\n");
        let back = read_results(&path).unwrap();
        assert_eq!(back[0].psnr_db, 30.1235);
        assert_eq!(back[1].sigma, 7.5);
    }

    #[test]
    fn unknown_headers_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        std::fs::write(&path, "model,sigma,psnr,ssim\nunet,15,30,0.9\n").unwrap();
        assert!(read_results(&path).unwrap_err().to_string().contains("unrecognised results header"));
        std::fs::write(&path, "model,sigma,psnr_db,ssim,n_images\nunet,abc,30,0.9,1\n").unwrap();
        assert!(read_results(&path).is_err());
    }

    #[test]
    fn upsert_replaces_in_place() {
        let mut rows = vec![row("a", 15.0, 1.0), row("b", 15.0, 2.0)];
        upsert(&mut rows, [row("a", 15.0, 3.0), row("a", 25.0, 4.0)]);
        assert_eq!(rows, vec![row("a", 15.0, 3.0), row("b", 15.0, 2.0), row("a", 25.0, 4.0)]);
    }
}
