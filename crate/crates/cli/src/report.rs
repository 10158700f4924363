//! Model × σ pivot of results rows, as markdown or wide CSV.

use std::fmt::Write as _;

use crate::results::{format_sigma, ResultRow};

#[derive(Clone, Debug, PartialEq)]
pub struct Pivot {
    /// Models in first-appearance order.
    pub models: Vec<String>,
    /// Noise levels, ascending.
    pub sigmas: Vec<f32>,
    /// `cells[m][s]` = (psnr, ssim).
    pub cells: Vec<Vec<Option<(f64, f64)>>>,
}

impl Pivot {
    /// Later rows win on duplicate (model, σ).
    pub fn build(rows: &[ResultRow]) -> Self {
        let mut models: Vec<String> = Vec::new();
        let mut sigmas: Vec<f32> = Vec::new();
        for r in rows {
            if !models.contains(&r.model) {
                models.push(r.model.clone());
            }
            if !sigmas.iter().any(|s| s.to_bits() == r.sigma.to_bits()) {
                sigmas.push(r.sigma);
            }
        }
        sigmas.sort_by(f32::total_cmp);
        let mut cells = vec![vec![None; sigmas.len()]; models.len()];
        for r in rows {
            let m = models.iter().position(|m| *m == r.model).expect("collected above");
            let s = sigmas.iter().position(|s| s.to_bits() == r.sigma.to_bits()).expect("collected above");
            cells[m][s] = Some((r.psnr_db, r.ssim));
        }
        Pivot { models, sigmas, cells }
    }

    /// Row index of the first maximum of column `s` (PSNR if `ssim` is false).
    pub fn best(&self, s: usize, ssim: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (m, row) in self.cells.iter().enumerate() {
            if let Some((p, q)) = row[s] {
                let v = if ssim { q } else { p };
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((m, v));
                }
            }
        }
        best.map(|(m, _)| m)
    }

    /// Markdown table; each column's maximum is bold, exactly once.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Model |");
        for sg in &self.sigmas {
            let _ = write!(s, " σ={} PSNR | σ={} SSIM |", format_sigma(*sg), format_sigma(*sg));
        }
        s.push_str("\n|---|");
        s.push_str(&"---:|".repeat(2 * self.sigmas.len()));
        s.push('\n');
        let best: Vec<(Option<usize>, Option<usize>)> =
            (0..self.sigmas.len()).map(|i| (self.best(i, false), self.best(i, true))).collect();
        for (m, model) in self.models.iter().enumerate() {
            let _ = write!(s, "| {model} |");
            for (i, cell) in self.cells[m].iter().enumerate() {
                match cell {
                    Some((p, q)) => {
                        let bold = |v: String, on: bool| if on { format!("**{v}**") } else { v };
                        let _ = write!(
                            s,
                            " {} | {} |",
                            bold(format!("{p:.2}"), best[i].0 == Some(m)),
                            bold(format!("{q:.4}"), best[i].1 == Some(m))
                        );
                    }
                    None => s.push_str(" – | – |"),
                }
            }
            s.push('\n');
        }
        s
    }

    /// Wide CSV: `model,psnr_s<σ>,ssim_s<σ>,...`; empty cells for gaps.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model");
        for sg in &self.sigmas {
            let _ = write!(s, ",psnr_s{0},ssim_s{0}", format_sigma(*sg));
        }
        s.push('\n');
        for (m, model) in self.models.iter().enumerate() {
            s.push_str(model);
            for cell in &self.cells[m] {
                match cell {
                    Some((p, q)) => {
                        let _ = write!(s, ",{p:.4},{q:.4}");
                    }
                    None => s.push_str(",,"),
                }
            }
            s.push('\n');
        }
        s
    }
}
