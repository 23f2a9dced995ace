//! Plot-ready tables built from stored results. Every function here is a pure
//! transformation: the same inputs give byte-identical output.
//!
//! | table | columns |
//! |---|---|
//! | smile slices | `logm,maturity,vol_model[,vol_bid][,vol_ask]`, grouped by maturity |
//! | heatmap | `asset_class,logm,maturity,vol_model,vol_target,abs_error,ci_half,within_ci`, one row per grid point |
//! | RMSE series | `label,rmse_spx,rmse_vix` |

use std::io::Write;

use crate::error::{Error, Result};
use crate::pricing::IVSurface;

fn cell(x: f64) -> String {
    if x.is_finite() { format!("{x}") } else { String::new() }
}

fn same_grid(a: &IVSurface, b: &IVSurface) -> Result<()> {
    if a.asset_class != b.asset_class {
        return Err(Error::GridMismatch(format!("{} surface paired with {}", a.asset_class.as_str(), b.asset_class.as_str())));
    }
    b.check_grid(&a.grid())
}

/// Vol smiles, one block per maturity.
pub fn write_smile_slices<W: Write>(model: &IVSurface, bid: Option<&IVSurface>, ask: Option<&IVSurface>, mut w: W) -> Result<()> {
    for s in [bid, ask].into_iter().flatten() {
        same_grid(model, s)?;
    }
    let mut header = "logm,maturity,vol_model".to_string();
    if bid.is_some() {
        header.push_str(",vol_bid");
    }
    if ask.is_some() {
        header.push_str(",vol_ask");
    }
    writeln!(w, "{header}")?;
    for j in 0..model.maturities.len() {
        for i in 0..model.strikes_logm.len() {
            let mut row = format!("{},{},{}", model.strikes_logm[i], model.maturities[j], cell(model.vol(i, j)));
            for s in [bid, ask].into_iter().flatten() {
                row.push(',');
                row.push_str(&cell(s.vol(i, j)));
            }
            writeln!(w, "{row}")?;
        }
    }
    Ok(())
}

/// Pointwise error of `model` against `target`; the half-width comes from `target`,
/// else from `model`.
pub fn write_heatmap<W: Write>(model: &IVSurface, target: &IVSurface, mut w: W, header: bool) -> Result<()> {
    same_grid(model, target)?;
    if header {
        writeln!(w, "asset_class,logm,maturity,vol_model,vol_target,abs_error,ci_half,within_ci")?;
    }
    let ci = target.ci_half.as_ref().or(model.ci_half.as_ref());
    for (idx, (k, t)) in model.grid().points().enumerate() {
        let (m, v) = (model.vols[idx], target.vols[idx]);
        let err = (m - v).abs();
        let h = ci.map(|c| c[idx]).unwrap_or(f64::NAN);
        let within = if err.is_finite() && h.is_finite() { (err <= h).to_string() } else { String::new() };
        writeln!(w, "{},{k},{t},{},{},{},{},{within}", model.asset_class.as_str(), cell(m), cell(v), cell(err), cell(h))?;
    }
    Ok(())
}

/// `label,rmse_spx,rmse_vix` from a batch calibration table.
pub fn write_rmse_series<W: Write>(batch_csv: &str, mut w: W) -> Result<()> {
    let mut lines = batch_csv.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::format("empty batch table"))?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or_else(|| Error::format(format!("batch table has no '{name}' column")));
    let (l, s, v) = (col("label")?, col("rmse_spx")?, col("rmse_vix")?);
    writeln!(w, "label,rmse_spx,rmse_vix")?;
    for (n, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != header.len() {
            return Err(Error::format(format!("batch row {} has {} columns, expected {}", n + 1, cols.len(), header.len())));
        }
        writeln!(w, "{},{},{}", cols[l], cols[s], cols[v])?;
    }
    Ok(())
}
