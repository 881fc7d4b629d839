//! Per-iteration training log.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "iter,loss_total,loss_l1,loss_dssim,loss_tv,loss_sem,psnr,ssim,wall_time_s";

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsRow {
    pub iter: usize,
    pub loss_total: f64,
    pub loss_l1: f64,
    pub loss_dssim: f64,
    pub loss_tv: f64,
    pub loss_sem: f64,
    /// Present on evaluation rows only.
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub wall_time_s: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.iter,
            r.loss_total,
            r.loss_l1,
            r.loss_dssim,
            r.loss_tv,
            r.loss_sem,
            opt(r.psnr),
            opt(r.ssim),
            r.wall_time_s
        );
    }
    s
}

pub fn write_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    std::fs::write(path, to_csv(rows)).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format(format!("{}: unexpected metrics header", path.display())));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Format(format!("bad number {s:?} in metrics")))};
    let optnum = |s: &str| -> Result<Option<f64>> { if s.is_empty() { Ok(None) } else { num(s).map(Some) } };
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 9 {
                return Err(Error::Format(format!("metrics row has {} fields", f.len())));
            }
            Ok(MetricsRow {
                iter: f[0].parse().map_err(|_| Error::Format(format!("bad iteration {:?}", f[0])))?,
                loss_total: num(f[1])?,
                loss_l1: num(f[2])?,
                loss_dssim: num(f[3])?,
                loss_tv: num(f[4])?,
                loss_sem: num(f[5])?,
                psnr: optnum(f[6])?,
                ssim: optnum(f[7])?,
                wall_time_s: num(f[8])?,
            })
        })
        .collect()
}
