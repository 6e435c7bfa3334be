use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::diffnet::Tensor;
use crate::error::{Error, Result};
use crate::losses::{ssim_map_mean, SsimConfig};

pub const CSV_HEADER: &str = "epoch,wallclock_s,mse,rmse,mae,psnr,ssim,g_first,g_hidden,L_P,L_str,L_ADV,L_OT,L_DA";

/// One row of a training log. Absent fields are written as empty cells.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub wallclock_s: Option<f64>,
    pub mse: Option<f64>,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    /// `+inf` for a perfect reconstruction.
    pub psnr: Option<f64>,
    /// Percent.
    pub ssim: Option<f64>,
    pub g_first: Option<f64>,
    pub g_hidden: Option<f64>,
    pub l_p: Option<f64>,
    pub l_str: Option<f64>,
    pub l_adv: Option<f64>,
    pub l_ot: Option<f64>,
    pub l_da: Option<f64>,
}

impl MetricsRecord {
    fn fields(&self) -> [Option<f64>; 13] {
        [
            self.wallclock_s,
            self.mse,
            self.rmse,
            self.mae,
            self.psnr,
            self.ssim,
            self.g_first,
            self.g_hidden,
            self.l_p,
            self.l_str,
            self.l_adv,
            self.l_ot,
            self.l_da,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Option<f64>; 13] {
        [
            &mut self.wallclock_s,
            &mut self.mse,
            &mut self.rmse,
            &mut self.mae,
            &mut self.psnr,
            &mut self.ssim,
            &mut self.g_first,
            &mut self.g_hidden,
            &mut self.l_p,
            &mut self.l_str,
            &mut self.l_adv,
            &mut self.l_ot,
            &mut self.l_da,
        ]
    }

    /// Copies every present field of `other` over `self`.
    pub fn merge(&mut self, other: &MetricsRecord) {
        for (dst, src) in self.fields_mut().into_iter().zip(other.fields()) {
            if src.is_some() {
                *dst = src;
            }
        }
    }

    pub fn to_csv_row(&self) -> String {
        let mut row = self.epoch.to_string();
        for f in self.fields() {
            row.push(',');
            match f {
                Some(v) if v == f64::INFINITY => row.push_str("inf"),
                Some(v) if v == f64::NEG_INFINITY => row.push_str("-inf"),
                Some(v) => {
                    let _ = write!(row, "{v:?}");
                }
                None => {}
            }
        }
        row
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 14 {
            return Err(Error::Format(format!("metrics row has {} cells, expected 14: '{line}'", cells.len())));
        }
        let mut rec = MetricsRecord {
            epoch: cells[0]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad epoch '{}'", cells[0])))?,
            ..Default::default()
        };
        for (slot, cell) in rec.fields_mut().into_iter().zip(&cells[1..]) {
            let cell = cell.trim();
            *slot = match cell {
                "" => None,
                "inf" => Some(f64::INFINITY),
                "-inf" => Some(f64::NEG_INFINITY),
                _ => Some(
                    cell.parse()
                        .map_err(|_| Error::Format(format!("bad metrics value '{cell}'")))?,
                ),
            };
        }
        Ok(rec)
    }
}

/// Reconstruction metrics of `pred` against `truth` (both `[N, 1, H, W]`).
/// SSIM is left empty for images smaller than the SSIM window.
pub fn eval_metrics(pred: &Tensor<f64>, truth: &Tensor<f64>, data_range: f64) -> Result<MetricsRecord> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    if !(data_range > 0.0) {
        return Err(Error::Validation(format!("data range {data_range} must be positive")));
    }
    let n = pred.len().max(1) as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, t) in pred.data().iter().zip(truth.data()) {
        se += (p - t) * (p - t);
        ae += (p - t).abs();
    }
    let mse = se / n;
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (data_range * data_range / mse).log10()
    };
    let cfg = SsimConfig {
        dynamic_range: data_range,
        ..Default::default()
    };
    let ssim = ssim_map_mean(pred, truth, &cfg)
        .ok()
        .map(|v| 100.0 * v.iter().sum::<f64>() / v.len().max(1) as f64);
    Ok(MetricsRecord {
        mse: Some(mse),
        rmse: Some(mse.sqrt()),
        mae: Some(ae / n),
        psnr: Some(psnr),
        ssim,
        ..Default::default()
    })
}

pub fn write_metrics_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "{}: header {:?} does not match '{CSV_HEADER}'",
                path.display(),
                other.unwrap_or("")
            )))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(MetricsRecord::from_csv_row)
        .collect()
}
