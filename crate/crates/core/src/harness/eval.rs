use std::path::Path;

use ndarray::{Array3, Zip};
use serde::{Serialize, Serializer};

use crate::datamodel::Mask;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ingestion::Sample;
use crate::losses::canny::{canny_edges, EdgeMap, DEFAULT_HIGH, DEFAULT_LOW};
use crate::model::Outpainter;

/// Peak signal-to-noise ratio (peak 1.0) over `region`, or the whole grid.
/// Identical inputs give `f64::INFINITY`.
pub fn psnr(pred: &Array3<f32>, gt: &Array3<f32>, region: Option<&Mask>) -> Result<f64> {
    let (c, h, w) = pred.dim();
    if gt.dim() != (c, h, w) || region.is_some_and(|m| m.dim() != (h, w)) {
        return Err(Error::ShapeMismatch(format!("psnr: {:?} vs {:?}", pred.dim(), gt.dim())));
    }
    let mut sum = 0.0f64;
    let mut n = 0usize;
    Zip::indexed(pred).and(gt).for_each(|(_, i, j), &p, &t| {
        if region.is_none_or(|m| m.get(i, j)) {
            let d = p as f64 - t as f64;
            sum += d * d;
            n += 1;
        }
    });
    if n == 0 {
        return Err(Error::InvalidInput("psnr over an empty region".into()));
    }
    let mse = sum / n as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

/// Mean absolute error over `region`.
pub fn masked_l1(pred: &Array3<f32>, gt: &Array3<f32>, region: &Mask) -> f64 {
    let mut sum = 0.0f64;
    let mut n = 0usize;
    Zip::indexed(pred).and(gt).for_each(|(_, i, j), &p, &t| {
        if region.get(i, j) {
            sum += (p as f64 - t as f64).abs();
            n += 1;
        }
    });
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// F1 between two edge maps; two empty maps agree perfectly.
pub fn edge_f1(pred: &EdgeMap, gt: &EdgeMap) -> Result<f64> {
    let tp = pred.and(gt)?.count() as f64;
    let (np, ng) = (pred.count() as f64, gt.count() as f64);
    if np == 0.0 && ng == 0.0 {
        return Ok(1.0);
    }
    if tp == 0.0 {
        return Ok(0.0);
    }
    let (p, r) = (tp / np, tp / ng);
    Ok(2.0 * p * r / (p + r))
}

/// Composited prediction and its Canny edges.
pub fn infer(model: &Outpainter<f32>, sample: &Sample) -> Result<(Array3<f32>, EdgeMap)> {
    let fwd = model.forward(&sample.depth, &sample.input_rgb)?;
    let out = fwd.output;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("inference output".into()));
    }
    let edges = canny_edges(&out, DEFAULT_LOW, DEFAULT_HIGH)?;
    Ok((out, edges))
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleMetrics {
    pub name: String,
    #[serde(serialize_with = "ser_db")]
    pub psnr_full: f64,
    #[serde(serialize_with = "ser_db")]
    pub psnr_unknown: f64,
    pub l1_unknown: f64,
    pub edge_f1: f64,
    pub known_fraction: f64,
    pub depth_valid_fraction: f64,
    pub depth_valid_unknown_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub count: usize,
    #[serde(serialize_with = "ser_db")]
    pub psnr_full: f64,
    #[serde(serialize_with = "ser_db")]
    pub psnr_unknown: f64,
    pub l1_unknown: f64,
    pub edge_f1: f64,
    pub known_fraction: f64,
    pub depth_valid_fraction: f64,
    pub depth_valid_unknown_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub aggregate: Aggregate,
    pub samples: Vec<SampleMetrics>,
    pub fid: &'static str,
    pub lpips: &'static str,
    pub ap: &'static str,
}

pub const UNAVAILABLE: &str = "unavailable";

/// Metrics of one prediction against its sample's ground truth.
pub fn sample_metrics(name: &str, pred: &Array3<f32>, sample: &Sample) -> Result<SampleMetrics> {
    let known = sample.input_rgb.mask();
    let unknown = known.complement();
    let gt = &sample.full_rgb;
    let e_pred = canny_edges(pred, DEFAULT_LOW, DEFAULT_HIGH)?;
    let e_gt = canny_edges(gt, DEFAULT_LOW, DEFAULT_HIGH)?;
    let (h, w) = known.dim();
    let total = (h * w) as f64;
    let valid = sample.depth.mask();
    Ok(SampleMetrics {
        name: name.to_string(),
        psnr_full: psnr(pred, gt, None)?,
        psnr_unknown: psnr(pred, gt, Some(&unknown))?,
        l1_unknown: masked_l1(pred, gt, &unknown),
        edge_f1: edge_f1(&e_pred, &e_gt)?,
        known_fraction: known.count() as f64 / total,
        depth_valid_fraction: valid.count() as f64 / total,
        depth_valid_unknown_fraction: valid.and(&unknown)?.count() as f64 / unknown.count().max(1) as f64,
    })
}

/// Means over samples; a single infinite PSNR makes the mean infinite.
pub fn aggregate(samples: &[SampleMetrics]) -> Result<Aggregate> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let mean = |f: fn(&SampleMetrics) -> f64| samples.iter().map(f).sum::<f64>() / samples.len() as f64;
    Ok(Aggregate {
        count: samples.len(),
        psnr_full: mean(|s| s.psnr_full),
        psnr_unknown: mean(|s| s.psnr_unknown),
        l1_unknown: mean(|s| s.l1_unknown),
        edge_f1: mean(|s| s.edge_f1),
        known_fraction: mean(|s| s.known_fraction),
        depth_valid_fraction: mean(|s| s.depth_valid_fraction),
        depth_valid_unknown_fraction: mean(|s| s.depth_valid_unknown_fraction),
    })
}

pub fn report(samples: Vec<SampleMetrics>) -> Result<EvalReport> {
    Ok(EvalReport { aggregate: aggregate(&samples)?, samples, fid: UNAVAILABLE, lpips: UNAVAILABLE, ap: UNAVAILABLE })
}

/// Runs inference on every named sample and scores it.
pub fn evaluate(model: &Outpainter<f32>, dataset: &[(String, Sample)], exec: Exec) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let metrics = exec.map(dataset, |(name, s)| {
        let (pred, _) = infer(model, s)?;
        sample_metrics(name, &pred, s)
    });
    report(metrics.into_iter().collect::<Result<_>>()?)
}

/// Writes the JSON report and the per-sample CSV next to it.
pub fn write_report(r: &EvalReport, json_path: &Path) -> Result<()> {
    if let Some(dir) = json_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(json_path, serde_json::to_string_pretty(r)?)?;
    let mut w = csv::Writer::from_path(json_path.with_extension("csv"))?;
    for s in &r.samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::{synth_scene_with, Layout};

    #[test]
    fn psnr_closed_forms() {
        let gt = Array3::from_elem((3, 4, 4), 0.5f32);
        let pred = gt.mapv(|v| v + 0.1);
        assert!((psnr(&pred, &gt, None).unwrap() - 20.0).abs() < 1e-5);
        assert_eq!(psnr(&gt, &gt, None).unwrap(), f64::INFINITY);
        let left = Mask::from_fn(4, 4, |_, j| j < 2);
        let mut half = gt.clone();
        half.slice_mut(ndarray::s![.., .., 2..]).fill(0.9);
        assert_eq!(psnr(&half, &gt, Some(&left)).unwrap(), f64::INFINITY);
        assert!(psnr(&half, &gt, Some(&left.complement())).unwrap().is_finite());
        assert!(psnr(&gt, &gt, Some(&Mask::zeros(4, 4))).is_err());
    }

    #[test]
    fn ground_truth_scores_perfectly() {
        let s = synth_scene_with(Layout::REDUCED, 4, 0.07).unwrap();
        let m = sample_metrics("gt", &s.full_rgb, &s).unwrap();
        assert_eq!(m.edge_f1, 1.0);
        assert_eq!(m.psnr_full, f64::INFINITY);
        assert_eq!(m.psnr_unknown, f64::INFINITY);
        let r = report(vec![m.clone()]).unwrap();
        assert_eq!(r.aggregate.psnr_full, f64::INFINITY);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["aggregate"]["psnr_full"], "inf");
        assert_eq!(json["fid"], "unavailable");
    }

    #[test]
    fn f1_edge_cases() {
        let e = Mask::zeros(3, 3);
        let one = Mask::from_fn(3, 3, |i, j| i == j);
        assert_eq!(edge_f1(&e, &e).unwrap(), 1.0);
        assert_eq!(edge_f1(&one, &e).unwrap(), 0.0);
        assert_eq!(edge_f1(&one, &one).unwrap(), 1.0);
        let two = Mask::from_fn(3, 3, |i, j| i == j && i < 2);
        let f = edge_f1(&two, &one).unwrap();
        assert!((f - 0.8).abs() < 1e-12);
    }
}
