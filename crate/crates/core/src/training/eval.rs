use serde::{Deserialize, Serialize};

use super::metrics::{ape, fde, jpe};
use super::train::Sample;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::motion::{Scene, Sequence};

/// Repeats the last observed pose of every person `n` times.
pub fn zero_velocity_baseline(observed: &Scene, n: usize) -> Result<Vec<Sequence>> {
    if observed.num_frames() == 0 || n == 0 {
        return Err(Error::validation(
            "horizon",
            "needs at least one observed and one predicted frame",
        ));
    }
    Ok(observed
        .last_poses()
        .into_iter()
        .map(|pose| {
            let joints = pose.len() / 3;
            Sequence::new(n, joints, pose.repeat(n)).expect("repeated pose")
        })
        .collect())
}

/// Maps horizons in seconds to 1-based predicted frame counts.
pub fn horizon_frames(horizons_s: &[f64], fps: f64, n: usize) -> Result<Vec<usize>> {
    horizons_s
        .iter()
        .map(|&h| {
            let f = h * fps;
            let k = f.round();
            if h.is_nan() || h <= 0.0 || (f - k).abs() > 1e-6 {
                return Err(Error::validation(
                    "horizons",
                    format!("{h}s at {fps} fps is not a whole frame"),
                ));
            }
            let k = k as usize;
            if k > n {
                return Err(Error::validation(
                    "horizons",
                    format!("{h}s is frame {k}, beyond the {n} predicted frames"),
                ));
            }
            Ok(k)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    /// `None` for the overall row.
    pub horizon_s: Option<f64>,
    pub value_mm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub dataset_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub horizons_s: Vec<f64>,
    pub rows: Vec<MetricRow>,
    pub scenes: usize,
    #[serde(default)]
    pub meta: ReportMeta,
}

impl MetricReport {
    pub fn value(&self, metric: &str, horizon_s: Option<f64>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.horizon_s == horizon_s)
            .map(|r| r.value_mm)
    }

    /// Appends another report's rows with `prefix.` on each metric name.
    pub fn extend_prefixed(&mut self, other: &MetricReport, prefix: &str) {
        self.rows.extend(other.rows.iter().map(|r| MetricRow {
            metric: format!("{prefix}.{}", r.metric),
            ..r.clone()
        }));
    }

    /// `metric,horizon_s,value_mm`; overall rows carry `overall`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,horizon_s,value_mm\n");
        for r in &self.rows {
            let h = r.horizon_s.map_or_else(|| "overall".to_string(), |h| format!("{h:?}"));
            s.push_str(&format!("{},{h},{:?}\n", r.metric, r.value_mm));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse {
            context: "metric report".into(),
            message: e.to_string(),
        })
    }
}

/// Averages JPE and APE at each horizon, their mean over horizons, and FDE
/// over all samples, using `predict` to forecast absolute poses.
pub fn evaluate_with<F>(samples: &[Sample], horizons_s: &[f64], mut predict: F) -> Result<MetricReport>
where
    F: FnMut(&Scene) -> Result<Vec<Sequence>>,
{
    if samples.is_empty() {
        return Err(Error::validation("data", "no scenes to evaluate"));
    }
    if horizons_s.is_empty() {
        return Err(Error::validation("horizons", "at least one horizon is required"));
    }
    let h = horizons_s.len();
    let mut jpe_sum = vec![0.0; h];
    let mut ape_sum = vec![0.0; h];
    let mut fde_sum = 0.0;
    for s in samples {
        let obs = &s.observed;
        let n = s.future[0].frames();
        let frames = horizon_frames(horizons_s, obs.fps, n)?;
        let pred = predict(obs)?;
        let root = obs.skeleton.root_joint;
        for (i, &k) in frames.iter().enumerate() {
            jpe_sum[i] += jpe(&pred, &s.future, k - 1, obs.unit)?;
            ape_sum[i] += ape(&pred, &s.future, k - 1, root, obs.unit)?;
        }
        fde_sum += fde(&pred, &s.future, root, obs.unit)?;
    }
    let count = samples.len() as f64;
    let mut rows = Vec::new();
    for (name, sums) in [("jpe", &jpe_sum), ("ape", &ape_sum)] {
        for (i, &hs) in horizons_s.iter().enumerate() {
            rows.push(MetricRow {
                metric: name.into(),
                horizon_s: Some(hs),
                value_mm: sums[i] / count,
            });
        }
        rows.push(MetricRow {
            metric: name.into(),
            horizon_s: None,
            value_mm: sums.iter().sum::<f64>() / (count * h as f64),
        });
    }
    rows.push(MetricRow {
        metric: "fde".into(),
        horizon_s: None,
        value_mm: fde_sum / count,
    });
    Ok(MetricReport {
        horizons_s: horizons_s.to_vec(),
        rows,
        scenes: samples.len(),
        meta: ReportMeta::default(),
    })
}

pub fn evaluate(model: &Model, samples: &[Sample], horizons_s: &[f64]) -> Result<MetricReport> {
    evaluate_with(samples, horizons_s, |obs| Ok(model.predict(obs)?.persons))
}

pub fn evaluate_baseline(samples: &[Sample], horizons_s: &[f64]) -> Result<MetricReport> {
    evaluate_with(samples, horizons_s, |obs| {
        let n = samples[0].future[0].frames();
        zero_velocity_baseline(obs, n)
    })
}
