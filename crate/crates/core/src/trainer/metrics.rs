use std::io::Write;

use crate::error::Result;

/// Floats at 9 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// One row of the per-episode training log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub episode: usize,
    pub episode_return: f64,
    pub smoothed_return: f64,
    /// `None` until the buffer holds a full batch.
    pub loss: Option<f64>,
    pub epsilon: f64,
    pub mean_latency: Option<f64>,
    pub wall_ms: u64,
}

pub const METRIC_HEADER: [&str; 7] = [
    "episode",
    "return",
    "smoothed_return",
    "loss",
    "epsilon",
    "mean_latency",
    "wall_ms",
];

impl MetricRow {
    pub fn fields(&self) -> [String; 7] {
        [
            self.episode.to_string(),
            fmt_float(self.episode_return),
            fmt_float(self.smoothed_return),
            fmt_opt(self.loss),
            fmt_float(self.epsilon),
            fmt_opt(self.mean_latency),
            self.wall_ms.to_string(),
        ]
    }
}

pub fn write_metrics(w: impl Write, rows: &[MetricRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRIC_HEADER)?;
    for r in rows {
        out.write_record(r.fields())?;
    }
    out.flush()?;
    Ok(())
}

/// Trailing mean over the last `window` values (fewer at the start).
#[derive(Clone, Debug)]
pub struct Smoother {
    window: usize,
    values: std::collections::VecDeque<f64>,
}

impl Smoother {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            values: Default::default(),
        }
    }

    pub fn push(&mut self, v: f64) -> f64 {
        if self.values.len() == self.window {
            self.values.pop_front();
        }
        self.values.push_back(v);
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}
