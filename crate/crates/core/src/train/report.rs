use std::fmt::Write as _;

use super::StepStats;
use crate::error::{Error, Result};

/// `(step, error rate)` pairs from EMA evaluations, in step order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointLog {
    entries: Vec<(u64, f64)>,
}

impl CheckpointLog {
    pub fn push(&mut self, step: u64, error_rate: f64) -> Result<()> {
        if let Some(&(last, _)) = self.entries.last() {
            if step <= last {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint log: step {step} does not follow {last}"
                )));
            }
        }
        self.entries.push((step, error_rate));
        Ok(())
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (u64, f64)>) -> Result<Self> {
        let mut log = CheckpointLog::default();
        for (s, e) in entries {
            log.push(s, e)?;
        }
        Ok(log)
    }

    pub fn entries(&self) -> &[(u64, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `step,error_rate` CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,error_rate\n");
        for (s, e) in &self.entries {
            writeln!(out, "{s},{e}").expect("writing to a String cannot fail");
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("step,error_rate") {
            return Err(Error::InvalidArgument(
                "checkpoint log: missing `step,error_rate` header".into(),
            ));
        }
        let mut log = CheckpointLog::default();
        for (i, line) in lines.enumerate() {
            let bad = || Error::InvalidArgument(format!("checkpoint log: bad row {}: `{line}`", i + 2));
            let (s, e) = line.split_once(',').ok_or_else(bad)?;
            log.push(s.parse().map_err(|_| bad())?, e.parse().map_err(|_| bad())?)?;
        }
        Ok(log)
    }
}

/// Median error of the last `window` checkpoints (mean of the middle pair for even counts).
pub fn report_median(log: &CheckpointLog, window: usize) -> Result<f64> {
    if log.is_empty() || window == 0 {
        return Err(Error::InvalidArgument("report_median: empty log or window".into()));
    }
    let start = log.len().saturating_sub(window);
    let mut tail: Vec<f64> = log.entries[start..].iter().map(|&(_, e)| e).collect();
    tail.sort_by(f64::total_cmp);
    let n = tail.len();
    Ok(if n % 2 == 1 {
        tail[n / 2]
    } else {
        (tail[n / 2 - 1] + tail[n / 2]) / 2.0
    })
}

/// One line of `metrics.csv`: mean losses over the steps since the previous
/// checkpoint, and the EMA test error at `step`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub lambda_u: f64,
    /// `None` for the initial evaluation, which has no preceding steps.
    pub losses: Option<[f64; 3]>,
    pub ema_test_error: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "step,lambda_u,loss_x,loss_u,total_loss,ema_test_error";

    pub(crate) fn from_interval(step: u64, lambda_u: f64, interval: &[StepStats], ema_test_error: f64) -> Self {
        let losses = (!interval.is_empty()).then(|| {
            let n = interval.len() as f64;
            let mut acc = [0.0; 3];
            for s in interval {
                acc[0] += s.loss_x;
                acc[1] += s.loss_u;
                acc[2] += s.total;
            }
            acc.map(|v| v / n)
        });
        MetricsRow {
            step,
            lambda_u,
            losses,
            ema_test_error,
        }
    }

    pub fn to_csv_line(&self) -> String {
        match self.losses {
            Some([x, u, t]) => format!("{},{},{x},{u},{t},{}", self.step, self.lambda_u, self.ema_test_error),
            None => format!("{},{},,,,{}", self.step, self.lambda_u, self.ema_test_error),
        }
    }
}
