use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::config::Phase;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;

/// Discriminator statistics for one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorStats {
    pub d_real: f64,
    pub d_fake: f64,
    pub loss: f64,
}

/// One line of the loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// 1-based index of the iteration within its phase.
    pub iteration: usize,
    pub phase: Phase,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discriminator: Option<DiscriminatorStats>,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log records serialize")
    }
}

pub fn write_log(records: &[LogRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_line())?;
    }
    Ok(())
}

pub fn read_log(input: impl BufRead) -> Result<Vec<LogRecord>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Config(format!("log line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::Config(format!("log line {}: {e}", i + 1)))?);
    }
    Ok(records)
}

/// Trailing moving average with window `w`; entry `i` averages
/// `values[i + 1 - w ..= i]`, so the output has `len - w + 1` entries.
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    if w == 0 || values.len() < w {
        return Vec::new();
    }
    let mut sum: f64 = values[..w].iter().sum();
    let mut out = vec![sum / w as f64];
    for i in w..values.len() {
        sum += values[i] - values[i - w];
        out.push(sum / w as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_through_lines() {
        let r = LogRecord {
            iteration: 3,
            phase: Phase::Sr,
            losses: LossBreakdown { cycle_lowfreq: 0.1234567890123, total: 0.5, ..Default::default() },
            discriminator: Some(DiscriminatorStats { d_real: 0.6, d_fake: 0.4, loss: 1.2 }),
        };
        let line = r.to_line();
        assert!(line.contains("\"cycle_lowfreq\":0.1234567890123"));
        let mut buf = Vec::new();
        write_log(&[r.clone(), r.clone()], &mut buf).unwrap();
        assert_eq!(read_log(&buf[..]).unwrap(), vec![r.clone(), r]);
    }

    #[test]
    fn moving_average_windows() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(moving_average(&[1.0], 2).is_empty());
    }
}
