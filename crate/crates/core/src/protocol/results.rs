use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exemplar::Drift;

/// One line of `records.jsonl`. Class keys are model-output indices, which
/// follow class arrival order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: usize,
    pub classes_seen: usize,
    /// Accuracy on the test rows of every class seen so far.
    pub accuracy: f64,
    /// Accuracy on the phase-0 test rows.
    pub accuracy_initial: f64,
    pub exemplar_counts: BTreeMap<usize, usize>,
    pub exemplar_drift: BTreeMap<usize, Drift>,
    pub model_loss: Vec<f64>,
    pub mnemonics_loss: Vec<f64>,
    pub mnemonics_drift: Vec<f64>,
    pub adjust_loss: Vec<Vec<f64>>,
    pub fine_tune_loss: Vec<f64>,
}

/// The closing line of `records.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub summary: bool,
    pub seed: u64,
    pub strategy: String,
    pub phases: usize,
    pub average_accuracy: f64,
    pub forgetting_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseResults {
    pub records: Vec<PhaseRecord>,
    pub summary: RunSummary,
}

/// Mean of the per-phase accuracies.
pub fn average_accuracy(records: &[PhaseRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let n = records.len() as f64;
    let first = records[0].accuracy;
    if records.iter().all(|r| r.accuracy == first) {
        return first;
    }
    records.iter().map(|r| r.accuracy).sum::<f64>() / n
}

/// Phase-0 accuracy on the initial classes minus the final one; positive
/// means forgetting.
pub fn forgetting_rate(records: &[PhaseRecord]) -> f64 {
    match (records.first(), records.last()) {
        (Some(a), Some(b)) if records.len() > 1 => a.accuracy_initial - b.accuracy_initial,
        _ => 0.0,
    }
}

impl PhaseResults {
    pub fn new(records: Vec<PhaseRecord>, seed: u64, strategy: &str) -> Self {
        let summary = RunSummary {
            summary: true,
            seed,
            strategy: strategy.to_string(),
            phases: records.len(),
            average_accuracy: average_accuracy(&records),
            forgetting_rate: forgetting_rate(&records),
        };
        Self { records, summary }
    }

    /// One JSON object per phase, then the summary.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &self.summary).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let Some((last, body)) = lines.split_last() else {
            return Err(crate::Error::Format("empty record file".into()));
        };
        let parse = |i: usize, e: serde_json::Error| crate::Error::Parse {
            line: i + 1,
            message: e.to_string(),
        };
        let records = body
            .iter()
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse(i, e)))
            .collect::<Result<Vec<PhaseRecord>>>()?;
        let summary = serde_json::from_str(last).map_err(|e| parse(body.len(), e))?;
        Ok(Self { records, summary })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(phase: usize, accuracy: f64, accuracy_initial: f64) -> PhaseRecord {
        PhaseRecord {
            phase,
            classes_seen: 2 * (phase + 1),
            accuracy,
            accuracy_initial,
            exemplar_counts: BTreeMap::new(),
            exemplar_drift: BTreeMap::new(),
            model_loss: vec![],
            mnemonics_loss: vec![],
            mnemonics_drift: vec![],
            adjust_loss: vec![],
            fine_tune_loss: vec![],
        }
    }

    #[test]
    fn average_examples() {
        let r: Vec<_> = [0.9, 0.8, 0.7].iter().enumerate().map(|(i, &a)| rec(i, a, a)).collect();
        assert!((average_accuracy(&r) - 0.8).abs() < 1e-15);
        assert_eq!(average_accuracy(&[rec(0, 0.73, 0.73)]), 0.73);
        let same: Vec<_> = (0..7).map(|i| rec(i, 0.1, 0.1)).collect();
        assert_eq!(average_accuracy(&same), 0.1);
    }

    #[test]
    fn forgetting_examples() {
        assert_eq!(forgetting_rate(&[rec(0, 0.9, 0.9), rec(1, 0.5, 0.9)]), 0.0);
        let f = forgetting_rate(&[rec(0, 0.9, 0.9), rec(1, 0.7, 0.7), rec(2, 0.6, 0.6)]);
        assert!((f - 0.3).abs() < 1e-15);
        assert_eq!(forgetting_rate(&[rec(0, 0.9, 0.9)]), 0.0);
    }

    #[test]
    fn jsonl_round_trip() {
        let res = PhaseResults::new(vec![rec(0, 0.9, 0.9), rec(1, 0.8, 0.85)], 3, "random");
        let text = res.to_jsonl();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(PhaseResults::read_jsonl(&text).unwrap(), res);
    }
}
