use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GseError, Result};

/// Scores of one degraded utterance against its reference. Metrics that are
/// undefined for the pair (silent output for the envelope sync, too little
/// speech for ESTOI) are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub method: String,
    pub split: String,
    pub estoi: Option<f64>,
    pub mcd_db: Option<f64>,
    pub si_snr_db: Option<f64>,
    pub uer: Option<f64>,
    pub sync_offset_ms: Option<f64>,
    pub sync_confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub split: String,
    pub count: usize,
    pub estoi: Option<f64>,
    pub mcd_db: Option<f64>,
    pub si_snr_db: Option<f64>,
    pub uer: Option<f64>,
    pub sync_offset_ms: Option<f64>,
    pub sync_confidence: Option<f64>,
}

#[derive(Serialize)]
struct CsvLine<'a> {
    id: &'a str,
    method: &'a str,
    split: &'a str,
    count: usize,
    estoi: Option<f64>,
    mcd_db: Option<f64>,
    si_snr_db: Option<f64>,
    uer: Option<f64>,
    sync_offset_ms: Option<f64>,
    sync_confidence: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn push(&mut self, row: EvalRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    /// Means per (method, split) in order of first appearance.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut keys: Vec<(&str, &str)> = Vec::new();
        for r in &self.rows {
            let k = (r.method.as_str(), r.split.as_str());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(method, split)| {
                let rows: Vec<&EvalRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.method == method && r.split == split)
                    .collect();
                Aggregate {
                    method: method.to_string(),
                    split: split.to_string(),
                    count: rows.len(),
                    estoi: mean(rows.iter().map(|r| r.estoi)),
                    mcd_db: mean(rows.iter().map(|r| r.mcd_db)),
                    si_snr_db: mean(rows.iter().map(|r| r.si_snr_db)),
                    uer: mean(rows.iter().map(|r| r.uer)),
                    sync_offset_ms: mean(rows.iter().map(|r| r.sync_offset_ms)),
                    sync_confidence: mean(rows.iter().map(|r| r.sync_confidence)),
                }
            })
            .collect()
    }

    pub fn aggregate(&self, method: &str, split: &str) -> Option<Aggregate> {
        self.aggregates()
            .into_iter()
            .find(|a| a.method == method && a.split == split)
    }

    /// One line per utterance followed by one `mean` line per group.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| GseError::Input(format!("csv: {e}"));
        for r in &self.rows {
            w.serialize(CsvLine {
                id: &r.id,
                method: &r.method,
                split: &r.split,
                count: 1,
                estoi: r.estoi,
                mcd_db: r.mcd_db,
                si_snr_db: r.si_snr_db,
                uer: r.uer,
                sync_offset_ms: r.sync_offset_ms,
                sync_confidence: r.sync_confidence,
            })
            .map_err(csv_err)?;
        }
        for a in self.aggregates() {
            w.serialize(CsvLine {
                id: "mean",
                method: &a.method,
                split: &a.split,
                count: a.count,
                estoi: a.estoi,
                mcd_db: a.mcd_db,
                si_snr_db: a.si_snr_db,
                uer: a.uer,
                sync_offset_ms: a.sync_offset_ms,
                sync_confidence: a.sync_confidence,
            })
            .map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| GseError::Input(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.aggregates())?)
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        crate::io::write_string(&dir.join(format!("{stem}.csv")), &self.to_csv()?)?;
        crate::io::write_string(&dir.join(format!("{stem}.json")), &self.summary_json()?)
    }

    /// Per-utterance rows back from a CSV written by `to_csv`.
    pub fn from_csv(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            id: String,
            method: String,
            split: String,
            estoi: Option<f64>,
            mcd_db: Option<f64>,
            si_snr_db: Option<f64>,
            uer: Option<f64>,
            sync_offset_ms: Option<f64>,
            sync_confidence: Option<f64>,
        }
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for line in rd.deserialize::<Line>() {
            let l = line.map_err(|e| GseError::Input(format!("csv: {e}")))?;
            if l.id == "mean" {
                continue;
            }
            rows.push(EvalRow {
                id: l.id,
                method: l.method,
                split: l.split,
                estoi: l.estoi,
                mcd_db: l.mcd_db,
                si_snr_db: l.si_snr_db,
                uer: l.uer,
                sync_offset_ms: l.sync_offset_ms,
                sync_confidence: l.sync_confidence,
            });
        }
        Ok(Self { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, method: &str, uer: f64) -> EvalRow {
        EvalRow {
            id: id.into(),
            method: method.into(),
            split: "test".into(),
            estoi: Some(0.5),
            mcd_db: Some(3.0),
            si_snr_db: None,
            uer: Some(uer),
            sync_offset_ms: Some(0.0),
            sync_confidence: Some(1.0),
        }
    }

    #[test]
    fn aggregates_and_csv_round_trip() {
        let mut rep = EvalReport::default();
        rep.push(row("a", "input", 0.5));
        rep.push(row("b", "input", 0.25));
        rep.push(row("a", "enhanced", 0.1));
        let agg = rep.aggregates();
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].count, 2);
        assert_eq!(agg[0].uer, Some(0.375));
        assert_eq!(agg[0].si_snr_db, None);
        let csv = rep.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 + 2);
        assert_eq!(EvalReport::from_csv(&csv).unwrap(), rep);
    }
}
