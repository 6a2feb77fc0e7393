//! Ranking and regression metrics with exact tie handling.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{0}: empty class")]
    EmptyClass(&'static str),
    #[error("{0}: empty mask")]
    EmptyMask(&'static str),
    #[error("{0}: non-finite score")]
    NonFinite(&'static str),
    #[error("{what}: length mismatch ({left} vs {right})")]
    Length {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("malformed report: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Tie groups in descending score order, as `(positives, negatives)`.
fn tie_groups<T: Scalar>(pos: &[T], neg: &[T], what: &'static str) -> Result<Vec<(u64, u64)>, MetricError> {
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s.as_f64(), true))
        .chain(neg.iter().map(|&s| (s.as_f64(), false)))
        .collect();
    if all.iter().any(|(s, _)| !s.is_finite()) {
        return Err(MetricError::NonFinite(what));
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last = f64::NAN;
    for (s, is_pos) in all {
        // -0.0 and 0.0 tie
        if groups.is_empty() || s != last {
            groups.push((0, 0));
            last = s;
        }
        let g = groups.last_mut().unwrap();
        if is_pos {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    Ok(groups)
}

/// `(#{pos > neg} + ½ #{pos = neg}) / (n_pos n_neg)`, counted exactly in integers.
pub fn auroc<T: Scalar>(pos: &[T], neg: &[T]) -> Result<f64, MetricError> {
    if pos.is_empty() || neg.is_empty() {
        return Err(MetricError::EmptyClass("auroc"));
    }
    let groups = tie_groups(pos, neg, "auroc")?;
    // twice the numerator: each positive scores 2 per lower negative, 1 per tie
    let mut neg_below = neg.len() as u128;
    let mut num2: u128 = 0;
    for &(p, n) in &groups {
        neg_below -= n as u128;
        num2 += p as u128 * (2 * neg_below + n as u128);
    }
    Ok(num2 as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64)
}

/// Average precision, taking the expectation over orderings within each tie group.
///
/// For a group of `s = p + n` tied items after `a` items containing `pa` positives,
/// position `r` holds a positive with probability `p/s` and, given that, the
/// expected number of group positives before it is `(r-1)(p-1)/(s-1)`.
pub fn auprc<T: Scalar>(pos: &[T], neg: &[T]) -> Result<f64, MetricError> {
    if pos.is_empty() {
        return Err(MetricError::EmptyClass("auprc"));
    }
    let groups = tie_groups(pos, neg, "auprc")?;
    let mut ahead = 0u64;
    let mut pos_ahead = 0u64;
    let mut total = 0.0;
    for &(p, n) in &groups {
        let s = p + n;
        if p > 0 {
            let frac = p as f64 / s as f64;
            let inner = if s > 1 { (p - 1) as f64 / (s - 1) as f64 } else { 0.0 };
            for r in 1..=s {
                let hits = pos_ahead as f64 + 1.0 + (r - 1) as f64 * inner;
                total += frac * hits / (ahead + r) as f64;
            }
        }
        ahead += s;
        pos_ahead += p;
    }
    Ok(total / pos.len() as f64)
}

/// Masked mean absolute error, in the units of the inputs.
pub fn tte_mae<T: Scalar>(pred: &[T], target: &[T], mask: &[bool]) -> Result<f64, MetricError> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(MetricError::Length {
            what: "tte_mae",
            left: pred.len(),
            right: target.len().min(mask.len()),
        });
    }
    let (sum, n) = pred
        .iter()
        .zip(target)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), ((&p, &t), _)| {
            (s + (p - t).abs().as_f64(), n + 1)
        });
    if n == 0 {
        return Err(MetricError::EmptyMask("tte_mae"));
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadTimeRow {
    pub lead_hours: u32,
    /// `None` when a class is missing at this lead; such rows are left out of averages.
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub tte_mae: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadTimeReport {
    pub rows: Vec<LeadTimeRow>,
    pub time_averaged_auroc: f64,
    pub time_averaged_auprc: f64,
}

/// Unweighted means of AUROC and AUPRC over the rows present.
pub fn time_averaged(rows: &[LeadTimeRow]) -> (f64, f64) {
    let mean = |v: Vec<f64>| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    (
        mean(rows.iter().filter_map(|r| r.auroc).collect()),
        mean(rows.iter().filter_map(|r| r.auprc).collect()),
    )
}

pub const REPORT_HEADER: [&str; 6] = ["lead_hours", "auroc", "auprc", "tte_mae", "n_pos", "n_neg"];

impl LeadTimeReport {
    pub fn from_rows(rows: Vec<LeadTimeRow>) -> Self {
        let (a, p) = time_averaged(&rows);
        Self {
            rows,
            time_averaged_auroc: a,
            time_averaged_auprc: p,
        }
    }

    pub fn row(&self, lead: u32) -> Option<&LeadTimeRow> {
        self.rows.iter().find(|r| r.lead_hours == lead)
    }

    /// Mean TTE-MAE over rows that carry one.
    pub fn mean_tte_mae(&self) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter_map(|r| r.tte_mae).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Per-lead rows followed by a `mean` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.lead_hours.to_string(),
                opt(r.auroc),
                opt(r.auprc),
                opt(r.tte_mae),
                r.n_pos.to_string(),
                r.n_neg.to_string(),
            ])?;
        }
        w.write_record([
            "mean".to_string(),
            opt(Some(self.time_averaged_auroc).filter(|v| v.is_finite())),
            opt(Some(self.time_averaged_auprc).filter(|v| v.is_finite())),
            opt(self.mean_tte_mae()),
            String::new(),
            String::new(),
        ])?;
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Parses a CSV written by [`write_csv`](Self::write_csv); the summary row is recomputed.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, MetricError> {
        let mut r = csv::Reader::from_reader(input);
        if r.headers()?.iter().ne(REPORT_HEADER) {
            return Err(MetricError::Malformed("unexpected header".into()));
        }
        let bad = |field: &str, s: &str| MetricError::Malformed(format!("{field}: {s:?}"));
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let get = |i: usize| rec.get(i).unwrap_or("");
            if get(0) == "mean" {
                continue;
            }
            let f = |i: usize| get(i).parse::<f64>().map_err(|_| bad(REPORT_HEADER[i], get(i)));
            let of = |i: usize| if get(i).is_empty() { Ok(None) } else { f(i).map(Some) };
            let u = |i: usize| get(i).parse::<usize>().map_err(|_| bad(REPORT_HEADER[i], get(i)));
            rows.push(LeadTimeRow {
                lead_hours: get(0).parse().map_err(|_| bad("lead_hours", get(0)))?,
                auroc: of(1)?,
                auprc: of(2)?,
                tte_mae: of(3)?,
                n_pos: u(4)?,
                n_neg: u(5)?,
            });
        }
        Ok(Self::from_rows(rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9], &[0.1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5], &[0.5]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.8, 0.4], &[0.6, 0.2]).unwrap(), 0.75);
        assert!(matches!(auroc::<f64>(&[], &[0.1]), Err(MetricError::EmptyClass(_))));
        assert!(auroc(&[f64::NAN], &[0.1]).is_err());
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[0.9], &[0.1]).unwrap(), 1.0);
        assert_eq!(auprc(&[0.4], &[0.6]).unwrap(), 0.5);
        assert!(auprc::<f64>(&[], &[0.1]).is_err());
        assert_eq!(auprc::<f64>(&[0.3], &[]).unwrap(), 1.0);
    }

    #[test]
    fn auprc_full_tie_matches_enumeration() {
        // one positive tied with two negatives: rank 1,2,3 equally likely
        let ap = auprc(&[0.5], &[0.5, 0.5]).unwrap();
        assert!((ap - (1.0 + 0.5 + 1.0 / 3.0) / 3.0).abs() < 1e-15);
        // two positives and one negative all tied: orderings PPN, PNP, NPP
        let ap = auprc(&[0.5, 0.5], &[0.5]).unwrap();
        let expect = ((1.0 + 1.0) / 2.0 + (1.0 + 2.0 / 3.0) / 2.0 + (0.5 + 2.0 / 3.0) / 2.0) / 3.0;
        assert!((ap - expect).abs() < 1e-15);
    }

    #[test]
    fn mae_examples() {
        assert_eq!(tte_mae(&[3.0, 5.0], &[4.0, 5.0], &[true, true]).unwrap(), 0.5);
        assert_eq!(tte_mae(&[3.0, 9.0], &[4.0, 5.0], &[false, true]).unwrap(), 4.0);
        let t: Vec<f64> = (1..=24).map(f64::from).collect();
        let p = vec![12.0; 24];
        assert_eq!(tte_mae(&p, &t, &[true; 24]).unwrap(), 6.0);
        assert!(matches!(
            tte_mae(&[1.0], &[1.0], &[false]),
            Err(MetricError::EmptyMask(_))
        ));
    }

    fn row(lead: u32, a: f64, p: f64) -> LeadTimeRow {
        LeadTimeRow {
            lead_hours: lead,
            auroc: Some(a),
            auprc: Some(p),
            tte_mae: None,
            n_pos: 3,
            n_neg: 7,
        }
    }

    #[test]
    fn averages() {
        assert_eq!(time_averaged(&[row(1, 0.7, 0.3), row(2, 0.7, 0.3)]), (0.7, 0.3));
        let (a, _) = time_averaged(&[row(1, 0.6, 0.0), row(2, 0.8, 0.0)]);
        assert!((a - 0.7).abs() < 1e-15);
    }

    #[test]
    fn report_csv_round_trip() {
        let mut rows = vec![row(1, 0.8125, 0.5), row(2, 0.75, 0.25), row(3, 0.0, 0.0)];
        rows[1].tte_mae = Some(2.5);
        rows[2].auroc = None;
        rows[2].auprc = None;
        rows[2].n_neg = 0;
        let rep = LeadTimeReport::from_rows(rows);
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "lead_hours,auroc,auprc,tte_mae,n_pos,n_neg\n\
             1,0.812500,0.500000,,3,7\n\
             2,0.750000,0.250000,2.500000,3,7\n\
             3,,,,3,0\n\
             mean,0.781250,0.375000,2.500000,,\n"
        );
        assert_eq!(LeadTimeReport::read_csv(&buf[..]).unwrap(), rep);
    }
}
