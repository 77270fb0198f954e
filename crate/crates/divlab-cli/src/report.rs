//! CSV report emission: the row table, a trend summary correlating
//! improvement with three diversity metrics per dataset, and
//! gnuplot-compatible whitespace data files.
//!
//! Row CSV column order (stable, append-only):
//! members, dataset, consensus, param_count, ensemble_acc, top_member_acc,
//! improvement, mean_member_acc, disagreement, attribution_div,
//! shannon_overall, shannon_correct, shannon_incorrect,
//! norm_disagreement, norm_attribution_div, norm_mean_member_acc

use anyhow::{bail, Result};
use std::path::Path;

use divlab::metrics::{minmax_normalize, pearson_and_trend};

use crate::eval::{EnsembleReportRow, PredictionRecord};

pub const ROW_HEADER: &str = "members,dataset,consensus,param_count,ensemble_acc,top_member_acc,improvement,mean_member_acc,disagreement,attribution_div,shannon_overall,shannon_correct,shannon_incorrect,norm_disagreement,norm_attribution_div,norm_mean_member_acc";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.10}")).unwrap_or_else(|| "absent".into())
}

/// Normalized metric columns are min-max scaled over all rows being written.
pub fn rows_csv(rows: &[EnsembleReportRow]) -> Result<String> {
    let norm = |f: fn(&EnsembleReportRow) -> f64| -> Result<Vec<f64>> {
        let vals: Vec<f64> = rows.iter().map(f).collect();
        if vals.len() < 2 {
            return Ok(vec![0.5; vals.len()]);
        }
        Ok(minmax_normalize(&vals)?.0)
    };
    let nd = norm(|r| r.disagreement)?;
    let na = norm(|r| r.attribution_div)?;
    let nm = norm(|r| r.mean_member_acc)?;

    let mut out = String::from(ROW_HEADER);
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{},{},{:.10},{:.10},{:.10}\n",
            r.members,
            r.dataset,
            r.consensus,
            r.param_count,
            r.ensemble_acc,
            r.top_member_acc,
            r.improvement,
            r.mean_member_acc,
            r.disagreement,
            r.attribution_div,
            r.shannon.overall,
            opt(r.shannon.consensus_correct),
            opt(r.shannon.consensus_incorrect),
            nd[i],
            na[i],
            nm[i],
        ));
    }
    Ok(out)
}

pub const PREDICTION_HEADER: &str = "dataset,consensus,sample,label,member_preds,consensus_pred";

pub fn prediction_csv(records: &[PredictionRecord]) -> String {
    let mut out = String::from(PREDICTION_HEADER);
    out.push('\n');
    for r in records {
        let preds = r
            .member_preds
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join("|");
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.dataset, r.consensus, r.sample, r.label, preds, r.consensus_pred
        ));
    }
    out
}

pub const TREND_METRICS: [&str; 3] = ["attribution_div", "disagreement", "mean_member_acc"];

fn metric_value(row: &EnsembleReportRow, metric: &str) -> f64 {
    match metric {
        "attribution_div" => row.attribution_div,
        "disagreement" => row.disagreement,
        _ => row.mean_member_acc,
    }
}

/// Trend summary: Pearson r and least-squares slope of improvement against
/// each diversity metric, per dataset. Needs at least 3 rows per dataset.
pub fn trend_summary_csv(rows: &[EnsembleReportRow]) -> Result<String> {
    if rows.len() < 3 {
        bail!("trend summary needs at least 3 rows, got {}", rows.len());
    }
    let mut datasets: Vec<String> = rows.iter().map(|r| r.dataset.clone()).collect();
    datasets.sort();
    datasets.dedup();

    let mut out = String::from("dataset,metric,pearson_r,slope,intercept,n\n");
    for ds in &datasets {
        let group: Vec<&EnsembleReportRow> =
            rows.iter().filter(|r| &r.dataset == ds).collect();
        if group.len() < 3 {
            continue;
        }
        let y: Vec<f64> = group.iter().map(|r| r.improvement).collect();
        for metric in TREND_METRICS {
            let x: Vec<f64> = group.iter().map(|r| metric_value(r, metric)).collect();
            match pearson_and_trend(&x, &y) {
                Ok(t) => out.push_str(&format!(
                    "{ds},{metric},{:.10},{:.10},{:.10},{}\n",
                    t.r, t.slope, t.intercept, t.n
                )),
                Err(_) => out.push_str(&format!("{ds},{metric},undefined,undefined,undefined,{}\n", group.len())),
            }
        }
    }
    Ok(out)
}

/// Whitespace-separated (metric, improvement) points per dataset and metric,
/// directly plottable with `plot "file" using 1:2`.
pub fn write_gnuplot_data(rows: &[EnsembleReportRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut datasets: Vec<String> = rows.iter().map(|r| r.dataset.clone()).collect();
    datasets.sort();
    datasets.dedup();
    for ds in &datasets {
        for metric in TREND_METRICS {
            let mut out = format!("# {metric} improvement ({ds})\n");
            for r in rows.iter().filter(|r| &r.dataset == ds) {
                out.push_str(&format!("{:.10} {:.10}\n", metric_value(r, metric), r.improvement));
            }
            std::fs::write(dir.join(format!("{ds}_{metric}.dat")), out)?;
        }
    }
    Ok(())
}

/// Parse a rows CSV produced by `rows_csv` (normalized columns are
/// recomputed on write, so they are not read back).
pub fn parse_rows_csv(text: &str) -> Result<Vec<EnsembleReportRow>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != ROW_HEADER {
        bail!("unrecognized rows CSV header");
    }
    let parse_opt = |s: &str| -> Result<Option<f64>> {
        if s == "absent" {
            Ok(None)
        } else {
            Ok(Some(s.parse::<f64>()?))
        }
    };
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 16 {
            bail!("row {} has {} fields, expected 16", lineno + 2, f.len());
        }
        rows.push(EnsembleReportRow {
            members: f[0].into(),
            dataset: f[1].into(),
            consensus: f[2].into(),
            param_count: f[3].parse()?,
            ensemble_acc: f[4].parse()?,
            top_member_acc: f[5].parse()?,
            improvement: f[6].parse()?,
            mean_member_acc: f[7].parse()?,
            disagreement: f[8].parse()?,
            attribution_div: f[9].parse()?,
            shannon: divlab::metrics::ShannonReport {
                overall: f[10].parse()?,
                consensus_correct: parse_opt(f[11])?,
                consensus_incorrect: parse_opt(f[12])?,
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use divlab::metrics::ShannonReport;

    fn row(members: &str, dataset: &str, metric: f64, y: f64) -> EnsembleReportRow {
        EnsembleReportRow {
            members: members.into(),
            dataset: dataset.into(),
            consensus: "average".into(),
            param_count: 100,
            ensemble_acc: 0.5 + y,
            top_member_acc: 0.5,
            improvement: y,
            mean_member_acc: 0.4,
            disagreement: metric,
            attribution_div: metric,
            shannon: ShannonReport {
                overall: 0.3,
                consensus_correct: Some(0.2),
                consensus_incorrect: None,
            },
        }
    }

    #[test]
    fn planted_correlation_gives_r_one() {
        // improvement = 2 * metric
        let rows: Vec<_> = (0..5)
            .map(|i| {
                let m = 0.1 * i as f64;
                row(&format!("0+{i}"), "clean", m, 2.0 * m)
            })
            .collect();
        let csv = trend_summary_csv(&rows).unwrap();
        let line = csv
            .lines()
            .find(|l| l.starts_with("clean,disagreement"))
            .unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        assert!((fields[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
        assert!((fields[3].parse::<f64>().unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn row_csv_is_stable_golden() {
        let rows = vec![row("0+1", "clean", 0.2, 0.01), row("0+2", "clean", 0.4, 0.03)];
        let csv = rows_csv(&rows).unwrap();
        let expected = "members,dataset,consensus,param_count,ensemble_acc,top_member_acc,improvement,mean_member_acc,disagreement,attribution_div,shannon_overall,shannon_correct,shannon_incorrect,norm_disagreement,norm_attribution_div,norm_mean_member_acc\n\
0+1,clean,average,100,0.5100000000,0.5000000000,0.0100000000,0.4000000000,0.2000000000,0.2000000000,0.3000000000,0.2000000000,absent,0.0000000000,0.0000000000,0.5000000000\n\
0+2,clean,average,100,0.5300000000,0.5000000000,0.0300000000,0.4000000000,0.4000000000,0.4000000000,0.3000000000,0.2000000000,absent,1.0000000000,1.0000000000,0.5000000000\n";
        assert_eq!(csv, expected);
    }

    #[test]
    fn too_few_rows_rejected() {
        let rows = vec![row("0+1", "clean", 0.2, 0.01)];
        assert!(trend_summary_csv(&rows).is_err());
    }
}
