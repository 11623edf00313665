use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::dsp::FrequencyBand;

/// Which domains a report row pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StratumDomain {
    Source,
    Target,
    All,
}

impl StratumDomain {
    pub fn as_str(self) -> &'static str {
        match self {
            StratumDomain::Source => "source",
            StratumDomain::Target => "target",
            StratumDomain::All => "all",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Self::Source, Self::Target, Self::All]
            .into_iter()
            .find(|d| d.as_str() == s)
    }
}

/// One metric value for one stratum. `section` is `None` for all sections
/// pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub machine: String,
    pub section: Option<u8>,
    pub domain: StratumDomain,
    pub band: FrequencyBand,
    pub q: f64,
    pub metric: String,
    pub value: f64,
    pub n_normal: usize,
    pub n_anomaly: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    /// Free-text lines emitted ahead of the data.
    pub notes: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn extend(&mut self, other: EvalReport) {
        for n in other.notes {
            if !self.notes.contains(&n) {
                self.notes.push(n);
            }
        }
        self.rows.extend(other.rows);
    }

    /// Value of a pooled-section row.
    pub fn get(&self, band: FrequencyBand, domain: StratumDomain, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| {
                r.section.is_none() && r.domain == domain && r.band == band && r.metric == metric
            })
            .map(|r| r.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
    Plotdata,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            "plotdata" => Ok(Self::Plotdata),
            _ => Err(format!(
                "unknown report format {s:?} (csv, markdown, plotdata)"
            )),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Markdown => "md",
            Self::Plotdata => "plot.csv",
        }
    }
}

const CSV_HEADER: [&str; 10] = [
    "machine",
    "section",
    "domain",
    "band_lo_hz",
    "band_hi_hz",
    "q",
    "metric",
    "value",
    "n_normal",
    "n_anomaly",
];

pub fn emit_report(
    report: &EvalReport,
    format: ReportFormat,
    mut w: impl Write,
) -> Result<(), MetricsError> {
    match format {
        ReportFormat::Csv => {
            for n in &report.notes {
                writeln!(w, "# {n}")?;
            }
            let mut out = csv::Writer::from_writer(w);
            out.write_record(CSV_HEADER)?;
            for r in &report.rows {
                out.write_record([
                    r.machine.clone(),
                    r.section
                        .map_or_else(|| "all".to_string(), |s| s.to_string()),
                    r.domain.as_str().to_string(),
                    r.band.f_lo.to_string(),
                    r.band.f_hi.to_string(),
                    r.q.to_string(),
                    r.metric.clone(),
                    r.value.to_string(),
                    r.n_normal.to_string(),
                    r.n_anomaly.to_string(),
                ])?;
            }
            out.flush()?;
        }
        ReportFormat::Plotdata => {
            let mut out = csv::Writer::from_writer(w);
            out.write_record([
                "machine",
                "band",
                "band_lo_hz",
                "band_hi_hz",
                "domain",
                "q",
                "metric",
                "value",
            ])?;
            for r in report.rows.iter().filter(|r| r.section.is_none()) {
                out.write_record([
                    r.machine.clone(),
                    band_label(&r.band),
                    r.band.f_lo.to_string(),
                    r.band.f_hi.to_string(),
                    r.domain.as_str().to_string(),
                    r.q.to_string(),
                    r.metric.clone(),
                    r.value.to_string(),
                ])?;
            }
            out.flush()?;
        }
        ReportFormat::Markdown => w.write_all(markdown(report).as_bytes())?,
    }
    Ok(())
}

/// Parses the CSV form back. Note lines are kept.
pub fn parse_report_csv(mut r: impl Read) -> Result<EvalReport, MetricsError> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let notes = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim_start().to_string())
        .collect();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    if rdr.headers()?.iter().ne(CSV_HEADER) {
        return Err(MetricsError::MalformedReport("unexpected header".into()));
    }
    let bad = |i: usize, col: &str| MetricsError::MalformedReport(format!("row {i}: bad {col}"));
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| rec[c].parse::<f64>().map_err(|_| bad(i + 1, CSV_HEADER[c]));
        let count = |c: usize| {
            rec[c]
                .parse::<usize>()
                .map_err(|_| bad(i + 1, CSV_HEADER[c]))
        };
        rows.push(ReportRow {
            machine: rec[0].to_string(),
            section: match &rec[1] {
                "all" => None,
                s => Some(s.parse().map_err(|_| bad(i + 1, "section"))?),
            },
            domain: StratumDomain::parse(&rec[2]).ok_or_else(|| bad(i + 1, "domain"))?,
            band: FrequencyBand::new(num(3)?, num(4)?),
            q: num(5)?,
            metric: rec[6].to_string(),
            value: num(7)?,
            n_normal: count(8)?,
            n_anomaly: count(9)?,
        });
    }
    Ok(EvalReport { notes, rows })
}

/// `(machine, band, domain, q bits)` for one line of the decision pivot.
type PivotKey = (usize, usize, StratumDomain, u64);

fn band_label(b: &FrequencyBand) -> String {
    format!("{}-{} Hz", b.f_lo, b.f_hi)
}

fn pct(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{:.1}", 100.0 * v),
        _ => "n/a".into(),
    }
}

/// Machines as rows, one AUC / pAUC column pair per band, pooled sections.
fn markdown(report: &EvalReport) -> String {
    let mut s = String::new();
    for n in &report.notes {
        let _ = writeln!(s, "> {n}");
    }
    if !report.notes.is_empty() {
        s.push('\n');
    }

    let mut bands: Vec<FrequencyBand> = Vec::new();
    let mut machines: Vec<String> = Vec::new();
    for r in &report.rows {
        if !bands.contains(&r.band) {
            bands.push(r.band);
        }
        if !machines.contains(&r.machine) {
            machines.push(r.machine.clone());
        }
    }
    let lookup = |m: &str, b: &FrequencyBand, d: StratumDomain, metric: &str| {
        report
            .rows
            .iter()
            .find(|r| {
                r.machine == m
                    && r.section.is_none()
                    && r.domain == d
                    && r.band == *b
                    && r.metric == metric
            })
            .map(|r| r.value)
    };

    let ranked = report.rows.iter().any(|r| r.metric == "auc");
    if ranked {
        for domain in [
            StratumDomain::All,
            StratumDomain::Source,
            StratumDomain::Target,
        ] {
            let _ = writeln!(s, "### AUC / pAUC (%), domain: {}\n", domain.as_str());
            s.push_str("| Machine |");
            for b in &bands {
                let _ = write!(s, " {} |", band_label(b));
            }
            s.push_str("\n|---|");
            s.push_str(&"---|".repeat(bands.len()));
            s.push('\n');
            for m in &machines {
                let _ = write!(s, "| {m} |");
                for b in &bands {
                    let _ = write!(
                        s,
                        " {} / {} |",
                        pct(lookup(m, b, domain, "auc")),
                        pct(lookup(m, b, domain, "pauc"))
                    );
                }
                s.push('\n');
            }
            s.push('\n');
        }
    }

    let decision: Vec<&ReportRow> = report
        .rows
        .iter()
        .filter(|r| r.section.is_none() && r.metric != "auc" && r.metric != "pauc")
        .collect();
    if !decision.is_empty() {
        // Pivot to one line per (machine, band, domain, q).
        let mut metrics: Vec<&str> = Vec::new();
        let mut lines: BTreeMap<PivotKey, Vec<(&str, f64)>> = BTreeMap::new();
        for r in &decision {
            if !metrics.contains(&r.metric.as_str()) {
                metrics.push(&r.metric);
            }
            let mi = machines.iter().position(|m| *m == r.machine).unwrap_or(0);
            let bi = bands.iter().position(|b| *b == r.band).unwrap_or(0);
            lines
                .entry((mi, bi, r.domain, r.q.to_bits()))
                .or_default()
                .push((&r.metric, r.value));
        }
        s.push_str("### Decision metrics\n\n| Machine | Band | Domain | q |");
        for m in &metrics {
            let _ = write!(s, " {m} |");
        }
        s.push_str("\n|---|---|---|---|");
        s.push_str(&"---|".repeat(metrics.len()));
        s.push('\n');
        for ((mi, bi, d, q), vals) in lines {
            let _ = write!(
                s,
                "| {} | {} | {} | {} |",
                machines[mi],
                band_label(&bands[bi]),
                d.as_str(),
                f64::from_bits(q)
            );
            for m in &metrics {
                let v = vals.iter().find(|(n, _)| n == m).map(|(_, v)| *v);
                let _ = write!(
                    s,
                    " {} |",
                    v.filter(|v| v.is_finite())
                        .map_or("n/a".into(), |v| format!("{v:.3}"))
                );
            }
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EvalReport {
        let band = FrequencyBand::new(2000.0, 5000.0);
        let row = |section, domain, metric: &str, value| ReportRow {
            machine: "slider".into(),
            section,
            domain,
            band,
            q: 0.9,
            metric: metric.into(),
            value,
            n_normal: 10,
            n_anomaly: 10,
        };
        EvalReport {
            notes: vec!["a note, with a comma".into()],
            rows: vec![
                row(Some(0), StratumDomain::Source, "auc", 0.8125),
                row(None, StratumDomain::All, "auc", 1.0 / 3.0),
                row(None, StratumDomain::All, "pauc", f64::NAN),
                row(None, StratumDomain::Target, "recall", 0.1 + 0.2),
            ],
        }
    }

    fn render(r: &EvalReport, f: ReportFormat) -> String {
        let mut buf = Vec::new();
        emit_report(r, f, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn csv_round_trips() {
        let r = sample();
        let text = render(&r, ReportFormat::Csv);
        assert!(text.starts_with("# a note, with a comma\nmachine,section,domain,band_lo_hz,band_hi_hz,q,metric,value,n_normal,n_anomaly\n"));
        let back = parse_report_csv(text.as_bytes()).unwrap();
        assert_eq!(back.notes, r.notes);
        assert_eq!(back.rows.len(), r.rows.len());
        for (a, b) in back.rows.iter().zip(&r.rows) {
            assert!(a.value == b.value || (a.value.is_nan() && b.value.is_nan()));
            assert_eq!(
                ReportRow {
                    value: 0.0,
                    ..a.clone()
                },
                ReportRow {
                    value: 0.0,
                    ..b.clone()
                }
            );
        }
    }

    #[test]
    fn plotdata_is_long_form() {
        let text = render(&sample(), ReportFormat::Plotdata);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "machine,band,band_lo_hz,band_hi_hz,domain,q,metric,value"
        );
        // Per-section rows are left out.
        assert_eq!(lines.len(), 1 + 3);
    }

    #[test]
    fn markdown_has_machine_rows_and_band_columns() {
        let md = render(&sample(), ReportFormat::Markdown);
        assert!(md.contains("| Machine | 2000-5000 Hz |"));
        assert!(md.contains("| slider | 33.3 / n/a |"));
        assert!(md.contains("| slider | 2000-5000 Hz | target | 0.9 | 0.300 |"));
    }
}
