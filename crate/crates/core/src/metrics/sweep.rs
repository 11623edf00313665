use std::collections::BTreeMap;
use std::path::Path;

use super::report::{EvalReport, ReportRow, StratumDomain};
use super::{auc, pauc, MetricsError, ScoredSet};
use crate::anomaly::{AnomalyScore, ReferenceModel};
use crate::corpus::{ClipMeta, Domain, Label, Manifest};
use crate::dsp::FrequencyBand;
use crate::pipeline::{run_pipeline, FeatureSource, PipelineConfig, PipelineError};

/// 0.85 to 0.95 in steps of 0.01.
pub const DEFAULT_Q_GRID: [f64; 11] = [
    0.85, 0.86, 0.87, 0.88, 0.89, 0.90, 0.91, 0.92, 0.93, 0.94, 0.95,
];

pub const THRESHOLD_NOTE: &str = "AUC and pAUC do not depend on the Gamma threshold; \
     this sweep reports the decision metrics the threshold controls";

pub fn validate_grid(grid: &[f64]) -> Result<(), MetricsError> {
    if grid.is_empty() {
        return Err(MetricsError::InvalidGrid("grid is empty".into()));
    }
    if let Some(q) = grid.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(MetricsError::InvalidGrid(format!("{q} is outside (0, 1)")));
    }
    Ok(())
}

fn matches_domain(clip: &ClipMeta, d: StratumDomain) -> bool {
    match d {
        StratumDomain::All => true,
        StratumDomain::Source => clip.domain == Domain::Source,
        StratumDomain::Target => clip.domain == Domain::Target,
    }
}

/// Labelled scores grouped per stratum: each section then all sections, each
/// crossed with source, target and both domains.
fn strata(scores: &[AnomalyScore]) -> Vec<(String, Option<u8>, StratumDomain, Vec<&AnomalyScore>)> {
    let unknown = scores
        .iter()
        .filter(|s| s.clip.label == Label::Unknown)
        .count();
    if unknown > 0 {
        log::warn!("{unknown} unlabelled clips left out of the evaluation");
    }
    let labelled: Vec<&AnomalyScore> = scores
        .iter()
        .filter(|s| s.clip.label != Label::Unknown)
        .collect();
    let mut machines: Vec<String> = labelled
        .iter()
        .map(|s| s.clip.machine.to_string())
        .collect();
    machines.sort();
    machines.dedup();
    let mut out = Vec::new();
    for machine in machines {
        let of_machine: Vec<&AnomalyScore> = labelled
            .iter()
            .copied()
            .filter(|s| s.clip.machine.to_string() == machine)
            .collect();
        let mut sections: Vec<Option<u8>> =
            of_machine.iter().map(|s| Some(s.clip.section)).collect();
        sections.sort();
        sections.dedup();
        sections.push(None);
        for section in sections {
            for domain in [
                StratumDomain::Source,
                StratumDomain::Target,
                StratumDomain::All,
            ] {
                let members: Vec<&AnomalyScore> = of_machine
                    .iter()
                    .copied()
                    .filter(|s| {
                        section.is_none_or(|x| s.clip.section == x)
                            && matches_domain(&s.clip, domain)
                    })
                    .collect();
                if !members.is_empty() {
                    out.push((machine.clone(), section, domain, members));
                }
            }
        }
    }
    out
}

/// AUC and pAUC rows for every stratum. Strata with a single class get NaN.
pub fn evaluate_scores(
    scores: &[AnomalyScore],
    band: FrequencyBand,
    q: f64,
    pauc_p: f64,
) -> EvalReport {
    let mut report = EvalReport::default();
    for (machine, section, domain, members) in strata(scores) {
        let set = ScoredSet {
            scores: members.iter().map(|s| s.score).collect(),
            labels: members
                .iter()
                .map(|s| s.clip.label == Label::Anomaly)
                .collect(),
        };
        let (n_normal, n_anomaly) = (set.n_normal(), set.n_anomaly());
        let value = |r: Result<f64, MetricsError>| match r {
            Ok(v) => v,
            Err(e) => {
                log::warn!(
                    "{machine} section {} {}: {e}",
                    section.map_or_else(|| "all".into(), |s| s.to_string()),
                    domain.as_str()
                );
                f64::NAN
            }
        };
        let a = value(auc(&set));
        let p = if a.is_nan() {
            f64::NAN
        } else {
            value(pauc(&set, pauc_p))
        };
        for (metric, v) in [("auc", a), ("pauc", p)] {
            report.rows.push(ReportRow {
                machine: machine.clone(),
                section,
                domain,
                band,
                q,
                metric: metric.into(),
                value: v,
                n_normal,
                n_anomaly,
            });
        }
    }
    report
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecisionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl DecisionCounts {
    fn ratio(num: usize, den: usize) -> f64 {
        if den == 0 {
            f64::NAN
        } else {
            num as f64 / den as f64
        }
    }

    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> f64 {
        Self::ratio(self.fp, self.fp + self.tn)
    }

    pub fn f1(&self) -> f64 {
        Self::ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

/// Confusion counts of `score > threshold` against the labels.
pub fn decision_counts(scores: &[f64], thresholds: &[f64], labels: &[bool]) -> DecisionCounts {
    let mut c = DecisionCounts::default();
    for ((&s, &t), &anomalous) in scores.iter().zip(thresholds).zip(labels) {
        match (s > t, anomalous) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Precision, recall, F1 and false-positive rate per stratum for each q,
/// thresholding every clip at the q-quantile of its section's reference.
pub fn run_threshold_sweep(
    references: &BTreeMap<u8, ReferenceModel>,
    scores: &[AnomalyScore],
    grid: &[f64],
    band: FrequencyBand,
) -> Result<EvalReport, PipelineError> {
    validate_grid(grid)?;
    let mut report = EvalReport {
        notes: vec![THRESHOLD_NOTE.to_string()],
        rows: Vec::new(),
    };
    let groups = strata(scores);
    for &q in grid {
        let mut thresholds = BTreeMap::new();
        for (&section, r) in references {
            thresholds.insert(section, r.threshold(q)?);
        }
        for (machine, section, domain, members) in &groups {
            let t = members
                .iter()
                .map(|s| {
                    thresholds.get(&s.clip.section).copied().ok_or_else(|| {
                        PipelineError::Data(format!("no reference for section {}", s.clip.section))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let sc: Vec<f64> = members.iter().map(|s| s.score).collect();
            let labels: Vec<bool> = members
                .iter()
                .map(|s| s.clip.label == Label::Anomaly)
                .collect();
            let c = decision_counts(&sc, &t, &labels);
            let n_anomaly = labels.iter().filter(|&&l| l).count();
            for (metric, v) in [
                ("precision", c.precision()),
                ("recall", c.recall()),
                ("f1", c.f1()),
                ("fpr", c.fpr()),
            ] {
                report.rows.push(ReportRow {
                    machine: machine.clone(),
                    section: *section,
                    domain: *domain,
                    band,
                    q,
                    metric: metric.into(),
                    value: v,
                    n_normal: labels.len() - n_anomaly,
                    n_anomaly,
                });
            }
        }
    }
    Ok(report)
}

/// Runs the whole pipeline once per band, in order, with the full band
/// appended as a control when missing. `on_band` sees the accumulated report
/// after every band so partial results survive a later failure.
#[allow(clippy::too_many_arguments)]
pub fn run_band_sweep(
    cfg: &PipelineConfig,
    manifest: &Manifest,
    pseudo: &[ClipMeta],
    bands: &[FrequencyBand],
    src: &mut dyn FeatureSource,
    workdir: &Path,
    mut on_band: impl FnMut(&EvalReport) -> Result<(), PipelineError>,
) -> Result<EvalReport, PipelineError> {
    let mut bands = bands.to_vec();
    if !bands.iter().any(|b| b.is_full(cfg.sample_rate)) {
        bands.push(FrequencyBand::full(cfg.sample_rate));
    }
    for b in &bands {
        b.validate(cfg.sample_rate)?;
    }
    let mut report = EvalReport::default();
    for band in bands {
        let mut c = cfg.clone();
        c.band = (!band.is_full(cfg.sample_rate)).then_some(band);
        let dir = workdir.join(format!("band_{}_{}", band.f_lo, band.f_hi));
        log::info!("band sweep: {band}");
        let mut out = run_pipeline(&c, manifest, pseudo, src, &dir)?;
        // Label the control with the band it was asked for.
        for r in &mut out.report.rows {
            r.band = band;
        }
        report.extend(out.report);
        on_band(&report)?;
    }
    Ok(report)
}
