//! Run reports: one key=value record per line with a fixed key order, so
//! runs can be diffed, parsed back, and merged into the per-class
//! comparison table.

use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("line {line}: unknown record kind {kind:?}")]
    UnknownKind { line: usize, kind: String },
    #[error("line {line}: missing key {key}")]
    MissingKey { line: usize, key: &'static str },
    #[error("line {line}: malformed field {field:?}")]
    MalformedField { line: usize, field: String },
}

/// One synthesized-image record: which method, which class, and how the
/// verification went.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub method: String,
    pub class_index: usize,
    pub sample: usize,
    pub status: String,
    pub verified: bool,
    pub target_prob: f64,
    pub max_other: f64,
    pub min_train_distance: f64,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Trained-model accuracy record.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub layers: usize,
    pub seed: u64,
    pub accuracy: f64,
}

/// Everything one or more runs produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub models: Vec<ModelRecord>,
    pub results: Vec<ResultRecord>,
}

impl ResultRecord {
    /// Fixed key order; floats at six decimals.
    pub fn to_line(&self) -> String {
        format!(
            "record=result method={} class={} sample={} status={} verified={} target_prob={:.6} max_other={:.6} min_train_distance={:.6} iterations={} residual_norm={:.6}",
            self.method,
            self.class_index,
            self.sample,
            self.status,
            self.verified,
            self.target_prob,
            self.max_other,
            self.min_train_distance,
            self.iterations,
            self.residual_norm,
        )
    }
}

impl ModelRecord {
    pub fn to_line(&self) -> String {
        format!(
            "record=model layers={} seed={} accuracy={:.6}",
            self.layers, self.seed, self.accuracy
        )
    }
}

fn field<'a>(
    pairs: &'a [(&'a str, &'a str)],
    key: &'static str,
    line: usize,
) -> Result<&'a str, ReportError> {
    pairs
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or(ReportError::MissingKey { line, key })
}

fn parse_num<T: std::str::FromStr>(value: &str, line: usize) -> Result<T, ReportError> {
    value
        .parse()
        .map_err(|_| ReportError::MalformedField { line, field: value.to_string() })
}

impl RunReport {
    /// Parses report text. Lines that are empty or start with `#` are
    /// ignored; everything else must be a well-formed record.
    pub fn parse(text: &str) -> Result<Self, ReportError> {
        let mut report = RunReport::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let pairs: Vec<(&str, &str)> = trimmed
                .split_whitespace()
                .map(|tok| {
                    tok.split_once('=')
                        .ok_or_else(|| ReportError::MalformedField { line, field: tok.to_string() })
                })
                .collect::<Result<_, _>>()?;
            match field(&pairs, "record", line)? {
                "result" => report.results.push(ResultRecord {
                    method: field(&pairs, "method", line)?.to_string(),
                    class_index: parse_num(field(&pairs, "class", line)?, line)?,
                    sample: parse_num(field(&pairs, "sample", line)?, line)?,
                    status: field(&pairs, "status", line)?.to_string(),
                    verified: parse_num(field(&pairs, "verified", line)?, line)?,
                    target_prob: parse_num(field(&pairs, "target_prob", line)?, line)?,
                    max_other: parse_num(field(&pairs, "max_other", line)?, line)?,
                    min_train_distance: parse_num(field(&pairs, "min_train_distance", line)?, line)?,
                    iterations: parse_num(field(&pairs, "iterations", line)?, line)?,
                    residual_norm: parse_num(field(&pairs, "residual_norm", line)?, line)?,
                }),
                "model" => report.models.push(ModelRecord {
                    layers: parse_num(field(&pairs, "layers", line)?, line)?,
                    seed: parse_num(field(&pairs, "seed", line)?, line)?,
                    accuracy: parse_num(field(&pairs, "accuracy", line)?, line)?,
                }),
                kind => return Err(ReportError::UnknownKind { line, kind: kind.to_string() }),
            }
        }
        Ok(report)
    }

    /// Merges several reports into one.
    pub fn merge(reports: impl IntoIterator<Item = RunReport>) -> RunReport {
        let mut merged = RunReport::default();
        for r in reports {
            merged.models.extend(r.models);
            merged.results.extend(r.results);
        }
        merged
    }

    /// Sorts result rows by (class, method, sample) and model rows by
    /// (layers, seed).
    pub fn sort(&mut self) {
        self.results.sort_by(|a, b| {
            (a.class_index, &a.method, a.sample).cmp(&(b.class_index, &b.method, b.sample))
        });
        self.models.sort_by_key(|m| (m.layers, m.seed));
    }

    /// Plain-text table (as `#` comment lines) followed by the
    /// machine-readable records.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for m in &self.models {
            let _ = writeln!(out, "# model layers={} accuracy={:.2}%", m.layers, m.accuracy * 100.0);
        }

        // Aggregate per (class, method).
        let mut keys: Vec<(usize, String)> = self
            .results
            .iter()
            .map(|r| (r.class_index, r.method.clone()))
            .collect();
        keys.sort();
        keys.dedup();
        if !keys.is_empty() {
            let _ = writeln!(
                out,
                "# {:<5} {:<10} {:>9} {:>12} {:>10} {:>9}",
                "class", "method", "verified", "target_prob", "max_other", "min_dist"
            );
        }
        for (class_index, method) in keys {
            let rows: Vec<&ResultRecord> = self
                .results
                .iter()
                .filter(|r| r.class_index == class_index && r.method == method)
                .collect();
            let verified = rows.iter().filter(|r| r.verified).count();
            let mean = |f: fn(&ResultRecord) -> f64| {
                let vals: Vec<f64> = rows.iter().map(|r| f(r)).filter(|v| v.is_finite()).collect();
                if vals.is_empty() {
                    f64::NAN
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            };
            let _ = writeln!(
                out,
                "# {:<5} {:<10} {:>6}/{:<2} {:>12.4} {:>10.4} {:>9.3}",
                class_index,
                method,
                verified,
                rows.len(),
                mean(|r| r.target_prob),
                mean(|r| r.max_other),
                mean(|r| r.min_train_distance),
            );
        }

        for m in &self.models {
            let _ = writeln!(out, "{}", m.to_line());
        }
        for r in &self.results {
            let _ = writeln!(out, "{}", r.to_line());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record(class_index: usize, method: &str, sample: usize) -> ResultRecord {
        ResultRecord {
            method: method.to_string(),
            class_index,
            sample,
            status: "ok".to_string(),
            verified: true,
            target_prob: 0.912345,
            max_other: 0.01,
            min_train_distance: 8.25,
            iterations: 3,
            residual_norm: 1.5e-4,
        }
    }

    #[test]
    fn line_round_trip() {
        let rec = sample_record(7, "backward", 2);
        let line = rec.to_line();
        let parsed = RunReport::parse(&line).unwrap();
        assert_eq!(parsed.results.len(), 1);
        assert_eq!(parsed.results[0].method, "backward");
        assert_eq!(parsed.results[0].class_index, 7);
        assert_eq!(parsed.results[0].sample, 2);
        assert!(parsed.results[0].verified);
        assert!((parsed.results[0].target_prob - 0.912345).abs() < 1e-12);
    }

    #[test]
    fn model_line_round_trip() {
        let m = ModelRecord { layers: 6, seed: 1, accuracy: 0.969 };
        let parsed = RunReport::parse(&m.to_line()).unwrap();
        assert_eq!(parsed.models, vec![m]);
    }

    #[test]
    fn nan_distance_survives_round_trip() {
        let mut rec = sample_record(0, "gradient", 0);
        rec.min_train_distance = f64::NAN;
        let parsed = RunReport::parse(&rec.to_line()).unwrap();
        assert!(parsed.results[0].min_train_distance.is_nan());
    }

    #[test]
    fn single_report_render_parses_back_identically() {
        let mut report = RunReport {
            models: vec![ModelRecord { layers: 1, seed: 0, accuracy: 0.915 }],
            results: vec![sample_record(1, "backward", 0), sample_record(0, "search", 0)],
        };
        report.sort();
        let text = report.render();
        let parsed = RunReport::parse(&text).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn merge_sorts_by_class_then_method() {
        let a = RunReport { models: vec![], results: vec![sample_record(3, "backward", 0)] };
        let b = RunReport {
            models: vec![],
            results: vec![sample_record(0, "search", 0), sample_record(3, "forward", 1)],
        };
        let mut merged = RunReport::merge([a, b]);
        merged.sort();
        let order: Vec<(usize, &str)> = merged
            .results
            .iter()
            .map(|r| (r.class_index, r.method.as_str()))
            .collect();
        assert_eq!(order, vec![(0, "search"), (3, "backward"), (3, "forward")]);
    }

    #[test]
    fn parse_rejects_malformed() {
        assert!(matches!(
            RunReport::parse("record=banana x=1"),
            Err(ReportError::UnknownKind { .. })
        ));
        assert!(matches!(
            RunReport::parse("record=model layers=1 seed=0"),
            Err(ReportError::MissingKey { key: "accuracy", .. })
        ));
        assert!(matches!(
            RunReport::parse("record=model layers=abc seed=0 accuracy=1"),
            Err(ReportError::MalformedField { .. })
        ));
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let text = "# header\n\nrecord=model layers=2 seed=9 accuracy=0.954\n";
        let parsed = RunReport::parse(text).unwrap();
        assert_eq!(parsed.models.len(), 1);
    }
}
