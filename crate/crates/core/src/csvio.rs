//! CSV formats for event logs, traces, rate tables and fit reports.
//!
//! Metadata sits in leading `# key=value` lines; the first non-comment line
//! is a header naming each column with its unit.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::detect::DetectionReport;
use crate::error::{Error, Result};
use crate::fit::{EventRateTable, FitResult};
use crate::sim::{Event, EventKind, EventLog};
use crate::trace::FluorescenceTrace;

/// Writes `data` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, data: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(data)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn split_metadata(text: &str) -> (BTreeMap<String, String>, String) {
    let mut meta = BTreeMap::new();
    let mut body = String::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    (meta, body)
}

fn meta_value<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
    meta.get(key)
        .ok_or_else(|| Error::Format(format!("missing metadata `{key}`")))?
        .parse()
        .map_err(|_| Error::Format(format!("bad value for `{key}`")))
}

fn check_header(reader: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Format(format!(
            "expected columns {:?}, found {:?}",
            expected,
            header.iter().collect::<Vec<_>>()
        )));
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(field: Option<&str>, what: &str, line: usize) -> Result<T> {
    field
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("row {line}: bad {what}")))
}

const EVENT_COLUMNS: [&str; 4] = ["time_s", "kind", "n_before", "n_after"];

pub fn event_log_to_csv(log: &EventLog) -> Result<String> {
    let mut out = format!(
        "# duration_s={}\n# n0={}\n# seed={}\n",
        log.duration, log.n0, log.seed
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EVENT_COLUMNS)?;
    for e in &log.events {
        w.write_record([
            e.time.to_string(),
            e.kind.to_string(),
            e.n_before.to_string(),
            e.n_after().to_string(),
        ])?;
    }
    out.push_str(&finish(w)?);
    Ok(out)
}

pub fn event_log_from_csv(text: &str) -> Result<EventLog> {
    let (meta, body) = split_metadata(text);
    let mut r = csv::Reader::from_reader(body.as_bytes());
    check_header(&mut r, &EVENT_COLUMNS)?;
    let mut events = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let kind: EventKind = parse(rec.get(1), "kind", i + 1)?;
        let e = Event {
            time: parse(rec.get(0), "time", i + 1)?,
            kind,
            n_before: parse(rec.get(2), "n_before", i + 1)?,
        };
        let n_after: u32 = parse(rec.get(3), "n_after", i + 1)?;
        if n_after != e.n_after() {
            return Err(Error::Format(format!("row {}: n_after inconsistent with kind", i + 1)));
        }
        events.push(e);
    }
    let log = EventLog {
        events,
        n0: meta_value(&meta, "n0")?,
        duration: meta_value(&meta, "duration_s")?,
        seed: meta_value(&meta, "seed")?,
    };
    log.validate()?;
    Ok(log)
}

const TRACE_COLUMNS: [&str; 2] = ["t_start_s", "counts"];

pub fn trace_to_csv(trace: &FluorescenceTrace) -> Result<String> {
    let mut out = format!(
        "# bin_width_s={}\n# per_atom_rate_hz={}\n# bg_rate_hz={}\n# seed={}\n",
        trace.bin_width, trace.per_atom_rate, trace.bg_rate, trace.seed
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_COLUMNS)?;
    for (i, c) in trace.counts.iter().enumerate() {
        w.write_record([trace.t_start(i).to_string(), c.to_string()])?;
    }
    out.push_str(&finish(w)?);
    Ok(out)
}

pub fn trace_from_csv(text: &str) -> Result<FluorescenceTrace> {
    let (meta, body) = split_metadata(text);
    let mut r = csv::Reader::from_reader(body.as_bytes());
    check_header(&mut r, &TRACE_COLUMNS)?;
    let mut counts = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        counts.push(parse(rec.get(1), "counts", i + 1)?);
    }
    Ok(FluorescenceTrace {
        bin_width: meta_value(&meta, "bin_width_s")?,
        counts,
        per_atom_rate: meta_value(&meta, "per_atom_rate_hz")?,
        bg_rate: meta_value(&meta, "bg_rate_hz")?,
        seed: meta_value(&meta, "seed")?,
    })
}

pub fn rate_table_to_csv(table: &EventRateTable) -> Result<String> {
    let mut out = format!("# duration_s={}\n", table.duration);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "n",
        "occupancy_s",
        "n_load",
        "n_loss1",
        "n_loss2",
        "load_rate_per_s",
        "load_sigma_per_s",
        "loss1_rate_per_s",
        "loss1_sigma_per_s",
        "loss2_rate_per_s",
        "loss2_sigma_per_s",
    ])?;
    for r in &table.rows {
        let (l, a, b) = (r.load_rate(), r.loss1_rate(), r.loss2_rate());
        w.write_record([
            r.n.to_string(),
            r.occupancy.to_string(),
            r.n_load.to_string(),
            r.n_loss1.to_string(),
            r.n_loss2.to_string(),
            l.value.to_string(),
            l.sigma.to_string(),
            a.value.to_string(),
            a.sigma.to_string(),
            b.value.to_string(),
            b.sigma.to_string(),
        ])?;
    }
    out.push_str(&finish(w)?);
    Ok(out)
}

/// One line of a parameter report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub parameter: String,
    pub value: f64,
    pub sigma: f64,
    pub unit: String,
    /// Injected value, when known.
    pub truth: Option<f64>,
}

impl ReportRow {
    pub fn new(parameter: &str, value: f64, sigma: f64, unit: &str) -> Self {
        Self {
            parameter: parameter.to_string(),
            value,
            sigma,
            unit: unit.to_string(),
            truth: None,
        }
    }

    pub fn with_truth(mut self, truth: f64) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn pull(&self) -> Option<f64> {
        self.truth.map(|t| (self.value - t).abs() / self.sigma)
    }
}

pub fn fit_report_rows(fit: &FitResult) -> Vec<ReportRow> {
    vec![
        ReportRow::new("load_rate", fit.load_rate.value, fit.load_rate.sigma, "1/s"),
        ReportRow::new("bg_lifetime", fit.bg_lifetime.value, fit.bg_lifetime.sigma, "s"),
        ReportRow::new("beta1_over_v", fit.b1.value, fit.b1.sigma, "1/s"),
        ReportRow::new("b2_event", fit.b2_event.value, fit.b2_event.sigma, "1/s"),
        ReportRow::new("beta2_over_v", fit.beta2_over_v.value, fit.beta2_over_v.sigma, "1/s"),
        ReportRow::new("beta_total_over_v", fit.beta_total_over_v.value, fit.beta_total_over_v.sigma, "1/s"),
        ReportRow::new("chi2", fit.chi2, 0.0, "1"),
        ReportRow::new("dof", fit.dof as f64, 0.0, "1"),
        ReportRow::new("clipped", f64::from(u8::from(fit.clipped)), 0.0, "1"),
    ]
}

pub fn detection_report_rows(r: &DetectionReport) -> Vec<ReportRow> {
    vec![
        ReportRow::new("bins", r.bins as f64, 0.0, "1"),
        ReportRow::new("events", r.events as f64, 0.0, "1"),
        ReportRow::new("spikes", r.spikes as f64, 0.0, "1"),
        ReportRow::new("ambiguous", r.ambiguous as f64, 0.0, "1"),
        ReportRow::new("ambiguity_rate", r.ambiguity_rate(), 0.0, "1"),
        ReportRow::new("snr", r.snr, 0.0, "1"),
        ReportRow::new("misclassification_probability", r.misclassification_probability, 0.0, "1"),
    ]
}

pub fn report_to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["parameter", "value", "sigma", "unit", "injected", "pull"])?;
    for r in rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.parameter.clone(),
            r.value.to_string(),
            r.sigma.to_string(),
            r.unit.clone(),
            opt(r.truth),
            opt(r.pull()),
        ])?;
    }
    finish(w)
}

/// Generic table with a header row.
pub fn table_to_csv(header: &[&str], rows: &[Vec<f64>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, RateModel};
    use crate::trace::synthesize;

    #[test]
    fn event_log_round_trip() {
        let m = RateModel { load_rate: 0.3, bg_rate: 0.05, b1: 0.02, b2: 0.01 };
        let log = simulate(&m, 1, 500.0, 5).unwrap();
        let back = event_log_from_csv(&event_log_to_csv(&log).unwrap()).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn trace_round_trip() {
        let m = RateModel { load_rate: 0.3, bg_rate: 0.05, b1: 0.02, b2: 0.01 };
        let log = simulate(&m, 1, 50.0, 5).unwrap();
        let t = synthesize(&log, 1e4, 500.0, 0.1, 5).unwrap();
        assert_eq!(trace_from_csv(&trace_to_csv(&t).unwrap()).unwrap(), t);
    }

    #[test]
    fn rejects_inconsistent_rows() {
        let text = "# duration_s=10\n# n0=0\n# seed=0\ntime_s,kind,n_before,n_after\n1,load,0,2\n";
        assert!(matches!(event_log_from_csv(text), Err(Error::Format(_))));
        let text = "# n0=0\n# seed=0\ntime_s,kind,n_before,n_after\n";
        assert!(event_log_from_csv(text).is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = std::env::temp_dir().join(format!("csvio-test-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("out.csv");
        write_atomic(&path, b"a\n").unwrap();
        write_atomic(&path, b"b\n").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "b\n");
        assert_eq!(fs::read_dir(&dir).unwrap().count(), 1);
        fs::remove_dir_all(&dir).unwrap();
    }
}
