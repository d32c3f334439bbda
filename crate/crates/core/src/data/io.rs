//! Raw events and labels files.
//!
//! Both are comma-separated text with `#`-prefixed provenance lines
//! before the header. Events: `patient_id,hour,feature,value` (one
//! observation per row, value is a number or a level name). Labels:
//! `patient_id,label` with label 0 or 1 — the labels file is the patient
//! roster, so a patient with no events still yields a record. Writes are
//! byte-deterministic; floats are printed in shortest round-trip form.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::schema::{FeatureKind, Schema};
use super::{Event, EventValue, PatientRecord};
use crate::error::{Error, Result};

pub fn write_events(
    path: &Path,
    records: &[PatientRecord],
    schema: &Schema,
    provenance: &[(String, String)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (key, value) in provenance {
        writeln!(w, "# {key}={value}")?;
    }
    writeln!(w, "patient_id,hour,feature,value")?;
    for record in records {
        for event in &record.events {
            let feature = &schema.features[event.feature];
            match &event.value {
                EventValue::Number(v) => {
                    writeln!(w, "{},{},{},{}", record.patient_id, event.hour, feature.name, v)?
                }
                EventValue::Level(l) => writeln!(
                    w,
                    "{},{},{},{}",
                    record.patient_id, event.hour, feature.name, feature.levels[*l]
                )?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_labels(
    path: &Path,
    records: &[PatientRecord],
    provenance: &[(String, String)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (key, value) in provenance {
        writeln!(w, "# {key}={value}")?;
    }
    writeln!(w, "patient_id,label")?;
    for record in records {
        writeln!(w, "{},{}", record.patient_id, u8::from(record.label))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `# key=value` provenance lines at the top of a file.
pub fn read_provenance(path: &Path) -> Result<Vec<(String, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let Some(rest) = line.strip_prefix('#') else { break };
        if let Some((key, value)) = rest.trim().split_once('=') {
            out.push((key.trim().to_string(), value.trim().to_string()));
        }
    }
    Ok(out)
}

/// Reads an events + labels file pair back into records, ordered by
/// patient id. Every event row must reference a labeled patient and a
/// schema feature; values must be finite numbers (continuous) or known
/// level names (categorical).
pub fn read_records(
    events_path: &Path,
    labels_path: &Path,
    schema: &Schema,
) -> Result<Vec<PatientRecord>> {
    let mut labels: BTreeMap<u64, bool> = BTreeMap::new();
    let mut reader = csv_reader(labels_path)?;
    for (line_no, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Data(format!("labels file: {e}")))?;
        if row.len() != 2 {
            return Err(Error::Data(format!(
                "labels row {} has {} fields, expected 2",
                line_no + 1,
                row.len()
            )));
        }
        let pid = parse_pid(&row[0])?;
        let label = match row[1].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Data(format!(
                    "patient {pid}: label {other:?} is not 0 or 1"
                )))
            }
        };
        if labels.insert(pid, label).is_some() {
            return Err(Error::Data(format!("patient {pid} labeled twice")));
        }
    }
    if labels.is_empty() {
        return Err(Error::Data("labels file lists no patients".into()));
    }

    let mut events: BTreeMap<u64, Vec<Event>> = BTreeMap::new();
    let mut reader = csv_reader(events_path)?;
    for (line_no, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Data(format!("events file: {e}")))?;
        if row.len() != 4 {
            return Err(Error::Data(format!(
                "events row {} has {} fields, expected 4",
                line_no + 1,
                row.len()
            )));
        }
        let pid = parse_pid(&row[0])?;
        if !labels.contains_key(&pid) {
            return Err(Error::Data(format!(
                "patient {pid} has events but no label"
            )));
        }
        let hour: f64 = row[1]
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("patient {pid}: bad hour {:?}", &row[1])))?;
        if !hour.is_finite() || !(0.0..super::WINDOW_HOURS as f64).contains(&hour) {
            return Err(Error::Data(format!(
                "patient {pid}: hour {hour} outside the observation window"
            )));
        }
        let feature_idx = schema.feature_index(row[2].trim())?;
        let feature = &schema.features[feature_idx];
        let value = match feature.kind {
            FeatureKind::Continuous => {
                let v: f64 = row[3].trim().parse().map_err(|_| {
                    Error::Data(format!(
                        "patient {pid}: bad value {:?} for {:?}",
                        &row[3], feature.name
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "patient {pid}: non-finite value for {:?}",
                        feature.name
                    )));
                }
                EventValue::Number(v)
            }
            FeatureKind::Categorical => EventValue::Level(feature.level_index(row[3].trim())?),
        };
        events.entry(pid).or_default().push(Event {
            hour,
            feature: feature_idx,
            value,
        });
    }

    Ok(labels
        .into_iter()
        .map(|(patient_id, label)| PatientRecord {
            patient_id,
            events: events.remove(&patient_id).unwrap_or_default(),
            label,
        })
        .collect())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn parse_pid(field: &str) -> Result<u64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("bad patient id {field:?}")))
}
