use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{ClassLabel, DataError, DatasetManifest, EegRecording, ManifestEntry, ManifestSource};

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        kind => DataError::Parse {
            path: path.display().to_string(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}

/// Reads a headered per-run CSV, keeping only `channel_names` in that order.
///
/// Other columns (contact quality, gyro, counters) are ignored. Cells in the
/// kept columns that are empty or not numbers load as NaN so that
/// [`clean_rows`] can drop the row; a row with the wrong number of fields is
/// a parse error.
pub fn load_recording(
    path: &Path,
    channel_names: &[String],
    label: ClassLabel,
    sample_rate_hz: f64,
) -> Result<EegRecording, DataError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let columns = channel_names
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::MissingChannel {
                    path: path.display().to_string(),
                    channel: name.clone(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        for &col in &columns {
            let cell = record.get(col).unwrap_or("");
            samples.push(cell.parse::<f64>().unwrap_or(f64::NAN));
        }
    }
    if samples.is_empty() {
        return Err(DataError::EmptyFile(path.display().to_string()));
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
    Ok(EegRecording {
        subject_id: stem.clone(),
        run_id: stem,
        label,
        channel_names: channel_names.to_vec(),
        samples,
        sample_rate_hz,
    })
}

/// Drops every row holding a NaN or infinite value, preserving order.
pub fn clean_rows(rec: &EegRecording) -> Result<EegRecording, DataError> {
    let c = rec.n_channels();
    let samples: Vec<f64> = rec
        .samples
        .chunks(c.max(1))
        .filter(|row| row.iter().all(|v| v.is_finite()))
        .flatten()
        .copied()
        .collect();
    if samples.is_empty() {
        return Err(DataError::AllRowsCorrupt(format!("({}, {})", rec.subject_id, rec.run_id)));
    }
    Ok(EegRecording {
        samples,
        ..rec.clone()
    })
}

fn parse_label(raw: &str) -> Option<ClassLabel> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "0" | "truth" => Some(ClassLabel::Truth),
        "1" | "lie" => Some(ClassLabel::Lie),
        _ => None,
    }
}

/// Reads `subject_id,run_id,path,label` rows; relative paths resolve against
/// the manifest's directory. Labels are `0`/`1` (or `truth`/`lie`).
pub fn read_manifest(path: &Path, source: ManifestSource) -> Result<DatasetManifest, DataError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| DataError::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: format!("manifest header lacks column {name}"),
        })
    };
    let (cs, cr, cp, cl) = (col("subject_id")?, col("run_id")?, col("path")?, col("label")?);
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let raw_label = &record[cl];
        let label = parse_label(raw_label).ok_or_else(|| DataError::Parse {
            path: path.display().to_string(),
            line,
            msg: format!("label must be 0 or 1, got {raw_label:?}"),
        })?;
        let rel = Path::new(&record[cp]);
        entries.push(ManifestEntry {
            subject_id: record[cs].to_string(),
            run_id: record[cr].to_string(),
            path: if rel.is_absolute() { rel.to_path_buf() } else { base.join(rel) },
            label,
        });
    }
    Ok(DatasetManifest { entries, source })
}

/// Writes the manifest with paths made relative to `path`'s directory when
/// possible.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), DataError> {
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["subject_id", "run_id", "path", "label"])
        .map_err(|e| csv_err(path, e))?;
    for e in &manifest.entries {
        let rel = e.path.strip_prefix(base).unwrap_or(&e.path);
        w.write_record([
            e.subject_id.as_str(),
            e.run_id.as_str(),
            &rel.display().to_string(),
            &e.label.index().to_string(),
        ])
        .map_err(|err| csv_err(path, err))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Header of channel names, then one row per sample. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_recording_csv(rec: &EegRecording, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "{}", rec.channel_names.join(","))?;
        for i in 0..rec.n_samples() {
            let row = rec.row(i);
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    w.write_all(b",")?;
                }
                write!(w, "{v}")?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| io_err(path, e))
}

/// Loads and cleans every manifest entry, sorted by subject then run.
pub fn aggregate_sessions(
    manifest: &DatasetManifest,
    channel_names: &[String],
    sample_rate_hz: f64,
) -> Result<Vec<EegRecording>, DataError> {
    if manifest.entries.is_empty() {
        return Err(DataError::EmptyManifest);
    }
    let mut seen = HashSet::new();
    for e in &manifest.entries {
        if !seen.insert((e.subject_id.as_str(), e.run_id.as_str())) {
            return Err(DataError::DuplicateEntry {
                subject_id: e.subject_id.clone(),
                run_id: e.run_id.clone(),
            });
        }
    }
    let mut recordings = manifest
        .entries
        .iter()
        .map(|e| {
            let annotate = |source: DataError| DataError::Entry {
                subject_id: e.subject_id.clone(),
                run_id: e.run_id.clone(),
                source: Box::new(source),
            };
            let mut rec = load_recording(&e.path, channel_names, e.label, sample_rate_hz).map_err(annotate)?;
            rec.subject_id = e.subject_id.clone();
            rec.run_id = e.run_id.clone();
            clean_rows(&rec).map_err(annotate)
        })
        .collect::<Result<Vec<_>, _>>()?;
    recordings.sort_by(|a, b| (&a.subject_id, &a.run_id).cmp(&(&b.subject_id, &b.run_id)));
    Ok(recordings)
}
