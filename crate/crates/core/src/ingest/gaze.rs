use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde_json::Value;

use super::{GazeSample, IngestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GazeLogFormat {
    Csv,
    JsonLines,
}

/// Samples grouped by trial (trial ids ascending), each group time-sorted
/// with duplicate timestamps collapsed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedGazeLog {
    pub samples: Vec<(String, GazeSample)>,
    /// Data rows read from the source.
    pub rows: usize,
    /// Rows discarded because a later row had the same trial and timestamp.
    pub duplicates_removed: usize,
    /// Trials whose rows were not in temporal order in the source.
    pub reordered_trials: usize,
}

impl ParsedGazeLog {
    pub fn trial_count(&self) -> usize {
        let mut n = 0;
        let mut last: Option<&str> = None;
        for (id, _) in &self.samples {
            if last != Some(id.as_str()) {
                n += 1;
                last = Some(id);
            }
        }
        n
    }
}

const COLUMNS: [&str; 4] = ["trial_id", "t_ms", "x_px", "y_px"];

pub fn parse_gaze_log<R: Read>(
    source: R,
    format: GazeLogFormat,
) -> Result<ParsedGazeLog, IngestError> {
    let rows = match format {
        GazeLogFormat::Csv => read_csv_rows(source)?,
        GazeLogFormat::JsonLines => read_json_rows(source)?,
    };
    Ok(group_rows(rows))
}

struct Row {
    line: u64,
    trial_id: String,
    sample: GazeSample,
}

fn read_csv_rows<R: Read>(source: R) -> Result<Vec<Row>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(false)
        .from_reader(source);
    let mut records = reader.records();

    let header = match records.next() {
        None => return Ok(Vec::new()),
        Some(rec) => rec.map_err(csv_error)?,
    };
    let mut index = [0usize; 4];
    for (slot, name) in index.iter_mut().zip(COLUMNS) {
        *slot = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::Schema(format!("gaze log is missing column `{name}`")))?;
    }

    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let field = |i: usize| rec.get(index[i]).unwrap_or("");
        let trial_id = field(0);
        if trial_id.is_empty() {
            return Err(malformed(line, "empty trial_id"));
        }
        let t = number(line, COLUMNS[1], field(1))?;
        let x = number(line, COLUMNS[2], field(2))?;
        let y = number(line, COLUMNS[3], field(3))?;
        rows.push(checked_row(line, trial_id.to_string(), t, x, y)?);
    }
    Ok(rows)
}

fn read_json_rows<R: Read>(source: R) -> Result<Vec<Row>, IngestError> {
    let mut rows = Vec::new();
    for (i, text) in BufReader::new(source).lines().enumerate() {
        let line = i as u64 + 1;
        let text = text.map_err(|e| malformed(line, &e.to_string()))?;
        if text.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| malformed(line, &e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed(line, "expected a JSON object"))?;
        for key in COLUMNS {
            if !obj.contains_key(key) {
                return Err(IngestError::Schema(format!(
                    "line {line}: gaze record is missing key `{key}`"
                )));
            }
        }
        let trial_id = match &obj["trial_id"] {
            Value::String(s) if !s.is_empty() => s.clone(),
            Value::Number(n) => n.to_string(),
            _ => return Err(malformed(line, "trial_id must be a string or number")),
        };
        let num = |key: &str| -> Result<f64, IngestError> {
            obj[key]
                .as_f64()
                .ok_or_else(|| malformed(line, &format!("`{key}` is not a number")))
        };
        rows.push(checked_row(line, trial_id, num("t_ms")?, num("x_px")?, num("y_px")?)?);
    }
    Ok(rows)
}

fn checked_row(line: u64, trial_id: String, t: f64, x: f64, y: f64) -> Result<Row, IngestError> {
    if !(t.is_finite() && x.is_finite() && y.is_finite()) {
        return Err(malformed(line, "non-finite value"));
    }
    if t < 0.0 {
        return Err(malformed(line, "negative timestamp"));
    }
    Ok(Row {
        line,
        trial_id,
        sample: GazeSample { t, x, y },
    })
}

fn group_rows(rows: Vec<Row>) -> ParsedGazeLog {
    let total = rows.len();
    let mut by_trial: BTreeMap<String, Vec<(u64, GazeSample)>> = BTreeMap::new();
    for row in rows {
        by_trial
            .entry(row.trial_id)
            .or_default()
            .push((row.line, row.sample));
    }

    let mut out = ParsedGazeLog {
        rows: total,
        ..Default::default()
    };
    for (trial_id, mut group) in by_trial {
        if group.windows(2).any(|w| w[1].1.t < w[0].1.t) {
            out.reordered_trials += 1;
        }
        // Stable on t, so equal timestamps stay in file order and the last
        // occurrence is the one kept.
        group.sort_by(|a, b| a.1.t.total_cmp(&b.1.t).then(a.0.cmp(&b.0)));
        let mut kept: Vec<GazeSample> = Vec::with_capacity(group.len());
        for (_, s) in group {
            match kept.last_mut() {
                Some(prev) if prev.t == s.t => {
                    *prev = s;
                    out.duplicates_removed += 1;
                }
                _ => kept.push(s),
            }
        }
        out.samples
            .extend(kept.into_iter().map(|s| (trial_id.clone(), s)));
    }
    out
}

/// Writes samples as a gaze-log CSV. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_gaze_log<W: Write>(
    mut sink: W,
    samples: &[(String, GazeSample)],
) -> std::io::Result<()> {
    writeln!(sink, "{}", COLUMNS.join(","))?;
    for (trial_id, s) in samples {
        writeln!(sink, "{},{},{},{}", trial_id, s.t, s.x, s.y)?;
    }
    Ok(())
}

fn number(line: u64, column: &str, raw: &str) -> Result<f64, IngestError> {
    raw.parse::<f64>()
        .map_err(|_| malformed(line, &format!("`{column}` value {raw:?} is not a number")))
}

fn malformed(line: u64, message: &str) -> IngestError {
    IngestError::Malformed {
        line,
        message: message.to_string(),
    }
}

fn csv_error(err: csv::Error) -> IngestError {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(e) => IngestError::Io(e),
        kind => malformed(line, &format!("{kind:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn csv(text: &str) -> Result<ParsedGazeLog, IngestError> {
        parse_gaze_log(text.as_bytes(), GazeLogFormat::Csv)
    }

    #[test]
    fn empty_source_is_empty() {
        let parsed = csv("").unwrap();
        assert!(parsed.samples.is_empty());
        let parsed = csv("trial_id,t_ms,x_px,y_px\n").unwrap();
        assert!(parsed.samples.is_empty());
        let parsed = parse_gaze_log("".as_bytes(), GazeLogFormat::JsonLines).unwrap();
        assert!(parsed.samples.is_empty());
    }

    #[test]
    fn duplicate_timestamp_keeps_last() {
        let parsed = csv("trial_id,t_ms,x_px,y_px\na,0,1,1\na,40,2,2\na,40,3,3\n").unwrap();
        assert_eq!(parsed.rows, 3);
        assert_eq!(parsed.duplicates_removed, 1);
        assert_eq!(
            parsed.samples,
            vec![
                ("a".to_string(), GazeSample::new(0.0, 1.0, 1.0)),
                ("a".to_string(), GazeSample::new(40.0, 3.0, 3.0)),
            ]
        );
    }

    #[test]
    fn out_of_order_rows_are_sorted_and_counted() {
        let ordered = "trial_id,t_ms,x_px,y_px\na,0,1,1\na,40,2,2\na,80,3,3\na,120,4,4\n";
        let shuffled = "trial_id,t_ms,x_px,y_px\na,80,3,3\na,0,1,1\na,120,4,4\na,40,2,2\n";
        let a = csv(ordered).unwrap();
        let b = csv(shuffled).unwrap();
        assert_eq!(a.reordered_trials, 0);
        assert_eq!(b.reordered_trials, 1);
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn column_order_follows_header() {
        let parsed = csv("y_px,x_px,t_ms,trial_id\n7,5,10,t1\n").unwrap();
        assert_eq!(parsed.samples, vec![("t1".into(), GazeSample::new(10.0, 5.0, 7.0))]);
    }

    #[test]
    fn malformed_row_names_line() {
        let err = csv("trial_id,t_ms,x_px,y_px\na,0,1,1\na,abc,1,1\n").unwrap_err();
        match err {
            IngestError::Malformed { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = csv("trial_id,t_ms,x_px,y_px\na,0,1\n").unwrap_err();
        assert!(matches!(err, IngestError::Malformed { line: 2, .. }), "{err:?}");
        let err = csv("trial_id,t_ms,x_px,y_px\na,-5,1,1\n").unwrap_err();
        assert!(matches!(err, IngestError::Malformed { line: 2, .. }));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let err = csv("trial_id,t_ms,x_px\na,0,1\n").unwrap_err();
        assert!(matches!(err, IngestError::Schema(_)), "{err:?}");
    }

    #[test]
    fn json_lines_match_csv() {
        let jl = "{\"trial_id\":\"a\",\"t_ms\":40,\"x_px\":2,\"y_px\":2}\n\n{\"trial_id\":\"a\",\"t_ms\":0,\"x_px\":1.5,\"y_px\":1}\n";
        let parsed = parse_gaze_log(jl.as_bytes(), GazeLogFormat::JsonLines).unwrap();
        let want = csv("trial_id,t_ms,x_px,y_px\na,0,1.5,1\na,40,2,2\n").unwrap();
        assert_eq!(parsed.samples, want.samples);
        assert_eq!(parsed.reordered_trials, 1);

        let err = parse_gaze_log("{\"trial_id\":\"a\",\"t_ms\":0}\n".as_bytes(), GazeLogFormat::JsonLines)
            .unwrap_err();
        assert!(matches!(err, IngestError::Schema(_)));
        let err = parse_gaze_log("{\"trial_id\":\"a\",\"t_ms\":0,\n".as_bytes(), GazeLogFormat::JsonLines)
            .unwrap_err();
        assert!(matches!(err, IngestError::Malformed { line: 1, .. }));
    }

    #[test]
    fn invalid_utf8_is_malformed() {
        let mut bytes = b"trial_id,t_ms,x_px,y_px\n".to_vec();
        bytes.extend_from_slice(&[b'a', 0xff, b',', b'0', b',', b'1', b',', b'1', b'\n']);
        let err = parse_gaze_log(bytes.as_slice(), GazeLogFormat::Csv).unwrap_err();
        assert!(matches!(err, IngestError::Malformed { line: 2, .. }), "{err:?}");
    }

    proptest! {
        #[test]
        fn write_then_parse_is_identity(
            rows in prop::collection::vec(
                (0u8..3, 0u32..50, -2000.0f64..4000.0, -2000.0f64..4000.0),
                0..60,
            )
        ) {
            let mut text = String::from("trial_id,t_ms,x_px,y_px\n");
            for (trial, t, x, y) in &rows {
                text.push_str(&format!("tr{trial},{},{x},{y}\n", *t as f64 * 7.5));
            }
            let first = csv(&text).unwrap();
            // Row conservation: every row is either kept or a dropped duplicate.
            prop_assert_eq!(first.samples.len() + first.duplicates_removed, rows.len());

            let mut buf = Vec::new();
            write_gaze_log(&mut buf, &first.samples).unwrap();
            let second = parse_gaze_log(buf.as_slice(), GazeLogFormat::Csv).unwrap();
            prop_assert_eq!(&second.samples, &first.samples);
            prop_assert_eq!(second.duplicates_removed, 0);
            prop_assert_eq!(second.reordered_trials, 0);

            // Determinism.
            prop_assert_eq!(csv(&text).unwrap(), first);
        }
    }
}
