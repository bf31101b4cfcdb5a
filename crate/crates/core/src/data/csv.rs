use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use super::{SpeedPanel, MISSING_SENTINEL};
use crate::error::{Error, Result};

/// Loads a panel from a `timestamp,<id1>,<id2>,...` CSV file.
///
/// Timestamps may be integer epoch seconds or ISO-8601 (naive values are
/// read as UTC). Cells that do not parse as a finite, non-negative number
/// become the missing sentinel.
pub fn load_csv(path: impl AsRef<Path>) -> Result<SpeedPanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_csv<R: Read>(reader: R) -> Result<SpeedPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers().map_err(csv_error)?.clone();
    match headers.get(0) {
        Some(h) if h.trim_start_matches('\u{feff}').eq_ignore_ascii_case("timestamp") => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: format!("first header must be \"timestamp\", found {other:?}"),
            })
        }
    }
    let sensor_ids: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    if sensor_ids.is_empty() {
        return Err(Error::Parse {
            line: 1,
            column: 2,
            message: "no sensor columns".into(),
        });
    }
    let mut seen = std::collections::HashSet::new();
    for (i, id) in sensor_ids.iter().enumerate() {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateSensor {
                id: id.clone(),
                column: i + 2,
            });
        }
    }

    let d = sensor_ids.len();
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record).map_err(csv_error)? {
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != d + 1 {
            return Err(Error::Parse {
                line,
                column: record.len(),
                message: format!("expected {} fields, found {}", d + 1, record.len()),
            });
        }
        let ts = parse_timestamp(&record[0]).ok_or_else(|| Error::Parse {
            line,
            column: 1,
            message: format!("unparseable timestamp {:?}", &record[0]),
        })?;
        if let Some(&prev) = timestamps.last() {
            let step = timestamps
                .get(1)
                .map(|&second: &i64| second - timestamps[0])
                .unwrap_or(ts - prev);
            if ts <= prev || ts - prev != step {
                return Err(Error::NonUniformTimestamps {
                    line,
                    message: format!("timestamp {ts} follows {prev} (expected spacing {step}s)"),
                });
            }
        }
        timestamps.push(ts);
        values.extend(record.iter().skip(1).map(parse_speed));
    }

    SpeedPanel::new(timestamps, sensor_ids, values, MISSING_SENTINEL)
}

/// Writes a panel in the same layout [`load_csv`] reads, epoch-second timestamps.
pub fn write_csv<W: Write>(panel: &SpeedPanel, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(panel.sensor_ids().iter().cloned());
    wtr.write_record(&header).map_err(csv_error)?;
    let mut buf = Vec::with_capacity(panel.n_sensors() + 1);
    for r in 0..panel.rows() {
        buf.clear();
        buf.push(panel.timestamps()[r].to_string());
        buf.extend(panel.row(r).iter().map(|v| v.to_string()));
        wtr.write_record(&buf).map_err(csv_error)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

fn parse_speed(cell: &str) -> f64 {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => v,
        _ => MISSING_SENTINEL,
    }
}

fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(secs) = s.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    const NAIVE: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    for fmt in NAIVE {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io("<csv>", source),
        other => Error::Parse {
            line,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_file() {
        let text = "timestamp,773869,767541\n0,64.375,67.625\n300,62.667,68.5\n600,,bad\n";
        let p = read_csv(text.as_bytes()).unwrap();
        assert_eq!((p.rows(), p.n_sensors()), (3, 2));
        assert_eq!(p.sensor_ids(), &["773869", "767541"]);
        assert_eq!(p.row(2), &[0.0, 0.0]);
        assert_eq!(p.value(1, 1), 68.5);
    }

    #[test]
    fn parses_iso_timestamps() {
        let text = "timestamp,a\n2012-03-01 00:00:00,1\n2012-03-01 00:05:00,2\n2012-03-01T00:10:00Z,3\n";
        let p = read_csv(text.as_bytes()).unwrap();
        assert_eq!(p.timestamps(), &[1330560000, 1330560300, 1330560600]);
    }

    #[test]
    fn shuffled_timestamps_rejected() {
        let text = "timestamp,a\n0,1\n600,2\n300,3\n";
        let err = read_csv(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::NonUniformTimestamps { line: 4, .. }), "{err}");
        assert!(err.to_string().contains("non-uniform/descending timestamps"));
    }

    #[test]
    fn gap_rejected() {
        let text = "timestamp,a\n0,1\n300,2\n900,3\n";
        assert!(matches!(
            read_csv(text.as_bytes()),
            Err(Error::NonUniformTimestamps { line: 4, .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "timestamp,a,b,a\n0,1,2,3\n";
        assert!(matches!(
            read_csv(text.as_bytes()),
            Err(Error::DuplicateSensor { column: 4, .. })
        ));
    }

    #[test]
    fn bad_header_rejected() {
        assert!(matches!(
            read_csv("time,a\n0,1\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_csv("/definitely/not/here.csv"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn write_then_read() {
        let p = SpeedPanel::new(
            vec![100, 400],
            vec!["x".into(), "y".into()],
            vec![1.25, 0.0, 70.1, 3.0],
            0.0,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&p, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), p);
    }
}
