//! CSV ingestion and export for raw records.
//!
//! Layout: header row `t_start,t_end,lat_o,lon_o,lat_d,lon_d,tags`, with
//! `tags` as semicolon-joined `key=value` pairs.

use std::io::{Read, Write};

use super::record::DataRecord;
use super::PipelineError;

pub const HEADER: [&str; 7] = [
    "t_start", "t_end", "lat_o", "lon_o", "lat_d", "lon_d", "tags",
];

/// Result of reading a CSV source: valid records plus the number of rows skipped.
#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub records: Vec<DataRecord>,
    pub malformed: usize,
}

fn parse_tags(s: &str) -> Option<Vec<(String, String)>> {
    s.split(';')
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (k, v) = p.split_once('=')?;
            Some((k.to_string(), v.to_string()))
        })
        .collect()
}

fn parse_row(id: u64, row: &csv::StringRecord) -> Option<DataRecord> {
    if row.len() != HEADER.len() {
        return None;
    }
    let t_start = row[0].trim().parse().ok()?;
    let t_end = row[1].trim().parse().ok()?;
    let f = |i: usize| row[i].trim().parse::<f64>().ok();
    let tags = parse_tags(&row[6])?;
    DataRecord::new(id, t_start, t_end, f(2)?, f(3)?, f(4)?, f(5)?, tags).ok()
}

/// Reads records; malformed rows (bad numbers, bad tags, invariant
/// violations) are counted and skipped. Record ids are assigned from the row
/// number of valid rows.
pub fn read_records<R: Read>(reader: R) -> Result<Ingested, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).ne(HEADER.iter().copied()) {
        return Err(PipelineError::BadHeader(
            headers.iter().collect::<Vec<_>>().join(","),
        ));
    }
    let mut out = Ingested::default();
    for row in rdr.records() {
        match row
            .ok()
            .and_then(|r| parse_row(out.records.len() as u64, &r))
        {
            Some(rec) => out.records.push(rec),
            None => out.malformed += 1,
        }
    }
    Ok(out)
}

pub fn write_records<W: Write>(writer: W, records: &[DataRecord]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for r in records {
        let tags = r
            .tags
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            r.t_start.to_string(),
            r.t_end.to_string(),
            r.lat_o.to_string(),
            r.lon_o.to_string(),
            r.lat_d.to_string(),
            r.lon_d.to_string(),
            tags,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn malformed_rows_counted() {
        let src = "t_start,t_end,lat_o,lon_o,lat_d,lon_d,tags\n\
                   10,20,1.0,2.0,3.0,4.0,zone=a;kind=x\n\
                   10,20,91.0,2.0,3.0,4.0,\n\
                   abc,20,1.0,2.0,3.0,4.0,\n\
                   30,20,1.0,2.0,3.0,4.0,\n\
                   10,20,1.0,2.0,3.0\n\
                   10,20,1.0,2.0,3.0,4.0,noequals\n\
                   11,21,1.0,2.0,3.0,4.0,\n";
        let got = read_records(src.as_bytes()).unwrap();
        assert_eq!(got.records.len(), 2);
        assert_eq!(got.malformed, 5);
        assert_eq!(got.records[0].tag("zone"), Some("a"));
        assert_eq!(got.records[1].id, 1);
        assert!(got.records[1].tags.is_empty());
    }

    #[test]
    fn header_required() {
        let src = "a,b\n1,2\n";
        assert!(matches!(
            read_records(src.as_bytes()),
            Err(PipelineError::BadHeader(_))
        ));
    }

    #[test]
    fn write_then_read() {
        let recs = vec![
            DataRecord::new(
                0,
                1,
                2,
                30.5,
                104.25,
                30.0,
                104.0,
                vec![("a".into(), "b".into())],
            )
            .unwrap(),
            DataRecord::new(1, 3, 9, -1.0, 0.1, 2.0, 3.0, vec![]).unwrap(),
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let back = read_records(buf.as_slice()).unwrap();
        assert_eq!(back.malformed, 0);
        assert_eq!(back.records, recs);
    }
}
