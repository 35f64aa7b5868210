//! Run CSVs: the per-flow time series and the counter table.

use std::io::{self, Write};

use scenic_core::harness::{FlowSample, Metrics};
use thiserror::Error;

pub const METRICS_HEADER: &str = "time_ns,flow_id,bytes_delivered,throughput_gbps";
pub const COUNTERS_HEADER: &str = "counter,value";

pub fn write_metrics<W: Write>(mut w: W, m: &Metrics) -> io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for s in &m.samples {
        writeln!(w, "{},{},{},{:.6}", s.time_ns, s.flow_id, s.bytes_delivered, s.throughput_gbps)?;
    }
    Ok(())
}

pub fn write_counters<W: Write>(mut w: W, m: &Metrics) -> io::Result<()> {
    writeln!(w, "{COUNTERS_HEADER}")?;
    for (k, v) in &m.counters {
        writeln!(w, "{k},{v}")?;
    }
    Ok(())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CsvError {
    #[error("expected header {expected:?}, found {found:?}")]
    Header { expected: &'static str, found: String },
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
}

fn rows<'a>(text: &'a str, header: &'static str) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>, CsvError> {
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("");
    if first != header {
        return Err(CsvError::Header { expected: header, found: first.to_string() });
    }
    Ok(lines.enumerate().map(|(i, l)| (i + 2, l.split(',').collect())))
}

fn field<T: std::str::FromStr>(line: usize, cols: &[&str], i: usize, name: &str) -> Result<T, CsvError> {
    let raw = cols.get(i).ok_or_else(|| CsvError::Row { line, message: format!("missing column {name}") })?;
    raw.parse().map_err(|_| CsvError::Row { line, message: format!("invalid {name} {raw:?}") })
}

pub fn read_metrics(text: &str) -> Result<Vec<FlowSample>, CsvError> {
    let mut out = Vec::new();
    for (line, cols) in rows(text, METRICS_HEADER)? {
        if cols.len() != 4 {
            return Err(CsvError::Row { line, message: format!("expected 4 columns, found {}", cols.len()) });
        }
        out.push(FlowSample {
            time_ns: field(line, &cols, 0, "time_ns")?,
            flow_id: field(line, &cols, 1, "flow_id")?,
            bytes_delivered: field(line, &cols, 2, "bytes_delivered")?,
            throughput_gbps: field(line, &cols, 3, "throughput_gbps")?,
        });
    }
    Ok(out)
}

pub fn read_counters(text: &str) -> Result<Vec<(String, u64)>, CsvError> {
    let mut out = Vec::new();
    for (line, cols) in rows(text, COUNTERS_HEADER)? {
        if cols.len() != 2 {
            return Err(CsvError::Row { line, message: format!("expected 2 columns, found {}", cols.len()) });
        }
        out.push((cols[0].to_string(), field(line, &cols, 1, "value")?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn sample() -> Metrics {
        Metrics {
            sample_period_ns: 1000,
            samples: vec![
                FlowSample { time_ns: 1000, flow_id: 1, bytes_delivered: 125, throughput_gbps: 1.0 },
                FlowSample { time_ns: 1000, flow_id: 2, bytes_delivered: 0, throughput_gbps: 0.0 },
                FlowSample { time_ns: 2000, flow_id: 1, bytes_delivered: 250, throughput_gbps: 1.0 / 3.0 },
            ],
            counters: BTreeMap::from([("irqs".to_string(), 3), ("drops".to_string(), 0)]),
        }
    }

    #[test]
    fn metrics_format_is_fixed() {
        let mut buf = Vec::new();
        write_metrics(&mut buf, &sample()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "time_ns,flow_id,bytes_delivered,throughput_gbps\n1000,1,125,1.000000\n1000,2,0,0.000000\n2000,1,250,0.333333\n"
        );
        let back = read_metrics(&text).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[2].throughput_gbps, 0.333333);
    }

    #[test]
    fn counters_are_sorted_by_name() {
        let mut buf = Vec::new();
        write_counters(&mut buf, &sample()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "counter,value\ndrops,0\nirqs,3\n");
        assert_eq!(read_counters(&text).unwrap(), [("drops".to_string(), 0), ("irqs".to_string(), 3)]);
    }

    #[test]
    fn schema_mismatch_names_the_problem() {
        assert!(matches!(read_metrics("time,flow\n"), Err(CsvError::Header { .. })));
        let e = read_metrics("time_ns,flow_id,bytes_delivered,throughput_gbps\n1,2,3\n").unwrap_err();
        assert_eq!(e, CsvError::Row { line: 2, message: "expected 4 columns, found 3".into() });
        let e = read_counters("counter,value\nx,-1\n").unwrap_err();
        assert!(e.to_string().contains("invalid value"));
    }
}
