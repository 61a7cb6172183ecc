//! CSV tables (header row, `time` first, 17 significant digits) and the JSON
//! report envelope.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::embedding::ReconstructedStates;
use crate::error::{Error, Result};
use crate::matrix::RowMatrix;

pub const TOOL_VERSION: &str = concat!("delay-audit ", env!("CARGO_PKG_VERSION"));

/// A numeric table with a time column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub time: Vec<f64>,
    pub values: RowMatrix,
}

/// Shortest text that still round-trips: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_table<W: Write>(out: W, table: &Table) -> Result<()> {
    if table.time.len() != table.values.rows() || table.columns.len() != table.values.width() {
        return Err(Error::DimensionMismatch {
            expected: table.values.rows(),
            got: table.time.len(),
        });
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend(table.columns.iter().cloned());
    w.write_record(&header)?;
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for (t, row) in table.time.iter().zip(table.values.iter_rows()) {
        rec.clear();
        rec.push(fmt_f64(*t));
        rec.extend(row.iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a numeric CSV. A leading `time` column is taken as the clock;
/// without one the row index is used.
pub fn read_table<R: Read>(input: R) -> Result<Table> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers: Vec<String> = r.headers()?.iter().map(|s| s.to_string()).collect();
    if headers.is_empty() {
        return Err(Error::Malformed("CSV has no columns".into()));
    }
    let has_time = headers[0].eq_ignore_ascii_case("time") || headers[0].eq_ignore_ascii_case("t");
    let columns: Vec<String> = if has_time {
        headers[1..].to_vec()
    } else {
        headers.clone()
    };
    if columns.is_empty() {
        return Err(Error::Malformed("CSV has no value columns".into()));
    }
    let mut time = Vec::new();
    let mut values = RowMatrix::new(columns.len());
    let mut row = Vec::with_capacity(columns.len());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Malformed(format!(
                "row {} has {} fields, header has {}",
                line + 1,
                rec.len(),
                headers.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Malformed(format!("row {}: '{s}' is not a number", line + 1)))
        };
        row.clear();
        let mut fields = rec.iter();
        if has_time {
            time.push(parse(fields.next().unwrap())?);
        } else {
            time.push(line as f64);
        }
        for f in fields {
            row.push(parse(f)?);
        }
        values.push_row(&row)?;
    }
    if values.is_empty() {
        return Err(Error::InsufficientData("CSV has no data rows".into()));
    }
    Ok(Table { columns, time, values })
}

pub fn trajectory_table(traj: &Trajectory, names: &[String]) -> Table {
    Table {
        columns: names.to_vec(),
        time: (0..traj.len()).map(|i| traj.time(i)).collect(),
        values: traj.states.clone(),
    }
}

/// Default latent coordinate names `z1 .. zd`.
pub fn coordinate_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("z{i}")).collect()
}

pub fn trajectory_from_table(t: &Table) -> Result<Trajectory> {
    let dt = if t.time.len() > 1 { t.time[1] - t.time[0] } else { 1.0 };
    if !(dt > 0.0) {
        return Err(Error::Malformed("time column must increase".into()));
    }
    Trajectory::new(dt, t.time[0], t.values.clone())
}

/// Reconstruction rows stamped with the time of the latent sample they represent.
pub fn recon_table(r: &ReconstructedStates, t0: f64) -> Table {
    Table {
        columns: (1..=r.dim()).map(|i| format!("x{i}")).collect(),
        time: (0..r.len()).map(|i| t0 + r.latent_index(i) as f64 * r.dt).collect(),
        values: r.states.clone(),
    }
}

/// Uniform JSON envelope. Field order is fixed by declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<C, R, P> {
    pub tool_version: String,
    pub config: C,
    pub results: R,
    #[serde(skip_serializing_if = "Option::is_none", default = "Option::default")]
    pub per_query: Option<P>,
    pub warnings: Vec<String>,
}

impl<C: Serialize, R: Serialize, P: Serialize> Report<C, R, P> {
    pub fn new(config: C, results: R, per_query: Option<P>, warnings: Vec<String>) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            config,
            results,
            per_query,
            warnings,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_time_first() {
        let t = Table {
            columns: vec!["z1".into()],
            time: vec![0.0, 0.5],
            values: RowMatrix::from_column(&[1.0, 2.0]),
        };
        let mut buf = Vec::new();
        write_table(&mut buf, &t).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("time,z1\n"));
        assert_eq!(s.lines().count(), 3);
    }

    #[test]
    fn reads_without_time_column() {
        let t = read_table("cases\n3\n0\n7\n".as_bytes()).unwrap();
        assert_eq!(t.time, vec![0.0, 1.0, 2.0]);
        assert_eq!(t.values.column(0), vec![3.0, 0.0, 7.0]);
        assert!(read_table("a,b\n1,x\n".as_bytes()).is_err());
        assert!(read_table("a,b\n1\n".as_bytes()).is_err());
    }

    #[test]
    fn report_key_order() {
        let r: Report<u8, u8, u8> = Report::new(1, 2, None, vec![]);
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(
            s,
            format!("{{\"tool_version\":\"{TOOL_VERSION}\",\"config\":1,\"results\":2,\"warnings\":[]}}")
        );
    }

    proptest! {
        #[test]
        fn csv_round_trip(vals in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 3..60)) {
            let n = vals.len() / 3;
            let values = RowMatrix::from_flat(vals[..n * 3].to_vec(), 3).unwrap();
            let t = Table {
                columns: vec!["a".into(), "b".into(), "c".into()],
                time: (0..n).map(|i| i as f64 * 0.1).collect(),
                values,
            };
            let mut buf = Vec::new();
            write_table(&mut buf, &t).unwrap();
            let back = read_table(buf.as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
