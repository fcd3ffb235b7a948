//! CSV input for panel datasets and weight matrices.
//!
//! The panel format has a header `unit,time,y,x1,...,xp`; rows may arrive in
//! any order and are sorted unit-major. Weight matrices are headerless
//! numeric grids.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::PanelDataset;

fn parse_cell<T: std::str::FromStr>(raw: &str, line: usize, column: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| {
        Error::InvalidArgument(format!(
            "line {line}: cannot parse {column} value {raw:?}"
        ))
    })
}

/// Loads a balanced panel from CSV. Every unit must be observed at the same
/// set of time ids; violations are reported with the offending unit, and
/// duplicate (unit, time) pairs are rejected.
pub fn load_panel_csv(path: &Path) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;

    let headers = reader.headers()?.clone();
    if headers.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "panel CSV needs columns unit,time,y,x1,... but the header has \
             {} fields",
            headers.len()
        )));
    }
    for (idx, expected) in ["unit", "time", "y"].iter().enumerate() {
        let got = headers.get(idx).unwrap_or("");
        if got != *expected {
            return Err(Error::InvalidArgument(format!(
                "panel CSV header field {} must be {expected:?}, got {got:?}",
                idx + 1
            )));
        }
    }
    let p = headers.len() - 3;
    for k in 0..p {
        let expected = format!("x{}", k + 1);
        let got = headers.get(3 + k).unwrap_or("");
        if got != expected {
            return Err(Error::InvalidArgument(format!(
                "panel CSV header field {} must be {expected:?}, got {got:?}",
                4 + k
            )));
        }
    }

    // unit -> time -> (y, x row); BTreeMap keeps units and times sorted.
    let mut units: BTreeMap<i64, BTreeMap<i64, (f64, Vec<f64>)>> = BTreeMap::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = row_idx + 2;
        if record.len() != headers.len() {
            return Err(Error::InvalidArgument(format!(
                "line {line}: expected {} fields, got {}",
                headers.len(),
                record.len()
            )));
        }
        let unit: i64 = parse_cell(record.get(0).unwrap(), line, "unit")?;
        let time: i64 = parse_cell(record.get(1).unwrap(), line, "time")?;
        let y: f64 = parse_cell(record.get(2).unwrap(), line, "y")?;
        let mut xs = Vec::with_capacity(p);
        for k in 0..p {
            let label = format!("x{}", k + 1);
            xs.push(parse_cell(record.get(3 + k).unwrap(), line, &label)?);
        }
        if units
            .entry(unit)
            .or_default()
            .insert(time, (y, xs))
            .is_some()
        {
            return Err(Error::UnbalancedPanel(format!(
                "duplicate observation for unit {unit} at time {time}"
            )));
        }
    }

    if units.is_empty() {
        return Err(Error::DegeneratePanel("panel CSV has no data rows".into()));
    }

    let unit_ids: Vec<i64> = units.keys().copied().collect();
    let reference_times: Vec<i64> = units[&unit_ids[0]].keys().copied().collect();
    for (&unit, rows) in &units {
        if rows.len() != reference_times.len() {
            return Err(Error::UnbalancedPanel(format!(
                "unit {unit} has {} periods where unit {} has {}",
                rows.len(),
                unit_ids[0],
                reference_times.len()
            )));
        }
        for (got, expected) in rows.keys().zip(&reference_times) {
            if got != expected {
                return Err(Error::UnbalancedPanel(format!(
                    "unit {unit} is observed at time {got} where unit {} has \
                     time {expected}",
                    unit_ids[0]
                )));
            }
        }
    }

    let n = unit_ids.len();
    let t = reference_times.len();
    let mut x = DMatrix::zeros(n * t, p);
    let mut y = DVector::zeros(n * t);
    for (i, unit) in unit_ids.iter().enumerate() {
        for (s, (_, (yv, xs))) in units[unit].iter().enumerate() {
            let row = i * t + s;
            y[row] = *yv;
            for k in 0..p {
                x[(row, k)] = xs[k];
            }
        }
    }
    PanelDataset::with_labels(n, t, x, y, unit_ids, reference_times)
}

/// Loads a headerless numeric CSV as a weight matrix candidate. The row count
/// must match the panel layout (`expected_rows`); the column count is free.
pub fn load_weight_csv(path: &Path, expected_rows: usize) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = row_idx + 1;
        let mut parsed = Vec::with_capacity(record.len());
        for (k, raw) in record.iter().enumerate() {
            let label = format!("column {}", k + 1);
            parsed.push(parse_cell::<f64>(raw, line, &label)?);
        }
        if let Some(first) = rows.first() {
            if parsed.len() != first.len() {
                return Err(Error::InvalidArgument(format!(
                    "line {line}: expected {} fields, got {}",
                    first.len(),
                    parsed.len()
                )));
            }
        }
        rows.push(parsed);
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument(
            "weight CSV has no data rows".into(),
        ));
    }
    if rows.len() != expected_rows {
        return Err(Error::DimensionMismatch(format!(
            "weight CSV has {} rows but the panel has {expected_rows} \
             observations",
            rows.len()
        )));
    }
    let m = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), m, |r, c| rows[r][c]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(content.as_bytes()).unwrap();
        file.flush().unwrap();
        file
    }

    #[test]
    fn loads_and_sorts_a_small_panel() {
        // Rows deliberately shuffled; loading restores unit-major order.
        let file = write_temp(
            "unit,time,y,x1,x2\n\
             2,1,4.0,1.0,0.5\n\
             1,2,2.0,2.0,1.5\n\
             1,1,1.0,1.0,1.0\n\
             2,2,8.0,2.0,2.5\n",
        );
        let data = load_panel_csv(file.path()).unwrap();
        assert_eq!((data.n(), data.t(), data.p()), (2, 2, 2));
        assert_eq!(data.unit_ids(), &[1, 2]);
        assert_eq!(data.time_ids(), &[1, 2]);
        assert_eq!(data.y()[0], 1.0);
        assert_eq!(data.y()[2], 4.0);
        assert_eq!(data.x()[(1, 1)], 1.5);
    }

    #[test]
    fn rejects_missing_period_naming_the_unit() {
        let file = write_temp(
            "unit,time,y,x1\n\
             1,1,1.0,1.0\n\
             1,2,2.0,2.0\n\
             2,1,3.0,3.0\n",
        );
        match load_panel_csv(file.path()) {
            Err(Error::UnbalancedPanel(msg)) => {
                assert!(msg.contains("unit 2"), "message: {msg}")
            }
            other => panic!("expected unbalanced panel, got {other:?}"),
        }
    }

    #[test]
    fn rejects_mismatched_time_ids() {
        let file = write_temp(
            "unit,time,y,x1\n\
             1,1,1.0,1.0\n\
             1,2,2.0,2.0\n\
             2,1,3.0,3.0\n\
             2,3,4.0,4.0\n",
        );
        match load_panel_csv(file.path()) {
            Err(Error::UnbalancedPanel(msg)) => {
                assert!(msg.contains("unit 2") && msg.contains("time 3"), "message: {msg}")
            }
            other => panic!("expected unbalanced panel, got {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_observation() {
        let file = write_temp(
            "unit,time,y,x1\n\
             1,1,1.0,1.0\n\
             1,1,2.0,2.0\n\
             1,2,3.0,3.0\n",
        );
        match load_panel_csv(file.path()) {
            Err(Error::UnbalancedPanel(msg)) => {
                assert!(msg.contains("duplicate") && msg.contains("unit 1"), "message: {msg}")
            }
            other => panic!("expected duplicate rejection, got {other:?}"),
        }
    }

    #[test]
    fn rejects_single_period_panel() {
        let file = write_temp(
            "unit,time,y,x1\n\
             1,1,1.0,1.0\n\
             2,1,2.0,2.0\n",
        );
        assert!(matches!(
            load_panel_csv(file.path()),
            Err(Error::DegeneratePanel(_))
        ));
    }

    #[test]
    fn rejects_wrong_header() {
        let file = write_temp("id,time,y,x1\n1,1,1.0,1.0\n1,2,2.0,2.0\n");
        match load_panel_csv(file.path()) {
            Err(Error::InvalidArgument(msg)) => {
                assert!(msg.contains("unit"), "message: {msg}")
            }
            other => panic!("expected header complaint, got {other:?}"),
        }
        let file = write_temp("unit,time,y,x2\n1,1,1.0,1.0\n1,2,2.0,2.0\n");
        assert!(matches!(
            load_panel_csv(file.path()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn rejects_unparseable_numbers_with_line_numbers() {
        let file = write_temp("unit,time,y,x1\n1,1,1.0,1.0\n1,2,oops,2.0\n");
        match load_panel_csv(file.path()) {
            Err(Error::InvalidArgument(msg)) => {
                assert!(msg.contains("line 3") && msg.contains("oops"), "message: {msg}")
            }
            other => panic!("expected parse failure, got {other:?}"),
        }
    }

    #[test]
    fn loads_headerless_weight_grid() {
        let file = write_temp("1.0,0.0\n0.0,1.0\n0.5,0.5\n-0.5,0.5\n");
        let d = load_weight_csv(file.path(), 4).unwrap();
        assert_eq!((d.nrows(), d.ncols()), (4, 2));
        assert_eq!(d[(3, 0)], -0.5);
    }

    #[test]
    fn weight_grid_row_count_must_match_panel() {
        let file = write_temp("1.0\n0.0\n");
        assert!(matches!(
            load_weight_csv(file.path(), 4),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn weight_grid_rejects_ragged_rows() {
        let file = write_temp("1.0,2.0\n3.0\n");
        assert!(matches!(
            load_weight_csv(file.path(), 2),
            Err(Error::InvalidArgument(_))
        ));
    }
}
