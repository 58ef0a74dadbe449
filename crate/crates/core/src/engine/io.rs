//! CSV serialization for scenario batches and loss histories.
//!
//! Scenario layout: one row per scenario, columns `t0001..tL`, with an
//! optional leading `label` column for conditional corpora. Lines starting
//! with `#` are treated as comments (run metadata such as the seed).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use super::{EngineError, ScenarioBatch};

/// Writes a batch; `comments` become leading `# ...` lines.
pub fn write_scenario_csv(batch: &ScenarioBatch, path: &Path, comments: &[String]) -> Result<(), EngineError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let cols = batch.seq_len();
    let mut header = Vec::with_capacity(cols + 1);
    if batch.labels.is_some() {
        header.push("label".to_string());
    }
    header.extend((1..=cols).map(|i| format!("t{i:04}")));
    writeln!(w, "{}", header.join(","))?;

    for i in 0..batch.len() {
        let mut fields = Vec::with_capacity(cols + 1);
        if let Some(labels) = &batch.labels {
            fields.push(labels[i].to_string());
        }
        fields.extend(batch.values.row(i).iter().map(|v| format!("{v}")));
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scenario_csv(path: &Path) -> Result<ScenarioBatch, EngineError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(EngineError::Format(format!("{}: empty header", path.display())));
    }
    let labeled = headers.get(0) == Some("label");
    let value_cols = headers.len() - usize::from(labeled);
    if value_cols == 0 {
        return Err(EngineError::Format(format!("{}: no value columns", path.display())));
    }

    let mut rows: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut n_rows = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(EngineError::Format(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                idx + 2,
                record.len(),
                headers.len()
            )));
        }
        let mut fields = record.iter();
        if labeled {
            let raw = fields.next().unwrap();
            let label: usize = raw.parse().map_err(|_| {
                EngineError::Format(format!("{}: row {}: bad label '{raw}'", path.display(), idx + 2))
            })?;
            labels.push(label);
        }
        for raw in fields {
            let v: f64 = raw.parse().map_err(|_| {
                EngineError::Format(format!("{}: row {}: bad value '{raw}'", path.display(), idx + 2))
            })?;
            rows.push(v);
        }
        n_rows += 1;
    }

    let values = Array2::from_shape_vec((n_rows, value_cols), rows)
        .map_err(|e| EngineError::Format(format!("{}: {e}", path.display())))?;
    ScenarioBatch::new(values, labeled.then_some(labels))
}

/// Writes the per-epoch loss history as `epoch,loss`.
pub fn write_loss_history(history: &[f64], path: &Path, comments: &[String]) -> Result<(), EngineError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "epoch,loss")?;
    for (i, loss) in history.iter().enumerate() {
        writeln!(w, "{},{loss}", i + 1)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_history(path: &Path) -> Result<Vec<f64>, EngineError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let loss: f64 = record
            .get(1)
            .ok_or_else(|| EngineError::Format("loss history row missing loss field".into()))?
            .parse()
            .map_err(|_| EngineError::Format("loss history row has non-numeric loss".into()))?;
        out.push(loss);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn scenario_round_trip_unlabeled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.csv");
        let batch = ScenarioBatch::new(array![[1.0, 2.5, -0.125], [0.0, 4.0, 9.0]], None).unwrap();
        write_scenario_csv(&batch, &path, &["seed=42".into()]).unwrap();
        let back = read_scenario_csv(&path).unwrap();
        assert_eq!(back.values, batch.values);
        assert!(back.labels.is_none());
    }

    #[test]
    fn scenario_round_trip_labeled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.csv");
        let batch = ScenarioBatch::new(array![[1.0, 2.0], [3.0, 4.0]], Some(vec![0, 1])).unwrap();
        write_scenario_csv(&batch, &path, &[]).unwrap();
        let back = read_scenario_csv(&path).unwrap();
        assert_eq!(back.values, batch.values);
        assert_eq!(back.labels, Some(vec![0, 1]));
    }

    #[test]
    fn loss_history_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let history = vec![3.5, 2.25, 1.0625];
        write_loss_history(&history, &path, &["seed=1".into()]).unwrap();
        assert_eq!(read_loss_history(&path).unwrap(), history);
    }

    #[test]
    fn rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t0001,t0002\n1.0,2.0\n3.0\n").unwrap();
        assert!(read_scenario_csv(&path).is_err());
    }
}
