//! Trajectory CSV and JSON files, data-only plot series and atomic writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::training::{StepRecord, Trajectory, TrajectoryMeta};

pub const TRAJECTORY_HEADER: [&str; 9] = ["t", "epsilon", "K", "mu", "lambda", "zeta", "C", "loss", "mu_fresh"];

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    atomic_write(path, s.as_bytes())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV text of the records; absent optional values are empty fields.
pub fn trajectory_csv(steps: &[StepRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRAJECTORY_HEADER)?;
    for s in steps {
        w.write_record([
            s.t.to_string(),
            s.epsilon.to_string(),
            s.k.to_string(),
            opt(s.mu),
            opt(s.lambda),
            opt(s.zeta),
            opt(s.c),
            s.loss.to_string(),
            s.mu_fresh.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `<stem>.csv` and the `<stem>.json` metadata sidecar.
pub fn write_trajectory(dir: &Path, stem: &str, traj: &Trajectory) -> Result<()> {
    atomic_write(&dir.join(format!("{stem}.csv")), trajectory_csv(&traj.steps)?.as_bytes())?;
    #[derive(Serialize)]
    struct Sidecar<'a> {
        meta: &'a TrajectoryMeta,
        theta_final: &'a [f64],
    }
    write_json(
        &dir.join(format!("{stem}.json")),
        &Sidecar {
            meta: &traj.meta,
            theta_final: &traj.theta_final,
        },
    )
}

/// Parses trajectory CSV text. Errors carry the 1-based line and field.
pub fn parse_trajectory_csv(text: &str) -> Result<Vec<StepRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = rdr.records();
    let header = match rows.next() {
        None => return Err(Error::parse(1, 1, "empty trajectory file")),
        Some(r) => r.map_err(|e| csv_parse_error(&e))?,
    };
    for (i, want) in TRAJECTORY_HEADER.iter().enumerate() {
        match header.get(i) {
            Some(h) if h.trim() == *want => {}
            got => {
                return Err(Error::parse(1, i + 1, format!("expected header {want:?}, got {got:?}")));
            }
        }
    }
    if header.len() != TRAJECTORY_HEADER.len() {
        return Err(Error::parse(1, TRAJECTORY_HEADER.len() + 1, "unexpected extra header field"));
    }
    let mut out: Vec<StepRecord> = Vec::new();
    for row in rows {
        let row = row.map_err(|e| csv_parse_error(&e))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != TRAJECTORY_HEADER.len() {
            return Err(Error::parse(
                line,
                row.len().min(TRAJECTORY_HEADER.len()) + 1,
                format!("expected {} fields, got {}", TRAJECTORY_HEADER.len(), row.len()),
            ));
        }
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let real = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|_| Error::parse(line, i + 1, format!("expected real, got {:?}", field(i))))
        };
        let opt_real = |i: usize| -> Result<Option<f64>> {
            if field(i).is_empty() {
                Ok(None)
            } else {
                real(i).map(Some)
            }
        };
        let t: usize = field(0)
            .parse()
            .map_err(|_| Error::parse(line, 1, format!("expected step index, got {:?}", field(0))))?;
        if let Some(prev) = out.last() {
            if t <= prev.t {
                return Err(Error::parse(line, 1, format!("step {t} not after {}", prev.t)));
            }
        }
        let mu_fresh = match field(8) {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(Error::parse(line, 9, format!("expected boolean, got {other:?}"))),
        };
        out.push(StepRecord {
            t,
            epsilon: real(1)?,
            k: real(2)?,
            mu: opt_real(3)?,
            lambda: opt_real(4)?,
            zeta: opt_real(5)?,
            c: opt_real(6)?,
            loss: real(7)?,
            mu_fresh,
        });
    }
    Ok(out)
}

fn csv_parse_error(e: &csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(line, 1, e.to_string())
}

/// Reads `<stem>.csv` and, when present, its `<stem>.json` sidecar.
pub fn read_trajectory(csv_path: &Path) -> Result<(Vec<StepRecord>, Option<TrajectoryMeta>)> {
    let steps = parse_trajectory_csv(&fs::read_to_string(csv_path)?)?;
    let side = csv_path.with_extension("json");
    let meta = if side.exists() {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&side)?)?;
        Some(serde_json::from_value(v["meta"].clone())?)
    } else {
        None
    };
    Ok((steps, meta))
}

/// Two-column numeric CSV with the given header.
pub fn series_csv(header: (&str, &str), rows: impl IntoIterator<Item = (f64, f64)>) -> String {
    let mut s = format!("{},{}\n", header.0, header.1);
    for (a, b) in rows {
        s.push_str(&format!("{a},{b}\n"));
    }
    s
}

pub fn write_series(path: &Path, header: (&str, &str), rows: impl IntoIterator<Item = (f64, f64)>) -> Result<()> {
    atomic_write(path, series_csv(header, rows).as_bytes())
}

/// `index,eigenvalue` rows.
pub fn write_spectrum(path: &Path, eigenvalues: &[f64]) -> Result<()> {
    let mut s = String::from("index,eigenvalue\n");
    for (i, v) in eigenvalues.iter().enumerate() {
        s.push_str(&format!("{i},{v}\n"));
    }
    atomic_write(path, s.as_bytes())
}

/// `O0,gap,rank_epsilon` rows.
pub fn write_gap_sweep(path: &Path, points: &[crate::spectral::GapPoint]) -> Result<()> {
    let mut s = String::from("O0,gap,rank_epsilon\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.o0, p.gap, p.rank_epsilon));
    }
    atomic_write(path, s.as_bytes())
}

/// `tau,A` rows.
pub fn write_correlation(path: &Path, report: &crate::stats::CorrelationReport) -> Result<()> {
    let mut s = String::from("tau,A\n");
    for (t, a) in report.tau_grid.iter().zip(&report.a_values) {
        s.push_str(&format!("{t},{a}\n"));
    }
    atomic_write(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: usize, mu: Option<f64>) -> StepRecord {
        StepRecord {
            t,
            epsilon: 0.1 * t as f64 + 1.0 / 3.0,
            k: 2.0f64.sqrt(),
            mu,
            lambda: mu.map(|m| m / 2.0f64.sqrt()),
            zeta: None,
            c: mu.map(|_| -1e-300),
            loss: 1e17,
            mu_fresh: mu.is_some(),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let steps = vec![rec(0, Some(0.125)), rec(3, None), rec(7, Some(-2.5e-9))];
        let text = trajectory_csv(&steps).unwrap();
        assert!(text.starts_with("t,epsilon,K,mu,lambda,zeta,C,loss,mu_fresh\n"));
        assert_eq!(parse_trajectory_csv(&text).unwrap(), steps);
    }

    #[test]
    fn csv_errors_have_positions() {
        let bad = "t,epsilon,K,mu,lambda,zeta,C,loss,mu_fresh\n0,1,2,,,,,3,true\n1,x,2,,,,,3,true\n";
        match parse_trajectory_csv(bad) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 2)),
            other => panic!("{other:?}"),
        }
        assert!(parse_trajectory_csv("").is_err());
        assert!(parse_trajectory_csv("t,eps\n").is_err());
        let dup = "t,epsilon,K,mu,lambda,zeta,C,loss,mu_fresh\n1,1,2,,,,,3,true\n1,1,2,,,,,3,true\n";
        assert!(parse_trajectory_csv(dup).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
