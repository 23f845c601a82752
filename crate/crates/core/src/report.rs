//! CSV output for results, traces and solved-fraction curves.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::driver::{SolverReport, TraceRecord};

pub const RESULTS_HEADER: &str = "name,n,m,initial_gap,num_cuts,final_gap,lower_bound,upper_bound,time_seconds,status";
pub const TRACE_HEADER: &str = "iter,upper_bound,region_bound,removed_bound,gap,cut_time,bound_time,search_time";
pub const CURVE_HEADER: &str = "time_seconds,fraction_solved";

/// Placeholder written instead of wall-clock values when timing is masked.
pub const MASKED: &str = "-";

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:e}")
    }
}

fn secs(v: f64, mask: bool) -> String {
    if mask {
        MASKED.into()
    } else {
        format!("{v:.3}")
    }
}

fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn results_row(r: &SolverReport, mask_timing: bool) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        field(&r.name),
        r.n,
        r.m,
        num(r.initial_gap),
        r.num_cuts,
        num(r.final_gap),
        num(r.lower_bound),
        num(r.upper_bound),
        secs(r.elapsed.as_secs_f64(), mask_timing),
        r.status
    )
}

/// Row for an instance that never reached the solver.
pub fn failure_row(name: &str, status: &str) -> String {
    format!("{},,,,,,,,,{}", field(name), field(status))
}

pub fn results_csv<'a>(rows: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    out
}

pub fn trace_csv(trace: &[TraceRecord], mask_timing: bool) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for t in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            t.iter,
            num(t.upper_bound),
            num(t.region_bound),
            num(t.removed_bound),
            num(t.gap),
            secs(t.cut_time, mask_timing),
            secs(t.bound_time, mask_timing),
            secs(t.search_time, mask_timing)
        ));
    }
    out
}

/// Fraction of all instances solved by each completion time.
///
/// `runs` holds `(time_seconds, solved)` per instance; one point is emitted per
/// instance in completion order.
pub fn solved_curve(runs: &[(f64, bool)]) -> Vec<(f64, f64)> {
    let total = runs.len();
    let mut sorted = runs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut solved = 0;
    sorted
        .into_iter()
        .map(|(t, ok)| {
            solved += usize::from(ok);
            (t, solved as f64 / total as f64)
        })
        .collect()
}

pub fn curve_csv(points: &[(f64, f64)], mask_timing: bool) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for (t, f) in points {
        out.push_str(&format!("{},{}\n", secs(*t, mask_timing), num(*f)));
    }
    out
}

/// Writes through a temporary file in the same directory and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::SolveStatus;
    use std::time::Duration;

    fn report() -> SolverReport {
        SolverReport {
            name: "tiny".into(),
            n: 2,
            m: 3,
            upper_bound: -0.25,
            lower_bound: -0.250001,
            initial_gap: 0.5,
            final_gap: 4e-6,
            num_cuts: 1,
            status: SolveStatus::Solved,
            best_x: None,
            cuts: vec![],
            trace: vec![],
            elapsed: Duration::from_millis(1234),
        }
    }

    #[test]
    fn results_row_layout() {
        let row = results_row(&report(), false);
        assert_eq!(row, "tiny,2,3,5e-1,1,4e-6,-2.50001e-1,-2.5e-1,1.234,solved");
        assert_eq!(row.split(',').count(), RESULTS_HEADER.split(',').count());
        assert!(results_row(&report(), true).contains(",-,solved"));
    }

    #[test]
    fn failure_rows_keep_column_count() {
        assert_eq!(failure_row("a,b", "parse_error").split(',').count(), 11);
        assert_eq!(failure_row("ab", "parse_error").split(',').count(), 10);
    }

    #[test]
    fn curve_fractions() {
        let pts = solved_curve(&[(3.0, true), (1.0, false)]);
        assert_eq!(pts, vec![(1.0, 0.0), (3.0, 0.5)]);
        assert!(solved_curve(&[]).is_empty());
    }

    #[test]
    fn non_finite_numbers() {
        assert_eq!(num(f64::INFINITY), "inf");
        assert_eq!(num(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = std::env::temp_dir().join(format!("dcqp-report-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("out.csv");
        write_atomic(&p, "a\n").unwrap();
        write_atomic(&p, "b\n").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "b\n");
        assert_eq!(fs::read_dir(&dir).unwrap().count(), 1);
        fs::remove_dir_all(&dir).unwrap();
    }
}
