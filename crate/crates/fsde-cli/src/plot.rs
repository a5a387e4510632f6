//! Merge result CSVs from any mix of experiments into one long-format table
//! `experiment,series,x,y,se` ready for a plotting tool. Files are recognized
//! by their header row, not their name; the experiment label comes from the
//! `# kind:` comment the runner writes, falling back to the parent directory.

use crate::failure::{Failure, Result};
use std::fs;
use std::path::{Path, PathBuf};

pub fn emit(paths: &[PathBuf]) -> Result<String> {
    let mut out = String::from("experiment,series,x,y,se\n");
    for path in paths {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        append_file(&mut out, path, &text)?;
    }
    Ok(out)
}

fn append_file(out: &mut String, path: &Path, text: &str) -> Result<()> {
    let mut kind: Option<String> = None;
    let mut header: Option<&str> = None;
    let mut rows: Vec<Vec<&str>> = Vec::new();
    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("kind:") {
                kind = Some(v.trim().to_string());
            }
            continue;
        }
        match header {
            None => header = Some(line),
            Some(_) => rows.push(line.split(',').collect()),
        }
    }
    let header = header
        .ok_or_else(|| Failure::Schema(format!("{}: no header row", path.display())))?;
    let experiment = kind.unwrap_or_else(|| fallback_label(path));
    let columns: Vec<&str> = header.split(',').collect();
    let mut push = |series: &str, x: &str, y: &str, se: &str| -> Result<()> {
        for (label, cell) in [("x", x), ("y", y), ("se", se)] {
            if !(label == "se" && cell.is_empty()) && cell.parse::<f64>().is_err() {
                return Err(Failure::Schema(format!(
                    "{}: {label} value \"{cell}\" is not numeric",
                    path.display()
                )));
            }
        }
        out.push_str(&format!("{experiment},{series},{x},{y},{se}\n"));
        Ok(())
    };
    match columns.as_slice() {
        ["t", "distance", "se"] => {
            for r in checked(&rows, 3, path)? {
                push("distance", r[0], r[1], r[2])?;
            }
        }
        ["epsilon", "median_sup", "q25", "q75", "median_holder", "n_effective"] => {
            for r in checked(&rows, 6, path)? {
                push("median_sup", r[0], r[1], "")?;
                push("median_holder", r[0], r[4], "")?;
            }
        }
        ["t", "bound", "bound_se", "histogram", "histogram_se", "frac_uncoupled", "mean_cost", "delta"] => {
            for r in checked(&rows, 8, path)? {
                push("bound", r[0], r[1], r[2])?;
                push("histogram", r[0], r[3], r[4])?;
            }
        }
        ["hurst", "statistic", "lag", "empirical", "expected", "se", "z"] => {
            for r in checked(&rows, 7, path)? {
                let series = format!("{} h={}", r[1], r[0]);
                push(&series, r[2], r[3], r[5])?;
                push(&format!("{series} expected"), r[2], r[4], "")?;
            }
        }
        ["x", "f_bar", "f_se", "g_bar", "g_se"] => {
            for r in checked(&rows, 5, path)? {
                push("f_bar", r[0], r[1], r[2])?;
                push("g_bar", r[0], r[3], r[4])?;
            }
        }
        ["run", "occupation"] => {
            for r in checked(&rows, 2, path)? {
                push("occupation", r[0], r[1], "")?;
            }
        }
        _ => {
            return Err(Failure::Schema(format!(
                "{}: unrecognized result header \"{header}\"",
                path.display()
            )))
        }
    }
    Ok(())
}

fn checked<'a>(rows: &'a [Vec<&'a str>], width: usize, path: &Path) -> Result<&'a [Vec<&'a str>]> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Failure::Schema(format!(
                "{}: row {} has {} fields, expected {width}",
                path.display(),
                i + 1,
                r.len()
            )));
        }
    }
    Ok(rows)
}

fn fallback_label(path: &Path) -> String {
    path.parent()
        .and_then(|d| d.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "results".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn mixed_result_files_merge_into_one_tidy_table() {
        let dir = tempfile::tempdir().unwrap();
        let decay = write(
            dir.path(),
            "decay.csv",
            "# kind: wasserstein-decay\n# n_paths: 8\nt,distance,se\n0.5,1.2,0.1\n1,0.6,0.05\n",
        );
        let avg = write(
            dir.path(),
            "report.csv",
            "# kind: averaging\n# n_paths: 4, alpha: 0.55\nepsilon,median_sup,q25,q75,median_holder,n_effective\n0.1,0.3,0.2,0.4,0.5,4\n",
        );
        let csv = emit(&[decay, avg]).expect("both files are recognized");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "experiment,series,x,y,se");
        assert_eq!(lines[1], "wasserstein-decay,distance,0.5,1.2,0.1");
        assert!(
            lines.contains(&"averaging,median_sup,0.1,0.3,"),
            "averaging rows keep an empty se cell: {csv}"
        );
        assert!(lines.contains(&"averaging,median_holder,0.1,0.5,"));
        assert_eq!(lines.len(), 1 + 2 + 2, "two decay rows and two series from one averaging row");
    }

    #[test]
    fn a_non_numeric_cell_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "decay.csv", "t,distance,se\n0.5,oops,0.1\n");
        let err = emit(&[p]).unwrap_err();
        assert_eq!(err.exit_code(), 2, "corrupt results must map to the schema exit code");
    }

    #[test]
    fn an_unknown_header_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "other.csv", "a,b\n1,2\n");
        let err = emit(&[p]).unwrap_err();
        assert!(err.to_string().contains("other.csv"), "error must name the file: {err}");
    }

    #[test]
    fn the_experiment_label_falls_back_to_the_parent_directory() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("my-run");
        fs::create_dir(&sub).unwrap();
        let p = write(&sub, "decay.csv", "t,distance,se\n1,0.5,0.01\n");
        let csv = emit(&[p]).unwrap();
        assert!(csv.contains("my-run,distance,1,0.5,0.01"), "got: {csv}");
    }
}
