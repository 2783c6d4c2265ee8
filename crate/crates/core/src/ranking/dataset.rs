use std::path::{Path, PathBuf};

use super::ScoreTable;
use crate::corpus::{Manifest, StyleTag};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub path: PathBuf,
    pub score: f64,
}

/// Union over the three styles of `(drawing path, normalized score)`. A style
/// with no scored drawings is left out with a warning.
pub fn build_metric_dataset(table: &ScoreTable, manifest: &Manifest) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for style in StyleTag::TAGGED {
        let before = rows.len();
        for (id, e) in table.entries().filter(|(_, e)| e.style == style) {
            let Some(score) = e.normalized else {
                if e.n_appearances > 0 {
                    return Err(Error::Validation(format!(
                        "drawing {id} is scored but not normalized"
                    )));
                }
                continue;
            };
            match manifest.get(id) {
                Some(r) => rows.push(MetricRow {
                    path: r.path.clone(),
                    score,
                }),
                None => missing.push(id.to_string()),
            }
        }
        if rows.len() == before {
            log::warn!("{style} has no scored drawings; excluded from the metric dataset");
        }
    }
    if !missing.is_empty() {
        return Err(Error::UnknownDrawing(missing));
    }
    Ok(rows)
}

/// Two tab-separated columns, path then score.
pub fn write_metric_dataset(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&format!("{}\t{}\n", r.path.display(), r.score));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a dataset written by [`write_metric_dataset`]; relative paths
/// resolve against the file's directory.
pub fn read_metric_dataset(path: &Path) -> Result<Vec<MetricRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: m.to_string(),
        };
        let (p, s) = line.rsplit_once('\t').ok_or_else(|| bad("expected `path<TAB>score`"))?;
        let score: f64 = s.trim().parse().map_err(|_| bad("score is not a number"))?;
        if !(0.1..=1.0).contains(&score) {
            return Err(bad("score outside [0.1, 1]"));
        }
        let p = PathBuf::from(p);
        rows.push(MetricRow {
            path: if p.is_absolute() { p } else { base.join(p) },
            score,
        });
    }
    Ok(rows)
}
