//! Human ratings table: `image_id,assessor_id,assessor_kind,rating`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AssessorId, AssessorKind, Rating, RatingMatrix};

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("ratings table references unknown image '{0}'")]
    UnknownImage(String),
    #[error("conflicting ratings for image '{image_id}' by '{assessor_id}': {first} vs {second}")]
    Conflict {
        image_id: String,
        assessor_id: String,
        first: Rating,
        second: Rating,
    },
    #[error("assessor '{0}' is declared with more than one kind")]
    KindConflict(String),
    #[error("assessor '{0}' already exists in the matrix")]
    ExistingAssessor(String),
    #[error("ratings table {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("ratings table {path} row {row}: {message}")]
    InvalidRow {
        path: PathBuf,
        row: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingRow {
    pub image_id: String,
    pub assessor_id: String,
    pub kind: AssessorKind,
    pub rating: Rating,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    image_id: String,
    assessor_id: String,
    assessor_kind: String,
    rating: String,
}

impl From<&RatingRow> for CsvRow {
    fn from(r: &RatingRow) -> Self {
        CsvRow {
            image_id: r.image_id.clone(),
            assessor_id: r.assessor_id.clone(),
            assessor_kind: r.kind.table_name().to_string(),
            rating: r.rating.to_string(),
        }
    }
}

pub fn load_ratings_csv(path: &Path) -> Result<Vec<RatingRow>, MergeError> {
    let csv_err = |e: csv::Error| MergeError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(csv_err)?;
        let invalid = |message: String| MergeError::InvalidRow {
            path: path.to_path_buf(),
            row: i + 1,
            message,
        };
        let kind = AssessorKind::parse_human(&row.assessor_kind)
            .ok_or_else(|| invalid(format!("unknown assessor_kind '{}'", row.assessor_kind)))?;
        let value: i64 = row
            .rating
            .parse()
            .map_err(|_| invalid(format!("rating '{}' is not an integer", row.rating)))?;
        let rating = Rating::new(value).map_err(|e| invalid(e.to_string()))?;
        if row.image_id.is_empty() || row.assessor_id.is_empty() {
            return Err(invalid("image_id and assessor_id must be non-empty".into()));
        }
        rows.push(RatingRow {
            image_id: row.image_id,
            assessor_id: row.assessor_id,
            kind,
            rating,
        });
    }
    Ok(rows)
}

fn write_rows<W: std::io::Write>(writer: &mut csv::Writer<W>, rows: &[RatingRow]) -> csv::Result<()> {
    for r in rows {
        writer.serialize(CsvRow::from(r))?;
    }
    writer.flush()?;
    Ok(())
}

/// Appends rows, writing the header first when the file is new or empty.
pub fn append_rating_rows(path: &Path, rows: &[RatingRow]) -> Result<(), MergeError> {
    let err = |message: String| MergeError::Csv {
        path: path.to_path_buf(),
        message,
    };
    let needs_header = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| err(e.to_string()))?;
    let mut writer = csv::WriterBuilder::new().has_headers(needs_header).from_writer(file);
    write_rows(&mut writer, rows).map_err(|e| err(e.to_string()))
}

/// Replaces the whole table atomically.
pub fn write_ratings_csv(path: &Path, rows: &[RatingRow]) -> Result<(), MergeError> {
    let err = |message: String| MergeError::Csv {
        path: path.to_path_buf(),
        message,
    };
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| err(e.to_string()))?;
    {
        let mut writer = csv::Writer::from_writer(tmp.as_file());
        write_rows(&mut writer, rows).map_err(|e| err(e.to_string()))?;
    }
    tmp.persist(path).map_err(|e| err(e.error.to_string()))?;
    Ok(())
}

/// Adds one column per human assessor in first-appearance order. Identical
/// duplicate rows collapse; differing duplicates are a conflict.
pub fn merge_human_ratings(matrix: &RatingMatrix, rows: &[RatingRow]) -> Result<RatingMatrix, MergeError> {
    let mut out = matrix.clone();
    let mut kinds: HashMap<&str, &AssessorKind> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    let mut cells: HashMap<(&str, &str), Rating> = HashMap::new();
    for row in rows {
        if out.subject_index(&row.image_id).is_none() {
            return Err(MergeError::UnknownImage(row.image_id.clone()));
        }
        match kinds.get(row.assessor_id.as_str()) {
            Some(k) if **k != row.kind => return Err(MergeError::KindConflict(row.assessor_id.clone())),
            Some(_) => {}
            None => {
                kinds.insert(&row.assessor_id, &row.kind);
                order.push(&row.assessor_id);
            }
        }
        let key = (row.image_id.as_str(), row.assessor_id.as_str());
        match cells.get(&key) {
            Some(&prev) if prev != row.rating => {
                return Err(MergeError::Conflict {
                    image_id: row.image_id.clone(),
                    assessor_id: row.assessor_id.clone(),
                    first: prev,
                    second: row.rating,
                })
            }
            _ => {
                cells.insert(key, row.rating);
            }
        }
    }
    for id in order {
        let col = out
            .add_assessor(AssessorId::new(id, kinds[id].clone()))
            .map_err(|_| MergeError::ExistingAssessor(id.to_string()))?;
        for (s, subject) in matrix.subjects().iter().enumerate() {
            out.set(s, col, cells.get(&(subject.as_str(), id)).copied());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(image: &str, who: &str, kind: AssessorKind, v: i64) -> RatingRow {
        RatingRow {
            image_id: image.into(),
            assessor_id: who.into(),
            kind,
            rating: Rating::new(v).unwrap(),
        }
    }

    fn subjects(n: usize) -> RatingMatrix {
        RatingMatrix::new((0..n).map(|i| format!("img{i}")).collect())
    }

    #[test]
    fn three_experts_over_82_subjects() {
        let mut rows = Vec::new();
        for e in 1..=3 {
            for i in 0..82 {
                rows.push(row(&format!("img{i}"), &format!("Expert-{e}"), AssessorKind::HumanExpert, (i % 10 + 1) as i64));
            }
        }
        let merged = merge_human_ratings(&subjects(82), &rows).unwrap();
        assert_eq!(merged.n_assessors(), 3);
        assert!(merged.is_complete());
        assert_eq!(merged.assessors()[1].id, "Expert-2");
    }

    #[test]
    fn duplicates_and_conflicts() {
        let dup = vec![
            row("img0", "a", AssessorKind::HumanNovice, 4),
            row("img0", "a", AssessorKind::HumanNovice, 4),
        ];
        let merged = merge_human_ratings(&subjects(2), &dup).unwrap();
        assert_eq!(merged.n_assessors(), 1);
        assert_eq!(merged.cell(0, 0).unwrap().value(), 4);
        assert_eq!(merged.cell(1, 0), None);

        let conflict = vec![
            row("img0", "a", AssessorKind::HumanNovice, 4),
            row("img0", "a", AssessorKind::HumanNovice, 5),
        ];
        assert!(matches!(
            merge_human_ratings(&subjects(2), &conflict),
            Err(MergeError::Conflict { .. })
        ));
        let unknown = vec![row("nope", "a", AssessorKind::HumanNovice, 4)];
        assert!(matches!(
            merge_human_ratings(&subjects(2), &unknown),
            Err(MergeError::UnknownImage(id)) if id == "nope"
        ));
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ratings.csv");
        let rows = vec![
            row("img0", "e1", AssessorKind::HumanExpert, 7),
            row("img1", "e1", AssessorKind::HumanExpert, 3),
        ];
        append_rating_rows(&path, &rows[..1]).unwrap();
        append_rating_rows(&path, &rows[1..]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("image_id,assessor_id,assessor_kind,rating\n"));
        assert_eq!(load_ratings_csv(&path).unwrap(), rows);

        write_ratings_csv(&path, &rows[1..]).unwrap();
        assert_eq!(load_ratings_csv(&path).unwrap(), rows[1..].to_vec());

        std::fs::write(&path, "image_id,assessor_id,assessor_kind,rating\nimg0,e1,expert,11\n").unwrap();
        assert!(matches!(load_ratings_csv(&path), Err(MergeError::InvalidRow { row: 1, .. })));
    }
}
