//! Rating standard, rating values, image records, assessors and the rating matrix.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::gsv::GsvQuery;

/// Version tag of the embedded rubric text.
pub const RUBRIC_VERSION: &str = "psci-asphalt-1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("rating {0} is out of range 1..=10")]
    OutOfRange(i64),
    #[error("no subject is rated by every selected assessor")]
    EmptyResult,
    #[error("unknown assessor '{0}'")]
    UnknownAssessor(String),
    #[error("duplicate assessor '{0}'")]
    DuplicateAssessor(String),
    #[error("unknown subject '{0}'")]
    UnknownSubject(String),
}

/// An integer PSCI rating in `1..=10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Rating(u8);

impl Rating {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 10;

    pub fn new(raw: i64) -> Result<Self, DomainError> {
        validate_rating(raw)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0)
    }

    /// Clamps an arbitrary integer into the valid range.
    pub fn clamped(raw: i64) -> Self {
        Rating(raw.clamp(i64::from(Self::MIN), i64::from(Self::MAX)) as u8)
    }
}

impl TryFrom<i64> for Rating {
    type Error = DomainError;
    fn try_from(raw: i64) -> Result<Self, Self::Error> {
        validate_rating(raw)
    }
}

impl From<Rating> for i64 {
    fn from(r: Rating) -> i64 {
        i64::from(r.0)
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn validate_rating(raw: i64) -> Result<Rating, DomainError> {
    if (i64::from(Rating::MIN)..=i64::from(Rating::MAX)).contains(&raw) {
        Ok(Rating(raw as u8))
    } else {
        Err(DomainError::OutOfRange(raw))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionDescriptor {
    Excellent,
    VeryGood,
    Good,
    Fair,
    Poor,
    VeryPoor,
    Failed,
    None,
}

/// One row of the rating standard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PsciLevel {
    pub level: u8,
    pub primary_indicators: &'static str,
    pub secondary_indicators: &'static str,
    pub treatment: &'static str,
    /// Surface descriptor as printed in the standard (may be empty).
    pub surface_text: &'static str,
    /// Structure descriptor as printed in the standard (may be empty).
    pub structure_text: &'static str,
    pub surface_condition: ConditionDescriptor,
    pub structure_condition: ConditionDescriptor,
}

/// The ten-level rating standard, ordered from 10 down to 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PsciRubric {
    levels: Vec<PsciLevel>,
}

impl PsciRubric {
    pub fn levels(&self) -> &[PsciLevel] {
        &self.levels
    }

    pub fn level(&self, level: u8) -> Option<&PsciLevel> {
        self.levels.iter().find(|l| l.level == level)
    }

    pub fn version(&self) -> &'static str {
        RUBRIC_VERSION
    }
}

use ConditionDescriptor as C;

#[rustfmt::skip]
const PSCI_TABLE: [PsciLevel; 10] = [
    PsciLevel {
        level: 10,
        primary_indicators: "No visible defects",
        secondary_indicators: "Road surface in perfect condition",
        treatment: "Routine maintenance",
        surface_text: "Excellent",
        structure_text: "Very good",
        surface_condition: C::Excellent,
        structure_condition: C::VeryGood,
    },
    PsciLevel {
        level: 9,
        primary_indicators: "Minor surface defects; ravelling or bleeding <10%",
        secondary_indicators: "Road surface in very good condition",
        treatment: "",
        surface_text: "",
        structure_text: "",
        surface_condition: C::None,
        structure_condition: C::None,
    },
    PsciLevel {
        level: 8,
        primary_indicators: "Moderate surface defects; ravelling or bleeding 10% to 30%",
        secondary_indicators: "Little or no other defects",
        treatment: "Resealing and restoration of",
        surface_text: "Fair",
        structure_text: "Good",
        surface_condition: C::Fair,
        structure_condition: C::Good,
    },
    PsciLevel {
        level: 7,
        primary_indicators: "Extensive surface defects; ravelling or bleeding >30%",
        secondary_indicators: "Little or no other defects; old surface with aged appearance",
        treatment: "Skid resistance",
        surface_text: "Poor",
        structure_text: "Good",
        surface_condition: C::Poor,
        structure_condition: C::Good,
    },
    PsciLevel {
        level: 6,
        primary_indicators: "Moderate other pavement defects; other cracking <20%; patching generally in good condition; surface distortion requiring some reduction in speed",
        secondary_indicators: "Surface defects may be present; no structural distress",
        treatment: "Surface restoration",
        surface_text: "Fair",
        structure_text: "Fair",
        surface_condition: C::Fair,
        structure_condition: C::Fair,
    },
    PsciLevel {
        level: 5,
        primary_indicators: "Significant other pavement defects; other cracking >20%; patching in fair condition; surface distortion requiring reduction in speed",
        secondary_indicators: "Surface defects may be present; very localized structural distress (< 5m\u{b2} or a few isolated potholes)",
        treatment: "Carry out localized repairs and treat with surface treatment or thin overlay",
        surface_text: "Poor",
        structure_text: "Fair",
        surface_condition: C::Poor,
        structure_condition: C::Fair,
    },
    PsciLevel {
        level: 4,
        primary_indicators: "Structural distress present; rutting, alligator cracking or poor patching for 5% to 25%; short lengths of edge breakup or cracking; frequent potholes",
        secondary_indicators: "Other defects may be present",
        treatment: "Structural overlay",
        surface_text: "Poor overall",
        structure_text: "Poor overall",
        surface_condition: C::Poor,
        structure_condition: C::Poor,
    },
    PsciLevel {
        level: 3,
        primary_indicators: "Significant areas of structural distress; rutting, alligator cracking or poor patching for 25% to 50%; continuous lengths with edge breakup or cracking; more frequent potholes",
        secondary_indicators: "Other defects may be present",
        treatment: "Required to strengthen road; localized patching and repairs are required prior to overlay",
        surface_text: "Poor overall",
        structure_text: "Poor overall",
        surface_condition: C::Poor,
        structure_condition: C::Poor,
    },
    PsciLevel {
        level: 2,
        primary_indicators: "Large areas of structural distress; rutting, alligator cracking or very poor patching for >50%; severe rutting (> 75 mm); extensive very poor patching; many potholes",
        secondary_indicators: "Very difficult to drive",
        treatment: "Road reconstruction",
        surface_text: "Very poor overall",
        structure_text: "Very poor overall",
        surface_condition: C::VeryPoor,
        structure_condition: C::VeryPoor,
    },
    PsciLevel {
        level: 1,
        primary_indicators: "Extensive structural distress; road disintegration of surface; pavement failure; many large and deep potholes; extensive failed patching",
        secondary_indicators: "Severe deterioration; virtually undriveable",
        treatment: "Needs full-depth reconstruction with extensive base repair",
        surface_text: "Failed overall",
        structure_text: "Failed overall",
        surface_condition: C::Failed,
        structure_condition: C::Failed,
    },
];

/// Returns the built-in asphalt PSCI rubric.
pub fn builtin_psci_rubric() -> PsciRubric {
    PsciRubric {
        levels: PSCI_TABLE.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    PsciDoc,
    Literature,
    Gsv,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Acquisition {
    /// Path relative to the manifest directory.
    Local { path: PathBuf },
    /// Street View query plus the cached file once fetched.
    Gsv {
        query: GsvQuery,
        cached_path: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsPoint {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub source: ImageSource,
    pub acquisition: Acquisition,
    pub byte_size: Option<u64>,
    pub gps: Option<GpsPoint>,
    pub ground_truth: Option<Rating>,
}

impl ImageRecord {
    /// Path of the image bytes on disk, relative to the manifest directory, if known.
    pub fn local_path(&self) -> Option<&PathBuf> {
        match &self.acquisition {
            Acquisition::Local { path } => Some(path),
            Acquisition::Gsv { cached_path, .. } => cached_path.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssessorKind {
    HumanExpert,
    HumanIntermediate,
    HumanNovice,
    ModelRun { model_id: String, run_index: u32 },
    GroundTruth,
    Consensus,
}

impl AssessorKind {
    pub fn is_human(&self) -> bool {
        matches!(
            self,
            AssessorKind::HumanExpert | AssessorKind::HumanIntermediate | AssessorKind::HumanNovice
        )
    }

    /// Short group label: the model id for runs, otherwise the kind name.
    pub fn group(&self) -> String {
        match self {
            AssessorKind::HumanExpert => "expert".into(),
            AssessorKind::HumanIntermediate => "intermediate".into(),
            AssessorKind::HumanNovice => "novice".into(),
            AssessorKind::ModelRun { model_id, .. } => model_id.clone(),
            AssessorKind::GroundTruth => "ground_truth".into(),
            AssessorKind::Consensus => "consensus".into(),
        }
    }

    /// Parses the `assessor_kind` column of the ratings table.
    pub fn parse_human(text: &str) -> Option<AssessorKind> {
        match text.trim().to_ascii_lowercase().as_str() {
            "human_expert" | "expert" => Some(AssessorKind::HumanExpert),
            "human_intermediate" | "intermediate" => Some(AssessorKind::HumanIntermediate),
            "human_novice" | "novice" | "no_experience" => Some(AssessorKind::HumanNovice),
            "ground_truth" => Some(AssessorKind::GroundTruth),
            _ => None,
        }
    }

    pub fn table_name(&self) -> &'static str {
        match self {
            AssessorKind::HumanExpert => "human_expert",
            AssessorKind::HumanIntermediate => "human_intermediate",
            AssessorKind::HumanNovice => "human_novice",
            AssessorKind::ModelRun { .. } => "model_run",
            AssessorKind::GroundTruth => "ground_truth",
            AssessorKind::Consensus => "consensus",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AssessorId {
    pub id: String,
    pub kind: AssessorKind,
}

impl AssessorId {
    pub fn new(id: impl Into<String>, kind: AssessorKind) -> Self {
        Self { id: id.into(), kind }
    }

    /// Column identity of one model run, e.g. `model5#r3`.
    pub fn model_run(model_id: &str, run_index: u32) -> Self {
        Self {
            id: format!("{model_id}#r{run_index}"),
            kind: AssessorKind::ModelRun {
                model_id: model_id.to_string(),
                run_index,
            },
        }
    }

    pub fn ground_truth() -> Self {
        Self::new("ground_truth", AssessorKind::GroundTruth)
    }
}

impl fmt::Display for AssessorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

/// Subjects × assessors grid of optional ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingMatrix {
    subjects: Vec<String>,
    assessors: Vec<AssessorId>,
    cells: Vec<Vec<Option<Rating>>>,
}

impl RatingMatrix {
    /// Matrix over `subjects` with no assessor columns.
    pub fn new(subjects: Vec<String>) -> Self {
        let cells = vec![Vec::new(); subjects.len()];
        Self {
            subjects,
            assessors: Vec::new(),
            cells,
        }
    }

    /// Builds a matrix from row-major cells. Panics if the dimensions disagree.
    pub fn from_rows(
        subjects: Vec<String>,
        assessors: Vec<AssessorId>,
        cells: Vec<Vec<Option<Rating>>>,
    ) -> Self {
        assert_eq!(subjects.len(), cells.len(), "row count mismatch");
        for row in &cells {
            assert_eq!(row.len(), assessors.len(), "column count mismatch");
        }
        Self {
            subjects,
            assessors,
            cells,
        }
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn assessors(&self) -> &[AssessorId] {
        &self.assessors
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_assessors(&self) -> usize {
        self.assessors.len()
    }

    pub fn cell(&self, subject: usize, assessor: usize) -> Option<Rating> {
        self.cells[subject][assessor]
    }

    pub fn rows(&self) -> &[Vec<Option<Rating>>] {
        &self.cells
    }

    pub fn assessor_index(&self, id: &str) -> Option<usize> {
        self.assessors.iter().position(|a| a.id == id)
    }

    pub fn subject_index(&self, id: &str) -> Option<usize> {
        self.subjects.iter().position(|s| s == id)
    }

    pub fn column(&self, assessor: usize) -> Vec<Option<Rating>> {
        self.cells.iter().map(|row| row[assessor]).collect()
    }

    /// Appends an empty column and returns its index.
    pub fn add_assessor(&mut self, assessor: AssessorId) -> Result<usize, DomainError> {
        if self.assessor_index(&assessor.id).is_some() {
            return Err(DomainError::DuplicateAssessor(assessor.id));
        }
        self.assessors.push(assessor);
        for row in &mut self.cells {
            row.push(None);
        }
        Ok(self.assessors.len() - 1)
    }

    pub fn set(&mut self, subject: usize, assessor: usize, rating: Option<Rating>) {
        self.cells[subject][assessor] = rating;
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(|row| row.iter().all(Option::is_some))
    }

    /// Row-major numeric copy; missing cells become NaN.
    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        self.cells
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| c.map_or(f64::NAN, Rating::as_f64))
                    .collect()
            })
            .collect()
    }

    /// Restricts to `selected` assessors (in the given order) and to subjects
    /// every one of them rated.
    pub fn complete_cases(&self, selected: &[&str]) -> Result<RatingMatrix, DomainError> {
        let mut idx = Vec::with_capacity(selected.len());
        let mut seen = HashSet::new();
        for id in selected {
            let i = self
                .assessor_index(id)
                .ok_or_else(|| DomainError::UnknownAssessor(id.to_string()))?;
            if !seen.insert(i) {
                return Err(DomainError::DuplicateAssessor(id.to_string()));
            }
            idx.push(i);
        }
        let mut subjects = Vec::new();
        let mut cells = Vec::new();
        for (s, row) in self.cells.iter().enumerate() {
            if idx.iter().all(|&i| row[i].is_some()) {
                subjects.push(self.subjects[s].clone());
                cells.push(idx.iter().map(|&i| row[i]).collect());
            }
        }
        if subjects.is_empty() {
            return Err(DomainError::EmptyResult);
        }
        Ok(RatingMatrix {
            subjects,
            assessors: idx.iter().map(|&i| self.assessors[i].clone()).collect(),
            cells,
        })
    }

    /// Complete cases over every assessor.
    pub fn complete_cases_all(&self) -> Result<RatingMatrix, DomainError> {
        let ids: Vec<&str> = self.assessors.iter().map(|a| a.id.as_str()).collect();
        self.complete_cases(&ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(v: i64) -> Option<Rating> {
        Some(Rating::new(v).unwrap())
    }

    fn human(id: &str) -> AssessorId {
        AssessorId::new(id, AssessorKind::HumanExpert)
    }

    #[test]
    fn rubric_anchor_text() {
        let rubric = builtin_psci_rubric();
        assert_eq!(rubric.level(10).unwrap().primary_indicators, "No visible defects");
        assert!(rubric.level(1).unwrap().treatment.contains("full-depth reconstruction"));
        let levels: Vec<u8> = rubric.levels().iter().map(|l| l.level).collect();
        assert_eq!(levels, (1..=10).rev().collect::<Vec<u8>>());
        assert_eq!(rubric, builtin_psci_rubric());
    }

    #[test]
    fn rubric_indicator_text_is_never_blank() {
        for level in builtin_psci_rubric().levels() {
            assert!(!level.primary_indicators.is_empty());
            assert!(!level.secondary_indicators.is_empty());
        }
    }

    #[test]
    fn validate_rating_bounds() {
        assert_eq!(validate_rating(7).unwrap().value(), 7);
        assert_eq!(validate_rating(0), Err(DomainError::OutOfRange(0)));
        assert_eq!(validate_rating(11), Err(DomainError::OutOfRange(11)));
        for v in 1..=10 {
            let r = validate_rating(v).unwrap();
            assert_eq!(validate_rating(i64::from(r)).unwrap(), r);
        }
    }

    #[test]
    fn rating_serde_rejects_out_of_range() {
        assert!(serde_json::from_str::<Rating>("0").is_err());
        assert_eq!(serde_json::from_str::<Rating>("4").unwrap().value(), 4);
    }

    #[test]
    fn complete_cases_identity_when_full() {
        let m = RatingMatrix::from_rows(
            vec!["a".into(), "b".into()],
            vec![human("e1"), human("e2")],
            vec![vec![r(1), r(2)], vec![r(3), r(4)]],
        );
        assert_eq!(m.complete_cases(&["e1", "e2"]).unwrap(), m);
    }

    #[test]
    fn complete_cases_drops_incomplete_rows() {
        let m = RatingMatrix::from_rows(
            vec!["a".into(), "b".into(), "c".into()],
            vec![human("e1"), human("e2")],
            vec![vec![r(1), r(2)], vec![r(3), None], vec![r(5), r(6)]],
        );
        let cc = m.complete_cases(&["e1", "e2"]).unwrap();
        assert_eq!(cc.subjects(), &["a".to_string(), "c".to_string()]);
        assert_eq!(cc.n_assessors(), 2);
        assert_eq!(cc.complete_cases(&["e1", "e2"]).unwrap(), cc);
    }

    #[test]
    fn complete_cases_empty_when_assessor_rated_nothing() {
        let m = RatingMatrix::from_rows(
            vec!["a".into(), "b".into()],
            vec![human("e1"), human("e2")],
            vec![vec![r(1), None], vec![r(3), None]],
        );
        assert_eq!(m.complete_cases(&["e1", "e2"]), Err(DomainError::EmptyResult));
        assert!(matches!(
            m.complete_cases(&["zz"]),
            Err(DomainError::UnknownAssessor(_))
        ));
    }
}
