//! Prompt-strategy profiles and deterministic prompt rendering.
//!
//! A prompt is assembled from fixed text blocks. Each of the five strategy
//! axes (persona, query detail, delimiters, step-by-step instructions and
//! comprehensive framing) switches blocks on or deepens them. The wording is
//! frozen under [`PROMPT_VERSION`]; any edit to a block must bump it.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::PsciRubric;

pub const PROMPT_VERSION: &str = "1";
pub const IMAGE_PLACEHOLDER: &str = "{{IMAGE}}";
pub const DELIMITER: &str = "\"\"\"";

pub const OUTPUT_INSTRUCTION: &str =
    "Reply with a single integer from 1 to 10 and nothing else. Do not show your reasoning.";

pub const HEADER_CRITERIA: &str = "CRITERIA";
pub const HEADER_ANOMALIES: &str = "ANOMALIES";
pub const HEADER_PROPORTIONS: &str = "PROPORTIONS";
pub const HEADER_IMAGE: &str = "IMAGE";
pub const HEADER_STEPS: &str = "STEPS";
pub const HEADER_TASK: &str = "TASK";
pub const HEADER_OUTPUT: &str = "OUTPUT";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("strategy intensity {field} = {value} exceeds maximum {max}")]
    IntensityOutOfRange {
        field: &'static str,
        value: u8,
        max: u8,
    },
    #[error("unknown model config '{0}'")]
    UnknownModel(String),
}

/// Depth of each prompt strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StrategyIntensity {
    /// Persona adoption, 0..=2.
    pub s1_persona: u8,
    /// Query detail, 0..=4.
    pub s2_detail: u8,
    /// Delimited sections, 0..=1.
    pub s3_delimiters: u8,
    /// Step-by-step instructions, 0..=4.
    pub s4_steps: u8,
    /// Comprehensive framing, 0..=1.
    pub s5_comprehensive: u8,
}

impl StrategyIntensity {
    pub fn new(s1: u8, s2: u8, s3: u8, s4: u8, s5: u8) -> Result<Self, PromptError> {
        let me = Self {
            s1_persona: s1,
            s2_detail: s2,
            s3_delimiters: s3,
            s4_steps: s4,
            s5_comprehensive: s5,
        };
        me.validate()?;
        Ok(me)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for (field, value, max) in [
            ("s1_persona", self.s1_persona, 2),
            ("s2_detail", self.s2_detail, 4),
            ("s3_delimiters", self.s3_delimiters, 1),
            ("s4_steps", self.s4_steps, 4),
            ("s5_comprehensive", self.s5_comprehensive, 1),
        ] {
            if value > max {
                return Err(PromptError::IntensityOutOfRange { field, value, max });
            }
        }
        Ok(())
    }

    pub fn as_tuple(&self) -> (u8, u8, u8, u8, u8) {
        (
            self.s1_persona,
            self.s2_detail,
            self.s3_delimiters,
            self.s4_steps,
            self.s5_comprehensive,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    pub intensity: StrategyIntensity,
    pub output_instruction: String,
}

impl ModelConfig {
    pub fn custom(model_id: impl Into<String>, intensity: StrategyIntensity) -> Result<Self, PromptError> {
        intensity.validate()?;
        Ok(Self {
            model_id: model_id.into(),
            intensity,
            output_instruction: OUTPUT_INSTRUCTION.to_string(),
        })
    }
}

const BUILTIN_INTENSITIES: [(&str, (u8, u8, u8, u8, u8)); 5] = [
    ("model1", (0, 1, 1, 0, 1)),
    ("model2", (1, 1, 1, 0, 1)),
    ("model3", (1, 2, 1, 0, 1)),
    ("model4", (2, 3, 1, 2, 1)),
    ("model5", (2, 4, 1, 4, 1)),
];

pub fn builtin_model_configs() -> Vec<ModelConfig> {
    BUILTIN_INTENSITIES
        .iter()
        .map(|&(id, (a, b, c, d, e))| {
            ModelConfig::custom(id, StrategyIntensity::new(a, b, c, d, e).expect("valid built-in"))
                .expect("valid built-in")
        })
        .collect()
}

pub fn builtin_model_config(model_id: &str) -> Result<ModelConfig, PromptError> {
    builtin_model_configs()
        .into_iter()
        .find(|c| c.model_id == model_id)
        .ok_or_else(|| PromptError::UnknownModel(model_id.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub delimiter_token: String,
}

impl PromptBundle {
    /// User text split around the image placeholder.
    pub fn split_at_image(&self) -> (&str, &str) {
        self.user_text
            .split_once(IMAGE_PLACEHOLDER)
            .unwrap_or((self.user_text.as_str(), ""))
    }

    /// Plain-text export for audit.
    pub fn to_audit_text(&self) -> String {
        format!(
            "=== SYSTEM ===\n{}\n=== USER ===\n{}",
            self.system_text, self.user_text
        )
    }
}

const PERSONA_BASE: &str =
    "You are a pavement engineer who rates the surface condition of asphalt roads from images.";
const PERSONA_EXTENDED: &str = "You are certified in visual pavement condition surveys, have many years of field experience rating urban and rural asphalt roads, and know the Pavement Surface Condition Index (PSCI) rating system and its treatment measures in detail.";

const ANOMALY_TAXONOMY: [&str; 3] = [
    "Surface defects: ravelling, bleeding.",
    "Pavement defects: longitudinal cracks, transverse cracks.",
    "Structural distresses: alligator cracks, rutting, potholes, surface distortion, edge breakup, patching.",
];
const ANOMALY_EXCLUSION: &str = "Marks that only look like anomalies because of shadows or water stains do not count; shadows or water stains are excluded.";

const PROPORTION_GUIDANCE: [&str; 5] = [
    "Ravelling or bleeding: estimate the share of the visible asphalt area affected (below 10%, 10% to 30%, above 30%).",
    "Other cracking (longitudinal and transverse): estimate the share of the surface affected (below or above 20%).",
    "Rutting, alligator cracking and poor patching: estimate the share of the surface affected (5% to 25%, 25% to 50%, above 50%); note ruts deeper than about 75 mm.",
    "Potholes: count them (none, a few isolated, frequent, many large and deep).",
    "Edge breakup or edge cracking: judge whether it appears in short lengths or continuous lengths.",
];

const STEPS: [(&str, &str); 6] = [
    (
        "Read the PSCI rating criteria provided above.",
        "Note the indicator thresholds that separate neighbouring levels.",
    ),
    (
        "Examine the image, focusing solely on the asphalt pavement.",
        "Disregard vehicles, vegetation, buildings, kerbs and road markings except where they reveal pavement damage.",
    ),
    (
        "Identify any anomalies on the asphalt surface: surface defects, pavement defects and structural distresses.",
        "Classify each anomaly using the anomaly list and exclude apparent anomalies caused by shadows or water stains.",
    ),
    (
        "Estimate the proportion of the asphalt surface affected by each type of anomaly.",
        "Use the proportion guidance; these estimates are the basis for the rating.",
    ),
    (
        "Determine the PSCI rating of the road surface using the grading criteria.",
        "Start from the most severe distress present, compare it with the primary indicators of adjacent levels, and use the secondary indicators to settle borderline cases.",
    ),
    (
        "Respond with a single numerical value for the rating, hiding your thought process.",
        "Output only the integer, with no words, units or explanation.",
    ),
];

fn criteria_lines(rubric: &PsciRubric, detail: u8) -> Vec<String> {
    rubric
        .levels()
        .iter()
        .map(|l| match detail {
            0 => match l.surface_text {
                "" => format!("PSCI {}", l.level),
                s => format!("PSCI {} ({s})", l.level),
            },
            1 => format!("PSCI {}: {}", l.level, l.primary_indicators),
            _ => format!(
                "PSCI {}: {}. Secondary indicators: {}.",
                l.level, l.primary_indicators, l.secondary_indicators
            ),
        })
        .collect()
}

fn section(out: &mut String, header: &str, body: &[String], fenced: bool) {
    if !out.is_empty() {
        out.push('\n');
    }
    let _ = writeln!(out, "{header}:");
    if fenced {
        let _ = writeln!(out, "{DELIMITER}");
    }
    for line in body {
        let _ = writeln!(out, "{line}");
    }
    if fenced {
        let _ = writeln!(out, "{DELIMITER}");
    }
}

/// Renders the prompt for one config. Pure: identical inputs give identical bytes.
pub fn render_prompt(config: &ModelConfig, rubric: &PsciRubric) -> PromptBundle {
    let s = &config.intensity;
    let fenced = s.s3_delimiters >= 1;

    let system_text = match s.s1_persona {
        0 => String::new(),
        1 => PERSONA_BASE.to_string(),
        _ => format!("{PERSONA_BASE} {PERSONA_EXTENDED}"),
    };

    let mut user = String::new();

    let mut criteria = vec![
        "Rate the condition of the asphalt road surface in the image using the PSCI rating system (10 = best condition, 1 = worst).".to_string(),
    ];
    criteria.extend(criteria_lines(rubric, s.s2_detail));
    section(&mut user, HEADER_CRITERIA, &criteria, fenced);

    if s.s2_detail >= 3 {
        let mut body = vec!["Types of anomalies to look for on the asphalt pavement:".to_string()];
        body.extend(ANOMALY_TAXONOMY.iter().map(|t| format!("- {t}")));
        body.push(ANOMALY_EXCLUSION.to_string());
        section(&mut user, HEADER_ANOMALIES, &body, fenced);
    }

    if s.s2_detail >= 4 {
        let mut body = vec!["For each type of anomaly, estimate how much of the asphalt surface it affects:".to_string()];
        body.extend(PROPORTION_GUIDANCE.iter().map(|t| format!("- {t}")));
        section(&mut user, HEADER_PROPORTIONS, &body, fenced);
    }

    let image_intro = if s.s2_detail >= 2 {
        "Road image (assess the asphalt pavement only):"
    } else {
        "Road image:"
    };
    section(
        &mut user,
        HEADER_IMAGE,
        &[image_intro.to_string(), IMAGE_PLACEHOLDER.to_string()],
        fenced,
    );

    if s.s4_steps >= 2 {
        let mut body = vec!["Follow these steps:".to_string()];
        for (i, (step, detail)) in STEPS.iter().enumerate() {
            let elaborate = s.s4_steps >= 4 || (s.s4_steps == 3 && (3..=4).contains(&i));
            if elaborate {
                body.push(format!("{}. {step} {detail}", i + 1));
            } else {
                body.push(format!("{}. {step}", i + 1));
            }
        }
        section(&mut user, HEADER_STEPS, &body, fenced);
    }

    let mut task = vec!["Determine the PSCI rating of the road surface shown in the image.".to_string()];
    if s.s4_steps == 1 {
        task.push("Work through the assessment step by step before deciding.".to_string());
    }
    if s.s5_comprehensive >= 1 {
        task.push("Base the rating only on the visible asphalt pavement, apply the criteria consistently to every image, and choose the single level that best matches the overall condition.".to_string());
    }
    section(&mut user, HEADER_TASK, &task, fenced);

    section(
        &mut user,
        HEADER_OUTPUT,
        &[config.output_instruction.clone()],
        fenced,
    );

    PromptBundle {
        system_text,
        user_text: user,
        delimiter_token: DELIMITER.to_string(),
    }
}

/// Section headers present in a rendered user text.
pub fn section_headers(user_text: &str) -> BTreeSet<String> {
    user_text
        .lines()
        .filter_map(|l| l.strip_suffix(':'))
        .filter(|h| !h.is_empty() && h.chars().all(|c| c.is_ascii_uppercase() || c == '_'))
        .map(str::to_string)
        .collect()
}

fn has_numbered_steps(user_text: &str) -> bool {
    (1..=6).all(|i| {
        let prefix = format!("{i}. ");
        user_text.lines().any(|l| l.starts_with(&prefix))
    })
}

/// True when every section header is immediately followed by an opening
/// delimiter and each section is closed before the next header.
fn sections_fenced(user_text: &str, delimiter: &str) -> bool {
    let lines: Vec<&str> = user_text.lines().collect();
    let mut headers = 0;
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if section_headers(line).len() == 1 {
            headers += 1;
            if lines.get(i + 1) != Some(&delimiter) {
                return false;
            }
            let mut j = i + 2;
            loop {
                match lines.get(j) {
                    None => return false,
                    Some(l) if *l == delimiter => break,
                    Some(l) if section_headers(l).len() == 1 => return false,
                    _ => j += 1,
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    headers > 0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StructureChecks {
    pub persona_present: bool,
    pub steps_present: bool,
    pub delimiters_fenced: bool,
    pub output_contract_present: bool,
    pub image_placeholder_count: bool,
}

impl StructureChecks {
    pub fn all_pass(&self) -> bool {
        self.named().iter().all(|(_, ok)| *ok)
    }

    pub fn named(&self) -> [(&'static str, bool); 5] {
        [
            ("persona_present", self.persona_present),
            ("steps_present", self.steps_present),
            ("delimiters_fenced", self.delimiters_fenced),
            ("output_contract_present", self.output_contract_present),
            ("image_placeholder_count", self.image_placeholder_count),
        ]
    }
}

/// Checks that a bundle has exactly the structure `config` calls for.
/// Each field is true when the observed property matches the expectation.
pub fn assert_structure(bundle: &PromptBundle, config: &ModelConfig) -> StructureChecks {
    let s = &config.intensity;
    let persona = bundle.system_text.contains("pavement engineer");
    let steps = has_numbered_steps(&bundle.user_text);
    let fenced = sections_fenced(&bundle.user_text, &bundle.delimiter_token);
    StructureChecks {
        persona_present: persona == (s.s1_persona >= 1),
        steps_present: steps == (s.s4_steps >= 2),
        delimiters_fenced: fenced == (s.s3_delimiters == 1),
        output_contract_present: bundle.user_text.contains(&config.output_instruction)
            && section_headers(&bundle.user_text).contains(HEADER_OUTPUT),
        image_placeholder_count: bundle.user_text.matches(IMAGE_PLACEHOLDER).count() == 1,
    }
}

/// Audit file name, e.g. `prompt_model3_v1.txt`.
pub fn audit_file_name(model_id: &str) -> String {
    let stem = model_id.strip_prefix("model").unwrap_or(model_id);
    format!("prompt_model{stem}_v{PROMPT_VERSION}.txt")
}
