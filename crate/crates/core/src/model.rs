//! Domain types shared across the toolkit.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

/// Lowercases, trims, and collapses internal whitespace runs to one space.
pub fn normalize_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for word in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// One executable action: a dictionary id and its normalized name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionStep {
    pub action_id: u64,
    #[serde(rename = "action_name")]
    pub name: String,
}

impl ActionStep {
    /// Builds a step, normalizing `name`. Fails if the name normalizes to "".
    pub fn new(action_id: u64, name: &str) -> Result<Self> {
        let name = normalize_name(name);
        if name.is_empty() {
            return Err(Error::InvalidInput(format!(
                "action {action_id} has an empty name"
            )));
        }
        Ok(Self { action_id, name })
    }
}

/// Per-task mapping from action id to canonical action name.
///
/// Ids need not be contiguous and the same name may sit under several ids.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActionDictionary {
    pub task_id: String,
    entries: BTreeMap<u64, String>,
}

impl ActionDictionary {
    pub fn new(
        task_id: impl Into<String>,
        entries: impl IntoIterator<Item = (u64, String)>,
    ) -> Result<Self> {
        let task_id = task_id.into();
        let mut map = BTreeMap::new();
        for (id, name) in entries {
            if normalize_name(&name).is_empty() {
                return Err(Error::InvalidInput(format!(
                    "dictionary {task_id}: action {id} has an empty name"
                )));
            }
            map.insert(id, name);
        }
        Ok(Self {
            task_id,
            entries: map,
        })
    }

    pub fn get(&self, id: u64) -> Option<&str> {
        self.entries.get(&id).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<u64, String> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True if some entry's normalized name equals `normalize_name(name)`.
    pub fn contains_name(&self, name: &str) -> bool {
        let wanted = normalize_name(name);
        self.entries.values().any(|n| normalize_name(n) == wanted)
    }

    /// Dictionary entries as normalized steps, in id order.
    pub fn steps(&self) -> Vec<ActionStep> {
        self.entries
            .iter()
            .map(|(&id, name)| ActionStep {
                action_id: id,
                name: normalize_name(name),
            })
            .collect()
    }
}

/// Ordered reference plan. Duplicates are allowed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReferencePlan {
    pub steps: Vec<ActionStep>,
}

impl ReferencePlan {
    pub fn new(steps: Vec<ActionStep>) -> Self {
        Self { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// A plan step exactly as it appeared in the model output.
///
/// Values keep their JSON kind so malformed steps can be scored instead of
/// rejected. A missing key is stored as `Value::Null`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawStep {
    pub action_id_value: Value,
    pub name_value: Value,
}

impl RawStep {
    pub fn new(action_id_value: Value, name_value: Value) -> Self {
        Self {
            action_id_value,
            name_value,
        }
    }

    /// The id as a non-negative integer, if it is one.
    ///
    /// A string holding the canonical decimal rendering of a non-negative
    /// integer (`"4"`, not `"04"` or `" 4"`) is accepted as well.
    pub fn integer_id(&self) -> Option<u64> {
        match &self.action_id_value {
            Value::Number(n) => n.as_u64(),
            Value::String(s) => lossless_integer(s),
            _ => None,
        }
    }

    /// The normalized name, if the value is a string that is non-empty after
    /// normalization.
    pub fn normalized_name(&self) -> Option<String> {
        match &self.name_value {
            Value::String(s) => {
                let n = normalize_name(s);
                (!n.is_empty()).then_some(n)
            }
            _ => None,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.integer_id().is_some() && self.normalized_name().is_some()
    }
}

pub(crate) fn lossless_integer(s: &str) -> Option<u64> {
    let v: u64 = s.parse().ok()?;
    (v.to_string() == s).then_some(v)
}

/// The four fields of a structured plan response, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlanField {
    VisualStateDescription,
    ReasoningAndReflection,
    LanguagePlan,
    ExecutablePlan,
}

impl PlanField {
    pub const ALL: [PlanField; 4] = [
        PlanField::VisualStateDescription,
        PlanField::ReasoningAndReflection,
        PlanField::LanguagePlan,
        PlanField::ExecutablePlan,
    ];

    pub fn key(self) -> &'static str {
        match self {
            PlanField::VisualStateDescription => "visual_state_description",
            PlanField::ReasoningAndReflection => "reasoning_and_reflection",
            PlanField::LanguagePlan => "language_plan",
            PlanField::ExecutablePlan => "executable_plan",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.key() == key)
    }
}

impl fmt::Display for PlanField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// A deviation found while parsing a response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseIssue {
    MissingThinkTags,
    MissingAnswerTags,
    NoObject,
    InvalidJson(String),
    NotAnObject,
    TrailingCommas,
    ExtraObject,
    MissingField(PlanField),
    WrongKind {
        field: PlanField,
        found: &'static str,
    },
    UnexpectedKey(String),
    StepNotAnObject {
        index: usize,
    },
    StepMissingKey {
        index: usize,
        key: &'static str,
    },
    StepUnexpectedKey {
        index: usize,
        key: String,
    },
    StringEncodedId {
        index: usize,
    },
    MalformedStep {
        index: usize,
    },
    FieldsOutOfOrder,
}

impl fmt::Display for ParseIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseIssue::MissingThinkTags => write!(f, "missing <think></think> tags"),
            ParseIssue::MissingAnswerTags => write!(f, "missing <answer></answer> tags"),
            ParseIssue::NoObject => write!(f, "no structured object found"),
            ParseIssue::InvalidJson(e) => write!(f, "invalid json: {e}"),
            ParseIssue::NotAnObject => write!(f, "payload is not a json object"),
            ParseIssue::TrailingCommas => write!(f, "trailing commas accepted"),
            ParseIssue::ExtraObject => write!(f, "extra object after the first one ignored"),
            ParseIssue::MissingField(field) => write!(f, "missing field {field}"),
            ParseIssue::WrongKind { field, found } => {
                write!(f, "field {field} has wrong kind ({found})")
            }
            ParseIssue::UnexpectedKey(k) => write!(f, "unexpected key {k:?}"),
            ParseIssue::StepNotAnObject { index } => write!(f, "step {index} is not an object"),
            ParseIssue::StepMissingKey { index, key } => {
                write!(f, "step {index} is missing key {key}")
            }
            ParseIssue::StepUnexpectedKey { index, key } => {
                write!(f, "step {index} has unexpected key {key:?}")
            }
            ParseIssue::StringEncodedId { index } => {
                write!(f, "step {index} id is an integer rendered as a string")
            }
            ParseIssue::MalformedStep { index } => write!(f, "step {index} is malformed"),
            ParseIssue::FieldsOutOfOrder => write!(f, "fields are not in canonical order"),
        }
    }
}

/// A parsed four-field plan response plus parse diagnostics.
///
/// A field is `Some` only if it was present with the expected kind: strings
/// for the three text fields, an array for `executable_plan`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlanResponse {
    pub visual_state_description: Option<String>,
    pub reasoning_and_reflection: Option<String>,
    pub language_plan: Option<String>,
    pub executable_plan: Option<Vec<RawStep>>,
    pub raw_think: Option<String>,
    pub raw_answer: Option<String>,
    /// Order in which the four known keys appeared in the object.
    pub field_order: Vec<PlanField>,
    pub diagnostics: Vec<ParseIssue>,
}

impl PlanResponse {
    pub fn has_field(&self, field: PlanField) -> bool {
        match field {
            PlanField::VisualStateDescription => self.visual_state_description.is_some(),
            PlanField::ReasoningAndReflection => self.reasoning_and_reflection.is_some(),
            PlanField::LanguagePlan => self.language_plan.is_some(),
            PlanField::ExecutablePlan => self.executable_plan.is_some(),
        }
    }

    pub fn present_fields(&self) -> usize {
        PlanField::ALL
            .iter()
            .filter(|&&f| self.has_field(f))
            .count()
    }

    /// True when both tag pairs were found.
    pub fn has_tags(&self) -> bool {
        self.raw_think.is_some() && self.raw_answer.is_some()
    }

    pub fn steps(&self) -> &[RawStep] {
        self.executable_plan.as_deref().unwrap_or(&[])
    }
}

/// Every reward component for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_section: f64,
    pub r_type: f64,
    pub r_validity: f64,
    pub r_format: f64,
    pub r_lcs: f64,
    pub r_step: f64,
    pub r_prefix: f64,
    pub r_overall: f64,
    pub lcs_length: usize,
    pub reference_length: usize,
}
