//! Chain-of-thought prompt templates for the annotating MLLM.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnnotationError;
use crate::data_model::{ScenarioCategory, SceneContext};

/// Sentence that marks a prompt as an annotation prompt (the image is an overlay
/// of recorded attention, not a raw frame).
pub const ATTENTION_SENTENCE: &str = "The image shows your visual attention distribution";

pub const PLACEHOLDERS: [&str; 6] = ["weather", "time", "location", "speed", "right_of_way", "road_type"];

/// Step markers in the order the model must reason through them.
pub const STEP_MARKERS: [(&str, &str); 3] = [
    ("region_count", "Step 1"),
    ("what", "Step 2"),
    ("why", "Step 3"),
];

pub const RESPONSE_FORMAT: &str = "Regions: <n>\n1. What: <content of region 1>. Why: <reason region 1 needs attention>.\n2. What: ... Why: ...";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioFamily {
    NormalOrCritical,
    Accident,
}

impl ScenarioFamily {
    pub fn of(cat: ScenarioCategory) -> Self {
        match cat {
            ScenarioCategory::Accident => ScenarioFamily::Accident,
            _ => ScenarioFamily::NormalOrCritical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub scenario_family: ScenarioFamily,
    pub body: String,
    pub required_sections: Vec<String>,
    pub response_format: String,
    /// Fallback values for optional context fields.
    #[serde(default)]
    pub defaults: BTreeMap<String, String>,
}

const NORMAL_BODY: &str = "You are an experienced driver reviewing a dashcam frame. \
The image shows your visual attention distribution: bright areas are where you looked, \
dimmed areas received little attention.
Driving context: the weather is {weather}, the time of day is {time}, the scene is {location}, \
the ego vehicle drives at {speed} km/h, right of way: {right_of_way}, road type: {road_type}.
Think step by step.
Step 1 (region count): count how many separate regions hold your attention.
Step 2 (what): for each region, name what it contains.
Step 3 (why): for each region, explain why it needs your attention in this context, \
considering traffic rules and what a careful driver would expect to happen next.
";

const ACCIDENT_BODY: &str = "You are an experienced driver reviewing a dashcam frame taken \
moments before a traffic accident. The image shows your visual attention distribution: \
bright areas are where you looked, dimmed areas received little attention.
Driving context: the weather is {weather}, the time of day is {time}, the scene is {location}, \
the ego vehicle drives at {speed} km/h, right of way: {right_of_way}, road type: {road_type}.
Think step by step.
Step 1 (region count): count how many separate regions hold your attention.
Step 2 (what): for each region, name the road user or object it contains.
Step 3 (why): for each region, explain how it could lead to the accident and what the \
driver should do to avoid it.
";

fn default_values() -> BTreeMap<String, String> {
    [
        ("speed", "unknown"),
        ("right_of_way", "unspecified"),
        ("road_type", "unspecified"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

impl PromptTemplate {
    pub fn builtin(family: ScenarioFamily) -> Self {
        let body = match family {
            ScenarioFamily::NormalOrCritical => NORMAL_BODY,
            ScenarioFamily::Accident => ACCIDENT_BODY,
        };
        Self {
            scenario_family: family,
            body: format!("{body}Reply exactly in this format:\n{RESPONSE_FORMAT}"),
            required_sections: STEP_MARKERS.iter().map(|(s, _)| s.to_string()).collect(),
            response_format: RESPONSE_FORMAT.to_string(),
            defaults: default_values(),
        }
    }

    pub fn for_context(ctx: &SceneContext) -> Self {
        Self::builtin(ScenarioFamily::of(ctx.scenario_category))
    }

    /// Names inside `{...}` in the body, in order of appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) => {
                    out.push(&after[..close]);
                    rest = &after[close + 1..];
                }
                None => break,
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), AnnotationError> {
        for p in self.placeholders() {
            if !PLACEHOLDERS.contains(&p) {
                return Err(AnnotationError::Validation(format!("unknown placeholder {{{p}}}")));
            }
        }
        let expected: Vec<&str> = STEP_MARKERS.iter().map(|(s, _)| *s).collect();
        if self.required_sections != expected {
            return Err(AnnotationError::Validation(format!(
                "required sections must be {expected:?}"
            )));
        }
        let mut last = 0;
        for (name, marker) in STEP_MARKERS {
            match self.body[last..].find(marker) {
                Some(pos) => last += pos + marker.len(),
                None => {
                    return Err(AnnotationError::Validation(format!("step `{name}` missing or out of order")))
                }
            }
        }
        Ok(())
    }
}

fn context_value(ctx: &SceneContext, name: &str) -> Option<String> {
    match name {
        "weather" => Some(ctx.weather.to_string()),
        "time" => Some(ctx.time_period.to_string()),
        "location" => Some(ctx.location.to_string()),
        "speed" => ctx.speed.map(|s| format!("{s}")),
        "right_of_way" => ctx.right_of_way.clone(),
        "road_type" => ctx.road_type.clone(),
        _ => None,
    }
}

/// Fills the template from the scene context. Deterministic.
pub fn build_annotation_prompt(ctx: &SceneContext, template: &PromptTemplate) -> Result<String, AnnotationError> {
    let family = ScenarioFamily::of(ctx.scenario_category);
    if family != template.scenario_family {
        return Err(AnnotationError::FamilyMismatch {
            template: template.scenario_family,
            context: family,
        });
    }
    template.validate()?;
    let mut out = String::with_capacity(template.body.len() + 64);
    let mut rest = template.body.as_str();
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            out.push_str(&rest[open..]);
            rest = "";
            break;
        };
        let name = &after[..close];
        let value = context_value(ctx, name)
            .or_else(|| template.defaults.get(name).cloned())
            .ok_or_else(|| AnnotationError::MissingContext(name.to_string()))?;
        out.push_str(&value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    if let Some(extra) = ctx.freeform.as_deref().filter(|s| !s.trim().is_empty()) {
        out.push_str("\nAdditional context: ");
        out.push_str(extra.trim());
    }
    Ok(out)
}
