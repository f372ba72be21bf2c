use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{DataError, SaliencyMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weather {
    Sunny,
    Rainy,
    Cloudy,
    Overcast,
    Snowy,
    Foggy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimePeriod {
    Morning,
    Afternoon,
    Evening,
    Night,
    Daytime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Urban,
    Rural,
    Highway,
    Suburban,
    Mountain,
    Tunnel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioCategory {
    Normal,
    SafetyCritical,
    Accident,
}

impl ScenarioCategory {
    pub const ALL: [ScenarioCategory; 3] = [
        ScenarioCategory::Normal,
        ScenarioCategory::SafetyCritical,
        ScenarioCategory::Accident,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioCategory::Normal => "normal",
            ScenarioCategory::SafetyCritical => "safety_critical",
            ScenarioCategory::Accident => "accident",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Dreyeve,
    Bdda,
    Dada,
    Lbw,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verification {
    Candidate,
    Accepted,
    Edited,
    Rejected,
}

macro_rules! display_via_serde {
    ($($t:ty),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match serde_json::to_value(self) {
                    Ok(Value::String(s)) => f.write_str(&s),
                    _ => write!(f, "{self:?}"),
                }
            }
        }
    )*};
}

display_via_serde!(Weather, TimePeriod, Location, ScenarioCategory, Source, Split, Verification);

/// Driving context accompanying a frame: weather, time, place, ego motion and scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneContext {
    pub weather: Weather,
    pub time_period: TimePeriod,
    pub location: Location,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_of_way: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub road_type: Option<String>,
    pub scenario_category: ScenarioCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freeform: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl SceneContext {
    pub fn new(
        weather: Weather,
        time_period: TimePeriod,
        location: Location,
        scenario_category: ScenarioCategory,
    ) -> Self {
        Self {
            weather,
            time_period,
            location,
            speed: None,
            right_of_way: None,
            road_type: None,
            scenario_category,
            freeform: None,
            extra: Map::new(),
        }
    }

    /// Free-text scene description fed to the model: the freeform text when present,
    /// otherwise a sentence assembled from the structured fields.
    pub fn describe(&self) -> String {
        if let Some(text) = self.freeform.as_deref().filter(|t| !t.trim().is_empty()) {
            return text.trim().to_string();
        }
        let mut parts = vec![format!(
            "{} {} {}",
            self.weather, self.time_period, self.location
        )];
        if let Some(speed) = self.speed {
            parts.push(format!("speed {} km/h", speed.round()));
        }
        if let Some(row) = &self.right_of_way {
            parts.push(row.clone());
        }
        if let Some(road) = &self.road_type {
            parts.push(road.clone());
        }
        parts.join(" , ")
    }
}

/// Discrete fixation coordinates `(row, col)`; serialized as `[[row,col],...]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FixationSet {
    points: Vec<(usize, usize)>,
}

impl FixationSet {
    pub fn new(points: Vec<(usize, usize)>) -> Result<Self, DataError> {
        let mut seen = BTreeSet::new();
        for &p in &points {
            if !seen.insert(p) {
                return Err(DataError::schema(
                    "fixations",
                    format!("duplicate fixation ({}, {})", p.0, p.1),
                ));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(usize, usize)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn check_bounds(&self, height: usize, width: usize) -> Result<(), DataError> {
        match self.points.iter().find(|&&(r, c)| r >= height || c >= width) {
            Some(&(row, col)) => Err(DataError::Bounds {
                row,
                col,
                height,
                width,
            }),
            None => Ok(()),
        }
    }
}

impl Serialize for FixationSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[usize; 2]> = self.points.iter().map(|&(r, c)| [r, c]).collect();
        pairs.serialize(s)
    }
}

impl<'de> Deserialize<'de> for FixationSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let pairs = Vec::<[usize; 2]>::deserialize(d)?;
        FixationSet::new(pairs.into_iter().map(|[r, c]| (r, c)).collect())
            .map_err(serde::de::Error::custom)
    }
}

/// One dataset sample with its where / what / why annotations and review state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub frame_path: PathBuf,
    pub map_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixations: Option<FixationSet>,
    pub context: SceneContext,
    pub what: Vec<String>,
    pub why: Vec<String>,
    pub source: Source,
    pub split: Split,
    pub verification: Verification,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub editor_note: Option<String>,
    pub version: u64,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

const RECORD_KEYS: &[&str] = &[
    "id",
    "frame_path",
    "map_path",
    "fixations",
    "context",
    "what",
    "why",
    "source",
    "split",
    "verification",
    "editor_note",
    "version",
];

const CONTEXT_KEYS: &[&str] = &[
    "weather",
    "time_period",
    "location",
    "speed",
    "right_of_way",
    "road_type",
    "scenario_category",
    "freeform",
];

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Reject unknown keys (strict) or keep them in `extra` (lenient).
    pub strict: bool,
    /// When known, fixations are checked against the map dimensions.
    pub map_dims: Option<(usize, usize)>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            strict: true,
            map_dims: None,
        }
    }
}

impl AnnotationRecord {
    /// Checks record-level invariants that the type system does not express.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.id.trim().is_empty() {
            return Err(DataError::schema("id", "must be non-empty"));
        }
        if let Some(speed) = self.context.speed {
            if !(speed.is_finite() && speed >= 0.0) {
                return Err(DataError::schema("speed", "must be a non-negative number"));
            }
        }
        if matches!(
            self.verification,
            Verification::Accepted | Verification::Edited
        ) {
            if self.what.is_empty() {
                return Err(DataError::schema(
                    "what",
                    "accepted/edited records need at least one entry",
                ));
            }
            if self.why.is_empty() {
                return Err(DataError::schema(
                    "why",
                    "accepted/edited records need at least one entry",
                ));
            }
        }
        Ok(())
    }

    pub fn is_exportable(&self) -> bool {
        matches!(
            self.verification,
            Verification::Accepted | Verification::Edited
        ) && !self.what.is_empty()
            && !self.why.is_empty()
    }
}

fn check_keys(obj: &Map<String, Value>, allowed: &[&str]) -> Result<(), DataError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(DataError::schema(k.clone(), "unknown key")),
        None => Ok(()),
    }
}

/// Parses one dataset line in strict mode.
pub fn load_record(line: &str) -> Result<AnnotationRecord, DataError> {
    load_record_with(line, LoadOptions::default())
}

pub fn load_record_with(line: &str, opts: LoadOptions) -> Result<AnnotationRecord, DataError> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| DataError::schema("<record>", format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| DataError::schema("<record>", "expected a JSON object"))?;
    if opts.strict {
        check_keys(obj, RECORD_KEYS)?;
        if let Some(Value::Object(ctx)) = obj.get("context") {
            check_keys(ctx, CONTEXT_KEYS)?;
        }
    }
    let record: AnnotationRecord = serde_path_to_error::deserialize(&value).map_err(|e| {
        let path = e.path().to_string();
        let field = path.rsplit('.').next().unwrap_or(&path).to_string();
        let message = e.inner().to_string();
        // serde reports a missing key on the enclosing object; pull the key name out.
        let field = match message.strip_prefix("missing field `") {
            Some(rest) => rest.split('`').next().unwrap_or(&field).to_string(),
            None if field == "?" || field.is_empty() => "<record>".to_string(),
            None => field,
        };
        DataError::schema(field, message)
    })?;
    record.validate()?;
    if let (Some(fx), Some((h, w))) = (&record.fixations, opts.map_dims) {
        fx.check_bounds(h, w)?;
    }
    Ok(record)
}

pub fn serialize_record(record: &AnnotationRecord) -> String {
    serde_json::to_string(record).expect("records always serialize")
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>, DataError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = load_record(&line).map_err(|e| match e {
            DataError::Schema { field, message } => DataError::Schema {
                field,
                message: format!("line {}: {message}", lineno + 1),
            },
            other => other,
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes records atomically (temp file + rename).
pub fn write_dataset(path: impl AsRef<Path>, records: &[AnnotationRecord]) -> Result<(), DataError> {
    let path = path.as_ref();
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        for r in records {
            writeln!(f, "{}", serialize_record(r))?;
        }
        f.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Ordered frames of one scene with their attention maps.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    scene_id: String,
    frames: Vec<(String, SaliencyMap)>,
}

impl FrameSequence {
    pub fn new(scene_id: impl Into<String>, frames: Vec<(String, SaliencyMap)>) -> Result<Self, DataError> {
        let first = frames
            .first()
            .ok_or_else(|| DataError::schema("frames", "a sequence needs at least one frame"))?;
        let (h, w) = first.1.shape();
        for (_, m) in &frames {
            if m.shape() != (h, w) {
                let (h2, w2) = m.shape();
                return Err(DataError::ShapeMismatch(h, w, h2, w2));
            }
        }
        Ok(Self {
            scene_id: scene_id.into(),
            frames,
        })
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn frames(&self) -> &[(String, SaliencyMap)] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn truncated(&self, len: usize) -> FrameSequence {
        FrameSequence {
            scene_id: self.scene_id.clone(),
            frames: self.frames[..len.clamp(1, self.frames.len())].to_vec(),
        }
    }
}
