//! Tool definitions exposed to the reasoner and validation of the
//! arguments it sends back.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Number, Value};
use thiserror::Error;

use crate::plan::{ScanArgs, SegmentArgs, StitchArgs, ToolArgs, ToolCall, ToolKind};
use crate::timeline::{StitchSegment, TimeInterval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    Object,
    Array,
    Number,
    Integer,
    String,
}

/// The subset of JSON Schema the tool signatures use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSchema {
    #[serde(rename = "type")]
    pub ty: ParamType,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub properties: IndexMap<String, ParamSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Box<ParamSchema>>,
    #[serde(rename = "minItems", default, skip_serializing_if = "Option::is_none")]
    pub min_items: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimum: Option<Number>,
    #[serde(rename = "exclusiveMinimum", default, skip_serializing_if = "Option::is_none")]
    pub exclusive_minimum: Option<Number>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub required: Vec<String>,
}

impl ParamSchema {
    fn leaf(ty: ParamType) -> Self {
        Self {
            ty,
            properties: IndexMap::new(),
            items: None,
            min_items: None,
            minimum: None,
            exclusive_minimum: None,
            default: None,
            required: Vec::new(),
        }
    }

    fn string() -> Self {
        Self::leaf(ParamType::String)
    }

    fn number_min(min: u64) -> Self {
        Self {
            minimum: Some(min.into()),
            ..Self::leaf(ParamType::Number)
        }
    }

    fn number_positive() -> Self {
        Self {
            exclusive_minimum: Some(0u64.into()),
            ..Self::leaf(ParamType::Number)
        }
    }

    fn integer_min(min: u64) -> Self {
        Self {
            minimum: Some(min.into()),
            ..Self::leaf(ParamType::Integer)
        }
    }

    fn with_default(mut self, v: Value) -> Self {
        self.default = Some(v);
        self
    }

    fn object<const N: usize>(props: [(&str, ParamSchema); N], required: &[&str]) -> Self {
        Self {
            properties: props.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            required: required.iter().map(|s| s.to_string()).collect(),
            ..Self::leaf(ParamType::Object)
        }
    }

    fn interval() -> Self {
        Self::object(
            [("start_sec", Self::number_min(0)), ("end_sec", Self::number_positive())],
            &["start_sec", "end_sec"],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionDef {
    pub name: String,
    pub description: String,
    pub parameters: ParamSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDefinition {
    #[serde(rename = "type")]
    pub kind: String,
    pub function: FunctionDef,
}

pub const SEGMENT_DEFAULT_FPS: f64 = 1.0;
pub const SEGMENT_DEFAULT_MAX_FRAMES: u32 = 32;
pub const STITCH_DEFAULT_FPS: f64 = 0.5;
pub const STITCH_SEGMENT_DEFAULT_FPS: f64 = 1.0;
pub const STITCH_DEFAULT_MAX_FRAMES: u32 = 128;
pub const SCAN_DEFAULT_FPS: f64 = 0.25;
pub const SCAN_DEFAULT_MAX_FRAMES: u32 = 180;

fn definition(name: &str, description: &str, parameters: ParamSchema) -> ToolDefinition {
    ToolDefinition {
        kind: "function".into(),
        function: FunctionDef {
            name: name.into(),
            description: description.into(),
            parameters,
        },
    }
}

pub fn segment_definition() -> ToolDefinition {
    definition(
        "segment_observer",
        "Probe one interval with an MLLM under specified sampling.",
        ParamSchema::object(
            [
                ("interval", ParamSchema::interval()),
                ("query", ParamSchema::string()),
                ("fps", ParamSchema::number_positive().with_default(json!(1))),
                ("max_total_frames", ParamSchema::integer_min(1).with_default(json!(32))),
            ],
            &["interval", "query"],
        ),
    )
}

pub fn stitched_definition() -> ToolDefinition {
    let mut segment = ParamSchema::interval();
    segment
        .properties
        .insert("fps".into(), ParamSchema::number_positive().with_default(json!(1)));
    definition(
        "stitched_observer",
        "Probe multiple segments, stitch frames, then answer one question.",
        ParamSchema::object(
            [
                (
                    "segments",
                    ParamSchema {
                        items: Some(Box::new(segment)),
                        min_items: Some(1),
                        ..ParamSchema::leaf(ParamType::Array)
                    },
                ),
                ("query", ParamSchema::string()),
                ("global_interval", ParamSchema::interval()),
                ("fps", ParamSchema::number_positive().with_default(json!(0.5))),
                ("max_total_frames", ParamSchema::integer_min(1).with_default(json!(128))),
            ],
            &["segments", "query"],
        ),
    )
}

pub fn scan_definition() -> ToolDefinition {
    definition(
        "scan_observer",
        "Scan a global interval by slices and summarize each slice.",
        ParamSchema::object(
            [
                ("global_interval", ParamSchema::interval()),
                ("num_slices", ParamSchema::integer_min(1)),
                ("slice_duration_sec", ParamSchema::number_positive()),
                ("query", ParamSchema::string()),
                ("fps", ParamSchema::number_positive().with_default(json!(0.25))),
                ("max_total_frames", ParamSchema::integer_min(1).with_default(json!(180))),
            ],
            &["global_interval", "query"],
        ),
    )
}

pub fn finish_definition() -> ToolDefinition {
    definition(
        "finish",
        "Return the final answer and end the dialog.",
        ParamSchema::object([("answer", ParamSchema::string())], &["answer"]),
    )
}

/// The four tool definitions in wire order.
pub fn tool_definitions() -> Vec<ToolDefinition> {
    vec![
        segment_definition(),
        stitched_definition(),
        scan_definition(),
        finish_definition(),
    ]
}

pub fn tools_json() -> Value {
    serde_json::to_value(tool_definitions()).expect("tool schema serializes")
}

pub fn definition_for(kind: ToolKind) -> ToolDefinition {
    match kind {
        ToolKind::ScanSearch => scan_definition(),
        ToolKind::SegmentFocus => segment_definition(),
        ToolKind::StitchedVerify => stitched_definition(),
        ToolKind::Finish => finish_definition(),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("SchemaViolation at {path}: {constraint}")]
pub struct SchemaViolation {
    /// Dotted path, e.g. `interval.end_sec` or `segments[1].fps`.
    pub path: String,
    /// Violated keyword, e.g. `exclusiveMinimum`, `required`, `minItems`.
    pub constraint: String,
}

impl SchemaViolation {
    fn new(path: &str, constraint: &str) -> Self {
        Self {
            path: path.to_string(),
            constraint: constraint.to_string(),
        }
    }

    /// Last path component.
    pub fn field(&self) -> &str {
        let tail = self.path.rsplit('.').next().unwrap_or(&self.path);
        tail.split('[').next().unwrap_or(tail)
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn as_f64(n: &Number) -> f64 {
    n.as_f64().unwrap_or(f64::NAN)
}

/// Checks `value` against `schema`, returning a copy with absent optional
/// properties filled from schema defaults. Provided values pass through as is.
pub fn validate_value(schema: &ParamSchema, value: &Value, path: &str) -> Result<Value, SchemaViolation> {
    match schema.ty {
        ParamType::Object => {
            let obj = value.as_object().ok_or_else(|| SchemaViolation::new(path, "type"))?;
            for key in &schema.required {
                if !obj.contains_key(key) || obj[key].is_null() {
                    return Err(SchemaViolation::new(&join(path, key), "required"));
                }
            }
            let mut out = Map::new();
            for (key, v) in obj {
                if v.is_null() && !schema.required.contains(key) {
                    continue;
                }
                let filled = match schema.properties.get(key) {
                    Some(sub) => validate_value(sub, v, &join(path, key))?,
                    None => v.clone(),
                };
                out.insert(key.clone(), filled);
            }
            for (key, sub) in &schema.properties {
                if !out.contains_key(key) {
                    if let Some(d) = &sub.default {
                        out.insert(key.clone(), d.clone());
                    }
                }
            }
            Ok(Value::Object(out))
        }
        ParamType::Array => {
            let items = value.as_array().ok_or_else(|| SchemaViolation::new(path, "type"))?;
            if let Some(min) = schema.min_items {
                if (items.len() as u64) < min {
                    return Err(SchemaViolation::new(path, "minItems"));
                }
            }
            let mut out = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                let p = format!("{path}[{i}]");
                out.push(match &schema.items {
                    Some(sub) => validate_value(sub, item, &p)?,
                    None => item.clone(),
                });
            }
            Ok(Value::Array(out))
        }
        ParamType::Number | ParamType::Integer => {
            let n = value.as_f64().ok_or_else(|| SchemaViolation::new(path, "type"))?;
            if !n.is_finite() {
                return Err(SchemaViolation::new(path, "type"));
            }
            if schema.ty == ParamType::Integer && n.fract() != 0.0 {
                return Err(SchemaViolation::new(path, "type"));
            }
            if let Some(min) = &schema.minimum {
                if n < as_f64(min) {
                    return Err(SchemaViolation::new(path, "minimum"));
                }
            }
            if let Some(min) = &schema.exclusive_minimum {
                if n <= as_f64(min) {
                    return Err(SchemaViolation::new(path, "exclusiveMinimum"));
                }
            }
            Ok(value.clone())
        }
        ParamType::String => {
            if !value.is_string() {
                return Err(SchemaViolation::new(path, "type"));
            }
            Ok(value.clone())
        }
    }
}

fn get_f64(obj: &Map<String, Value>, key: &str) -> Option<f64> {
    obj.get(key).and_then(Value::as_f64)
}

fn get_u32(obj: &Map<String, Value>, key: &str, path: &str) -> Result<Option<u32>, SchemaViolation> {
    match obj.get(key).and_then(Value::as_f64) {
        None => Ok(None),
        Some(v) if v <= u32::MAX as f64 => Ok(Some(v as u32)),
        Some(_) => Err(SchemaViolation::new(&join(path, key), "maximum")),
    }
}

fn interval_from(v: &Value, path: &str) -> Result<TimeInterval, SchemaViolation> {
    let obj = v.as_object().ok_or_else(|| SchemaViolation::new(path, "type"))?;
    let iv = TimeInterval {
        start_sec: get_f64(obj, "start_sec").unwrap_or_default(),
        end_sec: get_f64(obj, "end_sec").unwrap_or_default(),
    };
    if iv.end_sec <= iv.start_sec {
        return Err(SchemaViolation::new(&join(path, "end_sec"), "greaterThanStart"));
    }
    Ok(iv)
}

/// Validates raw arguments for `kind` and builds the typed call.
///
/// Scan calls carrying both `num_slices` and `slice_duration_sec` are
/// rejected here; calls carrying neither pass and fail later at partition
/// time.
pub fn validate_args(kind: ToolKind, args: &Value, turn_index: u32) -> Result<ToolCall, SchemaViolation> {
    let def = definition_for(kind);
    let filled = validate_value(&def.function.parameters, args, "")?;
    let obj = filled.as_object().expect("validated object");
    let text = |key: &str| obj.get(key).and_then(Value::as_str).unwrap_or_default().to_string();

    let (query, args) = match kind {
        ToolKind::Finish => (text("answer"), ToolArgs::Finish),
        ToolKind::SegmentFocus => (
            text("query"),
            ToolArgs::Segment(SegmentArgs {
                interval: interval_from(&obj["interval"], "interval")?,
                fps: get_f64(obj, "fps").unwrap_or(SEGMENT_DEFAULT_FPS),
                max_total_frames: get_u32(obj, "max_total_frames", "")?.unwrap_or(SEGMENT_DEFAULT_MAX_FRAMES),
            }),
        ),
        ToolKind::StitchedVerify => {
            let segs = obj["segments"].as_array().expect("validated array");
            let mut segments = Vec::with_capacity(segs.len());
            for (i, seg) in segs.iter().enumerate() {
                let path = format!("segments[{i}]");
                segments.push(StitchSegment {
                    interval: interval_from(seg, &path)?,
                    fps: seg
                        .get("fps")
                        .and_then(Value::as_f64)
                        .unwrap_or(STITCH_SEGMENT_DEFAULT_FPS),
                });
            }
            let global_interval = match obj.get("global_interval") {
                Some(v) => Some(interval_from(v, "global_interval")?),
                None => None,
            };
            (
                text("query"),
                ToolArgs::Stitch(StitchArgs {
                    segments,
                    global_interval,
                    fps: get_f64(obj, "fps").unwrap_or(STITCH_DEFAULT_FPS),
                    max_total_frames: get_u32(obj, "max_total_frames", "")?.unwrap_or(STITCH_DEFAULT_MAX_FRAMES),
                }),
            )
        }
        ToolKind::ScanSearch => {
            let num_slices = get_u32(obj, "num_slices", "")?;
            let slice_duration_sec = get_f64(obj, "slice_duration_sec");
            if num_slices.is_some() && slice_duration_sec.is_some() {
                return Err(SchemaViolation::new("num_slices", "exclusivePartition"));
            }
            (
                text("query"),
                ToolArgs::Scan(ScanArgs {
                    global_interval: interval_from(&obj["global_interval"], "global_interval")?,
                    num_slices,
                    slice_duration_sec,
                    fps: get_f64(obj, "fps").unwrap_or(SCAN_DEFAULT_FPS),
                    max_total_frames: get_u32(obj, "max_total_frames", "")?.unwrap_or(SCAN_DEFAULT_MAX_FRAMES),
                }),
            )
        }
    };
    Ok(ToolCall {
        query,
        args,
        turn_index,
    })
}

fn interval_json(iv: &TimeInterval) -> Value {
    json!({ "start_sec": iv.start_sec, "end_sec": iv.end_sec })
}

/// Wire arguments for a typed call; the inverse of [`validate_args`].
pub fn arguments_json(call: &ToolCall) -> Value {
    match &call.args {
        ToolArgs::Finish => json!({ "answer": call.query }),
        ToolArgs::Segment(a) => json!({
            "interval": interval_json(&a.interval),
            "query": call.query,
            "fps": a.fps,
            "max_total_frames": a.max_total_frames,
        }),
        ToolArgs::Stitch(a) => {
            let mut v = json!({
                "segments": a.segments.iter().map(|s| json!({
                    "start_sec": s.interval.start_sec,
                    "end_sec": s.interval.end_sec,
                    "fps": s.fps,
                })).collect::<Vec<_>>(),
                "query": call.query,
                "fps": a.fps,
                "max_total_frames": a.max_total_frames,
            });
            if let Some(g) = &a.global_interval {
                v["global_interval"] = interval_json(g);
            }
            v
        }
        ToolArgs::Scan(a) => {
            let mut v = json!({
                "global_interval": interval_json(&a.global_interval),
                "query": call.query,
                "fps": a.fps,
                "max_total_frames": a.max_total_frames,
            });
            if let Some(n) = a.num_slices {
                v["num_slices"] = json!(n);
            }
            if let Some(d) = a.slice_duration_sec {
                v["slice_duration_sec"] = json!(d);
            }
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_defaults_are_filled() {
        let call = validate_args(
            ToolKind::SegmentFocus,
            &json!({"interval": {"start_sec": 10, "end_sec": 40}, "query": "what is shown"}),
            1,
        )
        .unwrap();
        match call.args {
            ToolArgs::Segment(a) => {
                assert_eq!(a.fps, 1.0);
                assert_eq!(a.max_total_frames, 32);
                assert_eq!(a.interval, TimeInterval::new(10.0, 40.0).unwrap());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn provided_values_are_not_replaced() {
        let call = validate_args(
            ToolKind::StitchedVerify,
            &json!({"segments": [{"start_sec": 0, "end_sec": 5, "fps": 3}, {"start_sec": 9, "end_sec": 12}],
                    "query": "q", "max_total_frames": 7}),
            2,
        )
        .unwrap();
        let ToolArgs::Stitch(a) = call.args else { panic!() };
        assert_eq!(a.segments[0].fps, 3.0);
        assert_eq!(a.segments[1].fps, 1.0);
        assert_eq!(a.fps, 0.5);
        assert_eq!(a.max_total_frames, 7);
        assert!(a.global_interval.is_none());
    }

    #[test]
    fn end_sec_zero_violates_exclusive_minimum() {
        let err = validate_args(
            ToolKind::SegmentFocus,
            &json!({"interval": {"start_sec": 0, "end_sec": 0}, "query": "q"}),
            1,
        )
        .unwrap_err();
        assert_eq!(err.field(), "end_sec");
        assert_eq!(err.path, "interval.end_sec");
        assert_eq!(err.constraint, "exclusiveMinimum");
    }

    #[test]
    fn empty_segments_violate_min_items() {
        let err = validate_args(ToolKind::StitchedVerify, &json!({"segments": [], "query": "q"}), 1).unwrap_err();
        assert_eq!(err.field(), "segments");
        assert_eq!(err.constraint, "minItems");
    }

    #[test]
    fn scan_without_partition_passes_schema() {
        let call = validate_args(
            ToolKind::ScanSearch,
            &json!({"global_interval": {"start_sec": 0, "end_sec": 600}, "query": "q"}),
            1,
        )
        .unwrap();
        let ToolArgs::Scan(a) = call.args else { panic!() };
        assert!(a.num_slices.is_none() && a.slice_duration_sec.is_none());
        assert_eq!(a.fps, 0.25);
        assert_eq!(a.max_total_frames, 180);
    }

    #[test]
    fn scan_with_both_partitions_is_rejected() {
        let err = validate_args(
            ToolKind::ScanSearch,
            &json!({"global_interval": {"start_sec": 0, "end_sec": 600}, "query": "q",
                    "num_slices": 3, "slice_duration_sec": 10}),
            1,
        )
        .unwrap_err();
        assert_eq!(err.constraint, "exclusivePartition");
    }

    #[test]
    fn other_violations() {
        let missing = validate_args(ToolKind::Finish, &json!({}), 1).unwrap_err();
        assert_eq!(
            (missing.path.as_str(), missing.constraint.as_str()),
            ("answer", "required")
        );
        let frac = validate_args(
            ToolKind::ScanSearch,
            &json!({"global_interval": {"start_sec": 0, "end_sec": 9}, "query": "q", "num_slices": 1.5}),
            1,
        )
        .unwrap_err();
        assert_eq!(frac.constraint, "type");
        let neg = validate_args(
            ToolKind::SegmentFocus,
            &json!({"interval": {"start_sec": -1, "end_sec": 4}, "query": "q"}),
            1,
        )
        .unwrap_err();
        assert_eq!(neg.constraint, "minimum");
        let caps = validate_args(
            ToolKind::SegmentFocus,
            &json!({"interval": {"start_sec": 1, "end_sec": 4}, "query": "q", "max_total_frames": 0}),
            1,
        )
        .unwrap_err();
        assert_eq!(caps.constraint, "minimum");
        let reversed = validate_args(
            ToolKind::SegmentFocus,
            &json!({"interval": {"start_sec": 9, "end_sec": 4}, "query": "q"}),
            1,
        )
        .unwrap_err();
        assert_eq!(reversed.path, "interval.end_sec");
    }
}
