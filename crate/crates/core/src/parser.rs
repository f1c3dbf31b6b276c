//! Extraction of structured plans from raw model output.
//!
//! Nothing in here fails on malformed text. Every deviation becomes a
//! [`ParseIssue`] on the returned [`PlanResponse`] so the format reward can
//! score it.

use serde_json::{Map, Value};

use crate::model::{lossless_integer, ActionStep, ParseIssue, PlanField, PlanResponse, RawStep};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

const STEP_ID_KEY: &str = "action_id";
const STEP_NAME_KEY: &str = "action_name";

/// Returns the text inside the first think pair and the first answer pair.
///
/// A pair is the first closing tag that has an opening tag before it,
/// matched with the nearest such opening tag, so nested tags yield the
/// innermost text. Unclosed or missing pairs yield `None`.
pub fn split_tags(raw: &str) -> (Option<String>, Option<String>) {
    (
        first_pair(raw, THINK_OPEN, THINK_CLOSE).map(str::to_owned),
        first_pair(raw, ANSWER_OPEN, ANSWER_CLOSE).map(str::to_owned),
    )
}

fn first_pair<'a>(raw: &'a str, open: &str, close: &str) -> Option<&'a str> {
    for (close_at, _) in raw.match_indices(close) {
        if let Some(open_at) = raw[..close_at].rfind(open) {
            return Some(&raw[open_at + open.len()..close_at]);
        }
    }
    None
}

/// Parses a full model output: tag regions first, then the plan object.
///
/// When the answer pair is missing the whole output is searched for an
/// object instead; the missing tags are still recorded so a strict format
/// policy can zero the reward.
pub fn parse_output(raw: &str) -> PlanResponse {
    let (think, answer) = split_tags(raw);
    let mut resp = match &answer {
        Some(text) => parse_response(text),
        None => parse_response(raw),
    };
    let mut tag_issues = Vec::new();
    if think.is_none() {
        tag_issues.push(ParseIssue::MissingThinkTags);
    }
    if answer.is_none() {
        tag_issues.push(ParseIssue::MissingAnswerTags);
    }
    tag_issues.append(&mut resp.diagnostics);
    resp.diagnostics = tag_issues;
    resp.raw_think = think;
    resp.raw_answer = answer;
    resp
}

/// Lossy variant of [`parse_output`] for arbitrary bytes.
pub fn parse_output_bytes(raw: &[u8]) -> PlanResponse {
    parse_output(&String::from_utf8_lossy(raw))
}

/// Parses the first complete JSON object in `answer_text`.
pub fn parse_response(answer_text: &str) -> PlanResponse {
    let mut resp = PlanResponse::default();
    let Some((start, end)) = find_object(answer_text, 0) else {
        resp.diagnostics.push(if answer_text.contains('{') {
            ParseIssue::InvalidJson("unterminated object".into())
        } else {
            ParseIssue::NoObject
        });
        return resp;
    };
    if find_object(answer_text, end).is_some() {
        resp.diagnostics.push(ParseIssue::ExtraObject);
    }
    let slice = &answer_text[start..end];
    let value = match serde_json::from_str::<Value>(slice) {
        Ok(v) => v,
        Err(first_err) => {
            let (cleaned, stripped) = strip_trailing_commas(slice);
            match serde_json::from_str::<Value>(&cleaned) {
                Ok(v) if stripped => {
                    resp.diagnostics.push(ParseIssue::TrailingCommas);
                    v
                }
                _ => {
                    resp.diagnostics
                        .push(ParseIssue::InvalidJson(first_err.to_string()));
                    return resp;
                }
            }
        }
    };
    match value {
        Value::Object(map) => fill_fields(&mut resp, &map),
        _ => resp.diagnostics.push(ParseIssue::NotAnObject),
    }
    resp
}

fn fill_fields(resp: &mut PlanResponse, map: &Map<String, Value>) {
    for (key, value) in map {
        let Some(field) = PlanField::from_key(key) else {
            resp.diagnostics
                .push(ParseIssue::UnexpectedKey(key.clone()));
            continue;
        };
        resp.field_order.push(field);
        match (field, value) {
            (PlanField::ExecutablePlan, Value::Array(items)) => {
                resp.executable_plan = Some(parse_steps(items, &mut resp.diagnostics));
            }
            (PlanField::ExecutablePlan, other) => resp.diagnostics.push(ParseIssue::WrongKind {
                field,
                found: kind_name(other),
            }),
            (_, Value::String(s)) => {
                let slot = match field {
                    PlanField::VisualStateDescription => &mut resp.visual_state_description,
                    PlanField::ReasoningAndReflection => &mut resp.reasoning_and_reflection,
                    _ => &mut resp.language_plan,
                };
                *slot = Some(s.clone());
            }
            (_, other) => resp.diagnostics.push(ParseIssue::WrongKind {
                field,
                found: kind_name(other),
            }),
        }
    }
    for field in PlanField::ALL {
        if !resp.field_order.contains(&field) {
            resp.diagnostics.push(ParseIssue::MissingField(field));
        }
    }
    if resp.field_order.windows(2).any(|w| w[0] > w[1]) {
        resp.diagnostics.push(ParseIssue::FieldsOutOfOrder);
    }
}

fn parse_steps(items: &[Value], diagnostics: &mut Vec<ParseIssue>) -> Vec<RawStep> {
    let mut steps = Vec::with_capacity(items.len());
    for (index, item) in items.iter().enumerate() {
        let Value::Object(obj) = item else {
            diagnostics.push(ParseIssue::StepNotAnObject { index });
            steps.push(RawStep::default());
            continue;
        };
        let mut take = |key: &'static str| match obj.get(key) {
            Some(v) => v.clone(),
            None => {
                diagnostics.push(ParseIssue::StepMissingKey { index, key });
                Value::Null
            }
        };
        let step = RawStep::new(take(STEP_ID_KEY), take(STEP_NAME_KEY));
        for key in obj.keys() {
            if key != STEP_ID_KEY && key != STEP_NAME_KEY {
                diagnostics.push(ParseIssue::StepUnexpectedKey {
                    index,
                    key: key.clone(),
                });
            }
        }
        if let Value::String(s) = &step.action_id_value {
            if lossless_integer(s).is_some() {
                diagnostics.push(ParseIssue::StringEncodedId { index });
            }
        }
        if !step.is_well_formed() {
            diagnostics.push(ParseIssue::MalformedStep { index });
        }
        steps.push(step);
    }
    steps
}

fn kind_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Byte range of the first brace-balanced `{...}` at or after `from`,
/// ignoring braces inside JSON string literals.
fn find_object(text: &str, from: usize) -> Option<(usize, usize)> {
    let bytes = text.as_bytes();
    let start = from + text[from..].find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((start, start + offset + 1));
                }
            }
            _ => {}
        }
    }
    None
}

/// Removes commas that directly precede `}` or `]` (modulo whitespace),
/// outside string literals.
fn strip_trailing_commas(text: &str) -> (String, bool) {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut stripped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            out.push(c);
            continue;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                stripped = true;
                continue;
            }
        }
        if c == '"' {
            in_string = true;
        }
        out.push(c);
    }
    (out, stripped)
}

/// Typed action sequence for the accuracy rewards.
///
/// Keeps only steps with an integer id and a non-empty string name, in
/// their original order, with names normalized. Dropped steps still count
/// against the type reward.
pub fn extract_steps(resp: &PlanResponse) -> Vec<ActionStep> {
    resp.steps()
        .iter()
        .filter_map(|s| {
            Some(ActionStep {
                action_id: s.integer_id()?,
                name: s.normalized_name()?,
            })
        })
        .collect()
}

impl PlanResponse {
    /// A well-formed response carrying `steps` as its executable plan.
    pub fn from_steps(
        visual_state_description: &str,
        reasoning_and_reflection: &str,
        language_plan: &str,
        steps: &[ActionStep],
    ) -> Self {
        PlanResponse {
            visual_state_description: Some(visual_state_description.to_owned()),
            reasoning_and_reflection: Some(reasoning_and_reflection.to_owned()),
            language_plan: Some(language_plan.to_owned()),
            executable_plan: Some(
                steps
                    .iter()
                    .map(|s| RawStep::new(Value::from(s.action_id), Value::from(s.name.clone())))
                    .collect(),
            ),
            field_order: PlanField::ALL.to_vec(),
            ..Default::default()
        }
    }

    /// The plan object as JSON with present fields in canonical key order.
    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        let text_fields = [
            (
                PlanField::VisualStateDescription,
                &self.visual_state_description,
            ),
            (
                PlanField::ReasoningAndReflection,
                &self.reasoning_and_reflection,
            ),
            (PlanField::LanguagePlan, &self.language_plan),
        ];
        for (field, value) in text_fields {
            if let Some(v) = value {
                map.insert(field.key().to_owned(), Value::from(v.clone()));
            }
        }
        if let Some(steps) = &self.executable_plan {
            let items = steps
                .iter()
                .map(|s| {
                    let mut step = Map::new();
                    step.insert(STEP_ID_KEY.to_owned(), s.action_id_value.clone());
                    step.insert(STEP_NAME_KEY.to_owned(), s.name_value.clone());
                    Value::Object(step)
                })
                .collect();
            map.insert(
                PlanField::ExecutablePlan.key().to_owned(),
                Value::Array(items),
            );
        }
        Value::Object(map)
    }
}

/// Renders `response` through the tagged output template.
pub fn render_response(think: &str, response: &PlanResponse) -> String {
    format!(
        "{THINK_OPEN}{think}{THINK_CLOSE}{ANSWER_OPEN}{}{ANSWER_CLOSE}",
        response.to_json()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::normalize_name;
    use proptest::prelude::*;
    use serde_json::json;

    /// Stack-based tag scanner used as an independent oracle for
    /// `split_tags`: walks tokens left to right, pushing opens and popping
    /// on the first close that has a pending open.
    fn scan_tags(raw: &str, open: &str, close: &str) -> Option<String> {
        let mut i = 0;
        let mut last_open: Option<usize> = None;
        while i < raw.len() {
            if raw[i..].starts_with(open) {
                last_open = Some(i + open.len());
                i += open.len();
            } else if raw[i..].starts_with(close) {
                if let Some(s) = last_open {
                    return Some(raw[s..i].to_string());
                }
                i += close.len();
            } else {
                i += raw[i..].chars().next().unwrap().len_utf8();
            }
        }
        None
    }

    fn malformed_corpus() -> Vec<String> {
        let frags = [
            "<think>",
            "</think>",
            "<answer>",
            "</answer>",
            "a",
            "b",
            "<Think>",
            "</ANSWER>",
            "<answer",
            "think>",
            "{}",
            " ",
        ];
        // Deterministic corpus: every ordered combination of three fragments.
        let mut out = Vec::new();
        for a in frags {
            for b in frags {
                for c in frags {
                    out.push(format!("{a}{b}{c}"));
                }
            }
        }
        out.push("<think>plan it</think><answer>{...}</answer>".into());
        out.push("no tags at all".into());
        out.push("<think>a<answer>b</answer>".into());
        out
    }

    #[test]
    fn split_tags_examples() {
        assert_eq!(
            split_tags("<think>plan it</think><answer>{...}</answer>"),
            (Some("plan it".into()), Some("{...}".into()))
        );
        assert_eq!(split_tags("no tags at all"), (None, None));
        assert_eq!(
            split_tags("<think>a<answer>b</answer>"),
            (None, Some("b".into()))
        );
        assert_eq!(split_tags("<THINK>x</THINK>"), (None, None));
        assert_eq!(
            split_tags("<think>o<think>inner</think></think>")
                .0
                .as_deref(),
            Some("inner")
        );
    }

    #[test]
    fn split_tags_matches_scanner_oracle() {
        let corpus = malformed_corpus();
        assert!(corpus.len() >= 50);
        for case in &corpus {
            let (t, a) = split_tags(case);
            assert_eq!(
                t,
                scan_tags(case, THINK_OPEN, THINK_CLOSE),
                "think: {case:?}"
            );
            assert_eq!(
                a,
                scan_tags(case, ANSWER_OPEN, ANSWER_CLOSE),
                "answer: {case:?}"
            );
        }
    }

    fn full_object() -> Value {
        json!({
            "visual_state_description": "a kitchen",
            "reasoning_and_reflection": "find it first",
            "language_plan": "find then pick",
            "executable_plan": [{"action_id": 4, "action_name": "find the apple"}]
        })
    }

    #[test]
    fn parses_full_object() {
        let r = parse_response(&full_object().to_string());
        assert_eq!(r.present_fields(), 4);
        assert_eq!(r.steps().len(), 1);
        assert!(r.diagnostics.is_empty(), "{:?}", r.diagnostics);
    }

    #[test]
    fn missing_field_is_diagnosed() {
        let mut obj = full_object();
        obj.as_object_mut().unwrap().shift_remove("language_plan");
        let r = parse_response(&obj.to_string());
        assert_eq!(r.present_fields(), 3);
        assert!(r
            .diagnostics
            .contains(&ParseIssue::MissingField(PlanField::LanguagePlan)));
    }

    #[test]
    fn malformed_step_values_are_preserved() {
        let mut obj = full_object();
        obj["executable_plan"] = json!([{"action_id": "four", "action_name": 7}]);
        let r = parse_response(&obj.to_string());
        assert_eq!(r.steps()[0], RawStep::new(json!("four"), json!(7)));
        assert!(r
            .diagnostics
            .contains(&ParseIssue::MalformedStep { index: 0 }));
    }

    #[test]
    fn wrong_kinds_leave_fields_absent() {
        let r = parse_response(
            r#"{"visual_state_description": 3, "reasoning_and_reflection": null,
                "language_plan": ["x"], "executable_plan": "go"}"#,
        );
        assert_eq!(r.present_fields(), 0);
        assert_eq!(r.field_order.len(), 4);
        assert_eq!(
            r.diagnostics
                .iter()
                .filter(|d| matches!(d, ParseIssue::WrongKind { .. }))
                .count(),
            4
        );
    }

    #[test]
    fn no_object_yields_empty_response() {
        let r = parse_response("just prose");
        assert_eq!(r.present_fields(), 0);
        assert_eq!(r.diagnostics, vec![ParseIssue::NoObject]);
        let r = parse_response("{\"a\": ");
        assert!(matches!(r.diagnostics[0], ParseIssue::InvalidJson(_)));
    }

    #[test]
    fn trailing_commas_are_tolerated_with_diagnostic() {
        let text = r#"{"visual_state_description": "v", "reasoning_and_reflection": "r",
            "language_plan": "l", "executable_plan": [{"action_id": 1, "action_name": "go",},],}"#;
        let r = parse_response(text);
        assert_eq!(r.present_fields(), 4);
        assert!(r.diagnostics.contains(&ParseIssue::TrailingCommas));
        // A comma inside a string is left alone.
        let r = parse_response(r#"{"language_plan": "a,}", }"#);
        assert_eq!(r.language_plan.as_deref(), Some("a,}"));
    }

    #[test]
    fn string_ids_are_accepted_losslessly_with_diagnostic() {
        let r = parse_response(r#"{"executable_plan": [{"action_id": "3", "action_name": "go"}]}"#);
        assert_eq!(r.steps()[0].integer_id(), Some(3));
        assert!(r
            .diagnostics
            .contains(&ParseIssue::StringEncodedId { index: 0 }));
    }

    #[test]
    fn first_object_wins() {
        let r = parse_response(r#"{"language_plan": "one"} {"language_plan": "two"}"#);
        assert_eq!(r.language_plan.as_deref(), Some("one"));
        assert!(r.diagnostics.contains(&ParseIssue::ExtraObject));
    }

    #[test]
    fn braces_inside_strings_do_not_confuse_object_search() {
        let r = parse_response(r#"prefix {"language_plan": "use } and {"} tail"#);
        assert_eq!(r.language_plan.as_deref(), Some("use } and {"));
    }

    #[test]
    fn out_of_order_fields_are_noted() {
        let r = parse_response(
            r#"{"executable_plan": [], "visual_state_description": "v",
                "reasoning_and_reflection": "r", "language_plan": "l"}"#,
        );
        assert_eq!(r.present_fields(), 4);
        assert!(r.diagnostics.contains(&ParseIssue::FieldsOutOfOrder));
    }

    #[test]
    fn output_without_answer_tags_falls_back_to_whole_text() {
        let r = parse_output(&full_object().to_string());
        assert_eq!(r.present_fields(), 4);
        assert!(r.raw_answer.is_none());
        assert!(r.diagnostics.contains(&ParseIssue::MissingAnswerTags));
    }

    #[test]
    fn extract_steps_filters_and_keeps_order() {
        let resp = PlanResponse {
            executable_plan: Some(vec![
                RawStep::new(json!(1), json!("Go To Table")),
                RawStep::new(json!("x"), json!("bad")),
            ]),
            ..Default::default()
        };
        assert_eq!(
            extract_steps(&resp),
            vec![ActionStep::new(1, "go to table").unwrap()]
        );
        assert!(extract_steps(&PlanResponse::default()).is_empty());

        let steps: Vec<ActionStep> = (0..10)
            .map(|i| ActionStep::new(i * 3 + 1, &format!("act {i}")).unwrap())
            .collect();
        let resp = PlanResponse::from_steps("v", "r", "l", &steps);
        let out = extract_steps(&resp);
        assert_eq!(out.len(), 10);
        for (i, s) in out.iter().enumerate() {
            assert_eq!(s, &steps[i]);
        }
    }

    fn field_equal(a: &PlanResponse, b: &PlanResponse) -> bool {
        a.visual_state_description == b.visual_state_description
            && a.reasoning_and_reflection == b.reasoning_and_reflection
            && a.language_plan == b.language_plan
            && a.executable_plan == b.executable_plan
    }

    proptest! {
        #[test]
        fn parse_output_never_panics(s in "\\PC*") {
            let _ = parse_output(&s);
        }

        #[test]
        fn parse_output_never_panics_on_bytes(b in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = parse_output_bytes(&b);
        }

        #[test]
        fn parse_output_never_panics_on_jsonish(s in "[{}\\[\\]\",: a1<>/thinkswer\\\\]{0,64}") {
            let _ = parse_output(&s);
        }

        #[test]
        fn render_then_parse_round_trips(
            v in "\\PC{0,20}", r in "\\PC{0,20}", l in "\\PC{0,20}",
            steps in proptest::collection::vec((0u64..1000, "[a-z]{1,6}( [a-z]{1,6}){0,2}"), 0..12),
            think in "[a-z ]{0,20}",
        ) {
            let steps: Vec<ActionStep> =
                steps.iter().map(|(id, n)| ActionStep::new(*id, n).unwrap()).collect();
            let resp = PlanResponse::from_steps(&v, &r, &l, &steps);
            let back = parse_output(&render_response(&think, &resp));
            prop_assert!(field_equal(&resp, &back));
            prop_assert_eq!(back.raw_think.as_deref(), Some(think.as_str()));
            prop_assert_eq!(extract_steps(&back), steps);
        }

        #[test]
        fn extract_steps_is_an_ordered_filter(
            ids in proptest::collection::vec(prop_oneof![
                (0u64..50).prop_map(Value::from),
                Just(json!("x")),
                Just(json!(null)),
            ], 0..16),
        ) {
            let raw: Vec<RawStep> = ids
                .iter()
                .enumerate()
                .map(|(i, id)| RawStep::new(id.clone(), json!(format!("a{i}"))))
                .collect();
            let resp = PlanResponse { executable_plan: Some(raw.clone()), ..Default::default() };
            let out = extract_steps(&resp);
            prop_assert!(out.len() <= raw.len());
            let expected: Vec<String> = raw
                .iter()
                .filter(|s| s.is_well_formed())
                .map(|s| s.normalized_name().unwrap())
                .collect();
            let names: Vec<String> = out.into_iter().map(|s| s.name).collect();
            prop_assert_eq!(names, expected);
        }
    }

    #[test]
    fn normalized_name_used_for_steps() {
        let resp = PlanResponse {
            executable_plan: Some(vec![RawStep::new(json!(2), json!("  PICK  Up "))]),
            ..Default::default()
        };
        assert_eq!(extract_steps(&resp)[0].name, normalize_name("pick up"));
    }
}
