//! Format reward: a weighted mix of section, type and validity rewards.

use serde::{Deserialize, Serialize};

use crate::model::{normalize_name, ActionDictionary, PlanField, PlanResponse};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormatConfig {
    pub w_section: f64,
    pub w_type: f64,
    pub w_validity: f64,
    /// Zero the whole format reward unless both think and answer tags exist.
    pub strict_tags: bool,
    /// Only credit a field if it appears after every earlier canonical field.
    pub order_sensitive: bool,
}

impl Default for FormatConfig {
    fn default() -> Self {
        Self {
            w_section: 0.3,
            w_type: 0.3,
            w_validity: 0.4,
            strict_tags: true,
            order_sensitive: false,
        }
    }
}

impl FormatConfig {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_section, self.w_type, self.w_validity];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "format weights must be >= 0, got {ws:?}"
            )));
        }
        let sum: f64 = ws.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "format weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FormatComponents {
    pub section: f64,
    pub type_: f64,
    pub validity: f64,
}

/// Fraction of the four fields present with the right kind.
pub fn section_reward(resp: &PlanResponse) -> f64 {
    section_reward_with(resp, false)
}

fn section_reward_with(resp: &PlanResponse, order_sensitive: bool) -> f64 {
    let credited = PlanField::ALL
        .iter()
        .filter(|&&f| resp.has_field(f) && (!order_sensitive || in_canonical_order(resp, f)))
        .count();
    credited as f64 / PlanField::ALL.len() as f64
}

fn in_canonical_order(resp: &PlanResponse, field: PlanField) -> bool {
    let Some(pos) = resp.field_order.iter().position(|&f| f == field) else {
        return false;
    };
    resp.field_order[..pos].iter().all(|&f| f < field)
        && resp.field_order[pos + 1..].iter().all(|&f| f > field)
}

/// Fraction of plan steps with an integer id and a non-empty string name.
/// An absent or empty plan scores 0.
pub fn type_reward(resp: &PlanResponse) -> f64 {
    let steps = resp.steps();
    if steps.is_empty() {
        return 0.0;
    }
    steps.iter().filter(|s| s.is_well_formed()).count() as f64 / steps.len() as f64
}

/// Among well-formed steps, the fraction whose name matches the dictionary
/// entry for its id. Unknown ids score 0; no well-formed steps scores 0.
pub fn validity_reward(resp: &PlanResponse, dict: &ActionDictionary) -> f64 {
    let mut candidates = 0usize;
    let mut matched = 0usize;
    for step in resp.steps() {
        let (Some(id), Some(name)) = (step.integer_id(), step.normalized_name()) else {
            continue;
        };
        candidates += 1;
        if dict
            .get(id)
            .is_some_and(|canon| normalize_name(canon) == name)
        {
            matched += 1;
        }
    }
    if candidates == 0 {
        0.0
    } else {
        matched as f64 / candidates as f64
    }
}

/// Weighted format reward and its components.
///
/// Under `strict_tags` a response missing either tag pair gets 0 for the
/// composite and for every component.
pub fn format_reward(
    resp: &PlanResponse,
    dict: &ActionDictionary,
    cfg: &FormatConfig,
) -> (f64, FormatComponents) {
    if cfg.strict_tags && !resp.has_tags() {
        return (0.0, FormatComponents::default());
    }
    let c = FormatComponents {
        section: section_reward_with(resp, cfg.order_sensitive),
        type_: type_reward(resp),
        validity: validity_reward(resp, dict),
    };
    (combine(c, cfg), c)
}

pub fn combine(c: FormatComponents, cfg: &FormatConfig) -> f64 {
    cfg.w_section * c.section + cfg.w_type * c.type_ + cfg.w_validity * c.validity
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActionStep, RawStep};
    use crate::parser::{parse_output, parse_response, render_response};
    use proptest::prelude::*;
    use serde_json::json;

    fn dict(entries: &[(u64, &str)]) -> ActionDictionary {
        ActionDictionary::new("t", entries.iter().map(|&(i, n)| (i, n.to_string()))).unwrap()
    }

    fn with_steps(steps: Vec<RawStep>) -> PlanResponse {
        PlanResponse {
            executable_plan: Some(steps),
            ..Default::default()
        }
    }

    #[test]
    fn section_examples() {
        let full = PlanResponse::from_steps("v", "r", "l", &[]);
        assert_eq!(section_reward(&full), 1.0);
        let mut missing = full.clone();
        missing.language_plan = None;
        assert_eq!(section_reward(&missing), 0.75);
        assert_eq!(section_reward(&parse_response("")), 0.0);
    }

    #[test]
    fn order_sensitive_sections() {
        let resp = parse_response(
            r#"{"language_plan": "l", "visual_state_description": "v",
                "reasoning_and_reflection": "r", "executable_plan": []}"#,
        );
        assert_eq!(section_reward_with(&resp, false), 1.0);
        // language_plan precedes fields that should come before it, and
        // visual/reasoning follow a later field.
        assert_eq!(section_reward_with(&resp, true), 0.25);
    }

    #[test]
    fn type_examples() {
        let good = with_steps(
            (1..=4)
                .map(|i| RawStep::new(json!(i), json!("go")))
                .collect(),
        );
        assert_eq!(type_reward(&good), 1.0);
        let mixed = with_steps(vec![
            RawStep::new(json!(1), json!("go")),
            RawStep::new(json!("x"), json!("go")),
            RawStep::new(json!(2), json!("")),
        ]);
        assert!((type_reward(&mixed) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(type_reward(&PlanResponse::default()), 0.0);
        assert_eq!(type_reward(&with_steps(vec![])), 0.0);
    }

    #[test]
    fn malformed_step_scores_zero_type() {
        let resp =
            parse_response(r#"{"executable_plan": [{"action_id": "four", "action_name": 7}]}"#);
        assert_eq!(type_reward(&resp), 0.0);
    }

    #[test]
    fn validity_examples() {
        let d = dict(&[(3, "pick up the apple")]);
        let r = with_steps(vec![RawStep::new(json!(3), json!("Pick Up The Apple"))]);
        assert_eq!(validity_reward(&r, &d), 1.0);
        let r = with_steps(vec![
            RawStep::new(json!(3), json!("pick up the apple")),
            RawStep::new(json!(9), json!("fly")),
        ]);
        assert_eq!(validity_reward(&r, &d), 0.5);
        let d = dict(&[(1, "a"), (2, "b")]);
        let r = with_steps(vec![
            RawStep::new(json!(1), json!("b")),
            RawStep::new(json!(2), json!("a")),
        ]);
        assert_eq!(validity_reward(&r, &d), 0.0);
        assert_eq!(validity_reward(&PlanResponse::default(), &d), 0.0);
    }

    #[test]
    fn format_examples() {
        let d = dict(&[(1, "go")]);
        let cfg = FormatConfig::default();
        let steps = [ActionStep::new(1, "go").unwrap()];
        let full = PlanResponse::from_steps("v", "r", "l", &steps);
        let tagged = parse_output(&render_response("t", &full));
        let (r, c) = format_reward(&tagged, &d, &cfg);
        assert_eq!((c.section, c.type_, c.validity), (1.0, 1.0, 1.0));
        assert_eq!(r, 1.0);

        let mut partial = full.clone();
        partial.language_plan = None;
        let tagged = parse_output(&render_response("t", &partial));
        let (r, _) = format_reward(&tagged, &d, &cfg);
        assert!((r - 0.925).abs() < 1e-12);

        let untagged = parse_output(&full.to_json().to_string());
        assert_eq!(untagged.present_fields(), 4);
        assert_eq!(format_reward(&untagged, &d, &cfg).0, 0.0);
        let lax = FormatConfig {
            strict_tags: false,
            ..cfg
        };
        assert_eq!(format_reward(&untagged, &d, &lax).0, 1.0);
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(FormatConfig::default().validate().is_ok());
        let bad = FormatConfig {
            w_validity: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn arb_raw_step() -> impl Strategy<Value = RawStep> {
        let id = prop_oneof![
            (0u64..8).prop_map(Value::from),
            Just(json!("x")),
            Just(json!(-1)),
            Just(json!(null)),
        ];
        let name = prop_oneof![
            "[a-h]".prop_map(Value::from),
            Just(json!("")),
            Just(json!(3)),
        ];
        (id, name).prop_map(|(i, n)| RawStep::new(i, n))
    }

    use serde_json::Value;

    fn letters_dict() -> ActionDictionary {
        dict(&[(0, "a"), (1, "b"), (2, "c"), (3, "d"), (4, "e"), (5, "f")])
    }

    proptest! {
        #[test]
        fn components_are_bounded(steps in proptest::collection::vec(arb_raw_step(), 0..12), text in "\\PC{0,40}") {
            let d = letters_dict();
            let mut resp = parse_output(&text);
            let (r, c) = format_reward(&resp, &d, &FormatConfig { strict_tags: false, ..Default::default() });
            for v in [r, c.section, c.type_, c.validity] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            resp.executable_plan = Some(steps);
            let (r, c) = format_reward(&resp, &d, &FormatConfig { strict_tags: false, ..Default::default() });
            for v in [r, c.section, c.type_, c.validity] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn permutation_insensitive(steps in proptest::collection::vec(arb_raw_step(), 0..12), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let d = letters_dict();
            let a = with_steps(steps.clone());
            let mut shuffled = steps;
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = with_steps(shuffled);
            prop_assert_eq!(section_reward(&a), section_reward(&b));
            prop_assert!((type_reward(&a) - type_reward(&b)).abs() < 1e-12);
            prop_assert!((validity_reward(&a, &d) - validity_reward(&b, &d)).abs() < 1e-12);
        }

        #[test]
        fn adding_a_valid_step_never_decreases(steps in proptest::collection::vec(arb_raw_step(), 0..12), pick in 0u64..6) {
            let d = letters_dict();
            let before = PlanResponse { executable_plan: Some(steps.clone()), ..PlanResponse::from_steps("v", "r", "l", &[]) };
            let mut more = steps;
            more.push(RawStep::new(json!(pick), json!(d.get(pick).unwrap())));
            let after = PlanResponse { executable_plan: Some(more), ..before.clone() };
            prop_assert!(section_reward(&after) >= section_reward(&before));
            prop_assert!(type_reward(&after) >= type_reward(&before));
            prop_assert!(validity_reward(&after, &d) >= validity_reward(&before, &d));
        }
    }
}
