//! Rendered model input stays inside the budget for long random sessions.

use std::sync::Arc;

use mmreact_core::experts::{builtin_descriptors, ExpertCall, ExpertError, ExpertExecutor, ExpertOutput, ExpertRegistry, RawExpertOutput};
use mmreact_core::prompting::{build_prefix, render_dialogue, PrefixOptions, TokenBudget};
use mmreact_core::session::{MediaKind, Message, Role, SessionConfig, SessionState};
use proptest::prelude::*;

fn registry() -> ExpertRegistry {
    let exec: Arc<dyn ExpertExecutor> =
        Arc::new(|_: &ExpertCall<'_>| -> Result<ExpertOutput, ExpertError> { Ok(RawExpertOutput::PlainText("x".into()).into()) });
    let mut reg = ExpertRegistry::new();
    for d in builtin_descriptors() {
        reg.register(d, exec.clone()).unwrap();
    }
    reg
}

// role selector, text length, attach media
fn plan() -> impl Strategy<Value = Vec<(u8, usize, bool)>> {
    proptest::collection::vec((0u8..5, 1usize..1200, proptest::bool::weighted(0.1)), 200)
}

fn build(plan: &[(u8, usize, bool)]) -> SessionState {
    let mut s = SessionState::new(SessionConfig::default()).unwrap();
    let mut step = 0;
    for (i, &(role, len, media)) in plan.iter().enumerate() {
        let text: String = format!("m{i} ").chars().chain(std::iter::repeat('x')).take(len.max(4)).collect();
        let message = match role {
            0 | 1 => {
                step = 0;
                let ids = if media {
                    vec![s.register_media(&format!("media/{i}.png"), MediaKind::Image).unwrap().id]
                } else {
                    vec![]
                };
                Message::user(text, ids)
            }
            2 => Message::assistant_final(text),
            3 => {
                step += 1;
                Message::internal(Role::ActionRequest, text, step)
            }
            _ => {
                step += 1;
                Message::internal(Role::Observation, text, step)
            }
        };
        s.append_message(message).unwrap();
    }
    s
}

fn oracle_tokens(text: &str) -> usize {
    (text.chars().count() as f64 / 4.0).ceil() as usize
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn stays_in_budget(plan in plan()) {
        let session = build(&plan);
        let prefix = build_prefix(&registry(), &PrefixOptions::default()).unwrap();
        let input = render_dialogue(&session, &prefix, &TokenBudget::new(4096, 512).unwrap()).unwrap();
        let total: usize = input.segments().iter().map(|s| oracle_tokens(&s.text)).sum();
        prop_assert!(total <= 4096 - 512, "{total}");
        if let Some(latest) = session.messages().iter().rev().find(|m| m.role == Role::User) {
            prop_assert!(input.segments().iter().any(|s| s.text.ends_with(&latest.text)));
        }
    }
}
