//! Prompt builders for every LLM role in the pipeline.
//!
//! Prompts are versioned: `prompt_version()` hashes every template so
//! reports can cite exactly which prompt set produced them. Generation
//! roles default to temperature 0.7, judge roles to 0.0.

use crate::gateway::{ChatMessage, ChatRequest, ChatRole};
use crate::model::{GuidelineDocument, Turn, Workflow};
use crate::util::sha256_hex;

/// Request tags; script matchers and audit queries key off these.
pub mod tags {
    pub const SCALE_INTENTS: &str = "scale_intents";
    pub const SCALE_WORKFLOW: &str = "scale_workflow";
    pub const SCALE_CONDITIONS: &str = "scale_conditions";
    pub const REFINE_JUDGE: &str = "refine_judge";
    pub const REFINE_REWRITE: &str = "refine_rewrite";
    pub const SIMILARITY: &str = "similarity";
    pub const DEDUP_REWRITE: &str = "dedup_rewrite";
    pub const FORGE_GENERATE: &str = "forge_generate";
    pub const FORGE_CONDITION: &str = "forge_condition";
    pub const FORGE_CANDIDATE: &str = "forge_candidate";
    pub const FORGE_REPLY: &str = "forge_reply";
    pub const FORGE_CONTENT_JUDGE: &str = "forge_content_judge";
    pub const FORGE_COMPLIANCE_JUDGE: &str = "forge_compliance_judge";
    pub const CONSTRAINT_TEXT_OBSERVABLE: &str = "constraint_text_observable";
    pub const CONSTRAINT_MUTUAL_EXCLUSION: &str = "constraint_mutual_exclusion";
    pub const CONSTRAINT_CASE_COVERAGE: &str = "constraint_case_coverage";
    pub const SELECTOR: &str = "selector";
    pub const ASSISTANT: &str = "assistant";
    pub const ASSISTANT_REGEN: &str = "assistant_regen";
    pub const USER_SIM: &str = "user_sim";
    pub const PERSONA: &str = "persona";
    pub const VERIFY: &str = "verify";
    pub const COMPLIANCE_JUDGE: &str = "compliance_judge";
    pub const REWARD_JUDGE: &str = "reward_judge";
    pub const EMBEDDER: &str = "embedder";
    pub const SCORER: &str = "scorer";
}

const SYS_INTENTS: &str = "You expand the intent coverage of a contact-center domain. Produce the requested number of distinct user intents in a single response, as a JSON array of short strings. Do not repeat any provided seed intent and do not repeat yourself.";

const SYS_WORKFLOW: &str = "You design agent workflows for a contact-center domain. Produce exactly one workflow as JSON: {\"intent\": string, \"phases\": [{\"name\": string, \"content\": string}, ...]} with 3 to 8 phases. The workflow must not overlap in scope, procedure, or phrasing with any previously generated workflow shown below.";

const SYS_CONDITIONS: &str = "You write condition-triggered guidelines grounded in specific workflow steps. Produce a JSON array of objects {\"name\": string, \"trigger\": string, \"action\": string, \"grounded_in\": [workflow phase keys]}. Each trigger must be grounded in at least one listed phase key.";

const SYS_REFINE_JUDGE: &str = "You audit one workflow's guidelines. Judge whether the phases are non-overlapping (distinct in scope) and non-conflicting (no contradictory instructions). Reply with JSON {\"non_overlapping\": bool, \"non_conflicting\": bool, \"reason\": string}.";

const SYS_REFINE_REWRITE: &str = "You rewrite a workflow whose guidelines were judged problematic. Address every judge reason while preserving the intent. Reply with the full corrected workflow as JSON {\"intent\": string, \"phases\": [{\"name\": string, \"content\": string}, ...]}.";

const SYS_SIMILARITY: &str = "You rate how similar two agent workflows are in intent, procedure, and phrasing. Reply with a single integer from 0 (unrelated) to 100 (identical). No other text.";

const SYS_DEDUP_REWRITE: &str = "You rewrite a workflow that is too similar to others in the pool. Produce a workflow with the same intent area but clearly distinct scope, steps, and phrasing. Reply with JSON {\"intent\": string, \"phases\": [{\"name\": string, \"content\": string}, ...]}.";

const SYS_FORGE_GENERATE: &str = "You corrupt one oracle guideline into modified versions that are strictly incompatible with it while remaining realistic in a dialogue. Constraints: (1) each modification must introduce text-observable behavior changes (explicit phrases, different fields, distinct questions), not stylistic rephrasing; (2) guaranteed mutual exclusivity with the oracle: no subset/superset of it may remain satisfiable; (3) cover every case the oracle covers. Reply with a JSON array of modified guideline strings.";

const SYS_FORGE_CONDITION: &str = "You corrupt one condition guideline. Keep the trigger text verbatim and either omit the required triggered action or add behaviors that conflict with the oracle action. Reply with JSON {\"kind\": \"omit_action\"|\"add_conflict\", \"trigger\": string, \"action\": string}.";

const SYS_FORGE_CANDIDATE: &str = "You corrupt one oracle guideline and immediately rewrite the assistant's reply under the corrupted guideline. Apply the three constraints: text-observable behavior change, strict mutual exclusivity with the oracle (no subset/superset), and full case coverage. For a workflow guideline reply with JSON {\"guideline\": string, \"reply\": string}; for a condition guideline reply with JSON {\"kind\": \"omit_action\"|\"add_conflict\", \"trigger\": string, \"action\": string, \"reply\": string} keeping the trigger verbatim.";

const SYS_FORGE_REPLY: &str = "You are the contact-center assistant. Regenerate your reply for the current turn so that it follows the governing guideline below, given the conversation history. Reply with the assistant message only.";

const SYS_CONTENT_JUDGE: &str = "You compare an original assistant reply with a regenerated one and decide whether a reasonable behavior change occurred (different information requirements, omitted fields, altered routing), ignoring superficial differences in wording or tone. Reply with JSON {\"changed\": bool, \"feedback\": string}.";

const SYS_ADV_COMPLIANCE_JUDGE: &str = "You are a compliance judge. Given the oracle guideline and the conversation, decide whether the marked assistant turn violates the oracle guideline. Reply with JSON {\"detected\": bool, \"feedback\": string}.";

const SYS_CONSTRAINT_TEXT_OBSERVABLE: &str = "Decide whether the modified guideline forces text-observable behavior changes relative to the oracle (explicit phrases, different fields, distinct questions verifiable from text alone), not mere rephrasing. Reply with JSON {\"pass\": bool, \"note\": string}.";

const SYS_CONSTRAINT_MUTUAL_EXCLUSION: &str = "Decide whether the modified guideline is strictly mutually exclusive with the oracle. Probe subset/superset traps: if following the modification implicitly satisfies the original guideline (e.g. oracle 'provide at most 3 options' vs modified 'provide only 2 options'), it fails. Reply with JSON {\"pass\": bool, \"note\": string}.";

const SYS_CONSTRAINT_CASE_COVERAGE: &str = "Decide whether the modified guideline covers every case the oracle guideline covers. If the oracle handles multiple cases and the modification addresses only some, it fails. Reply with JSON {\"pass\": bool, \"note\": string}.";

const SYS_SELECTOR: &str = "You are the selector agent. Track workflow phase progress and condition triggers, and identify the single guideline that governs the assistant's next turn. Workflow phases never move backwards; a condition guideline governs only when its trigger has occurred. Reply with JSON {\"category\": \"workflow\"|\"condition\", \"key\": string, \"phase_index\": int (workflow only)}.";

const SYS_ASSISTANT: &str = "You are the contact-center assistant. Follow the governing guideline for this turn exactly, and always honor the universal compliance rules. Reply with the assistant message only.";

const SYS_ASSISTANT_REGEN: &str = "You are the contact-center assistant. Your previous reply for this turn failed adherence review. Regenerate it so it follows the governing guideline exactly, addressing the reviewer feedback. Reply with the assistant message only.";

const SYS_USER_SIM: &str = "You simulate the customer described by the persona. Act as a compliance auditor: steer the conversation toward the scenarios your goals name, stay natural, one message per turn. When your goals are complete, include the completion token in your message.";

const SYS_PERSONA: &str = "You create customer personas for simulated contact-center conversations. Reply with a JSON array of objects {\"name\": string, \"traits\": string, \"scenario_goal\": string}. Goals must make the customer exercise the listed target guidelines.";

const SYS_VERIFY: &str = "You verify that an assistant turn adheres to the guideline that governs it. Judge adherence to the governing guideline text as served, nothing else. Reply with JSON {\"adheres\": bool, \"feedback\": string}.";

const SYS_CHAT_JUDGE: &str = "You are a compliance judge for guideline-governed dialogues. For every assistant turn, identify which guideline governs it (category, key, and phase_index for workflow guidelines) and whether the turn violates that guideline. Reply with a JSON array containing exactly one object per assistant turn: {\"turn\": int (1-based), \"category\": \"workflow\"|\"condition\"|\"universal\", \"key\": string, \"phase_index\": int (workflow only), \"violation\": bool}. No other text.";

const SYS_REWARD_JUDGE: &str = "You judge whether a single assistant turn complies with the guideline document. Reply with exactly one word: COMPLIANT or VIOLATED.";

const ALL_TEMPLATES: &[&str] = &[
    SYS_INTENTS,
    SYS_WORKFLOW,
    SYS_CONDITIONS,
    SYS_REFINE_JUDGE,
    SYS_REFINE_REWRITE,
    SYS_SIMILARITY,
    SYS_DEDUP_REWRITE,
    SYS_FORGE_GENERATE,
    SYS_FORGE_CONDITION,
    SYS_FORGE_CANDIDATE,
    SYS_FORGE_REPLY,
    SYS_CONTENT_JUDGE,
    SYS_ADV_COMPLIANCE_JUDGE,
    SYS_CONSTRAINT_TEXT_OBSERVABLE,
    SYS_CONSTRAINT_MUTUAL_EXCLUSION,
    SYS_CONSTRAINT_CASE_COVERAGE,
    SYS_SELECTOR,
    SYS_ASSISTANT,
    SYS_ASSISTANT_REGEN,
    SYS_USER_SIM,
    SYS_PERSONA,
    SYS_VERIFY,
    SYS_CHAT_JUDGE,
    SYS_REWARD_JUDGE,
];

/// Stable hash of every prompt template, cited in reports and manifests.
pub fn prompt_version() -> String {
    let joined = ALL_TEMPLATES.join("\u{1f}");
    sha256_hex(joined.as_bytes())[..12].to_string()
}

/// Render assistant/user turns for judge and simulator prompts.
pub fn render_transcript(turns: &[Turn]) -> String {
    let mut out = String::new();
    for (i, turn) in turns.iter().enumerate() {
        out.push_str(&format!("[{}] Assistant: {}\n", i + 1, turn.assistant));
        if !turn.user.is_empty() {
            out.push_str(&format!("[{}] User: {}\n", i + 1, turn.user));
        }
    }
    out
}

fn render_workflow(workflow: &Workflow) -> String {
    let mut out = format!(
        "Workflow `{}` - intent: {}\n",
        workflow.workflow_id, workflow.intent
    );
    for phase in &workflow.phases {
        out.push_str(&format!(
            "{}. [{}] {}\n",
            phase.phase_index, phase.guideline.key, phase.guideline.content
        ));
    }
    out
}

pub fn intents(domain: &str, seed_intents: &[String], count: usize) -> ChatRequest {
    let user = format!(
        "Domain: {domain}\nNumber of new intents required: {count}\nSeed intents (do not repeat):\n{}",
        seed_intents
            .iter()
            .map(|s| format!("- {s}"))
            .collect::<Vec<_>>()
            .join("\n")
    );
    ChatRequest::single(tags::SCALE_INTENTS, SYS_INTENTS, user)
}

pub fn workflow_variant(domain: &str, intent: &str, existing: &[Workflow]) -> ChatRequest {
    let mut user = String::new();
    if !domain.is_empty() {
        user.push_str(&format!("Domain: {domain}\n"));
    }
    user.push_str(&format!("Intent: {intent}\n"));
    if existing.is_empty() {
        user.push_str("No previously generated workflows for this intent.\n");
    } else {
        user.push_str("Previously generated workflows (must not be duplicated):\n");
        for workflow in existing {
            user.push_str(&render_workflow(workflow));
        }
    }
    ChatRequest::single(tags::SCALE_WORKFLOW, SYS_WORKFLOW, user)
}

pub fn condition_guidelines(domain: &str, workflows: &[Workflow]) -> ChatRequest {
    let mut user = format!("Domain: {domain}\nWorkflows and their phase keys:\n");
    for workflow in workflows {
        user.push_str(&render_workflow(workflow));
    }
    ChatRequest::single(tags::SCALE_CONDITIONS, SYS_CONDITIONS, user)
}

pub fn refine_judge(workflow: &Workflow, seat: usize) -> ChatRequest {
    let user = format!("Judge seat: {seat}\n{}", render_workflow(workflow));
    ChatRequest::single(tags::REFINE_JUDGE, SYS_REFINE_JUDGE, user).with_temperature(0.0)
}

pub fn refine_rewrite(workflow: &Workflow, reasons: &[String]) -> ChatRequest {
    let user = format!(
        "{}\nJudge reasons to address:\n{}",
        render_workflow(workflow),
        reasons
            .iter()
            .map(|r| format!("- {r}"))
            .collect::<Vec<_>>()
            .join("\n")
    );
    ChatRequest::single(tags::REFINE_REWRITE, SYS_REFINE_REWRITE, user)
}

pub fn similarity(a: &Workflow, b: &Workflow) -> ChatRequest {
    let user = format!(
        "Pair: {} vs {}\n--- First workflow ---\n{}--- Second workflow ---\n{}",
        a.workflow_id,
        b.workflow_id,
        render_workflow(a),
        render_workflow(b)
    );
    ChatRequest::single(tags::SIMILARITY, SYS_SIMILARITY, user).with_temperature(0.0)
}

pub fn dedup_rewrite(duplicate: &Workflow, others: &[Workflow]) -> ChatRequest {
    let mut user = format!(
        "Workflow to rewrite:\n{}\nIt must become clearly distinct from all of:\n",
        render_workflow(duplicate)
    );
    for other in others {
        user.push_str(&render_workflow(other));
    }
    ChatRequest::single(tags::DEDUP_REWRITE, SYS_DEDUP_REWRITE, user)
}

pub fn forge_generate(oracle_content: &str, count: usize, feedback: &[String]) -> ChatRequest {
    let mut user =
        format!("Oracle guideline: {oracle_content}\nModified versions required: {count}\n");
    if !feedback.is_empty() {
        user.push_str("Accumulated judge feedback on earlier attempts:\n");
        for item in feedback {
            user.push_str(&format!("- {item}\n"));
        }
    }
    ChatRequest::single(tags::FORGE_GENERATE, SYS_FORGE_GENERATE, user)
}

pub fn forge_condition(trigger: &str, action: &str) -> ChatRequest {
    let user = format!("Oracle condition guideline.\nTrigger: {trigger}\nAction: {action}\n");
    ChatRequest::single(tags::FORGE_CONDITION, SYS_FORGE_CONDITION, user)
}

pub fn forge_candidate(
    oracle: &crate::model::Guideline,
    history: &[Turn],
    original_reply: &str,
    feedback: &[String],
) -> ChatRequest {
    let mut user = String::new();
    match (&oracle.trigger, &oracle.action) {
        (Some(trigger), Some(action)) => {
            user.push_str(&format!(
                "Oracle condition guideline.\nTrigger: {trigger}\nAction: {action}\n"
            ));
        }
        _ => user.push_str(&format!("Oracle guideline: {}\n", oracle.content)),
    }
    user.push_str(&format!(
        "Conversation history before this turn:\n{}Original assistant reply for this turn: {original_reply}\n",
        render_transcript(history)
    ));
    if !feedback.is_empty() {
        user.push_str("Accumulated judge feedback on earlier attempts:\n");
        for item in feedback {
            user.push_str(&format!("- {item}\n"));
        }
    }
    ChatRequest::single(tags::FORGE_CANDIDATE, SYS_FORGE_CANDIDATE, user)
}

pub fn forge_reply(variant_content: &str, history: &[Turn]) -> ChatRequest {
    let user = format!(
        "Governing guideline for this turn: {variant_content}\nConversation history before this turn:\n{}",
        render_transcript(history)
    );
    ChatRequest::single(tags::FORGE_REPLY, SYS_FORGE_REPLY, user)
}

pub fn content_judge(original: &str, regenerated: &str) -> ChatRequest {
    let user = format!("Original reply: {original}\nRegenerated reply: {regenerated}\n");
    ChatRequest::single(tags::FORGE_CONTENT_JUDGE, SYS_CONTENT_JUDGE, user).with_temperature(0.0)
}

pub fn adversarial_compliance_judge(
    oracle_content: &str,
    turns: &[Turn],
    turn_index: usize,
) -> ChatRequest {
    let user = format!(
        "Oracle guideline: {oracle_content}\nMarked turn: {turn_index}\nConversation:\n{}",
        render_transcript(turns)
    );
    ChatRequest::single(tags::FORGE_COMPLIANCE_JUDGE, SYS_ADV_COMPLIANCE_JUDGE, user)
        .with_temperature(0.0)
}

pub fn constraint_check(
    constraint_tag: &'static str,
    oracle_content: &str,
    variant_content: &str,
) -> ChatRequest {
    let system = match constraint_tag {
        tags::CONSTRAINT_TEXT_OBSERVABLE => SYS_CONSTRAINT_TEXT_OBSERVABLE,
        tags::CONSTRAINT_MUTUAL_EXCLUSION => SYS_CONSTRAINT_MUTUAL_EXCLUSION,
        _ => SYS_CONSTRAINT_CASE_COVERAGE,
    };
    let user =
        format!("Oracle guideline: {oracle_content}\nModified guideline: {variant_content}\n");
    ChatRequest::single(constraint_tag, system, user).with_temperature(0.0)
}

pub fn selector(doc: &GuidelineDocument, history: &[Turn], turn_index: usize) -> ChatRequest {
    let user = format!(
        "Turn index: {turn_index}\nGuideline document:\n{}\nConversation so far:\n{}",
        doc.render_canonical(),
        render_transcript(history)
    );
    ChatRequest::single(tags::SELECTOR, SYS_SELECTOR, user).with_temperature(0.0)
}

pub fn assistant(
    universal: &str,
    governing_content: &str,
    history: &[Turn],
    turn_index: usize,
) -> ChatRequest {
    let user = format!(
        "Turn index: {turn_index}\nUniversal compliance rules:\n{universal}\nGoverning guideline for this turn: {governing_content}\nConversation so far:\n{}",
        render_transcript(history)
    );
    ChatRequest::single(tags::ASSISTANT, SYS_ASSISTANT, user)
}

pub fn assistant_regen(
    governing_content: &str,
    history: &[Turn],
    turn_index: usize,
    previous_reply: &str,
    feedback: &[String],
) -> ChatRequest {
    let user = format!(
        "Turn index: {turn_index}\nGoverning guideline for this turn: {governing_content}\nConversation before this turn:\n{}Previous reply: {previous_reply}\nReviewer feedback:\n{}",
        render_transcript(history),
        feedback
            .iter()
            .map(|f| format!("- {f}"))
            .collect::<Vec<_>>()
            .join("\n")
    );
    ChatRequest::single(tags::ASSISTANT_REGEN, SYS_ASSISTANT_REGEN, user)
}

pub fn user_sim(
    persona: &crate::synth::Persona,
    history: &[Turn],
    latest_assistant: &str,
    assistant_turns: usize,
    sentinel: &str,
) -> ChatRequest {
    let user = format!(
        "Assistant turns so far: {assistant_turns}\nPersona: {} - {}\nScenario goal: {}\nCompletion token (emit when done): {sentinel}\nConversation so far:\n{}Latest assistant message: {latest_assistant}\n",
        persona.name,
        persona.traits,
        persona.scenario_goal,
        render_transcript(history)
    );
    ChatRequest::single(tags::USER_SIM, SYS_USER_SIM, user)
}

pub fn personas(domain: &str, target_keys: &[String], count: usize) -> ChatRequest {
    let targets = if target_keys.is_empty() {
        "none - plain goal-driven customer".to_string()
    } else {
        target_keys.join(", ")
    };
    let user =
        format!("Domain: {domain}\nPersonas required: {count}\nTarget guideline keys: {targets}\n");
    ChatRequest::single(tags::PERSONA, SYS_PERSONA, user)
}

pub fn verifier(
    seat: usize,
    governing_content: &str,
    reply: &str,
    turn_index: usize,
) -> ChatRequest {
    let user = format!(
        "Panel seat: {seat}\nTurn index: {turn_index}\nGoverning guideline: {governing_content}\nAssistant reply: {reply}\n"
    );
    ChatRequest::single(tags::VERIFY, SYS_VERIFY, user).with_temperature(0.0)
}

pub fn chat_judge(doc: &GuidelineDocument, turns: &[Turn]) -> ChatRequest {
    let user = format!(
        "Guideline document:\n{}\nAssistant turns to judge: {}\nConversation:\n{}",
        doc.render_canonical(),
        turns.len(),
        render_transcript(turns)
    );
    ChatRequest::single(tags::COMPLIANCE_JUDGE, SYS_CHAT_JUDGE, user).with_temperature(0.0)
}

/// Follow-up repair request after a malformed judge output: keeps the
/// original prompt, quotes the model's raw output and the parse error, and
/// restates the schema.
pub fn chat_judge_repair(original: &ChatRequest, raw_output: &str, error: &str) -> ChatRequest {
    let mut request = original.clone();
    let raw = if raw_output.is_empty() {
        "(empty)"
    } else {
        raw_output
    };
    request.messages.push(ChatMessage {
        role: ChatRole::Assistant,
        content: raw.to_string(),
    });
    request.messages.push(ChatMessage {
        role: ChatRole::User,
        content: format!(
            "Your previous output could not be parsed: {error}\nReply again with ONLY the JSON array, one object per assistant turn, schema: {{\"turn\": int, \"category\": \"workflow\"|\"condition\"|\"universal\", \"key\": string, \"phase_index\": int (workflow only), \"violation\": bool}}."
        ),
    });
    request
}

pub fn reward_generative(doc: &GuidelineDocument, turn: &Turn, turn_index: usize) -> ChatRequest {
    let user = format!(
        "Guideline document:\n{}\nAssistant turn {turn_index}: {}\n",
        doc.render_canonical(),
        turn.assistant
    );
    ChatRequest::single(tags::REWARD_JUDGE, SYS_REWARD_JUDGE, user).with_temperature(0.0)
}

/// Conversation prefix up to and including assistant turn `turn_index`
/// (1-based), as alternating chat messages for classifier scoring.
pub fn reward_prefix(turns: &[Turn], turn_index: usize) -> ChatRequest {
    let mut messages = Vec::new();
    for (i, turn) in turns.iter().enumerate().take(turn_index) {
        messages.push(ChatMessage {
            role: ChatRole::Assistant,
            content: turn.assistant.clone(),
        });
        if i + 1 < turn_index && !turn.user.is_empty() {
            messages.push(ChatMessage {
                role: ChatRole::User,
                content: turn.user.clone(),
            });
        }
    }
    ChatRequest {
        tag: tags::SCORER.to_string(),
        system_prompt: String::new(),
        messages,
        temperature: 0.0,
        seed: None,
    }
}
