//! Property tests for corpus persistence and document validation.

use std::collections::BTreeMap;

use compliance_core::model::{
    load_corpus, save_corpus, Guideline, GuidelineDocument, GuidelineRef, LabeledDialogue,
    ParseMode, Turn, TurnLabel, VariantKind, Workflow,
};
use compliance_core::model::{validate_document, Phase};
use proptest::prelude::*;

fn dialogue_with_text(assistant: String, user: String, violated: bool) -> LabeledDialogue {
    let workflow = Workflow {
        workflow_id: "wf".into(),
        intent: "intent".into(),
        phases: vec![Phase {
            phase_index: 1,
            guideline: Guideline::workflow("wf_p1", "do the step"),
        }],
    };
    let mut doc = GuidelineDocument {
        universal: vec![Guideline::universal("u1", "be kind")],
        workflow,
        conditions: vec![],
        injection_map: BTreeMap::new(),
    };
    if violated {
        doc.injection_map
            .insert("wf_p1".into(), VariantKind::WorkflowModified);
    }
    LabeledDialogue {
        dialogue_id: "dlg_prop".into(),
        domain: "airline".into(),
        turns: vec![Turn { assistant, user }],
        labels: vec![TurnLabel {
            guideline: GuidelineRef::workflow("wf_p1", 1),
            violated,
        }],
        source_document: doc.clone(),
        oracle_document: doc,
    }
}

proptest! {
    // save ∘ load is the identity on valid corpora, including arbitrary
    // unicode message text
    #[test]
    fn corpus_round_trip_is_identity(assistant in "\\PC{1,80}", user in "\\PC{0,80}", violated: bool) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prop.jsonl");
        let dialogues = vec![dialogue_with_text(assistant, user, violated)];
        save_corpus(&dialogues, &path).unwrap();
        let loaded = load_corpus(&path, ParseMode::Strict).unwrap();
        prop_assert_eq!(loaded, dialogues);
    }

    // validation is pure: same input, same report
    #[test]
    fn validation_is_deterministic(key in "[a-z_]{1,12}", content in "\\PC{0,40}") {
        let workflow = Workflow {
            workflow_id: "wf".into(),
            intent: "i".into(),
            phases: vec![Phase {
                phase_index: 1,
                guideline: Guideline {
                    key,
                    content,
                    category: compliance_core::GuidelineCategory::Workflow,
                    trigger: None,
                    action: None,
                },
            }],
        };
        let doc = GuidelineDocument {
            universal: vec![],
            workflow,
            conditions: vec![],
            injection_map: BTreeMap::new(),
        };
        prop_assert_eq!(validate_document(&doc), validate_document(&doc));
    }
}
