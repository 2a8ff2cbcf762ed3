//! Conversation-level properties over seeded scripted corpora.

use proptest::prelude::*;
use rand::Rng;
use triagesim_core::backend::simulated::scripted_pair;
use triagesim_core::backend::AgentBackend;
use triagesim_core::case::{Scale, Source, TriageCase, VitalName, VitalSet};
use triagesim_core::dialogue::{
    audit_information_hiding, run_conversation, Action, Agents, ConversationInputs, EngineConfig, Speaker, Termination,
};
use triagesim_core::persona::SeededPersonaSampler;
use triagesim_core::policy::load_policy;
use triagesim_core::rng::{seeded, stream};

fn random_case<R: Rng>(id: usize, rng: &mut R) -> TriageCase {
    let mut vitals = VitalSet::default();
    let mut set = |name: VitalName, lo: f64, hi: f64, rng: &mut R| {
        if rng.random_bool(0.85) {
            let v = (rng.random_range(lo..hi) * 10.0).round() / 10.0;
            match name {
                VitalName::Temperature => vitals.temperature = Some(v),
                VitalName::HeartRate => vitals.heart_rate = Some(v.round()),
                VitalName::RespiratoryRate => vitals.respiratory_rate = Some(v.round()),
                VitalName::SystolicBp => vitals.systolic_bp = Some(v.round()),
                VitalName::DiastolicBp => vitals.diastolic_bp = Some(v.round()),
                VitalName::O2Saturation => vitals.o2_saturation = Some(v.round()),
            }
        }
    };
    set(VitalName::Temperature, 35.0, 40.5, rng);
    set(VitalName::HeartRate, 45.0, 150.0, rng);
    set(VitalName::RespiratoryRate, 10.0, 32.0, rng);
    set(VitalName::SystolicBp, 80.0, 200.0, rng);
    set(VitalName::DiastolicBp, 40.0, 110.0, rng);
    set(VitalName::O2Saturation, 84.0, 100.0, rng);
    let complaints = [
        "chest pain",
        "shortness of breath",
        "ankle injury",
        "headache",
        "abdominal pain",
        "fever",
    ];
    let scale = if rng.random_bool(0.5) { Scale::Ats } else { Scale::Esi };
    TriageCase {
        case_id: format!("p{id:03}"),
        source: if scale == Scale::Ats {
            Source::Etek
        } else {
            Source::EsiHandbook
        },
        chief_complaint: complaints[rng.random_range(0..complaints.len())].into(),
        vitals,
        pain_score: rng.random_range(0..=10),
        ground_truth_acuity: rng.random_range(1..=5),
        scale: Some(scale),
        patient_demographics_hint: None,
    }
}

/// Runs one scripted conversation and checks every context the nurse agent
/// actually received: served readings present, unserved absent, no
/// ground-truth field. Returns the problems found.
fn check_conversation(seed: u64, id: usize) -> Vec<String> {
    let mut rng = stream(seed, &format!("case/{id}"));
    let case = random_case(id, &mut rng);
    let sampler = SeededPersonaSampler::default();
    let patient = sampler.sample_patient(&case, &mut rng);
    let nurse = sampler.sample_nurse(&mut rng);
    let policy = load_policy(case.scale.unwrap()).unwrap();
    let (nurse_agent, patient_agent) = scripted_pair(&case, &nurse, &patient, &mut rng);
    let run = run_conversation(
        ConversationInputs {
            conversation_id: &case.case_id,
            case: &case,
            nurse: &nurse,
            patient: &patient,
            policy: &policy,
        },
        Agents {
            nurse: &nurse_agent,
            patient: &patient_agent,
        },
        &EngineConfig::default(),
    )
    .expect("scripted conversation completes");
    let t = &run.transcript;
    let mut problems: Vec<String> = audit_information_hiding(t, &case, &policy, Some(&run.audit))
        .into_iter()
        .map(|v| v.detail)
        .collect();
    problems.extend(t.check_invariants());

    let calls = nurse_agent.calls();
    let nurse_turns: Vec<usize> = t
        .turns
        .iter()
        .filter(|x| x.speaker == Speaker::Nurse)
        .map(|x| x.index)
        .collect();
    if calls.len() != nurse_turns.len() {
        problems.push(format!(
            "{} nurse calls for {} nurse turns",
            calls.len(),
            nurse_turns.len()
        ));
    }
    for (call, &turn_index) in calls.iter().zip(&nurse_turns) {
        let mut text = call.system_prompt.clone();
        for m in &call.history {
            text.push('\n');
            text.push_str(&m.content);
        }
        if text.contains("ground_truth_acuity") {
            problems.push(format!("turn {turn_index}: ground-truth field visible"));
        }
        let served: Vec<VitalName> = t.turns[..turn_index]
            .iter()
            .filter(|x| x.action == Action::VitalResult)
            .filter_map(|x| x.vital_name)
            .collect();
        for name in VitalName::ALL {
            let reading = name.format_reading(case.vitals.get(name));
            let visible = text.contains(&reading);
            if served.contains(&name) != visible {
                problems.push(format!(
                    "turn {turn_index}: {name} served={} visible={visible}",
                    served.contains(&name)
                ));
            }
        }
    }
    for call in patient_agent.calls() {
        let mut text = call.system_prompt.clone();
        text.extend(call.history.iter().map(|m| format!("\n{}", m.content)));
        for (name, v) in case.vitals.measured() {
            if text.contains(&name.format_reading(Some(v))) {
                problems.push(format!("patient saw {name}"));
            }
        }
    }
    if t.termination != Termination::Triaged {
        problems.push(format!("terminated by {:?}", t.termination));
    }
    problems
}

#[test]
fn fifty_scripted_conversations_hide_information() {
    let problems: Vec<String> = (0..50).flat_map(|i| check_conversation(2024, i)).collect();
    assert!(problems.is_empty(), "{problems:#?}");
}

#[test]
fn scripted_generation_is_deterministic() {
    let run = |seed| {
        let mut rng = seeded(seed);
        let case = random_case(0, &mut rng);
        let sampler = SeededPersonaSampler::default();
        let patient = sampler.sample_patient(&case, &mut rng);
        let nurse = sampler.sample_nurse(&mut rng);
        let policy = load_policy(case.scale.unwrap()).unwrap();
        let (n, p) = scripted_pair(&case, &nurse, &patient, &mut rng);
        let run = run_conversation(
            ConversationInputs {
                conversation_id: "d",
                case: &case,
                nurse: &nurse,
                patient: &patient,
                policy: &policy,
            },
            Agents { nurse: &n, patient: &p },
            &EngineConfig::default(),
        )
        .unwrap();
        assert_eq!(run.transcript.generator_model_id, n.model_id());
        serde_json::to_string(&run.transcript).unwrap()
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_seed_yields_clean_contexts(seed in any::<u64>(), id in 0usize..1000) {
        let problems = check_conversation(seed, id);
        prop_assert!(problems.is_empty(), "{:?}", problems);
    }
}
