//! The pipeline stages. Each stage reads upstream artifacts from the corpus,
//! writes its own through [`Corpus`], and records itself in the manifest.
//!
//! Per-conversation work runs on a rayon pool bounded by `--jobs`; results
//! are folded into the manifest in conversation-id order, so outputs do not
//! depend on scheduling. Every random draw comes from a stream derived from
//! the run seed and a label naming the stage and conversation.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};
use triagesim_core::backend::{pick_generator, simulated, AgentBackend, RemoteBackend};
use triagesim_core::case::{assign_scale, ingest_cases, to_jsonl, CaseStore, Rejection};
use triagesim_core::dialogue::{
    audit_information_hiding, run_conversation, Agents, ConversationInputs, EngineError, Speaker, Transcript,
};
use triagesim_core::http::UreqTransport;
use triagesim_core::metrics::red_flag_prf;
use triagesim_core::metrics::{
    behavioural_report, corpus_stats, cosine_similarity, detect_corpus, render_stats_table, spearman_rho,
    BehaviouralReport, CorpusEntry, CorpusStats, DisfluencyCounts, DisfluencyDetector, DisfluencyRates, Normalizer,
    RedFlagScores, WerAccumulator,
};
use triagesim_core::persona::{validate_persona, SeededPersonaSampler};
use triagesim_core::policy::{load_policy, load_policy_file};
use triagesim_core::prosody::{annotate_transcript, AnnotatedTurn};
use triagesim_core::rng::stream;
use triagesim_core::speech::{
    assemble_session, mix_session, plan_mix, select_voice, synthesize_utterance, Alignment, HttpBridge, NoiseBank,
    SpeechBridge, UtteranceClip, VoiceBank, VoiceQuery, VoiceRef, VoiceSelection, Waveform,
};
use triagesim_core::{Scale, TriageCase, TriagePolicy};

use crate::classify::{
    classify_corpus, heuristic_classifier, render_dialogue, render_kappa_table, transcript_text, ClassificationRun,
    ClassifyInput, ClassifyItem,
};
use crate::config::{BackendKind, LoadedConfig, Modality};
use crate::error::CliError;
use crate::manifest::{ArtifactRef, Corpus, CorpusManifest, ManifestEntry, Stage, StageRecord};

/// Live backends and bridge for a run. Built from the config, or injected.
pub struct Runtime {
    pub bridge: Arc<dyn SpeechBridge>,
    /// Empty means simulated persona scripts.
    pub generators: Vec<Arc<dyn AgentBackend>>,
    pub annotator: Option<Arc<dyn AgentBackend>>,
    pub classifiers: Vec<Arc<dyn AgentBackend>>,
}

impl Runtime {
    pub fn from_config(loaded: &LoadedConfig) -> Result<Self, CliError> {
        let cfg = &loaded.config;
        let speech = &cfg.speech;
        let mut bridge = if speech.bridge_url == "mock" {
            HttpBridge::mock()
        } else {
            HttpBridge::new(speech.bridge_url.clone(), Arc::new(UreqTransport::default()))
        }
        .with_timeout(Duration::from_secs(speech.timeout_s));
        if let Some(rpm) = speech.requests_per_minute {
            bridge = bridge.with_rate_limit(rpm);
        }
        let remote = |c: &triagesim_core::backend::RemoteConfig| -> Result<Arc<dyn AgentBackend>, CliError> {
            RemoteBackend::new(c.clone())
                .map(|b| Arc::new(b) as Arc<dyn AgentBackend>)
                .map_err(|e| CliError::Config(format!("backend {}: {e}", c.backend_id)))
        };
        let (generators, annotator, classifiers) = match cfg.backends.kind {
            BackendKind::Simulated => (
                Vec::new(),
                None,
                vec![Arc::new(heuristic_classifier()) as Arc<dyn AgentBackend>],
            ),
            BackendKind::Remote => (
                cfg.backends.generators.iter().map(remote).collect::<Result<_, _>>()?,
                cfg.backends.annotator.as_ref().map(remote).transpose()?,
                cfg.backends.classifiers.iter().map(remote).collect::<Result<_, _>>()?,
            ),
        };
        Ok(Self {
            bridge: Arc::new(bridge),
            generators,
            annotator,
            classifiers,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    /// Conversations (or input files, for ingest) processed in this run.
    pub processed: usize,
    /// Already done and intact.
    pub skipped: usize,
    /// Missing or changed upstream artifacts. Also listed in `failures`.
    pub blocked: usize,
    pub failures: Vec<String>,
    pub notes: Vec<String>,
    /// The stage had completed before and was not forced.
    pub noop: bool,
}

enum ConvError {
    Blocked(String),
    Failed(String),
}

impl<E: std::fmt::Display> From<E> for ConvError {
    fn from(e: E) -> Self {
        ConvError::Failed(e.to_string())
    }
}

fn stale(e: CliError) -> ConvError {
    ConvError::Blocked(e.to_string())
}

struct Batch {
    skipped: usize,
    results: Vec<(String, Result<ConvOutput, ConvError>)>,
}

struct ConvOutput {
    artifacts: Vec<(String, ArtifactRef)>,
    model_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PersonaLine {
    conversation_id: String,
    case_id: String,
    nurse: triagesim_core::NursePersona,
    patient: triagesim_core::PatientPersona,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RejectionLine {
    file: String,
    #[serde(flatten)]
    rejection: Rejection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoiceAssignment {
    pub nurse: VoiceSelection,
    pub patient: VoiceSelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrLine {
    pub turn_index: usize,
    pub speaker: Speaker,
    pub reference: String,
    pub hypothesis: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConversationDisfluency {
    pub conversation_id: String,
    pub intended_level: u8,
    pub counts: DisfluencyCounts,
    pub rates: Option<DisfluencyRates>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DisfluencySummary {
    pub pattern_version: String,
    pub conversations: Vec<ConversationDisfluency>,
    /// Intended level vs measured total rate per 100 tokens.
    pub spearman_rho: Option<f64>,
    pub spearman_error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcousticSummary {
    pub utterances: usize,
    /// Corpus WER (total edits over total reference words), times 100.
    pub wer_percent: Option<f64>,
    pub wer_substitutions: usize,
    pub wer_deletions: usize,
    pub wer_insertions: usize,
    pub wer_reference_words: usize,
    /// Mean cosine between each clip's embedding and its reference voice.
    pub speaker_consistency: Option<f64>,
    pub speaker_consistency_x100: Option<f64>,
    pub mean_quality: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RedFlagSummary {
    pub conversations: usize,
    pub scores: RedFlagScores,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub conversations: usize,
    pub disfluency: DisfluencySummary,
    pub behaviour: BehaviouralReport,
    pub acoustic: Option<AcousticSummary>,
    pub red_flags: Option<RedFlagSummary>,
}

#[derive(Debug, Clone, Deserialize)]
struct ExpertAnnotation {
    conversation_id: String,
    red_flags: Vec<String>,
}

pub struct Pipeline {
    pub loaded: LoadedConfig,
    pub corpus: Corpus,
    pub manifest: CorpusManifest,
    pub runtime: Runtime,
    pub force: bool,
    pool: rayon::ThreadPool,
}

fn rel(case_id: &str, conversation_id: &str, file: &str) -> String {
    format!("{}/{file}", Corpus::conversation_dir(case_id, conversation_id))
}

impl Pipeline {
    pub fn open(loaded: LoadedConfig, runtime: Runtime, force: bool, jobs: usize) -> Result<Self, CliError> {
        let corpus = Corpus::new(loaded.output_dir());
        let manifest = match corpus.load_manifest()? {
            Some(m) if m.config == loaded.config => m,
            Some(mut m) if force => {
                warn!("config changed; forcing every stage to re-run");
                m.config = loaded.config.clone();
                m.stages.clear();
                m
            }
            Some(_) => {
                return Err(CliError::Config(format!(
                    "{} was built with a different config; use another output_dir or --force",
                    corpus.root.display()
                )))
            }
            None => CorpusManifest::new(loaded.config.clone()),
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        Ok(Self {
            loaded,
            corpus,
            manifest,
            runtime,
            force,
            pool,
        })
    }

    /// Whether every output the stage recorded is still on disk unchanged.
    fn outputs_intact(&self, stage: Stage) -> bool {
        let intact = |a: Option<&ArtifactRef>| a.is_some_and(|a| self.corpus.is_intact(a));
        let per_conversation = |kind: &str| self.manifest.entries.values().all(|e| intact(e.artifacts.get(kind)));
        let shared = |keys: &[&str]| keys.iter().all(|k| intact(self.manifest.shared.get(*k)));
        match stage {
            Stage::Ingest => shared(&["cases", "rejections"]),
            Stage::Personas => shared(&["personas"]),
            Stage::Generate => per_conversation("transcript"),
            Stage::Annotate => per_conversation("annotated"),
            Stage::Synthesize => per_conversation("speech"),
            Stage::Mix => per_conversation("session"),
            Stage::Evaluate => shared(&["evaluation", "behaviour"]),
            Stage::Classify => shared(&["classification", "classification_table"]),
            Stage::Stats => shared(&["stats", "stats_table"]),
        }
    }

    fn seed(&self) -> u64 {
        self.loaded.config.seed
    }

    pub fn run_stage(&mut self, stage: Stage) -> Result<StageReport, CliError> {
        self.manifest.check_dependencies(stage)?;
        if self.manifest.stage_completed(stage) && !self.force && self.outputs_intact(stage) {
            info!(stage = %stage, "already complete; nothing to do");
            return Ok(StageReport {
                stage: stage.to_string(),
                skipped: self.manifest.entries.len(),
                noop: true,
                ..StageReport::default()
            });
        }
        info!(stage = %stage, "running");
        let mut report = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Personas => self.personas()?,
            Stage::Generate => self.generate()?,
            Stage::Annotate => self.annotate()?,
            Stage::Synthesize => self.synthesize()?,
            Stage::Mix => self.mix()?,
            Stage::Evaluate => self.evaluate()?,
            Stage::Classify => self.classify()?,
            Stage::Stats => self.stats()?,
        };
        report.stage = stage.to_string();
        for f in &report.failures {
            warn!(stage = %stage, failure = %f, "conversation failed");
        }
        self.manifest.stages.insert(
            stage,
            StageRecord {
                processed: report.processed,
                failures: report.failures.clone(),
            },
        );
        self.corpus.save_manifest(&self.manifest)?;
        info!(
            stage = %stage,
            processed = report.processed,
            skipped = report.skipped,
            blocked = report.blocked,
            failed = report.failures.len(),
            "stage finished"
        );
        Ok(report)
    }

    fn cases(&self) -> Result<CaseStore, CliError> {
        let a = self
            .manifest
            .shared
            .get("cases")
            .ok_or_else(|| CliError::Stage("cases.jsonl is not recorded in the manifest".into()))?;
        let bytes = self.corpus.read_artifact(a)?;
        let text = String::from_utf8_lossy(&bytes);
        let mut cases = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let case: TriageCase = serde_json::from_str(line).map_err(|e| CliError::Artifact {
                path: self.corpus.path("cases.jsonl"),
                message: format!("line {}: {e}", i + 1),
            })?;
            cases.push(case);
        }
        Ok(CaseStore::new(cases))
    }

    fn policies(&self) -> Result<BTreeMap<Scale, TriagePolicy>, CliError> {
        Scale::ALL
            .iter()
            .map(|&scale| {
                let policy = match self.loaded.config.policies.get(scale) {
                    Some(p) => load_policy_file(&self.loaded.resolve(p), scale),
                    None => load_policy(scale),
                };
                policy
                    .map(|p| (scale, p))
                    .map_err(|e| CliError::Config(format!("{scale} policy: {e}")))
            })
            .collect()
    }

    fn load_transcript(&self, e: &ManifestEntry) -> Result<Transcript, ConvError> {
        let a = e
            .artifacts
            .get("transcript")
            .ok_or_else(|| ConvError::Blocked("no transcript".into()))?;
        self.corpus.read_artifact_json(a).map_err(stale)
    }

    fn ingest(&mut self) -> Result<StageReport, CliError> {
        let cfg = &self.loaded.config;
        if cfg.inputs.cases.is_empty() {
            return Err(CliError::Config("inputs.cases lists no case files".into()));
        }
        let mut report = StageReport::default();
        let mut cases: Vec<TriageCase> = Vec::new();
        let mut seen = BTreeSet::new();
        let mut rejections = Vec::new();
        for file in &cfg.inputs.cases {
            let path = self.loaded.resolve(&file.path);
            let ingested = ingest_cases(&path, file.source).map_err(|e| CliError::Config(e.to_string()))?;
            report.processed += 1;
            let name = file.path.display().to_string();
            for r in ingested.rejections {
                rejections.push(RejectionLine {
                    file: name.clone(),
                    rejection: r,
                });
            }
            for case in ingested.cases {
                if !seen.insert(case.case_id.clone()) {
                    rejections.push(RejectionLine {
                        file: name.clone(),
                        rejection: Rejection {
                            line: 0,
                            field: Some("case_id".into()),
                            message: format!("case_id {} already ingested from another file", case.case_id),
                        },
                    });
                    continue;
                }
                let case = if case.scale.is_none() {
                    assign_scale(&case, &mut stream(cfg.seed, &format!("scale/{}", case.case_id)))
                        .map_err(|e| CliError::Stage(e.to_string()))?
                } else {
                    case
                };
                cases.push(case);
            }
        }
        cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        for r in &rejections {
            warn!(file = %r.file, line = r.rejection.line, message = %r.rejection.message, "case rejected");
        }
        report
            .notes
            .push(format!("{} cases accepted, {} rejected", cases.len(), rejections.len()));
        let a = self.corpus.write("cases.jsonl", to_jsonl(&cases).as_bytes())?;
        self.manifest.shared.insert("cases".into(), a);
        let a = self
            .corpus
            .write("rejections.jsonl", to_jsonl(&rejections).as_bytes())?;
        self.manifest.shared.insert("rejections".into(), a);
        Ok(report)
    }

    fn personas(&mut self) -> Result<StageReport, CliError> {
        let cases = self.cases()?;
        let cfg = &self.loaded.config;
        let sampler = SeededPersonaSampler {
            nurse: cfg.personas.nurse.clone(),
            patient: cfg.personas.patient.clone(),
        };
        let mut report = StageReport::default();
        let mut lines = Vec::new();
        for case in cases.iter() {
            let scale = case
                .scale
                .ok_or_else(|| CliError::Stage(format!("case {} has no scale", case.case_id)))?;
            for k in 0..cfg.conversations_per_case {
                let id = format!("{}-{k:02}", case.case_id);
                if let Some(existing) = self.manifest.entries.get(&id).filter(|_| !self.force) {
                    report.skipped += 1;
                    lines.push(PersonaLine {
                        conversation_id: id,
                        case_id: case.case_id.clone(),
                        nurse: existing.nurse_persona.clone(),
                        patient: existing.patient_persona.clone(),
                    });
                    continue;
                }
                let mut rng = stream(cfg.seed, &format!("personas/{id}"));
                let patient = sampler.sample_patient(case, &mut rng);
                let nurse = sampler.sample_nurse(&mut rng);
                let violations = validate_persona(&patient, case);
                if !violations.is_empty() {
                    report.failures.push(format!("{id}: {violations:?}"));
                    continue;
                }
                report.processed += 1;
                lines.push(PersonaLine {
                    conversation_id: id.clone(),
                    case_id: case.case_id.clone(),
                    nurse: nurse.clone(),
                    patient: patient.clone(),
                });
                let artifacts = self
                    .manifest
                    .entries
                    .remove(&id)
                    .map(|e| e.artifacts)
                    .unwrap_or_default();
                self.manifest.entries.insert(
                    id.clone(),
                    ManifestEntry {
                        conversation_id: id,
                        case_id: case.case_id.clone(),
                        scale,
                        nurse_persona: nurse,
                        patient_persona: patient,
                        model_id: None,
                        artifacts,
                    },
                );
            }
        }
        let a = self.corpus.write("personas.jsonl", to_jsonl(&lines).as_bytes())?;
        self.manifest.shared.insert("personas".into(), a);
        Ok(report)
    }

    fn generate(&mut self) -> Result<StageReport, CliError> {
        let cases = self.cases()?;
        let policies = self.policies()?;
        let seed = self.seed();
        let engine = self.loaded.config.engine;
        let generators = self.runtime.generators.clone();
        let generator_ids: Vec<String> = generators.iter().map(|g| g.backend_id().to_string()).collect();
        let corpus = self.corpus.clone();
        let batch = self.run_each("transcript", |e| {
            let id = &e.conversation_id;
            let case = cases
                .get(&e.case_id)
                .ok_or_else(|| ConvError::Blocked(format!("case {} not in cases.jsonl", e.case_id)))?;
            let policy = &policies[&e.scale];
            let inputs = ConversationInputs {
                conversation_id: id,
                case,
                nurse: &e.nurse_persona,
                patient: &e.patient_persona,
                policy,
            };
            let result = if generators.is_empty() {
                let mut rng = stream(seed, &format!("script/{id}"));
                let (nurse, patient) = simulated::scripted_pair(case, &e.nurse_persona, &e.patient_persona, &mut rng);
                run_conversation(
                    inputs,
                    Agents {
                        nurse: &nurse,
                        patient: &patient,
                    },
                    &engine,
                )
            } else {
                let mut rng = stream(seed, &format!("generator/{id}"));
                let picked = pick_generator(&generator_ids, &mut rng)?;
                let backend = generators
                    .iter()
                    .find(|g| g.backend_id() == picked)
                    .expect("picked from roster");
                run_conversation(
                    inputs,
                    Agents {
                        nurse: backend.as_ref(),
                        patient: backend.as_ref(),
                    },
                    &engine,
                )
            };
            let run = match result {
                Ok(run) => run,
                Err(EngineError::Aborted { reason, partial }) => {
                    corpus.write_json(&rel(&e.case_id, id, "transcript.aborted.json"), &partial)?;
                    return Err(ConvError::Failed(format!("aborted: {reason}")));
                }
                Err(other) => return Err(other.into()),
            };
            let violations = audit_information_hiding(&run.transcript, case, policy, Some(&run.audit));
            if !violations.is_empty() {
                return Err(ConvError::Failed(format!(
                    "information hiding violated: {violations:?}"
                )));
            }
            let t = corpus.write_json(&rel(&e.case_id, id, "transcript.json"), &run.transcript)?;
            let a = corpus.write_json(&rel(&e.case_id, id, "context_audit.json"), &run.audit)?;
            Ok(ConvOutput {
                artifacts: vec![("transcript".into(), t), ("context_audit".into(), a)],
                model_id: Some(run.transcript.generator_model_id.clone()),
            })
        });
        Ok(self.apply(batch))
    }

    fn annotate(&mut self) -> Result<StageReport, CliError> {
        let annotator = self.runtime.annotator.clone();
        let corpus = self.corpus.clone();
        let this = &*self;
        let work = |e: &ManifestEntry| {
            let t = this.load_transcript(e)?;
            let turns = annotate_transcript(&t, annotator.as_deref());
            let a = corpus.write_json(&rel(&e.case_id, &e.conversation_id, "annotated.json"), &turns)?;
            Ok(ConvOutput {
                artifacts: vec![("annotated".into(), a)],
                model_id: None,
            })
        };
        let batch = self.run_each("annotated", work);
        Ok(self.apply(batch))
    }

    fn voice_bank(&self) -> Result<VoiceBank, CliError> {
        let path = self
            .loaded
            .config
            .speech
            .voices
            .as_ref()
            .ok_or_else(|| CliError::Config("speech.voices is required for synthesis".into()))?;
        VoiceBank::load(&self.loaded.resolve(path)).map_err(|e| CliError::Config(e.to_string()))
    }

    fn noise_bank(&self) -> Result<NoiseBank, CliError> {
        match &self.loaded.config.speech.noise {
            Some(p) => NoiseBank::load(&self.loaded.resolve(p)).map_err(|e| CliError::Config(e.to_string())),
            None => Ok(NoiseBank::default()),
        }
    }

    fn synthesize(&mut self) -> Result<StageReport, CliError> {
        let bank = self.voice_bank()?;
        if bank.voices.is_empty() {
            return Err(CliError::Config("voice bank is empty".into()));
        }
        let seed = self.seed();
        let speech = self.loaded.config.speech.clone();
        let bridge = self.runtime.bridge.clone();
        let corpus = self.corpus.clone();
        let this = &*self;
        let work = |e: &ManifestEntry| -> Result<ConvOutput, ConvError> {
            let id = &e.conversation_id;
            let t = this.load_transcript(e)?;
            let ann_ref = e
                .artifacts
                .get("annotated")
                .ok_or_else(|| ConvError::Blocked("not annotated".into()))?;
            let annotated: Vec<AnnotatedTurn> = corpus.read_artifact_json(ann_ref).map_err(stale)?;
            let mut rng = stream(seed, &format!("voices/{id}"));
            let patient_voice = select_voice(
                VoiceQuery {
                    country_of_origin: e.patient_persona.country_of_origin,
                    gender: e.patient_persona.gender,
                },
                &bank.voices,
                &mut rng,
            )?;
            let others: Vec<VoiceRef> = bank
                .voices
                .iter()
                .filter(|v| v.voice_id != patient_voice.voice.voice_id)
                .cloned()
                .collect();
            let nurse_voice = select_voice(
                VoiceQuery {
                    country_of_origin: speech.nurse_country,
                    gender: e.nurse_persona.gender,
                },
                if others.is_empty() { &bank.voices } else { &others },
                &mut rng,
            )?;
            let nurse_traits = e.nurse_persona.describe();
            let patient_traits = e.patient_persona.describe();
            let mut clips = Vec::with_capacity(annotated.len());
            let mut artifacts = Vec::new();
            for turn in &annotated {
                let (voice, traits) = match turn.utterance.role {
                    Speaker::Patient => (&patient_voice.voice, &patient_traits),
                    _ => (&nurse_voice.voice, &nurse_traits),
                };
                let reference = bank.clip(&voice.voice_id).expect("bank holds a clip per voice");
                let wave = synthesize_utterance(&turn.utterance, voice, reference, traits, bridge.as_ref())
                    .map_err(|err| ConvError::Failed(format!("turn {}: {err}", turn.turn_index)))?;
                let a = corpus.write(
                    &rel(&e.case_id, id, &format!("audio/{:04}.wav", turn.turn_index)),
                    &wave.to_wav_bytes()?,
                )?;
                artifacts.push((format!("audio/{:04}", turn.turn_index), a));
                clips.push(UtteranceClip {
                    turn_index: turn.turn_index,
                    voice_id: voice.voice_id.clone(),
                    waveform: wave,
                });
            }
            let gaps = speech
                .gaps
                .draw(clips.len().saturating_sub(1), &mut stream(seed, &format!("gaps/{id}")));
            let session = assemble_session(&t, &clips, &gaps)?;
            let problems = session.alignment.violations();
            if !problems.is_empty() {
                return Err(ConvError::Failed(format!("alignment: {problems:?}")));
            }
            let voices = VoiceAssignment {
                nurse: nurse_voice,
                patient: patient_voice,
            };
            artifacts.push((
                "voices".into(),
                corpus.write_json(&rel(&e.case_id, id, "voices.json"), &voices)?,
            ));
            artifacts.push((
                "alignment".into(),
                corpus.write_json(&rel(&e.case_id, id, "alignment.json"), &session.alignment)?,
            ));
            // Written last: its presence marks the conversation as synthesized.
            artifacts.push((
                "speech".into(),
                corpus.write(&rel(&e.case_id, id, "speech.wav"), &session.waveform.to_wav_bytes()?)?,
            ));
            Ok(ConvOutput {
                artifacts,
                model_id: None,
            })
        };
        let batch = self.run_each("speech", work);
        Ok(self.apply(batch))
    }

    fn mix(&mut self) -> Result<StageReport, CliError> {
        let bank = self.noise_bank()?;
        let seed = self.seed();
        let mix_cfg = self.loaded.config.speech.mix;
        let corpus = self.corpus.clone();
        let work = |e: &ManifestEntry| -> Result<ConvOutput, ConvError> {
            let id = &e.conversation_id;
            let speech_ref = e
                .artifacts
                .get("speech")
                .ok_or_else(|| ConvError::Blocked("not synthesized".into()))?;
            let speech = Waveform::from_wav_bytes(&corpus.read_artifact(speech_ref).map_err(stale)?)?;
            let plan = plan_mix(speech.len(), &bank, &mix_cfg, &mut stream(seed, &format!("mix/{id}")));
            let problems = plan.violations(&mix_cfg);
            if !problems.is_empty() {
                return Err(ConvError::Failed(format!("mix plan: {problems:?}")));
            }
            let out = mix_session(&speech, &plan, &bank)?;
            let p = corpus.write_json(&rel(&e.case_id, id, "mixplan.json"), &plan)?;
            let s = corpus.write(&rel(&e.case_id, id, "session.wav"), &out.waveform.to_wav_bytes()?)?;
            Ok(ConvOutput {
                artifacts: vec![("mixplan".into(), p), ("session".into(), s)],
                model_id: None,
            })
        };
        let batch = self.run_each("session", work);
        Ok(self.apply(batch))
    }

    fn ground_truth(&self) -> Result<BTreeMap<String, u8>, CliError> {
        Ok(self
            .cases()?
            .iter()
            .map(|c| (c.case_id.clone(), c.ground_truth_acuity))
            .collect())
    }

    /// Transcripts of every entry that has one, in conversation-id order.
    fn transcripts(&self) -> Vec<(&ManifestEntry, Transcript)> {
        self.manifest
            .entries
            .values()
            .filter_map(|e| self.load_transcript(e).ok().map(|t| (e, t)))
            .collect()
    }

    fn evaluate(&mut self) -> Result<StageReport, CliError> {
        let gt = self.ground_truth()?;
        let mut report = StageReport::default();
        let transcripts = self.transcripts();
        report.processed = transcripts.len();

        let detector = DisfluencyDetector::bundled();
        let mut per_conv = Vec::new();
        let (mut levels, mut rates) = (Vec::new(), Vec::new());
        for (e, t) in &transcripts {
            let counts = detect_corpus(
                detector,
                t.spoken_turns()
                    .filter(|x| x.speaker == Speaker::Patient)
                    .filter_map(|x| x.utterance.as_deref()),
            );
            let r = counts.rates().ok();
            if let Some(r) = &r {
                levels.push(f64::from(e.patient_persona.disfluency_rate));
                rates.push(r.total);
            }
            per_conv.push(ConversationDisfluency {
                conversation_id: e.conversation_id.clone(),
                intended_level: e.patient_persona.disfluency_rate,
                counts,
                rates: r,
            });
        }
        let (spearman, spearman_error) = match spearman_rho(&levels, &rates) {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let disfluency = DisfluencySummary {
            pattern_version: detector.version.clone(),
            conversations: per_conv,
            spearman_rho: spearman,
            spearman_error,
        };
        let owned: Vec<Transcript> = transcripts.iter().map(|(_, t)| t.clone()).collect();
        let behaviour = behavioural_report(&owned, &gt);
        let red_flags = self.red_flag_summary(&transcripts)?;
        drop(transcripts);

        let acoustic = if self.manifest.stage_ran(Stage::Synthesize) {
            let (summary, failures) = self.acoustic_metrics()?;
            report.failures.extend(failures);
            Some(summary)
        } else {
            report
                .notes
                .push("synthesize has not run; acoustic metrics skipped".into());
            None
        };
        let eval = EvaluationReport {
            conversations: report.processed,
            disfluency,
            behaviour,
            acoustic,
            red_flags,
        };
        let a = self.corpus.write_json("reports/evaluation.json", &eval)?;
        self.manifest.shared.insert("evaluation".into(), a);
        let a = self
            .corpus
            .write("reports/behaviour.txt", eval.behaviour.render().as_bytes())?;
        self.manifest.shared.insert("behaviour".into(), a);
        Ok(report)
    }

    fn red_flag_summary(
        &self,
        transcripts: &[(&ManifestEntry, Transcript)],
    ) -> Result<Option<RedFlagSummary>, CliError> {
        let Some(path) = &self.loaded.config.inputs.expert_annotations else {
            return Ok(None);
        };
        let path = self.loaded.resolve(path);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let mut reference: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let a: ExpertAnnotation = serde_json::from_str(line)
                .map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            reference.insert(a.conversation_id, a.red_flags);
        }
        let mut notes = Vec::new();
        let (mut pred, mut refs) = (Vec::new(), Vec::new());
        for (e, t) in transcripts {
            let Some(r) = reference.get(&e.conversation_id) else {
                continue;
            };
            match &t.final_decision {
                Some(d) => {
                    pred.push(d.red_flags_cited.clone());
                    refs.push(r.clone());
                }
                None => notes.push(format!("{}: no final decision", e.conversation_id)),
            }
        }
        let scores = red_flag_prf(&pred, &refs).map_err(|e| CliError::Stage(e.to_string()))?;
        let mut grab = |v: Result<f64, _>| match v {
            Ok(x) => Some(x),
            Err(e) => {
                notes.push(format!("{e}"));
                None
            }
        };
        let (precision, recall, f1) = (grab(scores.precision()), grab(scores.recall()), grab(scores.f1()));
        Ok(Some(RedFlagSummary {
            conversations: pred.len(),
            scores,
            precision,
            recall,
            f1,
            notes,
        }))
    }

    /// ASR (written per conversation), WER, speaker consistency and quality.
    fn acoustic_metrics(&mut self) -> Result<(AcousticSummary, Vec<String>), CliError> {
        let bank = self.voice_bank()?;
        let bridge = self.runtime.bridge.clone();
        let corpus = self.corpus.clone();
        let force = self.force;
        struct ConvAcoustic {
            asr: Vec<AsrLine>,
            cosines: Vec<f64>,
            quality: Option<f64>,
        }
        let entries: Vec<ManifestEntry> = self
            .manifest
            .entries
            .values()
            .filter(|e| e.artifacts.contains_key("speech"))
            .cloned()
            .collect();
        let results: Vec<(String, Result<(ConvAcoustic, Option<ArtifactRef>), String>)> = self.pool.install(|| {
            entries
                .par_iter()
                .map(|e| {
                    let run = || -> Result<(ConvAcoustic, Option<ArtifactRef>), String> {
                        let alignment: Alignment = corpus
                            .read_artifact_json(&e.artifacts["alignment"])
                            .map_err(|x| x.to_string())?;
                        let existing = e
                            .artifacts
                            .get("asr")
                            .filter(|a| !force && corpus.is_intact(a))
                            .and_then(|a| corpus.read_artifact_json::<Vec<AsrLine>>(a).ok());
                        let mut asr = Vec::new();
                        let mut cosines = Vec::new();
                        let mut reference_embeds: BTreeMap<String, Vec<f64>> = BTreeMap::new();
                        for (i, u) in alignment.utterances.iter().enumerate() {
                            let key = format!("audio/{:04}", u.turn_index);
                            let clip_ref = e.artifacts.get(&key).ok_or(format!("missing {key}"))?;
                            let clip =
                                Waveform::from_wav_bytes(&corpus.read_artifact(clip_ref).map_err(|x| x.to_string())?)
                                    .map_err(|x| x.to_string())?;
                            let hypothesis = match existing.as_ref().and_then(|x| x.get(i)) {
                                Some(line) => line.hypothesis.clone(),
                                None => bridge.asr(&clip).map_err(|x| x.to_string())?,
                            };
                            asr.push(AsrLine {
                                turn_index: u.turn_index,
                                speaker: u.speaker,
                                reference: u.text.clone(),
                                hypothesis,
                            });
                            let synth = bridge.embed(&clip).map_err(|x| x.to_string())?;
                            let reference = match reference_embeds.get(&u.voice_id) {
                                Some(v) => v.clone(),
                                None => {
                                    let wave = bank
                                        .clip(&u.voice_id)
                                        .ok_or(format!("voice {} not in bank", u.voice_id))?;
                                    let v = bridge.embed(wave).map_err(|x| x.to_string())?;
                                    reference_embeds.insert(u.voice_id.clone(), v.clone());
                                    v
                                }
                            };
                            cosines.push(cosine_similarity(&synth, &reference).map_err(|x| x.to_string())?);
                        }
                        let session_key = if e.artifacts.contains_key("session") {
                            "session"
                        } else {
                            "speech"
                        };
                        let session = Waveform::from_wav_bytes(
                            &corpus
                                .read_artifact(&e.artifacts[session_key])
                                .map_err(|x| x.to_string())?,
                        )
                        .map_err(|x| x.to_string())?;
                        let quality = bridge.quality(&session).ok();
                        let written = if existing.is_some() {
                            None
                        } else {
                            Some(
                                corpus
                                    .write_json(&rel(&e.case_id, &e.conversation_id, "asr.json"), &asr)
                                    .map_err(|x| x.to_string())?,
                            )
                        };
                        Ok((ConvAcoustic { asr, cosines, quality }, written))
                    };
                    (e.conversation_id.clone(), run())
                })
                .collect()
        });
        let mut wer = WerAccumulator::default();
        let (mut cosines, mut qualities, mut failures) = (Vec::new(), Vec::new(), Vec::new());
        let mut utterances = 0;
        for (id, r) in results {
            match r {
                Ok((conv, written)) => {
                    for line in &conv.asr {
                        wer.add(&line.reference, &line.hypothesis, Normalizer::V1);
                    }
                    utterances += conv.asr.len();
                    cosines.extend(conv.cosines);
                    qualities.extend(conv.quality);
                    if let Some(a) = written {
                        self.manifest
                            .entries
                            .get_mut(&id)
                            .expect("entry")
                            .artifacts
                            .insert("asr".into(), a);
                    }
                }
                Err(e) => failures.push(format!("{id}: {e}")),
            }
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let consistency = mean(&cosines);
        Ok((
            AcousticSummary {
                utterances,
                wer_percent: wer.wer().ok().map(|w| w * 100.0),
                wer_substitutions: wer.counts.substitutions,
                wer_deletions: wer.counts.deletions,
                wer_insertions: wer.counts.insertions,
                wer_reference_words: wer.counts.reference_len,
                speaker_consistency: consistency,
                speaker_consistency_x100: consistency.map(|c| c * 100.0),
                mean_quality: mean(&qualities),
            },
            failures,
        ))
    }

    fn classify(&mut self) -> Result<StageReport, CliError> {
        let gt = self.ground_truth()?;
        let policies = self.policies()?;
        let mut report = StageReport::default();
        if self.runtime.classifiers.is_empty() {
            return Err(CliError::Config("no classifier backends configured".into()));
        }
        let transcripts = self.transcripts();
        report.processed = transcripts.len();
        let mut runs: Vec<ClassificationRun> = Vec::new();
        for &modality in &self.loaded.config.classify.modalities {
            let mut items = Vec::new();
            for (e, t) in &transcripts {
                let Some(&ground_truth) = gt.get(&e.case_id) else {
                    report.notes.push(format!("{}: no ground truth", e.conversation_id));
                    continue;
                };
                let input = match modality {
                    Modality::Syn => Some(ClassifyInput::Text(transcript_text(t))),
                    Modality::Asr => e
                        .artifacts
                        .get("asr")
                        .and_then(|a| self.corpus.read_artifact_json::<Vec<AsrLine>>(a).ok())
                        .map(|lines| {
                            ClassifyInput::Text(render_dialogue(
                                lines.iter().map(|l| (l.speaker, l.hypothesis.as_str())),
                            ))
                        }),
                    Modality::Audio => e
                        .artifacts
                        .get("session")
                        .or_else(|| e.artifacts.get("speech"))
                        .and_then(|a| self.corpus.read_artifact(a).ok())
                        .map(ClassifyInput::Wav),
                };
                match input {
                    Some(input) => items.push(ClassifyItem {
                        conversation_id: e.conversation_id.clone(),
                        scale: e.scale,
                        ground_truth,
                        input,
                    }),
                    None => report.blocked += 1,
                }
            }
            if items.is_empty() {
                report
                    .notes
                    .push(format!("{}: no inputs available; modality skipped", modality.label()));
                continue;
            }
            for backend in &self.runtime.classifiers {
                let run = self
                    .pool
                    .install(|| classify_corpus(&items, backend.as_ref(), modality, &policies));
                report.failures.extend(
                    run.failures
                        .iter()
                        .map(|f| format!("{} {}: {f}", run.model_id, modality.label())),
                );
                runs.push(run);
            }
        }
        drop(transcripts);
        let a = self.corpus.write_json("reports/classification.json", &runs)?;
        self.manifest.shared.insert("classification".into(), a);
        let a = self
            .corpus
            .write("reports/classification.txt", render_kappa_table(&runs).as_bytes())?;
        self.manifest.shared.insert("classification_table".into(), a);
        Ok(report)
    }

    pub fn corpus_entries(&self) -> Result<Vec<CorpusEntry>, CliError> {
        let gt = self.ground_truth()?;
        let mut out = Vec::new();
        for (e, t) in self.transcripts() {
            let alignment: Option<Alignment> = e
                .artifacts
                .get("alignment")
                .and_then(|a| self.corpus.read_artifact_json(a).ok());
            let (voices, duration) = match alignment {
                Some(a) => {
                    let ids: BTreeSet<String> = a.utterances.iter().map(|u| u.voice_id.clone()).collect();
                    (ids.into_iter().collect(), a.duration_s)
                }
                None => (Vec::new(), 0.0),
            };
            let acuity = gt.get(&e.case_id).copied().unwrap_or(0);
            out.push(CorpusEntry::from_transcript(&t, acuity, voices, duration));
        }
        Ok(out)
    }

    fn stats(&mut self) -> Result<StageReport, CliError> {
        let entries = self.corpus_entries()?;
        let stats: CorpusStats = corpus_stats(&entries);
        let report = StageReport {
            processed: entries.len(),
            ..StageReport::default()
        };
        let a = self.corpus.write_json("reports/stats.json", &stats)?;
        self.manifest.shared.insert("stats".into(), a);
        let a = self
            .corpus
            .write("reports/stats.txt", render_stats_table(&stats).as_bytes())?;
        self.manifest.shared.insert("stats_table".into(), a);
        Ok(report)
    }

    /// Runs `work` for every entry whose `kind` artifact is missing or stale
    /// (every entry under `--force`).
    fn run_each<F>(&self, kind: &str, work: F) -> Batch
    where
        F: Fn(&ManifestEntry) -> Result<ConvOutput, ConvError> + Sync,
    {
        let todo: Vec<&ManifestEntry> = self
            .manifest
            .entries
            .values()
            .filter(|e| self.force || !e.artifacts.get(kind).is_some_and(|a| self.corpus.is_intact(a)))
            .collect();
        Batch {
            skipped: self.manifest.entries.len() - todo.len(),
            results: self
                .pool
                .install(|| todo.par_iter().map(|e| (e.conversation_id.clone(), work(e))).collect()),
        }
    }

    /// Folds results into the manifest in conversation-id order.
    fn apply(&mut self, batch: Batch) -> StageReport {
        let mut report = StageReport {
            skipped: batch.skipped,
            ..StageReport::default()
        };
        for (id, result) in batch.results {
            let entry = self.manifest.entries.get_mut(&id).expect("entry exists");
            match result {
                Ok(out) => {
                    report.processed += 1;
                    entry.artifacts.extend(out.artifacts);
                    if out.model_id.is_some() {
                        entry.model_id = out.model_id;
                    }
                }
                Err(ConvError::Blocked(why)) => {
                    report.blocked += 1;
                    report.failures.push(format!("{id}: blocked: {why}"));
                }
                Err(ConvError::Failed(why)) => report.failures.push(format!("{id}: {why}")),
            }
        }
        report
    }
}
