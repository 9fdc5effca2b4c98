//! Shared helpers for the integration test targets: independent
//! brute-force oracles for every metric, plus fixture builders that stage
//! a complete mock-backed dataset on disk.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use pvir::backend::{GenerateRequest, GenerationParams};
use pvir::grounding::{build_grounding_prompt, PhaseDefinitionSet};
use pvir::ingest::load_event;
use pvir::metrics::TokenSequence;
use pvir::model::{MultiViewEvent, PhaseLabel, PhaseSegmentation, TimeInterval};
use pvir::reasoning::{build_caption_prompt, build_vqa_prompt};
use pvir::model::{phase_slice, Perspective};

// ---------------------------------------------------------------------------
// Metric oracles. Each is an independent re-derivation from the defining
// formula, structured differently from the engine implementation.
// ---------------------------------------------------------------------------

fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

fn count_of(grams: &[Vec<String>], gram: &[String]) -> usize {
    grams.iter().filter(|g| g.as_slice() == gram).count()
}

/// BLEU recomputed gram-by-gram with explicit clipping.
pub fn bleu_oracle(cand: &TokenSequence, reference: &TokenSequence, max_n: usize) -> f64 {
    let c_l = cand.len();
    let r_l = reference.len();
    if c_l == 0 {
        return 0.0;
    }
    let bp = if c_l > r_l { 1.0 } else { (1.0 - r_l as f64 / c_l as f64).exp() };
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cg = grams(&cand.tokens, n);
        let rg = grams(&reference.tokens, n);
        let mut clipped = 0usize;
        let mut seen: Vec<&[String]> = Vec::new();
        for g in &cg {
            if seen.contains(&g.as_slice()) {
                continue;
            }
            seen.push(g);
            clipped += count_of(&cg, g).min(count_of(&rg, g));
        }
        let p = if cg.is_empty() || clipped == 0 {
            1e-9
        } else {
            clipped as f64 / cg.len() as f64
        };
        log_sum += p.ln() / max_n as f64;
    }
    bp * log_sum.exp()
}

fn lcs_recursive(a: &[String], b: &[String], memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let key = (a.len(), b.len());
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let v = if a[a.len() - 1] == b[b.len() - 1] {
        lcs_recursive(&a[..a.len() - 1], &b[..b.len() - 1], memo) + 1
    } else {
        lcs_recursive(&a[..a.len() - 1], b, memo).max(lcs_recursive(a, &b[..b.len() - 1], memo))
    };
    memo.insert(key, v);
    v
}

/// ROUGE-L recomputed with a recursive LCS.
pub fn rouge_l_oracle(cand: &TokenSequence, reference: &TokenSequence, beta: f64) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_recursive(&cand.tokens, &reference.tokens, &mut BTreeMap::new()) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / cand.len() as f64;
    let r = lcs / reference.len() as f64;
    (1.0 + beta * beta) * r * p / (r + beta * beta * p)
}

fn chunks_of(assignment: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for a in assignment {
        if let Some(j) = a {
            if prev != Some(j.wrapping_sub(1)) || *j == 0 && prev.is_none() {
                // fallthrough handled below
            }
        }
        match (prev, a) {
            (Some(p), Some(j)) if *j == p + 1 => {}
            (_, Some(_)) => chunks += 1,
            _ => {}
        }
        prev = *a;
    }
    chunks
}

#[allow(clippy::too_many_arguments)]
fn enumerate_alignments(
    cand: &[String],
    refs: &[String],
    i: usize,
    used: &mut Vec<bool>,
    assignment: &mut Vec<Option<usize>>,
    per_word: &mut BTreeMap<String, usize>,
    target: &BTreeMap<String, usize>,
    best_chunks: &mut usize,
) {
    if i == cand.len() {
        if per_word == target {
            *best_chunks = (*best_chunks).min(chunks_of(assignment));
        }
        return;
    }
    // Skip.
    enumerate_alignments(cand, refs, i + 1, used, assignment, per_word, target, best_chunks);
    // Match against every unused equal reference token.
    for j in 0..refs.len() {
        if !used[j] && refs[j] == cand[i] {
            used[j] = true;
            assignment[i] = Some(j);
            *per_word.entry(cand[i].clone()).or_insert(0) += 1;
            enumerate_alignments(cand, refs, i + 1, used, assignment, per_word, target, best_chunks);
            *per_word.get_mut(&cand[i]).unwrap() -= 1;
            if per_word[&cand[i]] == 0 {
                per_word.remove(&cand[i]);
            }
            assignment[i] = None;
            used[j] = false;
        }
    }
}

/// METEOR recomputed with exhaustive enumeration over every maximal
/// matching (feasible for the small inputs the property tests generate).
pub fn meteor_oracle(cand: &TokenSequence, reference: &TokenSequence) -> f64 {
    let c_m = cand.len();
    let r_m = reference.len();
    if c_m == 0 || r_m == 0 {
        return 0.0;
    }
    let mut target: BTreeMap<String, usize> = BTreeMap::new();
    for t in &cand.tokens {
        let in_ref = reference.tokens.iter().filter(|x| *x == t).count();
        let in_cand = cand.tokens.iter().filter(|x| *x == t).count();
        let m = in_ref.min(in_cand);
        if m > 0 {
            target.insert(t.clone(), m);
        }
    }
    let u_m: usize = target.values().sum();
    if u_m == 0 {
        return 0.0;
    }
    let mut best_chunks = usize::MAX;
    enumerate_alignments(
        &cand.tokens,
        &reference.tokens,
        0,
        &mut vec![false; r_m],
        &mut vec![None; c_m],
        &mut BTreeMap::new(),
        &target,
        &mut best_chunks,
    );
    assert_ne!(best_chunks, usize::MAX, "maximal matching must exist");
    let p = u_m as f64 / c_m as f64;
    let r = u_m as f64 / r_m as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    f_mean * (1.0 - 0.5 * (best_chunks as f64 / u_m as f64).powi(3))
}

/// CIDEr recomputed with joined-string gram keys and explicit loops.
pub fn cider_oracle(items: &[(TokenSequence, Vec<TokenSequence>)], max_n: usize) -> Vec<f64> {
    let corpus_size = items.len() as f64;
    let mut scores = vec![0.0; items.len()];
    for n in 1..=max_n {
        // IDF from reference presence.
        let mut df: BTreeMap<String, f64> = BTreeMap::new();
        for (_, refs) in items {
            let mut present: Vec<String> = Vec::new();
            for r in refs {
                for g in grams(&r.tokens, n) {
                    let key = g.join("\u{1}");
                    if !present.contains(&key) {
                        present.push(key);
                    }
                }
            }
            for key in present {
                *df.entry(key).or_insert(0.0) += 1.0;
            }
        }
        let idf = |key: &str| -> f64 {
            let d = df.get(key).copied().unwrap_or(0.0).max(1.0);
            (corpus_size / d).ln()
        };
        let vector = |seq: &TokenSequence| -> BTreeMap<String, f64> {
            let gs = grams(&seq.tokens, n);
            let total = gs.len() as f64;
            let mut v = BTreeMap::new();
            for g in &gs {
                let key = g.join("\u{1}");
                *v.entry(key).or_insert(0.0) += 1.0;
            }
            for (key, count) in v.iter_mut() {
                *count = (*count / total) * idf(key);
            }
            v
        };
        for (i, (cand, refs)) in items.iter().enumerate() {
            let vc = if cand.len() >= n { vector(cand) } else { BTreeMap::new() };
            let mut total_cos = 0.0;
            for r in refs {
                let vr = if r.len() >= n { vector(r) } else { BTreeMap::new() };
                let dot: f64 = vc
                    .iter()
                    .filter_map(|(k, x)| vr.get(k).map(|y| x * y))
                    .sum();
                let na: f64 = vc.values().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = vr.values().map(|x| x * x).sum::<f64>().sqrt();
                if na > 0.0 && nb > 0.0 {
                    total_cos += dot / (na * nb);
                }
            }
            scores[i] += total_cos / refs.len() as f64 / max_n as f64;
        }
    }
    scores
}

/// Interval IoU recomputed by walking elementary segments between sorted
/// endpoints and summing coverage.
pub fn interval_iou_oracle(p: &TimeInterval, g: &TimeInterval) -> f64 {
    let mut points = [p.start_s, p.end_s, g.start_s, g.end_s];
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let covers = |iv: &TimeInterval, lo: f64, hi: f64| iv.start_s <= lo && hi <= iv.end_s;
    let mut inter = 0.0;
    let mut union = 0.0;
    for w in points.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let in_p = covers(p, lo, hi);
        let in_g = covers(g, lo, hi);
        if in_p && in_g {
            inter += hi - lo;
        }
        if in_p || in_g {
            union += hi - lo;
        }
    }
    if union <= 0.0 {
        return if p.start_s == g.start_s && p.end_s == g.end_s { 1.0 } else { 0.0 };
    }
    inter / union
}

// ---------------------------------------------------------------------------
// Fixture staging: a dataset + mock fixture directory for end-to-end runs.
// ---------------------------------------------------------------------------

/// The annotated event used by the end-to-end fixture runs: four views,
/// the reference phase boundaries, two captions per phase, and one VQA
/// item per scope.
pub fn fixture_event_json() -> serde_json::Value {
    serde_json::json!({
        "event_id": "wts_fixture",
        "duration_s": 43.7,
        "views": [
            {"view_id": "oh1", "kind": "overhead", "video_uri": "file:///oh1.mp4"},
            {"view_id": "oh2", "kind": "overhead", "video_uri": "file:///oh2.mp4"},
            {"view_id": "oh3", "kind": "overhead", "video_uri": "file:///oh3.mp4"},
            {"view_id": "veh", "kind": "vehicle", "video_uri": "file:///veh.mp4"}
        ],
        "annotations": {
            "phases": [
                {"phase": 0, "start_s": 28.8, "end_s": 29.9},
                {"phase": 1, "start_s": 29.8, "end_s": 30.8},
                {"phase": 2, "start_s": 30.7, "end_s": 32.5},
                {"phase": 3, "start_s": 32.6, "end_s": 37.8},
                {"phase": 4, "start_s": 37.8, "end_s": 43.7}
            ],
            "captions": (0..5).flat_map(|p| vec![
                serde_json::json!({
                    "phase": p,
                    "perspective": "pedestrian",
                    "text": format!("the pedestrian acts during phase {p}")
                }),
                serde_json::json!({
                    "phase": p,
                    "perspective": "vehicle",
                    "text": format!("the vehicle moves during phase {p}")
                }),
            ]).collect::<Vec<_>>(),
            "qa": [
                {
                    "qa_id": "q_veh",
                    "scope": "vehicle_view",
                    "phase": 3,
                    "question": "Is the vehicle reversing?",
                    "options": {"a": "yes", "b": "no", "c": "stopped", "d": "turning"},
                    "answer": "a"
                },
                {
                    "qa_id": "q_env",
                    "scope": "environment",
                    "question": "What are the weather conditions?",
                    "options": {"a": "rainy", "b": "clear", "c": "foggy", "d": "snowy"},
                    "answer": "b"
                }
            ]
        }
    })
}

/// The grounding response the mock backend returns, matching the reference
/// phase boundaries exactly.
pub fn fixture_grounding_response() -> &'static str {
    "Phase 0: start=28.8, end=29.9\n\
     Phase 1: start=29.8, end=30.8\n\
     Phase 2: start=30.7, end=32.5\n\
     Phase 3: start=32.6, end=37.8\n\
     Phase 4: start=37.8, end=43.7\n"
}

pub fn fixture_report_json() -> String {
    serde_json::json!({
        "scene_understanding": "Clear bright day on a straight residential road segment with light traffic and no sidewalks or pedestrian crossings.",
        "behavior_analysis": {
            "phase_table": [
                {"phase": 0, "time": "28.8-29.9", "pedestrian_state": "Standing, distracted", "vehicle_action": "Preparing", "risk_level": "Moderate"},
                {"phase": 1, "time": "29.8-30.8", "pedestrian_state": "Still, distracted", "vehicle_action": "About to reverse", "risk_level": "High"},
                {"phase": 2, "time": "30.7-32.5", "pedestrian_state": "Moving forward", "vehicle_action": "Reversing 5 km/h", "risk_level": "High"},
                {"phase": 3, "time": "32.6-37.8", "pedestrian_state": "In vehicle lane", "vehicle_action": "Reversing 5 km/h", "risk_level": "Critical"},
                {"phase": 4, "time": "37.8-43.7", "pedestrian_state": "Thrown back", "vehicle_action": "Collision", "risk_level": "Impact"}
            ],
            "interaction_dynamics": {
                "initial_separation": "Near distance with pedestrian behind vehicle",
                "convergence_pattern": "Vehicle reversing while pedestrian walked forward",
                "communication": "No communication attempts observed",
                "mutual_awareness": "Neither party aware of the other until impact",
                "critical_failure": "Pedestrian smartphone distraction combined with vehicle reversing"
            }
        },
        "event_diagnosis": {
            "classification": "Collision",
            "severity": "Pedestrian thrown back and fell - potential injury",
            "causal_chain": [
                {"phase": "0", "factor": "Pedestrian standing behind vehicle while using smartphone"},
                {"phase": "1", "factor": "Vehicle prepared to reverse while pedestrian remained distracted"},
                {"phase": "2", "factor": "Pedestrian began walking forward while vehicle started reversing"},
                {"phase": "3", "factor": "Both parties converged on collision path with no awareness"},
                {"phase": "4", "factor": "Collision occurred before either party could react"}
            ],
            "contributing_factors": {
                "primary": [
                    "Pedestrian distraction due to smartphone use",
                    "Vehicle reversing without ensuring clear path",
                    "Lack of mutual awareness between parties"
                ],
                "environmental": [
                    "No sidewalks forcing pedestrian to use vehicle lane",
                    "Flat pedestrian-vehicle division with no barriers",
                    "Residential road with shared space design"
                ]
            }
        },
        "summary": "A reversing vehicle struck a distracted pedestrian walking in its blind zone; reverse-safety systems, sidewalks, and physical separation are the recommended countermeasures."
    })
    .to_string()
}

fn fingerprint_of(prompt_text: String, media: Vec<pvir::backend::MediaRef>) -> String {
    GenerateRequest {
        model_id: String::new(),
        prompt_text,
        media,
        params: GenerationParams::default(),
    }
    .fingerprint()
}

/// Writes every mock fixture the full pipeline needs for the fixture
/// event: the grounding response, ten caption responses, per-question VQA
/// responses, and the synthesis report.
pub fn write_fixtures(fixtures_dir: &Path, event: &MultiViewEvent) {
    std::fs::create_dir_all(fixtures_dir).unwrap();
    let mut index: BTreeMap<String, String> = BTreeMap::new();
    let mut put = |name: String, fp: String, body: String| {
        std::fs::write(fixtures_dir.join(format!("{fp}.txt")), body).unwrap();
        index.insert(name, fp);
    };

    // Grounding.
    let gp = build_grounding_prompt(event, &PhaseDefinitionSet::default());
    put(
        "grounding".to_string(),
        fingerprint_of(gp.system_text, gp.media),
        fixture_grounding_response().to_string(),
    );

    // Reasoning: resolve the segmentation exactly as the pipeline will.
    let seg: PhaseSegmentation = {
        let gt = event.ground_truth.as_ref().unwrap();
        gt.segmentation.clone()
    };
    for phase in PhaseLabel::ALL {
        let clips = phase_slice(event, &seg, phase).unwrap();
        for perspective in [Perspective::Pedestrian, Perspective::Vehicle] {
            let prompt = build_caption_prompt(&clips, perspective);
            let text = match perspective {
                Perspective::Pedestrian => {
                    format!("the pedestrian acts during phase {}", phase.index())
                }
                Perspective::Vehicle => {
                    format!("the vehicle moves during phase {}", phase.index())
                }
            };
            put(
                format!("caption/{}/{:?}", phase.index(), perspective),
                fingerprint_of(prompt.text, prompt.media),
                text,
            );
        }
        let gt = event.ground_truth.as_ref().unwrap();
        let first_present = PhaseLabel::PreRecognition;
        for qa in &gt.qa {
            let belongs = match qa.phase {
                Some(p) => p == phase,
                None => phase == first_present,
            };
            if !belongs {
                continue;
            }
            let qa_clips = pvir::reasoning::clips_for_question(event, &clips, qa);
            let prompt = build_vqa_prompt(qa, &qa_clips);
            let answer = qa.answer.unwrap();
            put(
                format!("vqa/{}/{}", phase.index(), qa.qa_id),
                fingerprint_of(prompt.text, prompt.media),
                format!("answer_choice: {}", answer.letter()),
            );
        }
    }

    // Synthesis: the prompt depends on the analyses the pipeline produces,
    // which are fully determined by the fixtures above. Reproduce them.
    let mut analyses = Vec::new();
    for phase in PhaseLabel::ALL {
        let gt = event.ground_truth.as_ref().unwrap();
        let questions: Vec<_> = gt
            .qa
            .iter()
            .filter(|item| match item.phase {
                Some(p) => p == phase,
                None => phase == PhaseLabel::PreRecognition,
            })
            .cloned()
            .collect();
        let backend = pvir::backend::MockBackend::from_dir(fixtures_dir).unwrap();
        let analysis =
            pvir::reasoning::analyze_phase(&backend, "phavr", event, &seg, phase, &questions)
                .unwrap();
        analyses.push(analysis);
    }
    let info = pvir::synthesis::assemble_event_info(&seg, &analyses).unwrap();
    let sp = pvir::synthesis::build_synthesis_prompt(&info).unwrap();
    put(
        "synthesis".to_string(),
        fingerprint_of(sp.full_text(), Vec::new()),
        fixture_report_json(),
    );

    let mut index_body = serde_json::to_string_pretty(&index).unwrap();
    index_body.push('\n');
    std::fs::write(fixtures_dir.join("index.json"), index_body).unwrap();
}

/// Stages a complete runnable workspace: dataset dir with manifest +
/// event, fixtures dir, and a run config pointing at them. Returns the
/// config path.
pub fn stage_fixture_workspace(root: &Path) -> std::path::PathBuf {
    let dataset = root.join("dataset");
    let fixtures = root.join("fixtures");
    std::fs::create_dir_all(&dataset).unwrap();
    std::fs::create_dir_all(&fixtures).unwrap();

    let event_path = dataset.join("wts_fixture.json");
    let mut body = serde_json::to_string_pretty(&fixture_event_json()).unwrap();
    body.push('\n');
    std::fs::write(&event_path, body).unwrap();

    let manifest = serde_json::json!({
        "dataset_id": "fixture",
        "split": "test",
        "events": ["wts_fixture.json"]
    });
    std::fs::write(dataset.join("manifest.json"), manifest.to_string()).unwrap();

    let event = load_event(&event_path).unwrap();
    write_fixtures(&fixtures, &event);

    let config = serde_json::json!({
        "manifest": "dataset/manifest.json",
        "output_dir": "runs",
        "grounding": {"kind": "mock", "model_id": "tg", "fixtures_dir": "fixtures"},
        "reasoning": {"kind": "mock", "model_id": "phavr", "fixtures_dir": "fixtures"},
        "synthesis": {"kind": "mock", "model_id": "synth", "fixtures_dir": "fixtures"}
    });
    let config_path = root.join("config.json");
    std::fs::write(&config_path, config.to_string()).unwrap();
    config_path
}

/// Byte-for-byte snapshot of a directory tree, keyed by relative path.
pub fn snapshot_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let entry = entry.unwrap();
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}
