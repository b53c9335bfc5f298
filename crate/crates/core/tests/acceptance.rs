//! Acceptance suite. Runs without the libtest harness so that the one-line
//! verdict per criterion is always printed. Criterion 7 needs a live model
//! endpoint and never fails the suite.

use std::collections::{BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use gatos_core::domain::{normalize_code_label, Cluster, CodeOrigin, Codebook, EmbeddingVector, RunConfig, SummaryPoint};
use gatos_core::evaluation::match_themes;
use gatos_core::gateway::{hashing_embedding, Gateway, HttpBackend, ScriptedBackend, Transcript, OFFLINE_EMBED_DIMS};
use gatos_core::induction::{generate_starter_codes, induce_codebook, parse_induction_output, InductionOutcome};
use gatos_core::pipeline::{self, PipelineConfig, RunOptions, Stage, StageOutcome};
use gatos_core::semantic::{agglomerative_cluster, cosine_similarity, knn_codes, linkage, pca_fit_transform, CodeIndex};
use gatos_core::simulator::{sample_plan, Criteria, NamedItem, StudySpec, ThemeTruth};
use gatos_core::summarization::parse_summary;
use gatos_core::templates::TemplateSet;
use gatos_core::themes::{consolidate, consolidate_groups};
use gatos_core::Context;

type Check = fn() -> Result<String, String>;

struct Criterion {
    number: u8,
    name: &'static str,
    budget: Duration,
    gating: bool,
    check: Check,
}

fn main() {
    let criteria = [
        Criterion { number: 1, name: "parser goldens", budget: Duration::from_secs(1), gating: true, check: parser_goldens },
        Criterion { number: 2, name: "geometry oracles", budget: Duration::from_secs(10), gating: true, check: geometry_oracles },
        Criterion { number: 3, name: "end-to-end mock determinism", budget: Duration::from_secs(30), gating: true, check: mock_determinism },
        Criterion { number: 4, name: "induction bookkeeping", budget: Duration::from_secs(5), gating: true, check: induction_bookkeeping },
        Criterion { number: 5, name: "theme accounting", budget: Duration::from_secs(5), gating: true, check: theme_accounting },
        Criterion { number: 6, name: "evaluation oracle", budget: Duration::from_secs(5), gating: true, check: evaluation_oracle },
        Criterion { number: 7, name: "live mini-recovery", budget: Duration::from_secs(3600), gating: false, check: live_recovery },
        Criterion { number: 8, name: "simulator plan arithmetic", budget: Duration::from_secs(1), gating: true, check: plan_arithmetic },
    ];
    // Panics are reported through the verdict line instead.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over budget {:?}", c.budget)),
            other => other,
        };
        let verdict = match (&outcome, c.gating) {
            (Ok(_), true) => "PASS",
            (Err(_), true) => {
                failed += 1;
                "FAIL"
            }
            (Ok(_), false) => "REPORT",
            (Err(_), false) => "NOT RUN",
        };
        let detail = match &outcome {
            Ok(d) | Err(d) => d,
        };
        println!("criterion {} [{}]: {verdict} ({:.2}s) {detail}", c.number, c.name, elapsed.as_secs_f64());
    }
    let _ = std::panic::take_hook();
    if failed > 0 {
        println!("acceptance: {failed} gating criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all gating criteria passed");
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn run_config() -> RunConfig {
    RunConfig {
        data_type: "written response".into(),
        data_collection_context: "an employee survey about returning to the office".into(),
        research_question: "How do employees experience the return to the office?".into(),
        chat_model_id: "chat".into(),
        embed_model_id: "embed".into(),
        ..RunConfig::default()
    }
}

fn scripted<F>(f: F) -> Gateway
where
    F: Fn(&str) -> String + Send + Sync + 'static,
{
    Gateway::live(Arc::new(ScriptedBackend::new(move |req| Ok(f(&req.prompt)))))
}

// ---------------------------------------------------------------- 1

const SUMMARY_GOLDEN: &str = "My expert summary:

    1. Excited about returning to the office

    2. Concerned about career advancement in hybrid work arrangements

    3. Fears missing out on networking opportunities with clients and colleagues

    4. Believes remote work can lead to isolation and reduced connections

    5. Hopes company balances flexibility with face-to-face interaction for collective growth";

const CODE_CREATED_OUTPUT: &str = "My expert analysis:

    Step 1 (codebook examination)

    - The existing codebook includes codes related to technology and communication such as \"technological challenges\" and \"flexible scheduling and remote work options\".

    Step 2 (current data examination)

    - The main theme in the written response is the need for reliable, user-friendly video conferencing tools and robust infrastructure for seamless communication.

    Step 3 (analysis part 1)

    - The existing code \"technological challenges\" partially captures the issues related to video conferencing tools but does not fully encompass the specific needs mentioned in the response.

    - The code \"flexible scheduling and remote work options\" touches on the need for communication platforms but is more focused on scheduling flexibility rather than the technical aspects of communication tools.

    Step 4 (analysis part 2)

    - To better capture the specific technological needs expressed in the written response, a new code could be created to encapsulate these requirements.

    - This new code would focus on the need for reliable and user-friendly video conferencing tools, secure VPNs, and high-speed internet.

    Step 5 (reflection on planned suggestions)

    - The creation of this new code aligns with the evaluation criteria as it minimizes redundancy and provides a more precise description of the technological needs mentioned in the response.

    - This code is essential for capturing the nuances of the technological challenges faced by individuals working from home.

    My logical recommendation:

    Code: reliable video conferencing tools

    Definition: Need for user-friendly, reliable video conferencing tools (e.g., Zoom, Google Meet), secure VPNs, and high-speed internet to facilitate seamless communication and collaboration.";

const NO_CODE_OUTPUT: &str = "My expert analysis:

    Step 1 (codebook examination)

    - The existing codebook includes codes related to work-life balance, hybrid work flexibility, and family responsibilities.

    Step 2 (current data examination)

    - The main theme in the written response is the desire for flexible, hybrid work arrangements that accommodate various personal needs, including caring for elderly parents or young kids.

    Step 3 (analysis part 1)

    - The existing codes \"hybrid work flexibility\" and \"work-life balance\" partially capture the main theme but do not fully encompass the specific need for accommodating diverse family responsibilities.

    Step 4 (analysis part 2)

    - No new codes needed: The existing code \"hybrid work flexibility\" can be expanded to include the nuance of accommodating various personal needs, thus avoiding unnecessary code creation and maintaining parsimony in the codebook.

    Step 5 (reflection on planned suggestions)

    - Reflecting on the evaluation criteria, the recommendation maintains the integrity of the existing codes while ensuring that the specific need for diverse family responsibilities is captured without creating redundant or overly specific codes.

    My logical recommendation:

    No new codes needed
";

const THEME_GOLDEN_CODES: [&str; 12] = [
    "Flexible work arrangements for wellbeing",
    "Flexible work hours",
    "In office work frequency and day uncertainty",
    "Uncertainty about remote work frequency and future schedules",
    "Flexible work arrangements for caregivers",
    "Individualized flexible work arrangements",
    "Supportive inclusive work environment",
    "Resistance to traditional office hours",
    "Staggered work hours/shifts",
    "Clear workday end time and personal time protection guidelines",
    "Break and lunch dynamics uncertainty",
    "Control over work hours",
];

const THEME_GOLDEN_NAMES: [&str; 5] = [
    "Flexibility in Work Arrangements",
    "Uncertainty in Work Schedules",
    "Supportive Work Environment",
    "Clear Guidelines and Boundaries",
    "Control Over Work Hours",
];

/// Which codes each theme groups, by index into `THEME_GOLDEN_CODES`.
const THEME_GOLDEN_GROUPING: [&[usize]; 5] = [&[0, 1, 4, 5, 7, 8], &[2, 3, 10], &[6], &[9], &[11]];

fn theme_golden_response() -> String {
    let themes: Vec<_> = THEME_GOLDEN_NAMES
        .iter()
        .zip(THEME_GOLDEN_GROUPING)
        .map(|(name, idx)| {
            json!({
                "theme_name": name,
                "concept": format!("{name} concept"),
                "codes": idx.iter().map(|i| THEME_GOLDEN_CODES[*i]).collect::<Vec<_>>(),
                "relationship": "grouped",
            })
        })
        .collect();
    let body = json!({
        "initial_observations": ["several codes concern flexibility of hours"],
        "suggested_themes": themes,
        "reflection": {
            "broad_or_narrow_themes": "none",
            "contradictions_or_unexpected_patterns": "none",
            "potential_subthemes": "none",
            "unclassified_codes": "None"
        }
    });
    format!("```json\n{}\n```", serde_json::to_string_pretty(&body).unwrap())
}

fn parser_goldens() -> Result<String, String> {
    let parsed = parse_summary(SUMMARY_GOLDEN).map_err(|e| e.to_string())?;
    let expected = [
        "Excited about returning to the office",
        "Concerned about career advancement in hybrid work arrangements",
        "Fears missing out on networking opportunities with clients and colleagues",
        "Believes remote work can lead to isolation and reduced connections",
        "Hopes company balances flexibility with face-to-face interaction for collective growth",
    ];
    ensure!(parsed.points == expected, "summary points {:?}", parsed.points);

    let created = parse_induction_output(7, CODE_CREATED_OUTPUT).map_err(|e| e.to_string())?;
    match &created.outcome {
        InductionOutcome::NewCodes(codes) => {
            ensure!(codes.len() == 1, "expected one code, got {codes:?}");
            ensure!(codes[0].label == "reliable video conferencing tools", "label {:?}", codes[0].label);
            ensure!(
                codes[0].definition
                    == "Need for user-friendly, reliable video conferencing tools (e.g., Zoom, Google Meet), secure VPNs, and high-speed internet to facilitate seamless communication and collaboration.",
                "definition {:?}",
                codes[0].definition
            );
        }
        other => return Err(format!("expected a new code, got {other:?}")),
    }
    ensure!(created.cluster_id == 7 && created.analysis_text.contains("Step 5"), "analysis text not retained");

    let declined = parse_induction_output(8, NO_CODE_OUTPUT).map_err(|e| e.to_string())?;
    ensure!(declined.outcome == InductionOutcome::NoNewCodes, "decline parsed as {:?}", declined.outcome);

    let cfg = run_config();
    let templates = TemplateSet::builtin();
    let gateway = scripted(|_| theme_golden_response());
    let ctx = Context::new(&gateway, &templates, &cfg);
    let mut codebook = Codebook::new();
    for (i, code) in THEME_GOLDEN_CODES.iter().enumerate() {
        codebook.insert(code, "d", CodeOrigin::Induced(i as u32)).map_err(|e| e.to_string())?;
    }
    let labels: Vec<String> = codebook.labels().map(str::to_string).collect();
    let out = consolidate_groups(&ctx, &codebook, &[labels]).map_err(|e| e.to_string())?;
    let names: Vec<&str> = out.themes.iter().map(|t| t.theme.name.as_str()).collect();
    ensure!(names == THEME_GOLDEN_NAMES, "theme names {names:?}");
    for (theme, idx) in out.themes.iter().zip(THEME_GOLDEN_GROUPING) {
        let want: Vec<String> = idx.iter().map(|i| normalize_code_label(THEME_GOLDEN_CODES[*i]).unwrap()).collect();
        ensure!(theme.theme.codes == want, "codes of {}: {:?}", theme.theme.name, theme.theme.codes);
    }
    ensure!(out.unclassified.is_empty(), "unclassified {:?}", out.unclassified);
    Ok("5-point summary, created code, decline, 12 codes into 5 themes".into())
}

// ---------------------------------------------------------------- 2

fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// (D, explained variance) from a full eigendecomposition.
fn pca_oracle(rows: &[Vec<f64>], target: f64) -> (usize, f64) {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let c: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let m = if n <= d {
        (0..n).map(|i| (0..n).map(|j| (0..d).map(|k| c[i][k] * c[j][k]).sum()).collect()).collect()
    } else {
        (0..d).map(|i| (0..d).map(|j| (0..n).map(|k| c[k][i] * c[k][j]).sum()).collect()).collect()
    };
    let mut eig: Vec<f64> = jacobi_eigenvalues(m).into_iter().map(|v| v.max(0.0)).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().sum();
    let mut cumulative = 0.0;
    for (i, v) in eig.iter().enumerate() {
        cumulative += v / total;
        if cumulative >= target - 1e-12 {
            return (i + 1, cumulative);
        }
    }
    (eig.len(), 1.0)
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    // Per-column scales decay so the selected D varies between fixtures.
    let scales: Vec<f64> = (0..d).map(|j| 0.75f64.powi(j as i32) * rng.random_range(0.5..1.5)).collect();
    (0..n)
        .map(|_| scales.iter().map(|s| s * rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn naive_linkage(rows: &[Vec<f64>]) -> Vec<(BTreeSet<usize>, BTreeSet<usize>, f64)> {
    let dist = |a: usize, b: usize| rows[a].iter().zip(&rows[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut clusters: Vec<BTreeSet<usize>> = (0..rows.len()).map(|i| BTreeSet::from([i])).collect();
    let mut merges = Vec::new();
    while clusters.len() > 1 {
        let mut best = (0, 1, f64::INFINITY);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let total: f64 = clusters[i].iter().flat_map(|a| clusters[j].iter().map(move |b| (*a, *b))).map(|(a, b)| dist(a, b)).sum();
                let avg = total / (clusters[i].len() * clusters[j].len()) as f64;
                if avg < best.2 {
                    best = (i, j, avg);
                }
            }
        }
        let (i, j, h) = best;
        let b = clusters.remove(j);
        let a = clusters.remove(i);
        merges.push((a.clone(), b.clone(), h));
        clusters.push(a.union(&b).copied().collect());
    }
    merges
}

fn geometry_oracles() -> Result<String, String> {
    let v = |x: &[f64]| EmbeddingVector::new("m", x.to_vec());
    let cases = [
        (vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], 32.0 / (14.0f64.sqrt() * 77.0f64.sqrt())),
        (vec![1.0, 0.0], vec![0.0, 1.0], 0.0),
        (vec![1.0, 1.0], vec![1.0, 0.0], std::f64::consts::FRAC_1_SQRT_2),
        (vec![2.0, -1.0], vec![-4.0, 2.0], -1.0),
    ];
    for (a, b, want) in &cases {
        let got = cosine_similarity(&v(a), &v(b)).map_err(|e| e.to_string())?;
        ensure!((got - want).abs() <= 1e-9, "cosine {a:?} {b:?}: {got} vs {want}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut shapes: Vec<(usize, usize)> = (0..19).map(|_| (rng.random_range(4..40), rng.random_range(3..30))).collect();
    shapes.push((50, 1024));
    for (n, d) in shapes {
        let rows = random_rows(&mut rng, n, d);
        let target = rng.random_range(0.5..0.99);
        let m = DMatrix::from_row_iterator(n, d, rows.iter().flatten().copied());
        let got = pca_fit_transform(&m, target).map_err(|e| e.to_string())?;
        let (want_d, want_var) = pca_oracle(&rows, target);
        ensure!(got.components == want_d, "{n}x{d} target {target}: D {} vs oracle {want_d}", got.components);
        ensure!((got.explained - want_var).abs() <= 1e-6, "{n}x{d}: variance {} vs {want_var}", got.explained);
    }

    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=8);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let merges = linkage(&rows);
        let oracle = naive_linkage(&rows);
        ensure!(merges.len() == oracle.len(), "seed {seed}: merge count");
        let mut members: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
        for (i, (m, (oa, ob, oh))) in merges.iter().zip(&oracle).enumerate() {
            let (a, b) = (members[m.left].clone(), members[m.right].clone());
            let same = (a == *oa && b == *ob) || (a == *ob && b == *oa);
            ensure!(same, "seed {seed} merge {i}: {a:?}+{b:?} vs {oa:?}+{ob:?}");
            ensure!((m.height - oh).abs() <= 1e-9, "seed {seed} merge {i}: height {} vs {oh}", m.height);
            members.push(a.union(&b).copied().collect());
        }
        let size = rng.random_range(1..=n);
        let k = n.div_ceil(size);
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let got: BTreeSet<BTreeSet<usize>> = agglomerative_cluster(&rows, &ids, size)
            .into_iter()
            .map(|c| c.member_ids.iter().map(|m| m.parse().unwrap()).collect())
            .collect();
        let mut parts: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
        for (a, b, _) in oracle.iter().take(n - k) {
            parts.retain(|p| p != a && p != b);
            parts.push(a.union(b).copied().collect());
        }
        let want: BTreeSet<BTreeSet<usize>> = parts.into_iter().collect();
        ensure!(got == want, "seed {seed}: cut partition {got:?} vs {want:?}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let dims = 16;
    let mut index = CodeIndex::new();
    let mut codes = Vec::new();
    for i in 0..60 {
        let vec = EmbeddingVector::new("m", (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect());
        index.insert(format!("code {i}"), &vec).map_err(|e| e.to_string())?;
        codes.push((format!("code {i}"), vec));
    }
    for q in 0..200 {
        let query = EmbeddingVector::new("m", (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect());
        let k = rng.random_range(1..=10);
        let got = knn_codes(&query, &index, k).map_err(|e| e.to_string())?;
        let mut brute: Vec<(usize, f64)> = codes
            .iter()
            .enumerate()
            .map(|(i, (_, v))| {
                let dot: f64 = v.values.iter().zip(&query.values).map(|(a, b)| a * b).sum();
                (i, dot / (v.norm() * query.norm()))
            })
            .collect();
        brute.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ensure!(got.len() == k, "query {q}: {} results for k={k}", got.len());
        for ((label, score), (i, want)) in got.iter().zip(&brute) {
            ensure!(*label == codes[*i].0 && (score - want).abs() <= 1e-9, "query {q}: {label} {score} vs {} {want}", codes[*i].0);
        }
    }
    Ok("4 cosines, 20 PCA fixtures, 100 linkage seeds, 200 kNN queries".into())
}

// ---------------------------------------------------------------- 3

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini40")
}

fn mock_determinism() -> Result<String, String> {
    let dir = fixture_dir();
    let cfg = PipelineConfig::load(&dir.join("config.toml")).map_err(|e| e.to_string())?;
    let transcript = Transcript::load(&dir.join("transcript.jsonl")).map_err(|e| e.to_string())?;
    let templates = TemplateSet::builtin();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut manifests = Vec::new();
    for run in ["first", "second"] {
        let gateway = Gateway::replay(transcript.clone());
        let ctx = Context::new(&gateway, &templates, &cfg.run);
        let report = pipeline::run(&ctx, &cfg, &tmp.path().join(run), &RunOptions::default()).map_err(|e| e.to_string())?;
        let ran = report.outcomes.iter().filter(|(_, o)| *o == StageOutcome::Ran).count();
        ensure!(ran == 6, "{run} run executed {ran} of 6 stages");
        manifests.push(report.manifest);
    }
    let docs = std::fs::read_to_string(tmp.path().join("first/simulate/corpus.jsonl")).map_err(|e| e.to_string())?;
    ensure!(docs.lines().count() == 40, "fixture corpus has {} documents", docs.lines().count());
    for stage in Stage::ALL {
        let a = manifests[0].result(stage).ok_or("stage missing")?;
        let b = manifests[1].result(stage).ok_or("stage missing")?;
        ensure!(a.outputs == b.outputs, "{stage}: artifact hashes differ");
        ensure!(a.output_hash == b.output_hash, "{stage}: stage hash differs");
    }
    let gateway = Gateway::replay(transcript);
    let ctx = Context::new(&gateway, &templates, &cfg.run);
    let again = pipeline::run(&ctx, &cfg, &tmp.path().join("first"), &RunOptions::default()).map_err(|e| e.to_string())?;
    ensure!(
        again.outcomes.iter().all(|(_, o)| *o == StageOutcome::Skipped),
        "unchanged rerun did not skip every stage"
    );
    Ok("6 stages x 2 runs, identical artifact hashes; resumed run skipped all stages".into())
}

// ---------------------------------------------------------------- 4

#[derive(Clone, Copy, Debug)]
enum Policy {
    Decline,
    Create,
    Alternate,
}

const DECLINE: &str = "My expert analysis:\n1. Covered.\nMy logical recommendation:\nNo new codes needed";

fn induction_gateway(policy: Policy) -> Gateway {
    let calls = AtomicUsize::new(0);
    scripted(move |prompt| {
        if prompt.contains("<existing codebook>") {
            let n = calls.fetch_add(1, Ordering::SeqCst);
            let create = match policy {
                Policy::Decline => false,
                Policy::Create => true,
                Policy::Alternate => n % 2 == 0,
            };
            if create {
                format!("My expert analysis:\n1. New idea.\nMy logical recommendation:\nCode: emergent idea {n}\nDefinition: Idea first seen in call {n}.")
            } else {
                DECLINE.to_string()
            }
        } else {
            (1..=20).map(|i| format!("{i}. starter code {i}")).collect::<Vec<_>>().join("\n")
        }
    })
}

fn induction_bookkeeping() -> Result<String, String> {
    let clusters_n = 12;
    let mut points = Vec::new();
    let mut clusters = Vec::new();
    for c in 0..clusters_n {
        let mut members = Vec::new();
        for j in 1..=3 {
            let p = SummaryPoint::new(&format!("doc{c}"), j, format!("participant mentions topic{c} aspect{j} of the office"));
            members.push(p.id.clone());
            points.push(p);
        }
        clusters.push(Cluster { id: c, member_ids: members });
    }
    let cfg = run_config();
    let templates = TemplateSet::builtin();
    let mut sizes = Vec::new();
    for policy in [Policy::Decline, Policy::Create, Policy::Alternate] {
        let gateway = induction_gateway(policy);
        let ctx = Context::new(&gateway, &templates, &cfg);
        let starters = generate_starter_codes(&ctx).map_err(|e| e.to_string())?;
        ensure!(starters.len() == 20, "{policy:?}: {} starters", starters.len());
        let out = induce_codebook(&ctx, &clusters, &points, &starters).map_err(|e| e.to_string())?;
        let created: usize = out.decisions.iter().map(|d| d.created.len()).sum();
        let size = out.codebook.len();
        ensure!(size == 20 + created, "{policy:?}: size {size} != 20 + {created}");
        let curve = out.codebook.cumulative_sizes();
        ensure!(curve.windows(2).all(|w| w[0] <= w[1]), "{policy:?}: curve decreases {curve:?}");
        ensure!(curve.len() == clusters_n as usize, "{policy:?}: curve has {} points", curve.len());
        let declines = out
            .decisions
            .iter()
            .filter(|d| matches!(d.decision.as_ref().map(|x| &x.outcome), Some(InductionOutcome::NoNewCodes)))
            .count();
        match policy {
            Policy::Decline => {
                let labels: Vec<&str> = out.codebook.labels().collect();
                let want: Vec<&str> = starters.iter().map(|s| s.label.as_str()).collect();
                ensure!(labels == want, "always-decline changed the codebook");
            }
            Policy::Create => ensure!(size == 20 + clusters_n as usize, "always-create size {size}"),
            Policy::Alternate => {}
        }
        if declines > 0 {
            ensure!(size < 20 + clusters_n as usize, "{policy:?}: {declines} declines but size {size}");
        }
        sizes.push(size);
    }
    Ok(format!("codebook sizes decline/create/alternate = {sizes:?} over {clusters_n} clusters"))
}

// ---------------------------------------------------------------- 5

fn listed_codes(prompt: &str) -> Vec<String> {
    let start = prompt.rfind("<codes>").map(|i| i + "<codes>".len()).unwrap_or(0);
    let end = prompt[start..].find("</codes>").map(|i| i + start).unwrap_or(prompt.len());
    prompt[start..end]
        .lines()
        .filter_map(|l| l.split_once(". ").map(|(_, rest)| rest.trim().to_string()))
        .collect()
}

fn random_theme_response(prompt: &str) -> String {
    let codes = listed_codes(prompt);
    let digest = gatos_core::domain::sha256_hex(prompt.as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from_str_radix(&digest[..16], 16).unwrap());
    if rng.random_bool(0.15) {
        return "I could not decide.".into();
    }
    let names = ["Workplace Flexibility", "workplace flexibility", "Commute", "Team Spirit", "Safety", "Tools"];
    let themes: Vec<_> = (0..rng.random_range(1..5))
        .map(|_| {
            let mut picked: Vec<String> = codes.iter().filter(|_| rng.random_bool(0.4)).cloned().collect();
            if rng.random_bool(0.3) {
                picked.push("a code nobody created".into());
            }
            json!({
                "theme_name": names[rng.random_range(0..names.len())],
                "concept": "c",
                "codes": picked,
                "relationship": "r",
            })
        })
        .collect();
    json!({
        "initial_observations": [],
        "suggested_themes": themes,
        "reflection": {
            "broad_or_narrow_themes": "",
            "contradictions_or_unexpected_patterns": "",
            "potential_subthemes": "",
            "unclassified_codes": []
        }
    })
    .to_string()
}

fn theme_accounting() -> Result<String, String> {
    let cfg = RunConfig { theme_cluster_size: 8, ..run_config() };
    let templates = TemplateSet::builtin();
    let mut runs = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut codebook = Codebook::new();
        let words = ["office", "commute", "team", "safety", "tools", "schedule", "pay", "desk", "lunch", "manager"];
        while codebook.len() < 30 {
            let label = format!("{} {} {}", words[rng.random_range(0..10)], words[rng.random_range(0..10)], rng.random_range(0..1000));
            let _ = codebook.insert(&label, "d", CodeOrigin::Induced(0));
        }
        let gateway = scripted(random_theme_response);
        let ctx = Context::new(&gateway, &templates, &cfg);
        let out = match consolidate(&ctx, &codebook, seed) {
            Ok(o) => o,
            Err(e) if e.to_string().contains("failed to produce valid JSON") => continue,
            Err(e) => return Err(e.to_string()),
        };
        runs += 1;
        let in_themes: HashSet<&str> = out.themes.iter().flat_map(|t| t.theme.codes.iter().map(String::as_str)).collect();
        let unclassified: HashSet<&str> = out.unclassified.iter().map(String::as_str).collect();
        let all: HashSet<&str> = codebook.labels().collect();
        ensure!(in_themes.is_disjoint(&unclassified), "seed {seed}: a code is both themed and unclassified");
        let union: HashSet<&str> = in_themes.union(&unclassified).copied().collect();
        ensure!(union == all, "seed {seed}: accounting covers {} of {} codes", union.len(), all.len());
        let names: HashSet<String> = out.themes.iter().map(|t| normalize_code_label(&t.theme.name).unwrap()).collect();
        ensure!(names.len() == out.themes.len(), "seed {seed}: duplicate theme names");
    }
    ensure!(runs >= 5, "only {runs} mock runs produced themes");
    Ok(format!("{runs} randomized mock runs of 30 codes fully accounted"))
}

// ---------------------------------------------------------------- 6

fn evaluation_oracle() -> Result<String, String> {
    let cfg = run_config();
    let templates = TemplateSet::builtin();
    let gateway = scripted(|_| String::new());
    let ctx = Context::new(&gateway, &templates, &cfg);
    let themes: Vec<String> = ["Flexible Hours", "Commute Costs", "Team Belonging", "Office Safety", "Better Tools"]
        .map(String::from)
        .to_vec();
    let subs: Vec<String> = [
        "Desire for flexible working hours",
        "Cost of the daily commute",
        "Feeling part of the team",
        "Safety protocols in the office",
        "Need for better video tools",
    ]
    .map(String::from)
    .to_vec();
    let rows = match_themes(&ctx, &themes, &subs).map_err(|e| e.to_string())?;
    let embed = |s: &str| hashing_embedding(&normalize_code_label(s).unwrap(), OFFLINE_EMBED_DIMS);
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    for (row, sub) in rows.iter().zip(&subs) {
        let sv = embed(sub);
        let mut scored: Vec<(usize, f64)> = themes.iter().enumerate().map(|(i, t)| (i, cos(&embed(t), &sv))).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ensure!(row.top_matches.len() == 3, "{sub}: {} matches", row.top_matches.len());
        for ((name, score), (i, want)) in row.top_matches.iter().zip(&scored) {
            ensure!(*name == themes[*i] && (score - want).abs() <= 1e-9, "{sub}: {name} {score} vs {} {want}", themes[*i]);
        }
        ensure!(row.matched == (scored[0].1 >= cfg.match_threshold), "{sub}: matched flag");
    }
    let identity = match_themes(&ctx, &subs, &subs).map_err(|e| e.to_string())?;
    for (row, sub) in identity.iter().zip(&subs) {
        ensure!(row.matched && (row.best() - 1.0).abs() <= 1e-9, "{sub}: identity best {}", row.best());
        ensure!(row.top_matches[0].0 == *sub, "{sub}: identity matched {}", row.top_matches[0].0);
    }
    Ok("5x5 scores within 1e-9 of pairwise cosines; identity rows match at 1.0".into())
}

// ---------------------------------------------------------------- 7

fn live_recovery() -> Result<String, String> {
    let (Ok(endpoint), Ok(chat), Ok(embed)) = (
        std::env::var("GATOS_ENDPOINT"),
        std::env::var("GATOS_CHAT_MODEL"),
        std::env::var("GATOS_EMBED_MODEL"),
    ) else {
        return Err("set GATOS_ENDPOINT, GATOS_CHAT_MODEL and GATOS_EMBED_MODEL to run".into());
    };
    let study = StudySpec {
        theme_count: 4,
        subthemes_per_theme: 2,
        samples_per_subtheme: 18,
        data_type: "written response".into(),
        data_collection_context: "an employee survey about returning to the office after remote work".into(),
        ..StudySpec::default()
    };
    let cfg = PipelineConfig {
        run: RunConfig {
            chat_model_id: chat,
            embed_model_id: embed,
            endpoint_url: endpoint.clone(),
            ..run_config()
        },
        study: Some(study),
        input: Default::default(),
    };
    let backend = HttpBackend::new(endpoint, std::env::var("GATOS_API_KEY").ok()).map_err(|e| e.to_string())?;
    let gateway = Gateway::live(Arc::new(backend));
    let templates = TemplateSet::builtin();
    let ctx = Context::new(&gateway, &templates, &cfg.run);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline::run(&ctx, &cfg, tmp.path(), &RunOptions::default()).map_err(|e| e.to_string())?;
    let coverage: serde_json::Value = pipeline::read_json(&tmp.path().join("evaluate/coverage.json")).map_err(|e| e.to_string())?;
    let pct = coverage["pct_matched"].as_f64().unwrap_or(0.0);
    Ok(format!("{pct:.1}% of sub-themes matched at 0.75 (target 75%)"))
}

// ---------------------------------------------------------------- 8

fn plan_arithmetic() -> Result<String, String> {
    let spec = StudySpec::default();
    let named = |prefix: &str, n: usize| (0..n).map(|i| NamedItem { name: format!("{prefix} {i}"), description: String::new() }).collect::<Vec<_>>();
    let criteria = Criteria {
        personas: named("persona", spec.persona_count),
        contexts: named("context", spec.context_count),
        themes: (0..spec.theme_count)
            .map(|t| ThemeTruth {
                theme: format!("theme {t}"),
                sub_themes: (0..spec.subthemes_per_theme).map(|s| format!("theme {t} sub {s}")).collect(),
            })
            .collect(),
    };
    let plan = sample_plan(&spec, &criteria, "chat", 11).map_err(|e| e.to_string())?;
    ensure!(plan.rows.len() == 1152, "plan has {} rows", plan.rows.len());
    let again = sample_plan(&spec, &criteria, "chat", 11).map_err(|e| e.to_string())?;
    ensure!(plan == again, "seeded re-sampling differs");
    let other = sample_plan(&spec, &criteria, "chat", 12).map_err(|e| e.to_string())?;
    ensure!(other.rows != plan.rows, "different seeds gave the same plan");
    Ok("8 x 8 x 18 = 1152 rows; same seed, same plan".into())
}
