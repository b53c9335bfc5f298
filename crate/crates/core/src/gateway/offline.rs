//! Offline stand-ins for a model server.
//!
//! [`ScriptedBackend`] answers chat requests with a caller-supplied closure.
//! [`OfflineModel`] is a small rule-based responder that understands every
//! prompt the pipeline sends and answers in the expected format, so a full
//! run (and its transcript fixtures) can be produced without a model
//! server. Both embed text with [`hashing_embedding`], a bag-of-stems
//! feature hash.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{ChatRequest, GatewayError, ModelBackend};

pub const OFFLINE_EMBED_DIMS: usize = 128;

type ChatFn = dyn Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync;

pub struct ScriptedBackend {
    chat_fn: Box<ChatFn>,
    dims: usize,
}

impl ScriptedBackend {
    pub fn new<F>(chat_fn: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    {
        Self {
            chat_fn: Box::new(chat_fn),
            dims: OFFLINE_EMBED_DIMS,
        }
    }
}

impl ModelBackend for ScriptedBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        (self.chat_fn)(req)
    }

    fn embed(&self, _model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        Ok(texts.iter().map(|t| hashing_embedding(t, self.dims)).collect())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be", "been", "being",
    "but", "by", "can", "could", "did", "do", "does", "for", "from", "had", "has", "have", "how", "i", "if",
    "in", "into", "is", "it", "its", "i'm", "i've", "just", "me", "more", "most", "my", "need", "not", "of",
    "on", "or", "our", "out", "so", "some", "than", "that", "the", "their", "them", "there", "these", "they",
    "this", "those", "to", "too", "up", "us", "very", "was", "we", "were", "what", "when", "which", "while",
    "who", "will", "with", "would", "you", "your", "lot", "really", "every", "almost", "something", "thing",
    "things", "think", "keep", "make", "much", "many", "one", "week", "day", "feel", "way",
];

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '-'))
        .map(|w| w.trim_matches(|c: char| c == '\'' || c == '-').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

fn stem(word: &str) -> String {
    for suffix in ["ing", "ed", "es", "s"] {
        if let Some(base) = word.strip_suffix(suffix) {
            if base.len() >= 4 {
                return base.to_string();
            }
        }
    }
    word.to_string()
}

/// Content words of `text` as (stem, surface form) pairs.
fn content_words(text: &str) -> Vec<(String, String)> {
    words(text)
        .into_iter()
        .filter(|w| !STOPWORDS.contains(&w.as_str()) && w.len() > 1)
        .map(|w| (stem(&w), w))
        .collect()
}

/// Deterministic bag-of-stems embedding. Stems carry weight 2 and their
/// character trigrams weight 1, so related word forms land close together.
pub fn hashing_embedding(text: &str, dims: usize) -> Vec<f64> {
    let mut v = vec![0.0; dims];
    let add = |v: &mut Vec<f64>, feature: &str, weight: f64| {
        let h = fnv1a(feature.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % dims as u64) as usize] += sign * weight;
    };
    let mut stems: Vec<String> = content_words(text).into_iter().map(|(s, _)| s).collect();
    if stems.is_empty() {
        stems = words(text);
    }
    for s in &stems {
        add(&mut v, &format!("w:{s}"), 2.0);
        let padded: Vec<char> = format!("#{s}#").chars().collect();
        for tri in padded.windows(3) {
            add(&mut v, &format!("t:{}", tri.iter().collect::<String>()), 1.0);
        }
    }
    if v.iter().all(|x| *x == 0.0) {
        add(&mut v, &format!("raw:{text}"), 1.0);
    }
    v
}

/// Rule-based responder for every prompt the pipeline renders.
#[derive(Debug, Clone, Default)]
pub struct OfflineModel;

impl ModelBackend for OfflineModel {
    fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let p = req.prompt.as_str();
        let response = if p.starts_with("You are an expert text analyst") {
            summary_response(p)
        } else if p.starts_with("You are participant number") {
            simulated_response(p)
        } else if p.contains("<existing codebook>") {
            induction_response(p)
        } else if p.contains("\"suggested_themes\"") {
            theme_response(p)
        } else if p.contains("hypothetical codes") {
            starter_response(p)
        } else if p.contains("distinct personas") {
            list_response(p, "distinct personas", &persona_bank())
        } else if p.contains("distinct settings") {
            list_response(p, "distinct settings", &context_bank())
        } else if p.contains("distinct sub-themes") {
            subtheme_response(p)
        } else if p.contains("distinct themes") {
            let themes: Vec<String> = THEME_BANK.iter().map(|(t, _)| t.to_string()).collect();
            list_response(p, "distinct themes", &themes)
        } else {
            return Err(GatewayError::Protocol("offline model does not recognise this prompt".into()));
        };
        Ok(response)
    }

    fn embed(&self, _model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        Ok(texts.iter().map(|t| hashing_embedding(t, OFFLINE_EMBED_DIMS)).collect())
    }
}

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.rfind(open)? + open.len();
    let end = text[start..].find(close)? + start;
    Some(&text[start..end])
}

fn enumerated(block: &str) -> Vec<String> {
    block
        .lines()
        .map(|l| {
            let l = l.trim();
            let rest = l.trim_start_matches(|c: char| c.is_ascii_digit());
            if rest.len() < l.len() {
                rest.trim_start_matches(['.', ')']).trim().to_string()
            } else {
                l.trim_start_matches('-').trim().to_string()
            }
        })
        .filter(|l| !l.is_empty())
        .collect()
}

fn number_after(text: &str, prefix: &str) -> Option<usize> {
    let start = text.find(prefix)? + prefix.len();
    text[start..]
        .trim_start()
        .split(|c: char| !c.is_ascii_digit())
        .next()?
        .parse()
        .ok()
}

fn number_before(text: &str, suffix: &str) -> Option<usize> {
    let end = text.find(suffix)?;
    text[..end]
        .trim_end()
        .rsplit(|c: char| !c.is_ascii_digit())
        .next()?
        .parse()
        .ok()
}

fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        current.push(c);
        let boundary = matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace());
        if boundary {
            let s = current.trim().to_string();
            if !s.is_empty() {
                out.push(s);
            }
            current.clear();
        }
    }
    let s = current.trim().to_string();
    if !s.is_empty() {
        out.push(s);
    }
    out
}

fn summary_response(prompt: &str) -> String {
    let text = between(prompt, "<text>", "</text>").unwrap_or("");
    let points: Vec<String> = sentences(text)
        .into_iter()
        .map(|s| s.trim_end_matches(['.', '!', '?']).to_string())
        .filter(|s| content_words(s).len() >= 2)
        .take(8)
        .collect();
    let mut out = String::from("My summary:\n");
    if points.is_empty() {
        out.push_str("1. Nothing substantive was said\n");
    }
    for (i, p) in points.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, p));
    }
    out
}

const STARTER_BANK: &[&str] = &[
    "communication clarity",
    "work-life balance",
    "career growth opportunities",
    "management support",
    "team collaboration",
    "workload concerns",
    "job security",
    "recognition and appreciation",
    "organizational trust",
    "training needs",
    "technology access",
    "health and safety",
    "commuting burden",
    "flexible scheduling",
    "workplace relationships",
    "policy fairness",
    "autonomy at work",
    "stress and burnout",
    "resource availability",
    "change management",
    "feedback quality",
    "goal alignment",
    "inclusion and belonging",
    "leadership accountability",
];

fn starter_response(prompt: &str) -> String {
    let k = number_after(prompt, "generate").unwrap_or(20);
    (0..k)
        .map(|i| {
            let label = STARTER_BANK
                .get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("additional topic {}", i + 1));
            format!("{}. {}", i + 1, label)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn induction_response(prompt: &str) -> String {
    let codes = enumerated(between(prompt, "<existing codebook>", "</existing codebook>").unwrap_or(""));
    let summaries = enumerated(between(prompt, "<text_to_analyze>", "</text_to_analyze>").unwrap_or(""));

    // stem -> (summaries mentioning it, first position, surface form)
    let mut stats: HashMap<String, (usize, usize, String)> = HashMap::new();
    let mut position = 0;
    for summary in &summaries {
        let mut seen = HashSet::new();
        for (s, surface) in content_words(summary) {
            position += 1;
            if seen.insert(s.clone()) {
                let entry = stats.entry(s).or_insert((0, position, surface));
                entry.0 += 1;
            }
        }
    }
    let mut ranked: Vec<(String, (usize, usize, String))> = stats.into_iter().collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    let min_support = if summaries.len() > 1 { 2 } else { 1 };
    let mut top: Vec<(usize, String, String)> = ranked
        .into_iter()
        .filter(|(_, (count, _, _))| *count >= min_support)
        .take(3)
        .map(|(s, (_, pos, surface))| (pos, s, surface))
        .collect();
    top.sort();

    let analysis = "My expert analysis:\nStep 1 (codebook examination)\n- The nearest existing codes were reviewed.\nStep 2 (current data examination)\n- The summaries share a recurring idea.\nStep 3 (analysis part 1)\n- Existing codes were compared with that idea.\nStep 4 (analysis part 2)\n- Parsimony was weighed before proposing anything new.\nStep 5 (reflection on planned suggestions)\n- The recommendation avoids redundant codes.\n";

    let candidate: HashSet<&str> = top.iter().map(|(_, s, _)| s.as_str()).collect();
    let needed_overlap = candidate.len().min(2);
    let covered = candidate.is_empty()
        || codes.iter().any(|code| {
            let stems: HashSet<String> = content_words(code).into_iter().map(|(s, _)| s).collect();
            candidate.iter().filter(|c| stems.contains(**c)).count() >= needed_overlap
        });
    if covered {
        return format!("{analysis}My logical recommendation:\nNo new codes needed\n");
    }
    let surfaces: Vec<&str> = top.iter().map(|(_, _, w)| w.as_str()).collect();
    let label = surfaces.join(" ");
    let definition = format!(
        "Summary points that discuss {}.",
        match surfaces.as_slice() {
            [only] => only.to_string(),
            [init @ .., last] => format!("{} and {}", init.join(", "), last),
            [] => unreachable!(),
        }
    );
    format!("{analysis}My logical recommendation:\nCode: {label}\nDefinition: {definition}\n")
}

fn title_case(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn theme_response(prompt: &str) -> String {
    let labels = enumerated(between(prompt, "<codes>", "</codes>").unwrap_or(""));
    let stems: Vec<HashSet<String>> = labels
        .iter()
        .map(|l| content_words(l).into_iter().map(|(s, _)| s).collect())
        .collect();
    // group codes that share a content stem
    let mut parent: Vec<usize> = (0..labels.len()).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        parent[i] = r;
        r
    }
    for i in 0..labels.len() {
        for j in 0..i {
            if !stems[i].is_disjoint(&stems[j]) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(label.clone());
    }
    let themes: Vec<serde_json::Value> = groups
        .values()
        .map(|codes| {
            json!({
                "theme_name": title_case(&codes[0]),
                "concept": format!("Codes that centre on {}", codes[0]),
                "codes": codes,
                "relationship": "These codes share vocabulary and describe the same underlying concern",
            })
        })
        .collect();
    let body = json!({
        "initial_observations": [format!("{} codes were reviewed", labels.len())],
        "suggested_themes": themes,
        "reflection": {
            "broad_or_narrow_themes": "None noted",
            "contradictions_or_unexpected_patterns": "None noted",
            "potential_subthemes": "None noted",
            "unclassified_codes": [],
        }
    });
    serde_json::to_string_pretty(&body).expect("json")
}

fn persona_bank() -> Vec<String> {
    [
        "Union Member: A middle-aged manufacturing worker who values job security and fair labor practices.",
        "Working Parent: A parent of two young children who juggles school pickups with a full-time role.",
        "New Graduate: A recent graduate in a first professional job who is eager to learn from colleagues.",
        "Senior Engineer: An experienced engineer who prefers deep focus time and dislikes interruptions.",
        "Team Manager: A mid-level manager responsible for a team of eight spread across two cities.",
        "Long Commuter: An employee who lives ninety minutes from the office and relies on public transit.",
        "Caregiver: An employee who looks after an elderly parent and needs predictable hours.",
        "Sales Representative: An outgoing salesperson who values face-to-face contact with clients.",
        "IT Specialist: A technical support specialist who keeps the office systems running.",
        "Part-time Contractor: A contractor who works for several clients and guards their schedule closely.",
        "HR Coordinator: A human resources coordinator who hears many employee concerns every week.",
        "Immunocompromised Employee: An employee with a health condition who is cautious about crowded spaces.",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn context_bank() -> Vec<String> {
    [
        "Government agency workplace: A bureaucratic setting with strict protocols and hierarchical structures.",
        "Technology startup: A fast-moving company with open-plan offices and frequent reorganizations.",
        "Regional hospital: A healthcare organization where administrative staff support clinical teams.",
        "Financial services firm: A large firm with formal dress codes and client-facing expectations.",
        "University department: An academic office balancing teaching schedules and research deadlines.",
        "Manufacturing plant: A plant where office staff work alongside production floor operations.",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

const THEME_BANK: &[(&str, [&str; 8])] = &[
    (
        "Frustration with Lack of Clear Communication",
        [
            "Insufficient Information About Office Safety Protocols",
            "Conflicting Messages From Different Managers",
            "Late Announcements About Schedule Changes",
            "Unanswered Questions About Return Dates",
            "Vague Expectations About Office Attendance",
            "Limited Channels for Employee Feedback",
            "Rumors Filling Gaps in Official Updates",
            "Unclear Criteria for Remote Work Approval",
        ],
    ),
    (
        "Appreciation for Remote Work Benefits",
        [
            "More Comfortable and Personalized Workspace",
            "Time Saved by Skipping the Commute",
            "Fewer Interruptions During Focused Work",
            "Better Control Over Daily Routines",
            "Savings on Travel and Lunch Costs",
            "Improved Physical Health From Home Exercise",
            "More Time With Family Members",
            "Quiet Environment for Deep Thinking",
        ],
    ),
    (
        "Expectations for Hybrid Work Arrangements",
        [
            "Fears about Negative Impact on Career Advancement",
            "Desire for Fixed Anchor Days in the Office",
            "Need for Fair Rotation of Desk Bookings",
            "Preference for Employee Choice of Office Days",
            "Concern About Two Classes of Employees",
            "Wish for Clear Hybrid Meeting Etiquette",
            "Hope for Team Level Scheduling Autonomy",
            "Expectation of Reliable Hybrid Meeting Technology",
        ],
    ),
    (
        "Health and Safety Concerns",
        [
            "Worry About Crowded Elevators and Kitchens",
            "Questions About Office Ventilation Quality",
            "Anxiety About Sick Colleagues Coming to Work",
            "Desire for Regular Cleaning of Shared Desks",
            "Concern for Vulnerable Family Members at Home",
            "Uncertainty About Vaccination Policies",
            "Need for Mental Health Support Services",
            "Stress From Public Transit Exposure",
        ],
    ),
    (
        "Social Connection and Team Culture",
        [
            "Missing Spontaneous Hallway Conversations",
            "Excitement About Seeing Colleagues Again",
            "Difficulty Onboarding New Team Members Remotely",
            "Loss of Shared Lunch Traditions",
            "Weaker Mentoring Relationships",
            "Desire for Team Building Events",
            "Feeling Isolated When Working Alone",
            "Stronger Bonds From In Person Collaboration",
        ],
    ),
    (
        "Technology and Infrastructure Needs",
        [
            "Reliable Video Conferencing Tools",
            "Secure VPN Access From Home",
            "Updated Laptops and Monitors",
            "Fast Internet in Meeting Rooms",
            "Shared Document Collaboration Platforms",
            "Technical Support for Home Setups",
            "Booking Systems for Office Desks",
            "Training on New Collaboration Software",
        ],
    ),
    (
        "Work Life Balance Pressures",
        [
            "Childcare Arrangements Around Office Days",
            "Blurred Boundaries Between Work and Home",
            "Long Commute Eating Into Personal Time",
            "Flexible Start and End Times",
            "Protected Time for Lunch Breaks",
            "Caring for Elderly Parents",
            "After Hours Messages From Managers",
            "Fatigue From Switching Between Locations",
        ],
    ),
    (
        "Trust Between Employees and Leadership",
        [
            "Managers Measuring Presence Instead of Results",
            "Perceived Surveillance of Remote Workers",
            "Leadership Ignoring Employee Survey Results",
            "Inconsistent Enforcement of Office Policies",
            "Transparency About Real Estate Decisions",
            "Respect for Demonstrated Remote Productivity",
            "Fair Treatment Across Departments",
            "Involvement of Staff in Policy Decisions",
        ],
    ),
];

fn list_response(prompt: &str, marker: &str, bank: &[String]) -> String {
    let n = number_before(prompt, marker).unwrap_or(bank.len());
    (0..n)
        .map(|i| {
            let item = bank
                .get(i)
                .cloned()
                .unwrap_or_else(|| format!("Additional Item {}", i + 1));
            format!("{}. {}", i + 1, item)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn subtheme_response(prompt: &str) -> String {
    let n = number_before(prompt, "distinct sub-themes").unwrap_or(8);
    let theme = between(prompt, "One theme that appears in the data is \"", "\"").unwrap_or("General");
    let bank: Vec<String> = THEME_BANK
        .iter()
        .find(|(t, _)| *t == theme)
        .map(|(_, subs)| subs.iter().map(|s| s.to_string()).collect())
        .unwrap_or_else(|| (1..=n).map(|i| format!("{theme} Aspect {i}")).collect());
    (0..n)
        .map(|i| {
            let item = bank
                .get(i)
                .cloned()
                .unwrap_or_else(|| format!("{theme} Aspect {}", i + 1));
            format!("{}. {}", i + 1, item)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn simulated_response(prompt: &str) -> String {
    let sub_theme = between(prompt, "specifically about the sub-theme \"", "\"")
        .unwrap_or("this topic")
        .to_lowercase();
    let theme = between(prompt, "about the theme \"", "\"").unwrap_or("work").to_lowercase();
    let persona = between(prompt, "Your persona is ", ":").unwrap_or("employee").to_lowercase();
    let (lo, hi) = between(prompt, "The length should be ", " sentences")
        .and_then(|s| {
            let band = s.rsplit('(').next()?;
            let mut parts = band.split('-');
            Some((parts.next()?.trim().parse().ok()?, parts.next()?.trim().parse().ok()?))
        })
        .unwrap_or((2usize, 4usize));

    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(prompt.as_bytes()));
    let count = rng.random_range(lo.max(1)..=hi.max(lo.max(1)));
    let pool = [
        format!("{sub_theme} is what I keep coming back to"),
        format!("For me, {sub_theme} matters more than most people realise"),
        format!("Our team talks about {sub_theme} constantly"),
        format!("I would like leadership to take {sub_theme} seriously"),
        format!("Honestly, {sub_theme} shapes how I feel about coming back"),
        format!("When I think about the office, {sub_theme} comes up first"),
        format!("Colleagues in my area mention {sub_theme} too"),
        format!("Everything about {theme} seems to hinge on {sub_theme}"),
    ];
    let mut order: Vec<usize> = (0..pool.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut out = vec![format!("Speaking as a {persona}, I have been reflecting on {sub_theme}.")];
    for &i in order.iter().take(count.saturating_sub(1)) {
        let s = &pool[i];
        let mut chars = s.chars();
        let first = chars.next().map(|c| c.to_uppercase().collect::<String>()).unwrap_or_default();
        out.push(format!("{first}{}.", chars.as_str()));
    }
    out.join(" ")
}
