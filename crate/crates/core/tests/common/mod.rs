//! Fixtures and independent oracles shared by the integration tests and the
//! acceptance suite.
#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use wts_core::llm::{GenParams, LlmClient, LlmError, PromptKind};
use wts_core::{DkgStore, Triple};

pub const WORDS: &[&str] = &[
    "aspirin", "fever", "liver", "kidney", "insulin", "glucose", "heart", "lung", "virus",
    "vaccine", "iron", "anemia", "thyroid", "hormone", "nerve", "pain", "cortex", "bone",
    "calcium", "vitamin", "scurvy", "platelet", "blood", "plasma", "cell", "gene", "protein",
    "enzyme", "toxin", "antibody",
];

pub const RELATIONS: &[&str] = &["treats", "causes", "inhibits", "part of", "produces", "regulates"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// An entity of one or two vocabulary words.
pub fn entity(rng: &mut ChaCha8Rng) -> String {
    let first = *WORDS.choose(rng).unwrap();
    if rng.random_bool(0.3) {
        format!("{first} {}", WORDS.choose(rng).unwrap())
    } else {
        first.to_owned()
    }
}

pub fn random_triple(rng: &mut ChaCha8Rng) -> Triple {
    loop {
        let h = entity(rng);
        let t = entity(rng);
        if h != t {
            return Triple::new(&h, RELATIONS.choose(rng).unwrap(), &t).unwrap();
        }
    }
}

pub fn random_store(rng: &mut ChaCha8Rng, max: usize) -> DkgStore {
    let n = rng.random_range(1..=max);
    let mut store = DkgStore::new();
    for _ in 0..n {
        store.add_triple(random_triple(rng));
    }
    store
}

pub fn random_sentence(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn t(h: &str, r: &str, tl: &str) -> Triple {
    Triple::new(h, r, tl).unwrap()
}

/// Triples listed in a rendered prompt: the first JSON array of head/relation/tail objects.
pub fn triples_in_prompt(user: &str) -> Vec<Triple> {
    let Some(start) = user.find("[{").or_else(|| user.find("[]")) else {
        return Vec::new();
    };
    let mut de = serde_json::Deserializer::from_str(&user[start..]).into_iter::<Value>();
    let Some(Ok(Value::Array(items))) = de.next() else {
        return Vec::new();
    };
    items
        .iter()
        .map(|v| {
            t(
                v["head"].as_str().unwrap(),
                v["relation"].as_str().unwrap(),
                v["tail"].as_str().unwrap(),
            )
        })
        .collect()
}

/// Relevance derived from the triple text alone, quantized so ties happen.
pub fn hashed_score(triple: &Triple) -> f64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in triple.text().bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x100000001b3);
    }
    (h % 11) as f64 / 10.0
}

/// A model that behaves deterministically from prompt contents: it names a
/// fixed list of entities, scores triples with a scoring function, always
/// reports low confidence and generates a fixed list of triples.
pub struct RuleLlm {
    pub entities: Vec<String>,
    pub score: fn(&Triple) -> f64,
    pub confident: bool,
    pub generated: Vec<Triple>,
}

impl RuleLlm {
    pub fn new(entities: Vec<String>) -> Self {
        Self { entities, score: hashed_score, confident: false, generated: Vec::new() }
    }
}

impl LlmClient for RuleLlm {
    fn complete(&self, system: &str, user: &str, _: &GenParams) -> Result<String, LlmError> {
        let reply = match PromptKind::classify(system) {
            Some(PromptKind::Entity) => json!({ "entities": self.entities }),
            Some(PromptKind::Score) => {
                let scored: Vec<Value> = triples_in_prompt(user)
                    .iter()
                    .map(|tr| {
                        json!({
                            "triple": {"head": tr.head(), "relation": tr.relation(), "tail": tr.tail()},
                            "score": (self.score)(tr),
                        })
                    })
                    .collect();
                json!({ "triples": scored })
            }
            Some(PromptKind::Reason) => json!({
                "confidence": if self.confident { "Yes" } else { "No" },
                "answer": 0,
                "support_info": "",
            }),
            Some(PromptKind::Generate) => {
                let list: Vec<Value> = self
                    .generated
                    .iter()
                    .map(|tr| json!({"head": tr.head(), "relation": tr.relation(), "tail": tr.tail()}))
                    .collect();
                json!({ "triples": list })
            }
            Some(PromptKind::Direct) => json!({ "answer": 0 }),
            None => return Err(LlmError::Script("unknown prompt".into())),
        };
        Ok(reply.to_string())
    }
}

/// Double-double arithmetic for an independent high-precision cosine.
#[derive(Clone, Copy, Debug)]
pub struct Dd(pub f64, pub f64);

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd(s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd(p, a.mul_add(b, -p))
}

impl Dd {
    pub fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.0, o.0);
        let e = s.1 + self.1 + o.1;
        two_sum(s.0, e)
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = two_prod(self.0, o.0);
        let e = p.1 + self.0 * o.1 + self.1 * o.0;
        two_sum(p.0, e)
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.0 / o.0;
        let r = self.add(o.mul(Dd(-q1, 0.0)));
        let q2 = r.0 / o.0;
        two_sum(q1, q2)
    }

    pub fn sqrt(self) -> Dd {
        if self.0 <= 0.0 {
            return Dd(0.0, 0.0);
        }
        let x = self.0.sqrt();
        let sq = two_prod(x, x);
        let r = self.add(Dd(-sq.0, -sq.1));
        two_sum(x, r.0 / (2.0 * x))
    }

    pub fn to_f64(self) -> f64 {
        self.0 + self.1
    }
}

fn dd_dot(u: &[f64], v: &[f64]) -> Dd {
    u.iter().zip(v).fold(Dd(0.0, 0.0), |acc, (a, b)| acc.add(two_prod(*a, *b)))
}

/// `1 - u.v / (|u||v|)` evaluated in double-double precision.
pub fn oracle_cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let dot = dd_dot(u, v);
    let norms = dd_dot(u, u).mul(dd_dot(v, v)).sqrt();
    Dd(1.0, 0.0).add(Dd(-1.0, 0.0).mul(dot.div(norms))).to_f64()
}

/// Plain two-loop greedy matching, written independently of the library.
pub fn oracle_greedy(cand: &[Vec<f64>], refs: &[Vec<f64>]) -> (f64, f64, f64) {
    let sim = |a: &[f64], b: &[f64]| 1.0 - oracle_cosine_distance(a, b);
    let mut recall = 0.0;
    for r in refs {
        let mut best = f64::NEG_INFINITY;
        for c in cand {
            best = best.max(sim(r, c));
        }
        recall += best.max(0.0).min(1.0);
    }
    recall /= refs.len() as f64;
    let mut precision = 0.0;
    for c in cand {
        let mut best = f64::NEG_INFINITY;
        for r in refs {
            best = best.max(sim(r, c));
        }
        precision += best.max(0.0).min(1.0);
    }
    precision /= cand.len() as f64;
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (precision, recall, f1)
}
