//! Seeded fixtures for the benchmarks.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wts_core::llm::{GenParams, LlmClient, LlmError, PromptKind};
use wts_core::{DkgStore, EmbeddingVector, Triple};

const WORDS: &[&str] = &[
    "aspirin", "fever", "liver", "kidney", "insulin", "glucose", "heart", "lung", "virus",
    "vaccine", "iron", "anemia", "thyroid", "hormone", "nerve", "pain", "cortex", "bone",
    "calcium", "vitamin", "scurvy", "platelet", "blood", "plasma", "cell", "gene", "protein",
    "enzyme", "toxin", "antibody",
];
const RELATIONS: &[&str] = &["treats", "causes", "inhibits", "part of", "produces", "regulates"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entity names drawn from `vocab` numbered words, so store size and fan-out scale together.
pub fn store(n: usize, vocab: usize, seed: u64) -> DkgStore {
    let mut r = rng(seed);
    let mut s = DkgStore::new();
    while s.len() < n {
        let h = r.random_range(0..vocab);
        let t = r.random_range(0..vocab);
        if h == t {
            continue;
        }
        let head = format!("{} {h}", WORDS[h % WORDS.len()]);
        let tail = format!("{} {t}", WORDS[t % WORDS.len()]);
        let triple = Triple::new(&head, RELATIONS.choose(&mut r).unwrap(), &tail).unwrap();
        s.add_triple(triple);
    }
    s
}

pub fn vectors(n: usize, dim: usize, seed: u64) -> Vec<EmbeddingVector> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| EmbeddingVector::new((0..dim).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap())
        .collect()
}

pub fn sentence(words: usize, seed: u64) -> String {
    let mut r = rng(seed);
    (0..words).map(|_| *WORDS.choose(&mut r).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Replies with fixed entities, never-confident reasoning and flat scores.
pub struct FixedLlm {
    pub entities: Vec<String>,
}

impl LlmClient for FixedLlm {
    fn complete(&self, system: &str, user: &str, _: &GenParams) -> Result<String, LlmError> {
        Ok(match PromptKind::classify(system) {
            Some(PromptKind::Entity) => {
                format!("{{\"entities\": {}}}", serde_json_list(&self.entities))
            }
            // echo nothing back; every triple then scores 0 and ties break by text
            Some(PromptKind::Score) => "{\"triples\": []}".to_owned(),
            Some(PromptKind::Reason) => "{\"confidence\": \"No\", \"answer\": 0, \"support_info\": \"\"}".to_owned(),
            Some(PromptKind::Generate) => "{\"triples\": []}".to_owned(),
            Some(PromptKind::Direct) => "{\"answer\": 0}".to_owned(),
            None => return Err(LlmError::Script(format!("unknown prompt for {user}"))),
        })
    }
}

fn serde_json_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("{s:?}")).collect();
    format!("[{}]", quoted.join(", "))
}
