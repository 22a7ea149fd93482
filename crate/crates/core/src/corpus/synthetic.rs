//! A templated-grammar toy corpus.

use rand::Rng;

use crate::util::SeededRng;

const NOUNS: &[&str] = &["cat", "dog", "bird", "horse", "child", "man", "woman", "train", "boat", "plate"];
const ADJS: &[&str] = &["small", "large", "red", "old", "young", "white", "happy", "wooden"];
const VERBS: &[&str] = &["sees", "chases", "holds", "watches", "follows", "finds", "carries"];
const INTRANS: &[&str] = &["sleeps", "runs", "waits", "sits", "eats", "stands"];
const PREPS: &[&str] = &["near", "behind", "under", "beside", "on"];
const PLACES: &[&str] = &["table", "street", "field", "kitchen", "river", "station"];
const ADVS: &[&str] = &["quietly", "slowly", "again", "today", "outside"];

fn pick<'a>(rng: &mut SeededRng, words: &[&'a str]) -> &'a str {
    words[rng.random_range(0..words.len())]
}

fn noun_phrase(rng: &mut SeededRng, out: &mut Vec<&'static str>) {
    out.push(if rng.random_bool(0.5) { "the" } else { "a" });
    if rng.random_bool(0.6) {
        out.push(pick(rng, ADJS));
    }
    out.push(pick(rng, NOUNS));
}

/// `n` sentences from a small English-like grammar (about 60 word types,
/// 3 to 14 words per sentence).
pub fn templated_grammar(n: usize, rng: &mut SeededRng) -> Vec<String> {
    (0..n)
        .map(|_| {
            let mut w: Vec<&'static str> = Vec::new();
            noun_phrase(rng, &mut w);
            match rng.random_range(0..4) {
                0 => {
                    w.push(pick(rng, VERBS));
                    noun_phrase(rng, &mut w);
                }
                1 => {
                    w.push(pick(rng, INTRANS));
                    w.push(pick(rng, PREPS));
                    w.push("the");
                    w.push(pick(rng, PLACES));
                }
                2 => {
                    w.push(pick(rng, INTRANS));
                    w.push(pick(rng, ADVS));
                }
                _ => {
                    w.push(pick(rng, VERBS));
                    noun_phrase(rng, &mut w);
                    w.push(pick(rng, PREPS));
                    w.push("the");
                    w.push(pick(rng, PLACES));
                }
            }
            if rng.random_bool(0.3) {
                w.push("and");
                w.push(pick(rng, INTRANS));
            }
            w.join(" ")
        })
        .collect()
}
