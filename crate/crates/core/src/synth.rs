//! Seeded synthetic corpora for scenarios, benchmarks and tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const FILLER: [&str; 32] = [
    "the", "a", "my", "our", "this", "that", "new", "old", "day", "week", "city", "home", "work",
    "trip", "photo", "post", "update", "thread", "story", "idea", "plan", "list", "note", "view",
    "time", "year", "place", "team", "friend", "project", "question", "weekend",
];

/// Words that make a title engaging.
pub const HOOK_WORDS: [&str; 8] = [
    "amazing",
    "secret",
    "shocking",
    "free",
    "giveaway",
    "incredible",
    "revealed",
    "unbelievable",
];

/// Words that make a title dull.
pub const DULL_WORDS: [&str; 8] = [
    "minutes",
    "agenda",
    "routine",
    "memo",
    "schedule",
    "reminder",
    "paperwork",
    "bylaws",
];

/// A labeled title: engaged iff it contains a hook word. Every title
/// contains hook words or dull words but never both, so the set is
/// linearly separable in bag-of-words space.
pub fn labeled_title(rng: &mut impl Rng) -> (String, bool) {
    let engaged = rng.gen_bool(0.5);
    let marked = if engaged { &HOOK_WORDS } else { &DULL_WORDS };
    let mut words: Vec<&str> = (0..rng.gen_range(3..8))
        .map(|_| *FILLER.choose(rng).expect("non-empty"))
        .collect();
    for _ in 0..rng.gen_range(1..3) {
        words.push(marked.choose(rng).expect("non-empty"));
    }
    words.shuffle(rng);
    (words.join(" "), engaged)
}

pub fn labeled_titles(n: usize, seed: u64) -> Vec<(String, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| labeled_title(&mut rng)).collect()
}

/// `labeled_title.v1` JSON items, ready for ingestion.
pub fn labeled_title_items(n: usize, seed: u64) -> Vec<Value> {
    labeled_titles(n, seed)
        .into_iter()
        .map(|(title, engaged)| json!({ "title": title, "engaged": engaged }))
        .collect()
}

/// `comment.v1` JSON items whose text is `payload_len` random lowercase
/// letters, collected one second apart starting at `start_ms`.
pub fn random_comment_items(n: usize, payload_len: usize, start_ms: u64, seed: u64) -> Vec<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let text: String = (0..payload_len)
                .map(|_| rng.gen_range(b'a'..=b'z') as char)
                .collect();
            json!({ "text": text, "collected_at": start_ms + i as u64 * 1000 })
        })
        .collect()
}

/// `comment.v1` JSON items of space-separated words drawn from `vocab`.
pub fn word_comment_items(
    n: usize,
    words_per_item: usize,
    vocab: &[&str],
    seed: u64,
) -> Vec<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let text: Vec<&str> = (0..words_per_item)
                .map(|_| *vocab.choose(&mut rng).expect("non-empty"))
                .collect();
            json!({ "text": text.join(" ") })
        })
        .collect()
}

/// Brand names mentioned in synthetic posts.
pub const BRANDS: [&str; 6] = [
    "acme",
    "globex",
    "initech",
    "umbrella",
    "hooli",
    "stark industries",
];

/// `post.v1` JSON items: filler prose with a brand mentioned now and then.
pub fn post_items(n: usize, seed: u64) -> Vec<Value> {
    fn words(len: usize, rng: &mut ChaCha8Rng) -> String {
        (0..len)
            .map(|_| {
                let pool: &[&str] = if rng.gen_bool(0.15) { &BRANDS } else { &FILLER };
                *pool.choose(rng).expect("non-empty")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let title = words(6, &mut rng);
            let body = words(40, &mut rng);
            json!({ "title": title, "body": body, "liked": rng.gen_bool(0.5) })
        })
        .collect()
}
