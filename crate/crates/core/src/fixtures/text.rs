//! Templated pseudo-science text with unique nonce-word signatures.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "gl", "kr", "pl", "qu", "st", "tr", "vr", "zh"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "eo", "ou"];
const CODAS: &[&str] = &["", "", "n", "r", "x", "l", "m", "sk", "nd", "th"];

pub const TOPICS: &[&str] = &[
    "Thermal Physics",
    "Physical Chemistry",
    "Molecular Biology",
    "Electrodynamics",
    "Quantum Mechanics",
    "Biochemistry",
    "Statistical Mechanics",
    "Optics",
];

/// Draws words that were never drawn before from this generator.
pub struct NonceWords {
    used: HashSet<String>,
}

impl NonceWords {
    pub fn new() -> Self {
        Self { used: HashSet::new() }
    }

    pub fn draw(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let syllables = rng.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(rng).unwrap());
                w.push_str(VOWELS.choose(rng).unwrap());
            }
            w.push_str(CODAS.choose(rng).unwrap());
            if w.len() >= 5 && self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

/// Four signature words tying a problem to its solution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub a: String,
    pub b: String,
    pub c: String,
    pub d: String,
}

impl Signature {
    pub fn draw(words: &mut NonceWords, rng: &mut ChaCha8Rng) -> Self {
        Self { a: words.draw(rng), b: words.draw(rng), c: words.draw(rng), d: words.draw(rng) }
    }
}

/// Problem statement lines; `variant` picks the template and whether a
/// second line with sub-parts follows.
pub fn problem_lines(sig: &Signature, variant: usize, magnitude: u32) -> Vec<String> {
    let Signature { a, b, c, d } = sig;
    let first = match variant % 3 {
        0 => format!("A {a} {b} sample is held at {magnitude} K inside a sealed {c} vessel. Determine the {d} coefficient of the sample."),
        1 => format!("In a {a} assay, {magnitude} mmol of {b} reagent reacts within a {c} cell. Find the {d} yield of the reaction."),
        _ => format!("A {a} pendulum of length {magnitude} cm swings through a {b} medium near a {c} plate. Compute the {d} damping rate."),
    };
    if variant % 4 == 3 {
        vec![first, format!("(a) Estimate the {d} value to two significant digits. (b) Explain how the {c} setting changes it.")]
    } else {
        vec![first]
    }
}

pub fn solution_text(sig: &Signature, answer: &str) -> String {
    let Signature { a, b, c, d } = sig;
    format!("Treating the {a} {b} system with the {c} correction gives a {d} value of {answer} units.")
}

/// A solution that shares no signature words with its own problem but
/// borrows words from other problems.
pub fn misleading_solution_text(borrowed: &[&Signature], answer: &str) -> String {
    let terms: Vec<String> = borrowed.iter().map(|s| format!("{} {}", s.a, s.b)).collect();
    format!("Combining the {} terms gives a final value of {answer} units.", terms.join(", "))
}

/// A problem the quality screen must drop (external figure reference).
pub fn defective_problem_text(sig: &Signature, chapter: usize, k: usize) -> String {
    let Signature { a, b, d, .. } = sig;
    format!("A {a} {b} sample rests on the stage shown. See Figure {chapter}.{k} for the apparatus and find the {d} load.")
}

pub fn answer_value(rng: &mut ChaCha8Rng) -> f64 {
    (rng.gen_range(100..100_000) as f64) / 100.0
}

pub fn person_name(rng: &mut ChaCha8Rng, words: &mut NonceWords) -> String {
    let initial = (b'A' + rng.gen_range(0..26u8)) as char;
    let mut last = words.draw(rng);
    if let Some(first) = last.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    format!("{initial}. {last}")
}
