//! Template comments built from per-class keyword lexicons.

use std::collections::BTreeMap;

use super::super::{
    DAMAGED, DROPPED_OUTSIDE, INCORRECT_ITEM, LATE_DELIVERY, NOT_RECEIVED, OTHERS, PARTIAL_DELIVERY, SHIPPING_CHARGES,
    WRONG_ADDRESS,
};
use crate::numerics::SeededRng;

pub(crate) const LEXICONS: [(&str, &[&str]); 9] = [
    (
        DROPPED_OUTSIDE,
        &[
            "porch",
            "doorstep",
            "driveway",
            "outside",
            "unattended",
            "lawn",
            "notification",
            "doorbell",
            "stoop",
            "notified",
        ],
    ),
    (
        INCORRECT_ITEM,
        &[
            "incorrect",
            "different",
            "mismatched",
            "substituted",
            "color",
            "size",
            "swapped",
            "variant",
            "instead",
            "model",
        ],
    ),
    (
        LATE_DELIVERY,
        &[
            "late",
            "delayed",
            "still",
            "waiting",
            "overdue",
            "slow",
            "behind",
            "postponed",
            "tardy",
            "eta",
        ],
    ),
    (
        NOT_RECEIVED,
        &[
            "never",
            "receive",
            "missing",
            "vanished",
            "lost",
            "disappeared",
            "stolen",
            "nowhere",
            "absent",
            "gone",
        ],
    ),
    (
        PARTIAL_DELIVERY,
        &[
            "partial",
            "split",
            "incomplete",
            "half",
            "remaining",
            "portion",
            "separately",
            "rest",
            "fraction",
            "shipments",
        ],
    ),
    (
        DAMAGED,
        &[
            "crushed",
            "ripped",
            "dented",
            "destroyed",
            "torn",
            "broken",
            "shattered",
            "smashed",
            "cracked",
            "punctured",
        ],
    ),
    (
        SHIPPING_CHARGES,
        &[
            "charged",
            "fee",
            "fees",
            "shipping",
            "cost",
            "overcharged",
            "expensive",
            "price",
            "dollars",
            "surcharge",
        ],
    ),
    (
        WRONG_ADDRESS,
        &[
            "address",
            "neighbor",
            "neighbour",
            "street",
            "apartment",
            "misdelivered",
            "zip",
            "building",
            "house",
            "town",
        ],
    ),
    (
        OTHERS,
        &[
            "driver", "rude", "app", "tracking", "courier", "website", "attitude", "customer", "service", "support",
        ],
    ),
];

/// Ambiguous phrasing shared by "Late Delivery" and "Not Received" when the
/// generator is asked to make them overlap.
pub(crate) const LATE_OR_MISSING: &[&str] = &[
    "received",
    "yet",
    "arrive",
    "hasnt",
    "where",
    "anything",
    "nope",
    "expecting",
];

pub(crate) const FILLER: &[&str] = &[
    "the",
    "my",
    "package",
    "order",
    "was",
    "is",
    "it",
    "and",
    "i",
    "this",
    "very",
    "so",
    "disappointed",
    "please",
    "help",
    "again",
    "today",
    "box",
    "arrived",
    "item",
    "with",
    "of",
    "to",
    "a",
    "me",
    "at",
    "on",
    "in",
    "for",
    "really",
    "not",
    "happy",
    "honestly",
    "ugh",
    "frustrated",
    "experience",
    "just",
    "why",
];

const ENDINGS: &[&str] = &["", ".", "!", "!!!", "...", "?", " :("];

/// Panics if any token belongs to two lexicons (filler included).
pub(crate) fn assert_lexicons_disjoint() {
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    let groups = LEXICONS
        .iter()
        .copied()
        .chain([("(overlap)", LATE_OR_MISSING), ("(filler)", FILLER)]);
    for (group, words) in groups {
        for &w in words {
            if let Some(prev) = owner.insert(w, group) {
                if prev != group {
                    panic!("token {w:?} appears in both {prev:?} and {group:?}");
                }
            }
        }
    }
}

pub(crate) fn lexicon(label: &str) -> Option<&'static [&'static str]> {
    LEXICONS.iter().find(|(l, _)| *l == label).map(|(_, w)| *w)
}

/// Character-level noise: each ascii letter is substituted, dropped,
/// doubled, or swapped with its successor with probability `rate`.
pub(crate) fn add_typos(text: &str, rate: f64, rng: &mut SeededRng) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() + 4);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_ascii_alphabetic() && rng.bernoulli(rate) {
            match rng.below(4) {
                0 => out.push((b'a' + rng.below(26) as u8) as char),
                1 => {}
                2 => {
                    out.push(c);
                    out.push(c);
                }
                _ => {
                    if let Some(&next) = chars.get(i + 1) {
                        out.push(next);
                        out.push(c);
                        i += 1;
                    } else {
                        out.push(c);
                    }
                }
            }
        } else {
            out.push(c);
        }
        i += 1;
    }
    out
}

/// A comment for `label`: two or three class keywords scattered among
/// filler words. With probability `overlap`, late/not-received comments use
/// the shared ambiguous lexicon instead of their own.
pub(crate) fn compose_comment(label: &str, overlap: f64, typo_rate: f64, rng: &mut SeededRng) -> String {
    let own = lexicon(label).expect("every generated label has a lexicon");
    let words = if (label == LATE_DELIVERY || label == NOT_RECEIVED) && overlap > 0.0 && rng.bernoulli(overlap) {
        LATE_OR_MISSING
    } else {
        own
    };
    let n_keywords = 2 + rng.below(2);
    let n_filler = 2 + rng.below(5);
    let mut tokens: Vec<&str> = (0..n_filler).map(|_| *rng.choose(FILLER)).collect();
    for _ in 0..n_keywords {
        let at = rng.below(tokens.len() + 1);
        tokens.insert(at, rng.choose(words));
    }
    let mut text = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            text.push_str(if rng.bernoulli(0.1) { ", " } else { " " });
        }
        if i == 0 && rng.bernoulli(0.6) {
            let mut cs = t.chars();
            if let Some(f) = cs.next() {
                text.extend(f.to_uppercase());
                text.push_str(cs.as_str());
            }
        } else {
            text.push_str(t);
        }
    }
    text.push_str(rng.choose(ENDINGS));
    add_typos(&text, typo_rate, rng)
}
