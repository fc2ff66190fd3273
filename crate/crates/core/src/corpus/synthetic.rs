//! Seeded generator for small stylistically distinct play corpora.
//!
//! Two phrase grammars talk about the same household objects in different
//! sentence patterns, so a model tuned on one and then the other has a
//! measurable style to move toward without having to learn a new lexicon.
//! Replies are a function of the preceding line plus a little noise, which
//! gives the model something conditional to learn.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    /// Household questions about where things are.
    Household,
    /// Haggling over what the same objects cost.
    Marketplace,
}

const NAMES: [&str; 4] = ["anna", "karl", "grete", "paul"];
const OBJECTS: [&str; 6] = ["hut", "korb", "mantel", "becher", "teller", "stuhl"];
const PLACES: [&str; 5] = ["im keller", "auf dem tisch", "unter dem bett", "in der ecke", "im garten"];

const PRICES: [&str; 4] = ["zwei groschen", "drei gulden", "einen taler", "nichts"];
const MORALS: [&str; 3] = ["so ist der krieg", "wer zahlt befiehlt", "das geschaeft geht vor"];

fn household(rng: &mut ChaCha8Rng) -> (String, String) {
    let obj = OBJECTS.choose(rng).expect("non-empty");
    let place = PLACES.choose(rng).expect("non-empty");
    if rng.random_bool(0.5) {
        let name = NAMES.choose(rng).expect("non-empty");
        (format!("{name}, wo ist der {obj}?"), format!("der {obj} liegt {place}."))
    } else {
        (
            format!("hast du den {obj} gesehen?"),
            format!("ja, den {obj} habe ich {place} gesehen."),
        )
    }
}

fn marketplace(rng: &mut ChaCha8Rng) -> (String, String) {
    let obj = OBJECTS.choose(rng).expect("non-empty");
    let price = PRICES.choose(rng).expect("non-empty");
    if rng.random_bool(0.5) {
        let moral = MORALS.choose(rng).expect("non-empty");
        (format!("was kostet der {obj}?"), format!("der {obj} kostet {price}, {moral}."))
    } else {
        let name = NAMES.choose(rng).expect("non-empty");
        (
            format!("{name}, wer kauft den {obj}?"),
            format!("der soldat kauft den {obj} fuer {price}."),
        )
    }
}

/// One play script of `exchanges` question/answer pairs in `style`.
pub fn generate_play(style: Style, title: &str, exchanges: usize, rng: &mut ChaCha8Rng) -> String {
    let (asker, answerer) = match style {
        Style::Household => ("MUTTER", "SOHN"),
        Style::Marketplace => ("KUNDE", "HAENDLERIN"),
    };
    let mut doc = format!("# title: {title}\n# author: generated\n\n");
    for _ in 0..exchanges {
        let (q, a) = match style {
            Style::Household => household(rng),
            Style::Marketplace => marketplace(rng),
        };
        doc.push_str(&format!("{asker}: {q}\n{answerer}: {a}\n"));
    }
    doc
}

/// `(play_id, script)` pairs for `plays` scripts.
pub fn generate_corpus(style: Style, plays: usize, exchanges: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prefix = match style {
        Style::Household => "household",
        Style::Marketplace => "market",
    };
    (0..plays)
        .map(|i| {
            let id = format!("{prefix}-{i:03}");
            let doc = generate_play(style, &id, exchanges, &mut rng);
            (id, doc)
        })
        .collect()
}
