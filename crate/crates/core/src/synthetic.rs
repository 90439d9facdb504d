//! Seeded synthetic datasets with known ground truth, for offline checks.

use std::collections::BTreeSet;

use rand::seq::{index::sample, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::context::{
    parse_selection_record, BasicInfo, Dataset, DatasetKind, Genres, Interaction, RatingTime,
    Scalar, SelectionRecord, SignalTaxonomy, TaskInstance, UserContext, UserRecordId,
};
use crate::providers::toy::{KeywordRule, ToyProvider};

/// Keyword carried by every planted sentence.
pub const PLANTED_KEYWORD: &str = "remember";
/// Boost of planted sentences. `exp(-3) < 0.2`, so unplanted sentences fall
/// below the default threshold.
pub const PLANTED_WEIGHT: f64 = 3.0;

const FILLER: [&str; 10] = [
    "walked", "reading", "cooking", "travel", "music", "garden", "weather", "coffee", "cinema", "market",
];

/// A free-text history with `k` sentences planted among `n`.
#[derive(Debug, Clone)]
pub struct PlantedCase {
    pub context: UserContext,
    pub planted: BTreeSet<usize>,
    /// One distinctive fact token per planted sentence, in index order.
    pub facts: Vec<String>,
}

impl PlantedCase {
    /// Fraction of planted facts present in `text`.
    pub fn retention(&self, text: &str) -> f64 {
        let tokens: BTreeSet<&str> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        let kept = self.facts.iter().filter(|f| tokens.contains(f.as_str())).count();
        kept as f64 / self.facts.len() as f64
    }
}

pub fn planted_case(user_id: &str, n: usize, k: usize, seed: u64) -> PlantedCase {
    assert!(k <= n && n > 0, "need 0 <= k <= n, n > 0");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planted: BTreeSet<usize> = sample(&mut rng, n, k).into_iter().collect();
    let mut facts = Vec::new();
    let sentences: Vec<(String, String)> = (0..n)
        .map(|i| {
            if planted.contains(&i) {
                let fact = format!("fact{i}x{}", rng.random_range(100..1000));
                facts.push(fact.clone());
                (format!("Please {PLANTED_KEYWORD} that {fact} matters a lot."), "planted".to_string())
            } else {
                let w = FILLER[rng.random_range(0..FILLER.len())];
                (format!("Note {i} about {w} and other daily things."), "filler".to_string())
            }
        })
        .collect();
    let context = UserContext::from_sentences(user_id, sentences, "Summarize what matters to this user.")
        .expect("synthetic sentences are well formed");
    PlantedCase {
        context,
        planted,
        facts,
    }
}

pub fn planted_provider() -> ToyProvider {
    ToyProvider::new(vec![KeywordRule::new(PLANTED_KEYWORD, PLANTED_WEIGHT)])
}

const ADJ: [&str; 12] = [
    "Silent", "Crimson", "Golden", "Broken", "Hidden", "Electric", "Frozen", "Wild", "Distant", "Last", "Velvet", "Iron",
];
const NOUN: [&str; 12] = [
    "Harbor", "Empire", "Garden", "River", "Signal", "Kingdom", "Mirror", "Horizon", "Station", "Orchard", "Canyon", "Tower",
];
const DISTRACTOR_ADJ: [&str; 6] = ["Paper", "Glass", "Hollow", "Copper", "Northern", "Quiet"];
const DISTRACTOR_NOUN: [&str; 6] = ["Lantern", "Bridge", "Meadow", "Falcon", "Compass", "Island"];
const GENRES: [&str; 8] = ["Drama", "Comedy", "Action", "Sci-Fi", "Romance", "Thriller", "Crime", "Adventure"];
const OCCUPATIONS: [&str; 5] = ["academic/educator", "artist", "doctor", "engineer", "writer"];
const AGES: [&str; 4] = ["18-24", "25-34", "35-44", "45-49"];

/// Weight of the rules keyed on liked titles and five-star ratings.
pub const GRID_WEIGHT: f64 = 3.0;

/// Selection-shaped dataset whose gold movie appears among the oldest
/// interactions, with toy rules that single out the gold title and every
/// five-star rating.
#[derive(Debug, Clone)]
pub struct GridSuite {
    pub records: Vec<SelectionRecord>,
    pub dataset: Dataset,
    pub provider: ToyProvider,
}

pub fn grid_records(users: usize, movies: usize, seed: u64) -> Vec<SelectionRecord> {
    assert!(movies >= 8, "grid suite needs at least 8 movies per user");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut title_serial = 0usize;
    let mut next_title = |rng: &mut ChaCha8Rng, adj: &[&str], noun: &[&str]| {
        title_serial += 1;
        format!(
            "The {} {} {:05}",
            adj[rng.random_range(0..adj.len())],
            noun[rng.random_range(0..noun.len())],
            title_serial
        )
    };
    (0..users)
        .map(|u| {
            let gold_pos = rng.random_range(0..movies / 2);
            let interactions: Vec<Interaction> = (0..movies)
                .map(|_| {
                    let g1 = GENRES[rng.random_range(0..GENRES.len())];
                    let g2 = GENRES[rng.random_range(0..GENRES.len())];
                    let genres = if g1 == g2 { vec![g1.to_string()] } else { vec![g1.to_string(), g2.to_string()] };
                    Interaction {
                        title: next_title(&mut rng, &ADJ, &NOUN),
                        year: Scalar::Int(rng.random_range(1970..2001)),
                        genres: Genres::List(genres),
                        summary: format!(
                            "A story about {} people and one long {} journey.",
                            FILLER[rng.random_range(0..FILLER.len())],
                            FILLER[rng.random_range(0..FILLER.len())]
                        ),
                        rating: rng.random_range(1..=5) as f64,
                        rating_time: RatingTime::Unix(975_000_000 - rng.random_range(0..1_000_000)),
                    }
                })
                .collect();
            let gold_title = interactions[gold_pos].title.clone();
            let mut candidates: Vec<String> = (0..4).map(|_| next_title(&mut rng, &DISTRACTOR_ADJ, &DISTRACTOR_NOUN)).collect();
            candidates.push(gold_title);
            candidates.shuffle(&mut rng);
            let gold_index = candidates.iter().position(|c| *c == interactions[gold_pos].title).unwrap();
            let info = BasicInfo {
                gender: if rng.random_bool(0.5) { "M" } else { "F" }.to_string(),
                age: Scalar::Text(AGES[rng.random_range(0..AGES.len())].to_string()),
                occupation: OCCUPATIONS[rng.random_range(0..OCCUPATIONS.len())].to_string(),
            };
            SelectionRecord {
                user_id: UserRecordId::Text(format!("user{u:03}")),
                basic_info: info,
                interactions,
                candidates,
                gold_index,
            }
        })
        .collect()
}

pub fn grid_suite(users: usize, movies: usize, seed: u64) -> GridSuite {
    let records = grid_records(users, movies, seed);
    let taxonomy = SignalTaxonomy::default_for(DatasetKind::Selection);
    let items: Vec<(UserContext, TaskInstance)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| parse_selection_record(r, &taxonomy, i + 1).expect("synthetic record is valid"))
        .collect();
    let mut rules: Vec<KeywordRule> = records
        .iter()
        .map(|r| KeywordRule::new(format!("is {}.", r.candidates[r.gold_index]), GRID_WEIGHT))
        .collect();
    rules.push(KeywordRule::new("User gave it 5 stars.", GRID_WEIGHT));
    GridSuite {
        records,
        dataset: Dataset {
            kind: DatasetKind::Selection,
            items,
        },
        provider: ToyProvider::new(rules),
    }
}

/// Toy marker whose attention favours basic info, then titles, then ratings.
pub fn finetuned_signal_provider() -> ToyProvider {
    ToyProvider::new(vec![
        KeywordRule::new("User basic info", 3.0),
        KeywordRule::new("The movie title is", 2.0),
        KeywordRule::new("User gave it", 1.0),
    ])
}
