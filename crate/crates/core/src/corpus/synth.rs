//! Seeded generator of small annotated documents.
//!
//! Coreference follows two rules: repeated proper names corefer, and a
//! pronoun corefers with the nearest preceding name carrying the same
//! gender tag. Nested mentions come from possessive chains (`Emma 's dog`)
//! and `of` descriptions (`the boss of Emma`); the outer mentions are
//! always fresh singleton entities.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ClusterSet, Document, MentionSpan, GENRES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Gender {
    Masculine,
    Feminine,
    Neuter,
}

const GENDERS: [Gender; 3] = [Gender::Masculine, Gender::Feminine, Gender::Neuter];

impl Gender {
    fn names(self) -> &'static [&'static str] {
        match self {
            Gender::Masculine => &[
                "Adam", "Boris", "Carl", "David", "Edgar", "Frank", "George", "Henry", "Ivan",
                "James", "Kevin", "Louis",
            ],
            Gender::Feminine => &[
                "Alice", "Beth", "Clara", "Diana", "Emma", "Fiona", "Grace", "Helen", "Irene",
                "Julia", "Karen", "Laura",
            ],
            Gender::Neuter => &[
                "Acme", "Globex", "Initech", "Umbrella", "Vandelay", "Hooli", "Wonka", "Stark",
            ],
        }
    }

    fn pronoun(self) -> &'static str {
        match self {
            Gender::Masculine => "he",
            Gender::Feminine => "she",
            Gender::Neuter => "it",
        }
    }
}

const NOUNS: &[&str] = &[
    "car", "dog", "boss", "sister", "house", "friend", "office", "idea",
];
const FILLERS: &[&str] = &[
    "walked",
    "saw",
    "quickly",
    "into",
    "said",
    "today",
    "and",
    "then",
    "with",
    "near",
    "met",
    "called",
    "later",
    "again",
    "yesterday",
    "there",
    "was",
    "very",
    "happy",
    "left",
];
const SPEAKERS: &[&str] = &["spk_a", "spk_b", "spk_c"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub seed: u64,
    /// Inclusive range of sentences per document.
    pub sentences_per_doc: (usize, usize),
    /// Inclusive range of tokens per sentence.
    pub tokens_per_sentence: (usize, usize),
    /// Deepest mention nesting produced, 1 to 3.
    pub max_depth: usize,
    /// Probability that a free slot starts a mention.
    pub mention_rate: f64,
    /// Probability that an eligible mention slot is a pronoun.
    pub pronoun_rate: f64,
    /// A pronoun is generated only when its antecedent name is at most this
    /// many mentions back.
    pub max_pronoun_distance: usize,
    pub doc_key_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_docs: 100,
            seed: 1,
            sentences_per_doc: (4, 8),
            tokens_per_sentence: (8, 14),
            max_depth: 3,
            mention_rate: 0.3,
            pronoun_rate: 0.35,
            max_pronoun_distance: 6,
            doc_key_prefix: "synth".to_string(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("degenerate synthesis config: {0}")]
    Degenerate(&'static str),
}

impl SynthConfig {
    fn check(&self) -> Result<(), SynthError> {
        let (smin, smax) = self.sentences_per_doc;
        let (tmin, tmax) = self.tokens_per_sentence;
        if self.num_docs == 0 {
            return Err(SynthError::Degenerate("zero documents"));
        }
        if smin == 0 || smin > smax {
            return Err(SynthError::Degenerate("empty sentence range"));
        }
        if tmin == 0 || tmin > tmax {
            return Err(SynthError::Degenerate("zero tokens per sentence"));
        }
        if !(1..=3).contains(&self.max_depth) {
            return Err(SynthError::Degenerate("nesting depth must be 1, 2 or 3"));
        }
        if !(0.0..=1.0).contains(&self.mention_rate) || !(0.0..=1.0).contains(&self.pronoun_rate) {
            return Err(SynthError::Degenerate("rates must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Generates `config.num_docs` documents; document `i` depends only on the
/// seed and `i`.
pub fn synthesize_corpus(config: &SynthConfig) -> Result<Vec<Document>, SynthError> {
    config.check()?;
    Ok((0..config.num_docs)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                config
                    .seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(i as u64),
            );
            DocBuilder::new(config).build(format!("{}_{i}", config.doc_key_prefix), &mut rng)
        })
        .collect())
}

struct Entity {
    name: &'static str,
    gender: Gender,
    mentions: Vec<MentionSpan>,
}

/// Chunk shapes; each lists mention spans relative to the chunk start.
#[derive(Clone, Copy)]
enum Chunk {
    Name,
    Pronoun,
    Description,
    Possessive,
    DoublePossessive,
    OfName,
    OfPossessive,
}

impl Chunk {
    fn len(self) -> usize {
        match self {
            Chunk::Name | Chunk::Pronoun => 1,
            Chunk::Description => 2,
            Chunk::Possessive => 3,
            Chunk::OfName => 4,
            Chunk::DoublePossessive => 5,
            Chunk::OfPossessive => 6,
        }
    }

    fn depth(self) -> usize {
        match self {
            Chunk::Name | Chunk::Pronoun | Chunk::Description => 1,
            Chunk::Possessive | Chunk::OfName => 2,
            Chunk::DoublePossessive | Chunk::OfPossessive => 3,
        }
    }
}

struct DocBuilder<'a> {
    config: &'a SynthConfig,
    tokens: Vec<Vec<String>>,
    speakers: Vec<Vec<String>>,
    entities: Vec<Entity>,
    singletons: Vec<MentionSpan>,
    /// Name mentions in textual order: (mention ordinal, entity).
    names: Vec<(usize, usize)>,
    mention_count: usize,
    offset: usize,
}

impl<'a> DocBuilder<'a> {
    fn new(config: &'a SynthConfig) -> Self {
        DocBuilder {
            config,
            tokens: Vec::new(),
            speakers: Vec::new(),
            entities: Vec::new(),
            singletons: Vec::new(),
            names: Vec::new(),
            mention_count: 0,
            offset: 0,
        }
    }

    fn build(mut self, doc_key: String, rng: &mut ChaCha8Rng) -> Document {
        let (smin, smax) = self.config.sentences_per_doc;
        let num_sentences = rng.gen_range(smin..=smax);
        let genre = GENRES[rng.gen_range(0..GENRES.len())].to_string();
        let mut speaker = *SPEAKERS.choose(rng).unwrap();
        for _ in 0..num_sentences {
            if rng.gen_bool(0.3) {
                speaker = SPEAKERS.choose(rng).unwrap();
            }
            self.sentence(speaker, rng);
        }

        let mut clusters: Vec<(MentionSpan, Vec<MentionSpan>)> = self
            .entities
            .into_iter()
            .map(|e| (e.mentions[0], e.mentions))
            .chain(self.singletons.into_iter().map(|s| (s, vec![s])))
            .collect();
        clusters.sort_by_key(|(first, _)| (first.start, std::cmp::Reverse(first.end)));
        Document {
            doc_key,
            sentences: self.tokens,
            speakers: self.speakers,
            genre,
            gold_clusters: ClusterSet::new(clusters.into_iter().map(|(_, c)| c).collect()),
        }
    }

    fn sentence(&mut self, speaker: &str, rng: &mut ChaCha8Rng) {
        let (tmin, tmax) = self.config.tokens_per_sentence;
        let target = rng.gen_range(tmin..=tmax);
        let mut sentence: Vec<String> = Vec::with_capacity(target);
        while sentence.len() < target {
            let room = target - sentence.len();
            let chunk = if rng.gen_bool(self.config.mention_rate) {
                self.pick_chunk(room, rng)
            } else {
                None
            };
            let start = self.offset + sentence.len();
            match chunk {
                Some(chunk) => self.emit(chunk, start, &mut sentence, rng),
                None => sentence.push(FILLERS.choose(rng).unwrap().to_string()),
            }
        }
        self.offset += sentence.len();
        self.speakers
            .push(vec![speaker.to_string(); sentence.len()]);
        self.tokens.push(sentence);
    }

    fn pick_chunk(&self, room: usize, rng: &mut ChaCha8Rng) -> Option<Chunk> {
        if !self.pronoun_genders().is_empty() && rng.gen_bool(self.config.pronoun_rate) {
            return Some(Chunk::Pronoun);
        }
        let candidates: Vec<Chunk> = [
            Chunk::Name,
            Chunk::Name,
            Chunk::Name,
            Chunk::Description,
            Chunk::Possessive,
            Chunk::OfName,
            Chunk::DoublePossessive,
            Chunk::OfPossessive,
        ]
        .into_iter()
        .filter(|c| c.len() <= room && c.depth() <= self.config.max_depth)
        .collect();
        candidates.choose(rng).copied()
    }

    /// Genders whose nearest preceding name is close enough for a pronoun.
    fn pronoun_genders(&self) -> Vec<Gender> {
        GENDERS
            .into_iter()
            .filter(|g| {
                self.names
                    .iter()
                    .rev()
                    .find(|(_, e)| self.entities[*e].gender == *g)
                    .is_some_and(|(ordinal, _)| {
                        self.mention_count - ordinal <= self.config.max_pronoun_distance
                    })
            })
            .collect()
    }

    fn emit(&mut self, chunk: Chunk, start: usize, out: &mut Vec<String>, rng: &mut ChaCha8Rng) {
        let noun = |rng: &mut ChaCha8Rng| NOUNS.choose(rng).unwrap().to_string();
        match chunk {
            Chunk::Name => {
                let name = self.name(start, rng);
                out.push(name);
            }
            Chunk::Pronoun => {
                let genders = self.pronoun_genders();
                let gender = *genders.choose(rng).unwrap();
                let (_, entity) = *self
                    .names
                    .iter()
                    .rev()
                    .find(|(_, e)| self.entities[*e].gender == gender)
                    .unwrap();
                self.entities[entity]
                    .mentions
                    .push(MentionSpan::new(start, start));
                self.mention_count += 1;
                out.push(gender.pronoun().to_string());
            }
            Chunk::Description => {
                out.extend(["the".to_string(), noun(rng)]);
                self.singleton(start, start + 1);
            }
            Chunk::Possessive => {
                let name = self.name(start, rng);
                out.extend([name, "'s".to_string(), noun(rng)]);
                self.singleton(start, start + 2);
            }
            Chunk::DoublePossessive => {
                let name = self.name(start, rng);
                out.extend([name, "'s".to_string(), noun(rng)]);
                self.singleton(start, start + 2);
                out.extend(["'s".to_string(), noun(rng)]);
                self.singleton(start, start + 4);
            }
            Chunk::OfName => {
                out.extend(["the".to_string(), noun(rng), "of".to_string()]);
                let name = self.name(start + 3, rng);
                out.push(name);
                self.singleton(start, start + 3);
            }
            Chunk::OfPossessive => {
                out.extend(["the".to_string(), noun(rng), "of".to_string()]);
                let name = self.name(start + 3, rng);
                out.extend([name, "'s".to_string(), noun(rng)]);
                self.singleton(start + 3, start + 5);
                self.singleton(start, start + 5);
            }
        }
    }

    fn singleton(&mut self, start: usize, end: usize) {
        self.singletons.push(MentionSpan::new(start, end));
        self.mention_count += 1;
    }

    /// Adds a single-token name mention at `at`, reusing an entity half the time.
    fn name(&mut self, at: usize, rng: &mut ChaCha8Rng) -> String {
        let reuse = !self.entities.is_empty() && rng.gen_bool(0.5);
        let entity = if reuse {
            rng.gen_range(0..self.entities.len())
        } else {
            let gender = *GENDERS.choose(rng).unwrap();
            let unused: Vec<&'static str> = gender
                .names()
                .iter()
                .copied()
                .filter(|n| self.entities.iter().all(|e| e.name != *n))
                .collect();
            match unused.choose(rng) {
                Some(name) => {
                    self.entities.push(Entity {
                        name,
                        gender,
                        mentions: Vec::new(),
                    });
                    self.entities.len() - 1
                }
                None => rng.gen_range(0..self.entities.len()),
            }
        };
        self.entities[entity]
            .mentions
            .push(MentionSpan::new(at, at));
        self.names.push((self.mention_count, entity));
        self.mention_count += 1;
        self.entities[entity].name.to_string()
    }
}
