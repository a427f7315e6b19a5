//! Desk-scale movie knowledge graph with a verbalized corpus and templated
//! 1/2/3-hop questions whose answers come from graph traversal.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{path_answers, write_questions, QAExample};
use crate::error::{Error, Result};
use crate::graph::{surface_form, EntityId, GraphForm, PredicateId, RelationGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Movie,
    Person,
    Year,
    Language,
    Genre,
}

/// A movie predicate with its sentence renderings (`{s}` movie, `{o}`
/// object) and noun-phrase question templates in both directions.
#[derive(Debug, Clone, Copy)]
pub struct PredicateTemplate {
    pub name: &'static str,
    pub object: EntityKind,
    pub sentences: [&'static str; 2],
    pub forward: [&'static str; 2],
    pub reverse: [&'static str; 2],
}

pub const PREDICATES: [PredicateTemplate; 6] = [
    PredicateTemplate {
        name: "directed_by",
        object: EntityKind::Person,
        sentences: ["{s} was directed by {o}.", "{o} directed {s}."],
        forward: ["the director of {}", "the person who directed {}"],
        reverse: ["the films directed by {}", "the movies that {} directed"],
    },
    PredicateTemplate {
        name: "written_by",
        object: EntityKind::Person,
        sentences: ["{s} was written by {o}.", "The screenplay for {s} came from {o}."],
        forward: ["the writer of {}", "the screenwriter of {}"],
        reverse: ["the films written by {}", "the movies that {} wrote"],
    },
    PredicateTemplate {
        name: "starred_actors",
        object: EntityKind::Person,
        sentences: ["{s} stars {o}.", "{o} acted in {s}."],
        forward: ["the actors in {}", "the stars of {}"],
        reverse: ["the films starring {}", "the movies that {} acted in"],
    },
    PredicateTemplate {
        name: "release_year",
        object: EntityKind::Year,
        sentences: ["{s} came out in {o}.", "{s} premiered in {o}."],
        forward: ["the release year of {}", "the year that {} came out"],
        reverse: ["the films released in {}", "the movies from the year {}"],
    },
    PredicateTemplate {
        name: "in_language",
        object: EntityKind::Language,
        sentences: ["{s} is in {o}.", "{s} was filmed in the {o} language."],
        forward: ["the language of {}", "the language spoken in {}"],
        reverse: ["the films in {}", "the movies in the {} language"],
    },
    PredicateTemplate {
        name: "has_genre",
        object: EntityKind::Genre,
        sentences: ["{s} is a {o} film.", "{s} belongs to the {o} genre."],
        forward: ["the genre of {}", "the kind of film {} is"],
        reverse: ["the {} films", "the movies of the {} genre"],
    },
];

const RELEASE_YEAR: usize = 3;
const IN_LANGUAGE: usize = 4;
/// Shared rendering of release year and language for ambiguous movies.
const AMBIGUOUS_SENTENCE: &str = "{s} was released in {o}.";

/// Question frames around the composed noun phrase.
pub const WRAPPERS: [&str; 4] = ["what is {}", "name {}", "list {}", "tell me {}"];

const TITLE_ADJECTIVES: [&str; 20] = [
    "Silent", "Broken", "Golden", "Hidden", "Last", "Crimson", "Frozen", "Distant", "Burning",
    "Hollow", "Quiet", "Savage", "Electric", "Velvet", "Iron", "Paper", "Glass", "Midnight",
    "Scarlet", "Wandering",
];
const TITLE_NOUNS: [&str; 20] = [
    "Harbor", "Garden", "Empire", "River", "Mirror", "Signal", "Horizon", "Orchard", "Lantern",
    "Kingdom", "Voyage", "Station", "Canyon", "Letter", "Machine", "Island", "Winter", "Compass",
    "Tide", "Circus",
];
const FIRST_NAMES: [&str; 30] = [
    "Anna", "Boris", "Clara", "Dmitri", "Elena", "Felix", "Greta", "Hugo", "Ines", "Jonas",
    "Katya", "Lars", "Mira", "Nils", "Olga", "Pavel", "Rosa", "Stefan", "Tara", "Ulrich", "Vera",
    "Walter", "Yara", "Zoran", "Alma", "Bruno", "Celia", "Dario", "Edith", "Fabian",
];
const LAST_NAMES: [&str; 30] = [
    "Berg", "Costa", "Dahl", "Engel", "Falk", "Gruber", "Holm", "Ivanov", "Jansen", "Keller",
    "Lund", "Moreau", "Novak", "Ortiz", "Petrov", "Quinn", "Rossi", "Sato", "Tanaka", "Ueda",
    "Vogel", "Weber", "Xu", "Young", "Zeller", "Abbott", "Brandt", "Crane", "Duval", "Ekberg",
];
const GENRES: [&str; 12] = [
    "Drama", "Comedy", "Thriller", "Horror", "Western", "Romance", "Documentary", "Animation",
    "Musical", "Mystery", "Fantasy", "Adventure",
];
const LANGUAGES: [&str; 8] = [
    "English", "French", "German", "Spanish", "Italian", "Japanese", "Korean", "Swedish",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub movies: usize,
    pub people: usize,
    pub years: usize,
    pub genres: usize,
    pub languages: usize,
    pub questions_per_hop: usize,
    pub max_hop: usize,
    /// Train, dev and test fractions.
    pub split: [f64; 3],
    /// Fraction of movies whose year and language share one sentence pattern.
    pub ambiguous_fraction: f64,
    /// Movies given a same-titled twin `Title (2)`, for the duplicate split.
    pub duplicate_titles: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            movies: 200,
            people: 240,
            years: 30,
            genres: 12,
            languages: 8,
            questions_per_hop: 3200,
            max_hop: 3,
            split: [0.8, 0.1, 0.1],
            ambiguous_fraction: 0.1,
            duplicate_titles: 0,
            seed: 13,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.movies < 20 {
            return bad(format!("need at least 20 movies, got {}", self.movies));
        }
        if self.movies + self.duplicate_titles > TITLE_ADJECTIVES.len() * TITLE_NOUNS.len() {
            return bad("too many movies for the title lists".into());
        }
        if self.people < 5 || self.people > FIRST_NAMES.len() * LAST_NAMES.len() {
            return bad(format!("people must be in 5..={}", FIRST_NAMES.len() * LAST_NAMES.len()));
        }
        if self.years == 0 || self.genres == 0 || self.genres > GENRES.len() {
            return bad(format!("years must be positive and genres in 1..={}", GENRES.len()));
        }
        if self.languages == 0 || self.languages > LANGUAGES.len() {
            return bad(format!("languages must be in 1..={}", LANGUAGES.len()));
        }
        if !(1..=3).contains(&self.max_hop) {
            return bad("max_hop must be 1, 2 or 3".into());
        }
        if self.duplicate_titles > self.movies / 2 {
            return bad("duplicate_titles may be at most half the movies".into());
        }
        if self.split.iter().any(|f| *f < 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split fractions must be non-negative and sum to 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuestionSplits {
    pub train: Vec<QAExample>,
    pub dev: Vec<QAExample>,
    pub test: Vec<QAExample>,
}

impl QuestionSplits {
    fn from_shuffled(mut all: Vec<QAExample>, split: [f64; 3]) -> Self {
        let n = all.len();
        let n_train = (n as f64 * split[0]).round() as usize;
        let n_dev = ((n as f64 * split[1]).round() as usize).min(n - n_train);
        let test = all.split_off(n_train + n_dev);
        let dev = all.split_off(n_train);
        QuestionSplits { train: all, dev, test }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub triples: Vec<(String, String, String)>,
    /// One `(movie, article)` document per movie.
    pub corpus: Vec<(String, String)>,
    pub kinds: BTreeMap<String, EntityKind>,
    pub hops: BTreeMap<usize, QuestionSplits>,
    /// 1-hop year and language questions on ambiguous movies, already
    /// merged into the 1-hop splits and grouped by movie.
    pub ambiguous: QuestionSplits,
    pub ambiguous_movies: Vec<String>,
    /// Questions whose bracketed title names two movies.
    pub duplicates: Vec<QAExample>,
}

/// One hop of a question path: predicate index and direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Step {
    pred: usize,
    reverse: bool,
}

impl Step {
    fn start(self) -> EntityKind {
        if self.reverse {
            PREDICATES[self.pred].object
        } else {
            EntityKind::Movie
        }
    }
}

fn path_patterns(hop: usize) -> Vec<Vec<Step>> {
    let fwd = |pred| Step { pred, reverse: false };
    let rev = |pred| Step { pred, reverse: true };
    let people = [0, 1, 2];
    let mut out = Vec::new();
    match hop {
        1 => {
            for p in 0..PREDICATES.len() {
                out.push(vec![fwd(p)]);
                out.push(vec![rev(p)]);
            }
        }
        2 => {
            for a in people {
                for b in people {
                    out.push(vec![fwd(a), rev(b)]);
                }
                for b in 0..PREDICATES.len() {
                    out.push(vec![rev(a), fwd(b)]);
                }
            }
        }
        _ => {
            for a in people {
                for b in people {
                    for c in 0..PREDICATES.len() {
                        out.push(vec![fwd(a), rev(b), fwd(c)]);
                    }
                    for c in people {
                        out.push(vec![rev(a), fwd(b), rev(c)]);
                    }
                }
            }
        }
    }
    out
}

struct Kb {
    movies: Vec<String>,
    triples: Vec<(String, String, String)>,
    kinds: BTreeMap<String, EntityKind>,
    /// Index into `PREDICATES`, for each movie's sentence about each triple.
    facts: Vec<(usize, usize, String)>,
}

fn build_kb(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Kb {
    let mut titles: Vec<String> = TITLE_ADJECTIVES
        .iter()
        .flat_map(|a| TITLE_NOUNS.iter().map(move |n| format!("{a} {n}")))
        .collect();
    titles.shuffle(rng);
    let mut movies: Vec<String> = titles[..spec.movies].to_vec();
    for i in 0..spec.duplicate_titles {
        movies.push(format!("{} (2)", movies[i]));
    }
    let mut people: Vec<String> = FIRST_NAMES
        .iter()
        .flat_map(|f| LAST_NAMES.iter().map(move |l| format!("{f} {l}")))
        .collect();
    people.shuffle(rng);
    people.truncate(spec.people);
    let years: Vec<String> = (0..spec.years).map(|i| (1961 + i).to_string()).collect();
    let genres = &GENRES[..spec.genres];
    let languages = &LANGUAGES[..spec.languages];

    let mut kinds = BTreeMap::new();
    let mut triples = Vec::new();
    let mut facts = Vec::new();
    for (m, movie) in movies.iter().enumerate() {
        kinds.insert(movie.clone(), EntityKind::Movie);
        let mut objects: Vec<(usize, String)> = Vec::new();
        objects.push((0, people.choose(rng).unwrap().clone()));
        let writers = rng.gen_range(1..=2);
        for w in people.choose_multiple(rng, writers) {
            objects.push((1, w.clone()));
        }
        let actors = rng.gen_range(2..=4);
        for a in people.choose_multiple(rng, actors) {
            objects.push((2, a.clone()));
        }
        objects.push((RELEASE_YEAR, years.choose(rng).unwrap().clone()));
        objects.push((IN_LANGUAGE, languages.choose(rng).unwrap().to_string()));
        let n_genres = rng.gen_range(1..=2);
        for g in genres.choose_multiple(rng, n_genres) {
            objects.push((5, g.to_string()));
        }
        for (p, o) in objects {
            kinds.insert(o.clone(), PREDICATES[p].object);
            triples.push((movie.clone(), PREDICATES[p].name.to_string(), o.clone()));
            facts.push((m, p, o));
        }
    }
    Kb {
        movies,
        triples,
        kinds,
        facts,
    }
}

fn render(template: &str, subject: &str, object: &str) -> String {
    template.replace("{s}", subject).replace("{o}", object)
}

fn phrase(path: &[Step], topic: &str, rng: &mut ChaCha8Rng) -> String {
    let mut text = format!("[{topic}]");
    for step in path {
        let p = &PREDICATES[step.pred];
        let options = if step.reverse { &p.reverse } else { &p.forward };
        text = options[rng.gen_range(0..2)].replace("{}", &text);
    }
    WRAPPERS.choose(rng).unwrap().replace("{}", &text)
}

fn answer_names(graph: &RelationGraph, answers: impl IntoIterator<Item = EntityId>) -> Vec<String> {
    answers.into_iter().map(|e| graph.entity_name(e).to_string()).collect()
}

fn step_predicate(graph: &RelationGraph, step: Step) -> PredicateId {
    let fwd = graph
        .predicate_id(PREDICATES[step.pred].name)
        .expect("generated predicate present");
    if step.reverse {
        graph.reverse_predicate(fwd)
    } else {
        fwd
    }
}

/// Generates the graph, corpus and question splits for `spec`. Pure in
/// `spec` (including its seed).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let kb = build_kb(spec, &mut rng);
    let graph = RelationGraph::build_from_triples(&kb.triples)?.add_reverse_relations()?;

    let real_movies = spec.movies;
    let n_ambiguous = ((real_movies as f64) * spec.ambiguous_fraction).round() as usize;
    let mut candidates: Vec<usize> = (spec.duplicate_titles..real_movies).collect();
    candidates.shuffle(&mut rng);
    let mut ambiguous_idx: Vec<usize> = candidates.into_iter().take(n_ambiguous).collect();
    let ambiguous_set: HashSet<usize> = ambiguous_idx.iter().copied().collect();

    let mut articles: Vec<Vec<String>> = vec![Vec::new(); kb.movies.len()];
    for (m, p, o) in &kb.facts {
        let template = if ambiguous_set.contains(m) && (*p == RELEASE_YEAR || *p == IN_LANGUAGE) {
            AMBIGUOUS_SENTENCE
        } else {
            PREDICATES[*p].sentences[rng.gen_range(0..2)]
        };
        articles[*m].push(render(template, &kb.movies[*m], o));
    }
    let corpus: Vec<(String, String)> = kb
        .movies
        .iter()
        .zip(articles)
        .map(|(m, s)| (m.clone(), s.join(" ")))
        .collect();

    // Topics excluded from random questions: twin titles and the year /
    // language facts of ambiguous movies (those get their own grouped set).
    let mut excluded: HashSet<EntityId> = HashSet::new();
    for i in 0..spec.duplicate_titles {
        excluded.insert(graph.entity_id(&kb.movies[i]).unwrap());
        excluded.insert(graph.entity_id(&kb.movies[real_movies + i]).unwrap());
    }
    let ambiguous_ids: HashSet<EntityId> = ambiguous_idx
        .iter()
        .map(|&m| graph.entity_id(&kb.movies[m]).unwrap())
        .collect();

    let mut seen: HashSet<String> = HashSet::new();

    ambiguous_idx.sort_unstable();
    ambiguous_idx.shuffle(&mut rng);
    let mut grouped: [Vec<QAExample>; 3] = Default::default();
    let n_amb = ambiguous_idx.len();
    let cut_train = (n_amb as f64 * 0.5).round() as usize;
    let cut_dev = cut_train + (n_amb as f64 * 0.2).round() as usize;
    for (rank, &m) in ambiguous_idx.iter().enumerate() {
        let topic = graph.entity_id(&kb.movies[m]).unwrap();
        let group = if rank < cut_train {
            0
        } else if rank < cut_dev.min(n_amb) {
            1
        } else {
            2
        };
        for pred in [RELEASE_YEAR, IN_LANGUAGE] {
            let step = Step { pred, reverse: false };
            let answers = path_answers(&graph, topic, &[step_predicate(&graph, step)])?;
            for template in PREDICATES[pred].forward {
                let text = template.replace("{}", &format!("[{}]", kb.movies[m]));
                let question = WRAPPERS.choose(&mut rng).unwrap().replace("{}", &text);
                if seen.insert(question.clone()) {
                    grouped[group].push(QAExample::new(&question, answer_names(&graph, answers.iter().copied()), Some(1))?);
                }
            }
        }
    }
    let [a_train, a_dev, a_test] = grouped;
    let ambiguous = QuestionSplits {
        train: a_train,
        dev: a_dev,
        test: a_test,
    };

    let mut hops = BTreeMap::new();
    for hop in 1..=spec.max_hop {
        let patterns = path_patterns(hop);
        let starts: Vec<Vec<EntityId>> = patterns
            .iter()
            .map(|path| {
                let first = step_predicate(&graph, path[0]);
                let adj = graph.adjacency(first).expect("predicate in range");
                (0..graph.num_entities())
                    .map(EntityId)
                    .filter(|e| !adj.successors(e.0).is_empty() && !excluded.contains(e))
                    .filter(|e| kb.kinds.get(graph.entity_name(*e)) == Some(&path[0].start()))
                    .filter(|e| {
                        !(hop == 1
                            && ambiguous_ids.contains(e)
                            && (path[0].pred == RELEASE_YEAR || path[0].pred == IN_LANGUAGE))
                    })
                    .collect()
            })
            .collect();
        let mut questions = Vec::new();
        let mut attempts = 0;
        while questions.len() < spec.questions_per_hop && attempts < 50 * spec.questions_per_hop {
            attempts += 1;
            let k = rng.gen_range(0..patterns.len());
            let Some(&topic) = starts[k].choose(&mut rng) else {
                continue;
            };
            let path = &patterns[k];
            let preds: Vec<PredicateId> = path.iter().map(|s| step_predicate(&graph, *s)).collect();
            let answers = path_answers(&graph, topic, &preds)?;
            if answers.is_empty() {
                continue;
            }
            let question = phrase(path, surface_form(graph.entity_name(topic)), &mut rng);
            if !seen.insert(question.clone()) {
                continue;
            }
            questions.push(QAExample::new(&question, answer_names(&graph, answers), Some(hop))?);
        }
        questions.shuffle(&mut rng);
        let mut splits = QuestionSplits::from_shuffled(questions, spec.split);
        if hop == 1 {
            splits.train.extend(ambiguous.train.iter().cloned());
            splits.dev.extend(ambiguous.dev.iter().cloned());
            splits.test.extend(ambiguous.test.iter().cloned());
        }
        hops.insert(hop, splits);
    }

    let mut duplicates = Vec::new();
    for i in 0..spec.duplicate_titles {
        let original = graph.entity_id(&kb.movies[i]).unwrap();
        for pred in 0..PREDICATES.len() {
            let step = Step { pred, reverse: false };
            let answers = path_answers(&graph, original, &[step_predicate(&graph, step)])?;
            let question = phrase(&[step], &kb.movies[i], &mut rng);
            if seen.insert(question.clone()) {
                duplicates.push(QAExample::new(&question, answer_names(&graph, answers), Some(1))?);
            }
        }
    }

    Ok(SyntheticDataset {
        spec: spec.clone(),
        triples: kb.triples,
        corpus,
        kinds: kb.kinds,
        hops,
        ambiguous,
        ambiguous_movies: ambiguous_idx.iter().map(|&m| kb.movies[m].clone()).collect(),
        duplicates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SyntheticSpec,
    pub form: GraphForm,
    pub entities: usize,
    pub predicates: usize,
    pub triples: usize,
    pub documents: usize,
    pub questions: BTreeMap<usize, SplitCounts>,
    pub ambiguous_test: usize,
    pub duplicate_test: usize,
}

impl SyntheticDataset {
    /// Entity names in first-seen triple order.
    pub fn entity_names(&self) -> Vec<String> {
        super::entity_names(&self.triples)
    }

    pub fn manifest(&self, form: GraphForm) -> Manifest {
        let preds: HashSet<&str> = self.triples.iter().map(|(_, p, _)| p.as_str()).collect();
        Manifest {
            spec: self.spec.clone(),
            form,
            entities: self.entity_names().len(),
            predicates: 2 * preds.len(),
            triples: self.triples.len(),
            documents: if form.uses_text() { self.corpus.len() } else { 0 },
            questions: self
                .hops
                .iter()
                .map(|(h, s)| {
                    let c = SplitCounts {
                        train: s.train.len(),
                        dev: s.dev.len(),
                        test: s.test.len(),
                    };
                    (*h, c)
                })
                .collect(),
            ambiguous_test: self.ambiguous.test.len(),
            duplicate_test: self.duplicates.len(),
        }
    }

    /// Writes `kb.tsv`, `corpus.jsonl` (text and mixed forms), the per-hop
    /// question files with hop sidecars, the ambiguous and duplicate test
    /// sets and `manifest.json`.
    pub fn write(&self, dir: &Path, form: GraphForm) -> Result<Manifest> {
        let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        mkdir(dir)?;
        let mut kb = String::new();
        for (h, p, t) in &self.triples {
            kb.push_str(&format!("{h}\t{p}\t{t}\n"));
        }
        let kb_path = dir.join("kb.tsv");
        std::fs::write(&kb_path, kb).map_err(|e| Error::io(&kb_path, e))?;
        if form.uses_text() {
            let mut body = String::new();
            for (subject, text) in &self.corpus {
                body.push_str(&serde_json::to_string(&serde_json::json!({"subject": subject, "text": text}))?);
                body.push('\n');
            }
            let path = dir.join("corpus.jsonl");
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        for (hop, splits) in &self.hops {
            let sub = dir.join(format!("{hop}-hop"));
            mkdir(&sub)?;
            write_questions(&sub.join("qa_train.txt"), &splits.train)?;
            write_questions(&sub.join("qa_dev.txt"), &splits.dev)?;
            write_questions(&sub.join("qa_test.txt"), &splits.test)?;
        }
        let amb = dir.join("ambiguous");
        mkdir(&amb)?;
        write_questions(&amb.join("qa_test.txt"), &self.ambiguous.test)?;
        if !self.duplicates.is_empty() {
            let dup = dir.join("duplicates");
            mkdir(&dup)?;
            write_questions(&dup.join("qa_test.txt"), &self.duplicates)?;
        }
        let manifest = self.manifest(form);
        let path = dir.join("manifest.json");
        let body = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}
