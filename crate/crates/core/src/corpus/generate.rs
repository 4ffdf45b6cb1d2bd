use std::collections::BTreeMap;

use deckqa_numerics::mix64;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{GeneratorConfig, Metric};
use super::multihop::edit_to_multi_hop;
use super::questions::{generate_question, QuestionKind};
use super::{
    BBox, CorpusError, QaRecord, Region, RegionCategory, Slide, SlideDeck, Word, PAGE_HEIGHT,
    PAGE_WIDTH,
};

const MARGIN: u32 = 32;
const TITLE_BOTTOM: u32 = 104;
const CONTENT_TOP: u32 = 128;
const GAP: u32 = 16;
const PAD: u32 = 8;
const CHAR_WIDTH: u32 = 12;
const LINE_HEIGHT: u32 = 28;
const MAX_CONTENT_REGIONS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// One deck with its questions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeckBundle {
    pub deck: SlideDeck,
    pub records: Vec<QaRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub train: Vec<DeckBundle>,
    pub dev: Vec<DeckBundle>,
    pub test: Vec<DeckBundle>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[DeckBundle] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<DeckBundle> {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Test => &mut self.test,
        }
    }

    pub fn bundles(&self) -> impl Iterator<Item = &DeckBundle> {
        self.train.iter().chain(self.dev.iter()).chain(self.test.iter())
    }

    pub fn records(&self) -> impl Iterator<Item = &QaRecord> {
        self.bundles().flat_map(|b| b.records.iter())
    }

    pub fn decks(&self) -> BTreeMap<String, SlideDeck> {
        self.bundles().map(|b| (b.deck.deck_id.clone(), b.deck.clone())).collect()
    }
}

/// Largest-remainder apportionment of `total` items over `weights`.
pub fn split_counts(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if total == 0 || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn stream_seed(seed: u64, stream: u64, index: usize) -> u64 {
    mix64(mix64(seed ^ stream).wrapping_add(index as u64))
}

const DECK_STREAM: u64 = 0x6465_636b;
const QUESTION_STREAM: u64 = 0x7175_6573;

pub(crate) fn deck_id(index: usize) -> String {
    format!("deck-{index:05}")
}

/// Lines of words placed top-down in `bbox`; each line wraps at the region width.
fn layout_words(bbox: BBox, lines: &[Vec<String>]) -> Vec<Word> {
    let inner_w = bbox.x1 - bbox.x0 - 2 * PAD;
    // first pass: wrap into visual lines
    let mut visual: Vec<Vec<(String, u32)>> = Vec::new();
    for line in lines {
        let mut cur: Vec<(String, u32)> = Vec::new();
        let mut used = 0;
        for w in line {
            let width = (w.chars().count() as u32 * CHAR_WIDTH).clamp(CHAR_WIDTH, inner_w);
            let need = if cur.is_empty() { width } else { used + CHAR_WIDTH + width };
            if !cur.is_empty() && need > inner_w {
                visual.push(std::mem::take(&mut cur));
                used = 0;
            }
            used = if cur.is_empty() { width } else { used + CHAR_WIDTH + width };
            cur.push((w.clone(), width));
        }
        if !cur.is_empty() {
            visual.push(cur);
        }
    }
    let inner_h = bbox.y1 - bbox.y0 - 2 * PAD;
    let line_h = if visual.is_empty() {
        LINE_HEIGHT
    } else {
        LINE_HEIGHT.min(inner_h / visual.len() as u32).max(1)
    };
    let mut out = Vec::new();
    for (li, line) in visual.iter().enumerate() {
        let y0 = bbox.y0 + PAD + li as u32 * line_h;
        let mut x = bbox.x0 + PAD;
        for (w, width) in line {
            out.push(Word { word: w.clone(), bbox: BBox::new(x, y0, x + width, y0 + line_h) });
            x += width + CHAR_WIDTH;
        }
    }
    out
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

#[derive(Clone, Debug)]
struct ContentSpec {
    category: RegionCategory,
    lines: Vec<Vec<String>>,
}

impl ContentSpec {
    fn text(category: RegionCategory, text: &str) -> Self {
        Self { category, lines: vec![words(text)] }
    }
}

fn build_slide(
    page_number: u32,
    title: &str,
    content: &[ContentSpec],
    rng: &mut ChaCha8Rng,
) -> Slide {
    let mut regions = Vec::with_capacity(content.len() + 1);
    let title_box = BBox::new(MARGIN, 24, PAGE_WIDTH - MARGIN, TITLE_BOTTOM);
    regions.push(Region {
        category: RegionCategory::Title,
        bbox: title_box,
        tokens: layout_words(title_box, &[words(title)]),
    });
    let n = content.len().max(1) as u32;
    let avail = PAGE_HEIGHT - MARGIN - CONTENT_TOP - GAP * (n - 1);
    let h = avail / n;
    let full_w = PAGE_WIDTH - 2 * MARGIN;
    for (i, spec) in content.iter().enumerate() {
        let y0 = CONTENT_TOP + i as u32 * (h + GAP);
        let w = if spec.lines.is_empty() { rng.random_range(full_w / 4..=full_w / 2) } else { rng.random_range(full_w / 2..=full_w) };
        let bbox = BBox::new(MARGIN, y0, MARGIN + w, y0 + h);
        regions.push(Region {
            category: spec.category,
            bbox,
            tokens: layout_words(bbox, &spec.lines),
        });
    }
    Slide { page_number, width: PAGE_WIDTH, height: PAGE_HEIGHT, regions }
}

pub(crate) fn value_text(value: u32, metric: &Metric) -> String {
    if metric.percent {
        format!("{value}%")
    } else {
        value.to_string()
    }
}

enum SlidePlan {
    Metric(usize),
    Outlook(usize),
    Filler,
}

/// Deterministic deck for `(cfg.seed, deck_index)`.
pub fn generate_deck(cfg: &GeneratorConfig, deck_index: usize) -> Result<SlideDeck, CorpusError> {
    if deck_index >= cfg.num_decks {
        return Err(CorpusError::DeckIndex { index: deck_index, num_decks: cfg.num_decks });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, DECK_STREAM, deck_index));
    let lx = &cfg.lexicon;
    let k = cfg.pages_per_deck;

    let topic = lx.topics.choose(&mut rng).expect("validated").clone();
    let entities: Vec<&String> = lx.companies.choose_multiple(&mut rng, 3).collect();
    let first_year: u32 = rng.random_range(2012..=2020);
    let years = [first_year, first_year + rng.random_range(1..=3)];
    let n_metrics = (k - 2).max(1).min(3 + (k.saturating_sub(5)) / 5).min(6).min(lx.metrics.len());
    let metrics: Vec<&Metric> = lx.metrics.choose_multiple(&mut rng, n_metrics).collect();

    // values[m][year][entity], distinct across entities for a (metric, year)
    let mut values = vec![[[0u32; 3]; 2]; n_metrics];
    for (mi, metric) in metrics.iter().enumerate() {
        let hi = if metric.percent { 99 } else { 999 };
        for per_year in values[mi].iter_mut() {
            loop {
                for v in per_year.iter_mut() {
                    *v = rng.random_range(1..=hi);
                }
                if per_year[0] != per_year[1] && per_year[0] != per_year[2] && per_year[1] != per_year[2] {
                    break;
                }
            }
        }
    }

    let mut plans: Vec<SlidePlan> = (0..n_metrics).map(SlidePlan::Metric).collect();
    while plans.len() < k - 1 {
        if rng.random_bool(0.4) {
            plans.push(SlidePlan::Outlook(rng.random_range(0..n_metrics)));
        } else {
            plans.push(SlidePlan::Filler);
        }
    }
    plans.shuffle(&mut rng);

    let mut titles = vec![format!("{topic} Annual Review")];
    let mut contents: Vec<Vec<ContentSpec>> =
        vec![vec![ContentSpec::text(RegionCategory::OtherText, &format!("prepared by {}", lx.people.choose(&mut rng).expect("validated")))]];
    for plan in &plans {
        match *plan {
            SlidePlan::Metric(mi) => {
                titles.push(format!("{} by Company", metrics[mi].name));
                let category = *[RegionCategory::Table, RegionCategory::Figure, RegionCategory::ObjText]
                    .choose(&mut rng)
                    .expect("non-empty");
                let mut rows: Vec<(usize, usize)> =
                    (0..3).flat_map(|e| (0..2).map(move |y| (e, y))).collect();
                rows.shuffle(&mut rng);
                let lines = rows
                    .iter()
                    .map(|&(e, y)| {
                        vec![
                            entities[e].clone(),
                            years[y].to_string(),
                            value_text(values[mi][y][e], metrics[mi]),
                        ]
                    })
                    .collect();
                let mut content = vec![ContentSpec { category, lines }];
                if rng.random_bool(0.5) {
                    content.push(ContentSpec::text(RegionCategory::Caption, "source : company reports"));
                }
                if rng.random_bool(0.3) {
                    content.push(ContentSpec { category: RegionCategory::Image, lines: Vec::new() });
                }
                contents.push(content);
            }
            SlidePlan::Outlook(mi) => {
                titles.push(format!("{} Outlook", metrics[mi].name));
                let line = lx.filler_lines.choose(&mut rng).expect("validated");
                let mut content = vec![ContentSpec::text(RegionCategory::PageText, line)];
                if rng.random_bool(0.3) {
                    content.push(ContentSpec { category: RegionCategory::Diagram, lines: Vec::new() });
                }
                contents.push(content);
            }
            SlidePlan::Filler => {
                titles.push(lx.filler_titles.choose(&mut rng).expect("validated").clone());
                let n = rng.random_range(1..=2);
                let content = lx
                    .filler_lines
                    .choose_multiple(&mut rng, n)
                    .map(|l| ContentSpec::text(RegionCategory::PageText, l))
                    .collect();
                contents.push(content);
            }
        }
    }

    // One identifying property per entity, values unique within the deck.
    let founded: Vec<u32> = {
        let pool: Vec<u32> = (1950..=2005).collect();
        pool.choose_multiple(&mut rng, 3).copied().collect()
    };
    let cities: Vec<&String> = lx.cities.choose_multiple(&mut rng, 3).collect();
    let people: Vec<&String> = lx.people.choose_multiple(&mut rng, 3).collect();
    for (e, entity) in entities.iter().enumerate() {
        let line = match rng.random_range(0..3) {
            0 => format!("{entity} founded in {}", founded[e]),
            1 => format!("{entity} headquartered in {}", cities[e]),
            _ => format!("{entity} led by {}", people[e]),
        };
        let open: Vec<usize> =
            (0..contents.len()).filter(|&p| contents[p].len() < MAX_CONTENT_REGIONS).collect();
        let page = *open.choose(&mut rng).expect("every slide starts below the cap");
        contents[page].push(ContentSpec::text(RegionCategory::PageText, &line));
    }

    let slides = titles
        .iter()
        .zip(contents.iter())
        .enumerate()
        .map(|(i, (title, content))| build_slide(i as u32 + 1, title, content, &mut rng))
        .collect();
    Ok(SlideDeck { deck_id: deck_id(deck_index), slides, topic })
}

/// Low-discrepancy point in [0, 1) for the `i`-th question of the corpus.
fn sequence_point(i: usize, step: f64) -> f64 {
    ((i as f64 + 0.5) * step).fract()
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const SILVER: f64 = 0.414_213_562_373_095_1;

fn question_kind(cfg: &GeneratorConfig, global_index: usize) -> QuestionKind {
    let m = &cfg.mix;
    let u = sequence_point(global_index, GOLDEN);
    if u < m.single_hop {
        return QuestionKind::SingleHop;
    }
    if u < m.single_hop + m.multi_hop {
        return QuestionKind::MultiHop;
    }
    let v = sequence_point(global_index, SILVER);
    let rest = (1.0 - m.arithmetic_share) / 2.0;
    if v < m.arithmetic_share {
        QuestionKind::Arithmetic
    } else if v < m.arithmetic_share + rest {
        QuestionKind::Counting
    } else {
        QuestionKind::Comparison
    }
}

const ATTEMPTS: usize = 16;

/// Questions for one deck; the kind of each question comes from the
/// configured mix.
pub fn generate_records(
    cfg: &GeneratorConfig,
    deck_index: usize,
    deck: &SlideDeck,
) -> Result<Vec<QaRecord>, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, QUESTION_STREAM, deck_index));
    let mut out: Vec<QaRecord> = Vec::with_capacity(cfg.questions_per_deck);
    for j in 0..cfg.questions_per_deck {
        let kind = question_kind(cfg, deck_index * cfg.questions_per_deck + j);
        let mut chosen = None;
        let mut fallback = None;
        for _ in 0..ATTEMPTS {
            let candidate = if kind == QuestionKind::MultiHop {
                let single = generate_question(deck, QuestionKind::SingleHop, &mut rng)?;
                match edit_to_multi_hop(deck, &single, &mut rng) {
                    Ok(multi) => multi,
                    Err(_) => {
                        fallback.get_or_insert(single);
                        continue;
                    }
                }
            } else {
                generate_question(deck, kind, &mut rng)?
            };
            if out.iter().all(|r| r.question != candidate.question) {
                chosen = Some(candidate);
                break;
            }
            fallback.get_or_insert(candidate);
        }
        let mut record = match chosen.or(fallback) {
            Some(r) => r,
            None => continue,
        };
        record.qa_id = format!("{}-q{j}", deck.deck_id);
        out.push(record);
    }
    Ok(out)
}

/// Full corpus; decks are assigned to splits in index order.
pub fn generate_corpus(cfg: &GeneratorConfig) -> Result<Corpus, CorpusError> {
    cfg.validate()?;
    let s = &cfg.splits;
    let counts = split_counts(cfg.num_decks, &[s.train, s.dev, s.test]);
    let mut corpus = Corpus::default();
    let mut index = 0;
    for (split, count) in Split::ALL.into_iter().zip(counts) {
        for _ in 0..count {
            let deck = generate_deck(cfg, index)?;
            let records = generate_records(cfg, index, &deck)?;
            corpus.split_mut(split).push(DeckBundle { deck, records });
            index += 1;
        }
    }
    Ok(corpus)
}
