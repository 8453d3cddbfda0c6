//! Synthetic comparable corpus with known alignment.
//!
//! A shared base text is rendered once per variety with independent random
//! character substitutions; each variety also gets its own inserted
//! segments, half of them loose paraphrases of a neighbouring base segment.
//! The construction gold has one row per base segment and a one-cell row per
//! insert.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Idiom, SegmentId, CANONICAL_IDIOMS};
use crate::text::normalize_chapter_key;

const SYLLABLES: [&str; 32] = [
    "la", "ra", "ta", "mi", "chi", "sch", "un", "dal", "pol", "iz", "ia", "con", "trol", "ov", "es", "ter", "quat",
    "cha", "vals", "ei", "gl", "tg", "na", "ser", "bu", "fo", "rem", "tsch", "ag", "lin", "pa", "du",
];
const SUBSTITUTES: &str = "abcdefghilmnoprstuvzàèéòü";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub idioms: Vec<String>,
    pub groups: usize,
    /// Base segments per chapter are drawn uniformly from this inclusive range.
    pub segments_min: usize,
    pub segments_max: usize,
    pub words_min: usize,
    pub words_max: usize,
    pub vocabulary: usize,
    /// Expected fraction of differing characters between two varieties.
    /// Each variety substitutes characters at `1 - sqrt(1 - d)`.
    pub pairwise_divergence: f64,
    /// Inserted segments per base segment, per variety.
    pub insert_rate: f64,
    /// Share of inserts derived from a neighbouring base segment.
    pub confusable_share: f64,
    /// Share of a confusable insert's words copied from its neighbour.
    pub confusable_overlap: f64,
    pub chapters_per_volume: usize,
    pub first_grade: u8,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_917,
            idioms: CANONICAL_IDIOMS.iter().map(|s| s.to_string()).collect(),
            groups: 40,
            segments_min: 26,
            segments_max: 34,
            words_min: 5,
            words_max: 25,
            vocabulary: 600,
            pairwise_divergence: 0.10,
            insert_rate: 0.10,
            confusable_share: 0.5,
            confusable_overlap: 0.6,
            chapters_per_volume: 10,
            first_grade: 2,
        }
    }
}

impl SynthConfig {
    pub fn char_rate(&self) -> f64 {
        1.0 - (1.0 - self.pairwise_divergence).sqrt()
    }
}

/// Construction counts, for checking pipeline bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FixtureCounts {
    pub groups: usize,
    pub base_segments: usize,
    pub volumes_per_idiom: usize,
    pub inserted: BTreeMap<String, usize>,
    pub confusable: BTreeMap<String, usize>,
    pub segments: BTreeMap<String, usize>,
    pub gold_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    /// File name and JSON body of every raw volume.
    pub volumes: Vec<(String, String)>,
    pub mapping_tsv: String,
    pub gold_tsv: String,
    pub splits_tsv: String,
    pub counts: FixtureCounts,
}

fn mix(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed;
    for p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = (h ^ (h >> 31)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    }
    h
}

fn rng_for(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, parts))
}

fn perturb(words: &[String], rate: f64, rng: &mut ChaCha8Rng) -> Vec<String> {
    let subs: Vec<char> = SUBSTITUTES.chars().collect();
    words
        .iter()
        .map(|w| w.chars().map(|c| if rng.gen_bool(rate) { *subs.choose(rng).unwrap() } else { c }).collect())
        .collect()
}

fn sentence(words: &[String], strong: Option<usize>) -> (String, String) {
    let mut plain = String::new();
    for (k, w) in words.iter().enumerate() {
        if k > 0 {
            plain.push(' ');
        }
        if strong == Some(k) {
            let _ = write!(plain, "<strong>{w}</strong>");
        } else {
            plain.push_str(w);
        }
    }
    plain.push('.');
    let html = format!("<p>{plain}</p>");
    (plain, html)
}

struct BaseSegment {
    words: Vec<String>,
    strong: Option<usize>,
}

enum Piece<'a> {
    Base(usize, &'a BaseSegment),
    Fresh(Vec<String>),
    Confusable(Vec<String>),
}

pub fn generate(config: &SynthConfig) -> Fixture {
    let rate = config.char_rate();
    let mut vocab_rng = rng_for(config.seed, &[0]);
    let vocab: Vec<String> = (0..config.vocabulary)
        .map(|_| {
            let n = vocab_rng.gen_range(1..=3);
            (0..n).map(|_| *SYLLABLES.choose(&mut vocab_rng).unwrap()).collect()
        })
        .collect();
    let draw_words = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let n = rng.gen_range(config.words_min..=config.words_max);
        (0..n).map(|_| vocab.choose(rng).unwrap().clone()).collect()
    };

    let mut counts = FixtureCounts { groups: config.groups, ..FixtureCounts::default() };
    let chapters_per_volume = config.chapters_per_volume.max(1);
    counts.volumes_per_idiom = config.groups.div_ceil(chapters_per_volume);
    let volume_id = |g: usize| format!("grade{}-workbook", config.first_grade as usize + g / chapters_per_volume);

    // per idiom, per volume: chapters as (title, elements)
    let mut books: BTreeMap<(String, String), Vec<serde_json::Value>> = BTreeMap::new();
    let mut mapping = String::from("group_id");
    for i in &config.idioms {
        mapping.push('\t');
        mapping.push_str(i);
    }
    mapping.push('\n');
    let mut gold = config.idioms.join("\t");
    gold.push('\n');

    for g in 0..config.groups {
        let mut group_rng = rng_for(config.seed, &[1, g as u64]);
        let n = group_rng.gen_range(config.segments_min..=config.segments_max);
        let base: Vec<BaseSegment> = (0..n)
            .map(|_| {
                let words = draw_words(&mut group_rng);
                let strong = group_rng.gen_bool(0.1).then(|| group_rng.gen_range(0..words.len()));
                BaseSegment { words, strong }
            })
            .collect();
        counts.base_segments += n;
        let vol = volume_id(g);
        let _ = write!(mapping, "g{g:04}");

        // gold ids of base segment k, per idiom
        let mut base_ids: Vec<Vec<String>> = vec![Vec::new(); n];
        let mut insert_ids: Vec<String> = Vec::new();
        for (ii, idiom_code) in config.idioms.iter().enumerate() {
            let idiom = Idiom::new(idiom_code.as_str()).expect("fixture idioms are valid codes");
            let mut rng = rng_for(config.seed, &[2, g as u64, ii as u64]);
            let mut pieces: Vec<Piece> = Vec::new();
            for (k, b) in base.iter().enumerate() {
                pieces.push(Piece::Base(k, b));
                if rng.gen_bool(config.insert_rate) {
                    if rng.gen_bool(config.confusable_share) {
                        let words = b
                            .words
                            .iter()
                            .map(|w| if rng.gen_bool(config.confusable_overlap) { w.clone() } else { vocab.choose(&mut rng).unwrap().clone() })
                            .collect();
                        pieces.push(Piece::Confusable(words));
                    } else {
                        pieces.push(Piece::Fresh(draw_words(&mut rng)));
                    }
                }
            }
            let title = format!("Chapter {:02} {}", g + 1, perturb(&[format!("lecziun{}", g + 1)], rate, &mut rng)[0]);
            let key = normalize_chapter_key(&title);
            let _ = write!(mapping, "\t{vol}#{key}");

            let mut elements = Vec::new();
            let (mut inserted, mut confusable) = (0, 0);
            for (pos, piece) in pieces.iter().enumerate() {
                let id = SegmentId::new(&idiom, &vol, &key, pos).as_str().to_string();
                let (words, strong) = match piece {
                    Piece::Base(k, b) => {
                        base_ids[*k].push(id);
                        (perturb(&b.words, rate, &mut rng), b.strong)
                    }
                    Piece::Fresh(w) | Piece::Confusable(w) => {
                        inserted += 1;
                        confusable += usize::from(matches!(piece, Piece::Confusable(_)));
                        insert_ids.push(id);
                        (perturb(w, rate, &mut rng), None)
                    }
                };
                let (_, html) = sentence(&words, strong);
                elements.push(serde_json::json!({ "html": html }));
            }
            *counts.inserted.entry(idiom_code.clone()).or_default() += inserted;
            *counts.confusable.entry(idiom_code.clone()).or_default() += confusable;
            *counts.segments.entry(idiom_code.clone()).or_default() += pieces.len();
            books
                .entry((idiom_code.clone(), vol.clone()))
                .or_default()
                .push(serde_json::json!({ "title": title, "elements": elements }));
        }
        mapping.push('\n');
        for ids in base_ids {
            gold.push_str(&ids.join("\t"));
            gold.push('\n');
            counts.gold_rows += 1;
        }
        for id in insert_ids {
            let cells: Vec<&str> = config.idioms.iter().map(|i| if id.starts_with(&format!("{i}/")) { id.as_str() } else { "" }).collect();
            gold.push_str(&cells.join("\t"));
            gold.push('\n');
            counts.gold_rows += 1;
        }
    }

    let mut splits = String::from("volume_id\tsplit\n");
    let n_vol = counts.volumes_per_idiom;
    for v in 0..n_vol {
        let split = match (v + 1 == n_vol, v + 2 == n_vol) {
            (true, _) if n_vol >= 3 => "test",
            (_, true) if n_vol >= 3 => "validation",
            _ => "train",
        };
        let _ = writeln!(splits, "{}\t{split}", volume_id(v * chapters_per_volume));
    }

    let volumes = books
        .into_iter()
        .map(|((idiom, vol), chapters)| {
            let grade = vol.trim_start_matches("grade").split('-').next().unwrap().parse::<u8>().unwrap();
            let body = serde_json::json!({
                "idiom": idiom,
                "volume_id": vol,
                "grade": grade,
                "kind": "workbook",
                "chapters": chapters,
            });
            (format!("{idiom}-{vol}.json"), serde_json::to_string_pretty(&body).unwrap() + "\n")
        })
        .collect();
    Fixture { volumes, mapping_tsv: mapping, gold_tsv: gold, splits_tsv: splits, counts }
}

/// Writes `raw/*.json`, `mapping.tsv`, `gold.tsv`, `splits.tsv` and `fixture.json` under `dir`.
pub fn write_fixture(dir: &Path, fixture: &Fixture) -> io::Result<()> {
    let raw = dir.join("raw");
    fs::create_dir_all(&raw)?;
    for (name, body) in &fixture.volumes {
        fs::write(raw.join(name), body)?;
    }
    fs::write(dir.join("mapping.tsv"), &fixture.mapping_tsv)?;
    fs::write(dir.join("gold.tsv"), &fixture.gold_tsv)?;
    fs::write(dir.join("splits.tsv"), &fixture.splits_tsv)?;
    crate::report::write_json_pretty(&dir.join("fixture.json"), &fixture.counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::GoldAlignment;
    use crate::ingest::ingest_dir;
    use crate::model::IdiomSet;

    fn small() -> SynthConfig {
        SynthConfig { groups: 3, segments_min: 4, segments_max: 6, chapters_per_volume: 1, ..SynthConfig::default() }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small()), generate(&small()));
        let other = SynthConfig { seed: 1, ..small() };
        assert_ne!(generate(&small()).gold_tsv, generate(&other).gold_tsv);
    }

    #[test]
    fn divergence_rate() {
        assert!((SynthConfig::default().char_rate() - 0.0513).abs() < 1e-4);
        let mut rng = rng_for(5, &[]);
        let words: Vec<String> = vec!["a".repeat(100_000)];
        let (x, y) = (perturb(&words, 0.0513, &mut rng), perturb(&words, 0.0513, &mut rng));
        let differ = x[0].chars().zip(y[0].chars()).filter(|(a, b)| a != b).count() as f64 / 100_000.0;
        // substitutions can hit the same letter, so observed divergence sits a little below 0.10
        assert!((0.085..0.105).contains(&differ), "{differ}");
    }

    #[test]
    fn gold_ids_match_ingested_corpus() {
        let fixture = generate(&small());
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &fixture).unwrap();
        let out = ingest_dir(&dir.path().join("raw"), &dir.path().join("mapping.tsv"), &IdiomSet::canonical()).unwrap();
        assert!(out.warnings.is_empty(), "{:?}", out.warnings);
        assert_eq!(out.corpus.groups.len(), 3);
        assert_eq!(out.corpus.volumes.len(), 15);
        let index = out.corpus.segment_index();
        let gold = GoldAlignment::parse(&fixture.gold_tsv).unwrap();
        assert_eq!(gold.rows.len(), fixture.counts.gold_rows);
        let mut gold_segments = 0;
        for row in &gold.rows {
            for id in row.cells.values().flatten() {
                assert!(index.contains_key(id), "{id}");
                gold_segments += 1;
            }
        }
        assert_eq!(gold_segments, index.len());
        for (idiom, n) in &fixture.counts.segments {
            let got = out.corpus.volumes.iter().filter(|v| v.idiom.as_str() == idiom).map(|v| v.segments().count()).sum::<usize>();
            assert_eq!(got, *n);
        }
    }
}
