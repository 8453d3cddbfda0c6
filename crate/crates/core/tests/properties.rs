use proptest::prelude::*;

use polyalign::bialign::{align_chapter, AlignConfig, CostMatrix};
use polyalign::embedding::{concat_unit, cosine, hash_embed};
use polyalign::eval::{strict_prf, BilingualLinks};
use polyalign::ingest::{parse_volume, segment_html};
use polyalign::model::{BookVolume, Idiom, IdiomSet, SegmentId};
use polyalign::text::{strip_strong, token_count};

fn word() -> impl Strategy<Value = String> {
    "[a-zàéèòü]{1,8}"
}

#[derive(Debug, Clone)]
enum Block {
    Para(Vec<(String, bool)>),
    List(Vec<Vec<String>>),
}

fn block() -> impl Strategy<Value = Block> {
    prop_oneof![
        prop::collection::vec((word(), any::<bool>()), 1..8).prop_map(Block::Para),
        prop::collection::vec(prop::collection::vec(word(), 1..5), 1..4).prop_map(Block::List),
    ]
}

fn render(blocks: &[Block]) -> (String, Vec<String>) {
    let mut html = String::from("<div>");
    let mut words = Vec::new();
    for b in blocks {
        match b {
            Block::Para(ws) => {
                html.push_str("<p>");
                for (k, (w, strong)) in ws.iter().enumerate() {
                    if k > 0 {
                        html.push(' ');
                    }
                    if *strong {
                        html.push_str(&format!("<strong>{w}</strong>"));
                    } else {
                        html.push_str(&format!("<em>{w}</em>"));
                    }
                    words.push(w.clone());
                }
                html.push_str("</p>");
            }
            Block::List(items) => {
                html.push_str("<ul>");
                for item in items {
                    html.push_str(&format!("<li>{}</li>", item.join(" ")));
                    words.extend(item.iter().cloned());
                }
                html.push_str("</ul>");
            }
        }
    }
    html.push_str("</div>");
    (html, words)
}

proptest! {
    #[test]
    fn segmentation_keeps_every_word_in_order(blocks in prop::collection::vec(block(), 1..6)) {
        let (html, words) = render(&blocks);
        let (segments, issues) = segment_html(&html);
        prop_assert!(issues.is_empty());
        let expected_segments: usize = blocks.iter().map(|b| match b { Block::Para(_) => 1, Block::List(items) => items.len() }).sum();
        prop_assert_eq!(segments.len(), expected_segments);
        let mut got = Vec::new();
        for s in &segments {
            prop_assert!(token_count(&s.text) >= 1);
            prop_assert!(!strip_strong(&s.text).contains('<'));
            got.extend(strip_strong(&s.text).split_whitespace().map(String::from));
        }
        prop_assert_eq!(got, words);
    }

    #[test]
    fn parsed_volumes_survive_json(blocks in prop::collection::vec(block(), 1..5), titles in prop::collection::btree_set("[a-z]{3,8}", 1..4)) {
        let chapters: Vec<serde_json::Value> = titles.iter().map(|t| {
            let elements: Vec<serde_json::Value> = blocks.iter().map(|b| serde_json::json!({"html": render(std::slice::from_ref(b)).0})).collect();
            serde_json::json!({"title": t, "elements": elements})
        }).collect();
        let raw = serde_json::json!({"idiom": "puter", "volume_id": "grade3-book", "grade": 3, "kind": "workbook", "chapters": chapters});
        let (volume, _) = parse_volume(raw.to_string().as_bytes(), "v.json", &IdiomSet::canonical()).unwrap();
        let back: BookVolume = serde_json::from_str(&serde_json::to_string(&volume).unwrap()).unwrap();
        prop_assert_eq!(back, volume);
    }

    #[test]
    fn concat_cosine_is_the_mean(a in "[a-z ]{1,30}", b in "[a-z ]{1,30}", c in "[a-z<>/ ]{1,30}", d in "[a-z<>/ ]{1,30}") {
        prop_assume!(!a.trim().is_empty() && !b.trim().is_empty() && !c.trim().is_empty() && !d.trim().is_empty());
        let (ta, tb, hc, hd) = (hash_embed(&a, 64), hash_embed(&b, 64), hash_embed(&c, 64), hash_embed(&d, 64));
        let u = concat_unit(&ta, &hc).unwrap();
        let v = concat_unit(&tb, &hd).unwrap();
        let mean = (cosine(&ta, &tb).unwrap() + cosine(&hc, &hd).unwrap()) / 2.0;
        prop_assert!((cosine(&u, &v).unwrap() - mean).abs() < 1e-5);
    }

    #[test]
    fn alignment_paths_are_monotone_and_cover_both_sides(
        n in 0usize..25, m in 0usize..25, seed in any::<u64>(), lambda in 0.01f64..1.0,
    ) {
        let mut x = seed;
        let data = (0..n * m).map(|_| { x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (x >> 11) as f64 / (1u64 << 53) as f64 }).collect();
        let costs = CostMatrix::new(n, m, data);
        let path = align_chapter(&costs, &AlignConfig::with_skip_cost(lambda)).unwrap();
        let src: Vec<usize> = path.links.iter().filter_map(|l| l.src).collect();
        let tgt: Vec<usize> = path.links.iter().filter_map(|l| l.tgt).collect();
        prop_assert_eq!(src, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(tgt, (0..m).collect::<Vec<_>>());
        let sum: f64 = path.links.iter().map(|l| l.cost).sum();
        prop_assert!((sum - path.total_cost).abs() < 1e-9);
        for l in &path.links {
            if let (Some(i), Some(j)) = (l.src, l.tgt) {
                prop_assert!(costs.get(i, j) <= 2.0 * lambda + 1e-12);
            }
        }
    }

    #[test]
    fn precision_and_recall_swap_with_arguments(
        h in prop::collection::btree_set((0usize..12, 0usize..12), 1..15),
        g in prop::collection::btree_set((0usize..12, 0usize..12), 1..15),
    ) {
        let (a, b) = (Idiom::new("aa").unwrap(), Idiom::new("bb").unwrap());
        let links = |pairs: &std::collections::BTreeSet<(usize, usize)>| {
            let mut l = BilingualLinks::new(a.clone(), b.clone());
            for &(x, y) in pairs {
                l.links.insert(([SegmentId::new(&a, "v", "k", x)].into(), [SegmentId::new(&b, "v", "k", y)].into()));
            }
            l
        };
        let (hg, ..) = strict_prf(&links(&h), &links(&g)).unwrap();
        let (gh, ..) = strict_prf(&links(&g), &links(&h)).unwrap();
        prop_assert_eq!(hg.precision, gh.recall);
        prop_assert_eq!(hg.recall, gh.precision);
        prop_assert_eq!(hg.f1, gh.f1);
    }
}
