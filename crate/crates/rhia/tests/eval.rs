mod common;

use rhia::corpus::Bag;
use rhia::eval::{self, bag_retention, report_from_scores, Retention};
use rhia_core::hierarchy::RelationHierarchy;
use rhia_core::metrics::BagScores;

#[test]
fn retention_drops_single_sentence_bags_and_subsamples() {
    let f = common::fixture(4);
    let multi: Vec<&Bag> = f.test.bags.iter().filter(|b| b.instances.len() > 1).collect();
    assert!(!multi.is_empty());
    for (mode, keep) in [(Retention::One, Some(1)), (Retention::Two, Some(2)), (Retention::All, None)] {
        let kept = bag_retention(&f.test.bags, mode, 5);
        assert_eq!(kept.len(), multi.len());
        for (k, b) in kept.iter().zip(&multi) {
            assert_eq!((&k.head, &k.tail, &k.relations), (&b.head, &b.tail, &b.relations));
            assert_eq!(k.instances.len(), keep.unwrap_or(b.instances.len()));
            let mut pos = 0;
            for inst in &k.instances {
                let at = b.instances[pos..].iter().position(|x| x == inst).expect("kept sentence from the bag");
                pos += at + 1;
            }
        }
        assert_eq!(kept, bag_retention(&f.test.bags, mode, 5));
    }
}

#[test]
fn scoring_is_independent_of_thread_count() {
    let f = common::fixture(4);
    let m = common::small_model::<f32>(&f, &common::small_settings(), 1);
    let refs: Vec<&Bag> = f.test.bags.iter().chain(&f.train.bags).collect();
    let one = eval::predict_bags(&m, &refs, 1).unwrap();
    let three = eval::predict_bags(&m, &refs, 3).unwrap();
    assert_eq!(one, three);
}

#[test]
fn hand_ranking_reaches_the_report() {
    let h = RelationHierarchy::new(["/a/b/c", "/a/b/d"], 3).unwrap();
    let c = h.relation_id("/a/b/c").unwrap();
    let d = h.relation_id("/a/b/d").unwrap();
    let mk = |bag, pc: f64, pd: f64, gold: Vec<usize>| {
        let mut probs = vec![0.0; 3];
        probs[c] = pc;
        probs[d] = pd;
        probs[h.na_id()] = 1.0 - pc - pd;
        BagScores { bag, probs, gold }
    };
    // ranked list c(0.6) ✓, d(0.3) ✗, d(0.2) ✓ ; two positives
    let scores = vec![mk(0, 0.6, 0.05, vec![c]), mk(1, 0.1, 0.3, vec![h.na_id()]), mk(2, 0.01, 0.2, vec![d])];
    let r = report_from_scores(&scores, &h, &[10, 10, 10], None).unwrap();
    assert_eq!(r.facts, 2);
    assert!((r.pr.auc - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12, "{}", r.pr.auc);
    assert!((r.pr.max_f1 - 0.8).abs() < 1e-12);
}

#[test]
fn report_has_every_section() {
    let f = common::fixture(4);
    let m = common::small_model::<f32>(&f, &common::small_settings(), 1);
    let r = eval::evaluate(&m, &f.test.bags, &f.hierarchy, &f.train.stats.relation_counts, None, 1).unwrap();
    let text = r.render();
    for s in ["[summary]", "[pr]", "[precision_at_n]", "[hits_at_k <100]", "[hits_at_k <200]"] {
        assert!(text.contains(s), "missing {s}\n{text}");
    }
    assert!(text.contains("retention\tfull"));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pr.tsv");
    eval::write_pr(&p, &r.pr).unwrap();
    let lines = std::fs::read_to_string(&p).unwrap();
    assert_eq!(lines.lines().count(), r.pr.points.len());
    assert!(lines.lines().all(|l| l.split('\t').count() == 2));
}

#[test]
fn attention_trace_lists_three_relations_per_level() {
    let f = common::fixture(4);
    let m = common::small_model::<f32>(&f, &common::small_settings(), 1);
    let bag = &f.test.bags[0];
    let p = eval::predict_bags(&m, &[bag], 1).unwrap();
    let t = eval::attention_trace(&p[0], bag, &f.hierarchy);
    let level_lines: Vec<&str> = t.lines().filter(|l| l.trim_start().starts_with("level")).collect();
    assert_eq!(level_lines.len(), 3 * bag.instances.len());
    for l in level_lines {
        let shown = l.split('\t').count() - 1;
        assert!(shown == 3 || shown < 3, "{l}");
    }
}
