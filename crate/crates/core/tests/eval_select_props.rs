use std::collections::BTreeSet;

use miaod_core::activeloop::{k_center_greedy, select_top, topk_mean, PoolState};
use miaod_core::detector::{build_anchors, compute_iou, BBox};
use miaod_core::eval::{average_precision, match_detections, tp_count, DetectionRecord, GroundTruth};
use miaod_core::synthdata::ImageSample;
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = BBox> {
    (0u8..6, 0u8..6, 0u8..2).prop_map(|(x, y, s)| {
        let (x, y) = (x as f64 * 6.0, y as f64 * 6.0);
        let side = 8.0 + s as f64 * 4.0;
        BBox::new(x, y, x + side, y + side)
    })
}

fn scene() -> impl Strategy<Value = (Vec<DetectionRecord>, Vec<GroundTruth>)> {
    let det = (0u8..2, 0usize..2, bbox(), 0.0f64..1.0)
        .prop_map(|(img, class, bbox, score)| DetectionRecord { image_id: format!("i{img}"), class, bbox, score });
    let gt = (0u8..2, 0usize..2, bbox()).prop_map(|(img, class, bbox)| GroundTruth { image_id: format!("i{img}"), class, bbox });
    (prop::collection::vec(det, 0..12), prop::collection::vec(gt, 0..6))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ap_is_a_probability((dets, gts) in scene()) {
        let ap = average_precision(&dets, &gts, 0.5);
        prop_assert!((0.0..=1.0).contains(&ap), "ap {ap}");
    }

    #[test]
    fn removing_a_false_positive_never_lowers_ap(
        (dets, gts) in scene(),
        hit_scores in prop::collection::vec(0.0f64..1.0, 6),
        pick in any::<prop::sample::Index>(),
    ) {
        let gts: Vec<GroundTruth> = gts.into_iter().filter(|g| g.class == 0).collect();
        // Exact copies of the ground truth make duplicates, hence false positives, common.
        let mut same_class: Vec<DetectionRecord> = dets.iter().filter(|d| d.class == 0).cloned().collect();
        for _ in 0..2 {
            same_class.extend(gts.iter().zip(&hit_scores).map(|(g, &score)| DetectionRecord {
                image_id: g.image_id.clone(),
                class: 0,
                bbox: g.bbox,
                score,
            }));
        }
        let mut order: Vec<usize> = (0..same_class.len()).collect();
        order.sort_by(|&a, &b| same_class[b].score.total_cmp(&same_class[a].score));
        let flags = match_detections(&same_class, &gts, 0.5);
        let fps: Vec<usize> = order.iter().zip(&flags).filter(|(_, &f)| !f).map(|(&i, _)| i).collect();
        prop_assume!(!fps.is_empty());
        let mut fewer = same_class.clone();
        fewer.remove(fps[pick.index(fps.len())]);
        prop_assert!(average_precision(&fewer, &gts, 0.5) >= average_precision(&same_class, &gts, 0.5));
    }

    #[test]
    fn matcher_claims_each_ground_truth_at_most_once((dets, gts) in scene()) {
        for class in 0..2 {
            let d: Vec<DetectionRecord> = dets.iter().filter(|x| x.class == class).cloned().collect();
            let g: Vec<GroundTruth> = gts.iter().filter(|x| x.class == class).cloned().collect();
            let matched = match_detections(&d, &g, 0.5).iter().filter(|&&f| f).count();
            prop_assert!(matched <= d.len().min(g.len()));
            // Each match needs a distinct ground truth of that image at IoU >= 0.5.
            let mut order: Vec<usize> = (0..d.len()).collect();
            order.sort_by(|&a, &b| d[b].score.total_cmp(&d[a].score));
            for (&i, f) in order.iter().zip(match_detections(&d, &g, 0.5)) {
                if f {
                    prop_assert!(g.iter().any(|gt| gt.image_id == d[i].image_id && compute_iou(&gt.bbox, &d[i].bbox) >= 0.5));
                }
            }
        }
    }

    #[test]
    fn tp_count_matches_a_recount(
        u in prop::collection::vec(0.0f64..1.0, 192),
        boxes in prop::collection::vec(bbox(), 0..3),
        k in 1usize..40,
    ) {
        let grid = build_anchors(64, 8, &[8.0, 12.0, 16.0]).unwrap();
        let image = ImageSample {
            id: "x".into(),
            size: 64,
            pixels: vec![0.0; 64 * 64],
            gt_classes: vec![0; boxes.len()],
            gt_boxes: boxes.clone(),
            image_labels: vec![0.0],
        };
        let mut ranked: Vec<(f64, usize)> = u.iter().enumerate().map(|(i, &v)| (-v, i)).collect();
        ranked.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let recount = ranked[..k]
            .iter()
            .filter(|(_, i)| boxes.iter().any(|g| compute_iou(&grid.anchors[*i].bbox(), g) >= 0.5))
            .count();
        prop_assert_eq!(tp_count(&u, &grid, &image, k), recount);
    }

    #[test]
    fn topk_extremes_are_max_and_mean(u in prop::collection::vec(0.0f64..2.0, 1..50)) {
        let max = u.iter().copied().fold(0.0, f64::max);
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        prop_assert_eq!(topk_mean(&u, 1).to_bits(), max.to_bits());
        prop_assert_eq!(topk_mean(&u, u.len()).to_bits(), mean.to_bits());
        prop_assert!(topk_mean(&u, 2) <= max);
    }

    #[test]
    fn pool_stays_a_partition(n in 2usize..40, picks in prop::collection::vec(any::<prop::sample::Index>(), 1..10)) {
        let ids: Vec<String> = (0..n).map(|i| format!("{i:04}")).collect();
        let mut pool = PoolState {
            labeled: BTreeSet::new(),
            unlabeled: ids.iter().cloned().collect(),
            cycle: 0,
            history: Vec::new(),
        };
        for p in picks {
            let remaining: Vec<String> = pool.unlabeled.iter().cloned().collect();
            if remaining.is_empty() {
                break;
            }
            let id = remaining[p.index(remaining.len())].clone();
            pool.label(std::slice::from_ref(&id)).unwrap();
            prop_assert!(pool.label(&[id]).is_err());
            prop_assert!(pool.labeled.is_disjoint(&pool.unlabeled));
            let all: BTreeSet<String> = pool.labeled.union(&pool.unlabeled).cloned().collect();
            prop_assert_eq!(all.len(), n);
        }
    }

    #[test]
    fn selections_are_distinct_and_sized(
        scores in prop::collection::vec(0.0f64..1.0, 1..30),
        m in 0usize..40,
    ) {
        let ids: Vec<String> = (0..scores.len()).map(|i| format!("{i:03}")).collect();
        let chosen = select_top(&ids, &scores, m);
        prop_assert_eq!(chosen.len(), m.min(ids.len()));
        let set: BTreeSet<&String> = chosen.iter().collect();
        prop_assert_eq!(set.len(), chosen.len());
        let worst_in = chosen.iter().map(|id| scores[id.parse::<usize>().unwrap()]).fold(f64::INFINITY, f64::min);
        for (id, &s) in ids.iter().zip(&scores) {
            if !chosen.contains(id) {
                prop_assert!(s <= worst_in);
            }
        }

        let pts: Vec<Vec<f64>> = scores.iter().map(|&s| vec![s, s * s]).collect();
        let centers = k_center_greedy(&pts, &[], m);
        let uniq: BTreeSet<usize> = centers.iter().copied().collect();
        prop_assert_eq!(uniq.len(), centers.len());
        prop_assert_eq!(centers.len(), m.min(pts.len()));
    }
}
