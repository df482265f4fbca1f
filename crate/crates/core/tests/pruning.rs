use ganprune_core::pruning::{
    apply_mask, build_mask, compute_group_scores, magnitude_mask, sparsity_of, Granularity, PruningMask, WeightTensor,
};
use proptest::prelude::*;

/// Sparsities as exact fractions, so the oracle never touches floats.
const FRACTIONS: [(usize, usize); 5] = [(0, 1), (1, 4), (1, 2), (3, 4), (9, 10)];

fn frac(f: (usize, usize)) -> f64 {
    f.0 as f64 / f.1 as f64
}

fn tensor() -> impl Strategy<Value = WeightTensor> {
    (1usize..6, 1usize..5, 1usize..4, 1usize..4).prop_flat_map(|(f, c, h, w)| {
        prop::collection::vec(-2.0f32..2.0, f * c * h * w)
            .prop_map(move |v| WeightTensor::new("layer", [f, c, h, w], v).unwrap())
    })
}

fn granularity() -> impl Strategy<Value = Granularity> {
    prop::sample::select(Granularity::ALL.to_vec())
}

fn group_bits(mask: &PruningMask) -> Vec<Vec<u8>> {
    let len = mask.granularity().group_len(mask.shape());
    mask.bits().chunks(len).map(<[u8]>::to_vec).collect()
}

#[test]
fn scores_worked_examples() {
    let w = WeightTensor::new("l", [2, 2, 1, 1], vec![0.1, -0.4, 0.05, 0.3]).unwrap();
    let e = compute_group_scores(&w, Granularity::Element).unwrap();
    let expected = [0.1, 0.4, 0.05, 0.3];
    for (a, b) in e.iter().zip(expected) {
        assert!((a - b).abs() < 1e-7);
    }
    let f = compute_group_scores(&w, Granularity::Filter).unwrap();
    assert!((f[0] - 0.5).abs() < 1e-7 && (f[1] - 0.35).abs() < 1e-7);

    let m = build_mask(&e, Granularity::Element, 0.5, [2, 2, 1, 1]).unwrap();
    assert_eq!(m.bits(), &[0, 1, 0, 1]);
    assert_eq!(sparsity_of(&m), 0.5);
}

#[test]
fn kernel_scores_match_slice_sums() {
    let mut rng = 7u64;
    let mut next = || {
        rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((rng >> 33) as f32 / (1u64 << 31) as f32) * 2.0 - 1.0
    };
    let values: Vec<f32> = (0..4 * 3 * 3 * 3).map(|_| next()).collect();
    let w = WeightTensor::new("l", [4, 3, 3, 3], values.clone()).unwrap();
    let scores = compute_group_scores(&w, Granularity::Kernel).unwrap();
    assert_eq!(scores.len(), 12);
    for f in 0..4 {
        for c in 0..3 {
            let mut s = 0.0f64;
            for y in 0..3 {
                for x in 0..3 {
                    s += values[((f * 3 + c) * 3 + y) * 3 + x].abs() as f64;
                }
            }
            assert!((scores[f * 3 + c] - s).abs() < 1e-9);
        }
    }
}

#[test]
fn filter_mask_matches_sort_oracle() {
    let values: Vec<f32> = (0..8 * 4 * 3 * 3).map(|i| (((i * 7919) % 97) as f32 - 48.0) / 50.0).collect();
    let w = WeightTensor::new("l", [8, 4, 3, 3], values.clone()).unwrap();
    let mask = magnitude_mask(&w, Granularity::Filter, 0.75).unwrap();
    let norms: Vec<f64> = values.chunks(36).map(|c| c.iter().map(|v| v.abs() as f64).sum()).collect();
    let mut idx: Vec<usize> = (0..8).collect();
    idx.sort_by(|&a, &b| norms[a].partial_cmp(&norms[b]).unwrap().then(a.cmp(&b)));
    let mut expected: Vec<usize> = idx[..6].to_vec();
    expected.sort();
    assert_eq!(mask.pruned_groups(), expected);
}

#[test]
fn small_examples() {
    let w = WeightTensor::new("l", [2, 1, 1, 1], vec![1.0, 2.0]).unwrap();
    let m = PruningMask::from_bits([2, 1, 1, 1], Granularity::Element, vec![1, 0]).unwrap();
    assert_eq!(apply_mask(&w, &m).unwrap().values(), &[1.0, 0.0]);
    let ones = PruningMask::ones([2, 1, 1, 1], Granularity::Element);
    assert_eq!(apply_mask(&w, &ones).unwrap(), w);
    assert_eq!(sparsity_of(&ones), 0.0);

    let bits: Vec<u8> = (0..1000u32).map(|i| (i.wrapping_mul(2654435761) >> 31) as u8).collect();
    let zeros = bits.iter().filter(|b| **b == 0).count();
    let m = PruningMask::from_bits([10, 10, 10, 1], Granularity::Element, bits).unwrap();
    assert_eq!(sparsity_of(&m), zeros as f64 / 1000.0);
}

#[test]
fn ties_prune_lower_index_first() {
    let m = build_mask(&[1.0, 1.0, 1.0, 1.0], Granularity::Element, 0.5, [4, 1, 1, 1]).unwrap();
    assert_eq!(m.bits(), &[0, 0, 1, 1]);
}

#[test]
fn rejects_bad_inputs() {
    assert!(WeightTensor::new("l", [0, 1, 1, 1], vec![]).is_err());
    assert!(WeightTensor::new("l", [1, 1, 1, 1], vec![f32::NAN]).is_err());
    assert!(build_mask(&[1.0], Granularity::Element, 1.5, [1, 1, 1, 1]).is_err());
    assert!(build_mask(&[1.0, 2.0], Granularity::Element, 0.5, [1, 1, 1, 1]).is_err());
    assert!(PruningMask::from_bits([2, 1, 1, 1], Granularity::Filter, vec![1, 2]).is_err());
    let w = WeightTensor::new("l", [2, 1, 1, 1], vec![1.0, 2.0]).unwrap();
    let m = PruningMask::ones([1, 2, 1, 1], Granularity::Element);
    assert!(apply_mask(&w, &m).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn exact_zero_group_counts(w in tensor(), g in granularity(), fi in 0usize..5) {
        let f = FRACTIONS[fi];
        let m = magnitude_mask(&w, g, frac(f)).unwrap();
        let groups = g.group_count(w.shape());
        let expected = groups * f.0 / f.1;
        prop_assert_eq!(m.pruned_groups().len(), expected);
        let len = g.group_len(w.shape());
        prop_assert_eq!(m.zero_count(), expected * len);
        prop_assert_eq!(m.sparsity(), m.zero_count() as f64 / m.len() as f64);
    }

    #[test]
    fn groups_are_uniform(w in tensor(), g in granularity(), fi in 0usize..5) {
        let m = magnitude_mask(&w, g, frac(FRACTIONS[fi])).unwrap();
        for group in group_bits(&m) {
            prop_assert!(group.iter().all(|b| *b == group[0]));
        }
    }

    #[test]
    fn apply_is_idempotent(w in tensor(), g in granularity(), fi in 0usize..5) {
        let m = magnitude_mask(&w, g, frac(FRACTIONS[fi])).unwrap();
        let once = apply_mask(&w, &m).unwrap();
        let twice = apply_mask(&once, &m).unwrap();
        let a: Vec<u32> = once.values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = twice.values().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn pruned_sets_grow_with_sparsity(w in tensor(), g in granularity(), i in 0usize..5, j in 0usize..5) {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let a = magnitude_mask(&w, g, frac(FRACTIONS[lo])).unwrap().pruned_groups();
        let b = magnitude_mask(&w, g, frac(FRACTIONS[hi])).unwrap().pruned_groups();
        prop_assert!(a.iter().all(|x| b.contains(x)));
    }

    #[test]
    fn filter_masks_follow_filter_permutations(w in tensor(), fi in 0usize..5, rot in 0usize..6) {
        let [f, ..] = w.shape();
        let len = Granularity::Filter.group_len(w.shape());
        let rot = rot % f;
        // Distinct norms keep tie-breaking out of the picture.
        let values: Vec<f32> = w.values().chunks(len).enumerate()
            .flat_map(|(i, c)| c.iter().map(move |v| v + (i as f32 + 1.0) * 10.0))
            .collect();
        let base = WeightTensor::new("l", w.shape(), values.clone()).unwrap();
        let perm: Vec<usize> = (0..f).map(|i| (i + rot) % f).collect();
        let permuted: Vec<f32> = perm.iter().flat_map(|&p| values[p * len..(p + 1) * len].to_vec()).collect();
        let pw = WeightTensor::new("l", w.shape(), permuted).unwrap();
        let s = frac(FRACTIONS[fi]);
        let m = group_bits(&magnitude_mask(&base, Granularity::Filter, s).unwrap());
        let pm = group_bits(&magnitude_mask(&pw, Granularity::Filter, s).unwrap());
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(&pm[i], &m[p]);
        }
    }

    #[test]
    fn zero_sparsity_keeps_everything(w in tensor(), g in granularity()) {
        let m = magnitude_mask(&w, g, 0.0).unwrap();
        prop_assert_eq!(m.zero_count(), 0);
        prop_assert_eq!(apply_mask(&w, &m).unwrap(), w);
    }
}
