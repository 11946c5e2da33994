//! Hand-crafted feature extraction and label encoding for the latent model.

use crate::domain::{pair_makes, Puzzle, Solution};

/// Pair targets counted by the features: the four small and four large
/// category values, ascending.
pub const TARGETS: [i64; 8] = [1, 2, 3, 4, 6, 8, 12, 24];

pub const FEATURE_DIM: usize = 40;
pub const INPUT_DIM: usize = 44;
pub const LABEL_DIM: usize = 20;

/// For each target: how many of the six unordered position pairs can make it
/// (global), and how many pairs involving each position can make it
/// (per position). Every achieving pair adds 1 to the global count and 1 to
/// both of its positions, so per-position counts sum to twice the global one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    pub global: [u32; 8],
    pub per_position: [[u32; 8]; 4],
}

impl FeatureVector {
    /// Flat 40-value layout: 8 global counts, then 8 per position 1..4.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(FEATURE_DIM);
        out.extend(self.global.iter().map(|&c| c as f64));
        for row in &self.per_position {
            out.extend(row.iter().map(|&c| c as f64));
        }
        out
    }
}

pub fn extract_features(p: &Puzzle) -> FeatureVector {
    let n = p.numbers();
    let mut global = [0u32; 8];
    let mut per_position = [[0u32; 8]; 4];
    for i in 0..4 {
        for j in (i + 1)..4 {
            for (t, &target) in TARGETS.iter().enumerate() {
                if pair_makes(n[i], n[j], target) {
                    global[t] += 1;
                    per_position[i][t] += 1;
                    per_position[j][t] += 1;
                }
            }
        }
    }
    FeatureVector {
        global,
        per_position,
    }
}

/// Model input: the four puzzle numbers scaled by 1/13 followed by the 40
/// feature counts scaled by 1/6 (six pairs bound every count).
pub fn model_input(p: &Puzzle, f: &FeatureVector) -> Vec<f64> {
    let mut out = Vec::with_capacity(INPUT_DIM);
    out.extend(p.numbers().iter().map(|&n| n as f64 / 13.0));
    out.extend(f.to_vec().iter().map(|c| c / 6.0));
    out
}

/// 20-bit multi-label target: four batches of five bits in category batch
/// order. Bit 1 of a batch marks the category, bits 2..5 mark the positions
/// supplying the large value, OR-ed across solutions of the same category.
pub fn encode_labels(solutions: &[Solution]) -> [f64; LABEL_DIM] {
    let mut bits = [0.0; LABEL_DIM];
    for sol in solutions {
        let base = sol.category.batch_index() * 5;
        bits[base] = 1.0;
        bits[base + sol.large_positions.0 as usize] = 1.0;
        bits[base + sol.large_positions.1 as usize] = 1.0;
    }
    bits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{solve_restricted, Puzzle};

    fn puzzle(nums: [i64; 4]) -> Puzzle {
        Puzzle::new(nums).unwrap()
    }

    #[test]
    fn features_for_4_5_9_10() {
        let f = extract_features(&puzzle([4, 5, 9, 10]));
        // target 1: only 5 - 4 and 10 - 9
        assert_eq!(f.global[0], 2);
        assert_eq!(f.per_position[0][0], 1);
        assert_eq!(f.per_position[1][0], 1);
        assert_eq!(f.per_position[2][0], 1);
        assert_eq!(f.per_position[3][0], 1);
    }

    #[test]
    fn features_for_all_ones() {
        let f = extract_features(&puzzle([1, 1, 1, 1]));
        // every pair makes 1 (1 * 1) and 2 (1 + 1); nothing makes 3
        assert_eq!(f.global[0], 6);
        assert_eq!(f.global[1], 6);
        assert_eq!(f.global[2], 0);
        for pos in 0..4 {
            assert_eq!(f.per_position[pos][0], 3);
        }
    }

    #[test]
    fn per_position_counts_sum_to_twice_global() {
        for nums in [[4, 5, 9, 10], [1, 3, 6, 7], [13, 13, 13, 13], [2, 2, 7, 11]] {
            let f = extract_features(&puzzle(nums));
            for t in 0..8 {
                let sum: u32 = (0..4).map(|p| f.per_position[p][t]).sum();
                assert_eq!(sum, 2 * f.global[t], "target {}", TARGETS[t]);
            }
        }
    }

    #[test]
    fn model_input_layout_and_range() {
        let p = puzzle([4, 5, 9, 10]);
        let f = extract_features(&p);
        let input = model_input(&p, &f);
        assert_eq!(input.len(), INPUT_DIM);
        assert_eq!(input[0], 4.0 / 13.0);
        assert_eq!(input[3], 10.0 / 13.0);
        assert_eq!(input[4], f.global[0] as f64 / 6.0);
        assert!(input.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn labels_for_1_3_6_7() {
        let sols = solve_restricted(&puzzle([1, 3, 6, 7]));
        let bits = encode_labels(&sols);
        // {3,8} solution with large positions (1,4)
        assert_eq!(&bits[10..15], &[1.0, 1.0, 0.0, 0.0, 1.0]);
        // {4,6} solution with large positions (1,3)
        assert_eq!(&bits[15..20], &[1.0, 1.0, 0.0, 1.0, 0.0]);
        // no {1,24} or {2,12} solutions
        assert_eq!(&bits[0..10], &[0.0; 10]);
    }

    #[test]
    fn labels_or_across_same_category() {
        let sols = solve_restricted(&puzzle([1, 1, 2, 7]));
        let bits = encode_labels(&sols);
        // two {3,8} records at positions (1,4) and (2,4)
        assert_eq!(&bits[10..15], &[1.0, 1.0, 1.0, 0.0, 1.0]);
    }
}
