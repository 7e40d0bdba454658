mod common;

use common::oracle::deviations;

#[test]
fn forward_pass_matches_straight_line_oracle() {
    for seed in 1..=5 {
        for (label, diff) in deviations(seed) {
            assert!(diff < 1e-12, "seed {seed} {label}: {diff:e}");
        }
    }
}
