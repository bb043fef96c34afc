//! Independent Wilcoxon signed-rank oracle.

/// Brute-force sign-flip oracle: mid-ranks by pairwise counting, then all
/// 2^n assignments. Returns (W+, W−, two-sided p).
pub fn brute_force(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| d.abs() > 1e-9)
        .collect();
    let n = d.len();
    let rank = |i: usize| {
        let less = d.iter().filter(|x| x.abs() < d[i].abs() - 1e-9).count() as f64;
        let equal = d
            .iter()
            .filter(|x| (x.abs() - d[i].abs()).abs() <= 1e-9)
            .count() as f64;
        less + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = (0..n).map(rank).collect();
    let wp: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
    let wm: f64 = (0..n).filter(|&i| d[i] < 0.0).map(|i| ranks[i]).sum();
    let w = wp.min(wm);
    let mut at_most = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n)
            .filter(|&i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        if s <= w + 1e-9 {
            at_most += 1;
        }
    }
    (wp, wm, (2.0 * at_most as f64 / (1u64 << n) as f64).min(1.0))
}
