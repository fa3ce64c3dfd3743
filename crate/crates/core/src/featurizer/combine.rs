/// Unit-length copy, or `None` for an all-zero vector.
pub fn l2_normalize(v: &[f32]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|&x| (x as f64 / norm) as f32).collect())
}

/// Weighted mean of unit vectors (whole image at `whole_weight`, each crop at
/// 1), re-normalized. Inputs are expected to be normalized already; `None` if
/// the mean cancels to zero.
pub fn combine_normalized(whole: &[f32], crops: &[Vec<f32>], whole_weight: f32) -> Option<Vec<f32>> {
    let mut acc: Vec<f64> = whole.iter().map(|&x| x as f64 * whole_weight as f64).collect();
    for c in crops {
        debug_assert_eq!(c.len(), acc.len());
        for (a, &x) in acc.iter_mut().zip(c) {
            *a += x as f64;
        }
    }
    let total = whole_weight as f64 + crops.len() as f64;
    let mean: Vec<f32> = acc.iter().map(|a| (a / total) as f32).collect();
    l2_normalize(&mean)
}
