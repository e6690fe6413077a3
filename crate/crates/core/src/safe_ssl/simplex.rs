use crate::scalar::Real;

/// Euclidean projection onto the probability simplex (sort and threshold).
///
/// Points already on the simplex up to rounding come back unchanged, so the map is exactly
/// idempotent.
pub fn project_simplex<F: Real>(v: &[F]) -> Vec<F> {
    if v.is_empty() {
        return Vec::new();
    }
    let total: F = v.iter().copied().sum();
    let slack = F::from_usize_lossy(v.len()) * F::epsilon();
    if v.iter().all(|&x| x >= F::zero()) && (total - F::one()).abs() <= slack {
        return v.to_vec();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite input"));
    let mut cumsum = F::zero();
    let mut theta = F::zero();
    for (j, &s) in sorted.iter().enumerate() {
        cumsum = cumsum + s;
        let t = (cumsum - F::one()) / F::from_usize_lossy(j + 1);
        if s - t > F::zero() {
            theta = t;
        }
    }
    let mut out: Vec<F> = v.iter().map(|&x| (x - theta).max(F::zero())).collect();
    // Push the rounding residual into the largest entry so the output passes the check above.
    for _ in 0..3 {
        let total: F = out.iter().copied().sum();
        if (total - F::one()).abs() <= slack {
            break;
        }
        let i = (0..out.len()).fold(0, |b, j| if out[j] > out[b] { j } else { b });
        out[i] = (out[i] - (total - F::one())).max(F::zero());
    }
    out
}
