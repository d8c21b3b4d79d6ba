use std::collections::HashMap;

use super::ClusterError;

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `I(a;b) / sqrt(H(a) H(b))` with natural logs.
///
/// Two single-cluster labelings score 1; if exactly one side has zero
/// entropy the score is 0.
pub fn nmi<A, B>(a: &[A], b: &[B]) -> Result<f64, ClusterError>
where
    A: Copy + Eq + std::hash::Hash,
    B: Copy + Eq + std::hash::Hash,
{
    if a.len() != b.len() {
        return Err(ClusterError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(ClusterError::Empty);
    }
    let n = a.len() as f64;
    let mut ca: HashMap<A, usize> = HashMap::new();
    let mut cb: HashMap<B, usize> = HashMap::new();
    let mut joint: HashMap<(A, B), usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    match (ca.len() == 1, cb.len() == 1) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let pxy = c as f64 / n;
        let px = ca[&x] as f64 / n;
        let py = cb[&y] as f64 / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}
