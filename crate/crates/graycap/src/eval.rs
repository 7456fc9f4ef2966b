//! Lexical caption scoring.

/// Token-multiset F1 of two texts under lowercase whitespace tokenization.
/// A cheap, deterministic stand-in for embedding-based caption scores;
/// symmetric and bounded in [0,1].
pub fn lexical_f1(candidate: &str, reference: &str) -> f64 {
    let tokens = |s: &str| -> Vec<String> {
        s.split_whitespace().map(|t| t.to_lowercase()).collect()
    };
    let cand = tokens(candidate);
    let mut rest = tokens(reference);
    if cand.is_empty() && rest.is_empty() {
        return 1.0;
    }
    if cand.is_empty() || rest.is_empty() {
        return 0.0;
    }
    let ref_len = rest.len();
    let mut overlap = 0usize;
    for token in &cand {
        if let Some(pos) = rest.iter().position(|r| r == token) {
            rest.swap_remove(pos);
            overlap += 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / cand.len() as f64;
    let recall = overlap as f64 / ref_len as f64;
    2.0 * precision * recall / (precision + recall)
}
