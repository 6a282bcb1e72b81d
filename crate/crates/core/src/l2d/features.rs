use serde::{Deserialize, Serialize};

use crate::linalg::Vector;

/// Keyword table; feature 0 is the constant bias slot, feature `i + 1`
/// indicates keyword `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    keywords: Vec<String>,
}

impl Vocabulary {
    pub fn new<I, S>(keywords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<String> = Vec::new();
        for kw in keywords {
            let kw = kw.as_ref().to_lowercase();
            if !kw.is_empty() && !out.contains(&kw) {
                out.push(kw);
            }
        }
        Vocabulary { keywords: out }
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    /// Feature dimension including the bias slot.
    pub fn dim(&self) -> usize {
        self.keywords.len() + 1
    }

    pub fn index_of(&self, keyword: &str) -> Option<usize> {
        self.keywords.iter().position(|k| k == keyword).map(|i| i + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextFeatures {
    pub phi: Vector,
    pub context_id: String,
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
}

/// Stable identifier of a context string (64-bit FNV-1a, hex).
pub fn context_id(text: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{hash:016x}")
}

/// Bag-of-keywords indicator plus bias, scaled to unit norm.
pub fn featurize(context: &str, vocabulary: &Vocabulary) -> ContextFeatures {
    let mut phi = Vector::zeros(vocabulary.dim());
    phi[0] = 1.0;
    for token in tokens(context) {
        if let Some(i) = vocabulary.index_of(&token) {
            phi[i] = 1.0;
        }
    }
    let norm = phi.norm();
    phi /= norm;
    ContextFeatures { phi, context_id: context_id(context) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(["wind", "northeast", "calm"])
    }

    #[test]
    fn empty_text_is_bias_only() {
        let f = featurize("", &vocab());
        assert_eq!(f.phi.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn one_keyword_two_coordinates() {
        let f = featurize("Quite CALM today.", &vocab());
        let h = 1.0 / 2f64.sqrt();
        assert_eq!(f.phi.iter().filter(|v| **v != 0.0).count(), 2);
        assert!((f.phi[0] - h).abs() < 1e-15 && (f.phi[3] - h).abs() < 1e-15);
        assert!((f.phi.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fixture_sentence() {
        // bias, wind, northeast present; repeated words count once → 1/√3 each
        let f = featurize("Strong wind toward the northeast; wind expected in 2 steps", &vocab());
        let c = 1.0 / 3f64.sqrt();
        let expected = [c, c, c, 0.0];
        for (a, b) in f.phi.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_ids() {
        assert_eq!(context_id("abc"), context_id("abc"));
        assert_ne!(context_id("abc"), context_id("abd"));
        assert_eq!(context_id(""), "cbf29ce484222325");
    }
}
