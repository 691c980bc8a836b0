use serde::{Deserialize, Serialize};

/// Stock code ↔ integer index over the training universe. Index `len()` is
/// reserved for codes outside the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CodeVocabulary {
    codes: Vec<String>,
}

impl CodeVocabulary {
    pub fn new<S: AsRef<str>>(codes: impl IntoIterator<Item = S>) -> Self {
        let mut codes: Vec<String> = codes.into_iter().map(|c| c.as_ref().to_string()).collect();
        codes.sort();
        codes.dedup();
        Self { codes }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn oov_index(&self) -> usize {
        self.codes.len()
    }

    pub fn get(&self, code: &str) -> Option<usize> {
        self.codes.binary_search_by(|c| c.as_str().cmp(code)).ok()
    }

    /// Index of `code`, or the reserved index when unseen.
    pub fn index(&self, code: &str) -> usize {
        self.get(code).unwrap_or(self.oov_index())
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bijective_with_oov() {
        let v = CodeVocabulary::new(["B", "A", "C", "A"]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.index("A"), 0);
        assert_eq!(v.index("C"), 2);
        assert_eq!(v.index("Z"), 3);
        for (i, c) in v.codes().iter().enumerate() {
            assert_eq!(v.index(c), i);
        }
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<CodeVocabulary>(&json).unwrap(), v);
    }
}
