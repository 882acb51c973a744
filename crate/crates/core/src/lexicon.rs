//! Word lists for instruction parsing and challenge scoring.

use serde::{Deserialize, Serialize};
use std::path::Path;

const BUNDLED: &str = include_str!("../data/lexicons.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Verb,
    Region,
    Object,
    Door,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub verbs: Vec<String>,
    pub regions: Vec<String>,
    pub objects: Vec<String>,
    pub door_terms: Vec<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        serde_json::from_str(BUNDLED).expect("bundled lexicon is valid")
    }
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn matches_at(tokens: &[String], i: usize, entry: &str) -> Option<usize> {
    let words: Vec<&str> = entry.split_whitespace().collect();
    if words.is_empty() || i + words.len() > tokens.len() {
        return None;
    }
    words
        .iter()
        .zip(&tokens[i..])
        .all(|(w, t)| *w == t)
        .then_some(words.len())
}

impl Lexicon {
    pub fn load(path: &Path) -> std::io::Result<Lexicon> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    fn list(&self, cat: Category) -> &[String] {
        match cat {
            Category::Verb => &self.verbs,
            Category::Region => &self.regions,
            Category::Object => &self.objects,
            Category::Door => &self.door_terms,
        }
    }

    /// Longest entry of `cat` starting at token `i`: (entry, word count).
    pub fn longest_at(&self, tokens: &[String], i: usize, cat: Category) -> Option<(&str, usize)> {
        self.list(cat)
            .iter()
            .filter_map(|e| matches_at(tokens, i, e).map(|n| (e.as_str(), n)))
            .max_by_key(|&(_, n)| n)
    }

    /// Earliest (then longest) entry of `cat` in the token list.
    pub fn first_in(&self, tokens: &[String], cat: Category) -> Option<(usize, &str, usize)> {
        (0..tokens.len()).find_map(|i| self.longest_at(tokens, i, cat).map(|(e, n)| (i, e, n)))
    }

    /// Longest landmark (region, object or door term) starting at token `i`.
    pub fn landmark_at(&self, tokens: &[String], i: usize) -> Option<(Category, usize)> {
        [Category::Region, Category::Door, Category::Object]
            .into_iter()
            .filter_map(|c| self.longest_at(tokens, i, c).map(|(_, n)| (c, n)))
            .max_by_key(|&(_, n)| n)
    }

    pub fn is_region(&self, label: &str) -> bool {
        self.regions.iter().any(|r| r.eq_ignore_ascii_case(label))
    }

    pub fn is_door_term(&self, label: &str) -> bool {
        self.door_terms.iter().any(|r| r.eq_ignore_ascii_case(label))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_lexicon_loads() {
        let lx = Lexicon::default();
        assert!(lx.is_region("living room"));
        assert!(lx.is_door_term("door"));
        assert!(!lx.is_region("sofa"));
    }

    #[test]
    fn longest_multiword_match() {
        let lx = Lexicon::default();
        let t = tokenize("Go through the door, then walk into the Living-Room.");
        assert_eq!(lx.longest_at(&t, 0, Category::Verb), Some(("go through", 2)));
        let (i, e, _) = lx.first_in(&t, Category::Region).unwrap();
        assert_eq!((i, e), (8, "living room"));
        assert_eq!(lx.landmark_at(&t, 3), Some((Category::Door, 1)));
    }
}
