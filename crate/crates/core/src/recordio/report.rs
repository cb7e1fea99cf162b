use super::{LabelSet, LabelVocabulary};

/// Lower-case, trim and collapse internal whitespace.
pub fn normalize_phrase(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Split a `|`-delimited diagnosis string and match each phrase against
/// the vocabulary. Phrases that do not match are returned (normalized).
pub fn parse_report(text: &str, vocab: &LabelVocabulary) -> (LabelSet, Vec<String>) {
    let mut labels = LabelSet::new();
    let mut unknown = Vec::new();
    for phrase in text.split('|') {
        let norm = normalize_phrase(phrase);
        if norm.is_empty() {
            continue;
        }
        match vocab.index_of(&norm) {
            Some(i) => labels.insert(i, vocab.len()).expect("index from vocabulary"),
            None => unknown.push(norm),
        }
    }
    (labels, unknown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> LabelVocabulary {
        LabelVocabulary::new([
            "normal sinus rhythm",
            "premature ventricular complexes",
            "sinus rhythm",
            "premature ectopic complexes",
        ])
        .unwrap()
    }

    #[test]
    fn two_known_phrases() {
        let v = vocab();
        let (l, unk) = parse_report("normal sinus rhythm | premature ventricular complexes", &v);
        assert_eq!(l.iter().collect::<Vec<_>>(), vec![0, 1]);
        assert!(unk.is_empty());
    }

    #[test]
    fn empty_report() {
        let (l, unk) = parse_report("", &vocab());
        assert!(l.is_empty() && unk.is_empty());
    }

    #[test]
    fn normalization_and_unknowns() {
        let v = LabelVocabulary::new(["sinus rhythm"]).unwrap();
        let (l, unk) = parse_report("SINUS  Rhythm | zebra pattern", &v);
        assert_eq!(l.iter().collect::<Vec<_>>(), vec![0]);
        assert_eq!(unk, vec!["zebra pattern".to_string()]);
    }

    proptest! {
        #[test]
        fn joined_phrases_recover_their_indices(
            picks in proptest::collection::vec(0usize..4, 0..6),
            upper in any::<bool>(),
        ) {
            let v = vocab();
            let phrases: Vec<String> = picks
                .iter()
                .map(|&i| {
                    let p = v.name(i).unwrap().replace(' ', "   ");
                    if upper { p.to_uppercase() } else { p }
                })
                .collect();
            let (l, unk) = parse_report(&phrases.join(" | "), &v);
            let mut want: Vec<usize> = picks.clone();
            want.sort();
            want.dedup();
            prop_assert_eq!(l.iter().collect::<Vec<_>>(), want);
            prop_assert!(unk.is_empty());
        }
    }
}
