//! Unicode helpers shared by ingestion, filtering and the baseline scorer.

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Canonical composed form (NFC) applied to every transcript at ingestion.
pub fn canonicalize(text: &str) -> String {
    text.nfc().collect()
}

/// Case and diacritic folding: decompose, drop combining marks, lowercase.
///
/// `"¿Aprobarás?"` folds to `"¿aprobaras?"`. Folding is idempotent.
pub fn fold(text: &str) -> String {
    text.nfd()
        .filter(|c| !is_combining_mark(*c))
        .flat_map(char::to_lowercase)
        .collect()
}

/// Splits already-folded text into alphanumeric word tokens.
pub fn words(folded: &str) -> impl Iterator<Item = &str> {
    folded.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty())
}
