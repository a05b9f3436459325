use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Language-specific normalization settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Canonical composition and whitespace collapse only.
    #[default]
    Generic,
    /// Generic plus lowercasing.
    Latin,
    /// Generic plus removal of zero-width joiners and folding of the
    /// danda variants used interchangeably in Brahmic scripts.
    Indic,
}

fn fold_char(profile: Profile, c: char, out: &mut String) {
    match profile {
        Profile::Generic => out.push(c),
        Profile::Latin => out.extend(c.to_lowercase()),
        Profile::Indic => match c {
            '\u{200C}' | '\u{200D}' => {}
            // double danda and the Latin pipe both fold to the single danda
            '\u{0965}' | '|' => out.push('\u{0964}'),
            _ => out.push(c),
        },
    }
}

/// NFC composition, profile folding, then whitespace collapse. Idempotent.
pub fn normalize(text: &str, profile: Profile) -> String {
    let composed: String = text.nfc().collect();
    let mut folded = String::with_capacity(composed.len());
    for c in composed.chars() {
        fold_char(profile, c, &mut folded);
    }
    let recomposed: String = folded.nfc().collect();
    recomposed.split_whitespace().collect::<Vec<_>>().join(" ")
}
