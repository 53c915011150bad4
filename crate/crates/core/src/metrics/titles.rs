//! Title normalization used wherever free-text titles are compared.

use serde::{Deserialize, Serialize};

use crate::persona::strip_year;

/// How strictly two titles must agree.
///
/// `Strict` keeps the `(YYYY)` release year; `Lenient` drops it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TitleMode {
    #[default]
    Strict,
    Lenient,
}

impl std::str::FromStr for TitleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(TitleMode::Strict),
            "lenient" => Ok(TitleMode::Lenient),
            other => Err(format!("unknown title mode `{other}` (strict|lenient)")),
        }
    }
}

/// Lowercase, collapse internal whitespace, trim; lenient mode also strips
/// a trailing year parenthetical.
pub fn normalize_title(title: &str, mode: TitleMode) -> String {
    let collapsed = title.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    match mode {
        TitleMode::Strict => collapsed,
        TitleMode::Lenient => strip_year(&collapsed).to_string(),
    }
}

pub fn titles_match(a: &str, b: &str, mode: TitleMode) -> bool {
    normalize_title(a, mode) == normalize_title(b, mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(
            normalize_title("  Good   Will Hunting (1997) ", TitleMode::Strict),
            "good will hunting (1997)"
        );
        assert_eq!(
            normalize_title("Good Will Hunting (1997)", TitleMode::Lenient),
            "good will hunting"
        );
        assert!(titles_match("HEAT (1995)", "heat  (1995)", TitleMode::Strict));
        assert!(!titles_match("Heat", "Heat (1995)", TitleMode::Strict));
        assert!(titles_match("Heat", "Heat (1995)", TitleMode::Lenient));
    }
}
