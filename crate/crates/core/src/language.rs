use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The ten supported source languages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageId {
    Java,
    Javascript,
    Python,
    Ruby,
    Rust,
    Go,
    Csharp,
    Cpp,
    C,
    Php,
}

/// How far extraction support for a language has been validated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportLevel {
    Full,
    Staged,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown language `{0}`")]
pub struct UnknownLanguage(pub String);

impl LanguageId {
    pub const ALL: [LanguageId; 10] = [
        LanguageId::Java,
        LanguageId::Javascript,
        LanguageId::Python,
        LanguageId::Ruby,
        LanguageId::Rust,
        LanguageId::Go,
        LanguageId::Csharp,
        LanguageId::Cpp,
        LanguageId::C,
        LanguageId::Php,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LanguageId::Java => "java",
            LanguageId::Javascript => "javascript",
            LanguageId::Python => "python",
            LanguageId::Ruby => "ruby",
            LanguageId::Rust => "rust",
            LanguageId::Go => "go",
            LanguageId::Csharp => "csharp",
            LanguageId::Cpp => "cpp",
            LanguageId::C => "c",
            LanguageId::Php => "php",
        }
    }

    /// File extensions (without the dot) owned by this language.
    pub fn extensions(self) -> &'static [&'static str] {
        match self {
            LanguageId::Java => &["java"],
            LanguageId::Javascript => &["js", "mjs", "cjs", "jsx"],
            LanguageId::Python => &["py", "pyi"],
            LanguageId::Ruby => &["rb"],
            LanguageId::Rust => &["rs"],
            LanguageId::Go => &["go"],
            LanguageId::Csharp => &["cs"],
            LanguageId::Cpp => &["cpp", "cc", "cxx", "hpp", "hh", "hxx"],
            LanguageId::C => &["c", "h"],
            LanguageId::Php => &["php"],
        }
    }

    /// Languages with full extraction support.
    pub const CORE: [LanguageId; 6] = [
        LanguageId::Python,
        LanguageId::Java,
        LanguageId::Javascript,
        LanguageId::Ruby,
        LanguageId::Go,
        LanguageId::Php,
    ];

    /// Full for the languages with golden-fixture coverage.
    pub fn support(self) -> SupportLevel {
        match self {
            LanguageId::Python
            | LanguageId::Java
            | LanguageId::Javascript
            | LanguageId::Ruby
            | LanguageId::Go
            | LanguageId::Php => SupportLevel::Full,
            _ => SupportLevel::Staged,
        }
    }

    pub fn from_extension(ext: &str) -> Option<LanguageId> {
        let ext = ext.to_ascii_lowercase();
        LanguageId::ALL
            .into_iter()
            .find(|lang| lang.extensions().contains(&ext.as_str()))
    }

    pub fn from_path(path: &Path) -> Option<LanguageId> {
        path.extension()
            .and_then(|e| e.to_str())
            .and_then(LanguageId::from_extension)
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LanguageId {
    type Err = UnknownLanguage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let lang = match lower.as_str() {
            "java" => LanguageId::Java,
            "javascript" | "js" => LanguageId::Javascript,
            "python" | "py" => LanguageId::Python,
            "ruby" | "rb" => LanguageId::Ruby,
            "rust" | "rs" => LanguageId::Rust,
            "go" | "golang" => LanguageId::Go,
            "csharp" | "c#" | "cs" => LanguageId::Csharp,
            "cpp" | "c++" => LanguageId::Cpp,
            "c" => LanguageId::C,
            "php" => LanguageId::Php,
            _ => return Err(UnknownLanguage(s.to_string())),
        };
        Ok(lang)
    }
}
