use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::SourceFile;
use crate::LanguageId;

/// Directory names skipped by default when walking a source tree.
pub const DEFAULT_DENY_LIST: &[&str] = &[
    "node_modules",
    "vendor",
    "target",
    "build",
    "dist",
    "__pycache__",
    "venv",
    "third_party",
];

#[derive(Debug, Clone)]
pub struct ScanOptions {
    pub languages: BTreeSet<LanguageId>,
    pub deny_list: Vec<String>,
    pub skip_hidden: bool,
}

impl ScanOptions {
    pub fn new(languages: impl IntoIterator<Item = LanguageId>) -> Self {
        ScanOptions {
            languages: languages.into_iter().collect(),
            deny_list: DEFAULT_DENY_LIST.iter().map(|s| s.to_string()).collect(),
            skip_hidden: true,
        }
    }

    pub fn all_languages() -> Self {
        ScanOptions::new(LanguageId::ALL)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: not valid UTF-8")]
    InvalidUtf8 { path: PathBuf },
}

#[derive(Debug, Default)]
pub struct ScanOutput {
    pub files: Vec<SourceFile>,
    /// Per-file failures; these never abort the scan.
    pub errors: Vec<ScanError>,
}

/// Collect source files under `root` whose extension maps to one of the
/// requested languages, ordered by relative path.
///
/// A `root` that is itself a file is returned on its own if it matches.
pub fn scan_tree(root: &Path, options: &ScanOptions) -> Result<ScanOutput, ScanError> {
    let meta = fs::metadata(root).map_err(|source| ScanError::Io {
        path: root.to_path_buf(),
        source,
    })?;

    let mut candidates: Vec<(PathBuf, LanguageId)> = Vec::new();
    let mut out = ScanOutput::default();

    if meta.is_file() {
        if let Some(lang) = LanguageId::from_path(root).filter(|l| options.languages.contains(l)) {
            candidates.push((root.to_path_buf(), lang));
        }
    } else {
        let walker = WalkDir::new(root).follow_links(false).into_iter().filter_entry(|entry| {
            if entry.depth() == 0 {
                return true;
            }
            let name = entry.file_name().to_string_lossy();
            if options.skip_hidden && name.starts_with('.') {
                return false;
            }
            !(entry.file_type().is_dir() && options.deny_list.iter().any(|d| d == name.as_ref()))
        });
        for entry in walker {
            let entry = match entry {
                Ok(e) => e,
                Err(err) => {
                    let path = err.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
                    out.errors.push(ScanError::Io {
                        path,
                        source: err.into(),
                    });
                    continue;
                }
            };
            if !entry.file_type().is_file() {
                continue;
            }
            if let Some(lang) = LanguageId::from_path(entry.path()).filter(|l| options.languages.contains(l)) {
                candidates.push((entry.into_path(), lang));
            }
        }
        candidates.sort_by(|a, b| {
            let ra = a.0.strip_prefix(root).unwrap_or(&a.0);
            let rb = b.0.strip_prefix(root).unwrap_or(&b.0);
            ra.cmp(rb)
        });
    }

    for (path, language) in candidates {
        match fs::read(&path) {
            Ok(bytes) => match String::from_utf8(bytes) {
                Ok(text) => out.files.push(SourceFile { path, language, text }),
                Err(_) => out.errors.push(ScanError::InvalidUtf8 { path }),
            },
            Err(source) => out.errors.push(ScanError::Io { path, source }),
        }
    }
    Ok(out)
}
