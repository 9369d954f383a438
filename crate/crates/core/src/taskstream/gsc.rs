use std::path::{Path, PathBuf};

use super::{assemble, partition_keywords, ClipSource, StreamConfig, StreamSource, TaskStream};
use crate::error::{Error, Result};

fn hidden(name: &str) -> bool {
    name.starts_with('_') || name.starts_with('.')
}

/// Keyword folders under `root`, sorted; `_background_noise_` and dot
/// folders are skipped.
pub fn list_keywords(root: &Path) -> Result<Vec<String>> {
    let entries =
        std::fs::read_dir(root).map_err(|e| Error::Corpus(format!("{}: {e}", root.display())))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.file_type()?.is_dir() && !hidden(&name) {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn list_clips(root: &Path, keyword: &str) -> Result<Vec<(String, ClipSource)>> {
    let mut files: Vec<String> = std::fs::read_dir(root.join(keyword))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| !hidden(n) && n.to_ascii_lowercase().ends_with(".wav"))
        .collect();
    files.sort();
    Ok(files
        .into_iter()
        .map(|f| {
            let rel = format!("{keyword}/{f}");
            let source = ClipSource::Wav {
                path: PathBuf::from(&rel),
            };
            (rel, source)
        })
        .collect())
}

/// Builds the stream from a `<root>/<keyword>/<clip>.wav` corpus. Clips are
/// decoded lazily, so an unreadable file is reported when it is loaded.
pub fn split_gsc(root: &Path, seed: u64, cfg: &StreamConfig) -> Result<TaskStream> {
    let names = list_keywords(root)?;
    let groups = partition_keywords(&names, seed, cfg)?;
    let tasks = assemble(&groups, seed, cfg, |kw| list_clips(root, kw))?;
    Ok(TaskStream {
        seed,
        source: StreamSource::Gsc {
            root: root.to_path_buf(),
        },
        config: cfg.clone(),
        tasks,
    })
}
