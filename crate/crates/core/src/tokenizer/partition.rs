use std::collections::hash_map::Entry;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::marker::{canonicalize, MarkerConvention};
use super::vocab::{TokenId, Vocabulary};

/// How token strings are compared across vocabularies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// Raw string equality.
    Exact,
    /// Source pieces are rewritten into the target marker convention first.
    #[default]
    Canonical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedToken {
    pub token: String,
    pub source_id: TokenId,
    pub target_id: TokenId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NovelToken {
    pub token: String,
    pub target_id: TokenId,
}

/// Two source tokens that canonicalize to the same target string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionWarning {
    pub canonical: String,
    pub kept_source_id: TokenId,
    pub dropped_source_id: TokenId,
}

/// Target vocabulary split into tokens shared with the source and novel ones.
///
/// Both lists are in ascending target-id order and together cover every
/// target id exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenPartition {
    pub mode: MatchMode,
    pub source_marker: MarkerConvention,
    pub target_marker: MarkerConvention,
    pub source_size: usize,
    pub target_size: usize,
    pub shared: Vec<SharedToken>,
    pub novel: Vec<NovelToken>,
    #[serde(default)]
    pub warnings: Vec<PartitionWarning>,
}

impl TokenPartition {
    pub fn shared_count(&self) -> usize {
        self.shared.len()
    }

    pub fn novel_count(&self) -> usize {
        self.novel.len()
    }

    /// Checks the coverage invariant and that all ids fit the stated sizes.
    pub fn check(&self) -> Result<(), String> {
        let mut seen = vec![false; self.target_size];
        let targets = self
            .shared
            .iter()
            .map(|s| s.target_id)
            .chain(self.novel.iter().map(|n| n.target_id));
        for id in targets {
            let slot = seen
                .get_mut(id as usize)
                .ok_or_else(|| format!("target id {id} outside [0, {})", self.target_size))?;
            if std::mem::replace(slot, true) {
                return Err(format!("target id {id} appears twice"));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(format!("target id {missing} is neither shared nor novel"));
        }
        if let Some(s) = self.shared.iter().find(|s| s.source_id as usize >= self.source_size) {
            return Err(format!("source id {} outside [0, {})", s.source_id, self.source_size));
        }
        Ok(())
    }
}

/// Splits `target` into tokens found in `source` and tokens that are not.
///
/// In canonical mode every source piece is rewritten into the target
/// convention; when several source pieces land on the same string the
/// lowest source id is kept and the collision is recorded.
pub fn partition(
    source: &Vocabulary,
    target: &Vocabulary,
    source_marker: MarkerConvention,
    target_marker: MarkerConvention,
    mode: MatchMode,
) -> TokenPartition {
    let mut warnings = Vec::new();
    let lookup: HashMap<String, TokenId> = match mode {
        MatchMode::Exact => source.iter().map(|(id, t)| (t.to_owned(), id)).collect(),
        MatchMode::Canonical => {
            let mut map = HashMap::with_capacity(source.len());
            for (id, token) in source.iter() {
                let key = canonicalize(token, source_marker, target_marker);
                match map.entry(key) {
                    Entry::Vacant(v) => {
                        v.insert(id);
                    }
                    Entry::Occupied(o) => {
                        log::warn!(
                            "source tokens {} and {id} both canonicalize to {:?}; keeping {}",
                            o.get(),
                            o.key(),
                            o.get()
                        );
                        warnings.push(PartitionWarning {
                            canonical: o.key().clone(),
                            kept_source_id: *o.get(),
                            dropped_source_id: id,
                        });
                    }
                }
            }
            map
        }
    };

    let mut shared = Vec::new();
    let mut novel = Vec::new();
    for (target_id, token) in target.iter() {
        match lookup.get(token) {
            Some(&source_id) => shared.push(SharedToken { token: token.to_owned(), source_id, target_id }),
            None => novel.push(NovelToken { token: token.to_owned(), target_id }),
        }
    }

    TokenPartition {
        mode,
        source_marker,
        target_marker,
        source_size: source.len(),
        target_size: target.len(),
        shared,
        novel,
        warnings,
    }
}
