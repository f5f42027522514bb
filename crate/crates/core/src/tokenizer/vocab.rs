use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::TokenizerError;

pub type TokenId = u32;

/// Bijection between token strings and the contiguous id range `[0, len)`.
#[derive(Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from `(token, id)` entries in any order.
    pub fn from_entries<I>(entries: I) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = (String, TokenId)>,
    {
        let entries: Vec<(String, TokenId)> = entries.into_iter().collect();
        let n = entries.len();
        let mut slots: Vec<Option<String>> = vec![None; n];
        let mut index = HashMap::with_capacity(n);
        for (token, id) in entries {
            let slot = slots.get_mut(id as usize).ok_or_else(|| {
                TokenizerError::MalformedVocab(format!(
                    "id {id} for `{token}` is outside the contiguous range [0, {n})"
                ))
            })?;
            if slot.is_some() {
                return Err(TokenizerError::MalformedVocab(format!("duplicate id {id}")));
            }
            if index.insert(token.clone(), id).is_some() {
                return Err(TokenizerError::MalformedVocab(format!("duplicate token `{token}`")));
            }
            *slot = Some(token);
        }
        // n entries, n distinct ids all below n: every slot is filled.
        let tokens = slots.into_iter().map(|s| s.expect("filled slot")).collect();
        Ok(Self { tokens, index })
    }

    /// Tokens listed in id order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_entries(tokens.into_iter().enumerate().map(|(i, t)| (t.into(), i as TokenId)))
    }

    pub fn from_json_str(json: &str) -> Result<Self, TokenizerError> {
        let entries: VocabEntries = serde_json::from_str(json)
            .map_err(|e| TokenizerError::MalformedVocab(e.to_string()))?;
        Self::from_entries(entries.0)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TokenizerError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// `(id, token)` pairs in id order.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = (TokenId, &str)> + '_ {
        self.tokens.iter().enumerate().map(|(i, t)| (i as TokenId, t.as_str()))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("vocabulary serializes")
    }
}

impl fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vocabulary").field("len", &self.len()).finish()
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(self.len()))?;
        for (id, token) in self.iter() {
            map.serialize_entry(token, &id)?;
        }
        map.end()
    }
}

/// Raw JSON object entries, keeping duplicate keys so they can be rejected.
struct VocabEntries(Vec<(String, TokenId)>);

impl<'de> Deserialize<'de> for VocabEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = VocabEntries;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object mapping token strings to integer ids")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::with_capacity(map.size_hint().unwrap_or(0));
                while let Some((k, v)) = map.next_entry::<String, TokenId>()? {
                    out.push((k, v));
                }
                Ok(VocabEntries(out))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}
