use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{ArticTree, PartNode};
use crate::error::{Error, Result};

pub const FORMAT: &str = "artic/1";

#[derive(Serialize)]
struct DocRef<'a> {
    format: &'static str,
    nodes: &'a [PartNode],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    format: String,
    nodes: Vec<PartNode>,
}

impl Serialize for ArticTree {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DocRef {
            format: FORMAT,
            nodes: &self.nodes,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ArticTree {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = Doc::deserialize(d)?;
        if doc.format != FORMAT {
            return Err(D::Error::custom(format!("unsupported format `{}`, expected `{FORMAT}`", doc.format)));
        }
        Ok(ArticTree { nodes: doc.nodes })
    }
}

/// Pretty-printed JSON. Floats use the shortest representation that parses
/// back to the same bits, so the round trip is exact.
pub fn to_json(tree: &ArticTree) -> String {
    serde_json::to_string_pretty(tree).expect("tree serialization is infallible")
}

/// Parses JSON, reporting the offending field path and line/column.
pub fn from_json(text: &str) -> Result<ArticTree> {
    parse_with_path(text)
}

pub(crate) fn parse_with_path<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        Error::Parse {
            path: if path == "." { String::new() } else { path },
            msg: e.into_inner().to_string(),
        }
    })?;
    de.end()?;
    Ok(value)
}
