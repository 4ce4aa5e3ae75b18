//! Modality tags and modality subsets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five per-subject input types. Declaration order is the fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityKind {
    Radiomics,
    StructuralConnectome,
    FunctionalConnectome,
    ImageVolume,
    Clinical,
}

impl ModalityKind {
    pub const ALL: [ModalityKind; 5] = [
        ModalityKind::Radiomics,
        ModalityKind::StructuralConnectome,
        ModalityKind::FunctionalConnectome,
        ModalityKind::ImageVolume,
        ModalityKind::Clinical,
    ];

    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            ModalityKind::Radiomics => "radiomics",
            ModalityKind::StructuralConnectome => "structural_connectome",
            ModalityKind::FunctionalConnectome => "functional_connectome",
            ModalityKind::ImageVolume => "image_volume",
            ModalityKind::Clinical => "clinical",
        }
    }

    /// Radiomics and the two connectomes go through a self-attention encoder.
    pub fn uses_attention(self) -> bool {
        matches!(
            self,
            ModalityKind::Radiomics
                | ModalityKind::StructuralConnectome
                | ModalityKind::FunctionalConnectome
        )
    }
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.tag())
    }
}

impl FromStr for ModalityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModalityKind::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::Contract(format!("unknown modality tag {s:?}")))
    }
}

/// A non-empty subset of modalities, iterated in fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModalitySet(u8);

impl ModalitySet {
    pub fn all() -> Self {
        ModalitySet(0b11111)
    }

    pub fn only(kind: ModalityKind) -> Self {
        ModalitySet(1 << kind.index())
    }

    pub fn without(kind: ModalityKind) -> Self {
        ModalitySet(0b11111 & !(1 << kind.index()))
    }

    pub fn from_kinds(kinds: &[ModalityKind]) -> Result<Self> {
        let bits = kinds.iter().fold(0u8, |acc, k| acc | (1 << k.index()));
        if bits == 0 {
            return Err(Error::Contract("modality set must not be empty".into()));
        }
        Ok(ModalitySet(bits))
    }

    pub fn contains(self, kind: ModalityKind) -> bool {
        self.0 & (1 << kind.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ModalityKind> {
        ModalityKind::ALL.into_iter().filter(move |k| self.contains(*k))
    }

    pub fn kinds(self) -> Vec<ModalityKind> {
        self.iter().collect()
    }

    /// Ordered modality pairs entering the pair kernel.
    ///
    /// With two or more modalities this is every ordered pair `(u, v)` with
    /// `u != v` (20 for the full set, 12 with one modality dropped). A single
    /// modality has no cross pairs, so it is compared with itself: `[(u, u)]`.
    pub fn pairs(self) -> Vec<(ModalityKind, ModalityKind)> {
        let kinds = self.kinds();
        if kinds.len() == 1 {
            return vec![(kinds[0], kinds[0])];
        }
        let mut out = Vec::with_capacity(kinds.len() * (kinds.len() - 1));
        for &u in &kinds {
            for &v in &kinds {
                if u != v {
                    out.push((u, v));
                }
            }
        }
        out
    }
}

impl Default for ModalitySet {
    fn default() -> Self {
        ModalitySet::all()
    }
}

impl Serialize for ModalitySet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.kinds().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModalitySet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let kinds = Vec::<ModalityKind>::deserialize(d)?;
        ModalitySet::from_kinds(&kinds).map_err(serde::de::Error::custom)
    }
}
