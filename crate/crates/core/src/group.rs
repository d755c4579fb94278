use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// A grouping of slices that can act as contrastive positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupType {
    /// Adjacent slices of the same volume (|index difference| <= 1).
    Slice,
    Volume,
    Patient,
}

impl GroupType {
    /// Canonical order; also the companion order inside an anchor tuple.
    pub const ALL: [GroupType; 3] = [GroupType::Slice, GroupType::Volume, GroupType::Patient];

    pub fn name(self) -> &'static str {
        match self {
            GroupType::Slice => "slice",
            GroupType::Volume => "volume",
            GroupType::Patient => "patient",
        }
    }
}

impl fmt::Display for GroupType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GroupType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "slice" | "adjacent" => Ok(GroupType::Slice),
            "volume" => Ok(GroupType::Volume),
            "patient" => Ok(GroupType::Patient),
            other => Err(Error::Config(format!("unknown group `{other}`"))),
        }
    }
}

/// Set of enabled group types.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupSet {
    pub slice: bool,
    pub volume: bool,
    pub patient: bool,
}

impl GroupSet {
    pub const NONE: GroupSet = GroupSet {
        slice: false,
        volume: false,
        patient: false,
    };

    pub const ALL: GroupSet = GroupSet {
        slice: true,
        volume: true,
        patient: true,
    };

    pub fn contains(&self, g: GroupType) -> bool {
        match g {
            GroupType::Slice => self.slice,
            GroupType::Volume => self.volume,
            GroupType::Patient => self.patient,
        }
    }

    pub fn insert(&mut self, g: GroupType) {
        match g {
            GroupType::Slice => self.slice = true,
            GroupType::Volume => self.volume = true,
            GroupType::Patient => self.patient = true,
        }
    }

    pub fn iter(self) -> impl Iterator<Item = GroupType> {
        GroupType::ALL.into_iter().filter(move |g| self.contains(*g))
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FromIterator<GroupType> for GroupSet {
    fn from_iter<I: IntoIterator<Item = GroupType>>(iter: I) -> Self {
        let mut set = GroupSet::NONE;
        for g in iter {
            set.insert(g);
        }
        set
    }
}

impl fmt::Display for GroupSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(GroupType::name).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for GroupSet {
    type Err = Error;

    /// Comma separated names; empty string or `none` is the empty set.
    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(GroupSet::NONE);
        }
        s.split(',').map(|p| p.trim().parse()).collect()
    }
}
