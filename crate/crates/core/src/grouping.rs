use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Many-to-one remapping of original class labels, with optional drops.
///
/// On disk (TOML) and over the wire (JSON) a grouping looks like:
///
/// ```toml
/// name = "riders-merged"
/// drop = ["sign"]
///
/// [mapping]
/// rider = "rider"
/// motor = "rider"
/// bike = "rider"
/// car = "car"
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassGrouping {
    pub name: String,
    #[serde(default)]
    pub mapping: BTreeMap<String, String>,
    #[serde(default)]
    pub drop: BTreeSet<String>,
}

pub const IDENTITY: &str = "identity";

impl ClassGrouping {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            mapping: BTreeMap::new(),
            drop: BTreeSet::new(),
        }
    }

    /// Every class maps to itself.
    pub fn identity<I, S>(classes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut g = Self::new(IDENTITY);
        for c in classes {
            let c = c.into();
            g.mapping.insert(c.clone(), c);
        }
        g
    }

    pub fn merge(mut self, original: impl Into<String>, grouped: impl Into<String>) -> Self {
        self.mapping.insert(original.into(), grouped.into());
        self
    }

    pub fn dropping(mut self, original: impl Into<String>) -> Self {
        self.drop.insert(original.into());
        self
    }

    /// Grouped label for an original class; `Ok(None)` when the class is dropped.
    pub fn target(&self, original: &str) -> Result<Option<&str>> {
        if let Some(g) = self.mapping.get(original) {
            return Ok(Some(g.as_str()));
        }
        if self.drop.contains(original) {
            return Ok(None);
        }
        Err(Error::UnknownClass(original.to_string()))
    }

    /// Distinct grouped labels, sorted.
    pub fn groups(&self) -> BTreeSet<&str> {
        self.mapping.values().map(String::as_str).collect()
    }

    /// Internal consistency: no class both mapped and dropped, no empty labels,
    /// at least two grouped classes.
    pub fn check(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::input("grouping.name: must not be empty"));
        }
        for (orig, grouped) in &self.mapping {
            if orig.is_empty() || grouped.is_empty() {
                return Err(Error::input(format!(
                    "grouping.mapping: empty class label in `{orig}` -> `{grouped}`"
                )));
            }
            if self.drop.contains(orig) {
                return Err(Error::input(format!(
                    "grouping: class `{orig}` is both mapped and dropped"
                )));
            }
        }
        let k = self.groups().len();
        if k < 2 {
            return Err(Error::input(format!(
                "grouping `{}` yields {k} grouped class(es); at least 2 are required",
                self.name
            )));
        }
        Ok(())
    }

    /// Checks the grouping against the classes actually present in a dataset:
    /// every present class must be mentioned, and nothing unknown may be referenced.
    pub fn check_against<'a, I>(&self, present: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a str>,
    {
        self.check()?;
        let present: BTreeSet<&str> = present.into_iter().collect();
        for orig in self.mapping.keys().chain(self.drop.iter()) {
            if !present.contains(orig.as_str()) {
                return Err(Error::UnknownClass(orig.clone()));
            }
        }
        for c in &present {
            if self.target(c).is_err() {
                return Err(Error::input(format!(
                    "grouping `{}` does not mention class `{c}`",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_maps_to_self() {
        let g = ClassGrouping::identity(["a", "b"]);
        assert_eq!(g.target("a").unwrap(), Some("a"));
        assert_eq!(g.groups().len(), 2);
        g.check_against(["a", "b"]).unwrap();
    }

    #[test]
    fn drop_and_merge() {
        let g = ClassGrouping::new("g")
            .merge("rider", "rider")
            .merge("bike", "rider")
            .merge("car", "car")
            .dropping("sign");
        assert_eq!(g.target("bike").unwrap(), Some("rider"));
        assert_eq!(g.target("sign").unwrap(), None);
        assert!(matches!(g.target("truck"), Err(Error::UnknownClass(_))));
        g.check_against(["rider", "bike", "car", "sign"]).unwrap();
    }

    #[test]
    fn rejects_single_group() {
        let g = ClassGrouping::new("g").merge("a", "x").merge("b", "x");
        assert!(g.check().is_err());
    }

    #[test]
    fn rejects_unmentioned_and_unknown() {
        let g = ClassGrouping::identity(["a", "b"]);
        assert!(g.check_against(["a", "b", "c"]).is_err());
        assert!(matches!(
            g.check_against(["a"]),
            Err(Error::UnknownClass(c)) if c == "b"
        ));
    }

    #[test]
    fn rejects_mapped_and_dropped() {
        let g = ClassGrouping::identity(["a", "b", "c"]).dropping("a");
        assert!(g.check().is_err());
    }

    #[test]
    fn toml_shape() {
        let g: ClassGrouping = toml::from_str(
            "name = \"m\"\ndrop = [\"c\"]\n[mapping]\na = \"x\"\nb = \"y\"\n",
        )
        .unwrap();
        assert_eq!(g.target("c").unwrap(), None);
        assert_eq!(g.groups().into_iter().collect::<Vec<_>>(), vec!["x", "y"]);
    }
}
