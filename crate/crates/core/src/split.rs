//! Location-aware dataset splits.
//!
//! Fractions are exact rationals, so "a third of 90 locations" is 30 with no
//! floating point rounding in the way. All randomness comes from a ChaCha8
//! stream seeded by the caller; inputs are sorted before shuffling so the
//! result does not depend on input order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{compare_location_ids, ImageRecord, SplitTag};

pub type Fraction = Ratio<u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScheme {
    WctLocation,
    SafariFirstX,
    ProvidedCisTrans,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub scheme: SplitScheme,
    pub test_location_fraction: Fraction,
    pub dev_train_fraction: Fraction,
    pub x: usize,
    pub seed: u64,
    /// Split the development images per class instead of globally.
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            scheme: SplitScheme::WctLocation,
            test_location_fraction: Fraction::new(1, 3),
            dev_train_fraction: Fraction::new(4, 5),
            x: 0,
            seed: 0,
            stratified: false,
        }
    }
}

/// Parses `"1/3"`, `"0.8"` or `"1"` into an exact fraction.
pub fn parse_fraction(raw: &str) -> Result<Fraction> {
    let raw = raw.trim();
    let bad = || Error::invalid(format!("cannot parse fraction {raw:?}"));
    if let Some((num, den)) = raw.split_once('/') {
        let num: u64 = num.trim().parse().map_err(|_| bad())?;
        let den: u64 = den.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(bad());
        }
        return Ok(Fraction::new(num, den));
    }
    let (int, frac) = raw.split_once('.').unwrap_or((raw, ""));
    if frac.len() > 18 || !frac.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let int: u64 = if int.is_empty() {
        0
    } else {
        int.parse().map_err(|_| bad())?
    };
    let den = 10u64.pow(frac.len() as u32);
    let frac: u64 = if frac.is_empty() {
        0
    } else {
        frac.parse().map_err(|_| bad())?
    };
    Ok(Fraction::new(int * den + frac, den))
}

fn check_open_unit(name: &str, f: Fraction) -> Result<()> {
    if *f.numer() == 0 || f >= Fraction::from_integer(1) {
        return Err(Error::invalid(format!(
            "{name} must lie strictly between 0 and 1, got {f}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    /// Training images; doubles as the retrieval database.
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitRole::Train => "train",
            SplitRole::Val => "val",
            SplitRole::Test => "test",
        })
    }
}

impl FromStr for SplitRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" | "database" => Ok(SplitRole::Train),
            "val" => Ok(SplitRole::Val),
            "test" => Ok(SplitRole::Test),
            other => Err(Error::invalid(format!("unknown split role {other:?}"))),
        }
    }
}

/// Total, disjoint assignment of images to roles, ordered by image id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment(pub BTreeMap<String, SplitRole>);

impl SplitAssignment {
    pub fn role(&self, image_id: &str) -> Option<SplitRole> {
        self.0.get(image_id).copied()
    }

    pub fn count(&self, role: SplitRole) -> usize {
        self.0.values().filter(|r| **r == role).count()
    }

    pub fn ids_with(&self, role: SplitRole) -> impl Iterator<Item = &str> + '_ {
        self.0
            .iter()
            .filter(move |(_, r)| **r == role)
            .map(|(id, _)| id.as_str())
    }

    /// `image_id,split` CSV with a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::invalid(format!("writing split CSV: {e}"));
        w.write_record(["image_id", "split"]).map_err(io)?;
        for (id, role) in &self.0 {
            w.write_record([id.as_str(), &role.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io("split CSV", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R, source_name: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut map = BTreeMap::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(source_name, Some(i), e.to_string()))?;
            let (Some(id), Some(role)) = (rec.get(0), rec.get(1)) else {
                return Err(Error::parse(source_name, Some(i), "expected image_id,split"));
            };
            let role = role
                .parse()
                .map_err(|e: Error| Error::parse(source_name, Some(i), e.to_string()))?;
            if map.insert(id.to_string(), role).is_some() {
                return Err(Error::parse(source_name, Some(i), format!("duplicate image id {id:?}")));
            }
        }
        Ok(Self(map))
    }
}

fn sorted_locations(images: &[ImageRecord]) -> Result<Vec<String>> {
    let mut ids = HashSet::with_capacity(images.len());
    for img in images {
        if img.location_id.is_empty() {
            return Err(Error::invalid(format!("image {} has no location", img.image_id)));
        }
        if !ids.insert(img.image_id.as_str()) {
            return Err(Error::DuplicateKey(format!("image id {}", img.image_id)));
        }
    }
    let mut locations: Vec<String> = images
        .iter()
        .map(|i| i.location_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    locations.sort_by(|a, b| compare_location_ids(a, b));
    Ok(locations)
}

fn ceil_share(n: usize, f: Fraction) -> usize {
    let (num, den) = (*f.numer() as u128, *f.denom() as u128);
    (n as u128 * num).div_ceil(den) as usize
}

fn rounded_share(n: usize, f: Fraction) -> usize {
    let (num, den) = (*f.numer() as u128, *f.denom() as u128);
    ((2 * n as u128 * num + den) / (2 * den)) as usize
}

/// Holds out `ceil(L * test_location_fraction)` whole locations for testing and
/// splits the remaining images train/val by `dev_train_fraction`.
pub fn make_wct_split(images: &[ImageRecord], cfg: &SplitConfig) -> Result<SplitAssignment> {
    check_open_unit("test location fraction", cfg.test_location_fraction)?;
    check_open_unit("train fraction", cfg.dev_train_fraction)?;
    let mut locations = sorted_locations(images)?;
    if locations.len() < 3 {
        return Err(Error::invalid(format!(
            "a location split needs at least 3 locations, found {}",
            locations.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    locations.shuffle(&mut rng);
    let n_test = ceil_share(locations.len(), cfg.test_location_fraction);
    let test_locations: HashSet<&str> = locations[..n_test].iter().map(String::as_str).collect();

    let mut assignment = BTreeMap::new();
    let mut dev: Vec<&ImageRecord> = Vec::new();
    for img in images {
        if test_locations.contains(img.location_id.as_str()) {
            assignment.insert(img.image_id.clone(), SplitRole::Test);
        } else {
            dev.push(img);
        }
    }
    dev.sort_by(|a, b| a.image_id.cmp(&b.image_id));

    let pools: Vec<Vec<&ImageRecord>> = if cfg.stratified {
        let mut by_class: BTreeMap<Option<u32>, Vec<&ImageRecord>> = BTreeMap::new();
        for img in dev {
            by_class.entry(img.gt_label).or_default().push(img);
        }
        by_class.into_values().collect()
    } else {
        vec![dev]
    };
    for mut pool in pools {
        pool.shuffle(&mut rng);
        let n_train = rounded_share(pool.len(), cfg.dev_train_fraction);
        for (i, img) in pool.into_iter().enumerate() {
            let role = if i < n_train { SplitRole::Train } else { SplitRole::Val };
            assignment.insert(img.image_id.clone(), role);
        }
    }
    Ok(SplitAssignment(assignment))
}

/// Images of the `x` first locations (numeric-aware id order) form the
/// database; everything else is test.
pub fn make_safari_split(images: &[ImageRecord], x: usize) -> Result<SplitAssignment> {
    let locations = sorted_locations(images)?;
    if x > locations.len() {
        return Err(Error::invalid(format!(
            "x = {x} exceeds the {} available locations",
            locations.len()
        )));
    }
    let database: HashSet<&str> = locations[..x].iter().map(String::as_str).collect();
    Ok(SplitAssignment(
        images
            .iter()
            .map(|img| {
                let role = if database.contains(img.location_id.as_str()) {
                    SplitRole::Train
                } else {
                    SplitRole::Test
                };
                (img.image_id.clone(), role)
            })
            .collect(),
    ))
}

/// Uses split tags shipped with the dataset: tagged images are test, the rest train.
pub fn make_provided_split(images: &[ImageRecord]) -> SplitAssignment {
    SplitAssignment(
        images
            .iter()
            .map(|img| {
                let role = match img.split_tag {
                    Some(SplitTag::Cis) | Some(SplitTag::Trans) => SplitRole::Test,
                    _ => SplitRole::Train,
                };
                (img.image_id.clone(), role)
            })
            .collect(),
    )
}

pub fn make_split(images: &[ImageRecord], cfg: &SplitConfig) -> Result<SplitAssignment> {
    match cfg.scheme {
        SplitScheme::WctLocation => make_wct_split(images, cfg),
        SplitScheme::SafariFirstX => make_safari_split(images, cfg.x),
        SplitScheme::ProvidedCisTrans => Ok(make_provided_split(images)),
    }
}
