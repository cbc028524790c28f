//! Interaction datasets: ingestion, dense id mapping, temporal splitting,
//! leave-last-out holdouts, rating-scale grouping and tensor construction.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use indexmap::IndexSet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One (user, item, rating, timestamp) event.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub rating: u32,
    pub timestamp: u64,
}

impl Interaction {
    pub fn new(user: impl Into<String>, item: impl Into<String>, rating: u32, timestamp: u64) -> Self {
        Self {
            user: user.into(),
            item: item.into(),
            rating,
            timestamp,
        }
    }
}

/// Ordered set of distinct native rating values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingScale {
    values: Vec<u32>,
}

impl RatingScale {
    pub fn new(values: Vec<u32>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidScale(format!(
                "need at least 2 values, got {}",
                values.len()
            )));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidScale(
                "values must be strictly ascending".to_string(),
            ));
        }
        Ok(Self { values })
    }

    /// The scale `1, 2, ..., k`.
    pub fn one_to(k: u32) -> Result<Self> {
        Self::new((1..=k).collect())
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    /// Zero-based position of `rating` on the scale.
    pub fn position(&self, rating: u32) -> Option<usize> {
        self.values.binary_search(&rating).ok()
    }
}

/// Bijection between external string ids and dense indices `0..len`,
/// assigned in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdIndex {
    ids: IndexSet<String>,
}

impl IdIndex {
    pub fn get(&self, id: &str) -> Option<usize> {
        self.ids.get_index_of(id)
    }

    pub fn id(&self, index: usize) -> Option<&str> {
        self.ids.get_index(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn insert(&mut self, id: &str) -> usize {
        match self.ids.get_index_of(id) {
            Some(i) => i,
            None => self.ids.insert_full(id.to_string()).0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    interactions: Vec<Interaction>,
    users: IdIndex,
    items: IdIndex,
    scale: RatingScale,
}

impl Dataset {
    /// Builds a dataset, checking every rating against `scale` and assigning
    /// dense ids in order of first appearance.
    pub fn new(interactions: Vec<Interaction>, scale: RatingScale) -> Result<Self> {
        let mut users = IdIndex::default();
        let mut items = IdIndex::default();
        for (row, it) in interactions.iter().enumerate() {
            if scale.position(it.rating).is_none() {
                return Err(Error::OffScale {
                    line: row + 1,
                    value: it.rating.to_string(),
                });
            }
            users.insert(&it.user);
            items.insert(&it.item);
        }
        Ok(Self {
            interactions,
            users,
            items,
            scale,
        })
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn users(&self) -> &IdIndex {
        &self.users
    }

    pub fn items(&self) -> &IdIndex {
        &self.items
    }

    pub fn scale(&self) -> &RatingScale {
        &self.scale
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Row indices sorted by `(timestamp, row)`.
    fn chronological_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.interactions.len()).collect();
        order.sort_by_key(|&r| (self.interactions[r].timestamp, r));
        order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    MovielensDat,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movielens-dat" | "dat" => Ok(Format::MovielensDat),
            "csv" => Ok(Format::Csv),
            other => Err(Error::InvalidConfig(format!("unknown format '{other}'"))),
        }
    }
}

pub fn ingest(path: impl AsRef<Path>, format: Format, scale: RatingScale) -> Result<Dataset> {
    let file = File::open(path)?;
    ingest_reader(file, format, scale)
}

pub fn ingest_reader<R: Read>(reader: R, format: Format, scale: RatingScale) -> Result<Dataset> {
    let rows = match format {
        Format::MovielensDat => parse_dat(reader, &scale)?,
        Format::Csv => parse_csv(reader, &scale)?,
    };
    Dataset::new(rows, scale)
}

fn parse_rating(field: &str, line: usize, scale: &RatingScale) -> Result<u32> {
    let rating: u32 = field.trim().parse().map_err(|_| Error::MalformedRow {
        line,
        reason: format!("rating '{}' is not a positive integer", field.trim()),
    })?;
    if scale.position(rating).is_none() {
        return Err(Error::OffScale {
            line,
            value: rating.to_string(),
        });
    }
    Ok(rating)
}

fn parse_timestamp(field: &str, line: usize) -> Result<u64> {
    field.trim().parse().map_err(|_| Error::MalformedRow {
        line,
        reason: format!("timestamp '{}' is not a non-negative integer", field.trim()),
    })
}

fn parse_dat<R: Read>(reader: R, scale: &RatingScale) -> Result<Vec<Interaction>> {
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() != 4 {
            return Err(Error::MalformedRow {
                line: line_no,
                reason: format!("expected 4 '::'-separated fields, found {}", fields.len()),
            });
        }
        let rating = parse_rating(fields[2], line_no, scale)?;
        let timestamp = parse_timestamp(fields[3], line_no)?;
        rows.push(Interaction::new(fields[0], fields[1], rating, timestamp));
    }
    Ok(rows)
}

fn parse_csv<R: Read>(reader: R, scale: &RatingScale) -> Result<Vec<Interaction>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let expected = ["user", "item", "rating", "timestamp"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::MalformedRow {
            line: 1,
            reason: format!("expected header 'user,item,rating,timestamp', found '{}'", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::MalformedRow {
                line,
                reason: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 4 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let rating = parse_rating(&record[2], line, scale)?;
        let timestamp = parse_timestamp(&record[3], line)?;
        rows.push(Interaction::new(&record[0], &record[1], rating, timestamp));
    }
    Ok(rows)
}

/// Holds out the `ceil(test_fraction * n)` most recent interactions. Ties on
/// timestamp go to the later row first. Both parts keep the input row order.
pub fn temporal_split(d: &Dataset, test_fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidFraction(test_fraction));
    }
    let n = d.len();
    // Guard against products like 0.7 * 10 = 7.000000000000001.
    let n_test = ((test_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let order = d.chronological_order();
    let mut is_test = vec![false; n];
    for &row in &order[n - n_test..] {
        is_test[row] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n - n_test), Vec::with_capacity(n_test));
    for (row, it) in d.interactions.iter().enumerate() {
        if is_test[row] {
            test.push(it.clone());
        } else {
            train.push(it.clone());
        }
    }
    Ok((
        Dataset::new(train, d.scale.clone())?,
        Dataset::new(test, d.scale.clone())?,
    ))
}

/// A held-out interaction together with its item's dense index in the
/// training dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutEntry {
    pub interaction: Interaction,
    pub item: usize,
}

impl HoldoutEntry {
    pub fn user(&self) -> &str {
        &self.interaction.user
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Validation,
    Test,
}

/// One user's folding-in history: `(train item index, rating position)`
/// pairs, one per item.
pub type History = Vec<(usize, usize)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitBundle {
    pub train: Dataset,
    pub validation_holdout: Vec<HoldoutEntry>,
    pub test_holdout: Vec<HoldoutEntry>,
    /// Test-period interactions other than each user's latest one.
    pub test_remainder: Dataset,
}

/// Builds validation and test holdouts from the test part: each user's latest
/// test interaction is the test holdout, the latest of the rest is the
/// validation holdout. Entries whose item never occurs in `train_part` are
/// dropped.
pub fn leave_last_out(test_part: &Dataset, train_part: &Dataset) -> Result<SplitBundle> {
    if test_part.is_empty() {
        return Err(Error::Empty("test part has no interactions".to_string()));
    }
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); test_part.n_users()];
    for row in test_part.chronological_order() {
        let u = test_part.users.get(&test_part.interactions[row].user).expect("indexed");
        per_user[u].push(row);
    }

    let mut held_rows = vec![false; test_part.len()];
    let mut test_holdout = Vec::new();
    let mut validation_holdout = Vec::new();
    let to_entry = |row: usize| -> Option<HoldoutEntry> {
        let it = &test_part.interactions[row];
        train_part.items.get(&it.item).map(|item| HoldoutEntry {
            interaction: it.clone(),
            item,
        })
    };
    for rows in &per_user {
        let Some((&last, rest)) = rows.split_last() else {
            continue;
        };
        held_rows[last] = true;
        test_holdout.extend(to_entry(last));
        if let Some(&prev) = rest.last() {
            validation_holdout.extend(to_entry(prev));
        }
    }

    let remainder = test_part
        .interactions
        .iter()
        .zip(&held_rows)
        .filter(|(_, &held)| !held)
        .map(|(it, _)| it.clone())
        .collect();

    Ok(SplitBundle {
        train: train_part.clone(),
        validation_holdout,
        test_holdout,
        test_remainder: Dataset::new(remainder, test_part.scale.clone())?,
    })
}

impl SplitBundle {
    pub fn holdout(&self, stage: Stage) -> &[HoldoutEntry] {
        match stage {
            Stage::Validation => &self.validation_holdout,
            Stage::Test => &self.test_holdout,
        }
    }

    /// Folding-in histories aligned with `self.holdout(stage)`.
    ///
    /// A user's history is every training interaction plus every remaining
    /// test-period interaction that precedes the holdout. Items unknown to the
    /// training data are skipped; repeated items keep the latest rating.
    pub fn histories(&self, stage: Stage) -> Vec<History> {
        let mut by_user: HashMap<&str, Vec<(u64, usize, &Interaction)>> = HashMap::new();
        for (row, it) in self.train.interactions.iter().enumerate() {
            by_user.entry(&it.user).or_default().push((it.timestamp, row, it));
        }
        let offset = self.train.len();
        for (row, it) in self.test_remainder.interactions.iter().enumerate() {
            by_user.entry(&it.user).or_default().push((it.timestamp, offset + row, it));
        }
        for events in by_user.values_mut() {
            events.sort_by_key(|&(ts, row, _)| (ts, row));
        }

        self.holdout(stage)
            .iter()
            .map(|entry| {
                let Some(events) = by_user.get(entry.user()) else {
                    return History::new();
                };
                let cutoff = match stage {
                    // The validation holdout is the user's latest remaining
                    // test interaction; everything else precedes it.
                    Stage::Validation => events
                        .iter()
                        .rposition(|(_, _, it)| *it == &entry.interaction)
                        .unwrap_or(events.len()),
                    Stage::Test => events.len(),
                };
                let mut latest: HashMap<usize, usize> = HashMap::new();
                let mut order = Vec::new();
                for (_, _, it) in &events[..cutoff] {
                    let Some(item) = self.train.items.get(&it.item) else {
                        continue;
                    };
                    let k = self.train.scale.position(it.rating).expect("validated");
                    if latest.insert(item, k).is_none() {
                        order.push(item);
                    }
                }
                order.into_iter().map(|item| (item, latest[&item])).collect()
            })
            .collect()
    }
}

/// Groups the `K` ascending scale values into `target_k` contiguous groups of
/// equal size and replaces each rating by its group number (1-based).
pub fn transform_scale(d: &Dataset, target_k: usize) -> Result<Dataset> {
    let k = d.scale.k();
    if target_k < 2 || !k.is_multiple_of(target_k) {
        return Err(Error::NonDivisibleScale { k, target: target_k });
    }
    let group = k / target_k;
    let interactions = d
        .interactions
        .iter()
        .map(|it| {
            let pos = d.scale.position(it.rating).expect("validated");
            Interaction {
                rating: (pos / group + 1) as u32,
                ..it.clone()
            }
        })
        .collect();
    Dataset::new(interactions, RatingScale::one_to(target_k as u32)?)
}

/// Binary user × item × rating tensor in coordinate form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseTensor3 {
    pub dims: (usize, usize, usize),
    /// Sorted `(user, item, rating position)` coordinates.
    pub entries: Vec<(usize, usize, usize)>,
}

/// One entry per (user, item) pair; when a pair repeats, the
/// latest-timestamp rating wins (later rows win ties).
pub fn build_tensor(train: &Dataset) -> SparseTensor3 {
    let mut latest: HashMap<(usize, usize), (u64, usize)> = HashMap::new();
    for it in &train.interactions {
        let key = (
            train.users.get(&it.user).expect("indexed"),
            train.items.get(&it.item).expect("indexed"),
        );
        let k = train.scale.position(it.rating).expect("validated");
        match latest.get(&key) {
            Some(&(ts, _)) if ts > it.timestamp => {}
            _ => {
                latest.insert(key, (it.timestamp, k));
            }
        }
    }
    let mut entries: Vec<_> = latest.into_iter().map(|((i, j), (_, k))| (i, j, k)).collect();
    entries.sort_unstable();
    SparseTensor3 {
        dims: (train.n_users(), train.n_items(), train.scale.k()),
        entries,
    }
}

/// Synthetic population of twin users on a 1..5 scale.
///
/// User `u{t}` (cohort A) and user `v{t}` (cohort B) share a latent taste
/// vector and rate the same items with the same base ratings; cohort B emits
/// `min(base + shift, 5)`. All events are globally shuffled and stamped with
/// strictly increasing timestamps.
pub fn generate_shifted_population(
    n_users: usize,
    n_items: usize,
    shift: u32,
    seed: u64,
) -> Result<Dataset> {
    if shift > 2 {
        return Err(Error::InvalidConfig(format!("shift must be 0, 1 or 2, got {shift}")));
    }
    if n_users == 0 || !n_users.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("n_users must be even and positive, got {n_users}")));
    }
    if n_items < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 items, got {n_items}")));
    }
    const DIM: usize = 6;
    const MIN_ITEMS: usize = 15;
    const MAX_ITEMS: usize = 40;
    // Base-rating cut points on the standardized affinity.
    const CUTS: [f64; 4] = [-1.0, -0.35, 0.35, 1.0];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let item_factors: Vec<[f64; DIM]> = (0..n_items)
        .map(|_| std::array::from_fn(|_| gauss(&mut rng)))
        .collect();
    let popularity: Vec<f64> = (0..n_items).map(|_| 0.8 * gauss(&mut rng)).collect();

    let pairs = n_users / 2;
    let per_user = MAX_ITEMS.min(n_items);
    let mut events: Vec<(usize, bool, usize, u32)> = Vec::new();
    for t in 0..pairs {
        let taste: [f64; DIM] = std::array::from_fn(|_| gauss(&mut rng));
        let affinity: Vec<f64> = item_factors
            .iter()
            .map(|q| q.iter().zip(&taste).map(|(a, b)| a * b).sum::<f64>() / (DIM as f64).sqrt())
            .collect();
        // Exposure favours popular and well-matched items (Gumbel top-m).
        let mut keyed: Vec<(f64, usize)> = (0..n_items)
            .map(|j| {
                let u: f64 = rng.random_range(1e-12..1.0);
                (popularity[j] + 0.7 * affinity[j] - (-u.ln()).ln(), j)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let m = rng.random_range(MIN_ITEMS.min(per_user)..=per_user);
        for &(_, j) in &keyed[..m] {
            let score = affinity[j] + 0.5 * gauss(&mut rng);
            let base = 1 + CUTS.iter().filter(|&&c| score > c).count() as u32;
            events.push((t, false, j, base));
            events.push((t, true, j, (base + shift).min(5)));
        }
    }
    events.shuffle(&mut rng);

    let interactions = events
        .into_iter()
        .enumerate()
        .map(|(ts, (t, cohort_b, j, rating))| {
            let user = if cohort_b { format!("v{t}") } else { format!("u{t}") };
            Interaction::new(user, format!("i{j}"), rating, ts as u64 + 1)
        })
        .collect();
    Dataset::new(interactions, RatingScale::one_to(5)?)
}
