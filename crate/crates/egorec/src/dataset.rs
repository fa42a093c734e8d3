//! Interaction ingestion, k-core filtering, splitting, and feature loading.
//!
//! Interactions arrive as UTF-8 TSV with columns
//! `user_token \t item_token [\t rating] [\t timestamp]`. A header line is
//! auto-detected when the last field of line 1 is non-numeric. With four
//! columns the third is a rating (ignored; feedback is implicit) and the
//! fourth a timestamp; with three columns the third is a timestamp when it
//! parses as an integer, otherwise a rating. Duplicate (user, item) pairs
//! collapse to one record keeping the earliest timestamp.
//!
//! The split is per-user with floor allocation and test-first priority:
//! for a user with n items and ratios (r_train, r_val, r_test),
//! `n_test = min(max(floor(r_test * n), 1), n - 1)` when n >= 2 (else 0),
//! `n_val = min(floor(r_val * n), n - 1 - n_test)`, and train takes the
//! remainder, so train is never empty.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::mat::Mat;
use crate::rng::derive_rng;

/// Input channel tag. Feature files and embedding tables are keyed by this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Visual,
    Textual,
}

impl Modality {
    pub fn tag(&self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Textual => "textual",
        }
    }

    pub fn parse(s: &str) -> Result<Modality> {
        match s {
            "visual" | "v" => Ok(Modality::Visual),
            "textual" | "t" => Ok(Modality::Textual),
            other => Err(Error::InvalidArgument(format!(
                "unknown modality '{other}' (expected visual or textual)"
            ))),
        }
    }
}

/// Deduplicated raw interaction records in first-appearance order.
#[derive(Debug, Clone)]
pub struct RawInteractions {
    pub records: Vec<(String, String, Option<i64>)>,
    /// How many duplicate pairs were collapsed during ingestion.
    pub duplicates_dropped: usize,
}

impl RawInteractions {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Remapped dataset with per-user train/val/test item lists.
#[derive(Debug, Clone)]
pub struct InteractionDataset {
    pub num_users: usize,
    pub num_items: usize,
    /// Per-user sorted item indices; every user has at least one train item.
    pub train: Vec<Vec<u32>>,
    pub val: Vec<Vec<u32>>,
    pub test: Vec<Vec<u32>>,
    pub user_tokens: Vec<String>,
    pub item_tokens: Vec<String>,
    user_index: HashMap<String, u32>,
    item_index: HashMap<String, u32>,
}

impl InteractionDataset {
    pub fn user_index(&self, token: &str) -> Option<u32> {
        self.user_index.get(token).copied()
    }

    pub fn item_index(&self, token: &str) -> Option<u32> {
        self.item_index.get(token).copied()
    }

    pub fn num_interactions(&self) -> usize {
        let count = |v: &Vec<Vec<u32>>| v.iter().map(|s| s.len()).sum::<usize>();
        count(&self.train) + count(&self.val) + count(&self.test)
    }

    pub fn num_train_interactions(&self) -> usize {
        self.train.iter().map(|s| s.len()).sum()
    }

    /// 1 - interactions / (users * items).
    pub fn sparsity(&self) -> f64 {
        1.0 - self.num_interactions() as f64 / (self.num_users as f64 * self.num_items as f64)
    }

    /// Train-set degree of every item.
    pub fn item_train_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_items];
        for items in &self.train {
            for &i in items {
                deg[i as usize] += 1;
            }
        }
        deg
    }
}

/// Fraction formatted the way dataset statistics tables round it.
pub fn format_sparsity(sparsity: f64) -> String {
    format!("{:.2}%", sparsity * 100.0)
}

/// Dense item-feature matrix for one modality, rows aligned with item indices.
#[derive(Debug, Clone)]
pub struct ModalityFeatures {
    pub modality: Modality,
    pub matrix: Mat,
}

impl ModalityFeatures {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

fn is_numeric(field: &str) -> bool {
    field.parse::<f64>().is_ok()
}

/// Load a TSV interaction file, collapsing duplicate pairs (earliest
/// timestamp wins).
pub fn load_interactions(path: &Path) -> Result<RawInteractions> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records: Vec<(String, String, Option<i64>)> = Vec::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    let mut duplicates = 0usize;

    for (lineno, line) in body.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if lineno == 0 && fields.len() >= 3 && !is_numeric(fields[fields.len() - 1]) {
            continue; // header
        }
        if fields.len() < 2 {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason: format!("expected at least 2 tab-separated fields, got {}", fields.len()),
            });
        }
        let user = fields[0].trim();
        let item = fields[1].trim();
        if user.is_empty() || item.is_empty() {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason: "empty user or item token".into(),
            });
        }
        let timestamp = match fields.len() {
            2 => None,
            3 => match fields[2].trim().parse::<i64>() {
                Ok(ts) => Some(ts),
                // third column is a rating when it is not an integer
                Err(_) if is_numeric(fields[2].trim()) => None,
                Err(_) => {
                    return Err(Error::MalformedLine {
                        path: path.to_path_buf(),
                        line: lineno + 1,
                        reason: format!("third field '{}' is neither timestamp nor rating", fields[2]),
                    })
                }
            },
            _ => {
                if !is_numeric(fields[2].trim()) {
                    return Err(Error::MalformedLine {
                        path: path.to_path_buf(),
                        line: lineno + 1,
                        reason: format!("rating field '{}' is not numeric", fields[2]),
                    });
                }
                match fields[3].trim().parse::<i64>() {
                    Ok(ts) => Some(ts),
                    Err(_) => {
                        return Err(Error::MalformedLine {
                            path: path.to_path_buf(),
                            line: lineno + 1,
                            reason: format!("timestamp field '{}' is not an integer", fields[3]),
                        })
                    }
                }
            }
        };

        let key = (user.to_string(), item.to_string());
        match seen.get(&key) {
            Some(&idx) => {
                duplicates += 1;
                let existing = &mut records[idx];
                existing.2 = match (existing.2, timestamp) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
            }
            None => {
                seen.insert(key.clone(), records.len());
                records.push((key.0, key.1, timestamp));
            }
        }
    }

    if records.is_empty() {
        return Err(Error::ZeroRecords {
            path: path.to_path_buf(),
        });
    }
    Ok(RawInteractions {
        records,
        duplicates_dropped: duplicates,
    })
}

/// Iteratively remove users and items with fewer than `k` interactions until
/// a fixed point; the result is the maximal k-core.
pub fn kcore_filter(raw: &RawInteractions, k: usize) -> Result<RawInteractions> {
    if k < 1 {
        return Err(Error::InvalidArgument("k-core requires k >= 1".into()));
    }
    let mut records = raw.records.clone();
    loop {
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for (u, i, _) in &records {
            *user_deg.entry(u.as_str()).or_default() += 1;
            *item_deg.entry(i.as_str()).or_default() += 1;
        }
        let keep: Vec<bool> = records
            .iter()
            .map(|(u, i, _)| user_deg[u.as_str()] >= k && item_deg[i.as_str()] >= k)
            .collect();
        if keep.iter().all(|&b| b) {
            break;
        }
        let mut flags = keep.into_iter();
        records.retain(|_| flags.next().unwrap());
    }
    if records.is_empty() {
        return Err(Error::EmptyCore { k });
    }
    Ok(RawInteractions {
        records,
        duplicates_dropped: raw.duplicates_dropped,
    })
}

/// Per-user split counts under floor allocation with test-first priority.
fn split_counts(n: usize, r_val: f64, r_test: f64) -> (usize, usize, usize) {
    // a positive test ratio guarantees at least one test interaction for
    // users with two or more; a zero ratio means an empty split
    let n_test = if r_test > 0.0 && n >= 2 {
        (((r_test * n as f64).floor() as usize).max(1)).min(n - 1)
    } else {
        0
    };
    let n_val = ((r_val * n as f64).floor() as usize).min(n - 1 - n_test);
    (n - n_val - n_test, n_val, n_test)
}

/// Randomly split interactions per user and remap tokens to dense indices
/// (first-appearance order). Deterministic for a fixed seed.
pub fn split(raw: &RawInteractions, ratios: (f64, f64, f64), seed: u64) -> Result<InteractionDataset> {
    let (r_train, r_val, r_test) = ratios;
    if r_train <= 0.0 || r_val < 0.0 || r_test < 0.0 || (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be nonnegative with positive train share and sum to 1, got {ratios:?}"
        )));
    }

    let mut user_tokens: Vec<String> = Vec::new();
    let mut item_tokens: Vec<String> = Vec::new();
    let mut user_index: HashMap<String, u32> = HashMap::new();
    let mut item_index: HashMap<String, u32> = HashMap::new();
    let mut per_user: Vec<Vec<u32>> = Vec::new();

    for (u, i, _) in &raw.records {
        let uid = *user_index.entry(u.clone()).or_insert_with(|| {
            user_tokens.push(u.clone());
            per_user.push(Vec::new());
            (user_tokens.len() - 1) as u32
        });
        let iid = *item_index.entry(i.clone()).or_insert_with(|| {
            item_tokens.push(i.clone());
            (item_tokens.len() - 1) as u32
        });
        per_user[uid as usize].push(iid);
    }

    let num_users = user_tokens.len();
    let num_items = item_tokens.len();
    let mut rng = derive_rng(seed, "split");
    let mut train = Vec::with_capacity(num_users);
    let mut val = Vec::with_capacity(num_users);
    let mut test = Vec::with_capacity(num_users);
    let mut tiny_users = 0usize;

    for items in per_user.iter_mut() {
        items.sort_unstable();
        let n = items.len();
        let (n_train, n_val, n_test) = split_counts(n, r_val, r_test);
        debug_assert_eq!(n_train + n_val + n_test, n);
        if n < 3 {
            tiny_users += 1;
        }
        let mut shuffled = items.clone();
        shuffled.shuffle(&mut rng);
        let mut te: Vec<u32> = shuffled[..n_test].to_vec();
        let mut va: Vec<u32> = shuffled[n_test..n_test + n_val].to_vec();
        let mut tr: Vec<u32> = shuffled[n_test + n_val..].to_vec();
        tr.sort_unstable();
        va.sort_unstable();
        te.sort_unstable();
        train.push(tr);
        val.push(va);
        test.push(te);
    }
    if tiny_users > 0 {
        eprintln!("warning: {tiny_users} user(s) with <3 interactions cannot fill all three splits");
    }

    Ok(InteractionDataset {
        num_users,
        num_items,
        train,
        val,
        test,
        user_tokens,
        item_tokens,
        user_index,
        item_index,
    })
}

/// Load an `MMFT` feature file and reorder rows to the dataset's dense item
/// indexing via the token sidecar.
pub fn load_features(
    path: &Path,
    modality: Modality,
    dataset: &InteractionDataset,
) -> Result<ModalityFeatures> {
    let source = io::read_mmft(path)?;
    let tokens = io::read_tokens_sidecar(path)?;
    if tokens.len() != source.rows() {
        return Err(Error::BadFormat {
            path: path.to_path_buf(),
            reason: format!(
                "token sidecar lists {} rows but matrix has {}",
                tokens.len(),
                source.rows()
            ),
        });
    }
    if source.rows() < dataset.num_items {
        return Err(Error::BadFormat {
            path: path.to_path_buf(),
            reason: format!(
                "feature matrix has {} rows but the dataset needs {}",
                source.rows(),
                dataset.num_items
            ),
        });
    }
    let mut row_of: HashMap<&str, usize> = HashMap::with_capacity(tokens.len());
    for (r, t) in tokens.iter().enumerate() {
        row_of.insert(t.as_str(), r);
    }

    let dim = source.cols();
    let mut matrix = Mat::zeros(dataset.num_items, dim);
    for (idx, token) in dataset.item_tokens.iter().enumerate() {
        let &src_row = row_of.get(token.as_str()).ok_or_else(|| Error::BadFormat {
            path: path.to_path_buf(),
            reason: format!("feature file has no row for item token '{token}'"),
        })?;
        let row = source.row(src_row);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature row {src_row} (item '{token}') in {} contains a non-finite value",
                path.display()
            )));
        }
        if row.iter().all(|v| *v == 0.0) {
            return Err(Error::BadFormat {
                path: path.to_path_buf(),
                reason: format!("feature row {src_row} (item '{token}') is all-zero"),
            });
        }
        matrix.row_mut(idx).copy_from_slice(row);
    }
    Ok(ModalityFeatures { modality, matrix })
}

#[derive(Serialize, Deserialize)]
struct IdMapLine {
    kind: String,
    index: u32,
    token: String,
}

/// Write the split manifest: three TSVs of dense-index pairs plus a
/// JSON-lines id-map file.
pub fn write_prepared(dir: &Path, ds: &InteractionDataset) -> Result<()> {
    let dump = |name: &str, splits: &[Vec<u32>]| -> Result<()> {
        let mut body = String::new();
        for (u, items) in splits.iter().enumerate() {
            for &i in items {
                body.push_str(&format!("{u}\t{i}\n"));
            }
        }
        io::atomic_write(&dir.join(name), body.as_bytes())
    };
    dump("train.tsv", &ds.train)?;
    dump("val.tsv", &ds.val)?;
    dump("test.tsv", &ds.test)?;

    let mut body = String::new();
    for (idx, token) in ds.user_tokens.iter().enumerate() {
        let line = IdMapLine {
            kind: "user".into(),
            index: idx as u32,
            token: token.clone(),
        };
        body.push_str(&serde_json::to_string(&line).unwrap());
        body.push('\n');
    }
    for (idx, token) in ds.item_tokens.iter().enumerate() {
        let line = IdMapLine {
            kind: "item".into(),
            index: idx as u32,
            token: token.clone(),
        };
        body.push_str(&serde_json::to_string(&line).unwrap());
        body.push('\n');
    }
    io::atomic_write(&dir.join("id_maps.jsonl"), body.as_bytes())
}

/// Load a dataset previously written by [`write_prepared`].
pub fn load_prepared(dir: &Path) -> Result<InteractionDataset> {
    let maps_path = dir.join("id_maps.jsonl");
    let body = fs::read_to_string(&maps_path).map_err(|e| Error::io(&maps_path, e))?;
    let mut user_tokens = Vec::new();
    let mut item_tokens = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parsed: IdMapLine = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            path: maps_path.clone(),
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        match parsed.kind.as_str() {
            "user" => {
                if parsed.index as usize != user_tokens.len() {
                    return Err(Error::BadFormat {
                        path: maps_path.clone(),
                        reason: format!("user indices out of order at line {}", lineno + 1),
                    });
                }
                user_tokens.push(parsed.token);
            }
            "item" => {
                if parsed.index as usize != item_tokens.len() {
                    return Err(Error::BadFormat {
                        path: maps_path.clone(),
                        reason: format!("item indices out of order at line {}", lineno + 1),
                    });
                }
                item_tokens.push(parsed.token);
            }
            other => {
                return Err(Error::BadFormat {
                    path: maps_path.clone(),
                    reason: format!("unknown id-map kind '{other}'"),
                })
            }
        }
    }
    let num_users = user_tokens.len();
    let num_items = item_tokens.len();
    if num_users == 0 || num_items == 0 {
        return Err(Error::BadFormat {
            path: maps_path,
            reason: "empty id maps".into(),
        });
    }

    let read_split = |name: &str| -> Result<Vec<Vec<u32>>> {
        let path = dir.join(name);
        let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut splits = vec![Vec::new(); num_users];
        for (lineno, line) in body.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut it = line.split('\t');
            let parse = |s: Option<&str>| -> Option<u32> { s.and_then(|v| v.parse().ok()) };
            match (parse(it.next()), parse(it.next())) {
                (Some(u), Some(i)) if (u as usize) < num_users && (i as usize) < num_items => {
                    splits[u as usize].push(i);
                }
                _ => {
                    return Err(Error::MalformedLine {
                        path: path.clone(),
                        line: lineno + 1,
                        reason: "expected two in-range dense indices".into(),
                    })
                }
            }
        }
        for s in splits.iter_mut() {
            s.sort_unstable();
        }
        Ok(splits)
    };

    let train = read_split("train.tsv")?;
    let val = read_split("val.tsv")?;
    let test = read_split("test.tsv")?;
    if train.iter().any(|s| s.is_empty()) {
        return Err(Error::BadFormat {
            path: dir.join("train.tsv"),
            reason: "some user has no train interactions".into(),
        });
    }

    let user_index = user_tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    let item_index = item_tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    Ok(InteractionDataset {
        num_users,
        num_items,
        train,
        val,
        test,
        user_tokens,
        item_tokens,
        user_index,
        item_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn write_tsv(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn raw_from_pairs(pairs: &[(&str, &str)]) -> RawInteractions {
        RawInteractions {
            records: pairs
                .iter()
                .map(|(u, i)| (u.to_string(), i.to_string(), None))
                .collect(),
            duplicates_dropped: 0,
        }
    }

    /// Brute-force k-core: recompute degrees and delete one offending record
    /// at a time until nothing changes.
    fn kcore_oracle(records: &[(String, String, Option<i64>)], k: usize) -> Vec<(String, String)> {
        let mut recs: Vec<(String, String)> = records
            .iter()
            .map(|(u, i, _)| (u.clone(), i.clone()))
            .collect();
        loop {
            let mut ud: HashMap<String, usize> = HashMap::new();
            let mut id: HashMap<String, usize> = HashMap::new();
            for (u, i) in &recs {
                *ud.entry(u.clone()).or_default() += 1;
                *id.entry(i.clone()).or_default() += 1;
            }
            let pos = recs.iter().position(|(u, i)| ud[u] < k || id[i] < k);
            match pos {
                Some(p) => {
                    recs.remove(p);
                }
                None => break,
            }
        }
        recs
    }

    #[test]
    fn load_collapses_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tsv(dir.path(), "i.tsv", "u1\ti1\t5\nu1\ti1\t3\nu1\ti2\t9\n");
        let raw = load_interactions(&p).unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(raw.duplicates_dropped, 1);
        // earliest timestamp kept
        assert_eq!(raw.records[0].2, Some(3));
    }

    #[test]
    fn load_rejects_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tsv(dir.path(), "e.tsv", "");
        match load_interactions(&p) {
            Err(Error::ZeroRecords { .. }) => {}
            other => panic!("expected ZeroRecords, got {other:?}"),
        }
    }

    #[test]
    fn load_reports_malformed_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tsv(dir.path(), "m.tsv", "u1\ti1\njunkline\nu2\ti2\n");
        match load_interactions(&p) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected MalformedLine, got {other:?}"),
        }
    }

    #[test]
    fn load_skips_header_with_nonnumeric_timestamp() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tsv(
            dir.path(),
            "h.tsv",
            "user\titem\trating\ttimestamp\nu1\ti1\t5.0\t100\nu2\ti2\t4.0\t200\n",
        );
        let raw = load_interactions(&p).unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(raw.records[0].0, "u1");
        assert_eq!(raw.records[0].2, Some(100));
    }

    #[test]
    fn load_three_column_rating_vs_timestamp() {
        let dir = tempfile::tempdir().unwrap();
        // integer third column is a timestamp, fractional is a rating
        let p = write_tsv(dir.path(), "r.tsv", "u1\ti1\t100\nu2\ti2\t4.5\n");
        let raw = load_interactions(&p).unwrap();
        assert_eq!(raw.records[0].2, Some(100));
        assert_eq!(raw.records[1].2, None);
    }

    #[test]
    fn kcore_k1_is_identity() {
        let raw = raw_from_pairs(&[("u1", "i1"), ("u2", "i1"), ("u2", "i2")]);
        let out = kcore_filter(&raw, 1).unwrap();
        assert_eq!(out.records, raw.records);
    }

    #[test]
    fn kcore_single_pair_vanishes_at_k5() {
        let raw = raw_from_pairs(&[("u1", "i1")]);
        match kcore_filter(&raw, 5) {
            Err(Error::EmptyCore { k: 5 }) => {}
            other => panic!("expected EmptyCore, got {other:?}"),
        }
    }

    #[test]
    fn kcore_planted_3core_matches_oracle() {
        // users u0..u2 and items i0..i2 form a complete 3x3 block (the
        // planted 3-core); u3..u5 and i3..i5 hang off with degree < 3.
        let mut pairs = Vec::new();
        for u in 0..3 {
            for i in 0..3 {
                pairs.push((format!("u{u}"), format!("i{i}")));
            }
        }
        pairs.push(("u3".into(), "i3".into()));
        pairs.push(("u3".into(), "i4".into()));
        pairs.push(("u4".into(), "i3".into()));
        pairs.push(("u5".into(), "i5".into()));
        let raw = RawInteractions {
            records: pairs.iter().map(|(u, i)| (u.clone(), i.clone(), None)).collect(),
            duplicates_dropped: 0,
        };
        let out = kcore_filter(&raw, 3).unwrap();
        let got: HashSet<(String, String)> =
            out.records.iter().map(|(u, i, _)| (u.clone(), i.clone())).collect();
        let want: HashSet<(String, String)> = kcore_oracle(&raw.records, 3).into_iter().collect();
        assert_eq!(got, want);
        assert_eq!(got.len(), 9);
    }

    #[test]
    fn kcore_matches_oracle_on_random_instances() {
        use rand::Rng;
        let mut rng = derive_rng(7, "kcore-test");
        for trial in 0..20 {
            let users = 4 + trial % 5;
            let items = 4 + (trial / 2) % 5;
            let mut pairs = HashSet::new();
            for _ in 0..rng.gen_range(8..60) {
                pairs.insert((rng.gen_range(0..users), rng.gen_range(0..items)));
            }
            let raw = RawInteractions {
                records: pairs
                    .iter()
                    .map(|(u, i)| (format!("u{u}"), format!("i{i}"), None))
                    .collect(),
                duplicates_dropped: 0,
            };
            let k = rng.gen_range(1..4);
            let want: HashSet<(String, String)> = kcore_oracle(&raw.records, k).into_iter().collect();
            match kcore_filter(&raw, k) {
                Ok(out) => {
                    let got: HashSet<(String, String)> = out
                        .records
                        .iter()
                        .map(|(u, i, _)| (u.clone(), i.clone()))
                        .collect();
                    assert_eq!(got, want, "trial {trial} k={k}");
                }
                Err(Error::EmptyCore { .. }) => assert!(want.is_empty(), "trial {trial} k={k}"),
                Err(e) => panic!("unexpected error {e:?}"),
            }
        }
    }

    fn raw_with_counts(counts: &[usize]) -> RawInteractions {
        let mut pairs = Vec::new();
        for (u, &n) in counts.iter().enumerate() {
            for i in 0..n {
                pairs.push((format!("u{u}"), format!("i{i}"), None));
            }
        }
        RawInteractions {
            records: pairs,
            duplicates_dropped: 0,
        }
    }

    #[test]
    fn split_user_with_10_items_gets_8_1_1() {
        let ds = split(&raw_with_counts(&[10]), (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!(ds.train[0].len(), 8);
        assert_eq!(ds.val[0].len(), 1);
        assert_eq!(ds.test[0].len(), 1);
    }

    #[test]
    fn split_user_with_5_items_keeps_test_priority() {
        let ds = split(&raw_with_counts(&[5]), (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!(ds.train[0].len(), 4);
        assert_eq!(ds.val[0].len(), 0);
        assert_eq!(ds.test[0].len(), 1);
    }

    #[test]
    fn split_single_interaction_user_keeps_train_nonempty() {
        let ds = split(&raw_with_counts(&[1]), (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!(ds.train[0].len(), 1);
        assert_eq!(ds.val[0].len(), 0);
        assert_eq!(ds.test[0].len(), 0);
    }

    #[test]
    fn split_is_deterministic_per_seed_and_varies_across_seeds() {
        let mut pairs = Vec::new();
        for u in 0..5 {
            for i in 0..40 {
                pairs.push((format!("u{u}"), format!("i{i}"), None));
            }
        }
        let raw = RawInteractions {
            records: pairs,
            duplicates_dropped: 0,
        };
        let a = split(&raw, (0.8, 0.1, 0.1), 99).unwrap();
        let b = split(&raw, (0.8, 0.1, 0.1), 99).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);
        let c = split(&raw, (0.8, 0.1, 0.1), 100).unwrap();
        assert_ne!(
            (a.train, a.val, a.test),
            (c.train.clone(), c.val.clone(), c.test.clone()),
            "200 interactions should split differently under a different seed"
        );
    }

    #[test]
    fn split_is_a_partition() {
        use rand::Rng;
        let mut rng = derive_rng(3, "partition-test");
        let mut pairs = HashSet::new();
        for _ in 0..400 {
            pairs.insert((rng.gen_range(0..30u32), rng.gen_range(0..25u32)));
        }
        let raw = RawInteractions {
            records: pairs
                .iter()
                .map(|(u, i)| (format!("u{u}"), format!("i{i}"), None))
                .collect(),
            duplicates_dropped: 0,
        };
        let ds = split(&raw, (0.8, 0.1, 0.1), 5).unwrap();
        for u in 0..ds.num_users {
            let mut together: Vec<u32> = ds.train[u]
                .iter()
                .chain(&ds.val[u])
                .chain(&ds.test[u])
                .copied()
                .collect();
            together.sort_unstable();
            let set: HashSet<u32> = together.iter().copied().collect();
            assert_eq!(set.len(), together.len(), "splits overlap for user {u}");
            assert!(!ds.train[u].is_empty());
            // union reproduces exactly the user's post-filter items
            let tok = &ds.user_tokens[u];
            let mut want: Vec<u32> = raw
                .records
                .iter()
                .filter(|(ru, _, _)| ru == tok)
                .map(|(_, ri, _)| ds.item_index(ri).unwrap())
                .collect();
            want.sort_unstable();
            assert_eq!(together, want);
        }
    }

    #[test]
    fn id_maps_are_bijections() {
        let raw = raw_from_pairs(&[("b", "y"), ("a", "x"), ("b", "x")]);
        let ds = split(&raw, (0.8, 0.1, 0.1), 1).unwrap();
        for (idx, tok) in ds.user_tokens.iter().enumerate() {
            assert_eq!(ds.user_index(tok), Some(idx as u32));
        }
        for (idx, tok) in ds.item_tokens.iter().enumerate() {
            assert_eq!(ds.item_index(tok), Some(idx as u32));
        }
        assert_eq!(ds.user_tokens.len(), ds.num_users);
        assert_eq!(ds.item_tokens.len(), ds.num_items);
    }

    #[test]
    fn sparsity_formats_as_two_decimal_percent() {
        // counts shaped like a real catalog: 19,445 users x 7,050 items with
        // 160,792 interactions is 99.88% sparse after rounding
        let sparsity = 1.0 - 160_792.0 / (19_445.0 * 7_050.0);
        assert_eq!(format_sparsity(sparsity), "99.88%");
    }

    fn toy_dataset() -> InteractionDataset {
        let raw = raw_from_pairs(&[("u0", "ic"), ("u0", "ia"), ("u1", "ib"), ("u1", "ia")]);
        split(&raw, (0.8, 0.1, 0.1), 1).unwrap()
    }

    #[test]
    fn load_features_permutes_rows_to_item_map_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.mmft");
        // file rows in order ia, ib, ic; dataset order is ic, ia, ib
        let m = Mat::from_vec(3, 3, vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0]);
        io::write_mmft(&p, &m, io::MmftDtype::F32).unwrap();
        io::write_tokens_sidecar(&p, &["ia".into(), "ib".into(), "ic".into()]).unwrap();
        let ds = toy_dataset();
        assert_eq!(ds.item_tokens, vec!["ic", "ia", "ib"]);
        let f = load_features(&p, Modality::Visual, &ds).unwrap();
        assert_eq!(f.matrix.row(0), &[0.0, 0.0, 3.0]); // ic
        assert_eq!(f.matrix.row(1), &[1.0, 0.0, 0.0]); // ia
        assert_eq!(f.matrix.row(2), &[0.0, 2.0, 0.0]); // ib
    }

    #[test]
    fn load_features_rejects_nan_naming_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.mmft");
        let mut m = Mat::from_fn(3, 2, |_, _| 1.0);
        m.set(1, 0, f64::NAN);
        io::write_mmft(&p, &m, io::MmftDtype::F64).unwrap();
        io::write_tokens_sidecar(&p, &["ia".into(), "ib".into(), "ic".into()]).unwrap();
        let ds = toy_dataset();
        match load_features(&p, Modality::Visual, &ds) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("row 1"), "{msg}"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn load_features_rejects_all_zero_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.mmft");
        let mut m = Mat::from_fn(3, 2, |_, _| 1.0);
        m.row_mut(2).fill(0.0);
        io::write_mmft(&p, &m, io::MmftDtype::F32).unwrap();
        io::write_tokens_sidecar(&p, &["ia".into(), "ib".into(), "ic".into()]).unwrap();
        let ds = toy_dataset();
        match load_features(&p, Modality::Visual, &ds) {
            Err(Error::BadFormat { reason, .. }) => assert!(reason.contains("all-zero"), "{reason}"),
            other => panic!("expected BadFormat, got {other:?}"),
        }
    }

    #[test]
    fn load_features_rejects_row_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.mmft");
        let m = Mat::from_fn(2, 2, |_, _| 1.0);
        io::write_mmft(&p, &m, io::MmftDtype::F32).unwrap();
        io::write_tokens_sidecar(&p, &["ia".into(), "ib".into()]).unwrap();
        let ds = toy_dataset();
        assert!(load_features(&p, Modality::Visual, &ds).is_err());
    }

    #[test]
    fn prepared_roundtrip_preserves_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let mut pairs = Vec::new();
        for u in 0..6 {
            for i in 0..8 {
                if (u + i) % 3 != 0 {
                    pairs.push((format!("user-{u}"), format!("item-{i}"), None));
                }
            }
        }
        let raw = RawInteractions {
            records: pairs,
            duplicates_dropped: 0,
        };
        let ds = split(&raw, (0.8, 0.1, 0.1), 11).unwrap();
        write_prepared(dir.path(), &ds).unwrap();
        let back = load_prepared(dir.path()).unwrap();
        assert_eq!(back.num_users, ds.num_users);
        assert_eq!(back.num_items, ds.num_items);
        assert_eq!(back.train, ds.train);
        assert_eq!(back.val, ds.val);
        assert_eq!(back.test, ds.test);
        assert_eq!(back.user_tokens, ds.user_tokens);
        assert_eq!(back.item_tokens, ds.item_tokens);
    }
}
