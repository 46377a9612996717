//! Opinion-score datasets: queries of comparable sessions, per-chunk playback
//! logs, and per-user scores.
//!
//! On disk a dataset is a directory holding `sessions.csv`
//! (`session_id,chunk_index,vmaf,bitrate_mbps,rebuffer_s`) and `scores.csv`
//! (`query_id,session_id,user_id,score`). Queries are derived from the score
//! table; a session belongs to exactly one query.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

/// Per-chunk playback log of one streaming session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub vmaf: Vec<f64>,
    pub bitrate: Vec<f64>,
    pub rebuffer: Vec<f64>,
}

impl SessionRecord {
    pub fn new(
        session_id: impl Into<String>,
        vmaf: Vec<f64>,
        bitrate: Vec<f64>,
        rebuffer: Vec<f64>,
    ) -> Result<Self, DataError> {
        let s = Self {
            session_id: session_id.into(),
            vmaf,
            bitrate,
            rebuffer,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.vmaf.len();
        if n == 0 || self.bitrate.len() != n || self.rebuffer.len() != n {
            return Err(DataError::Schema(format!(
                "session {}: per-chunk arrays must be non-empty and equally long",
                self.session_id
            )));
        }
        if self.vmaf.iter().any(|v| !(v.is_finite() && (0.0..=100.0).contains(v))) {
            return Err(DataError::Range(format!(
                "session {}: vmaf outside [0, 100]",
                self.session_id
            )));
        }
        if self.rebuffer.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(DataError::Range(format!(
                "session {}: negative rebuffer",
                self.session_id
            )));
        }
        if self.bitrate.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(DataError::Range(format!(
                "session {}: bitrate must be positive",
                self.session_id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vmaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vmaf.is_empty()
    }

    /// Checks every bitrate against a manifest ladder.
    pub fn check_ladder(&self, ladder: &[f64]) -> Result<(), DataError> {
        match self
            .bitrate
            .iter()
            .position(|b| !ladder.iter().any(|r| (r - b).abs() <= 1e-9))
        {
            Some(t) => Err(DataError::Range(format!(
                "session {} chunk {t}: bitrate {} not on the ladder",
                self.session_id, self.bitrate[t]
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    /// Indices into the dataset's session list.
    pub sessions: Vec<usize>,
}

/// A user who scored at least two sessions of a query.
#[derive(Debug, Clone, PartialEq)]
pub struct Rater {
    pub user: usize,
    /// (session index, score) pairs, sorted by session index.
    pub scores: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetCounts {
    pub queries: usize,
    pub sessions: usize,
    pub users: usize,
    pub scores: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub query_id: String,
    pub session_id: String,
    pub user_id: String,
    pub score: f64,
}

/// Queries × sessions × per-user opinion scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset {
    sessions: Vec<SessionRecord>,
    session_index: BTreeMap<String, usize>,
    queries: Vec<Query>,
    users: Vec<String>,
    /// (user index, session index) -> score.
    scores: BTreeMap<(usize, usize), f64>,
    /// Per query, users with at least two scored sessions in it.
    raters: Vec<Vec<Rater>>,
}

impl RatingDataset {
    /// Builds and validates a dataset from sessions and score rows.
    pub fn new(sessions: Vec<SessionRecord>, rows: Vec<ScoreRow>) -> Result<Self, DataError> {
        Self::build(sessions, rows.into_iter().map(|r| (None, r)))
    }

    fn build(
        mut sessions: Vec<SessionRecord>,
        rows: impl Iterator<Item = (Option<usize>, ScoreRow)>,
    ) -> Result<Self, DataError> {
        sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        let mut session_index = BTreeMap::new();
        for (i, s) in sessions.iter().enumerate() {
            s.validate()?;
            if session_index.insert(s.session_id.clone(), i).is_some() {
                return Err(DataError::Schema(format!(
                    "duplicate session {}",
                    s.session_id
                )));
            }
        }

        let mut query_sessions: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
        let mut session_query: BTreeMap<usize, String> = BTreeMap::new();
        let mut user_names: BTreeSet<String> = BTreeSet::new();
        let mut named_scores: Vec<(String, usize, f64)> = Vec::new();
        for (line, row) in rows {
            let &sid = session_index.get(&row.session_id).ok_or_else(|| {
                DataError::DanglingSessionRef {
                    session: row.session_id.clone(),
                    line,
                }
            })?;
            if !(row.score.is_finite() && (0.0..=100.0).contains(&row.score)) {
                return Err(DataError::ScoreOutOfRange {
                    score: row.score,
                    line,
                });
            }
            if let Some(q) = session_query.get(&sid) {
                if *q != row.query_id {
                    return Err(DataError::Schema(format!(
                        "session {} appears in queries {q} and {}",
                        row.session_id, row.query_id
                    )));
                }
            } else {
                session_query.insert(sid, row.query_id.clone());
            }
            query_sessions
                .entry(row.query_id.clone())
                .or_default()
                .insert(sid);
            user_names.insert(row.user_id.clone());
            named_scores.push((row.user_id, sid, row.score));
        }

        let users: Vec<String> = user_names.into_iter().collect();
        let user_index: BTreeMap<&str, usize> = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.as_str(), i))
            .collect();
        let mut scores = BTreeMap::new();
        for (user, sid, score) in named_scores {
            let u = user_index[user.as_str()];
            if scores.insert((u, sid), score).is_some() {
                return Err(DataError::Schema(format!(
                    "user {user} scored session {} twice",
                    sessions[sid].session_id
                )));
            }
        }

        let mut queries = Vec::with_capacity(query_sessions.len());
        for (id, set) in query_sessions {
            if set.len() < 2 {
                return Err(DataError::EmptyQuery(id));
            }
            queries.push(Query {
                id,
                sessions: set.into_iter().collect(),
            });
        }

        let raters = queries
            .iter()
            .map(|q| {
                let mut per_user: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
                for &sid in &q.sessions {
                    for u in 0..users.len() {
                        if let Some(&s) = scores.get(&(u, sid)) {
                            per_user.entry(u).or_default().push((sid, s));
                        }
                    }
                }
                per_user
                    .into_iter()
                    .filter(|(_, v)| v.len() >= 2)
                    .map(|(user, scores)| Rater { user, scores })
                    .collect()
            })
            .collect();

        Ok(Self {
            sessions,
            session_index,
            queries,
            users,
            scores,
            raters,
        })
    }

    pub fn sessions(&self) -> &[SessionRecord] {
        &self.sessions
    }

    pub fn session(&self, idx: usize) -> &SessionRecord {
        &self.sessions[idx]
    }

    pub fn session_idx(&self, id: &str) -> Option<usize> {
        self.session_index.get(id).copied()
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn raters(&self, query: usize) -> &[Rater] {
        &self.raters[query]
    }

    pub fn score(&self, user: usize, session: usize) -> Option<f64> {
        self.scores.get(&(user, session)).copied()
    }

    /// All scores as (user index, session index, score).
    pub fn score_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.scores.iter().map(|(&(u, s), &v)| (u, s, v))
    }

    pub fn counts(&self) -> DatasetCounts {
        DatasetCounts {
            queries: self.queries.len(),
            sessions: self.sessions.len(),
            users: self.users.len(),
            scores: self.scores.len(),
        }
    }

    /// Number of unordered same-user, same-query session pairs.
    pub fn enumerable_pairs(&self) -> u64 {
        self.raters
            .iter()
            .flatten()
            .map(|r| {
                let m = r.scores.len() as u64;
                m * (m - 1) / 2
            })
            .sum()
    }

    /// Score rows in canonical (query, session, user) order.
    pub fn score_rows(&self) -> Vec<ScoreRow> {
        let mut rows = Vec::with_capacity(self.scores.len());
        for q in &self.queries {
            for &sid in &q.sessions {
                for (u, name) in self.users.iter().enumerate() {
                    if let Some(&score) = self.scores.get(&(u, sid)) {
                        rows.push(ScoreRow {
                            query_id: q.id.clone(),
                            session_id: self.sessions[sid].session_id.clone(),
                            user_id: name.clone(),
                            score,
                        });
                    }
                }
            }
        }
        rows
    }

    /// Returns a copy with every score replaced, keeping the table layout.
    pub fn with_scores(&self, f: impl FnMut(&ScoreRow) -> f64) -> Result<Self, DataError> {
        let mut f = f;
        let rows = self
            .score_rows()
            .into_iter()
            .map(|mut r| {
                r.score = f(&r);
                r
            })
            .collect();
        Self::new(self.sessions.clone(), rows)
    }

    /// Keeps only the named sessions and the scores on them.
    pub fn retain_sessions<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self, DataError> {
        let keep = ids
            .iter()
            .map(|id| {
                self.session_idx(id.as_ref()).ok_or_else(|| DataError::DanglingSessionRef {
                    session: id.as_ref().to_string(),
                    line: None,
                })
            })
            .collect::<Result<BTreeSet<usize>, _>>()?;
        self.subset(&keep)
    }

    /// Keeps only the listed sessions (by index) and the scores on them.
    fn subset(&self, keep: &BTreeSet<usize>) -> Result<Self, DataError> {
        let sessions = keep.iter().map(|&i| self.sessions[i].clone()).collect();
        let rows = self
            .score_rows()
            .into_iter()
            .filter(|r| keep.contains(&self.session_index[&r.session_id]))
            .collect();
        Self::new(sessions, rows)
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct SessionCsvRow {
    session_id: String,
    chunk_index: usize,
    vmaf: f64,
    bitrate_mbps: f64,
    rebuffer_s: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct ScoreCsvRow {
    query_id: String,
    session_id: String,
    user_id: String,
    score: f64,
}

pub const SESSIONS_FILE: &str = "sessions.csv";
pub const SCORES_FILE: &str = "scores.csv";

fn csv_error(file: &str, e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line() as usize);
    DataError::Schema(match line {
        Some(l) => format!("{file} line {l}: {e}"),
        None => format!("{file}: {e}"),
    })
}

pub fn read_sessions_csv(path: &Path) -> Result<Vec<SessionRecord>, DataError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(SESSIONS_FILE, e))?;
    let mut chunks: BTreeMap<String, Vec<(usize, f64, f64, f64)>> = BTreeMap::new();
    for row in reader.deserialize::<SessionCsvRow>() {
        let row = row.map_err(|e| csv_error(SESSIONS_FILE, e))?;
        chunks.entry(row.session_id).or_default().push((
            row.chunk_index,
            row.vmaf,
            row.bitrate_mbps,
            row.rebuffer_s,
        ));
    }
    chunks
        .into_iter()
        .map(|(id, mut rows)| {
            rows.sort_by_key(|r| r.0);
            if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
                return Err(DataError::Schema(format!(
                    "session {id}: chunk indices must be 0..T without gaps"
                )));
            }
            SessionRecord::new(
                id,
                rows.iter().map(|r| r.1).collect(),
                rows.iter().map(|r| r.2).collect(),
                rows.iter().map(|r| r.3).collect(),
            )
        })
        .collect()
}

pub fn load_ratings(dir: impl AsRef<Path>) -> Result<RatingDataset, DataError> {
    let dir = dir.as_ref();
    let sessions_path = dir.join(SESSIONS_FILE);
    let scores_path = dir.join(SCORES_FILE);
    for p in [&sessions_path, &scores_path] {
        if !p.is_file() {
            return Err(DataError::MissingFile(p.display().to_string()));
        }
    }
    let sessions = read_sessions_csv(&sessions_path)?;
    let mut reader = csv::Reader::from_path(&scores_path).map_err(|e| csv_error(SCORES_FILE, e))?;
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<ScoreCsvRow>().enumerate() {
        let row = row.map_err(|e| csv_error(SCORES_FILE, e))?;
        // Header is line 1.
        rows.push((
            Some(i + 2),
            ScoreRow {
                query_id: row.query_id,
                session_id: row.session_id,
                user_id: row.user_id,
                score: row.score,
            },
        ));
    }
    RatingDataset::build(sessions, rows.into_iter())
}

pub fn write_sessions_csv<'a>(
    sessions: impl IntoIterator<Item = &'a SessionRecord>,
    path: &Path,
) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(SESSIONS_FILE, e))?;
    for s in sessions {
        for t in 0..s.len() {
            w.serialize(SessionCsvRow {
                session_id: s.session_id.clone(),
                chunk_index: t,
                vmaf: s.vmaf[t],
                bitrate_mbps: s.bitrate[t],
                rebuffer_s: s.rebuffer[t],
            })
            .map_err(|e| csv_error(SESSIONS_FILE, e))?;
        }
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn save_ratings(d: &RatingDataset, dir: impl AsRef<Path>) -> Result<(), DataError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    write_sessions_csv(d.sessions(), &dir.join(SESSIONS_FILE))?;
    let path = dir.join(SCORES_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(SCORES_FILE, e))?;
    for r in d.score_rows() {
        w.serialize(ScoreCsvRow {
            query_id: r.query_id,
            session_id: r.session_id,
            user_id: r.user_id,
            score: r.score,
        })
        .map_err(|e| csv_error(SCORES_FILE, e))?;
    }
    w.flush().map_err(|e| DataError::io(&path, e))
}

/// Session-level split, stratified by query.
///
/// Each query's sessions are shuffled under `seed` and `round(n * fraction)`
/// of them go to the training side, clamped so that both sides keep at least
/// two sessions. Queries with fewer than four sessions go to training whole.
/// All scores of a session land on the same side.
pub fn split_dataset(
    d: &RatingDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(RatingDataset, RatingDataset), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::Range(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = BTreeSet::new();
    let mut test = BTreeSet::new();
    for q in d.queries() {
        let mut ids = q.sessions.clone();
        ids.shuffle(&mut rng);
        let n = ids.len();
        let n_train = if n < 4 {
            n
        } else {
            ((n as f64 * train_fraction).round() as usize).clamp(2, n - 2)
        };
        train.extend(ids[..n_train].iter().copied());
        test.extend(ids[n_train..].iter().copied());
    }
    if train.is_empty() || test.is_empty() {
        return Err(DataError::DegenerateSplit);
    }
    Ok((d.subset(&train)?, d.subset(&test)?))
}
