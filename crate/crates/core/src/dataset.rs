//! Interaction ingest, user-side k-core filtering and chronological
//! leave-one-out splitting.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One raw implicit-feedback record as read from disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawInteraction {
    pub user_key: String,
    pub item_key: String,
    pub timestamp: i64,
}

impl RawInteraction {
    pub fn new(user_key: impl Into<String>, item_key: impl Into<String>, timestamp: i64) -> Self {
        RawInteraction {
            user_key: user_key.into(),
            item_key: item_key.into(),
            timestamp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    Tsv,
    Csv,
}

impl InputFormat {
    fn delimiter(self) -> u8 {
        match self {
            InputFormat::Tsv => b'\t',
            InputFormat::Csv => b',',
        }
    }

    /// Guesses the format from a file extension, defaulting to TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Tsv,
        }
    }
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(InputFormat::Tsv),
            "csv" => Ok(InputFormat::Csv),
            other => Err(Error::InvalidArgument(format!("unknown input format `{other}`"))),
        }
    }
}

/// Reads `(user_key, item_key, timestamp)` rows from a delimited file.
///
/// A first row whose timestamp field is not an integer is treated as a
/// header and skipped. Duplicate pairs are kept; [`build_log`] collapses them.
pub fn load_interactions(path: impl AsRef<Path>, format: InputFormat) -> Result<Vec<RawInteraction>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(BufReader::new(file), format)
}

pub fn parse_interactions<R: Read>(reader: R, format: InputFormat) -> Result<Vec<RawInteraction>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::parse(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 3 {
            return Err(Error::parse(
                line,
                format!("expected 3 fields, got {}", record.len()),
            ));
        }
        let ts = record[2].parse::<i64>();
        match ts {
            Ok(timestamp) => out.push(RawInteraction::new(&record[0], &record[1], timestamp)),
            Err(_) if first => {}
            Err(_) => {
                return Err(Error::parse(
                    line,
                    format!("unparsable timestamp `{}`", &record[2]),
                ))
            }
        }
        first = false;
    }
    if out.is_empty() {
        return Err(Error::Empty("no interactions in input".into()));
    }
    Ok(out)
}

/// Bidirectional key <-> contiguous id table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    keys: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    fn insert(&mut self, key: &str) -> u32 {
        if let Some(&id) = self.index.get(key) {
            return id;
        }
        let id = self.keys.len() as u32;
        self.keys.push(key.to_owned());
        self.index.insert(key.to_owned(), id);
        id
    }

    pub fn id(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn key(&self, id: u32) -> Option<&str> {
        self.keys.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub timestamp: i64,
}

/// Deduplicated interactions over contiguous user and item ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionLog {
    pub n_users: usize,
    pub n_items: usize,
    pub interactions: Vec<Interaction>,
    pub users: IdMap,
    pub items: IdMap,
}

impl InteractionLog {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// Sorted item ids per user.
    pub fn items_per_user(&self) -> Vec<Vec<u32>> {
        let mut per_user = vec![Vec::new(); self.n_users];
        for it in &self.interactions {
            per_user[it.user as usize].push(it.item);
        }
        for items in &mut per_user {
            items.sort_unstable();
            items.dedup();
        }
        per_user
    }
}

/// Collapses duplicate pairs (earliest timestamp wins), drops users with
/// fewer than `k_core` distinct items, then assigns ids by first appearance.
pub fn build_log(raw: &[RawInteraction], k_core: usize) -> Result<InteractionLog> {
    if k_core == 0 {
        return Err(Error::InvalidArgument("k_core must be at least 1".into()));
    }

    // (user_key, item_key) -> position in `dedup`
    let mut seen: HashMap<(&str, &str), usize> = HashMap::new();
    let mut dedup: Vec<(&str, &str, i64)> = Vec::new();
    for r in raw {
        match seen.entry((r.user_key.as_str(), r.item_key.as_str())) {
            Entry::Occupied(e) => {
                let slot = &mut dedup[*e.get()];
                slot.2 = slot.2.min(r.timestamp);
            }
            Entry::Vacant(e) => {
                e.insert(dedup.len());
                dedup.push((&r.user_key, &r.item_key, r.timestamp));
            }
        }
    }

    // Only users are filtered, and a user's distinct-item count does not
    // depend on other users, so a single pass reaches the fixed point.
    let mut per_user: HashMap<&str, usize> = HashMap::new();
    for &(u, _, _) in &dedup {
        *per_user.entry(u).or_default() += 1;
    }

    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut interactions = Vec::new();
    for &(u, i, ts) in &dedup {
        if per_user[u] < k_core {
            continue;
        }
        interactions.push(Interaction {
            user: users.insert(u),
            item: items.insert(i),
            timestamp: ts,
        });
    }
    if interactions.is_empty() {
        return Err(Error::Empty(format!("no users left after {k_core}-core filtering")));
    }
    Ok(InteractionLog {
        n_users: users.len(),
        n_items: items.len(),
        interactions,
        users,
        items,
    })
}

/// Leave-one-out partition: per user the last item is test, the second-last
/// validation, the rest train.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: InteractionLog,
    pub validation: Vec<u32>,
    pub test: Vec<u32>,
    pub train_count_per_user: Vec<usize>,
    train_items: Vec<Vec<u32>>,
}

impl SplitDataset {
    /// Assembles a split from already-partitioned parts, checking that the
    /// held-out items are disjoint from each user's train set.
    pub fn from_parts(train: InteractionLog, validation: Vec<u32>, test: Vec<u32>) -> Result<Self> {
        let n_users = train.n_users;
        if validation.len() != n_users || test.len() != n_users {
            return Err(Error::Dimension(format!(
                "{} users but {} validation and {} test entries",
                n_users,
                validation.len(),
                test.len()
            )));
        }
        let train_items = train.items_per_user();
        for u in 0..n_users {
            for (what, item) in [("validation", validation[u]), ("test", test[u])] {
                if item as usize >= train.n_items {
                    return Err(Error::Dimension(format!(
                        "{what} item {item} of user {u} out of range"
                    )));
                }
                if train_items[u].binary_search(&item).is_ok() {
                    return Err(Error::InvalidArgument(format!(
                        "{what} item {item} of user {u} is also a train item"
                    )));
                }
            }
        }
        let train_count_per_user = train_items.iter().map(Vec::len).collect();
        Ok(SplitDataset {
            train,
            validation,
            test,
            train_count_per_user,
            train_items,
        })
    }

    pub fn n_users(&self) -> usize {
        self.train.n_users
    }

    pub fn n_items(&self) -> usize {
        self.train.n_items
    }

    /// Sorted train items of user `u`.
    pub fn train_items(&self, u: u32) -> &[u32] {
        &self.train_items[u as usize]
    }

    /// `(user, item)` train pairs.
    pub fn train_pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.train.interactions.iter().map(|it| (it.user, it.item))
    }

    /// Writes the split manifest: a `users=<n> items=<n>` header followed by
    /// `[train]`, `[validation]` and `[test]` sections of `user<TAB>item` lines.
    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_manifest_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_manifest_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "users={} items={}", self.n_users(), self.n_items())?;
        writeln!(w, "[train]")?;
        for it in &self.train.interactions {
            writeln!(w, "{}\t{}", it.user, it.item)?;
        }
        writeln!(w, "[validation]")?;
        for (u, i) in self.validation.iter().enumerate() {
            writeln!(w, "{u}\t{i}")?;
        }
        writeln!(w, "[test]")?;
        for (u, i) in self.test.iter().enumerate() {
            writeln!(w, "{u}\t{i}")?;
        }
        Ok(())
    }

    /// Reads a manifest written by [`SplitDataset::write_manifest`]. Key maps
    /// are not stored in the manifest; train timestamps become line order.
    pub fn read_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_manifest_from(BufReader::new(file))
    }

    pub fn read_manifest_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let (n_users, n_items) = match lines.next() {
            Some((_, line)) => parse_header(&line.map_err(|e| Error::parse(1, e.to_string()))?)
                .ok_or_else(|| Error::parse(1, "expected header `users=<n> items=<n>`"))?,
            None => return Err(Error::Empty("split manifest".into())),
        };

        #[derive(PartialEq)]
        enum Section {
            None,
            Train,
            Validation,
            Test,
        }
        let mut section = Section::None;
        let mut interactions = Vec::new();
        let mut validation = vec![None; n_users];
        let mut test = vec![None; n_users];
        for (idx, line) in lines {
            let lineno = idx as u64 + 1;
            let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
            let line = line.trim();
            match line {
                "" => continue,
                "[train]" => section = Section::Train,
                "[validation]" => section = Section::Validation,
                "[test]" => section = Section::Test,
                _ => {
                    let (u, i) = parse_pair(line, n_users, n_items)
                        .map_err(|m| Error::parse(lineno, m))?;
                    match section {
                        Section::None => {
                            return Err(Error::parse(lineno, "record before any section"))
                        }
                        Section::Train => interactions.push(Interaction {
                            user: u,
                            item: i,
                            timestamp: interactions.len() as i64,
                        }),
                        Section::Validation => validation[u as usize] = Some(i),
                        Section::Test => test[u as usize] = Some(i),
                    }
                }
            }
        }
        let collect = |v: Vec<Option<u32>>, what: &str| -> Result<Vec<u32>> {
            v.into_iter()
                .enumerate()
                .map(|(u, i)| {
                    i.ok_or_else(|| Error::InvalidArgument(format!("user {u} has no {what} item")))
                })
                .collect()
        };
        let validation = collect(validation, "validation")?;
        let test = collect(test, "test")?;
        let train = InteractionLog {
            n_users,
            n_items,
            interactions,
            users: IdMap::default(),
            items: IdMap::default(),
        };
        SplitDataset::from_parts(train, validation, test)
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut users = None;
    let mut items = None;
    for tok in line.split_whitespace() {
        let (k, v) = tok.split_once('=')?;
        match k {
            "users" => users = v.parse().ok(),
            "items" => items = v.parse().ok(),
            _ => return None,
        }
    }
    Some((users?, items?))
}

fn parse_pair(line: &str, n_users: usize, n_items: usize) -> std::result::Result<(u32, u32), String> {
    let mut fields = line.split('\t');
    let (Some(u), Some(i), None) = (fields.next(), fields.next(), fields.next()) else {
        return Err(format!("expected `user<TAB>item`, got `{line}`"));
    };
    let u: u32 = u.parse().map_err(|_| format!("bad user id `{u}`"))?;
    let i: u32 = i.parse().map_err(|_| format!("bad item id `{i}`"))?;
    if u as usize >= n_users || i as usize >= n_items {
        return Err(format!("pair ({u}, {i}) out of range"));
    }
    Ok((u, i))
}

impl fmt::Display for SplitDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} users, {} items, {} train interactions",
            self.n_users(),
            self.n_items(),
            self.train.len()
        )
    }
}

/// Sorts each user's interactions by `(timestamp, item)` and holds out the
/// last two.
pub fn chronological_split(log: &InteractionLog) -> Result<SplitDataset> {
    let mut per_user: Vec<Vec<Interaction>> = vec![Vec::new(); log.n_users];
    for it in &log.interactions {
        per_user[it.user as usize].push(*it);
    }

    let mut train = Vec::with_capacity(log.len().saturating_sub(2 * log.n_users));
    let mut validation = Vec::with_capacity(log.n_users);
    let mut test = Vec::with_capacity(log.n_users);
    for (u, seq) in per_user.iter_mut().enumerate() {
        if seq.len() < 3 {
            let key = log
                .users
                .key(u as u32)
                .map(str::to_owned)
                .unwrap_or_else(|| u.to_string());
            return Err(Error::TooFewInteractions(key));
        }
        seq.sort_by_key(|it| (it.timestamp, it.item));
        let n = seq.len();
        test.push(seq[n - 1].item);
        validation.push(seq[n - 2].item);
        train.extend_from_slice(&seq[..n - 2]);
    }

    let train = InteractionLog {
        n_users: log.n_users,
        n_items: log.n_items,
        interactions: train,
        users: log.users.clone(),
        items: log.items.clone(),
    };
    SplitDataset::from_parts(train, validation, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(rows: &[(&str, &str, i64)]) -> Vec<RawInteraction> {
        rows.iter().map(|&(u, i, t)| RawInteraction::new(u, i, t)).collect()
    }

    #[test]
    fn parses_tsv_in_file_order() {
        let got = parse_interactions("a\tx\t1\nb\ty\t2\na\ty\t3".as_bytes(), InputFormat::Tsv).unwrap();
        assert_eq!(got, raw(&[("a", "x", 1), ("b", "y", 2), ("a", "y", 3)]));
    }

    #[test]
    fn short_row_names_line() {
        let err = parse_interactions("a\tx".as_bytes(), InputFormat::Tsv).unwrap_err();
        assert_eq!(err.to_string(), "line 1: expected 3 fields, got 2");
    }

    #[test]
    fn header_is_skipped_and_bad_timestamp_rejected() {
        let got = parse_interactions("user,item,ts\na,x,5\n".as_bytes(), InputFormat::Csv).unwrap();
        assert_eq!(got, raw(&[("a", "x", 5)]));
        let err = parse_interactions("a,x,5\nb,y,soon\n".as_bytes(), InputFormat::Csv).unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            parse_interactions("".as_bytes(), InputFormat::Tsv),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            parse_interactions("u\ti\tts\n".as_bytes(), InputFormat::Tsv),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn k_core_keeps_only_heavy_users() {
        let mut rows = Vec::new();
        for (t, i) in ["p", "q", "r", "s", "t"].iter().enumerate() {
            rows.push(("a", *i, t as i64));
        }
        rows.push(("b", "p", 9));
        rows.push(("b", "z", 10));
        let log = build_log(&raw(&rows), 5).unwrap();
        assert_eq!(log.n_users, 1);
        assert_eq!(log.n_items, 5);
        assert_eq!(log.users.key(0), Some("a"));
        assert!(log.items.id("z").is_none());
    }

    #[test]
    fn duplicates_keep_earliest_timestamp() {
        let log = build_log(&raw(&[("a", "x", 7), ("a", "x", 1)]), 1).unwrap();
        assert_eq!(log.interactions, vec![Interaction { user: 0, item: 0, timestamp: 1 }]);
    }

    #[test]
    fn empty_after_filter_is_an_error() {
        assert!(matches!(build_log(&raw(&[("a", "x", 1)]), 2), Err(Error::Empty(_))));
        assert!(build_log(&raw(&[("a", "x", 1)]), 0).is_err());
    }

    #[test]
    fn split_definition_and_tie_break() {
        let log = build_log(&raw(&[("a", "x", 1), ("a", "y", 2), ("a", "z", 3)]), 1).unwrap();
        let s = chronological_split(&log).unwrap();
        assert_eq!(s.train_items(0), &[0]);
        assert_eq!((s.validation[0], s.test[0]), (1, 2));

        // all equal timestamps: item id decides; ids follow first appearance
        let log = build_log(&raw(&[("a", "x", 5), ("a", "y", 5), ("a", "z", 5)]), 1).unwrap();
        let s = chronological_split(&log).unwrap();
        assert_eq!(s.train_items(0), &[log.items.id("x").unwrap()]);
        assert_eq!(s.validation[0], log.items.id("y").unwrap());
        assert_eq!(s.test[0], log.items.id("z").unwrap());
    }

    #[test]
    fn split_rejects_short_users() {
        let log = build_log(&raw(&[("a", "x", 1), ("a", "y", 2)]), 1).unwrap();
        match chronological_split(&log) {
            Err(Error::TooFewInteractions(u)) => assert_eq!(u, "a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn manifest_round_trip() {
        let log = build_log(
            &raw(&[
                ("a", "x", 1),
                ("a", "y", 2),
                ("a", "z", 3),
                ("a", "w", 4),
                ("b", "z", 1),
                ("b", "x", 2),
                ("b", "v", 3),
            ]),
            3,
        )
        .unwrap();
        let s = chronological_split(&log).unwrap();
        let mut buf = Vec::new();
        s.write_manifest_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("users=2 items=5\n[train]\n"));
        let back = SplitDataset::read_manifest_from(buf.as_slice()).unwrap();
        assert_eq!(back.validation, s.validation);
        assert_eq!(back.test, s.test);
        assert_eq!(back.train_pairs().collect::<Vec<_>>(), s.train_pairs().collect::<Vec<_>>());
        assert_eq!(back.train_count_per_user, s.train_count_per_user);
    }

    #[test]
    fn manifest_rejects_leaked_holdout() {
        let text = "users=1 items=3\n[train]\n0\t1\n[validation]\n0\t1\n[test]\n0\t2\n";
        assert!(SplitDataset::read_manifest_from(text.as_bytes()).is_err());
    }
}
