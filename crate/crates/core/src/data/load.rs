//! Reader and writer for the plain-text dataset layout: `train.txt`,
//! `valid.txt`, `test.txt` (one `subject relation object timestamp` fact per
//! line, extra columns ignored) and `stat.txt` (`NUM_ENTITIES NUM_RELATIONS`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Quadruplet, Split, TkgDataset};
use crate::error::{Error, Result};

/// One parsed line before timestamps are mapped to snapshot indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawFact {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
    pub time: u64,
    pub line: usize,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Raw-time units per snapshot. Inferred from the data when `None`.
    pub interval: Option<u64>,
}

/// Upper bound on the snapshot grid a loaded dataset may span.
pub const MAX_SNAPSHOTS: u64 = 1 << 24;

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Reads the entity and relation counts from the first line of `stat.txt`.
pub fn parse_stat(text: &str, file: &str) -> Result<(usize, usize)> {
    let (idx, line) = text
        .lines()
        .enumerate()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| parse_err(file, 1, "empty file"))?;
    let mut cols = line.split_ascii_whitespace();
    let mut next = |what: &str| -> Result<usize> {
        let tok = cols
            .next()
            .ok_or_else(|| parse_err(file, idx + 1, format!("missing {what}")))?;
        tok.parse::<usize>()
            .map_err(|_| parse_err(file, idx + 1, format!("{what} {tok:?} is not a count")))
    };
    let entities = next("entity count")?;
    let relations = next("relation count")?;
    if entities == 0 || relations == 0 {
        return Err(parse_err(file, idx + 1, "counts must be positive"));
    }
    Ok((entities, relations))
}

/// Parses fact lines, checking ids against the declared counts.
pub fn parse_facts(
    text: &str,
    file: &str,
    num_entities: usize,
    num_relations: usize,
) -> Result<Vec<RawFact>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split_ascii_whitespace();
        let mut field = |what: &str| -> Result<u64> {
            let tok = cols
                .next()
                .ok_or_else(|| parse_err(file, lineno, format!("missing {what} column")))?;
            tok.parse::<u64>().map_err(|_| {
                parse_err(file, lineno, format!("{what} {tok:?} is not an integer id"))
            })
        };
        let subject = field("subject")?;
        let relation = field("relation")?;
        let object = field("object")?;
        let time = field("timestamp")?;
        for (what, id, bound) in [
            ("subject", subject, num_entities),
            ("object", object, num_entities),
        ] {
            if id >= bound as u64 {
                return Err(parse_err(
                    file,
                    lineno,
                    format!("{what} id {id} out of range (entities: {bound})"),
                ));
            }
        }
        if relation >= num_relations as u64 {
            return Err(parse_err(
                file,
                lineno,
                format!("relation id out of range: {relation} (relations: {num_relations})"),
            ));
        }
        out.push(RawFact {
            subject: subject as usize,
            relation: relation as usize,
            object: object as usize,
            time,
            line: lineno,
        });
    }
    Ok(out)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<TkgDataset> {
    load_dataset_with(dir, LoadOptions::default())
}

/// Loads a dataset directory. Raw timestamps become contiguous snapshot
/// indices `(time - min) / interval`, with the interval taken from the
/// options or else the GCD of the gaps between distinct raw timestamps.
pub fn load_dataset_with(dir: impl AsRef<Path>, opts: LoadOptions) -> Result<TkgDataset> {
    let dir = dir.as_ref();
    let stat = read(dir, "stat.txt")?;
    let [train, valid, test] = Split::ALL.map(|split| read(dir, &format!("{}.txt", split.name())));
    parse_dataset(&stat, [&train?, &valid?, &test?], opts).map_err(|e| match e {
        Error::Dataset(msg) => Error::Dataset(format!("{}: {msg}", dir.display())),
        other => other,
    })
}

/// Builds a dataset from the contents of `stat.txt` and the train, valid and
/// test files, in that order.
pub fn parse_dataset(stat: &str, splits: [&str; 3], opts: LoadOptions) -> Result<TkgDataset> {
    let (num_entities, num_relations) = parse_stat(stat, "stat.txt")?;

    let mut raw = Vec::new();
    for (split, text) in Split::ALL.into_iter().zip(splits) {
        let file = format!("{}.txt", split.name());
        let facts = parse_facts(text, &file, num_entities, num_relations)?;
        raw.push((split, file, facts));
    }

    let mut times: Vec<u64> = raw
        .iter()
        .flat_map(|(_, _, f)| f.iter().map(|r| r.time))
        .collect();
    times.sort_unstable();
    times.dedup();
    let Some(&min) = times.first() else {
        return Err(Error::Dataset("no facts in any split".into()));
    };
    let interval = match opts.interval {
        Some(0) => return Err(Error::Config("timestamp interval must be positive".into())),
        Some(i) => i,
        None => times.windows(2).fold(0, |g, w| gcd(g, w[1] - w[0])).max(1),
    };

    let mut splits: Vec<Vec<Quadruplet>> = Vec::new();
    let mut prev_max: Option<(String, u64)> = None;
    for (_, file, facts) in &raw {
        let mut quads = Vec::with_capacity(facts.len());
        for f in facts {
            if (f.time - min) % interval != 0 {
                return Err(parse_err(
                    file,
                    f.line,
                    format!("timestamp {} is not on the {interval}-unit grid", f.time),
                ));
            }
            quads.push(Quadruplet::new(
                f.subject,
                f.relation,
                f.object,
                ((f.time - min) / interval) as usize,
            ));
        }
        if let (Some(lo), Some(hi)) = (
            facts.iter().map(|f| f.time).min(),
            facts.iter().map(|f| f.time).max(),
        ) {
            if let Some((pfile, pmax)) = &prev_max {
                if lo <= *pmax {
                    let line = facts.iter().find(|f| f.time == lo).map_or(1, |f| f.line);
                    return Err(parse_err(
                        file,
                        line,
                        format!(
                            "timestamp {lo} does not follow the last timestamp {pmax} of {pfile}"
                        ),
                    ));
                }
            }
            prev_max = Some((file.clone(), hi));
        }
        splits.push(quads);
    }
    let span = (times[times.len() - 1] - min) / interval;
    if span >= MAX_SNAPSHOTS {
        return Err(Error::Dataset(format!(
            "timestamps span {span} intervals of {interval}, more than {MAX_SNAPSHOTS} snapshots"
        )));
    }
    let num_snapshots = span as usize + 1;
    let test = splits.pop().unwrap();
    let valid = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    TkgDataset::new(
        num_entities,
        num_relations,
        num_snapshots,
        train,
        valid,
        test,
    )
}

/// Writes the original facts of `dataset` in the loader's layout, with the
/// snapshot index as the raw timestamp.
pub fn write_dataset(dataset: &TkgDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stat = format!(
        "{} {}\n",
        dataset.num_entities(),
        dataset.num_base_relations()
    );
    fs::write(dir.join("stat.txt"), stat).map_err(|e| Error::io(dir.join("stat.txt"), e))?;
    for split in Split::ALL {
        let mut text = String::new();
        for q in dataset
            .split(split)
            .iter()
            .filter(|q| q.phase == super::Phase::Original)
        {
            let _ = writeln!(
                text,
                "{}\t{}\t{}\t{}",
                q.subject, q.relation, q.object, q.timestamp
            );
        }
        let path = dir.join(format!("{}.txt", split.name()));
        fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
