//! On-disk bundle layout.
//!
//! A bundle directory holds `train.txt`, `valid.txt` and `test.txt` with one
//! `user_idx item_idx` pair per line, and `meta.txt` with `key=value` counts
//! and the split seed. Training pairs from the random subset come first;
//! `train_random` in the header says how many. When id maps are available,
//! `users.txt` and `items.txt` list external ids in index order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DataError, DatasetBundle, IdMap, IndexMap, Provenance, Split};

pub const BUNDLE_FILES: [&str; 4] = ["meta.txt", "train.txt", "valid.txt", "test.txt"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn pairs_text(pairs: &[(usize, usize)]) -> String {
    let mut s = String::with_capacity(pairs.len() * 10);
    for (u, i) in pairs {
        let _ = writeln!(s, "{u} {i}");
    }
    s
}

pub fn write_bundle(dir: &Path, bundle: &DatasetBundle, maps: Option<&IndexMap>) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    // random-subset records first so provenance survives the two-column format
    let train = bundle.train();
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by_key(|&e| train.provenance[e] != Provenance::Random);
    let train_pairs: Vec<_> = order.iter().map(|&e| train.pairs[e]).collect();
    let n_random = train.provenance.iter().filter(|p| **p == Provenance::Random).count();

    let meta = format!(
        "users={}\nitems={}\ntrain={}\nvalid={}\ntest={}\ntrain_random={}\nseed={}\n",
        bundle.n_users(),
        bundle.n_items(),
        train.len(),
        bundle.valid().len(),
        bundle.test().len(),
        n_random,
        bundle.seed()
    );
    let files = [
        ("meta.txt", meta),
        ("train.txt", pairs_text(&train_pairs)),
        ("valid.txt", pairs_text(&bundle.valid().pairs)),
        ("test.txt", pairs_text(&bundle.test().pairs)),
    ];
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body).map_err(io_err(&p))?;
    }
    if let Some(maps) = maps {
        for (name, m) in [("users.txt", &maps.users), ("items.txt", &maps.items)] {
            let p = dir.join(name);
            let mut body = m.ids().join("\n");
            body.push('\n');
            fs::write(&p, body).map_err(io_err(&p))?;
        }
    }
    Ok(())
}

fn read_pairs(path: &Path) -> Result<Vec<(usize, usize)>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace().map(str::parse::<usize>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(u)), Some(Ok(i)), None) => out.push((u, i)),
            _ => {
                return Err(DataError::Parse {
                    line: n + 1,
                    msg: format!("{}: expected \"user_idx item_idx\"", path.display()),
                })
            }
        }
    }
    Ok(out)
}

fn read_ids(path: &Path) -> Result<Option<IdMap>, DataError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut m = IdMap::new();
    for line in text.lines() {
        m.intern(line);
    }
    Ok(Some(m))
}

/// Loads a bundle written by [`write_bundle`], plus id maps when present.
pub fn read_bundle(dir: &Path) -> Result<(DatasetBundle, Option<IndexMap>), DataError> {
    let meta_path = dir.join("meta.txt");
    let meta = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let mut get = std::collections::HashMap::new();
    for line in meta.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DataError::BadMeta(format!("line {line:?}")))?;
        let v: u64 = v
            .trim()
            .parse()
            .map_err(|_| DataError::BadMeta(format!("{k} is not an integer")))?;
        get.insert(k.trim().to_string(), v);
    }
    let field = |k: &str| {
        get.get(k)
            .copied()
            .ok_or_else(|| DataError::BadMeta(format!("missing {k}")))
    };
    let n_users = field("users")? as usize;
    let n_items = field("items")? as usize;
    let n_random = field("train_random")? as usize;
    let seed = field("seed")?;

    let train = read_pairs(&dir.join("train.txt"))?;
    let valid = read_pairs(&dir.join("valid.txt"))?;
    let test = read_pairs(&dir.join("test.txt"))?;
    for (k, got) in [("train", train.len()), ("valid", valid.len()), ("test", test.len())] {
        if field(k)? as usize != got {
            return Err(DataError::BadMeta(format!("{k} count {} but file has {got}", field(k)?)));
        }
    }
    if n_random > train.len() {
        return Err(DataError::BadMeta("train_random exceeds train".into()));
    }
    let mut provenance = vec![Provenance::Random; n_random];
    provenance.resize(train.len(), Provenance::Biased);
    let bundle = DatasetBundle::new(
        n_users,
        n_items,
        Split::new(train, provenance),
        Split::uniform(valid, Provenance::Random),
        Split::uniform(test, Provenance::Random),
        seed,
    )?;
    let maps = match (read_ids(&dir.join("users.txt"))?, read_ids(&dir.join("items.txt"))?) {
        (Some(users), Some(items)) => Some(IndexMap { users, items }),
        _ => None,
    };
    Ok((bundle, maps))
}
