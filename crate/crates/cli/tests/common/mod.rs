#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// A 1000-line comma-separated rating log: a dense block of 36 users by 25
/// items where one rating in seven is a 4, plus 20 fringe users with five
/// ratings each, partly on items nobody in the dense block rated.
pub fn rating_log() -> String {
    let mut s = String::new();
    for u in 0..36 {
        for i in 0..25 {
            let rating = if (u + 2 * i) % 7 == 0 { 4 } else { 5 };
            s += &format!("user{u},item{i},{rating}\n");
        }
    }
    for f in 0..20 {
        for i in [25 + f % 5, f % 25, (f + 3) % 25, (f + 7) % 25, 25 + (f + 1) % 5] {
            s += &format!("fringe{f},item{i},5\n");
        }
    }
    s
}

/// Repeatedly deletes every user or item with fewer than `k` edges.
pub fn brute_force_kcore(pairs: &HashSet<(String, String)>, k: usize) -> HashSet<(String, String)> {
    let mut live = pairs.clone();
    loop {
        let mut du: HashMap<&str, usize> = HashMap::new();
        let mut di: HashMap<&str, usize> = HashMap::new();
        for (u, i) in &live {
            *du.entry(u).or_default() += 1;
            *di.entry(i).or_default() += 1;
        }
        let next: HashSet<(String, String)> = live
            .iter()
            .filter(|(u, i)| du[u.as_str()] >= k && di[i.as_str()] >= k)
            .cloned()
            .collect();
        if next.len() == live.len() {
            return live;
        }
        live = next;
    }
}

/// Distinct five-star pairs of a comma-separated log.
pub fn positive_pairs(log: &str) -> HashSet<(String, String)> {
    log.lines()
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[2] == "5").then(|| (f[0].to_string(), f[1].to_string()))
        })
        .collect()
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_civrec"))
}

pub fn civrec(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("CIVREC_LOG", "quiet")
        .output()
        .expect("binary runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}
