use std::collections::{HashMap, VecDeque};

/// Maximal subset of `positives` in which every remaining user and item has
/// at least `k` interactions. Order of surviving pairs is preserved.
///
/// Users and items are separate id spaces even when their numbers coincide.
pub fn k_core_filter(positives: &[(usize, usize)], k: usize) -> Vec<(usize, usize)> {
    assert!(k >= 1, "k must be at least 1");
    let mut user_edges: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut item_edges: HashMap<usize, Vec<usize>> = HashMap::new();
    for (e, &(u, i)) in positives.iter().enumerate() {
        user_edges.entry(u).or_default().push(e);
        item_edges.entry(i).or_default().push(e);
    }
    let mut user_deg: HashMap<usize, usize> = user_edges.iter().map(|(&u, v)| (u, v.len())).collect();
    let mut item_deg: HashMap<usize, usize> = item_edges.iter().map(|(&i, v)| (i, v.len())).collect();
    let mut alive = vec![true; positives.len()];

    #[derive(Clone, Copy)]
    enum Side {
        User(usize),
        Item(usize),
    }
    let mut queue: VecDeque<Side> = VecDeque::new();
    let mut sorted_users: Vec<_> = user_deg.iter().filter(|(_, &d)| d < k).map(|(&u, _)| u).collect();
    sorted_users.sort_unstable();
    queue.extend(sorted_users.into_iter().map(Side::User));
    let mut sorted_items: Vec<_> = item_deg.iter().filter(|(_, &d)| d < k).map(|(&i, _)| i).collect();
    sorted_items.sort_unstable();
    queue.extend(sorted_items.into_iter().map(Side::Item));

    let mut removed_users = std::collections::HashSet::new();
    let mut removed_items = std::collections::HashSet::new();
    while let Some(node) = queue.pop_front() {
        let edges = match node {
            Side::User(u) => {
                if !removed_users.insert(u) {
                    continue;
                }
                &user_edges[&u]
            }
            Side::Item(i) => {
                if !removed_items.insert(i) {
                    continue;
                }
                &item_edges[&i]
            }
        };
        for &e in edges {
            if !alive[e] {
                continue;
            }
            alive[e] = false;
            let (u, i) = positives[e];
            match node {
                Side::User(_) => {
                    let d = item_deg.get_mut(&i).expect("item seen");
                    *d -= 1;
                    if *d < k && !removed_items.contains(&i) {
                        queue.push_back(Side::Item(i));
                    }
                }
                Side::Item(_) => {
                    let d = user_deg.get_mut(&u).expect("user seen");
                    *d -= 1;
                    if *d < k && !removed_users.contains(&u) {
                        queue.push_back(Side::User(u));
                    }
                }
            }
        }
    }
    positives
        .iter()
        .zip(alive)
        .filter_map(|(&p, a)| a.then_some(p))
        .collect()
}
