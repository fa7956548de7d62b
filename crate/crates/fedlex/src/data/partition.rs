//! Client partitions: pathological label shards and Dirichlet label skew.
//!
//! Both schemes assign every dataset index to exactly one client and then
//! cut each client's allocation into an 80/20 train/test split. Allocations
//! are repaired up to [`MIN_CLIENT_SAMPLES`] by moving single samples from
//! the largest client, so the split is always well defined.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::{ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};

/// Smallest allocation that still admits an 80/20 split with a non-empty
/// test side.
pub const MIN_CLIENT_SAMPLES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum PartitionScheme {
    Pathological { classes_per_client: usize },
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub clients: usize,
    pub seed: u64,
}

pub fn partition_pathological(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<ClientShard>> {
    let allocations = pathological_allocations(ds, spec)?;
    build_shards(ds, allocations, spec.seed)
}

pub fn partition_dirichlet(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<ClientShard>> {
    let allocations = dirichlet_allocations(ds, spec)?;
    build_shards(ds, allocations, spec.seed)
}

/// Index-level pathological allocation: sort by label, slice into
/// clients x classes_per_client near-equal shards, deal shards so clients
/// avoid repeated classes whenever a perfect assignment exists.
pub fn pathological_allocations(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    let cpc = match spec.scheme {
        PartitionScheme::Pathological { classes_per_client } => classes_per_client,
        _ => {
            return Err(Error::ContractViolation(
                "pathological partitioner called with a non-pathological spec".to_string(),
            ))
        }
    };
    validate_dataset(ds, spec)?;
    if cpc == 0 || cpc > ds.classes() {
        return Err(Error::InvalidConfig {
            key: "classes_per_client".to_string(),
            message: format!(
                "classes_per_client must be in 1..={}, got {cpc}",
                ds.classes()
            ),
        });
    }
    let total_shards = spec.clients * cpc;
    if total_shards < ds.classes() {
        return Err(Error::InvalidConfig {
            key: "classes_per_client".to_string(),
            message: format!(
                "clients x classes_per_client = {total_shards} cannot cover {} classes",
                ds.classes()
            ),
        });
    }
    let n = ds.len();
    if n < total_shards || cpc * (n / total_shards) < MIN_CLIENT_SAMPLES {
        return Err(Error::InvalidConfig {
            key: "clients".to_string(),
            message: format!(
                "{n} samples over {total_shards} shards leaves clients below \
                 {MIN_CLIENT_SAMPLES} samples"
            ),
        });
    }

    // stable sort keeps dataset order within a label
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| ds.labels()[i]);

    // near-equal shard boundaries; the first n % total_shards shards get one
    // extra sample
    let base = n / total_shards;
    let rem = n % total_shards;
    let mut bounds = Vec::with_capacity(total_shards + 1);
    let mut at = 0;
    bounds.push(0);
    for s in 0..total_shards {
        at += base + usize::from(s < rem);
        bounds.push(at);
    }
    let shard_label: Vec<usize> = (0..total_shards)
        .map(|s| ds.labels()[order[bounds[s]]])
        .collect();

    let held = deal_shards(&shard_label, spec.clients, cpc, spec.seed);

    let allocations = held
        .into_iter()
        .map(|shards| {
            let mut idxs = Vec::new();
            for s in shards {
                idxs.extend_from_slice(&order[bounds[s]..bounds[s + 1]]);
            }
            idxs
        })
        .collect();
    Ok(allocations)
}

/// Greedy seeded dealing plus a swap repair that removes same-class pairs
/// whenever a swap strictly reduces them.
fn deal_shards(shard_label: &[usize], clients: usize, cpc: usize, seed: u64) -> Vec<Vec<usize>> {
    let total = shard_label.len();
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut stream(seed, "pathological-deal", &[]));

    let mut used = vec![false; total];
    let mut held: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for _ in 0..cpc {
        for client_held in held.iter_mut() {
            let classes: BTreeSet<usize> =
                client_held.iter().map(|&s| shard_label[s]).collect();
            let pick = order
                .iter()
                .copied()
                .find(|&s| !used[s] && !classes.contains(&shard_label[s]))
                .or_else(|| order.iter().copied().find(|&s| !used[s]))
                .expect("shard count equals clients x cpc");
            used[pick] = true;
            client_held.push(pick);
        }
    }

    let dup = |held: &[Vec<usize>]| -> usize {
        held.iter()
            .map(|shards| {
                let distinct: BTreeSet<usize> = shards.iter().map(|&s| shard_label[s]).collect();
                shards.len() - distinct.len()
            })
            .sum()
    };
    loop {
        let before = dup(&held);
        if before == 0 {
            break;
        }
        let mut improved = false;
        'search: for a in 0..clients {
            for b in 0..clients {
                if a == b {
                    continue;
                }
                for i in 0..cpc {
                    for j in 0..cpc {
                        let (sa, sb) = (held[a][i], held[b][j]);
                        held[a][i] = sb;
                        held[b][j] = sa;
                        if dup(&held) < before {
                            improved = true;
                            break 'search;
                        }
                        held[a][i] = sa;
                        held[b][j] = sb;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    held
}

/// Index-level Dirichlet allocation: for each class, a Dirichlet(alpha)
/// draw over clients sets the class's per-client proportions, realized with
/// largest-remainder rounding.
pub fn dirichlet_allocations(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    let alpha = match spec.scheme {
        PartitionScheme::Dirichlet { alpha } => alpha,
        _ => {
            return Err(Error::ContractViolation(
                "dirichlet partitioner called with a non-dirichlet spec".to_string(),
            ))
        }
    };
    validate_dataset(ds, spec)?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidConfig {
            key: "alpha".to_string(),
            message: format!("alpha must be a positive real, got {alpha}"),
        });
    }
    let n = ds.len();
    if n < MIN_CLIENT_SAMPLES * spec.clients {
        return Err(Error::InvalidConfig {
            key: "clients".to_string(),
            message: format!(
                "{n} samples cannot give {} clients {MIN_CLIENT_SAMPLES} samples each",
                spec.clients
            ),
        });
    }

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }

    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut allocations: Vec<Vec<usize>> = vec![Vec::new(); spec.clients];
    for (&class, idxs) in &by_class {
        let mut rng = stream(spec.seed, "dirichlet", &[class as u64]);
        let mut draws: Vec<f64> = (0..spec.clients).map(|_| gamma.sample(&mut rng)).collect();
        let sum: f64 = draws.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            // tiny alpha can underflow every draw to zero; fall back to uniform
            draws = vec![1.0; spec.clients];
        }
        let total: f64 = draws.iter().sum();
        let targets: Vec<f64> = draws
            .iter()
            .map(|d| d / total * idxs.len() as f64)
            .collect();
        let counts = largest_remainder(&targets, idxs.len());
        let mut at = 0;
        for (client, &count) in counts.iter().enumerate() {
            allocations[client].extend_from_slice(&idxs[at..at + count]);
            at += count;
        }
    }

    repair_small_allocations(&mut allocations);
    Ok(allocations)
}

/// Moves single samples from the currently largest client until every
/// client holds at least [`MIN_CLIENT_SAMPLES`]. Feasibility is guaranteed
/// by the n >= MIN * clients validation.
fn repair_small_allocations(allocations: &mut [Vec<usize>]) {
    loop {
        let Some(deficit) = (0..allocations.len())
            .find(|&c| allocations[c].len() < MIN_CLIENT_SAMPLES)
        else {
            return;
        };
        let donor = (0..allocations.len())
            .max_by(|&a, &b| {
                allocations[a]
                    .len()
                    .cmp(&allocations[b].len())
                    .then(b.cmp(&a))
            })
            .expect("at least one client");
        if allocations[donor].len() <= MIN_CLIENT_SAMPLES {
            // unreachable when n >= MIN * clients was validated; bail rather
            // than loop
            debug_assert!(false, "repair ran out of donors");
            return;
        }
        let moved = allocations[donor].pop().expect("donor non-empty");
        allocations[deficit].push(moved);
    }
}

/// Integer apportionment: floor every target, then hand out the remaining
/// units by largest fractional remainder (ties to the lower index).
fn largest_remainder(targets: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = targets.iter().map(|t| t.floor().max(0.0) as usize).collect();
    let assigned: usize = counts.iter().sum();
    if assigned > total {
        // float swell; trim the largest entries
        let mut excess = assigned - total;
        while excess > 0 {
            let i = (0..counts.len())
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .expect("non-empty targets");
            counts[i] -= 1;
            excess -= 1;
        }
        return counts;
    }
    let mut extra = total - assigned;
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.partial_cmp(&fa).expect("finite targets").then(a.cmp(&b))
    });
    for &i in &order {
        if extra == 0 {
            break;
        }
        if targets[i] - targets[i].floor() > 0.0 {
            counts[i] += 1;
            extra -= 1;
        }
    }
    let mut k = 0;
    while extra > 0 {
        counts[order[k % order.len()]] += 1;
        extra -= 1;
        k += 1;
    }
    debug_assert_eq!(counts.iter().sum::<usize>(), total);
    counts
}

/// 80/20 train/test split of one client's allocation, stratified by label
/// when every present label has at least [`MIN_CLIENT_SAMPLES`] samples.
pub fn split_train_test(id: usize, allocation: Dataset, seed: u64) -> Result<ClientShard> {
    let n = allocation.len();
    if n < MIN_CLIENT_SAMPLES {
        return Err(Error::ShardTooSmall { got: n, min: MIN_CLIENT_SAMPLES });
    }
    let train_count = (0.8 * n as f64).round() as usize;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in allocation.labels().iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let stratified = groups.values().all(|g| g.len() >= MIN_CLIENT_SAMPLES);
    let mut rng = stream(seed, "train-test-split", &[]);
    let (train_idx, test_idx) = if stratified {
        let labels: Vec<usize> = groups.keys().copied().collect();
        let targets: Vec<f64> = labels
            .iter()
            .map(|l| 0.8 * groups[l].len() as f64)
            .collect();
        let counts = largest_remainder(&targets, train_count);
        let mut train = Vec::with_capacity(train_count);
        let mut test = Vec::with_capacity(n - train_count);
        for (k, l) in labels.iter().enumerate() {
            let g = groups.get_mut(l).expect("key from iteration");
            g.shuffle(&mut rng);
            train.extend_from_slice(&g[..counts[k]]);
            test.extend_from_slice(&g[counts[k]..]);
        }
        (train, test)
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        (all[..train_count].to_vec(), all[train_count..].to_vec())
    };
    Ok(ClientShard {
        id,
        train: allocation.subset(&train_idx)?,
        test: allocation.subset(&test_idx)?,
    })
}

fn validate_dataset(ds: &Dataset, spec: &PartitionSpec) -> Result<()> {
    if spec.clients == 0 {
        return Err(Error::InvalidConfig {
            key: "clients".to_string(),
            message: "need at least one client".to_string(),
        });
    }
    if ds.len() < ds.classes() {
        return Err(Error::InvalidInput(format!(
            "{} samples cannot cover {} classes",
            ds.len(),
            ds.classes()
        )));
    }
    Ok(())
}

fn build_shards(ds: &Dataset, allocations: Vec<Vec<usize>>, seed: u64) -> Result<Vec<ClientShard>> {
    allocations
        .into_iter()
        .enumerate()
        .map(|(id, idxs)| {
            let alloc = ds.subset(&idxs)?;
            split_train_test(id, alloc, derive_seed(seed, "train-test-split", &[id as u64]))
        })
        .collect()
}
