//! All-prefix-sums over an arbitrary associative combination function.
//!
//! The parallel path is a Blelloch up-sweep/down-sweep over a binary tree whose
//! shape depends only on the input length, so the result of a scan is
//! bitwise reproducible for any number of worker threads. Positions past the
//! end of the input (padding up to the next power of two) act as the neutral
//! element and never reach the combine function.
//!
//! Combine is applied as `combine(earlier, later)`: for a forward scan
//! `out[k] = a[0] ⊗ a[1] ⊗ … ⊗ a[k]`, for a reversed scan
//! `out[k] = a[k] ⊗ a[k+1] ⊗ … ⊗ a[T-1]`.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use thiserror::Error;

/// Inputs shorter than this run through the sequential fold.
pub const DEFAULT_CUTOFF: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScanError {
    #[error("scan input is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reversed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    /// Left-to-right (or right-to-left) fold; O(T) depth.
    Sequential,
    /// Up-sweep/down-sweep tree; inputs shorter than `cutoff` are folded
    /// sequentially instead.
    Parallel { cutoff: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanPlan {
    pub direction: Direction,
    pub execution: Execution,
}

impl ScanPlan {
    pub fn forward() -> Self {
        Self {
            direction: Direction::Forward,
            execution: Execution::Parallel {
                cutoff: DEFAULT_CUTOFF,
            },
        }
    }

    pub fn reversed() -> Self {
        Self {
            direction: Direction::Reversed,
            ..Self::forward()
        }
    }

    pub fn sequential(mut self) -> Self {
        self.execution = Execution::Sequential;
        self
    }

    /// Parallel tree execution with the given cutoff (0 forces the tree for
    /// every length).
    pub fn with_cutoff(mut self, cutoff: usize) -> Self {
        self.execution = Execution::Parallel { cutoff };
        self
    }
}

impl Default for ScanPlan {
    fn default() -> Self {
        Self::forward()
    }
}

/// Structural counters for one scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScanStats {
    /// Calls into the user combine function.
    pub combines: usize,
    /// Number of tree levels (0 for the sequential fold).
    pub depth: usize,
}

pub fn scan<E, F>(elements: Vec<E>, combine: F, plan: &ScanPlan) -> Result<Vec<E>, ScanError>
where
    E: Clone + Send + Sync,
    F: Fn(&E, &E) -> E + Sync,
{
    try_scan(elements, |a: &E, b: &E| Ok::<E, ScanError>(combine(a, b)), plan)
}

pub fn try_scan<E, X, F>(elements: Vec<E>, combine: F, plan: &ScanPlan) -> Result<Vec<E>, X>
where
    E: Clone + Send + Sync,
    X: From<ScanError> + Send,
    F: Fn(&E, &E) -> Result<E, X> + Sync,
{
    try_scan_with_stats(elements, combine, plan).map(|(out, _)| out)
}

pub fn try_scan_with_stats<E, X, F>(
    elements: Vec<E>,
    combine: F,
    plan: &ScanPlan,
) -> Result<(Vec<E>, ScanStats), X>
where
    E: Clone + Send + Sync,
    X: From<ScanError> + Send,
    F: Fn(&E, &E) -> Result<E, X> + Sync,
{
    if elements.is_empty() {
        return Err(ScanError::Empty.into());
    }
    let counter = AtomicUsize::new(0);
    let counted = |a: &E, b: &E| {
        counter.fetch_add(1, Ordering::Relaxed);
        combine(a, b)
    };

    let cutoff = match plan.execution {
        Execution::Sequential => usize::MAX,
        Execution::Parallel { cutoff } => cutoff,
    };
    let (out, depth) = if elements.len() < cutoff {
        (fold(elements, &counted, plan.direction)?, 0)
    } else {
        match plan.direction {
            Direction::Forward => tree_scan(elements, &counted, cutoff)?,
            Direction::Reversed => {
                let mut rev = elements;
                rev.reverse();
                let (mut out, depth) = tree_scan(rev, &|a: &E, b: &E| counted(b, a), cutoff)?;
                out.reverse();
                (out, depth)
            }
        }
    };
    let stats = ScanStats {
        combines: counter.load(Ordering::Relaxed),
        depth,
    };
    Ok((out, stats))
}

/// Plain O(T) fold; the reference the tree scan is checked against.
pub fn sequential_scan<E, F>(
    elements: Vec<E>,
    combine: F,
    direction: Direction,
) -> Result<Vec<E>, ScanError>
where
    E: Clone,
    F: Fn(&E, &E) -> E,
{
    if elements.is_empty() {
        return Err(ScanError::Empty);
    }
    fold(elements, &|a: &E, b: &E| Ok::<E, ScanError>(combine(a, b)), direction)
}

fn fold<E, X, F>(elements: Vec<E>, combine: &F, direction: Direction) -> Result<Vec<E>, X>
where
    E: Clone,
    F: Fn(&E, &E) -> Result<E, X>,
{
    let mut out: Vec<E> = Vec::with_capacity(elements.len());
    match direction {
        Direction::Forward => {
            for e in elements {
                let next = match out.last() {
                    Some(acc) => combine(acc, &e)?,
                    None => e,
                };
                out.push(next);
            }
        }
        Direction::Reversed => {
            for e in elements.into_iter().rev() {
                let next = match out.last() {
                    Some(acc) => combine(&e, acc)?,
                    None => e,
                };
                out.push(next);
            }
            out.reverse();
        }
    }
    Ok(out)
}

fn join<E, X, F>(left: &Option<E>, right: &Option<E>, combine: &F) -> Result<Option<E>, X>
where
    E: Clone,
    F: Fn(&E, &E) -> Result<E, X>,
{
    Ok(match (left, right) {
        (Some(a), Some(b)) => Some(combine(a, b)?),
        (Some(a), None) => Some(a.clone()),
        (None, Some(b)) => Some(b.clone()),
        (None, None) => None,
    })
}

fn map_level<T, X, G>(count: usize, cutoff: usize, g: G) -> Result<Vec<T>, X>
where
    T: Send,
    X: Send,
    G: Fn(usize) -> Result<T, X> + Sync,
{
    if count >= cutoff.max(2) {
        (0..count).into_par_iter().map(&g).collect()
    } else {
        (0..count).map(g).collect()
    }
}

/// Inclusive forward scan; returns the output and the number of tree levels.
fn tree_scan<E, X, F>(leaves: Vec<E>, combine: &F, cutoff: usize) -> Result<(Vec<E>, usize), X>
where
    E: Clone + Send + Sync,
    X: Send,
    F: Fn(&E, &E) -> Result<E, X> + Sync,
{
    let len = leaves.len();
    let width = len.next_power_of_two();
    let depth = width.trailing_zeros() as usize;

    let mut level0: Vec<Option<E>> = Vec::with_capacity(width);
    level0.extend(leaves.into_iter().map(Some));
    level0.resize_with(width, || None);

    // Up-sweep: sums[l][i] covers leaves [i·2^l, (i+1)·2^l).
    let mut sums = vec![level0];
    for _ in 0..depth {
        let prev = sums.last().expect("level 0 exists");
        let next = map_level(prev.len() / 2, cutoff, |i| {
            join(&prev[2 * i], &prev[2 * i + 1], combine)
        })?;
        sums.push(next);
    }

    // Down-sweep: excl[i] is the combination of everything left of node i.
    // Only leaves 1..len-1 are needed, so nodes starting past len-1 are skipped.
    let mut excl: Vec<Option<E>> = vec![None];
    for l in (0..depth).rev() {
        let node_width = 1usize << l;
        let needed = ((len - 1) / node_width + 1).min(sums[l].len());
        let level = &sums[l];
        let parent = &excl;
        excl = map_level(needed, cutoff, |i| {
            let up = &parent[i / 2];
            if i % 2 == 0 {
                Ok(up.clone())
            } else {
                join(up, &level[i - 1], combine)
            }
        })?;
    }

    let total = sums[depth][0].clone().expect("non-empty input");
    let mut out: Vec<E> = Vec::with_capacity(len);
    for k in 0..len - 1 {
        out.push(excl[k + 1].clone().expect("prefix of a non-empty range"));
    }
    out.push(total);
    Ok((out, depth))
}
