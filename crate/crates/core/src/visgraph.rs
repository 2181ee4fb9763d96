//! Natural visibility graphs of sampled series.
//!
//! Samples `a < b` are linked when every intermediate sample `c` lies
//! strictly below the segment joining `(a, y_a)` and `(b, y_b)`. Both
//! builders decide "strictly below" with the same exact orientation
//! predicate, so their edge sets agree bit for bit.

use robust::{orient2d, Coord};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::registry::Registry;

pub type VisibilityGraph = Graph;

/// A strategy for constructing the natural visibility graph of a series.
pub trait VisibilityBuilder: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(&self, series: &[f64]) -> Result<VisibilityGraph>;
}

/// True when `c` lies strictly below the line through `a` and `b`.
#[inline]
fn below(series: &[f64], a: usize, b: usize, c: usize) -> bool {
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    let pt = |i: usize| Coord {
        x: i as f64,
        y: series[i],
    };
    orient2d(pt(a), pt(b), pt(c)) < 0.0
}

fn check_finite(series: &[f64]) -> Result<()> {
    match series.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::InvalidInput {
            index,
            reason: "non-finite value in series".into(),
        }),
        None => Ok(()),
    }
}

/// Quadratic-pairs, cubic-worst-case reference construction.
#[derive(Debug, Default, Clone, Copy)]
pub struct NaiveBuilder;

impl VisibilityBuilder for NaiveBuilder {
    fn name(&self) -> &'static str {
        "naive"
    }

    fn build(&self, series: &[f64]) -> Result<VisibilityGraph> {
        check_finite(series)?;
        let n = series.len();
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if (a + 1..b).all(|c| below(series, a, b, c)) {
                    edges.push((a, b));
                }
            }
        }
        Ok(Graph::from_edges(n, edges))
    }
}

/// Divide and conquer: the maximum of a range sees every node reachable by
/// a monotone slope sweep on each side, and hides the two sides from each
/// other; recurse on both sides.
#[derive(Debug, Default, Clone, Copy)]
pub struct DivideConquerBuilder;

impl DivideConquerBuilder {
    /// Visit `from+1..=to` (or downwards) keeping the steepest node seen so far.
    fn sweep(series: &[f64], peak: usize, others: impl Iterator<Item = usize>, edges: &mut Vec<(usize, usize)>) {
        let mut steepest: Option<usize> = None;
        for j in others {
            let visible = match steepest {
                None => true,
                Some(c) => below(series, peak, j, c),
            };
            if visible {
                edges.push((peak.min(j), peak.max(j)));
                steepest = Some(j);
            }
        }
    }
}

impl VisibilityBuilder for DivideConquerBuilder {
    fn name(&self) -> &'static str {
        "divide-conquer"
    }

    fn build(&self, series: &[f64]) -> Result<VisibilityGraph> {
        check_finite(series)?;
        let n = series.len();
        let mut edges = Vec::with_capacity(4 * n);
        let mut stack = Vec::new();
        if n > 1 {
            stack.push((0usize, n - 1));
        }
        while let Some((lo, hi)) = stack.pop() {
            if lo >= hi {
                continue;
            }
            let mut peak = lo;
            for i in lo + 1..=hi {
                if series[i] > series[peak] {
                    peak = i;
                }
            }
            Self::sweep(series, peak, peak + 1..=hi, &mut edges);
            Self::sweep(series, peak, (lo..peak).rev(), &mut edges);
            if peak > lo {
                stack.push((lo, peak - 1));
            }
            if peak < hi {
                stack.push((peak + 1, hi));
            }
        }
        Ok(Graph::from_edges(n, edges))
    }
}

pub fn nvg_naive(series: &[f64]) -> Result<VisibilityGraph> {
    NaiveBuilder.build(series)
}

pub fn nvg_fast(series: &[f64]) -> Result<VisibilityGraph> {
    DivideConquerBuilder.build(series)
}

/// Builders available by name: `naive`, `divide-conquer` (alias `fast`).
pub fn registry() -> Registry<dyn VisibilityBuilder> {
    fn naive(_: &()) -> Box<dyn VisibilityBuilder> {
        Box::new(NaiveBuilder)
    }
    fn fast(_: &()) -> Box<dyn VisibilityBuilder> {
        Box::new(DivideConquerBuilder)
    }
    Registry::new("visibility builder")
        .with("naive", naive)
        .with("divide-conquer", fast)
        .with("fast", fast)
}
