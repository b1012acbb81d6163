//! Activation frequency and magnitude of hinge penalties by temporal
//! distance.

use serde::{Deserialize, Serialize};

use crate::losses::LossBreakdown;
use crate::Scalar;

/// Which hinge family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "LB")]
    Lb,
    #[serde(rename = "UB")]
    Ub,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Lb => "LB",
            Side::Ub => "UB",
        })
    }
}

/// One CSV row: `side,distance,step,count,frequency,magnitude`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HingeStatRow {
    pub side: Side,
    pub distance: usize,
    pub step: u64,
    pub count: u64,
    pub frequency: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Bucket {
    count: u64,
    active: u64,
    sum: f64,
}

/// Streaming per-distance counts. LB distances are `ℓ - k`, UB distances
/// `k - i`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HingeAccumulator {
    lb: Vec<Bucket>,
    ub: Vec<Bucket>,
    q_sq_sum: f64,
    q_count: u64,
}

impl HingeAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    fn bucket(v: &mut Vec<Bucket>, d: usize) -> &mut Bucket {
        if v.len() <= d {
            v.resize(d + 1, Bucket::default());
        }
        &mut v[d]
    }

    /// Adds the per-pair maps of one trajectory and its online values.
    pub fn add<T: Scalar>(&mut self, breakdown: &LossBreakdown<T>, q_online: &[T]) {
        for (&(k, l), &p) in &breakdown.per_pair_lb {
            self.add_pair(Side::Lb, l - k, p.to_f64_lossy());
        }
        for (&(i, k), &p) in &breakdown.per_pair_ub {
            self.add_pair(Side::Ub, k - i, p.to_f64_lossy());
        }
        for &q in q_online {
            let q = q.to_f64_lossy();
            self.q_sq_sum += q * q;
            self.q_count += 1;
        }
    }

    pub fn add_pair(&mut self, side: Side, distance: usize, penalty: f64) {
        let b = match side {
            Side::Lb => Self::bucket(&mut self.lb, distance),
            Side::Ub => Self::bucket(&mut self.ub, distance),
        };
        b.count += 1;
        b.sum += penalty;
        if penalty > 0.0 {
            b.active += 1;
        }
    }

    /// Mean `Q_θ(s_k, a_k)²` over the recorded values.
    pub fn mean_q_sq(&self) -> f64 {
        if self.q_count == 0 {
            0.0
        } else {
            self.q_sq_sum / self.q_count as f64
        }
    }

    /// One row per observed `(side, distance)`. Magnitudes are mean
    /// penalties (zeros included) divided by the mean `Q²`; when that mean
    /// is 0 the raw mean is reported.
    pub fn rows(&self, step: u64) -> Vec<HingeStatRow> {
        let norm = self.mean_q_sq();
        let norm = if norm > 0.0 { norm } else { 1.0 };
        let mut out = Vec::new();
        for (side, buckets) in [(Side::Lb, &self.lb), (Side::Ub, &self.ub)] {
            for (d, b) in buckets.iter().enumerate() {
                if b.count == 0 {
                    continue;
                }
                out.push(HingeStatRow {
                    side,
                    distance: d,
                    step,
                    count: b.count,
                    frequency: b.active as f64 / b.count as f64,
                    magnitude: b.sum / b.count as f64 / norm,
                });
            }
        }
        out
    }
}
