use serde::{Deserialize, Serialize};

/// Joint names, limb tree, left/right pairing and report grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTopology {
    pub joints: Vec<String>,
    /// Limbs as ordered `(parent, child)` joint ids.
    pub limbs: Vec<(usize, usize)>,
    /// `lr_swap[j]` is the mirror-image joint of `j`.
    pub lr_swap: Vec<usize>,
    pub report_groups: Vec<ReportGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportGroup {
    pub name: String,
    pub joints: Vec<usize>,
}

pub mod joint {
    pub const HEAD: usize = 0;
    pub const NECK: usize = 1;
    pub const L_SHOULDER: usize = 2;
    pub const R_SHOULDER: usize = 3;
    pub const L_ELBOW: usize = 4;
    pub const R_ELBOW: usize = 5;
    pub const L_WRIST: usize = 6;
    pub const R_WRIST: usize = 7;
    pub const L_HIP: usize = 8;
    pub const R_HIP: usize = 9;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TopologyError {
    #[error("limb {limb} references joint {joint}, but only {count} joints exist")]
    BadLimb { limb: usize, joint: usize, count: usize },
    #[error("lr_swap has {found} entries for {expected} joints")]
    SwapLength { expected: usize, found: usize },
    #[error("lr_swap is not an involution at joint {0}")]
    NotInvolution(usize),
    #[error("mirror of limb {0} is not a limb")]
    NoMirrorLimb(usize),
    #[error("joint {joint} belongs to {count} report groups")]
    Grouping { joint: usize, count: usize },
}

impl Default for JointTopology {
    fn default() -> Self {
        Self::upper_body()
    }
}

impl JointTopology {
    /// Ten upper-body joints and the nine-limb tree rooted at the neck.
    pub fn upper_body() -> Self {
        use joint::*;
        let names = [
            "head", "neck", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
            "l_hip", "r_hip",
        ];
        let group = |name: &str, joints: &[usize]| ReportGroup {
            name: name.into(),
            joints: joints.to_vec(),
        };
        Self {
            joints: names.iter().map(|s| s.to_string()).collect(),
            limbs: vec![
                (NECK, HEAD),
                (NECK, L_SHOULDER),
                (NECK, R_SHOULDER),
                (L_SHOULDER, L_ELBOW),
                (R_SHOULDER, R_ELBOW),
                (L_ELBOW, L_WRIST),
                (R_ELBOW, R_WRIST),
                (NECK, L_HIP),
                (NECK, R_HIP),
            ],
            lr_swap: vec![HEAD, NECK, R_SHOULDER, L_SHOULDER, R_ELBOW, L_ELBOW, R_WRIST, L_WRIST, R_HIP, L_HIP],
            report_groups: vec![
                group("Head", &[HEAD, NECK]),
                group("Shoulder", &[L_SHOULDER, R_SHOULDER]),
                group("Hip", &[L_HIP, R_HIP]),
                group("Elbow", &[L_ELBOW, R_ELBOW]),
                group("Wrist", &[L_WRIST, R_WRIST]),
            ],
        }
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn num_limbs(&self) -> usize {
        self.limbs.len()
    }

    /// Number of part-affinity channels (two per limb).
    pub fn paf_channels(&self) -> usize {
        2 * self.limbs.len()
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let n = self.joints.len();
        for (l, &(a, b)) in self.limbs.iter().enumerate() {
            for j in [a, b] {
                if j >= n {
                    return Err(TopologyError::BadLimb { limb: l, joint: j, count: n });
                }
            }
        }
        if self.lr_swap.len() != n {
            return Err(TopologyError::SwapLength {
                expected: n,
                found: self.lr_swap.len(),
            });
        }
        for j in 0..n {
            if self.lr_swap[j] >= n || self.lr_swap[self.lr_swap[j]] != j {
                return Err(TopologyError::NotInvolution(j));
            }
        }
        self.try_limb_swap()?;
        if !self.report_groups.is_empty() {
            for j in 0..n {
                let count = self
                    .report_groups
                    .iter()
                    .filter(|g| g.joints.contains(&j))
                    .count();
                if count != 1 {
                    return Err(TopologyError::Grouping { joint: j, count });
                }
            }
        }
        Ok(())
    }

    fn try_limb_swap(&self) -> Result<Vec<usize>, TopologyError> {
        self.limbs
            .iter()
            .enumerate()
            .map(|(l, &(a, b))| {
                let mirrored = (self.lr_swap[a], self.lr_swap[b]);
                self.limbs
                    .iter()
                    .position(|&m| m == mirrored)
                    .ok_or(TopologyError::NoMirrorLimb(l))
            })
            .collect()
    }

    /// `limb_swap()[l]` is the limb whose endpoints are the mirrors of limb `l`'s.
    pub fn limb_swap(&self) -> Vec<usize> {
        self.try_limb_swap().expect("validated topology")
    }

    /// Topology restricted to `keep` joints (renumbered in the given order);
    /// limbs with a dropped endpoint disappear. Joints whose mirror is dropped
    /// become self-mirrored.
    pub fn subset(&self, keep: &[usize]) -> Self {
        let map = |j: usize| keep.iter().position(|&k| k == j);
        let limbs = self
            .limbs
            .iter()
            .filter_map(|&(a, b)| Some((map(a)?, map(b)?)))
            .collect();
        let mut lr_swap: Vec<usize> = keep
            .iter()
            .enumerate()
            .map(|(i, &j)| map(self.lr_swap[j]).unwrap_or(i))
            .collect();
        // a self-mirrored parent with a one-sided child has no mirror limb; keep it valid
        lr_swap.iter_mut().enumerate().for_each(|(i, s)| {
            if *s >= keep.len() {
                *s = i;
            }
        });
        let mut topo = Self {
            joints: keep.iter().map(|&j| self.joints[j].clone()).collect(),
            limbs,
            lr_swap,
            report_groups: Vec::new(),
        };
        if topo.try_limb_swap().is_err() {
            topo.lr_swap = (0..keep.len()).collect();
        }
        topo
    }
}
