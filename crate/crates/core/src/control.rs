//! Time-discretized control paths and strategy masks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::TimeGrid;
use crate::model::ControlConst;

/// Which of `u1..u4` are free to be optimized; the others are pinned at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StrategyMask(pub [bool; 4]);

impl StrategyMask {
    pub const ALL: StrategyMask = StrategyMask([true; 4]);
    pub const NONE: StrategyMask = StrategyMask([false; 4]);

    /// Named strategies: A all controls, B `u3,u4`, C `u4`, D `u1,u2`.
    pub fn strategy(letter: char) -> Option<Self> {
        match letter.to_ascii_uppercase() {
            'A' => Some(StrategyMask([true, true, true, true])),
            'B' => Some(StrategyMask([false, false, true, true])),
            'C' => Some(StrategyMask([false, false, false, true])),
            'D' => Some(StrategyMask([true, true, false, false])),
            _ => None,
        }
    }

    pub fn is_active(&self, j: usize) -> bool {
        self.0[j]
    }

    pub fn any(&self) -> bool {
        self.0.iter().any(|b| *b)
    }

    /// Zeroes the masked-off components.
    pub fn apply(&self, u: ControlConst) -> ControlConst {
        let mut a = u.to_array();
        for (v, on) in a.iter_mut().zip(self.0) {
            if !on {
                *v = 0.0;
            }
        }
        ControlConst::from_array(a)
    }

    pub fn bits(&self) -> u8 {
        self.0
            .iter()
            .enumerate()
            .fold(0, |acc, (j, on)| if *on { acc | (1 << j) } else { acc })
    }

    pub fn from_bits(bits: u8) -> Self {
        StrategyMask(std::array::from_fn(|j| bits & (1 << j) != 0))
    }
}

impl fmt::Display for StrategyMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for on in self.0 {
            f.write_str(if on { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Accepts a strategy letter (`A`..`D`) or a four-digit bit string such as
/// `1010`, where digit `j` enables `u_{j+1}`.
impl FromStr for StrategyMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut chars = s.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if let Some(m) = StrategyMask::strategy(c) {
                return Ok(m);
            }
        }
        if s.len() == 4 && s.chars().all(|c| c == '0' || c == '1') {
            let b: Vec<bool> = s.chars().map(|c| c == '1').collect();
            return Ok(StrategyMask([b[0], b[1], b[2], b[3]]));
        }
        Err(Error::Config(format!(
            "invalid strategy '{s}': expected A, B, C, D or a 4-digit mask like 1010"
        )))
    }
}

impl Serialize for StrategyMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StrategyMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Control values at every node of a grid together with the mask that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPath {
    pub grid: TimeGrid,
    pub values: Vec<ControlConst>,
    pub mask: StrategyMask,
}

impl ControlPath {
    pub fn zeros(grid: TimeGrid) -> Self {
        ControlPath {
            grid,
            values: vec![ControlConst::zero(); grid.n_nodes()],
            mask: StrategyMask::NONE,
        }
    }

    /// Same value at every node. The mask marks every nonzero component.
    pub fn constant(grid: TimeGrid, u: ControlConst) -> Self {
        let a = u.to_array();
        ControlPath {
            grid,
            values: vec![u; grid.n_nodes()],
            mask: StrategyMask(std::array::from_fn(|j| a[j] != 0.0)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.grid.n_nodes() {
            return Err(Error::Config(format!(
                "control path has {} nodes, grid has {}",
                self.values.len(),
                self.grid.n_nodes()
            )));
        }
        for (i, u) in self.values.iter().enumerate() {
            u.validate()
                .map_err(|e| Error::Domain(format!("node {i}: {e}")))?;
            for (j, v) in u.to_array().into_iter().enumerate() {
                if !self.mask.is_active(j) && v != 0.0 {
                    return Err(Error::Domain(format!(
                        "node {i}: masked control u{} = {v} must be 0",
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Value at the midpoint of step `i`, averaged from nodes `i` and `i+1`.
    #[inline]
    pub fn midpoint(&self, i: usize) -> ControlConst {
        let a = self.values[i].to_array();
        let b = self.values[i + 1].to_array();
        ControlConst::from_array(std::array::from_fn(|j| 0.5 * (a[j] + b[j])))
    }

    /// Largest absolute difference over nodes and components.
    pub fn sup_distance(&self, other: &ControlPath) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| {
                let (a, b) = (a.to_array(), b.to_array());
                (0..4).map(move |j| (a[j] - b[j]).abs())
            })
            .fold(0.0, f64::max)
    }
}
