use crate::error::{Error, Result};

/// Variables per driving node: `E, soc, T_b, P_hvch, P_hvac, a_t, P_b`.
pub const DRIVE_VARS: usize = 7;
/// Variables per charging node: `soc, T_b, P_hvch, P_hvac, P_grid, P_b`.
pub const CHARGE_VARS: usize = 6;

pub mod dv {
    pub const E: usize = 0;
    pub const SOC: usize = 1;
    pub const TEMP: usize = 2;
    pub const HVCH: usize = 3;
    pub const HVAC: usize = 4;
    pub const A_T: usize = 5;
    pub const P_B: usize = 6;
}

pub mod cv {
    pub const SOC: usize = 0;
    pub const TEMP: usize = 1;
    pub const HVCH: usize = 2;
    pub const HVAC: usize = 3;
    pub const P_GRID: usize = 4;
    pub const P_B: usize = 5;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentLayout {
    pub offset: usize,
    /// Grid index of the first node.
    pub first_node: usize,
    pub n_nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopLayout {
    pub charger: usize,
    pub grid_node: usize,
    /// Slot of `t_chg`; the slack follows, then the `tau` nodes.
    pub offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Drive(usize),
    Charge(usize),
}

/// Position of every decision variable in the flat vector. Phases are laid out
/// in route order: segment 0, stop 0, segment 1, ...
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionLayout {
    pub segments: Vec<SegmentLayout>,
    pub stops: Vec<StopLayout>,
    pub phases: Vec<Phase>,
    pub n_tau: usize,
    pub n: usize,
}

impl DecisionLayout {
    /// `charger_nodes` are grid indices in route order; a charger at the last
    /// node ends the trip with a stop.
    pub fn new(n_grid: usize, charger_nodes: &[usize], n_tau: usize) -> Result<Self> {
        if n_tau < 2 {
            return Err(Error::validation("n_tau", "need at least two tau nodes"));
        }
        if n_grid < 2 {
            return Err(Error::validation("road", "grid needs at least two nodes"));
        }
        let last = n_grid - 1;
        for (i, w) in charger_nodes.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::validation(format!("chargers[{}]", i + 1), "charger nodes must increase"));
            }
        }
        if let Some((i, _)) = charger_nodes.iter().enumerate().find(|(_, &k)| k == 0 || k > last) {
            return Err(Error::validation(format!("chargers[{i}]"), "charger is not on an interior or final grid node"));
        }
        let mut segments = Vec::new();
        let mut stops = Vec::new();
        let mut phases = Vec::new();
        let mut offset = 0;
        let mut start = 0;
        for (i, &k) in charger_nodes.iter().enumerate() {
            let n_nodes = k - start + 1;
            phases.push(Phase::Drive(segments.len()));
            segments.push(SegmentLayout { offset, first_node: start, n_nodes });
            offset += n_nodes * DRIVE_VARS;
            phases.push(Phase::Charge(stops.len()));
            stops.push(StopLayout { charger: i, grid_node: k, offset });
            offset += 2 + n_tau * CHARGE_VARS;
            start = k;
        }
        if start < last {
            let n_nodes = last - start + 1;
            phases.push(Phase::Drive(segments.len()));
            segments.push(SegmentLayout { offset, first_node: start, n_nodes });
            offset += n_nodes * DRIVE_VARS;
        }
        Ok(DecisionLayout { segments, stops, phases, n_tau, n: offset })
    }

    #[inline]
    pub fn drive(&self, seg: usize, k: usize, var: usize) -> usize {
        let s = &self.segments[seg];
        debug_assert!(k < s.n_nodes && var < DRIVE_VARS);
        s.offset + k * DRIVE_VARS + var
    }

    #[inline]
    pub fn t_chg(&self, stop: usize) -> usize {
        self.stops[stop].offset
    }

    #[inline]
    pub fn sigma(&self, stop: usize) -> usize {
        self.stops[stop].offset + 1
    }

    #[inline]
    pub fn charge(&self, stop: usize, j: usize, var: usize) -> usize {
        debug_assert!(j < self.n_tau && var < CHARGE_VARS);
        self.stops[stop].offset + 2 + j * CHARGE_VARS + var
    }

    /// Number of driving nodes over all segments.
    pub fn drive_nodes(&self) -> usize {
        self.segments.iter().map(|s| s.n_nodes).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_segment_with_final_charger() {
        let l = DecisionLayout::new(10, &[9], 5).unwrap();
        assert_eq!(l.n, 10 * 7 + 1 + 1 + 5 * 6);
        assert_eq!(l.n, 102);
        assert_eq!(l.phases, vec![Phase::Drive(0), Phase::Charge(0)]);
    }

    #[test]
    fn mid_route_charger_splits_segments() {
        let l = DecisionLayout::new(31, &[15], 20).unwrap();
        assert_eq!(l.segments[0].n_nodes, 16);
        assert_eq!(l.segments[1].n_nodes, 16);
        assert_eq!(l.segments[1].first_node, 15);
        assert_eq!(l.n, 32 * 7 + 2 + 20 * 6);
        // slots are unique and cover 0..n
        let mut seen = vec![false; l.n];
        for (si, s) in l.segments.iter().enumerate() {
            for k in 0..s.n_nodes {
                for v in 0..DRIVE_VARS {
                    let i = l.drive(si, k, v);
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
        }
        for st in 0..l.stops.len() {
            for i in [l.t_chg(st), l.sigma(st)] {
                assert!(!seen[i]);
                seen[i] = true;
            }
            for j in 0..l.n_tau {
                for v in 0..CHARGE_VARS {
                    let i = l.charge(st, j, v);
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn no_chargers_is_one_segment() {
        let l = DecisionLayout::new(6, &[], 20).unwrap();
        assert_eq!(l.n, 42);
        assert!(l.stops.is_empty());
    }

    #[test]
    fn invalid_layouts() {
        assert!(DecisionLayout::new(6, &[0], 20).is_err());
        assert!(DecisionLayout::new(6, &[6], 20).is_err());
        assert!(DecisionLayout::new(6, &[2], 1).is_err());
    }
}
