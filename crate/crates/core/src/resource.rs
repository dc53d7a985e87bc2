//! First-come first-served resources with fixed, known service demands.
//!
//! Because every demand is known when it is queued and service is
//! non-preemptive, a grant can be computed on arrival: the unit that frees
//! earliest (lowest index on ties) takes the request.

use crate::units::Nanos;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub unit: usize,
    pub start: Nanos,
    pub end: Nanos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FcfsResource {
    free_at: Vec<Nanos>,
    busy_ns: u64,
}

impl FcfsResource {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "resource capacity must be positive");
        FcfsResource {
            free_at: vec![0; capacity],
            busy_ns: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.free_at.len()
    }

    /// Queue `demand` ns of service arriving at `now`. Callers must present
    /// arrivals in non-decreasing time order.
    pub fn occupy(&mut self, now: Nanos, demand: Nanos) -> Grant {
        let (unit, free) = self
            .free_at
            .iter()
            .copied()
            .enumerate()
            .min_by_key(|&(i, t)| (t, i))
            .expect("capacity is positive");
        let start = free.max(now);
        let end = start + demand;
        self.free_at[unit] = end;
        self.busy_ns += demand;
        Grant { unit, start, end }
    }

    pub fn busy_ns(&self) -> u64 {
        self.busy_ns
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_unit_serialises() {
        let mut r = FcfsResource::new(1);
        let a = r.occupy(0, 5);
        let b = r.occupy(0, 5);
        assert_eq!((a.start, a.end), (0, 5));
        assert_eq!((b.start, b.end), (5, 10));
    }

    #[test]
    fn third_waits_for_first() {
        let mut r = FcfsResource::new(2);
        r.occupy(0, 4);
        r.occupy(0, 4);
        let c = r.occupy(0, 4);
        assert_eq!(c.start, 4);
        assert_eq!(c.unit, 0);
    }

    #[test]
    fn zero_demand_is_instant() {
        let mut r = FcfsResource::new(1);
        let g = r.occupy(7, 0);
        assert_eq!((g.start, g.end), (7, 7));
    }
}
