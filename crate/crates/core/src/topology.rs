//! Control topology: which robots each aerial unit observes and controls, the
//! control graph that links units controlling at least two common robots, and
//! the conditions under which the formation controller is known to converge.
//!
//! Conditions checked by [`check_conditions`]:
//!
//! * TC1: the control graph is connected.
//! * TC2: every robot is controlled by some unit.
//! * TC3: neighbors share exactly two robots, non-neighbors share none.
//! * TC4: no robot is controlled by three or more units.
//! * TC5: the control graph is a tree.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::TopologyError;
use crate::ids::{RobotId, UavId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSets {
    pub observed: BTreeSet<RobotId>,
    pub controlled: BTreeSet<RobotId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyState {
    units: BTreeMap<UavId, UnitSets>,
    edges: BTreeSet<(UavId, UavId)>,
    /// Simulation time at which this topology became active.
    pub activation_time: f64,
}

impl TopologyState {
    /// Builds a topology from per-unit sets. Controlled robots that are not in
    /// the observed set are added to it.
    pub fn new(units: BTreeMap<UavId, UnitSets>, activation_time: f64) -> Self {
        let units: BTreeMap<UavId, UnitSets> = units
            .into_iter()
            .map(|(id, mut sets)| {
                sets.observed.extend(sets.controlled.iter().copied());
                (id, sets)
            })
            .collect();
        let edges = derive_edges(&units);
        Self {
            units,
            edges,
            activation_time,
        }
    }

    /// Topology where each unit observes exactly what it controls.
    pub fn from_controlled(controlled: BTreeMap<UavId, BTreeSet<RobotId>>, activation_time: f64) -> Self {
        Self::new(
            controlled
                .into_iter()
                .map(|(id, c)| {
                    (
                        id,
                        UnitSets {
                            observed: c.clone(),
                            controlled: c,
                        },
                    )
                })
                .collect(),
            activation_time,
        )
    }

    pub fn units(&self) -> &BTreeMap<UavId, UnitSets> {
        &self.units
    }

    pub fn controlled(&self, uav: UavId) -> Option<&BTreeSet<RobotId>> {
        self.units.get(&uav).map(|u| &u.controlled)
    }

    pub fn edges(&self) -> &BTreeSet<(UavId, UavId)> {
        &self.edges
    }

    pub fn neighbors(&self, uav: UavId) -> impl Iterator<Item = UavId> + '_ {
        self.edges.iter().filter_map(move |(a, b)| {
            if *a == uav {
                Some(*b)
            } else if *b == uav {
                Some(*a)
            } else {
                None
            }
        })
    }

    /// Units that control `robot`.
    pub fn controllers(&self, robot: RobotId) -> impl Iterator<Item = UavId> + '_ {
        self.units
            .iter()
            .filter(move |(_, s)| s.controlled.contains(&robot))
            .map(|(id, _)| *id)
    }

    /// The two robots shared with each control-graph neighbor, when the
    /// intersection has exactly two members.
    pub fn shared_pairs(&self, uav: UavId) -> BTreeMap<UavId, [RobotId; 2]> {
        let Some(mine) = self.controlled(uav) else {
            return BTreeMap::new();
        };
        self.neighbors(uav)
            .filter_map(|k| {
                let common: Vec<RobotId> = mine.intersection(&self.units[&k].controlled).copied().collect();
                (common.len() == 2).then(|| (k, [common[0], common[1]]))
            })
            .collect()
    }

    /// Same controlled sets, ignoring observed sets and activation time.
    pub fn same_assignment(&self, other: &TopologyState) -> bool {
        self.units.len() == other.units.len()
            && self
                .units
                .iter()
                .zip(other.units.iter())
                .all(|((a, sa), (b, sb))| a == b && sa.controlled == sb.controlled)
    }
}

/// Control-graph edges recomputed from the controlled sets.
pub fn derive_edges(units: &BTreeMap<UavId, UnitSets>) -> BTreeSet<(UavId, UavId)> {
    let ids: Vec<UavId> = units.keys().copied().collect();
    let mut edges = BTreeSet::new();
    for (n, a) in ids.iter().enumerate() {
        for b in &ids[n + 1..] {
            if units[a].controlled.intersection(&units[b].controlled).count() >= 2 {
                edges.insert((*a, *b));
            }
        }
    }
    edges
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Class {
    /// All five conditions hold: globally convergent.
    ClassP,
    /// Connected and covering: locally stable.
    ClassQ,
    Invalid,
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Class::ClassP => "P",
            Class::ClassQ => "Q",
            Class::Invalid => "invalid",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub satisfied: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyClass {
    pub class: Class,
    /// Verdicts for TC1..TC5, in order.
    pub conditions: [ConditionReport; 5],
    /// Robots of the team that no unit controls.
    pub uncontrolled: Vec<RobotId>,
}

impl TopologyClass {
    pub fn holds(&self, index: usize) -> bool {
        self.conditions[index - 1].satisfied
    }
}

impl fmt::Display for TopologyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.conditions.iter().enumerate() {
            let verdict = if c.satisfied { "ok" } else { "VIOLATED" };
            writeln!(f, "TC{}: {verdict} ({})", i + 1, c.detail)?;
        }
        write!(f, "class: {}", self.class)
    }
}

fn connected(nodes: &[UavId], edges: &BTreeSet<(UavId, UavId)>) -> bool {
    let Some(first) = nodes.first() else {
        return false;
    };
    let mut seen = BTreeSet::from([*first]);
    let mut stack = vec![*first];
    while let Some(n) = stack.pop() {
        for (a, b) in edges {
            let next = if *a == n {
                *b
            } else if *b == n {
                *a
            } else {
                continue;
            };
            if seen.insert(next) {
                stack.push(next);
            }
        }
    }
    seen.len() == nodes.len()
}

fn report(satisfied: bool, detail: impl Into<String>) -> ConditionReport {
    ConditionReport {
        satisfied,
        detail: detail.into(),
    }
}

pub fn check_conditions(t: &TopologyState, team: &BTreeSet<RobotId>) -> TopologyClass {
    let nodes: Vec<UavId> = t.units.keys().copied().collect();
    let edges = derive_edges(&t.units);

    let is_connected = connected(&nodes, &edges);
    let tc1 = report(
        is_connected,
        if nodes.is_empty() {
            "no aerial units".to_string()
        } else if is_connected {
            format!("{} units connected", nodes.len())
        } else {
            "control graph is disconnected".to_string()
        },
    );

    let covered: BTreeSet<RobotId> = t.units.values().flat_map(|s| s.controlled.iter().copied()).collect();
    let uncontrolled: Vec<RobotId> = team.difference(&covered).copied().collect();
    let tc2 = report(
        uncontrolled.is_empty(),
        if uncontrolled.is_empty() {
            "every robot controlled".to_string()
        } else {
            let ids: Vec<String> = uncontrolled.iter().map(|r| r.0.to_string()).collect();
            format!("uncontrolled robots: {}", ids.join(", "))
        },
    );

    let mut tc3_bad = Vec::new();
    for (n, a) in nodes.iter().enumerate() {
        for b in &nodes[n + 1..] {
            let count = t.units[a].controlled.intersection(&t.units[b].controlled).count();
            let expected = if edges.contains(&(*a, *b)) { 2 } else { 0 };
            if count != expected {
                tc3_bad.push(format!("uav {}-{} share {count}", a.0, b.0));
            }
        }
    }
    let tc3 = report(
        tc3_bad.is_empty(),
        if tc3_bad.is_empty() {
            "pairwise overlaps are 0 or 2".to_string()
        } else {
            tc3_bad.join("; ")
        },
    );

    let mut tc4_bad = Vec::new();
    for r in &covered {
        let owners: Vec<UavId> = t.controllers(*r).collect();
        if owners.len() >= 3 {
            tc4_bad.push(format!("robot {} controlled by {} units", r.0, owners.len()));
        }
    }
    let tc4 = report(
        tc4_bad.is_empty(),
        if tc4_bad.is_empty() {
            "no triple intersections".to_string()
        } else {
            tc4_bad.join("; ")
        },
    );

    let tree = is_connected && edges.len() + 1 == nodes.len();
    let tc5 = report(
        tree,
        format!("{} units, {} edges{}", nodes.len(), edges.len(), if is_connected { "" } else { ", disconnected" }),
    );

    let conditions = [tc1, tc2, tc3, tc4, tc5];
    let class = if conditions.iter().all(|c| c.satisfied) {
        Class::ClassP
    } else if conditions[0].satisfied && conditions[1].satisfied {
        Class::ClassQ
    } else {
        Class::Invalid
    };
    TopologyClass {
        class,
        conditions,
        uncontrolled,
    }
}

/// Result of a shared-control negotiation between two neighboring units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Negotiation {
    pub shared: [RobotId; 2],
    /// Commonly viewed robots handed to exactly one of the two units.
    pub reassignments: BTreeMap<RobotId, UavId>,
}

/// Picks which two commonly viewed robots units `j` and `k` will both control.
///
/// `image_distances[r] = (dj, dk)` are robot `r`'s normalized distances from
/// the centers of `j`'s and `k`'s images. The shared pair is the two robots
/// closest to the midpoint between the centers (smallest `dj + dk`); every
/// other common robot goes to the unit whose image centers it better.
pub fn negotiate_shared(
    j: UavId,
    k: UavId,
    common_view: &BTreeSet<RobotId>,
    image_distances: &BTreeMap<RobotId, (f64, f64)>,
) -> Result<Negotiation, TopologyError> {
    let mut ranked: Vec<(f64, RobotId)> = common_view
        .iter()
        .filter_map(|r| image_distances.get(r).map(|(dj, dk)| (dj + dk, *r)))
        .collect();
    if ranked.len() < 2 {
        return Err(TopologyError::InsufficientOverlap {
            first: j,
            second: k,
            count: ranked.len(),
        });
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut shared = [ranked[0].1, ranked[1].1];
    shared.sort();
    let reassignments = ranked[2..]
        .iter()
        .map(|(_, r)| {
            let (dj, dk) = image_distances[r];
            (*r, if dk < dj { k } else { j })
        })
        .collect();
    Ok(Negotiation { shared, reassignments })
}

/// Builds a topology from each unit's candidate set (robots within its safety
/// margin), keeping the edges of `current`: every current edge negotiates a
/// shared pair; every other robot seen by several units goes to the unit that
/// centers it best.
///
/// `centrality[(uav, robot)]` is the normalized distance of the robot from
/// the unit's image center.
pub fn propose_topology(
    current: &TopologyState,
    observed: &BTreeMap<UavId, BTreeSet<RobotId>>,
    candidates: &BTreeMap<UavId, BTreeSet<RobotId>>,
    centrality: &BTreeMap<(UavId, RobotId), f64>,
    team: &BTreeSet<RobotId>,
    now: f64,
) -> Result<TopologyState, TopologyError> {
    let empty = BTreeSet::new();
    let cand = |u: UavId| candidates.get(&u).unwrap_or(&empty);

    let mut owners: BTreeMap<RobotId, BTreeSet<UavId>> = BTreeMap::new();
    let mut reserved: BTreeSet<RobotId> = BTreeSet::new();
    for &(j, k) in current.edges() {
        let common: BTreeSet<RobotId> = cand(j)
            .intersection(cand(k))
            .filter(|r| !reserved.contains(*r))
            .copied()
            .collect();
        let distances: BTreeMap<RobotId, (f64, f64)> = common
            .iter()
            .filter_map(|r| Some((*r, (*centrality.get(&(j, *r))?, *centrality.get(&(k, *r))?))))
            .collect();
        let deal = negotiate_shared(j, k, &common, &distances)?;
        for r in deal.shared {
            reserved.insert(r);
            owners.insert(r, BTreeSet::from([j, k]));
        }
    }

    for &r in team {
        if reserved.contains(&r) {
            continue;
        }
        let best = candidates
            .iter()
            .filter(|(_, set)| set.contains(&r))
            .filter_map(|(u, _)| centrality.get(&(*u, r)).map(|d| (*d, *u)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        match best {
            Some((_, u)) => {
                owners.insert(r, BTreeSet::from([u]));
            }
            None => return Err(TopologyError::Uncovered { robot: r }),
        }
    }

    let mut units: BTreeMap<UavId, UnitSets> = current
        .units()
        .keys()
        .map(|u| {
            (
                *u,
                UnitSets {
                    observed: observed.get(u).cloned().unwrap_or_default(),
                    controlled: BTreeSet::new(),
                },
            )
        })
        .collect();
    for (r, us) in owners {
        for u in us {
            if let Some(sets) = units.get_mut(&u) {
                sets.controlled.insert(r);
            }
        }
    }
    Ok(TopologyState::new(units, now))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchPolicy {
    /// Minimum time a topology stays active, seconds.
    pub min_dwell: f64,
}

impl Default for SwitchPolicy {
    fn default() -> Self {
        Self { min_dwell: 0.5 }
    }
}

/// Replaces `current` with `proposed` when the dwell time has elapsed and the
/// proposal satisfies all five conditions. Returns whether it was accepted.
pub fn request_switch(
    current: &mut TopologyState,
    proposed: TopologyState,
    policy: &SwitchPolicy,
    team: &BTreeSet<RobotId>,
    now: f64,
) -> bool {
    // small slack so a dwell of k*dt is not lost to rounding of the time grid
    if now - current.activation_time < policy.min_dwell - 1e-9 {
        return false;
    }
    if check_conditions(&proposed, team).class != Class::ClassP {
        return false;
    }
    *current = TopologyState {
        activation_time: now,
        ..proposed
    };
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[u32]) -> BTreeSet<RobotId> {
        v.iter().map(|i| RobotId(*i)).collect()
    }

    fn topo(sets: &[&[u32]]) -> TopologyState {
        TopologyState::from_controlled(
            sets.iter()
                .enumerate()
                .map(|(n, s)| (UavId(n as u32 + 1), ids(s)))
                .collect(),
            0.0,
        )
    }

    #[test]
    fn single_unit_is_class_p() {
        let t = topo(&[&[1, 2, 3, 4]]);
        let c = check_conditions(&t, &ids(&[1, 2, 3, 4]));
        assert_eq!(c.class, Class::ClassP);
    }

    #[test]
    fn three_shared_violates_tc3() {
        let t = topo(&[&[1, 2, 3, 4], &[2, 3, 4, 5]]);
        let c = check_conditions(&t, &ids(&[1, 2, 3, 4, 5]));
        assert!(!c.holds(3));
        assert_eq!(c.class, Class::ClassQ);
    }

    #[test]
    fn cycle_violates_tc5() {
        let t = topo(&[&[1, 2, 3, 4], &[3, 4, 5, 6], &[5, 6, 1, 2]]);
        let c = check_conditions(&t, &ids(&[1, 2, 3, 4, 5, 6]));
        assert!(c.holds(1) && c.holds(2) && c.holds(3) && c.holds(4));
        assert!(!c.holds(5));
        assert_eq!(c.class, Class::ClassQ);
    }

    #[test]
    fn disconnected_and_uncovered() {
        let t = topo(&[&[1, 2, 3], &[4, 5, 6]]);
        let c = check_conditions(&t, &ids(&[1, 2, 3, 4, 5, 6, 7]));
        assert!(!c.holds(1) && !c.holds(2));
        assert_eq!(c.uncontrolled, vec![RobotId(7)]);
        assert_eq!(c.class, Class::Invalid);
        assert!(c.to_string().contains("uncontrolled robots: 7"));
    }

    #[test]
    fn triple_intersection_violates_tc4() {
        let t = topo(&[&[1, 2, 3], &[1, 2, 4], &[1, 5, 6]]);
        let c = check_conditions(&t, &ids(&[1, 2, 3, 4, 5, 6]));
        assert!(!c.holds(4));
    }

    #[test]
    fn negotiation_examples() {
        let d: BTreeMap<RobotId, (f64, f64)> = [(3, (0.5, 0.5)), (8, (0.2, 0.9))]
            .into_iter()
            .map(|(r, d)| (RobotId(r), d))
            .collect();
        let n = negotiate_shared(UavId(1), UavId(2), &ids(&[3, 8]), &d).unwrap();
        assert_eq!(n.shared, [RobotId(3), RobotId(8)]);
        assert!(n.reassignments.is_empty());

        let d: BTreeMap<RobotId, (f64, f64)> = [
            (1, (0.5, 0.5)),
            (2, (0.1, 0.95)),
            (3, (0.45, 0.5)),
            (4, (0.9, 0.2)),
        ]
        .into_iter()
        .map(|(r, d)| (RobotId(r), d))
        .collect();
        let n = negotiate_shared(UavId(1), UavId(2), &ids(&[1, 2, 3, 4]), &d).unwrap();
        assert_eq!(n.shared, [RobotId(1), RobotId(3)]);
        assert_eq!(n.reassignments[&RobotId(2)], UavId(1));
        assert_eq!(n.reassignments[&RobotId(4)], UavId(2));

        let d: BTreeMap<RobotId, (f64, f64)> = [(1, (0.5, 0.5))].into_iter().map(|(r, d)| (RobotId(r), d)).collect();
        assert_eq!(
            negotiate_shared(UavId(1), UavId(2), &ids(&[1]), &d),
            Err(TopologyError::InsufficientOverlap {
                first: UavId(1),
                second: UavId(2),
                count: 1
            })
        );
    }

    #[test]
    fn switching_rules() {
        let team = ids(&[1, 2, 3, 4, 5, 6]);
        let policy = SwitchPolicy { min_dwell: 0.5 };
        let mut current = topo(&[&[1, 2, 3, 4], &[3, 4, 5, 6]]);
        let next = topo(&[&[1, 2, 3, 5], &[3, 5, 4, 6]]);
        assert!(!request_switch(&mut current, next.clone(), &policy, &team, 0.2));
        assert!(request_switch(&mut current, next.clone(), &policy, &team, 0.6));
        assert_eq!(current.activation_time, 0.6);
        assert!(current.same_assignment(&next));

        let uncovered = topo(&[&[1, 2, 3], &[2, 3, 5]]);
        assert!(!request_switch(&mut current, uncovered, &policy, &team, 5.0));
        assert_eq!(current.activation_time, 0.6);
    }

    #[test]
    fn proposal_keeps_edges_and_satisfies_conditions() {
        let current = topo(&[&[1, 2, 3, 4], &[3, 4, 5, 6], &[6, 5, 7, 8]]);
        // fix: unit 2/3 share 5,6; unit 1/2 share 3,4
        let team = ids(&[1, 2, 3, 4, 5, 6, 7, 8]);
        let cands: BTreeMap<UavId, BTreeSet<RobotId>> = [
            (UavId(1), ids(&[1, 2, 3, 4, 5])),
            (UavId(2), ids(&[2, 3, 4, 5, 6, 7])),
            (UavId(3), ids(&[4, 5, 6, 7, 8])),
        ]
        .into_iter()
        .collect();
        let mut centrality = BTreeMap::new();
        for (u, set) in &cands {
            for r in set {
                let d = ((r.0 as f64) - 2.5 * (u.0 as f64)).abs() / 4.0;
                centrality.insert((*u, *r), d);
            }
        }
        let proposed = propose_topology(&current, &cands, &cands, &centrality, &team, 1.0).unwrap();
        assert_eq!(proposed.edges(), current.edges());
        assert_eq!(check_conditions(&proposed, &team).class, Class::ClassP);
    }

    proptest! {
        #[test]
        fn edges_always_derivable(sets in prop::collection::vec(prop::collection::btree_set(0u32..12, 0..8), 1..5)) {
            let t = TopologyState::from_controlled(
                sets.iter().enumerate().map(|(n, s)| (UavId(n as u32), s.iter().map(|r| RobotId(*r)).collect())).collect(),
                0.0,
            );
            prop_assert_eq!(&derive_edges(t.units()), t.edges());
            let c = check_conditions(&t, &(0..12).map(RobotId).collect());
            if c.class == Class::ClassP {
                prop_assert!(c.conditions.iter().all(|r| r.satisfied));
            }
        }

        #[test]
        fn negotiation_enforces_exact_pair(n in 2usize..9, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let common: BTreeSet<RobotId> = (0..n as u32).map(RobotId).collect();
            let d: BTreeMap<RobotId, (f64, f64)> = common.iter()
                .map(|r| (*r, (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))))
                .collect();
            let deal = negotiate_shared(UavId(1), UavId(2), &common, &d).unwrap();
            // rebuild the two sets from the deal
            let mut a = BTreeSet::from(deal.shared);
            let mut b = BTreeSet::from(deal.shared);
            for (r, u) in &deal.reassignments {
                if *u == UavId(1) { a.insert(*r); } else { b.insert(*r); }
            }
            prop_assert_eq!(a.intersection(&b).count(), 2);
            prop_assert_eq!(a.union(&b).count(), n);
        }
    }
}
