//! Range-limited communication graphs with a hard degree bound.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use num_bigint::BigUint;
use thiserror::Error;

pub type Position = [f64; 2];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("unknown robot {robot} in a graph of {n} robots")]
    UnknownRobot { robot: usize, n: usize },
    #[error("degree bound violated at step {time}: robot {robot} has degree {degree} > {bound} (neighbours {neighbours:?})")]
    DegreeViolation {
        time: usize,
        robot: usize,
        degree: usize,
        bound: usize,
        neighbours: Vec<usize>,
    },
}

/// Undirected graph over robots `0..n_robots` at one time step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommGraph {
    pub n_robots: usize,
    pub time_index: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

/// Robot `center` and the leaves it exchanges messages with.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StarNeighborhood {
    pub center: usize,
    pub leaves: Vec<usize>,
}

impl StarNeighborhood {
    pub fn k(&self) -> usize {
        self.leaves.len()
    }
}

fn distance(a: Position, b: Position) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// All pairs `(i, j)`, `i < j`, within range `e` (inclusive). Robots with
/// `alive[i] == false` take part in no pair.
pub fn candidate_links(positions: &[Position], alive: Option<&[bool]>, range: f64) -> Vec<(usize, usize)> {
    let is_alive = |i: usize| alive.is_none_or(|a| a[i]);
    let n = positions.len();
    let mut out = Vec::new();
    for i in 0..n {
        if !is_alive(i) {
            continue;
        }
        for j in i + 1..n {
            if is_alive(j) && distance(positions[i], positions[j]) <= range {
                out.push((i, j));
            }
        }
    }
    out
}

/// Greedy bounded-degree selection: candidates are admitted shortest
/// first (ties by `(i, j)`), and only while both endpoints have budget.
pub fn enforce_degree(candidates: &[(usize, usize)], positions: &[Position], max_degree: usize) -> CommGraph {
    let n = positions.len();
    let mut order: Vec<(f64, usize, usize)> = candidates
        .iter()
        .map(|&(a, b)| {
            let (i, j) = (a.min(b), a.max(b));
            (distance(positions[i], positions[j]), i, j)
        })
        .collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut degree = vec![0usize; n];
    let mut edges = BTreeSet::new();
    for (_, i, j) in order {
        if i == j || degree[i] >= max_degree || degree[j] >= max_degree {
            continue;
        }
        if edges.insert((i, j)) {
            degree[i] += 1;
            degree[j] += 1;
        }
    }
    CommGraph::from_edges(n, edges)
}

impl CommGraph {
    pub fn from_edges(n_robots: usize, edges: BTreeSet<(usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); n_robots];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Self {
            n_robots,
            time_index: 0,
            edges,
            adjacency,
        }
    }

    pub fn empty(n_robots: usize) -> Self {
        Self::from_edges(n_robots, BTreeSet::new())
    }

    /// Range graph with the degree bound applied.
    pub fn build(positions: &[Position], alive: Option<&[bool]>, range: f64, max_degree: usize, time_index: usize) -> Self {
        let candidates = candidate_links(positions, alive, range);
        let mut g = enforce_degree(&candidates, positions, max_degree);
        g.time_index = time_index;
        g
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    /// Neighbours of `i` in ascending id order.
    pub fn neighbours(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn neighborhood(&self, i: usize) -> Result<StarNeighborhood, TopologyError> {
        if i >= self.n_robots {
            return Err(TopologyError::UnknownRobot {
                robot: i,
                n: self.n_robots,
            });
        }
        Ok(StarNeighborhood {
            center: i,
            leaves: self.adjacency[i].clone(),
        })
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Runtime check of the degree bound, naming the offending robot.
    pub fn check_degree(&self, bound: usize) -> Result<(), TopologyError> {
        match (0..self.n_robots).find(|&i| self.degree(i) > bound) {
            Some(robot) => Err(TopologyError::DegreeViolation {
                time: self.time_index,
                robot,
                degree: self.degree(robot),
                bound,
                neighbours: self.adjacency[robot].clone(),
            }),
            None => Ok(()),
        }
    }

    /// Edge-list lines `t i j`, one per edge.
    pub fn edge_list(&self) -> String {
        let mut s = String::new();
        for (i, j) in self.edges() {
            writeln!(s, "{} {} {}", self.time_index, i, j).expect("string write");
        }
        s
    }
}

/// Number of simple graphs on `n` labelled vertices: `2^(n(n−1)/2)`.
pub fn count_possible_graphs(n: u32) -> BigUint {
    let pairs = u64::from(n) * u64::from(n.saturating_sub(1)) / 2;
    BigUint::from(1u8) << pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn range_boundary_is_inclusive() {
        let p = [[0.0, 0.0], [3.0, 4.0]];
        assert_eq!(candidate_links(&p, None, 5.0), vec![(0, 1)]);
        assert!(candidate_links(&p, None, 4.999).is_empty());
    }

    #[test]
    fn coincident_robots_form_complete_graph() {
        let p = [[1.0, 1.0]; 5];
        let c = candidate_links(&p, None, 0.5);
        assert_eq!(c.len(), 10);
        let g = enforce_degree(&c, &p, 4);
        assert_eq!(g.edge_count(), 10);
        for i in 0..5 {
            assert_eq!(g.neighborhood(i).unwrap().k(), 4);
        }
        assert_eq!(g.max_degree(), 4);
    }

    #[test]
    fn greedy_admits_shortest_first() {
        let p = [[0.0, 0.0], [1.0, 0.0], [2.1, 0.0]];
        let c = candidate_links(&p, None, 2.0);
        assert_eq!(c, vec![(0, 1), (1, 2)]);
        let g = enforce_degree(&c, &p, 1);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn dead_robots_have_no_links() {
        let p = [[0.0, 0.0]; 3];
        let alive = [true, false, true];
        assert_eq!(candidate_links(&p, Some(&alive), 1.0), vec![(0, 2)]);
    }

    #[test]
    fn degree_metrics() {
        assert_eq!(CommGraph::empty(4).max_degree(), 0);
        let path = CommGraph::from_edges(3, [(0, 1), (1, 2)].into_iter().collect());
        assert_eq!(path.max_degree(), 2);
        assert_eq!(path.neighborhood(0).unwrap().k(), 1);
        assert_eq!(CommGraph::empty(2).neighborhood(1).unwrap().k(), 0);
        assert!(matches!(path.neighborhood(3), Err(TopologyError::UnknownRobot { .. })));
        let err = path.check_degree(1).unwrap_err();
        assert!(matches!(err, TopologyError::DegreeViolation { robot: 1, degree: 2, .. }));
    }

    #[test]
    fn edge_list_format() {
        let mut g = CommGraph::from_edges(3, [(0, 2), (0, 1)].into_iter().collect());
        g.time_index = 7;
        assert_eq!(g.edge_list(), "7 0 1\n7 0 2\n");
    }

    #[test]
    fn graph_counts() {
        assert_eq!(count_possible_graphs(1), BigUint::from(1u8));
        assert_eq!(count_possible_graphs(3), BigUint::from(8u8));
        assert_eq!(count_possible_graphs(6), BigUint::from(32768u32));
        assert_eq!(count_possible_graphs(80).bits(), 3161);
    }

    fn layout() -> impl Strategy<Value = (Vec<Position>, f64, usize)> {
        (2usize..30, 1.0f64..60.0, 1usize..6).prop_flat_map(|(n, e, d)| {
            (prop::collection::vec([0.0f64..100.0, 0.0f64..100.0], n), Just(e), Just(d))
        })
    }

    proptest! {
        #[test]
        fn bounded_graph_invariants((pos, e, d) in layout()) {
            let cand = candidate_links(&pos, None, e);
            let g = enforce_degree(&cand, &pos, d);
            prop_assert!(g.max_degree() <= d);
            prop_assert!(g.edge_count() * 2 <= d * pos.len());
            for (i, j) in g.edges() {
                prop_assert!(i < j);
                prop_assert!(cand.contains(&(i, j)));
                prop_assert!(g.neighbours(j).contains(&i) && g.neighbours(i).contains(&j));
                prop_assert!(distance(pos[i], pos[j]) <= e);
            }
            let complete = enforce_degree(&cand, &pos, pos.len() - 1);
            prop_assert_eq!(complete.edges().collect::<Vec<_>>(), cand);
        }
    }
}
