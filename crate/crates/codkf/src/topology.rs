//! Communication graphs and the randomized sensor networks of the two
//! benchmark experiments.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::CodkfError;
use crate::model::SensorModel;

const GRAPH_ATTEMPTS: usize = 1000;

/// Undirected communication graph without self-loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    neighbors: Vec<Vec<usize>>,
    closed: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds from an undirected edge list; duplicate edges collapse.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self, CodkfError> {
        let mut adjacency = vec![vec![false; node_count]; node_count];
        for &(a, b) in edges {
            if a == b || a >= node_count || b >= node_count {
                return Err(CodkfError::InvalidParameter {
                    name: "edge",
                    value: format!("({a}, {b})"),
                    requirement: "two distinct node indices below the node count",
                });
            }
            adjacency[a][b] = true;
            adjacency[b][a] = true;
        }
        let neighbors: Vec<Vec<usize>> = adjacency
            .iter()
            .map(|row| (0..node_count).filter(|&j| row[j]).collect())
            .collect();
        let closed = neighbors
            .iter()
            .enumerate()
            .map(|(i, nbrs)| {
                let mut c = nbrs.clone();
                c.push(i);
                c.sort_unstable();
                c
            })
            .collect();
        Ok(Graph { neighbors, closed })
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    /// Sorted neighbour list of `i`, excluding `i` itself.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Sorted closed neighbourhood: `i` together with its neighbours.
    pub fn closed_neighborhood(&self, i: usize) -> &[usize] {
        &self.closed[i]
    }

    /// Breadth-first reachability from node 0.
    pub fn is_connected(&self) -> bool {
        let n = self.node_count();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == n
    }

    pub fn mean_degree(&self) -> f64 {
        let total: usize = self.neighbors.iter().map(Vec::len).sum();
        total as f64 / self.node_count() as f64
    }
}

/// Erdős–Rényi draw with per-pair probability `edge_density`, resampled until
/// connected. Deterministic for a given generator state.
pub fn random_connected_graph(
    node_count: usize,
    edge_density: f64,
    rng: &mut impl Rng,
) -> Result<Graph, CodkfError> {
    if node_count == 0 {
        return Err(CodkfError::InvalidParameter {
            name: "node_count",
            value: "0".into(),
            requirement: "at least 1",
        });
    }
    if !(edge_density > 0.0 && edge_density <= 1.0) {
        return Err(CodkfError::InvalidParameter {
            name: "edge_density",
            value: format!("{edge_density}"),
            requirement: "a probability in (0, 1]",
        });
    }
    for _ in 0..GRAPH_ATTEMPTS {
        let mut edges = Vec::new();
        for i in 0..node_count {
            for j in (i + 1)..node_count {
                if rng.random_bool(edge_density) {
                    edges.push((i, j));
                }
            }
        }
        let graph = Graph::from_edges(node_count, &edges)?;
        if graph.is_connected() {
            return Ok(graph);
        }
    }
    Err(CodkfError::GraphGeneration {
        nodes: node_count,
        density: edge_density,
        attempts: GRAPH_ATTEMPTS,
    })
}

/// How sensing quality is distributed over the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    /// Each node is independently high quality with probability 1/2.
    MixedQuality,
    /// Exactly one uniformly chosen node is high quality.
    SingleHighQuality,
}

/// A communication graph plus per-node sensing.
#[derive(Clone, Debug)]
pub struct NetworkScenario {
    pub graph: Graph,
    pub sensors: Vec<SensorModel>,
    pub high_quality: Vec<bool>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Y,
    Both,
}

/// Random sensor network over the 4-state turn model.
///
/// Each node measures x, y, or both positions (uniform over the three,
/// velocities are never measured) with row gains uniform on [1, 3] and a
/// diagonal R with entries uniform on [3, 5], scaled by 1e-2 for high-quality
/// nodes. At least one node measures both axes, so at least one node observes
/// the full state on its own; single-axis draws are redone until that holds.
pub fn make_scenario(
    node_count: usize,
    edge_density: f64,
    experiment: Experiment,
    rng: &mut impl Rng,
) -> Result<NetworkScenario, CodkfError> {
    let graph = random_connected_graph(node_count, edge_density, rng)?;

    let axes: Vec<Axis> = loop {
        let draw: Vec<Axis> = (0..node_count)
            .map(|_| match rng.random_range(0..3u8) {
                0 => Axis::X,
                1 => Axis::Y,
                _ => Axis::Both,
            })
            .collect();
        if draw.contains(&Axis::Both) {
            break draw;
        }
    };

    let high_quality: Vec<bool> = match experiment {
        Experiment::MixedQuality => (0..node_count).map(|_| rng.random_bool(0.5)).collect(),
        Experiment::SingleHighQuality => {
            let chosen = rng.random_range(0..node_count);
            (0..node_count).map(|i| i == chosen).collect()
        }
    };

    let mut sensors = Vec::with_capacity(node_count);
    for (axis, &high) in axes.iter().zip(&high_quality) {
        let rows: &[usize] = match axis {
            Axis::X => &[0],
            Axis::Y => &[1],
            Axis::Both => &[0, 1],
        };
        let mut h = DMatrix::zeros(rows.len(), 4);
        for (r, &col) in rows.iter().enumerate() {
            h[(r, col)] = rng.random_range(1.0..=3.0);
        }
        let scale = if high { 1e-2 } else { 1.0 };
        let mut r_mat = DMatrix::zeros(rows.len(), rows.len());
        for d in 0..rows.len() {
            r_mat[(d, d)] = rng.random_range(3.0..=5.0) * scale;
        }
        sensors.push(SensorModel::new(h, r_mat)?);
    }

    Ok(NetworkScenario {
        graph,
        sensors,
        high_quality,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn single_node_graph() {
        let g = random_connected_graph(1, 0.5, &mut rng(0)).unwrap();
        assert_eq!(g.node_count(), 1);
        assert!(g.neighbors(0).is_empty());
        assert_eq!(g.closed_neighborhood(0), &[0]);
    }

    #[test]
    fn two_nodes_full_density() {
        let g = random_connected_graph(2, 1.0, &mut rng(0)).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.closed_neighborhood(0).len(), 2);
        assert_eq!(g.closed_neighborhood(1).len(), 2);
    }

    #[test]
    fn sparse_twenty_node_graph() {
        let g = random_connected_graph(20, 0.15, &mut rng(42)).unwrap();
        assert!(g.is_connected());
        let mean = g.mean_degree();
        assert!((1.0..=6.0).contains(&mean), "mean degree {mean}");
        // Symmetry of the neighbour relation.
        for i in 0..20 {
            for &j in g.neighbors(i) {
                assert!(g.neighbors(j).contains(&i));
            }
        }
    }

    #[test]
    fn rejects_self_loop() {
        assert!(Graph::from_edges(3, &[(1, 1)]).is_err());
        assert!(Graph::from_edges(3, &[(0, 3)]).is_err());
    }

    #[test]
    fn rejects_bad_density() {
        assert!(random_connected_graph(3, 0.0, &mut rng(0)).is_err());
        assert!(random_connected_graph(3, 1.5, &mut rng(0)).is_err());
    }

    #[test]
    fn gives_up_when_density_is_hopeless() {
        let err = random_connected_graph(3, 1e-12, &mut rng(5)).unwrap_err();
        match err {
            CodkfError::GraphGeneration { attempts, .. } => assert_eq!(attempts, 1000),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn single_high_quality_count() {
        for seed in 0..20 {
            let sc = make_scenario(12, 0.3, Experiment::SingleHighQuality, &mut rng(seed)).unwrap();
            let count = sc.high_quality.iter().filter(|&&q| q).count();
            assert_eq!(count, 1, "seed {seed}");
        }
    }

    #[test]
    fn velocity_columns_are_never_measured() {
        for seed in 0..10 {
            let sc = make_scenario(15, 0.25, Experiment::MixedQuality, &mut rng(seed)).unwrap();
            for sensor in &sc.sensors {
                for row in 0..sensor.obs_dim() {
                    assert_eq!(sensor.h[(row, 2)], 0.0);
                    assert_eq!(sensor.h[(row, 3)], 0.0);
                }
            }
        }
    }

    #[test]
    fn gains_and_noise_levels_in_range() {
        let sc = make_scenario(30, 0.2, Experiment::MixedQuality, &mut rng(3)).unwrap();
        for (sensor, &high) in sc.sensors.iter().zip(&sc.high_quality) {
            for row in 0..sensor.obs_dim() {
                let gain = sensor.h.row(row).iter().cloned().fold(0.0, f64::max);
                assert!((1.0..=3.0).contains(&gain), "gain {gain}");
                let v = sensor.r[(row, row)];
                if high {
                    assert!((0.03..=0.05).contains(&v), "high-quality variance {v}");
                } else {
                    assert!((3.0..=5.0).contains(&v), "low-quality variance {v}");
                }
            }
        }
    }

    #[test]
    fn at_least_one_node_measures_both_axes() {
        for seed in 0..50 {
            let sc = make_scenario(4, 0.5, Experiment::MixedQuality, &mut rng(seed)).unwrap();
            assert!(sc.sensors.iter().any(|s| s.obs_dim() == 2), "seed {seed}");
        }
    }

    #[test]
    fn both_axes_fraction_is_about_a_third() {
        // 500 networks of 20 nodes: 1e4 draws of the 3-way axis choice.
        let mut both = 0usize;
        let mut total = 0usize;
        for seed in 0..500 {
            let sc = make_scenario(20, 0.3, Experiment::MixedQuality, &mut rng(seed)).unwrap();
            both += sc.sensors.iter().filter(|s| s.obs_dim() == 2).count();
            total += 20;
        }
        let fraction = both as f64 / total as f64;
        assert!(
            (0.30..=0.37).contains(&fraction),
            "both-axes fraction {fraction}"
        );
    }

    #[test]
    fn same_seed_same_scenario() {
        let a = make_scenario(20, 0.15, Experiment::MixedQuality, &mut rng(11)).unwrap();
        let b = make_scenario(20, 0.15, Experiment::MixedQuality, &mut rng(11)).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.high_quality, b.high_quality);
        for (sa, sb) in a.sensors.iter().zip(&b.sensors) {
            assert_eq!(sa.h, sb.h);
            assert_eq!(sa.r, sb.r);
        }
    }
}
