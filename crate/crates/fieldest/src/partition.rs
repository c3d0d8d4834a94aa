//! Voronoi partition of the domain, permanent centre-to-agent assignment,
//! the undirected adjacency Laplacian, and per-root directed outbranchings.
//!
//! Cells are computed by half-plane intersection per generator; agent counts
//! are small, so this stays robust without a Delaunay pipeline. Two cells
//! are adjacent when they share a boundary segment of positive length
//! (corner contact does not count).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{ConvexPolygon, EdgeLabel, Point, Rect};
use crate::rbf::KernelBasis;

/// Shared-boundary length below which two cells are not considered adjacent.
pub const ADJACENCY_LENGTH_TOL: f64 = 1e-9;

/// Voronoi cells of `positions` clipped to `domain`, one convex polygon per
/// generator. Generators must be pairwise distinct and inside the domain.
pub fn voronoi_cells(positions: &[Point], domain: &Rect) -> Result<Vec<ConvexPolygon>> {
    if positions.is_empty() {
        return Err(Error::invalid("need at least one generator"));
    }
    for (i, p) in positions.iter().enumerate() {
        if !domain.contains(p) {
            return Err(Error::invalid(format!(
                "generator {i} at ({}, {}) lies outside the domain",
                p.x, p.y
            )));
        }
        for (j, q) in positions.iter().enumerate().skip(i + 1) {
            if (p - q).norm() < 1e-12 {
                return Err(Error::invalid(format!("generators {i} and {j} coincide")));
            }
        }
    }
    let mut cells = Vec::with_capacity(positions.len());
    for (i, xi) in positions.iter().enumerate() {
        let mut cell = ConvexPolygon::from_rect(domain);
        for (j, xj) in positions.iter().enumerate() {
            if i == j {
                continue;
            }
            // keep the side of the bisector closer to x_i
            let n = xj - xi;
            let mid = (xi + xj) * 0.5;
            cell = cell.clip_halfplane(n, n.dot(&mid), EdgeLabel::Bisector(j));
        }
        cells.push(cell);
    }
    Ok(cells)
}

/// Assigns every kernel centre to the agent whose cell contains it, breaking
/// boundary ties by the lowest agent index. For Voronoi cells this is
/// exactly the nearest-generator rule. Returns the owner of each centre and
/// the per-agent index blocks (sorted, disjoint, covering all centres).
pub fn assign_centres(positions: &[Point], basis: &KernelBasis) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut owner = Vec::with_capacity(basis.len());
    for k in 0..basis.len() {
        let c = basis.centre(k);
        let cq = Point::new(c[0], c[1]);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, x) in positions.iter().enumerate() {
            let d = (cq - x).norm_squared();
            if d < best_d - 1e-18 {
                best_d = d;
                best = i;
            }
        }
        owner.push(best);
    }
    let mut blocks = vec![Vec::new(); positions.len()];
    for (k, &o) in owner.iter().enumerate() {
        blocks[o].push(k);
    }
    (owner, blocks)
}

/// Adjacency lists from shared-boundary lengths. The relation is required
/// to be symmetric; both cells must see the shared segment.
pub fn adjacency_from_cells(cells: &[ConvexPolygon]) -> Vec<Vec<usize>> {
    let n = cells.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let lij = cells[i].labeled_length(EdgeLabel::Bisector(j));
            let lji = cells[j].labeled_length(EdgeLabel::Bisector(i));
            if lij > ADJACENCY_LENGTH_TOL && lji > ADJACENCY_LENGTH_TOL {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    adj
}

/// Graph Laplacian with constant edge weight: `L[i][j] = -w` on edges,
/// row sums zero. Fails when the graph is disconnected, which the
/// consensus coupling cannot tolerate.
pub fn laplacian(adjacency: &[Vec<usize>], weight: f64) -> Result<DMatrix<f64>> {
    if weight <= 0.0 {
        return Err(Error::invalid("edge weight must be positive"));
    }
    if !is_connected(adjacency) {
        return Err(Error::scenario(
            "partition adjacency graph is disconnected",
        ));
    }
    let n = adjacency.len();
    let mut l = DMatrix::zeros(n, n);
    for (i, nbrs) in adjacency.iter().enumerate() {
        l[(i, i)] = weight * nbrs.len() as f64;
        for &j in nbrs {
            l[(i, j)] = -weight;
        }
    }
    Ok(l)
}

pub fn is_connected(adjacency: &[Vec<usize>]) -> bool {
    let n = adjacency.len();
    if n == 0 {
        return false;
    }
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for &j in &adjacency[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// BFS spanning tree directed away from `root`, lowest-index neighbours
/// first. Entry `i` is the parent of node `i` (`None` for the root).
pub fn outbranching(adjacency: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let n = adjacency.len();
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(i) = queue.pop_front() {
        let mut nbrs = adjacency[i].clone();
        nbrs.sort_unstable();
        for j in nbrs {
            if !seen[j] {
                seen[j] = true;
                parent[j] = Some(i);
                queue.push_back(j);
            }
        }
    }
    parent
}

/// The fixed partition structure built once at scenario setup: cells,
/// centre assignment, Laplacian, and one outbranching per root agent.
#[derive(Debug, Clone)]
pub struct PartitionGraph {
    pub cells: Vec<ConvexPolygon>,
    pub generators: Vec<Point>,
    pub domain: Rect,
    pub owner_of_centre: Vec<usize>,
    pub blocks: Vec<Vec<usize>>,
    pub adjacency: Vec<Vec<usize>>,
    pub laplacian: DMatrix<f64>,
    pub edge_weight: f64,
    /// `outbranchings[j][i]` is the parent of agent `i` in the tree rooted
    /// at agent `j`.
    pub outbranchings: Vec<Vec<Option<usize>>>,
    /// Agents whose cell contains no kernel centre (degenerate for the
    /// partial-vector algorithms; they idle).
    pub empty_block_agents: Vec<usize>,
}

impl PartitionGraph {
    pub fn build(
        positions: &[Point],
        domain: &Rect,
        basis: &KernelBasis,
        edge_weight: f64,
    ) -> Result<Self> {
        let cells = voronoi_cells(positions, domain)?;
        let (owner_of_centre, blocks) = assign_centres(positions, basis);
        let adjacency = if positions.len() == 1 {
            vec![Vec::new()]
        } else {
            adjacency_from_cells(&cells)
        };
        let laplacian = if positions.len() == 1 {
            DMatrix::zeros(1, 1)
        } else {
            laplacian(&adjacency, edge_weight)?
        };
        let outbranchings = (0..positions.len())
            .map(|root| outbranching(&adjacency, root))
            .collect();
        let empty_block_agents = blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_empty())
            .map(|(i, _)| i)
            .collect();
        Ok(PartitionGraph {
            cells,
            generators: positions.to_vec(),
            domain: *domain,
            owner_of_centre,
            blocks,
            adjacency,
            laplacian,
            edge_weight,
            outbranchings,
            empty_block_agents,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.generators.len()
    }

    /// Global centre indices NOT owned by agent `i`, ascending.
    pub fn foreign_indices(&self, i: usize) -> Vec<usize> {
        (0..self.owner_of_centre.len())
            .filter(|k| self.owner_of_centre[*k] != i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbf::reference_basis;
    use approx::assert_relative_eq;

    fn quadrant_generators() -> Vec<Point> {
        vec![
            Point::new(0.25, 0.25),
            Point::new(0.75, 0.25),
            Point::new(0.25, 0.75),
            Point::new(0.75, 0.75),
        ]
    }

    #[test]
    fn two_generators_split_at_bisector() {
        let cells = voronoi_cells(
            &[Point::new(0.25, 0.5), Point::new(0.75, 0.5)],
            &Rect::unit_square(),
        )
        .unwrap();
        assert_relative_eq!(cells[0].area(), 0.5, max_relative = 1e-12);
        assert_relative_eq!(cells[1].area(), 0.5, max_relative = 1e-12);
        assert!(cells[0].contains(&Point::new(0.4, 0.5), 1e-12));
        assert!(!cells[0].contains(&Point::new(0.6, 0.5), 1e-12));
        for v in cells[0].vertices() {
            assert!(v.x <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn single_generator_owns_the_whole_domain() {
        let cells = voronoi_cells(&[Point::new(0.3, 0.8)], &Rect::unit_square()).unwrap();
        assert_relative_eq!(cells[0].area(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn coincident_generators_rejected() {
        let p = Point::new(0.5, 0.5);
        assert!(voronoi_cells(&[p, p], &Rect::unit_square()).is_err());
    }

    #[test]
    fn generator_outside_domain_rejected() {
        assert!(voronoi_cells(&[Point::new(1.5, 0.5)], &Rect::unit_square()).is_err());
    }

    #[test]
    fn random_cells_tile_the_domain() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let positions: Vec<Point> = (0..4)
            .map(|_| Point::new(rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)))
            .collect();
        let cells = voronoi_cells(&positions, &Rect::unit_square()).unwrap();
        let total: f64 = cells.iter().map(|c| c.area()).sum();
        assert!((total - 1.0).abs() < 1e-9);

        // every vertex is equidistant from >= 2 generators or on the boundary
        for cell in &cells {
            for v in cell.vertices() {
                let on_boundary = v.x.abs() < 1e-9
                    || (v.x - 1.0).abs() < 1e-9
                    || v.y.abs() < 1e-9
                    || (v.y - 1.0).abs() < 1e-9;
                let mut dists: Vec<f64> = positions.iter().map(|p| (p - v).norm()).collect();
                dists.sort_by(f64::total_cmp);
                let equidistant = (dists[1] - dists[0]).abs() < 1e-9;
                assert!(on_boundary || equidistant, "vertex {v:?} unexplained");
            }
        }

        // brute-force classification: nearest generator owns each grid point
        for ix in 0..500 {
            for iy in 0..500 {
                let q = Point::new((ix as f64 + 0.5) / 500.0, (iy as f64 + 0.5) / 500.0);
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, p) in positions.iter().enumerate() {
                    let d = (p - q).norm_squared();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                assert!(
                    cells[best].contains(&q, 1e-9),
                    "point {q:?} missing from its nearest cell"
                );
            }
        }
    }

    #[test]
    fn centre_assignment_interior_and_ties() {
        let (basis, _) = reference_basis();
        let gens = quadrant_generators();
        let (owner, blocks) = assign_centres(&gens, &basis);
        // brute-force nearest-generator classification of the 8 centres
        assert_eq!(owner, vec![0, 0, 1, 1, 3, 3, 2, 2]);
        assert_eq!(blocks[0], vec![0, 1]);
        assert_eq!(blocks[1], vec![2, 3]);
        assert_eq!(blocks[2], vec![6, 7]);
        assert_eq!(blocks[3], vec![4, 5]);

        // a centre exactly on the shared boundary goes to the lower index
        let mid = KernelBasis::with_common_width(vec![vec![0.5, 0.4]], 0.1).unwrap();
        let (owner, _) = assign_centres(&gens, &mid);
        assert_eq!(owner[0], 0);
    }

    #[test]
    fn laplacian_two_cells() {
        let cells = voronoi_cells(
            &[Point::new(0.25, 0.5), Point::new(0.75, 0.5)],
            &Rect::unit_square(),
        )
        .unwrap();
        let adj = adjacency_from_cells(&cells);
        let l = laplacian(&adj, 2.0).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]));
    }

    #[test]
    fn quadrant_partition_diagonals_not_adjacent() {
        let cells = voronoi_cells(&quadrant_generators(), &Rect::unit_square()).unwrap();
        let adj = adjacency_from_cells(&cells);
        for (i, nbrs) in adj.iter().enumerate() {
            assert_eq!(nbrs.len(), 2, "cell {i} neighbours {nbrs:?}");
        }
        assert!(!adj[0].contains(&3));
        assert!(!adj[1].contains(&2));
    }

    #[test]
    fn laplacian_connectivity_and_spectrum() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let positions: Vec<Point> = (0..4)
            .map(|_| Point::new(rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)))
            .collect();
        let cells = voronoi_cells(&positions, &Rect::unit_square()).unwrap();
        let adj = adjacency_from_cells(&cells);
        let l = laplacian(&adj, 1.0).unwrap();
        // L 1 = 0
        let ones = nalgebra::DVector::from_element(4, 1.0);
        assert!((&l * &ones).amax() < 1e-12);
        let mut eig: Vec<f64> = l.symmetric_eigen().eigenvalues.iter().cloned().collect();
        eig.sort_by(f64::total_cmp);
        assert!(eig[0].abs() < 1e-12);
        assert!(eig[1] > 1e-12, "second eigenvalue {}", eig[1]);
    }

    #[test]
    fn disconnected_adjacency_rejected() {
        let adj = vec![vec![1], vec![0], vec![3], vec![2]];
        assert!(matches!(laplacian(&adj, 1.0), Err(Error::Scenario(_))));
    }

    #[test]
    fn outbranching_path_graph() {
        let adj = vec![vec![1], vec![0, 2], vec![1]];
        let parent = outbranching(&adj, 0);
        assert_eq!(parent, vec![None, Some(0), Some(1)]);
    }

    #[test]
    fn outbranching_star_from_hub() {
        let adj = vec![vec![1, 2, 3], vec![0], vec![0], vec![0]];
        let parent = outbranching(&adj, 0);
        assert_eq!(parent, vec![None, Some(0), Some(0), Some(0)]);
    }

    #[test]
    fn outbranching_quadrants_reaches_all_within_depth_two() {
        let cells = voronoi_cells(&quadrant_generators(), &Rect::unit_square()).unwrap();
        let adj = adjacency_from_cells(&cells);
        let parent = outbranching(&adj, 0);
        for i in 1..4 {
            // walk to the root, counting depth
            let mut depth = 0;
            let mut cur = i;
            while let Some(p) = parent[cur] {
                cur = p;
                depth += 1;
                assert!(depth <= 4);
            }
            assert_eq!(cur, 0, "node {i} does not reach the root");
            assert!(depth <= 2);
        }
    }

    #[test]
    fn directed_consensus_converges_to_root_value() {
        // Euler-integrate db_i = -(b_i - b_parent) on the quadrant tree;
        // every node must converge to the root's (fixed) value.
        let cells = voronoi_cells(&quadrant_generators(), &Rect::unit_square()).unwrap();
        let adj = adjacency_from_cells(&cells);
        let parent = outbranching(&adj, 2);
        let root_value = 1.37;
        let mut b: [f64; 4] = [0.9, -0.4, root_value, 0.2];
        let dt = 1e-2;
        for _ in 0..10_000 {
            let prev = b;
            for i in 0..4 {
                if let Some(p) = parent[i] {
                    b[i] += dt * -(prev[i] - prev[p]);
                }
            }
        }
        for (i, v) in b.iter().enumerate() {
            assert!((v - root_value).abs() < 1e-6, "node {i} at {v}");
        }
    }

    #[test]
    fn build_reports_empty_blocks() {
        // all centres in the left half; the right agent owns none
        let basis =
            KernelBasis::with_common_width(vec![vec![0.1, 0.5], vec![0.2, 0.4]], 0.05).unwrap();
        let positions = vec![Point::new(0.2, 0.5), Point::new(0.9, 0.5)];
        let graph =
            PartitionGraph::build(&positions, &Rect::unit_square(), &basis, 1.0).unwrap();
        assert_eq!(graph.empty_block_agents, vec![1]);
        assert_eq!(graph.blocks[0], vec![0, 1]);
        assert!(graph.blocks[1].is_empty());
        assert_eq!(graph.foreign_indices(1), vec![0, 1]);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn tiling_blocks_and_spectrum(seed in 0u64..10_000, n in 2usize..9) {
                use rand::prelude::*;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let mut positions: Vec<Point> = Vec::new();
                while positions.len() < n {
                    let cand = Point::new(rng.gen_range(0.02..0.98), rng.gen_range(0.02..0.98));
                    if positions.iter().all(|p| (p - cand).norm() > 0.02) {
                        positions.push(cand);
                    }
                }
                let (basis, _) = reference_basis();
                let graph = PartitionGraph::build(&positions, &Rect::unit_square(), &basis, 1.0).unwrap();

                // cells tile the domain
                let total: f64 = graph.cells.iter().map(|c| c.area()).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);

                // blocks partition the centre indices
                let mut all: Vec<usize> = graph.blocks.iter().flatten().cloned().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..basis.len()).collect::<Vec<_>>());

                // L * 1 = 0 and second eigenvalue positive
                let ones = nalgebra::DVector::from_element(n, 1.0);
                prop_assert!((&graph.laplacian * &ones).amax() < 1e-9);
                let mut eig: Vec<f64> = graph.laplacian.clone().symmetric_eigen().eigenvalues.iter().cloned().collect();
                eig.sort_by(f64::total_cmp);
                prop_assert!(eig[1] > 1e-12);

                // every outbranching reaches every node
                for root in 0..n {
                    let parent = &graph.outbranchings[root];
                    for i in 0..n {
                        let mut cur = i;
                        let mut hops = 0;
                        while let Some(p) = parent[cur] {
                            cur = p;
                            hops += 1;
                            prop_assert!(hops <= n);
                        }
                        prop_assert_eq!(cur, root);
                    }
                }
            }
        }
    }
}
