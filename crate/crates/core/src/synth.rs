//! Synthetic ground truth: random weighted graphs and LGMRF samples.
//!
//! Two graph families are supported:
//!
//! * `planar`: the Delaunay triangulation of `p` points drawn uniformly in the
//!   unit square. Planar and connected, at most `3p - 6` edges.
//! * `ba(m)`: Barabási–Albert preferential attachment. Nodes 0 and 1 start
//!   joined by an edge; node `v >= 2` attaches to `min(m, v)` distinct earlier
//!   nodes drawn without replacement with probability proportional to degree.
//!   For `m = 2` this gives `2(p - 2) + 1` edges.
//!
//! Edge weights are i.i.d. uniform on `[lo, hi]`, drawn in edge-index order.
//! Samples follow `x ~ N(0, L^+)`, generated through the eigendecomposition of
//! `L` so the null space spanned by `1` is excluded exactly.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, HasPosition, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::laplacian::{apply_p, edge_index0, num_edges};
use crate::objective::SampleCovariance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum GraphModel {
    PlanarDelaunay,
    BarabasiAlbert { m: usize },
}

impl std::fmt::Display for GraphModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GraphModel::PlanarDelaunay => f.write_str("planar"),
            GraphModel::BarabasiAlbert { m } => write!(f, "ba{m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub model: GraphModel,
    pub p: usize,
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
}

impl GraphSpec {
    pub fn new(model: GraphModel, p: usize, seed: u64) -> Self {
        GraphSpec {
            model,
            p,
            lo: 0.5,
            hi: 2.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::InvalidArgument(format!("need p >= 2, got {}", self.p)));
        }
        if !(self.lo > 0.0 && self.lo <= self.hi && self.hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight range [{}, {}] must satisfy 0 < lo <= hi",
                self.lo, self.hi
            )));
        }
        match self.model {
            GraphModel::BarabasiAlbert { m: 0 } => {
                Err(Error::InvalidArgument("Barabási–Albert needs m >= 1".into()))
            }
            GraphModel::PlanarDelaunay if self.p < 3 => Err(Error::InvalidArgument(
                "planar graphs need at least 3 nodes".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedGraph {
    pub p: usize,
    /// Full-length weight vector; zero off the edge set.
    pub weights: Vec<f64>,
    pub edge_count: usize,
    /// Number of draws needed to obtain a connected graph.
    pub attempts: usize,
}

impl GeneratedGraph {
    pub fn laplacian(&self) -> DMatrix<f64> {
        apply_p(&self.weights, self.p).expect("weights sized for p")
    }
}

#[derive(Clone, Copy)]
struct Site {
    pos: Point2<f64>,
    id: usize,
}

impl HasPosition for Site {
    type Scalar = f64;

    fn position(&self) -> Point2<f64> {
        self.pos
    }
}

fn delaunay_edges(p: usize, rng: &mut ChaCha8Rng) -> Option<Vec<(usize, usize)>> {
    let mut tri: DelaunayTriangulation<Site> = DelaunayTriangulation::new();
    for id in 0..p {
        let pos = Point2::new(rng.random::<f64>(), rng.random::<f64>());
        tri.insert(Site { pos, id }).ok()?;
    }
    if tri.num_vertices() != p {
        return None;
    }
    Some(
        tri.undirected_edges()
            .map(|e| {
                let [a, b] = e.vertices();
                (a.data().id, b.data().id)
            })
            .collect(),
    )
}

fn barabasi_albert_edges(p: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges = vec![(1, 0)];
    let mut degree = vec![0usize; p];
    degree[0] = 1;
    degree[1] = 1;
    for v in 2..p {
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        let mut avail: Vec<usize> = (0..v).collect();
        for _ in 0..m.min(v) {
            let total: usize = avail.iter().map(|&u| degree[u]).sum();
            let mut r = rng.random_range(0..total);
            let pos = avail
                .iter()
                .position(|&u| {
                    if r < degree[u] {
                        true
                    } else {
                        r -= degree[u];
                        false
                    }
                })
                .expect("draw falls inside the total degree");
            chosen.push(avail.swap_remove(pos));
        }
        for &u in &chosen {
            edges.push((v, u));
            degree[u] += 1;
            degree[v] += 1;
        }
    }
    edges
}

fn is_connected(p: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); p];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; p];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == p
}

const MAX_ATTEMPTS: usize = 100;

/// Draws a connected weighted graph; disconnected draws are retried on the
/// next RNG stream.
pub fn gen_graph(spec: &GraphSpec) -> Result<GeneratedGraph> {
    spec.validate()?;
    let p = spec.p;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1 + attempt as u64);
        let edges = match spec.model {
            GraphModel::PlanarDelaunay => match delaunay_edges(p, &mut rng) {
                Some(e) => e,
                None => continue,
            },
            GraphModel::BarabasiAlbert { m } => barabasi_albert_edges(p, m, &mut rng),
        };
        if !is_connected(p, &edges) {
            log::info!("graph draw {attempt} for seed {} is disconnected, redrawing", spec.seed);
            continue;
        }
        let mut ks: Vec<usize> = edges.iter().map(|&(a, b)| edge_index0(a, b, p)).collect();
        ks.sort_unstable();
        ks.dedup();
        let mut weights = vec![0.0; num_edges(p)];
        for &k in &ks {
            weights[k] = rng.random_range(spec.lo..=spec.hi);
        }
        return Ok(GeneratedGraph {
            p,
            weights,
            edge_count: ks.len(),
            attempts: attempt + 1,
        });
    }
    Err(Error::Numerical(format!(
        "no connected graph after {MAX_ATTEMPTS} draws"
    )))
}

/// `n` samples (rows) of `N(0, L^+)` for a connected Laplacian `L`.
pub fn sample_lgmrf(l: &DMatrix<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if !l.is_square() {
        return Err(Error::Dimension("Laplacian must be square".into()));
    }
    let p = l.nrows();
    let eig = SymmetricEigen::new(l.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let top = eig.eigenvalues[order[p - 1]].abs().max(1.0);
    let zero_modes = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] <= 1e-9 * top)
        .count();
    if zero_modes != 1 {
        return Err(Error::Disconnected { zero_modes });
    }
    // Columns u_m / sqrt(lambda_m) of the nonzero modes.
    let mut basis = DMatrix::zeros(p, p - 1);
    for (c, &i) in order[1..].iter().enumerate() {
        let scale = eig.eigenvalues[i].sqrt().recip();
        basis.set_column(c, &(eig.eigenvectors.column(i) * scale));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = DMatrix::zeros(n, p - 1);
    for i in 0..n {
        for c in 0..p - 1 {
            z[(i, c)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut x = z * basis.transpose();
    for mut row in x.row_iter_mut() {
        let mean = row.sum() / p as f64;
        row.add_scalar_mut(-mean);
    }
    Ok(x)
}

/// `S = (1/n) X^T X`, rows of `X` being samples.
pub fn empirical_cov(samples: &DMatrix<f64>) -> Result<SampleCovariance> {
    let n = samples.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut s = samples.tr_mul(samples) / n as f64;
    let p = s.nrows();
    for j in 0..p {
        for i in (j + 1)..p {
            s[(j, i)] = s[(i, j)];
        }
    }
    SampleCovariance::new(s, n)
}

/// Ground truth, samples, and their covariance.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: GraphSpec,
    pub sampler_seed: u64,
    pub graph: GeneratedGraph,
    pub samples: DMatrix<f64>,
    pub cov: SampleCovariance,
}

impl Dataset {
    pub fn generate(spec: &GraphSpec, n: usize, sampler_seed: u64) -> Result<Self> {
        let graph = gen_graph(spec)?;
        let samples = sample_lgmrf(&graph.laplacian(), n, sampler_seed)?;
        let cov = empirical_cov(&samples)?;
        Ok(Dataset {
            spec: spec.clone(),
            sampler_seed,
            graph,
            samples,
            cov,
        })
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        self.graph.laplacian()
    }
}
