//! Masked uniform grids and their geodesic geometry.
//!
//! A [`GridDomain`] is the discrete closed domain: every active mask cell is a
//! node, and nodes are joined by the edges of a fixed stencil. Distances are
//! shortest paths on that weighted graph, so the same metric is shared by the
//! transport solver and the Lipschitz checks.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neighborhood used to connect grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stencil {
    /// `2 * dim` axis neighbors.
    Axis,
    /// Axis plus diagonal neighbors (8 in 2D).
    Diagonal,
    /// Diagonal plus the eight (1, 2) knight moves (16 in 2D).
    Knight,
}

impl Stencil {
    /// Offsets that generate each undirected edge exactly once.
    fn half_offsets(self, dim: usize) -> Vec<(i64, i64)> {
        if dim == 1 {
            return vec![(1, 0)];
        }
        let mut out = vec![(1, 0), (0, 1)];
        if matches!(self, Stencil::Diagonal | Stencil::Knight) {
            out.extend([(1, 1), (1, -1)]);
        }
        if self == Stencil::Knight {
            out.extend([(1, 2), (2, 1), (2, -1), (1, -2)]);
        }
        out
    }

    /// Worst-case ratio of graph distance to Euclidean distance on a convex
    /// full grid, i.e. `sec(alpha / 2)` for the widest angular gap `alpha`
    /// between neighboring stencil directions.
    pub fn metric_constant(self, dim: usize) -> f64 {
        if dim == 1 {
            return 1.0;
        }
        let gap = match self {
            Stencil::Axis => PI / 2.0,
            Stencil::Diagonal => PI / 4.0,
            Stencil::Knight => (0.5f64).atan(),
        };
        1.0 / (gap / 2.0).cos()
    }
}

impl fmt::Display for Stencil {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stencil::Axis => "axis",
            Stencil::Diagonal => "diagonal",
            Stencil::Knight => "knight",
        };
        f.write_str(s)
    }
}

impl FromStr for Stencil {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "axis" => Ok(Stencil::Axis),
            "diagonal" | "diag" => Ok(Stencil::Diagonal),
            "knight" => Ok(Stencil::Knight),
            other => Err(Error::InvalidInput(format!("unknown stencil '{other}'"))),
        }
    }
}

/// Boolean cell grid, row-major with `x` fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub shape: Vec<usize>,
    pub cells: Vec<bool>,
}

impl Mask {
    pub fn full(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Mask { shape: shape.to_vec(), cells: vec![true; n] }
    }

    pub fn from_fn(shape: &[usize], mut active: impl FnMut(usize, usize) -> bool) -> Self {
        let nx = shape[0];
        let ny = shape.get(1).copied().unwrap_or(1);
        let mut cells = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                cells.push(active(ix, iy));
            }
        }
        Mask { shape: shape.to_vec(), cells }
    }

    /// Parses `#` (active) / `.` (inactive) rows. The first line is the top
    /// row, i.e. the largest `y` index. A single line gives a 1D mask.
    pub fn from_text(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptyDomain);
        }
        let nx = rows[0].chars().count();
        let mut grid = Vec::with_capacity(rows.len());
        for (r, line) in rows.iter().enumerate() {
            let row: Vec<bool> = line
                .chars()
                .map(|c| match c {
                    '#' => Ok(true),
                    '.' => Ok(false),
                    other => Err(Error::InvalidInput(format!(
                        "unexpected mask character '{other}' on line {}",
                        r + 1
                    ))),
                })
                .collect::<Result<_>>()?;
            if row.len() != nx {
                return Err(Error::InvalidInput(format!(
                    "mask line {} has {} cells, expected {nx}",
                    r + 1,
                    row.len()
                )));
            }
            grid.push(row);
        }
        if grid.len() == 1 {
            return Ok(Mask { shape: vec![nx], cells: grid.remove(0) });
        }
        let ny = grid.len();
        let cells = (0..ny).rev().flat_map(|r| grid[r].clone()).collect();
        Ok(Mask { shape: vec![nx, ny], cells })
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub node: usize,
    pub length: f64,
    pub edge: usize,
}

/// The discrete closed domain.
#[derive(Debug, Clone)]
pub struct GridDomain {
    dim: usize,
    shape: Vec<usize>,
    h: f64,
    origin: [f64; 2],
    stencil: Stencil,
    mask: Vec<bool>,
    nodes: Vec<usize>,
    cell_to_node: Vec<Option<usize>>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<Neighbor>>,
    /// `[axis][0 = backward, 1 = forward]`
    axis_neighbors: Vec<[[Option<usize>; 2]; 2]>,
    node_volume: Vec<f64>,
}

impl GridDomain {
    /// Builds the neighbor graph of `mask`. An edge is admitted only when every
    /// cell of the bounding box of its two endpoints is active, so edges never
    /// cut across inactive cells.
    pub fn build(mask: &Mask, h: f64, stencil: Stencil, origin: [f64; 2]) -> Result<Self> {
        let dim = mask.dim();
        if !(dim == 1 || dim == 2) {
            return Err(Error::InvalidInput(format!("dimension {dim} not supported")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidInput(format!("grid spacing must be positive, got {h}")));
        }
        let expected: usize = mask.shape.iter().product();
        if mask.cells.len() != expected {
            return Err(Error::InvalidInput("mask size does not match its shape".into()));
        }
        let nx = mask.shape[0];
        let ny = if dim == 2 { mask.shape[1] } else { 1 };

        let mut cell_to_node = vec![None; mask.cells.len()];
        let mut nodes = Vec::new();
        for (cell, &on) in mask.cells.iter().enumerate() {
            if on {
                cell_to_node[cell] = Some(nodes.len());
                nodes.push(cell);
            }
        }
        match nodes.len() {
            0 => return Err(Error::EmptyDomain),
            1 => {
                return Err(Error::InvalidInput("domain needs at least two active cells".into()))
            }
            _ => {}
        }

        let active = |ix: i64, iy: i64| -> bool {
            ix >= 0
                && iy >= 0
                && (ix as usize) < nx
                && (iy as usize) < ny
                && mask.cells[ix as usize + nx * iy as usize]
        };

        let mut edges = Vec::new();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (a, &cell) in nodes.iter().enumerate() {
            let (ix, iy) = ((cell % nx) as i64, (cell / nx) as i64);
            for (dx, dy) in stencil.half_offsets(dim) {
                let (jx, jy) = (ix + dx, iy + dy);
                if !active(jx, jy) {
                    continue;
                }
                let (x0, x1) = (ix.min(jx), ix.max(jx));
                let (y0, y1) = (iy.min(jy), iy.max(jy));
                let boxed = (x0..=x1).all(|x| (y0..=y1).all(|y| active(x, y)));
                if !boxed {
                    continue;
                }
                let b = cell_to_node[jx as usize + nx * jy as usize].expect("active cell");
                let length = h * ((dx * dx + dy * dy) as f64).sqrt();
                let e = edges.len();
                edges.push(Edge { a, b, length });
                adjacency[a].push(Neighbor { node: b, length, edge: e });
                adjacency[b].push(Neighbor { node: a, length, edge: e });
            }
        }

        let mut axis_neighbors = vec![[[None; 2]; 2]; nodes.len()];
        let mut node_volume = vec![0.0; nodes.len()];
        for (n, &cell) in nodes.iter().enumerate() {
            let (ix, iy) = ((cell % nx) as i64, (cell / nx) as i64);
            let mut vol = 1.0;
            for axis in 0..dim {
                let (dx, dy) = if axis == 0 { (1, 0) } else { (0, 1) };
                let lookup = |sx: i64, sy: i64| -> Option<usize> {
                    if active(sx, sy) {
                        cell_to_node[sx as usize + nx * sy as usize]
                    } else {
                        None
                    }
                };
                let back = lookup(ix - dx, iy - dy);
                let fwd = lookup(ix + dx, iy + dy);
                axis_neighbors[n][axis] = [back, fwd];
                // dual-cell fraction along this axis
                vol *= match (back.is_some(), fwd.is_some()) {
                    (true, true) | (false, false) => 1.0,
                    _ => 0.5,
                };
            }
            node_volume[n] = vol * h.powi(dim as i32);
        }

        let dom = GridDomain {
            dim,
            shape: mask.shape.clone(),
            h,
            origin,
            stencil,
            mask: mask.cells.clone(),
            nodes,
            cell_to_node,
            edges,
            adjacency,
            axis_neighbors,
            node_volume,
        };
        let components = dom.count_components();
        if components > 1 {
            return Err(Error::DisconnectedDomain { components });
        }
        Ok(dom)
    }

    /// Uniform grid of `n` nodes on `[a, b]`.
    pub fn interval(a: f64, b: f64, n: usize) -> Result<Self> {
        if n < 2 || b <= a {
            return Err(Error::InvalidInput(format!("bad interval [{a}, {b}] with {n} nodes")));
        }
        let h = (b - a) / (n - 1) as f64;
        Self::build(&Mask::full(&[n]), h, Stencil::Axis, [a, 0.0])
    }

    /// Full rectangle of `nx * ny` nodes with lower-left node at `origin`.
    pub fn rectangle(nx: usize, ny: usize, h: f64, stencil: Stencil, origin: [f64; 2]) -> Result<Self> {
        Self::build(&Mask::full(&[nx, ny]), h, stencil, origin)
    }

    /// `[0, 1]^2` with `n` nodes per side.
    pub fn unit_square(n: usize, stencil: Stencil) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput("need at least two nodes per side".into()));
        }
        Self::rectangle(n, n, 1.0 / (n - 1) as f64, stencil, [0.0, 0.0])
    }

    /// Unit square minus its open upper-right quadrant, `n` nodes per side
    /// (`n` odd so the reentrant corner `(0.5, 0.5)` is a node).
    pub fn l_shape(n: usize, stencil: Stencil) -> Result<Self> {
        if n < 3 || n % 2 == 0 {
            return Err(Error::InvalidInput("L-shape needs an odd node count >= 3".into()));
        }
        let half = (n - 1) / 2;
        let mask = Mask::from_fn(&[n, n], |ix, iy| ix <= half || iy <= half);
        Self::build(&mask, 1.0 / (n - 1) as f64, stencil, [0.0, 0.0])
    }

    fn count_components(&self) -> usize {
        let mut seen = vec![false; self.num_nodes()];
        let mut components = 0;
        let mut stack = Vec::new();
        for start in 0..self.num_nodes() {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for nb in &self.adjacency[v] {
                    if !seen[nb.node] {
                        seen[nb.node] = true;
                        stack.push(nb.node);
                    }
                }
            }
        }
        components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn stencil(&self) -> Stencil {
        self.stencil
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Quadrature weight of a node: its dual cell clipped to the domain, so
    /// the weights of a full rectangle sum to its area exactly.
    pub fn node_volume(&self, node: usize) -> f64 {
        self.node_volume[node]
    }

    pub fn node_volumes(&self) -> &[f64] {
        &self.node_volume
    }

    pub fn total_volume(&self) -> f64 {
        self.node_volume.iter().sum()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Cell indices of the active nodes.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[Neighbor] {
        &self.adjacency[node]
    }

    /// Axis neighbor of `node`; `forward` selects the `+` direction.
    pub fn axis_neighbor(&self, node: usize, axis: usize, forward: bool) -> Option<usize> {
        self.axis_neighbors[node][axis][forward as usize]
    }

    /// Integer grid position of a node.
    pub fn grid_index(&self, node: usize) -> (usize, usize) {
        let nx = self.shape[0];
        let cell = self.nodes[node];
        (cell % nx, cell / nx)
    }

    pub fn node_at(&self, ix: usize, iy: usize) -> Option<usize> {
        let nx = self.shape[0];
        let ny = if self.dim == 2 { self.shape[1] } else { 1 };
        if ix >= nx || iy >= ny {
            return None;
        }
        self.cell_to_node[ix + nx * iy]
    }

    pub fn coords(&self, node: usize) -> [f64; 2] {
        let (ix, iy) = self.grid_index(node);
        let y = if self.dim == 2 { self.origin[1] + self.h * iy as f64 } else { 0.0 };
        [self.origin[0] + self.h * ix as f64, y]
    }

    /// Active node closest (Euclidean) to `point`.
    pub fn nearest_node(&self, point: [f64; 2]) -> usize {
        (0..self.num_nodes())
            .min_by(|&a, &b| {
                let da = dist2(self.coords(a), point);
                let db = dist2(self.coords(b), point);
                da.total_cmp(&db)
            })
            .expect("domain is nonempty")
    }

    /// True when every stencil direction and its opposite are present, i.e.
    /// the node lies in the discrete interior.
    pub fn is_interior(&self, node: usize) -> bool {
        let full = match (self.dim, self.stencil) {
            (1, _) => 2,
            (_, Stencil::Axis) => 4,
            (_, Stencil::Diagonal) => 8,
            (_, Stencil::Knight) => 16,
        };
        self.adjacency[node].len() == full
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Single-source shortest path distances on the domain graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicTable {
    pub source: usize,
    pub dist: Vec<f64>,
}

impl GeodesicTable {
    pub fn eccentricity(&self) -> f64 {
        self.dist.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, PartialEq)]
pub(crate) struct HeapItem {
    pub key: f64,
    pub node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on key
        other.key.total_cmp(&self.key).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from `source`.
pub fn geodesic_distance(dom: &GridDomain, source: usize) -> Result<GeodesicTable> {
    if source >= dom.num_nodes() {
        return Err(Error::InvalidInput(format!("source node {source} out of range")));
    }
    let mut dist = vec![f64::INFINITY; dom.num_nodes()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapItem { key: 0.0, node: source });
    while let Some(HeapItem { key, node }) = heap.pop() {
        if key > dist[node] {
            continue;
        }
        for nb in dom.neighbors(node) {
            let cand = key + nb.length;
            if cand < dist[nb.node] {
                dist[nb.node] = cand;
                heap.push(HeapItem { key: cand, node: nb.node });
            }
        }
    }
    Ok(GeodesicTable { source, dist })
}

/// Geodesic diameter together with a pair of nodes realizing it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diameter {
    pub value: f64,
    pub a: usize,
    pub b: usize,
}

/// Exact graph diameter by eccentricity bounding: every node keeps lower and
/// upper bounds on its eccentricity derived from the sweeps done so far and is
/// dropped once its upper bound cannot beat the best value found.
pub fn diameter(dom: &GridDomain) -> Diameter {
    let n = dom.num_nodes();
    let mut lower = vec![0.0f64; n];
    let mut upper = vec![f64::INFINITY; n];
    let mut candidate = vec![true; n];
    let mut remaining = n;
    let mut best = Diameter { value: 0.0, a: 0, b: 0 };
    let mut pick_high = true;

    while remaining > 0 {
        let pick = (0..n).filter(|&v| candidate[v]).max_by(|&x, &y| {
            if pick_high {
                upper[x].total_cmp(&upper[y]).then(y.cmp(&x))
            } else {
                lower[y].total_cmp(&lower[x]).then(y.cmp(&x))
            }
        });
        let Some(v) = pick else { break };
        pick_high = !pick_high;

        let table = geodesic_distance(dom, v).expect("node in range");
        let (far, ecc) = table
            .dist
            .iter()
            .copied()
            .enumerate()
            .fold((v, 0.0), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
        candidate[v] = false;
        remaining -= 1;
        if ecc > best.value {
            best = Diameter { value: ecc, a: v, b: far };
        }
        for w in 0..n {
            if !candidate[w] {
                continue;
            }
            let d = table.dist[w];
            lower[w] = lower[w].max(d).max(ecc - d);
            upper[w] = upper[w].min(ecc + d);
            if upper[w] <= best.value {
                candidate[w] = false;
                remaining -= 1;
            }
        }
    }
    best
}

pub fn geodesic_diameter(dom: &GridDomain) -> f64 {
    diameter(dom).value
}

/// `2 / diam`, the first nontrivial Neumann eigenvalue of the infinity Laplacian.
pub fn lambda_infinity(dom: &GridDomain) -> f64 {
    2.0 / geodesic_diameter(dom)
}
