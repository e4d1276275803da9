//! Universal-cover machinery on a finite window of deck translates: lifted
//! functions, fundamental domains (unit cube and Dirichlet), covering
//! constants, oscillation bounds, and no-re-entry domain-chain paths.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::hodge::HarmonicOneForm;
use crate::mesh::{MetricField, PeriodicGrid};
use crate::report::Verdict;
use crate::tolerances::{LIFT_CLOSEDNESS_TOL, OSC_SLACK_CELLS};

/// A deck translate: an integer shift of the fundamental cube.
pub type Translate = [i64; 3];

/// Window radii tried in order; assignments that still touch the boundary of
/// the largest window are reported as window errors.
const WINDOW_RADII: [i64; 2] = [1, 2];

fn translate_add(a: Translate, b: Translate) -> Translate {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Steps one lifted coordinate along `axis` by `dir`, wrapping the base index
/// and carrying the wrap into the deck translate.
fn lifted_step(
    grid: &PeriodicGrid,
    base: usize,
    tr: Translate,
    axis: usize,
    dir: i64,
) -> (usize, Translate) {
    let n = grid.n() as i64;
    let mut c = grid.coords(base).map(|x| x as i64);
    let mut tr2 = tr;
    c[axis] += dir;
    if c[axis] >= n {
        c[axis] -= n;
        tr2[axis] += 1;
    } else if c[axis] < 0 {
        c[axis] += n;
        tr2[axis] -= 1;
    }
    (
        grid.index(c[0] as usize, c[1] as usize, c[2] as usize),
        tr2,
    )
}

/// Corner vertices of a lifted cell, each with the translate carrying any
/// index wrap, in lexicographic offset order.
fn lifted_cell_corners(grid: &PeriodicGrid, cell: usize, tr: Translate) -> [(usize, Translate); 8] {
    let n = grid.n();
    let c = grid.coords(cell);
    let mut out = [(0usize, [0i64; 3]); 8];
    for (m, slot) in out.iter_mut().enumerate() {
        let off = [(m >> 2) & 1, (m >> 1) & 1, m & 1];
        let mut v = [0usize; 3];
        let mut t = tr;
        for a in 0..3 {
            let raw = c[a] + off[a];
            if raw == n {
                v[a] = 0;
                t[a] += 1;
            } else {
                v[a] = raw;
            }
        }
        *slot = (grid.index(v[0], v[1], v[2]), t);
    }
    out
}

/// A finite box of deck translates over the base grid, with shared index
/// space for lifted cells and lifted vertices.
pub struct LiftedWindow<'a> {
    field: &'a MetricField,
    radius: i64,
}

/// Which adjacency graph a shortest-path computation runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GraphKind {
    /// Nodes are lifted vertices; edge weights from vertex metric samples.
    Vertices,
    /// Nodes are lifted cells; edge weights from cell-averaged metrics.
    Cells,
}

impl<'a> LiftedWindow<'a> {
    pub fn new(field: &'a MetricField, radius: i64) -> Self {
        LiftedWindow { field, radius }
    }

    fn side(&self) -> i64 {
        2 * self.radius + 1
    }

    pub fn translate_count(&self) -> usize {
        (self.side() * self.side() * self.side()) as usize
    }

    /// Translate of slot `t`, lexicographic over the box.
    pub fn translate_of(&self, t: usize) -> Translate {
        let s = self.side();
        let t = t as i64;
        [t / (s * s) - self.radius, (t / s) % s - self.radius, t % s - self.radius]
    }

    pub fn translate_index(&self, tr: Translate) -> Option<usize> {
        let s = self.side();
        if tr.iter().any(|&x| x.abs() > self.radius) {
            return None;
        }
        let a = tr[0] + self.radius;
        let b = tr[1] + self.radius;
        let c = tr[2] + self.radius;
        Some(((a * s + b) * s + c) as usize)
    }

    /// True when the translate does not sit on the outermost window layer.
    pub fn is_interior(&self, tr: Translate) -> bool {
        tr.iter().all(|&x| x.abs() < self.radius)
    }

    fn node_count(&self) -> usize {
        self.translate_count() * self.field.grid().vertex_count()
    }

    fn node(&self, base: usize, tr: Translate) -> Option<usize> {
        let per = self.field.grid().vertex_count();
        self.translate_index(tr).map(|t| t * per + base)
    }

    fn split(&self, node: usize) -> (usize, Translate) {
        let per = self.field.grid().vertex_count();
        (node % per, self.translate_of(node / per))
    }

    fn edge_weight(&self, kind: GraphKind, a: usize, b: usize, axis: usize) -> f64 {
        let entry = match kind {
            GraphKind::Vertices => {
                0.5 * (self.field.g(a)[(axis, axis)] + self.field.g(b)[(axis, axis)])
            }
            GraphKind::Cells => {
                0.5 * (self.field.cell_average(a)[(axis, axis)]
                    + self.field.cell_average(b)[(axis, axis)])
            }
        };
        entry.sqrt() * self.field.grid().h()
    }

    /// Multi-source Dijkstra over the window graph. Sources enter at
    /// distance zero; nodes outside the window are simply absent.
    fn distances(&self, kind: GraphKind, sources: &[(usize, Translate)]) -> Vec<f64> {
        let grid = self.field.grid();
        let mut dist = vec![f64::INFINITY; self.node_count()];
        let mut heap = BinaryHeap::new();
        for &(base, tr) in sources {
            if let Some(node) = self.node(base, tr) {
                if dist[node] > 0.0 {
                    dist[node] = 0.0;
                    heap.push(HeapEntry { dist: 0.0, node });
                }
            }
        }
        while let Some(HeapEntry { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            let (base, tr) = self.split(node);
            for axis in 0..3 {
                for dir in [1i64, -1] {
                    let (nb, nt) = lifted_step(grid, base, tr, axis, dir);
                    let Some(next) = self.node(nb, nt) else { continue };
                    let nd = d + self.edge_weight(kind, base, nb, axis);
                    if nd < dist[next] {
                        dist[next] = nd;
                        heap.push(HeapEntry { dist: nd, node: next });
                    }
                }
            }
        }
        dist
    }
}

/// Min-heap entry ordered by distance, then node index for determinism.
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want the closest node first.
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// How a fundamental domain was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    UnitCube,
    Dirichlet,
}

/// A fundamental domain given as one lifted cell per base cell: projection
/// is onto and injective by construction, and connectivity is verified for
/// the Dirichlet construction.
#[derive(Debug, Clone)]
pub struct FundamentalDomainCells {
    pub kind: DomainKind,
    /// Base cell of the Dirichlet basepoint, if any.
    pub basepoint: Option<usize>,
    /// Assigned deck translate per base cell.
    pub translate_of: Vec<Translate>,
}

impl FundamentalDomainCells {
    /// Lifted cells of the domain in base-cell order.
    pub fn cells<'s>(&'s self) -> impl Iterator<Item = (usize, Translate)> + 's {
        self.translate_of.iter().copied().enumerate()
    }

    /// The domain translated by a deck vector; a fundamental domain again.
    pub fn shifted(&self, tr: Translate) -> Self {
        FundamentalDomainCells {
            kind: self.kind,
            basepoint: self.basepoint,
            translate_of: self.translate_of.iter().map(|&t| translate_add(t, tr)).collect(),
        }
    }

    /// Checks path-connectivity in the lifted cell-adjacency graph.
    pub fn verify_connected(&self, grid: &PeriodicGrid) -> Result<()> {
        let total = self.translate_of.len();
        let mut seen = vec![false; total];
        let mut queue = VecDeque::new();
        seen[0] = true;
        queue.push_back(0usize);
        let mut reached = 1usize;
        while let Some(base) = queue.pop_front() {
            let tr = self.translate_of[base];
            for axis in 0..3 {
                for dir in [1i64, -1] {
                    let (nb, nt) = lifted_step(grid, base, tr, axis, dir);
                    if !seen[nb] && self.translate_of[nb] == nt {
                        seen[nb] = true;
                        reached += 1;
                        queue.push_back(nb);
                    }
                }
            }
        }
        if reached != total {
            return Err(Error::Connectivity(format!(
                "fundamental domain splits into pieces: {} of {} cells reachable",
                reached, total
            )));
        }
        Ok(())
    }
}

/// The unit-cube fundamental domain: every base cell at translate zero.
pub fn unit_cube_domain(field: &MetricField) -> FundamentalDomainCells {
    FundamentalDomainCells {
        kind: DomainKind::UnitCube,
        basepoint: None,
        translate_of: vec![[0; 3]; field.grid().vertex_count()],
    }
}

/// Dirichlet fundamental domain around a basepoint cell: each base cell is
/// assigned the deck translate whose lift is closest to the basepoint in the
/// cell-adjacency graph, ties resolved toward the lexicographically largest
/// translate (equivalently, the tied cell with the smallest deck shift wins).
pub fn dirichlet_domain(field: &MetricField, basepoint: usize) -> Result<FundamentalDomainCells> {
    let grid = field.grid();
    if basepoint >= grid.vertex_count() {
        return Err(Error::Domain(format!(
            "basepoint cell {} outside grid of {} cells",
            basepoint,
            grid.vertex_count()
        )));
    }
    for radius in WINDOW_RADII {
        let window = LiftedWindow::new(field, radius);
        let dist = window.distances(GraphKind::Cells, &[(basepoint, [0; 3])]);
        let per = grid.vertex_count();
        let mut translate_of = Vec::with_capacity(per);
        let mut touched_boundary = false;
        for base in 0..per {
            let mut best = f64::INFINITY;
            for t in 0..window.translate_count() {
                best = best.min(dist[t * per + base]);
            }
            let tie = 1e-12 * best.max(1.0);
            let mut chosen = [i64::MIN; 3];
            for t in 0..window.translate_count() {
                if dist[t * per + base] <= best + tie {
                    let tr = window.translate_of(t);
                    if tr > chosen {
                        chosen = tr;
                    }
                }
            }
            if !window.is_interior(chosen) {
                touched_boundary = true;
                break;
            }
            translate_of.push(chosen);
        }
        if touched_boundary {
            continue;
        }
        let domain = FundamentalDomainCells {
            kind: DomainKind::Dirichlet,
            basepoint: Some(basepoint),
            translate_of,
        };
        domain.verify_connected(grid)?;
        return Ok(domain);
    }
    Err(Error::Window {
        radius: *WINDOW_RADII.last().unwrap() as i32,
        context: "Dirichlet assignment touches the window boundary",
    })
}

/// Lifted cells within graph distance `eta` of the domain, measured in the
/// lifted vertex graph from the domain's corner vertices. Cells that merely
/// touch the domain therefore sit at distance zero.
pub fn eta_neighborhood(
    field: &MetricField,
    domain: &FundamentalDomainCells,
    eta: f64,
) -> Result<Vec<(usize, Translate)>> {
    if !(eta > 0.0) {
        return Err(Error::Parameter {
            name: "eta",
            value: eta,
            reason: "neighborhood size must be positive",
        });
    }
    let grid = field.grid();
    for radius in WINDOW_RADII {
        let window = LiftedWindow::new(field, radius);
        let mut sources = BTreeSet::new();
        for (cell, tr) in domain.cells() {
            for corner in lifted_cell_corners(grid, cell, tr) {
                sources.insert(corner);
            }
        }
        let sources: Vec<_> = sources.into_iter().collect();
        if sources
            .iter()
            .any(|&(_, tr)| window.translate_index(tr).is_none())
        {
            continue;
        }
        let dist = window.distances(GraphKind::Vertices, &sources);
        let cutoff = eta * (1.0 + 1e-12);
        let mut cells = Vec::new();
        let mut touched_boundary = false;
        'scan: for t in 0..window.translate_count() {
            let tr = window.translate_of(t);
            for cell in 0..grid.vertex_count() {
                let within = lifted_cell_corners(grid, cell, tr).iter().any(|&(v, vt)| {
                    window.node(v, vt).is_some_and(|node| dist[node] <= cutoff)
                });
                if within {
                    if !window.is_interior(tr) {
                        touched_boundary = true;
                        break 'scan;
                    }
                    cells.push((cell, tr));
                }
            }
        }
        if touched_boundary {
            continue;
        }
        cells.sort_unstable_by_key(|&(cell, tr)| (tr, cell));
        return Ok(cells);
    }
    Err(Error::Window {
        radius: *WINDOW_RADII.last().unwrap() as i32,
        context: "eta-neighborhood touches the window boundary",
    })
}

/// The covering multiplicity of the domain's `eta`-neighborhood: the largest
/// number of deck translates through which the neighborhood passes over a
/// single base cell. An upper bound for the infimum over all domains.
pub fn covering_constant(
    field: &MetricField,
    domain: &FundamentalDomainCells,
    eta: f64,
) -> Result<usize> {
    let cells = eta_neighborhood(field, domain, eta)?;
    let mut multiplicity = vec![0usize; field.grid().vertex_count()];
    for (cell, _) in cells {
        multiplicity[cell] += 1;
    }
    Ok(multiplicity.into_iter().max().unwrap_or(0))
}

/// A lift of a circle-map component to the cover: values on one translate
/// plus an integer period vector; equivariance is exact by construction.
#[derive(Debug, Clone)]
pub struct LiftedFunction {
    /// Values on the base translate's vertices.
    pub base_values: Vec<f64>,
    /// Integer periods: moving by deck translate `nu` adds `<period, nu>`.
    pub period: Vector3<i64>,
}

impl LiftedFunction {
    pub fn value(&self, vertex: usize, tr: Translate) -> f64 {
        let shift = self.period.x * tr[0] + self.period.y * tr[1] + self.period.z * tr[2];
        self.base_values[vertex] + shift as f64
    }
}

/// Lifts an arbitrary edge cochain (`values[v][axis]` = value on the edge
/// from `v` in direction `axis`) with declared integer periods, checking
/// discrete closedness before path-integrating.
pub fn lift_edge_cochain(
    grid: &PeriodicGrid,
    values: &[Vector3<f64>],
    period: Vector3<i64>,
) -> Result<LiftedFunction> {
    if values.len() != grid.vertex_count() {
        return Err(Error::Shape {
            left: values.len(),
            right: grid.vertex_count(),
        });
    }
    // Closedness: every coordinate plaquette must have zero circulation, and
    // every axis loop must integrate to the declared period.
    let mut defect = 0.0f64;
    for v in 0..grid.vertex_count() {
        for a in 0..3 {
            for b in (a + 1)..3 {
                let d = values[v][a] + values[grid.shift(v, a, 1)][b]
                    - values[grid.shift(v, b, 1)][a]
                    - values[v][b];
                defect = defect.max(d.abs());
            }
        }
    }
    for axis in 0..3 {
        let mut run = 0.0;
        let mut v = 0usize;
        for _ in 0..grid.n() {
            run += values[v][axis];
            v = grid.shift(v, axis, 1);
        }
        defect = defect.max((run - period[axis] as f64).abs());
    }
    if defect > LIFT_CLOSEDNESS_TOL {
        return Err(Error::ConsistencyDefect { defect });
    }
    // Path-integrate along the x line, then y lines, then z lines; no step
    // wraps, so the result lives on a single translate.
    let n = grid.n();
    let mut base_values = vec![0.0; grid.vertex_count()];
    for i in 0..n - 1 {
        let v = grid.index(i, 0, 0);
        base_values[grid.index(i + 1, 0, 0)] = base_values[v] + values[v][0];
    }
    for i in 0..n {
        for j in 0..n - 1 {
            let v = grid.index(i, j, 0);
            base_values[grid.index(i, j + 1, 0)] = base_values[v] + values[v][1];
        }
        for j in 0..n {
            for k in 0..n - 1 {
                let v = grid.index(i, j, k);
                base_values[grid.index(i, j, k + 1)] = base_values[v] + values[v][2];
            }
        }
    }
    Ok(LiftedFunction { base_values, period })
}

/// Lifts a harmonic map component. The component's cohomology class must be
/// an integer vector (it is a reduced-basis column for map components).
pub fn lift(field: &MetricField, form: &HarmonicOneForm) -> Result<LiftedFunction> {
    let grid = field.grid();
    let mut period = Vector3::zeros();
    for a in 0..3 {
        let rounded = form.class[a].round();
        if (form.class[a] - rounded).abs() > 1e-9 {
            return Err(Error::Parameter {
                name: "period",
                value: form.class[a],
                reason: "component periods must be integers",
            });
        }
        period[a] = rounded as i64;
    }
    let values: Vec<Vector3<f64>> = (0..grid.vertex_count())
        .map(|v| Vector3::new(
            form.edge_value(grid, v, 0),
            form.edge_value(grid, v, 1),
            form.edge_value(grid, v, 2),
        ))
        .collect();
    lift_edge_cochain(grid, &values, period)
}

/// Oscillation of a lifted function over the corner vertices of a lifted
/// cell set.
fn oscillation_over(
    grid: &PeriodicGrid,
    lifted: &LiftedFunction,
    cells: impl Iterator<Item = (usize, Translate)>,
) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (cell, tr) in cells {
        for (v, vt) in lifted_cell_corners(grid, cell, tr) {
            let x = lifted.value(v, vt);
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    if hi < lo {
        0.0
    } else {
        hi - lo
    }
}

/// Oscillation diagnostics for one lifted component over a fundamental
/// domain and its eta-neighborhood.
#[derive(Debug, Clone)]
pub struct OscillationReport {
    pub osc_domain: f64,
    pub osc_eta: f64,
    pub bound_domain: f64,
    pub bound_eta: f64,
    pub verdicts: Vec<Verdict>,
}

/// Compares the oscillation of a lifted component over the domain (and over
/// its eta-neighborhood) against the systole-normalized L2 bounds, with an
/// explicit two-cell discretization allowance.
pub fn oscillation_bounds(
    lifted: &LiftedFunction,
    domain: &FundamentalDomainCells,
    eta: f64,
    kappa: usize,
    sigma: f64,
    field: &MetricField,
    du_l2: f64,
) -> Result<OscillationReport> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter {
            name: "sigma",
            value: sigma,
            reason: "stable-systole hypothesis must be positive",
        });
    }
    let grid = field.grid();
    let slack = OSC_SLACK_CELLS * grid.h();
    let volume = field.total_volume();
    let bound_domain = volume.sqrt() / sigma * du_l2;
    let bound_eta = kappa as f64 * bound_domain;
    let osc_domain = oscillation_over(grid, lifted, domain.cells());
    let eta_cells = eta_neighborhood(field, domain, eta)?;
    let osc_eta = oscillation_over(grid, lifted, eta_cells.into_iter());
    let verdicts = vec![
        Verdict::upper_bound(
            "lem:u_bounded_fund_domain",
            osc_domain,
            bound_domain + slack,
            true,
        ),
        Verdict::upper_bound("lem:sup-inf_nhbd_bound", osc_eta, bound_eta + slack, true),
    ];
    Ok(OscillationReport {
        osc_domain,
        osc_eta,
        bound_domain,
        bound_eta,
        verdicts,
    })
}

/// A path through a union of translated fundamental domains that visits each
/// translate at most once, with segment boundaries on shared vertices.
#[derive(Debug, Clone)]
pub struct DomainChainPath {
    /// Lifted vertices, consecutive entries one grid edge apart.
    pub vertices: Vec<(usize, Translate)>,
    /// Index into the supplied copies for each segment; no repeats.
    pub copy_sequence: Vec<usize>,
    /// Start index in `vertices` of each segment; entry 0 is always 0, and
    /// each later start vertex belongs to both adjacent copies.
    pub segment_starts: Vec<usize>,
}

type LiftedCell = (usize, Translate);

/// Cells of the union incident to a lifted vertex, restricted to `members`.
fn incident_cells(
    grid: &PeriodicGrid,
    members: &BTreeMap<LiftedCell, u64>,
    vertex: (usize, Translate),
) -> Vec<LiftedCell> {
    let n = grid.n() as i64;
    let c = grid.coords(vertex.0).map(|x| x as i64);
    let mut out = Vec::new();
    for m in 0..8usize {
        let off = [(m >> 2) & 1, (m >> 1) & 1, m & 1];
        let mut cc = [0usize; 3];
        let mut tr = vertex.1;
        for a in 0..3 {
            let raw = c[a] - off[a] as i64;
            if raw < 0 {
                cc[a] = (raw + n) as usize;
                tr[a] -= 1;
            } else {
                cc[a] = raw as usize;
            }
        }
        let cell = (grid.index(cc[0], cc[1], cc[2]), tr);
        if members.contains_key(&cell) {
            out.push(cell);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Breadth-first cell path inside `allowed` from `start` to any cell in
/// `targets`; deterministic expansion order.
fn cell_path_bfs(
    grid: &PeriodicGrid,
    allowed: &BTreeSet<LiftedCell>,
    start: LiftedCell,
    targets: &BTreeSet<LiftedCell>,
) -> Option<Vec<LiftedCell>> {
    let mut parent: BTreeMap<LiftedCell, LiftedCell> = BTreeMap::new();
    let mut queue = VecDeque::new();
    parent.insert(start, start);
    queue.push_back(start);
    let mut found = None;
    if targets.contains(&start) {
        found = Some(start);
    }
    while found.is_none() {
        let Some((base, tr)) = queue.pop_front() else { break };
        for axis in 0..3 {
            for dir in [1i64, -1] {
                let next = lifted_step(grid, base, tr, axis, dir);
                if allowed.contains(&next) && !parent.contains_key(&next) {
                    parent.insert(next, (base, tr));
                    if targets.contains(&next) {
                        found = Some(next);
                    }
                    queue.push_back(next);
                }
            }
        }
    }
    let mut at = found?;
    let mut path = vec![at];
    while parent[&at] != at {
        at = parent[&at];
        path.push(at);
    }
    path.reverse();
    Some(path)
}

/// Walks between two corners of one lifted cell along cube edges, appending
/// every intermediate vertex (excluding `from`, including `to`).
fn walk_within_cell(
    grid: &PeriodicGrid,
    cell: LiftedCell,
    from: (usize, Translate),
    to: (usize, Translate),
    out: &mut Vec<(usize, Translate)>,
) {
    let corners = lifted_cell_corners(grid, cell.0, cell.1);
    let offset_of = |v: (usize, Translate)| -> usize {
        corners
            .iter()
            .position(|&c| c == v)
            .expect("vertex is a corner of the cell")
    };
    let mut cur = offset_of(from);
    let target = offset_of(to);
    for bit in [4usize, 2, 1] {
        if (cur ^ target) & bit != 0 {
            cur ^= bit;
            out.push(corners[cur]);
        }
    }
}

/// Builds a vertex path from `x0` to `x1` through the union of the supplied
/// domain copies such that the sequence of visited copies never repeats and
/// every segment boundary vertex lies in both adjacent copies.
pub fn domain_chain_path(
    field: &MetricField,
    copies: &[FundamentalDomainCells],
    x0: (usize, Translate),
    x1: (usize, Translate),
) -> Result<DomainChainPath> {
    let grid = field.grid();
    if copies.is_empty() || copies.len() > 64 {
        return Err(Error::Domain(format!(
            "need between 1 and 64 domain copies, got {}",
            copies.len()
        )));
    }
    let mut members: BTreeMap<LiftedCell, u64> = BTreeMap::new();
    for (i, copy) in copies.iter().enumerate() {
        for cell in copy.cells() {
            *members.entry(cell).or_insert(0) |= 1 << i;
        }
    }
    let start_cells = incident_cells(grid, &members, x0);
    let end_cells = incident_cells(grid, &members, x1);
    if start_cells.is_empty() || end_cells.is_empty() {
        return Err(Error::Domain(
            "path endpoints lie outside the supplied domain copies".into(),
        ));
    }
    let allowed: BTreeSet<LiftedCell> = members.keys().copied().collect();
    let targets: BTreeSet<LiftedCell> = end_cells.into_iter().collect();
    let raw_path = cell_path_bfs(grid, &allowed, start_cells[0], &targets).ok_or_else(|| {
        Error::Connectivity("path endpoints not connected within the domain copies".into())
    })?;

    // No-re-entry surgery: repeatedly take the last cell of the remaining
    // path that lies in the current copy, reroute to it inside the copy,
    // then hand over to an unused copy of the next cell.
    let copy_cells: Vec<BTreeSet<LiftedCell>> = copies
        .iter()
        .map(|c| c.cells().collect())
        .collect();
    let mut used = 0u64;
    let mut segments: Vec<(usize, Vec<LiftedCell>)> = Vec::new();
    let mut rest: &[LiftedCell] = &raw_path;
    let mut current = (members[&rest[0]].trailing_zeros() as usize).min(copies.len() - 1);
    loop {
        used |= 1 << current;
        let last = rest
            .iter()
            .rposition(|c| members[c] & (1 << current) != 0)
            .expect("current copy contains the segment head");
        let inside = cell_path_bfs(
            grid,
            &copy_cells[current],
            rest[0],
            &BTreeSet::from([rest[last]]),
        )
        .ok_or_else(|| {
            Error::Connectivity("a domain copy is not internally connected".into())
        })?;
        segments.push((current, inside));
        if last + 1 == rest.len() {
            break;
        }
        rest = &rest[last + 1..];
        let mask = members[&rest[0]] & !used;
        if mask == 0 {
            return Err(Error::Domain(
                "chain surgery re-entered an exhausted domain copy".into(),
            ));
        }
        current = mask.trailing_zeros() as usize;
    }

    // Stitch the cell segments into a vertex walk through shared corners.
    let mut vertices = vec![x0];
    let mut segment_starts = vec![0usize];
    let mut copy_sequence = Vec::new();
    let mut cur_vertex = x0;
    for (s, (copy, cells)) in segments.iter().enumerate() {
        copy_sequence.push(*copy);
        if s > 0 {
            // Transition: move to a corner shared with the previous cell,
            // which belongs to both copies by construction.
            let prev_cell = *segments[s - 1].1.last().unwrap();
            let shared: Vec<_> = {
                let a = lifted_cell_corners(grid, prev_cell.0, prev_cell.1);
                let b = lifted_cell_corners(grid, cells[0].0, cells[0].1);
                let bs: BTreeSet<_> = b.into_iter().collect();
                a.into_iter().filter(|v| bs.contains(v)).collect()
            };
            let via = *shared.iter().min().expect("adjacent cells share corners");
            walk_within_cell(grid, prev_cell, cur_vertex, via, &mut vertices);
            cur_vertex = via;
            segment_starts.push(vertices.len() - 1);
        }
        for w in 0..cells.len() {
            let next_target = if w + 1 < cells.len() {
                let a = lifted_cell_corners(grid, cells[w].0, cells[w].1);
                let b = lifted_cell_corners(grid, cells[w + 1].0, cells[w + 1].1);
                let bs: BTreeSet<_> = b.into_iter().collect();
                *a.iter().filter(|v| bs.contains(v)).min().unwrap()
            } else if s + 1 < segments.len() {
                // Transition handled at the top of the next iteration.
                break;
            } else {
                x1
            };
            walk_within_cell(grid, cells[w], cur_vertex, next_target, &mut vertices);
            cur_vertex = next_target;
        }
    }
    if cur_vertex != x1 {
        let last_cell = *segments.last().unwrap().1.last().unwrap();
        walk_within_cell(grid, last_cell, cur_vertex, x1, &mut vertices);
    }
    Ok(DomainChainPath {
        vertices,
        copy_sequence,
        segment_starts,
    })
}

/// CSV dump of domain cell assignments for external plotting.
pub fn domain_csv(grid: &PeriodicGrid, domain: &FundamentalDomainCells) -> String {
    let kind = match domain.kind {
        DomainKind::UnitCube => "unit_cube",
        DomainKind::Dirichlet => "dirichlet",
    };
    let mut out = String::from("i, j, k, nu1, nu2, nu3, kind\n");
    for (cell, tr) in domain.cells() {
        let c = grid.coords(cell);
        out.push_str(&format!(
            "{}, {}, {}, {}, {}, {}, {}\n",
            c[0], c[1], c[2], tr[0], tr[1], tr[2], kind
        ));
    }
    out
}
