use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathKind {
    Direct,
    SurfaceBounce,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position {
    /// Horizontal distance from the left boundary, meters.
    pub range: f64,
    /// Depth below the surface, meters (positive down).
    pub depth: f64,
}

impl Position {
    pub fn new(range: f64, depth: f64) -> Self {
        Self { range, depth }
    }
}

/// Layout of the tomography experiment before it is validated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub range_extent: f64,
    pub depth_extent: f64,
    pub n_range: usize,
    pub n_depth: usize,
    pub n_sources: usize,
    pub n_receivers: usize,
    /// Shallowest and deepest source depth; sources are evenly spaced between.
    pub source_depths: (f64, f64),
    pub receiver_depths: (f64, f64),
    pub path_kinds: Vec<PathKind>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            range_extent: 5000.0,
            depth_extent: 1000.0,
            n_range: 5,
            n_depth: 21,
            n_sources: 4,
            n_receivers: 4,
            source_depths: (100.0, 900.0),
            receiver_depths: (100.0, 900.0),
            path_kinds: vec![PathKind::Direct, PathKind::SurfaceBounce],
        }
    }
}

impl GeometryConfig {
    /// 20 sources and 20 receivers every 50 m in the upper kilometre, 11 x 231 grid.
    pub fn full_scale() -> Self {
        Self {
            n_range: 11,
            n_depth: 231,
            n_sources: 20,
            n_receivers: 20,
            source_depths: (25.0, 975.0),
            receiver_depths: (25.0, 975.0),
            ..Self::default()
        }
    }
}

/// One path's cell lengths, in traversal order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellIntersections {
    pub segments: Vec<(usize, f64)>,
}

impl CellIntersections {
    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|&(_, l)| l).sum()
    }

    fn push(&mut self, cell: usize, len: f64) {
        match self.segments.last_mut() {
            Some((c, l)) if *c == cell => *l += len,
            _ => self.segments.push((cell, len)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub range_extent: f64,
    pub depth_extent: f64,
    pub n_range: usize,
    pub n_depth: usize,
    pub sources: Vec<Position>,
    pub receivers: Vec<Position>,
    pub path_kinds: Vec<PathKind>,
    /// Cached traversal of every observation path, in observation order.
    #[serde(skip)]
    paths: Vec<CellIntersections>,
}

fn spread(n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Builds sources on the left boundary and receivers on the right boundary.
pub fn make_geometry(config: &GeometryConfig) -> Result<Geometry> {
    let c = config;
    if c.n_sources == 0 || c.n_receivers == 0 {
        return Err(Error::Config(
            "need at least one source and one receiver".into(),
        ));
    }
    for (name, (lo, hi)) in [("source", c.source_depths), ("receiver", c.receiver_depths)] {
        if !(lo <= hi && lo >= 0.0 && hi <= c.depth_extent) {
            return Err(Error::Config(format!(
                "{name} depth span ({lo}, {hi}) must lie within [0, {}]",
                c.depth_extent
            )));
        }
    }
    let sources = spread(c.n_sources, c.source_depths)
        .into_iter()
        .map(|d| Position::new(0.0, d))
        .collect();
    let receivers = spread(c.n_receivers, c.receiver_depths)
        .into_iter()
        .map(|d| Position::new(c.range_extent, d))
        .collect();
    Geometry::new(
        c.range_extent,
        c.depth_extent,
        c.n_range,
        c.n_depth,
        sources,
        receivers,
        c.path_kinds.clone(),
    )
}

impl Geometry {
    pub fn new(
        range_extent: f64,
        depth_extent: f64,
        n_range: usize,
        n_depth: usize,
        sources: Vec<Position>,
        receivers: Vec<Position>,
        path_kinds: Vec<PathKind>,
    ) -> Result<Self> {
        if !(range_extent > 0.0 && depth_extent > 0.0)
            || !range_extent.is_finite()
            || !depth_extent.is_finite()
        {
            return Err(Error::Config(format!(
                "extents must be positive, got {range_extent} x {depth_extent}"
            )));
        }
        if n_range == 0 || n_depth == 0 {
            return Err(Error::Config(
                "grid needs at least one cell per axis".into(),
            ));
        }
        if sources.is_empty() || receivers.is_empty() || path_kinds.is_empty() {
            return Err(Error::Config(
                "empty source, receiver or path-kind list".into(),
            ));
        }
        let mut g = Self {
            range_extent,
            depth_extent,
            n_range,
            n_depth,
            sources,
            receivers,
            path_kinds,
            paths: Vec::new(),
        };
        for p in g.sources.iter().chain(&g.receivers) {
            g.check_inside(*p)?;
        }
        let mut paths = Vec::with_capacity(g.n_obs());
        for s in &g.sources {
            for r in &g.receivers {
                for &k in &g.path_kinds {
                    paths.push(trace_path(*s, *r, k, &g)?);
                }
            }
        }
        g.paths = paths;
        Ok(g)
    }

    /// Re-traces the cached paths; needed after deserialization.
    pub fn rebuilt(self) -> Result<Self> {
        Self::new(
            self.range_extent,
            self.depth_extent,
            self.n_range,
            self.n_depth,
            self.sources,
            self.receivers,
            self.path_kinds,
        )
    }

    pub fn n_cells(&self) -> usize {
        self.n_range * self.n_depth
    }

    pub fn n_obs(&self) -> usize {
        self.sources.len() * self.receivers.len() * self.path_kinds.len()
    }

    pub fn cell_range(&self) -> f64 {
        self.range_extent / self.n_range as f64
    }

    pub fn cell_depth(&self) -> f64 {
        self.depth_extent / self.n_depth as f64
    }

    /// Flat index of observation (source, receiver, path kind).
    pub fn obs_index(&self, src: usize, rcv: usize, path: usize) -> usize {
        (src * self.receivers.len() + rcv) * self.path_kinds.len() + path
    }

    /// Row-major cell index: range-major, depth-minor.
    pub fn cell_index(&self, ir: usize, iz: usize) -> usize {
        ir * self.n_depth + iz
    }

    pub fn paths(&self) -> &[CellIntersections] {
        &self.paths
    }

    /// Cell containing a point; lower edges inclusive, the far boundary folds into the last cell.
    fn locate(&self, range: f64, depth: f64) -> usize {
        let ir = ((range / self.cell_range()).floor().max(0.0) as usize).min(self.n_range - 1);
        let iz = ((depth / self.cell_depth()).floor().max(0.0) as usize).min(self.n_depth - 1);
        self.cell_index(ir, iz)
    }

    fn check_inside(&self, p: Position) -> Result<()> {
        let ok = (0.0..=self.range_extent).contains(&p.range)
            && (0.0..=self.depth_extent).contains(&p.depth);
        if ok {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "position ({}, {}) outside [0, {}] x [0, {}]",
                p.range, p.depth, self.range_extent, self.depth_extent
            )))
        }
    }

    fn traverse(&self, a: Position, b: Position, out: &mut CellIntersections) {
        let (dr, dz) = (b.range - a.range, b.depth - a.depth);
        let len = dr.hypot(dz);
        if len == 0.0 {
            return;
        }
        let mut ts = vec![0.0, 1.0];
        if dr != 0.0 {
            for i in 0..=self.n_range {
                let t = (i as f64 * self.cell_range() - a.range) / dr;
                if t > 0.0 && t < 1.0 {
                    ts.push(t);
                }
            }
        }
        if dz != 0.0 {
            for j in 0..=self.n_depth {
                let t = (j as f64 * self.cell_depth() - a.depth) / dz;
                if t > 0.0 && t < 1.0 {
                    ts.push(t);
                }
            }
        }
        ts.sort_by(f64::total_cmp);
        for w in ts.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            if t1 <= t0 {
                continue;
            }
            let tm = 0.5 * (t0 + t1);
            let cell = self.locate(a.range + tm * dr, a.depth + tm * dz);
            out.push(cell, (t1 - t0) * len);
        }
    }
}

/// Straight-ray traversal of one source/receiver path through the grid.
///
/// A surface bounce is the mirror-image path: the reflection point on the
/// surface splits it into two straight legs.
pub fn trace_path(
    src: Position,
    rcv: Position,
    kind: PathKind,
    geom: &Geometry,
) -> Result<CellIntersections> {
    geom.check_inside(src)?;
    geom.check_inside(rcv)?;
    let mut out = CellIntersections::default();
    match kind {
        PathKind::Direct => geom.traverse(src, rcv, &mut out),
        PathKind::SurfaceBounce => {
            let total_depth = src.depth + rcv.depth;
            let frac = if total_depth > 0.0 {
                src.depth / total_depth
            } else {
                0.0
            };
            let bounce = Position::new(src.range + (rcv.range - src.range) * frac, 0.0);
            geom.traverse(src, bounce, &mut out);
            geom.traverse(bounce, rcv, &mut out);
        }
    }
    Ok(out)
}
