//! Ego-relative occupancy grid: geometry, cell addressing, labels, map fusion
//! and the weighted-MAE metric family.
//!
//! Coordinates follow the ego frame: `x` is longitudinal (forward), `y` is
//! lateral. Cells are half-open rectangles `[low, high)` addressed by 1-based
//! `(i_x, i_y)` indices. The class space used by the classification head is
//! every cell plus one extra out-of-boundary class.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("invalid grid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid coordinate ({x}, {y}): must be finite")]
    InvalidCoordinate { x: f64, y: f64 },
    #[error("grid index ({i_x}, {i_y}) out of range for a {m_x}x{m_y} grid")]
    IndexOutOfRange {
        i_x: usize,
        i_y: usize,
        m_x: usize,
        m_y: usize,
    },
    #[error("cannot fuse maps with different geometries")]
    GeometryMismatch,
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("map {0} has no probability mass inside the grid")]
    DegenerateMap(usize),
}

/// Grid layout in the ego-heading-aligned frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    /// Number of longitudinal cells.
    pub m_x: usize,
    /// Number of lateral cells.
    pub m_y: usize,
    /// Longitudinal extent of one cell in meters.
    pub cell_length: f64,
    /// Lateral extent of one cell in meters.
    pub cell_width: f64,
    pub x_min: f64,
    pub y_min: f64,
}

impl Default for GridGeometry {
    /// 36 x 21 cells of 5 m x 0.875 m covering 0..180 m ahead and
    /// +-9.1875 m to each side.
    fn default() -> Self {
        Self {
            m_x: 36,
            m_y: 21,
            cell_length: 5.0,
            cell_width: 0.875,
            x_min: 0.0,
            y_min: -(21.0 * 0.875) / 2.0,
        }
    }
}

impl GridGeometry {
    pub fn new(
        m_x: usize,
        m_y: usize,
        cell_length: f64,
        cell_width: f64,
        x_min: f64,
        y_min: f64,
    ) -> Result<Self, GridError> {
        let g = Self {
            m_x,
            m_y,
            cell_length,
            cell_width,
            x_min,
            y_min,
        };
        g.validate()?;
        Ok(g)
    }

    /// Grid centered laterally on the ego vehicle, starting at `x = 0`.
    pub fn centered(
        m_x: usize,
        m_y: usize,
        cell_length: f64,
        cell_width: f64,
    ) -> Result<Self, GridError> {
        Self::new(
            m_x,
            m_y,
            cell_length,
            cell_width,
            0.0,
            -(m_y as f64 * cell_width) / 2.0,
        )
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.m_x == 0 || self.m_y == 0 {
            return Err(GridError::InvalidGeometry(
                "cell counts must be at least 1".into(),
            ));
        }
        if !(self.cell_length > 0.0 && self.cell_width > 0.0) {
            return Err(GridError::InvalidGeometry(
                "cell sizes must be positive".into(),
            ));
        }
        if !(self.x_min.is_finite() && self.y_min.is_finite()) {
            return Err(GridError::InvalidGeometry("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.m_x * self.m_y
    }

    /// Number of classification targets: every cell plus out-of-boundary.
    pub fn total_classes(&self) -> usize {
        self.n_cells() + 1
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + self.m_x as f64 * self.cell_length
    }

    pub fn y_max(&self) -> f64 {
        self.y_min + self.m_y as f64 * self.cell_width
    }

    /// Length of the grid diagonal in index units.
    pub fn index_diagonal(&self) -> f64 {
        let dx = (self.m_x - 1) as f64;
        let dy = (self.m_y - 1) as f64;
        dx.hypot(dy)
    }

    pub fn contains_index(&self, idx: GridIndex) -> bool {
        (1..=self.m_x).contains(&idx.i_x) && (1..=self.m_y).contains(&idx.i_y)
    }

    /// Cell rectangle as `(x_low, x_high, y_low, y_high)`.
    pub fn cell_bounds(&self, idx: GridIndex) -> (f64, f64, f64, f64) {
        let x0 = self.x_min + (idx.i_x - 1) as f64 * self.cell_length;
        let y0 = self.y_min + (idx.i_y - 1) as f64 * self.cell_width;
        (x0, x0 + self.cell_length, y0, y0 + self.cell_width)
    }

    /// Iterates every valid index, `i_x` major.
    pub fn indices(&self) -> impl Iterator<Item = GridIndex> + '_ {
        (1..=self.m_x).flat_map(move |i_x| (1..=self.m_y).map(move |i_y| GridIndex { i_x, i_y }))
    }
}

/// 1-based two-dimensional cell index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridIndex {
    pub i_x: usize,
    pub i_y: usize,
}

impl GridIndex {
    pub fn new(i_x: usize, i_y: usize) -> Self {
        Self { i_x, i_y }
    }
}

/// Classification target: a grid cell or the out-of-boundary class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellLabel {
    InGrid(GridIndex),
    OutOfBoundary,
}

impl CellLabel {
    /// 0-based class id in `[0, m_x*m_y]`; out-of-boundary is `m_x*m_y`.
    pub fn linear_class(&self, geometry: &GridGeometry) -> usize {
        match self {
            CellLabel::InGrid(idx) => (idx.i_x - 1) * geometry.m_y + (idx.i_y - 1),
            CellLabel::OutOfBoundary => geometry.n_cells(),
        }
    }

    pub fn from_class(geometry: &GridGeometry, class: usize) -> Result<Self, GridError> {
        let n = geometry.n_cells();
        match class.cmp(&n) {
            std::cmp::Ordering::Less => Ok(CellLabel::InGrid(GridIndex {
                i_x: class / geometry.m_y + 1,
                i_y: class % geometry.m_y + 1,
            })),
            std::cmp::Ordering::Equal => Ok(CellLabel::OutOfBoundary),
            std::cmp::Ordering::Greater => Err(GridError::Argument(format!(
                "class {class} exceeds {n} (out-of-boundary)"
            ))),
        }
    }

    pub fn one_hot(&self, geometry: &GridGeometry) -> Vec<f64> {
        let mut v = vec![0.0; geometry.total_classes()];
        v[self.linear_class(geometry)] = 1.0;
        v
    }

    pub fn is_in_grid(&self) -> bool {
        matches!(self, CellLabel::InGrid(_))
    }
}

/// Probability per cell plus the out-of-boundary probability.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMap {
    pub geometry: GridGeometry,
    /// Per-cell probability in linear class order (`i_x` major).
    pub p: Vec<f64>,
    pub p_oob: f64,
}

impl OccupancyMap {
    pub fn zeros(geometry: GridGeometry) -> Self {
        Self {
            geometry,
            p: vec![0.0; geometry.n_cells()],
            p_oob: 0.0,
        }
    }

    /// Builds a map from a full class vector (cells followed by the OOB class).
    pub fn from_class_probs(geometry: GridGeometry, probs: &[f64]) -> Result<Self, GridError> {
        if probs.len() != geometry.total_classes() {
            return Err(GridError::Argument(format!(
                "expected {} class probabilities, got {}",
                geometry.total_classes(),
                probs.len()
            )));
        }
        let n = geometry.n_cells();
        Ok(Self {
            geometry,
            p: probs[..n].to_vec(),
            p_oob: probs[n],
        })
    }

    pub fn class_probs(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.p.len() + 1);
        v.extend_from_slice(&self.p);
        v.push(self.p_oob);
        v
    }

    pub fn get(&self, idx: GridIndex) -> f64 {
        self.p[CellLabel::InGrid(idx).linear_class(&self.geometry)]
    }

    pub fn set(&mut self, idx: GridIndex, value: f64) {
        let k = CellLabel::InGrid(idx).linear_class(&self.geometry);
        self.p[k] = value;
    }

    pub fn in_grid_mass(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.in_grid_mass() + self.p_oob
    }

    /// The `k` most probable cells, highest first; ties keep index order.
    pub fn top_k(&self, k: usize) -> Vec<(GridIndex, f64)> {
        let mut order: Vec<usize> = (0..self.p.len()).collect();
        order.sort_by(|&a, &b| self.p[b].total_cmp(&self.p[a]).then(a.cmp(&b)));
        order
            .into_iter()
            .take(k)
            .map(|c| match CellLabel::from_class(&self.geometry, c) {
                Ok(CellLabel::InGrid(idx)) => (idx, self.p[c]),
                _ => unreachable!("cell classes are always in grid"),
            })
            .collect()
    }
}

/// Maps an ego-relative position to its cell, or to out-of-boundary.
pub fn coord_to_label(geometry: &GridGeometry, x: f64, y: f64) -> Result<CellLabel, GridError> {
    if !(x.is_finite() && y.is_finite()) {
        return Err(GridError::InvalidCoordinate { x, y });
    }
    let fx = ((x - geometry.x_min) / geometry.cell_length).floor();
    let fy = ((y - geometry.y_min) / geometry.cell_width).floor();
    if fx < 0.0 || fy < 0.0 || fx >= geometry.m_x as f64 || fy >= geometry.m_y as f64 {
        return Ok(CellLabel::OutOfBoundary);
    }
    Ok(CellLabel::InGrid(GridIndex {
        i_x: fx as usize + 1,
        i_y: fy as usize + 1,
    }))
}

/// Midpoint of a cell rectangle.
pub fn cell_center(geometry: &GridGeometry, idx: GridIndex) -> Result<(f64, f64), GridError> {
    if !geometry.contains_index(idx) {
        return Err(GridError::IndexOutOfRange {
            i_x: idx.i_x,
            i_y: idx.i_y,
            m_x: geometry.m_x,
            m_y: geometry.m_y,
        });
    }
    Ok((
        geometry.x_min + (idx.i_x as f64 - 0.5) * geometry.cell_length,
        geometry.y_min + (idx.i_y as f64 - 0.5) * geometry.cell_width,
    ))
}

/// Combines per-vehicle maps into one occupancy map with
/// `P = 1 - prod_i (1 - P_i)` per cell; the OOB entry is fused the same way.
pub fn fuse_maps(maps: &[OccupancyMap]) -> Result<OccupancyMap, GridError> {
    let first = maps
        .first()
        .ok_or_else(|| GridError::Argument("cannot fuse an empty list of maps".into()))?;
    if maps.iter().any(|m| m.geometry != first.geometry) {
        return Err(GridError::GeometryMismatch);
    }
    let mut complement = vec![1.0; first.p.len()];
    let mut complement_oob = 1.0;
    for m in maps {
        for (c, &p) in complement.iter_mut().zip(&m.p) {
            *c *= 1.0 - p;
        }
        complement_oob *= 1.0 - m.p_oob;
    }
    Ok(OccupancyMap {
        geometry: first.geometry,
        p: complement.into_iter().map(|c| (1.0 - c).clamp(0.0, 1.0)).collect(),
        p_oob: (1.0 - complement_oob).clamp(0.0, 1.0),
    })
}

/// Mean absolute errors; `mae` is Euclidean, `mae_x`/`mae_y` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    pub mae: f64,
    pub mae_x: f64,
    pub mae_y: f64,
}

/// Expected grid-index distance between each predicted map and its labeled
/// cell, averaged over examples.
///
/// Each map's in-grid mass is renormalized to one before weighting; labels
/// must all be in-grid (out-of-boundary examples are filtered by the caller).
pub fn weighted_mae(
    predictions: &[OccupancyMap],
    labels: &[CellLabel],
) -> Result<MaeReport, GridError> {
    if predictions.len() != labels.len() {
        return Err(GridError::Argument(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(GridError::Argument("no examples to score".into()));
    }
    let (mut sum, mut sum_x, mut sum_y) = (0.0, 0.0, 0.0);
    for (n, (map, label)) in predictions.iter().zip(labels).enumerate() {
        let target = match label {
            CellLabel::InGrid(idx) => *idx,
            CellLabel::OutOfBoundary => {
                return Err(GridError::Argument(format!(
                    "label {n} is out-of-boundary; exclude it before scoring"
                )))
            }
        };
        if !map.geometry.contains_index(target) {
            return Err(GridError::IndexOutOfRange {
                i_x: target.i_x,
                i_y: target.i_y,
                m_x: map.geometry.m_x,
                m_y: map.geometry.m_y,
            });
        }
        let mass = map.in_grid_mass();
        if !(mass > 0.0) {
            return Err(GridError::DegenerateMap(n));
        }
        let m_y = map.geometry.m_y;
        let (mut e, mut ex, mut ey) = (0.0, 0.0, 0.0);
        for (k, &p) in map.p.iter().enumerate() {
            let dx = (k / m_y + 1) as f64 - target.i_x as f64;
            let dy = (k % m_y + 1) as f64 - target.i_y as f64;
            e += dx.hypot(dy) * p;
            ex += dx.abs() * p;
            ey += dy.abs() * p;
        }
        sum += e / mass;
        sum_x += ex / mass;
        sum_y += ey / mass;
    }
    let n = predictions.len() as f64;
    Ok(MaeReport {
        mae: sum / n,
        mae_x: sum_x / n,
        mae_y: sum_y / n,
    })
}

/// Point-prediction errors in meters.
pub fn regression_mae(
    predicted: &[(f64, f64)],
    actual: &[(f64, f64)],
) -> Result<MaeReport, GridError> {
    if predicted.len() != actual.len() {
        return Err(GridError::Argument(format!(
            "{} predictions but {} targets",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(GridError::Argument("no examples to score".into()));
    }
    let (mut sum, mut sum_x, mut sum_y) = (0.0, 0.0, 0.0);
    for (&(px, py), &(ax, ay)) in predicted.iter().zip(actual) {
        let dx = px - ax;
        let dy = py - ay;
        sum += dx.hypot(dy);
        sum_x += dx.abs();
        sum_y += dy.abs();
    }
    let n = predicted.len() as f64;
    Ok(MaeReport {
        mae: sum / n,
        mae_x: sum_x / n,
        mae_y: sum_y / n,
    })
}
