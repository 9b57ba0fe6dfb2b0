//! Uniform (x, y, t) lattices, domain masks and masked fields for ℍ¹.
//!
//! A [`Field`] is the discrete stand-in for an element of S¹₀(Ω): values on
//! the nodes of a tensor grid, forced to zero wherever the [`DomainMask`] is
//! off. Masks never include the outer layer of the box, which is the discrete
//! zero trace. Nodes are stored x-fastest: `idx = i + nx (j + ny k)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heis::h1;
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    bounds: [[f64; 2]; 3],
    res: [usize; 3],
}

impl Grid {
    pub fn new(bounds: [[f64; 2]; 3], res: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            let [lo, hi] = bounds[a];
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidGrid(format!(
                    "axis {a}: bounds [{lo}, {hi}] must be finite and increasing"
                )));
            }
            if res[a] < 3 {
                return Err(Error::InvalidGrid(format!("axis {a}: resolution {} < 3", res[a])));
            }
        }
        Ok(Self { bounds, res })
    }

    /// [−half, half]³ with `n` nodes per axis.
    pub fn cube(half: f64, n: usize) -> Result<Self> {
        Self::new([[-half, half]; 3], [n; 3])
    }

    /// Box [−a, a]² × [−b, b] with the given resolution.
    pub fn centered(a: f64, b: f64, res: [usize; 3]) -> Result<Self> {
        Self::new([[-a, a], [-a, a], [-b, b]], res)
    }

    pub fn bounds(&self) -> [[f64; 2]; 3] {
        self.bounds
    }

    pub fn res(&self) -> [usize; 3] {
        self.res
    }

    pub fn len(&self) -> usize {
        self.res[0] * self.res[1] * self.res[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> [f64; 3] {
        std::array::from_fn(|a| (self.bounds[a][1] - self.bounds[a][0]) / (self.res[a] - 1) as f64)
    }

    /// Full tensor cell weight h_x h_y h_t.
    pub fn cell_volume(&self) -> f64 {
        let h = self.spacing();
        h[0] * h[1] * h[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.res[0] * (j + self.res[1] * k)
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.res[0];
        let r = idx / self.res[0];
        [i, r % self.res[1], r / self.res[1]]
    }

    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        let [lo, hi] = self.bounds[axis];
        let n = self.res[axis] - 1;
        // endpoint-exact affine map
        (lo * (n - i) as f64 + hi * i as f64) / n as f64
    }

    #[inline]
    pub fn node(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.ijk(idx);
        [self.coord(0, i), self.coord(1, j), self.coord(2, k)]
    }

    pub fn is_box_boundary(&self, idx: usize) -> bool {
        let c = self.ijk(idx);
        (0..3).any(|a| c[a] == 0 || c[a] == self.res[a] - 1)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.bounds[a][0] && p[a] <= self.bounds[a][1])
    }

    /// Nearest node to `p`, clamped into the box.
    pub fn nearest_node(&self, p: [f64; 3]) -> usize {
        let h = self.spacing();
        let c: [usize; 3] = std::array::from_fn(|a| {
            let r = ((p[a] - self.bounds[a][0]) / h[a]).round();
            r.clamp(0.0, (self.res[a] - 1) as f64) as usize
        });
        self.index(c[0], c[1], c[2])
    }

    /// Calls `f(idx)` for every node with |center⁻¹ ∘ node| < radius.
    ///
    /// Only the index box that can contain the ball is scanned: |x − x₀| < ρ,
    /// |y − y₀| < ρ and |t − t₀| < ρ² + 2ρ(|x₀| + |y₀|).
    pub fn for_each_in_ball<F: FnMut(usize)>(&self, center: [f64; 3], radius: f64, mut f: F) {
        if !(radius > 0.0) {
            return;
        }
        let h = self.spacing();
        let reach = [
            radius,
            radius,
            radius * radius + 2.0 * radius * (center[0].abs() + center[1].abs()),
        ];
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let b0 = ((center[a] - reach[a] - self.bounds[a][0]) / h[a]).floor();
            let b1 = ((center[a] + reach[a] - self.bounds[a][0]) / h[a]).ceil();
            let top = (self.res[a] - 1) as f64;
            if b1 < 0.0 || b0 > top {
                return;
            }
            lo[a] = b0.clamp(0.0, top) as usize;
            hi[a] = b1.clamp(0.0, top) as usize;
        }
        let r4 = radius.powi(4);
        for k in lo[2]..=hi[2] {
            let t = self.coord(2, k);
            for j in lo[1]..=hi[1] {
                let y = self.coord(1, j);
                for i in lo[0]..=hi[0] {
                    let x = self.coord(0, i);
                    let (dx, dy) = (x - center[0], y - center[1]);
                    let dt = t - center[2] - 2.0 * (center[1] * x - center[0] * y);
                    let z2 = dx * dx + dy * dy;
                    if z2 * z2 + dt * dt < r4 {
                        f(self.index(i, j, k));
                    }
                }
            }
        }
    }

    /// Euclidean diameter of the box.
    pub fn diagonal(&self) -> f64 {
        (0..3)
            .map(|a| (self.bounds[a][1] - self.bounds[a][0]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Trilinear interpolation of nodal `values` at `p`; zero outside the box.
    pub fn interpolate(&self, values: &[f64], p: [f64; 3]) -> f64 {
        if !self.contains(p) {
            return 0.0;
        }
        let h = self.spacing();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let s = (p[a] - self.bounds[a][0]) / h[a];
            let i = (s.floor() as usize).min(self.res[a] - 2);
            base[a] = i;
            frac[a] = (s - i as f64).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for dk in 0..2 {
            let wk = if dk == 0 { 1.0 - frac[2] } else { frac[2] };
            if wk == 0.0 {
                continue;
            }
            for dj in 0..2 {
                let wj = if dj == 0 { 1.0 - frac[1] } else { frac[1] };
                if wj == 0.0 {
                    continue;
                }
                for di in 0..2 {
                    let wi = if di == 0 { 1.0 - frac[0] } else { frac[0] };
                    if wi == 0.0 {
                        continue;
                    }
                    let idx = self.index(base[0] + di, base[1] + dj, base[2] + dk);
                    acc += wi * wj * wk * values[idx];
                }
            }
        }
        acc
    }
}

/// Shape descriptor carried by a mask (informational, also serialized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskShape {
    FullBox,
    KoranyiBall { center: [f64; 3], radius: f64 },
    Ellipsoid { center: [f64; 3], semi_axes: [f64; 3] },
    Predicate,
    Embedded,
}

/// Node set of the discrete domain Ω on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainMask {
    grid: Grid,
    inside: Vec<bool>,
    shape: MaskShape,
    count: usize,
}

impl DomainMask {
    /// Builds a mask from per-node flags. The outer box layer is always
    /// switched off; at least one node must remain.
    pub fn from_flags(grid: Grid, mut inside: Vec<bool>, shape: MaskShape) -> Result<Self> {
        if inside.len() != grid.len() {
            return Err(Error::InvalidMask(format!(
                "{} flags for {} nodes",
                inside.len(),
                grid.len()
            )));
        }
        for (idx, v) in inside.iter_mut().enumerate() {
            if *v && grid.is_box_boundary(idx) {
                *v = false;
            }
        }
        let count = inside.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::InvalidMask("no interior node inside the domain".into()));
        }
        Ok(Self {
            grid,
            inside,
            shape,
            count,
        })
    }

    pub fn from_predicate<F>(grid: Grid, pred: F) -> Result<Self>
    where
        F: Fn([f64; 3]) -> bool,
    {
        let inside = (0..grid.len()).map(|i| pred(grid.node(i))).collect();
        Self::from_flags(grid, inside, MaskShape::Predicate)
    }

    pub fn full_box(grid: Grid) -> Result<Self> {
        let inside = vec![true; grid.len()];
        Self::from_flags(grid, inside, MaskShape::FullBox)
    }

    /// {ξ : |center⁻¹ ∘ ξ| < radius}.
    pub fn koranyi_ball(grid: Grid, center: [f64; 3], radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidMask(format!("ball radius {radius} must be positive")));
        }
        let inside = (0..grid.len())
            .map(|i| h1::distance(center, grid.node(i)) < radius)
            .collect();
        Self::from_flags(grid, inside, MaskShape::KoranyiBall { center, radius })
    }

    pub fn ellipsoid(grid: Grid, center: [f64; 3], semi_axes: [f64; 3]) -> Result<Self> {
        if semi_axes.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidMask("semi-axes must be positive".into()));
        }
        let inside = (0..grid.len())
            .map(|i| {
                let p = grid.node(i);
                (0..3).map(|a| ((p[a] - center[a]) / semi_axes[a]).powi(2)).sum::<f64>() < 1.0
            })
            .collect();
        Self::from_flags(grid, inside, MaskShape::Ellipsoid { center, semi_axes })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shape(&self) -> &MaskShape {
        &self.shape
    }

    #[inline]
    pub fn inside(&self, idx: usize) -> bool {
        self.inside[idx]
    }

    pub fn flags(&self) -> &[bool] {
        &self.inside
    }

    /// Number of interior degrees of freedom.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Quadrature volume |Ω| (node count times the cell weight).
    pub fn volume(&self) -> f64 {
        self.count as f64 * self.grid.cell_volume()
    }

    /// True if some node within `hops` lattice steps of `idx` lies outside.
    pub fn near_edge(&self, idx: usize, hops: usize) -> bool {
        let g = &self.grid;
        let c = g.ijk(idx);
        let r = g.res();
        let h = hops as isize;
        for dk in -h..=h {
            for dj in -h..=h {
                for di in -h..=h {
                    let n = [c[0] as isize + di, c[1] as isize + dj, c[2] as isize + dk];
                    if (0..3).any(|a| n[a] < 0 || n[a] >= r[a] as isize) {
                        return true;
                    }
                    if !self.inside[g.index(n[0] as usize, n[1] as usize, n[2] as usize)] {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Korányi diameter sup |η⁻¹ ∘ ξ| over the domain.
    ///
    /// Exact for balls; otherwise the maximum over pairs drawn from the mask's
    /// edge nodes (sub-sampled to at most 2000 nodes).
    pub fn diameter(&self) -> f64 {
        if let MaskShape::KoranyiBall { radius, .. } = self.shape {
            return 2.0 * radius;
        }
        let edge: Vec<usize> = (0..self.grid.len())
            .filter(|&i| self.inside[i] && self.near_edge(i, 1))
            .collect();
        let stride = edge.len().div_ceil(2000).max(1);
        let pts: Vec<[f64; 3]> = edge.iter().step_by(stride).map(|&i| self.grid.node(i)).collect();
        let mut best: f64 = 0.0;
        for (a, &p) in pts.iter().enumerate() {
            for &q in &pts[a + 1..] {
                best = best.max(h1::distance(p, q));
            }
        }
        best
    }

    /// Nearest interior node to `p` (Euclidean in index space).
    pub fn nearest_inside(&self, p: [f64; 3]) -> usize {
        let g = &self.grid;
        let guess = g.nearest_node(p);
        if self.inside[guess] {
            return guess;
        }
        let h = g.spacing();
        (0..g.len())
            .filter(|&i| self.inside[i])
            .min_by(|&a, &b| {
                let da = dist2(g.node(a), p, h);
                let db = dist2(g.node(b), p, h);
                da.total_cmp(&db)
            })
            .expect("mask has interior nodes")
    }
}

fn dist2(a: [f64; 3], b: [f64; 3], h: [f64; 3]) -> f64 {
    (0..3).map(|k| ((a[k] - b[k]) / h[k]).powi(2)).sum()
}

/// A real field on the grid, identically zero outside its mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    mask: Arc<DomainMask>,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(mask: &Arc<DomainMask>) -> Self {
        Self {
            mask: Arc::clone(mask),
            values: vec![0.0; mask.grid().len()],
        }
    }

    /// Nodal values; entries outside the mask are replaced by zero.
    pub fn from_values(mask: &Arc<DomainMask>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != mask.grid().len() {
            return Err(Error::LengthMismatch {
                expected: mask.grid().len(),
                found: values.len(),
            });
        }
        for (idx, v) in values.iter_mut().enumerate() {
            if !mask.inside(idx) {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::NonFinite { node: idx, value: *v });
            }
        }
        Ok(Self {
            mask: Arc::clone(mask),
            values,
        })
    }

    /// Crate-internal constructor for values already known to be valid.
    pub(crate) fn from_raw(mask: &Arc<DomainMask>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), mask.grid().len());
        Self {
            mask: Arc::clone(mask),
            values,
        }
    }

    pub fn mask(&self) -> &Arc<DomainMask> {
        &self.mask
    }

    pub fn grid(&self) -> &Grid {
        self.mask.grid()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_grid(&self, other: &Field) -> Result<()> {
        if Arc::ptr_eq(&self.mask, &other.mask) || self.grid() == other.grid() {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Σ |u|^p h_x h_y h_t.
    pub fn quadrature_lp(&self, p: f64) -> f64 {
        quadrature_lp(self, p)
    }

    /// (Σ |u|^p w)^{1/p}.
    pub fn norm_lp(&self, p: f64) -> f64 {
        self.quadrature_lp(p).powf(1.0 / p)
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field::from_raw(&self.mask, self.values.iter().map(|v| c * v).collect())
    }

    pub fn scale_mut(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    /// self + c·other.
    pub fn axpy(&self, c: f64, other: &Field) -> Result<Field> {
        self.same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(i, (a, b))| if self.mask.inside(i) { a + c * b } else { 0.0 })
            .collect();
        Ok(Field::from_raw(&self.mask, values))
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.axpy(-1.0, other)
    }

    /// Pointwise map on interior nodes.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Field {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| if self.mask.inside(i) { f(v) } else { 0.0 })
            .collect();
        Field::from_raw(&self.mask, values)
    }

    /// Node index and value of max |u|, or `None` for the zero field.
    pub fn argmax_abs(&self) -> Option<(usize, f64)> {
        let v = &self.values;
        match par::argmax(v.len(), |i| v[i].abs()) {
            Some((i, m)) if m > 0.0 => Some((i, v[i])),
            _ => None,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Trilinear interpolation at an arbitrary point (zero outside the box).
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        self.grid().interpolate(&self.values, p)
    }
}

/// Samples `f` on interior nodes, zero elsewhere.
pub fn field_from_function<F>(mask: &Arc<DomainMask>, f: F) -> Result<Field>
where
    F: Fn([f64; 3]) -> f64 + Sync,
{
    let grid = mask.grid();
    let mut values = vec![0.0; grid.len()];
    par::fill(
        &mut values,
        |idx| {
            if mask.inside(idx) {
                f(grid.node(idx))
            } else {
                0.0
            }
        },
    );
    if let Some((node, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { node, value });
    }
    Ok(Field::from_raw(mask, values))
}

/// Σ_nodes |u|^p h_x h_y h_t (rectangle rule, full cell weights).
pub fn quadrature_lp(u: &Field, p: f64) -> f64 {
    let w = u.grid().cell_volume();
    let v = &u.values;
    let s = if p == 2.0 {
        par::sum(v.len(), |i| v[i] * v[i])
    } else if p == 4.0 {
        par::sum(v.len(), |i| {
            let a = v[i] * v[i];
            a * a
        })
    } else {
        par::sum(v.len(), |i| if v[i] == 0.0 { 0.0 } else { v[i].abs().powf(p) })
    };
    s * w
}

/// Discrete L² inner product Σ u v h_x h_y h_t.
pub fn pairing(u: &Field, v: &Field) -> Result<f64> {
    u.same_grid(v)?;
    let w = u.grid().cell_volume();
    let (a, b) = (&u.values, &v.values);
    Ok(par::sum(a.len(), |i| a[i] * b[i]) * w)
}

/// Σ a b w over raw nodal arrays of one grid.
pub(crate) fn raw_pairing(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    par::sum(a.len(), |i| a[i] * b[i]) * grid.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube_mask(n: usize) -> Arc<DomainMask> {
        Arc::new(DomainMask::full_box(Grid::cube(1.0, n).unwrap()).unwrap())
    }

    fn random_field(mask: &Arc<DomainMask>, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..mask.grid().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Field::from_values(mask, v).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new([[0.0, 1.0]; 3], [2, 5, 5]).is_err());
        assert!(Grid::new([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], [5; 3]).is_err());
        let g = Grid::cube(1.0, 5).unwrap();
        assert_eq!(g.spacing(), [0.5; 3]);
        assert_eq!(g.len(), 125);
        assert_eq!(g.node(g.index(2, 2, 2)), [0.0; 3]);
        assert_eq!(g.ijk(g.index(1, 3, 4)), [1, 3, 4]);
    }

    #[test]
    fn mask_excludes_boundary_layer() {
        let m = cube_mask(5);
        assert_eq!(m.count(), 27);
        assert!(!m.inside(0));
        let g = Grid::cube(1.0, 5).unwrap();
        let only_boundary: Vec<bool> = (0..g.len()).map(|i| g.is_box_boundary(i)).collect();
        assert!(DomainMask::from_flags(g, only_boundary, MaskShape::Predicate).is_err());
    }

    #[test]
    fn koranyi_ball_mask() {
        let g = Grid::cube(1.0, 33).unwrap();
        let m = DomainMask::koranyi_ball(g.clone(), [0.0; 3], 0.8).unwrap();
        assert!(m.inside(g.nearest_node([0.0; 3])));
        assert!(!m.inside(g.nearest_node([0.9, 0.0, 0.0])));
        assert!(m.inside(g.nearest_node([0.0, 0.0, 0.6])));
        assert!(!m.inside(g.nearest_node([0.0, 0.0, 0.7])));
        assert_eq!(m.diameter(), 1.6);
    }

    #[test]
    fn from_function_examples() {
        let m = cube_mask(5);
        let z = field_from_function(&m, |_| 0.0).unwrap();
        assert!(z.is_zero());
        let one = field_from_function(&m, |_| 1.0).unwrap();
        for i in 0..m.grid().len() {
            assert_eq!(one.values()[i], if m.inside(i) { 1.0 } else { 0.0 });
        }
        let gauge = field_from_function(&m, h1::gauge).unwrap();
        assert_eq!(gauge.values()[m.grid().nearest_node([0.0; 3])], 0.0);
        assert!(matches!(
            field_from_function(&m, |_| f64::NAN),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn quadrature_examples() {
        let m = cube_mask(9);
        assert_eq!(Field::zeros(&m).quadrature_lp(3.0), 0.0);
        let u = random_field(&m, 3);
        for p in [1.0, 2.0, 3.5, 4.0] {
            let a = u.scaled(-2.5).quadrature_lp(p);
            let b = 2.5f64.powf(p) * u.quadrature_lp(p);
            assert!((a - b).abs() <= 1e-12 * b);
        }
        // box volume: interior of [−1,1]³ at 65³ is 63³ cells of (1/32)³
        let m65 = cube_mask(65);
        let one = field_from_function(&m65, |_| 1.0).unwrap();
        let vol = one.quadrature_lp(1.0);
        assert!((vol - 8.0).abs() / 8.0 < 0.10, "volume {vol}");
        assert!((vol - (63.0f64 / 32.0).powi(3)).abs() < 1e-10);
    }

    #[test]
    fn quadrature_second_order() {
        // smooth compactly supported bump; errors vs 129³ shrink ~4x
        let bump = |p: [f64; 3]| {
            let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
            if r2 < 0.81 {
                (1.0 - r2 / 0.81).powi(4)
            } else {
                0.0
            }
        };
        let q = |n: usize| field_from_function(&cube_mask(n), bump).unwrap().quadrature_lp(1.0);
        let (q33, q65, q129) = (q(33), q(65), q(129));
        // distinguish: the rectangle rule is exact up to the fourth power's
        // smoothness, so compare successive differences instead
        let r = (q33 - q129).abs() / (q65 - q129).abs().max(1e-300);
        assert!((q33 - q129).abs() < 1e-3 && (q65 - q129).abs() < 1e-3);
        assert!(r > 2.8 || (q65 - q129).abs() < 1e-12, "ratio {r}");
    }

    #[test]
    fn pairing_examples() {
        let m = cube_mask(9);
        let u = random_field(&m, 1);
        let v = random_field(&m, 2);
        assert_eq!(pairing(&u, &Field::zeros(&m)).unwrap(), 0.0);
        let uu = pairing(&u, &u).unwrap();
        assert!((uu - u.quadrature_lp(2.0)).abs() <= 1e-14 * uu);
        let uv = pairing(&u, &v).unwrap();
        assert!(uv * uv <= uu * pairing(&v, &v).unwrap());
        let other = Arc::new(DomainMask::full_box(Grid::cube(2.0, 9).unwrap()).unwrap());
        assert!(matches!(pairing(&u, &Field::zeros(&other)), Err(Error::GridMismatch)));
    }

    #[test]
    fn ball_visitor_matches_brute_force() {
        let g = Grid::new([[-1.0, 1.0], [-0.5, 1.5], [-2.0, 2.0]], [21, 17, 33]).unwrap();
        for (c, r) in [([0.1, 0.2, 0.3], 0.5), ([0.9, -0.4, 1.0], 0.7), ([0.0; 3], 3.0)] {
            let mut seen = Vec::new();
            g.for_each_in_ball(c, r, |i| seen.push(i));
            let brute: Vec<usize> = (0..g.len()).filter(|&i| h1::distance(c, g.node(i)) < r).collect();
            assert_eq!(seen, brute);
        }
    }

    #[test]
    fn interpolation_exact_for_trilinear() {
        let g = Grid::new([[-1.0, 2.0], [0.0, 1.0], [-0.5, 0.5]], [7, 5, 9]).unwrap();
        let f = |p: [f64; 3]| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[2] + p[0] * p[1] * p[2];
        let vals: Vec<f64> = (0..g.len()).map(|i| f(g.node(i))).collect();
        for p in [[0.3, 0.77, 0.1], [-0.99, 0.01, -0.49], [2.0, 1.0, 0.5]] {
            assert!((g.interpolate(&vals, p) - f(p)).abs() < 1e-12);
        }
        assert_eq!(g.interpolate(&vals, [3.0, 0.5, 0.0]), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn masked_values_stay_zero(seed in 0u64..1000, c in -3.0f64..3.0) {
            let g = Grid::cube(1.0, 9).unwrap();
            let m = Arc::new(DomainMask::koranyi_ball(g, [0.0; 3], 0.9).unwrap());
            let u = random_field(&m, seed);
            let v = random_field(&m, seed + 1);
            let w = u.axpy(c, &v).unwrap().map(|x| x * x + 1.0);
            for i in 0..m.grid().len() {
                if !m.inside(i) {
                    prop_assert_eq!(w.values()[i], 0.0);
                }
            }
        }
    }
}
