//! Cross-view feature-map fusion.
//!
//! Each view's `m x m` feature grid is tied to the 3D points whose projections
//! land in each cell. A cell of view `i` is matched in every other view `k` to
//! the cell sharing the most of its points, weighted by the shared fraction,
//! and replaced by the weighted average of the matched cells (itself included
//! with weight 1).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{View, VisibilityMap};

/// One view's `m x m x c` feature grid, stored row-major as (row, col, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    m: usize,
    c: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(m: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        if m == 0 || c == 0 {
            return Err(Error::Mismatch("feature maps need m >= 1 and c >= 1".into()));
        }
        if data.len() != m * m * c {
            return Err(Error::Mismatch(format!(
                "feature map of {m}x{m}x{c} needs {} values, got {}",
                m * m * c,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Mismatch(format!("non-finite feature value at offset {i}")));
        }
        Ok(Self { m, c, data })
    }

    pub fn filled(m: usize, c: usize, value: f32) -> Self {
        Self {
            m,
            c,
            data: vec![value; m * m * c],
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Feature vector of cell `(u, v)`: column `u`, row `v`.
    pub fn cell(&self, u: usize, v: usize) -> &[f32] {
        let start = (v * self.m + u) * self.c;
        &self.data[start..start + self.c]
    }

    pub fn cell_mut(&mut self, u: usize, v: usize) -> &mut [f32] {
        let start = (v * self.m + u) * self.c;
        &mut self.data[start..start + self.c]
    }
}

/// Visible points of one view binned into an `m x m` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewCells {
    m: usize,
    /// Sorted point indices per cell, indexed `v * m + u`.
    cells: Vec<Vec<usize>>,
    /// Cell of each point, `None` when the point is not visible.
    point_cell: Vec<Option<(usize, usize)>>,
}

impl ViewCells {
    pub fn points(&self, u: usize, v: usize) -> &[usize] {
        &self.cells[v * self.m + u]
    }

    pub fn cell_of(&self, point: usize) -> Option<(usize, usize)> {
        self.point_cell[point]
    }
}

/// Per-view cell membership of visible points, shared grid size `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPointIndex {
    m: usize,
    views: Vec<ViewCells>,
}

impl CellPointIndex {
    pub fn build(vis: &VisibilityMap, views: &[View], m: usize) -> Result<Self> {
        if views.len() != vis.num_views() {
            return Err(Error::Mismatch(format!(
                "{} views but visibility for {}",
                views.len(),
                vis.num_views()
            )));
        }
        if m == 0 {
            return Err(Error::Mismatch("cell grid needs m >= 1".into()));
        }
        let views = views
            .par_iter()
            .enumerate()
            .map(|(k, v)| build_cell_index(vis, k, m, v.width, v.height))
            .collect();
        Ok(Self { m, views })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn view(&self, k: usize) -> &ViewCells {
        &self.views[k]
    }
}

/// Bin the visible points of one view. Pixel `(x, y)` falls in cell
/// `(floor(x * m / W), floor(y * m / H))`, clamped to the grid.
pub fn build_cell_index(vis: &VisibilityMap, view: usize, m: usize, width: u32, height: u32) -> ViewCells {
    let vv = &vis.views[view];
    let bin = |p: i64, size: u32| -> usize {
        let c = (p * m as i64).div_euclid(size as i64);
        c.clamp(0, m as i64 - 1) as usize
    };
    let mut cells = vec![Vec::new(); m * m];
    let mut point_cell = vec![None; vv.visible.len()];
    for (p, &seen) in vv.visible.iter().enumerate() {
        if !seen {
            continue;
        }
        let (px, py) = vv.projections[p].expect("visible points are projected").pixel();
        let cell = (bin(px, width), bin(py, height));
        cells[cell.1 * m + cell.0].push(p);
        point_cell[p] = Some(cell);
    }
    ViewCells { m, cells, point_cell }
}

/// Matched cell in another view and its overlap weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub cell: (usize, usize),
    pub weight: f64,
}

/// Cell of view `k` sharing the most points with cell `(u, v)` of view `i`.
/// Ties go to the lexicographically lowest `(u', v')`. `None` when the cell is
/// empty or none of its points are visible in view `k`.
pub fn correspond(index: &CellPointIndex, i: usize, cell: (usize, usize), k: usize) -> Option<Correspondence> {
    let members = index.views[i].points(cell.0, cell.1);
    if members.is_empty() {
        return None;
    }
    let target = &index.views[k];
    let mut counts: Vec<((usize, usize), usize)> = Vec::new();
    for &p in members {
        if let Some(c) = target.cell_of(p) {
            match counts.iter_mut().find(|(cc, _)| *cc == c) {
                Some(entry) => entry.1 += 1,
                None => counts.push((c, 1)),
            }
        }
    }
    let (best, n) = counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))?;
    Some(Correspondence {
        cell: best,
        weight: n as f64 / members.len() as f64,
    })
}

/// Normalized contributions `(view, cell, weight)` to the fused value of one
/// cell, self first. Empty when the cell has no points.
pub fn fusion_weights(index: &CellPointIndex, i: usize, cell: (usize, usize)) -> Vec<(usize, (usize, usize), f64)> {
    let mut out: Vec<(usize, (usize, usize), f64)> = Vec::new();
    if index.views[i].points(cell.0, cell.1).is_empty() {
        return out;
    }
    out.push((i, cell, 1.0));
    for k in (0..index.num_views()).filter(|&k| k != i) {
        if let Some(c) = correspond(index, i, cell, k) {
            out.push((k, c.cell, c.weight));
        }
    }
    let total: f64 = out.iter().map(|e| e.2).sum();
    for e in &mut out {
        e.2 /= total;
    }
    out
}

fn check_maps(maps: &[FeatureMap], index: &CellPointIndex) -> Result<()> {
    if maps.len() != index.num_views() {
        return Err(Error::Mismatch(format!(
            "{} feature maps for {} views",
            maps.len(),
            index.num_views()
        )));
    }
    if let Some(first) = maps.first() {
        if maps.iter().any(|f| f.m != first.m || f.c != first.c) {
            return Err(Error::Mismatch("feature maps differ in size".into()));
        }
        if first.m != index.m {
            return Err(Error::Mismatch(format!(
                "feature maps are {}x{} but the cell index is {}x{}",
                first.m, first.m, index.m, index.m
            )));
        }
    }
    Ok(())
}

/// Fuse every view's map with its correspondences in the other views.
/// Cells without points keep their original value.
pub fn aggregate(maps: &[FeatureMap], index: &CellPointIndex) -> Result<Vec<FeatureMap>> {
    check_maps(maps, index)?;
    let fused = (0..maps.len())
        .into_par_iter()
        .map(|i| {
            let mut out = maps[i].clone();
            let (m, c) = (out.m, out.c);
            let mut acc = vec![0.0f64; c];
            for v in 0..m {
                for u in 0..m {
                    let weights = fusion_weights(index, i, (u, v));
                    if weights.is_empty() {
                        continue;
                    }
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    for (k, (cu, cv), w) in weights {
                        for (a, &f) in acc.iter_mut().zip(maps[k].cell(cu, cv)) {
                            *a += w * f as f64;
                        }
                    }
                    for (dst, a) in out.cell_mut(u, v).iter_mut().zip(&acc) {
                        *dst = *a as f32;
                    }
                }
            }
            out
        })
        .collect();
    Ok(fused)
}

/// Fuse each level of a feature pyramid with a cell index matching its grid size.
pub fn aggregate_pyramid(levels: &[Vec<FeatureMap>], vis: &VisibilityMap, views: &[View]) -> Result<Vec<Vec<FeatureMap>>> {
    levels
        .iter()
        .map(|maps| {
            let m = maps.first().map_or(1, |f| f.m);
            let index = CellPointIndex::build(vis, views, m)?;
            aggregate(maps, &index)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Projection, ViewVisibility};
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn view(w: u32, h: u32) -> View {
        View {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            extrinsic: Matrix4::identity(),
            width: w,
            height: h,
        }
    }

    fn vis_from(pixels: &[Vec<Option<(f64, f64)>>]) -> VisibilityMap {
        VisibilityMap {
            views: pixels
                .iter()
                .map(|list| ViewVisibility {
                    visible: list.iter().map(Option::is_some).collect(),
                    projections: list
                        .iter()
                        .map(|p| p.map(|(x, y)| Projection { x, y, depth: 1.0 }))
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn binning_examples() {
        let vis = vis_from(&[vec![Some((0.0, 0.0)), Some((799.0, 799.0)), Some((100.2, 450.0)), None]]);
        let one = build_cell_index(&vis, 0, 1, 800, 800);
        assert_eq!(one.points(0, 0), &[0, 1, 2]);
        let eight = build_cell_index(&vis, 0, 8, 800, 800);
        assert_eq!(eight.cell_of(0), Some((0, 0)));
        assert_eq!(eight.cell_of(1), Some((7, 7)));
        assert_eq!(eight.cell_of(2), Some((1, 4)));
        assert_eq!(eight.cell_of(3), None);
    }

    #[test]
    fn seven_three_split() {
        // View 0: all ten points in cell (0, 0). View 1: seven in (1, 0), three in (0, 1).
        let v0: Vec<_> = (0..10).map(|_| Some((1.0, 1.0))).collect();
        let v1: Vec<_> = (0..10)
            .map(|p| if p < 7 { Some((6.0, 1.0)) } else { Some((1.0, 6.0)) })
            .collect();
        let vis = vis_from(&[v0, v1]);
        let index = CellPointIndex::build(&vis, &[view(10, 10), view(10, 10)], 2).unwrap();
        let c = correspond(&index, 0, (0, 0), 1).unwrap();
        assert_eq!(c.cell, (1, 0));
        assert!((c.weight - 0.7).abs() < 1e-15);
        let own = correspond(&index, 0, (0, 0), 0).unwrap();
        assert_eq!((own.cell, own.weight), ((0, 0), 1.0));
        assert_eq!(correspond(&index, 0, (1, 1), 1), None);
    }

    #[test]
    fn ties_pick_lowest_cell() {
        let v0: Vec<_> = (0..4).map(|_| Some((1.0, 1.0))).collect();
        let v1 = vec![Some((6.0, 1.0)), Some((1.0, 6.0)), Some((6.0, 1.0)), Some((1.0, 6.0))];
        let vis = vis_from(&[v0, v1]);
        let index = CellPointIndex::build(&vis, &[view(10, 10), view(10, 10)], 2).unwrap();
        assert_eq!(correspond(&index, 0, (0, 0), 1).unwrap().cell, (0, 1));
    }

    #[test]
    fn invisible_in_other_view_does_not_contribute() {
        let vis = vis_from(&[vec![Some((1.0, 1.0))], vec![None]]);
        let index = CellPointIndex::build(&vis, &[view(4, 4), view(4, 4)], 2).unwrap();
        assert_eq!(correspond(&index, 0, (0, 0), 1), None);
        let maps = vec![FeatureMap::filled(2, 1, 3.0), FeatureMap::filled(2, 1, 9.0)];
        assert_eq!(aggregate(&maps, &index).unwrap(), maps);
    }

    fn random_scene(rng: &mut ChaCha8Rng, k: usize, n: usize, m: usize, c: usize) -> (VisibilityMap, Vec<View>, Vec<FeatureMap>) {
        let pixels: Vec<Vec<Option<(f64, f64)>>> = (0..k)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        rng.random_bool(0.7)
                            .then(|| (rng.random_range(0.0..31.4), rng.random_range(0.0..31.4)))
                    })
                    .collect()
            })
            .collect();
        let maps = (0..k)
            .map(|_| FeatureMap::new(m, c, (0..m * m * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        (vis_from(&pixels), vec![view(32, 32); k], maps)
    }

    #[test]
    fn single_view_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (vis, views, maps) = random_scene(&mut rng, 1, 200, 8, 4);
        let index = CellPointIndex::build(&vis, &views, 8).unwrap();
        assert_eq!(aggregate(&maps, &index).unwrap(), maps);
    }

    #[test]
    fn fused_values_are_convex_and_weights_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (vis, views, maps) = random_scene(&mut rng, 3, 300, 8, 3);
        let index = CellPointIndex::build(&vis, &views, 8).unwrap();
        let fused = aggregate(&maps, &index).unwrap();
        for i in 0..3 {
            for v in 0..8 {
                for u in 0..8 {
                    let w = fusion_weights(&index, i, (u, v));
                    if w.is_empty() {
                        assert_eq!(fused[i].cell(u, v), maps[i].cell(u, v));
                        continue;
                    }
                    assert!((w.iter().map(|e| e.2).sum::<f64>() - 1.0).abs() < 1e-12);
                    for ch in 0..3 {
                        let vals: Vec<f32> = w.iter().map(|&(k, (cu, cv), _)| maps[k].cell(cu, cv)[ch]).collect();
                        let lo = vals.iter().copied().fold(f32::INFINITY, f32::min);
                        let hi = vals.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                        let x = fused[i].cell(u, v)[ch];
                        assert!(x >= lo - 1e-6 && x <= hi + 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn consensus_maps_are_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (vis, views, _) = random_scene(&mut rng, 3, 300, 4, 2);
        let maps = vec![FeatureMap::filled(4, 2, 0.25); 3];
        let index = CellPointIndex::build(&vis, &views, 4).unwrap();
        assert_eq!(aggregate(&maps, &index).unwrap(), maps);
    }

    #[test]
    fn pyramid_levels_use_their_own_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (vis, views, fine) = random_scene(&mut rng, 2, 100, 8, 2);
        let coarse = vec![FeatureMap::filled(2, 3, 1.5), FeatureMap::filled(2, 3, 1.5)];
        let out = aggregate_pyramid(&[fine.clone(), coarse.clone()], &vis, &views).unwrap();
        let index = CellPointIndex::build(&vis, &views, 8).unwrap();
        assert_eq!(out[0], aggregate(&fine, &index).unwrap());
        assert_eq!(out[1], coarse);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let vis = vis_from(&[vec![Some((1.0, 1.0))]]);
        let index = CellPointIndex::build(&vis, &[view(4, 4)], 2).unwrap();
        assert!(aggregate(&[FeatureMap::filled(3, 1, 0.0)], &index).is_err());
        assert!(FeatureMap::new(2, 1, vec![0.0; 3]).is_err());
    }
}
