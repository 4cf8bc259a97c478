//! Value-function maps over one- and two-dimensional slices of the state
//! space, with continuity, semicontinuity and Lipschitz diagnostics.
//!
//! Cells are solved in waves. A cell is seeded with the best controls of its
//! already-solved neighbours on top of the usual random starts, so a warm
//! value never exceeds the cold one for the same cell seed. The dependency
//! structure depends only on [`WarmOrder`]; the execution mode changes how a
//! wave is scheduled, never the numbers.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::classify::{self, ClassifyOptions, Verdict};
use crate::direct::{self, SolveOptions};
use crate::error::{Error, Result};
use crate::flow::fmt_num;
use crate::model::{Control, ProblemSpec};
use crate::par;

/// Multiplier on the median neighbour difference defining a jump.
pub const KAPPA_FACTOR: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    /// State coordinate swept along this axis.
    pub coord: usize,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
    /// Full state; active coordinates are overwritten per cell.
    pub fixed: Vec<f64>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>, fixed: Vec<f64>) -> Result<Self> {
        let g = GridSpec { axes, fixed };
        g.validate()?;
        Ok(g)
    }

    pub fn line(coord: usize, lo: f64, hi: f64, n: usize, fixed: Vec<f64>) -> Result<Self> {
        Self::new(vec![Axis { coord, lo, hi, n }], fixed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.len() > 2 {
            return Err(Error::config("grid.axes", "one or two active coordinates required"));
        }
        for a in &self.axes {
            if a.n < 2 {
                return Err(Error::config("grid.axes.n", "resolution must be at least 2"));
            }
            if a.coord >= self.fixed.len() {
                return Err(Error::config("grid.axes.coord", "coordinate out of range"));
            }
            if !(a.lo.is_finite() && a.hi.is_finite() && a.lo < a.hi) {
                return Err(Error::config("grid.axes", "range must satisfy lo < hi"));
            }
        }
        if self.axes.len() == 2 && self.axes[0].coord == self.axes[1].coord {
            return Err(Error::config("grid.axes.coord", "active coordinates must differ"));
        }
        Ok(())
    }

    /// `(nx, ny)`, with `ny = 1` on a line.
    pub fn shape(&self) -> (usize, usize) {
        (self.axes[0].n, self.axes.get(1).map_or(1, |a| a.n))
    }

    pub fn len(&self) -> usize {
        let (nx, ny) = self.shape();
        nx * ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.shape().0 + i
    }

    pub fn coords(&self, k: usize) -> (usize, usize) {
        let nx = self.shape().0;
        (k % nx, k / nx)
    }

    pub fn point(&self, k: usize) -> Vec<f64> {
        let (i, j) = self.coords(k);
        let mut x = self.fixed.clone();
        x[self.axes[0].coord] = self.axes[0].value(i);
        if let Some(a) = self.axes.get(1) {
            x[a.coord] = a.value(j);
        }
        x
    }

    /// Edge-adjacent cells with the grid spacing between them.
    pub fn neighbors(&self, k: usize) -> Vec<(usize, f64)> {
        let (nx, ny) = self.shape();
        let (i, j) = self.coords(k);
        let mut out = Vec::with_capacity(4);
        let dx = self.axes[0].step();
        if i > 0 {
            out.push((self.index(i - 1, j), dx));
        }
        if i + 1 < nx {
            out.push((self.index(i + 1, j), dx));
        }
        if let Some(a) = self.axes.get(1) {
            let dy = a.step();
            if j > 0 {
                out.push((self.index(i, j - 1), dy));
            }
            if j + 1 < ny {
                out.push((self.index(i, j + 1), dy));
            }
        }
        out
    }

    /// Cells within Chebyshev distance `r`, excluding `k`.
    fn window(&self, k: usize, r: usize) -> Vec<usize> {
        let (nx, ny) = self.shape();
        let (i, j) = self.coords(k);
        let mut out = Vec::new();
        for jj in j.saturating_sub(r)..=(j + r).min(ny - 1) {
            for ii in i.saturating_sub(r)..=(i + r).min(nx - 1) {
                if (ii, jj) != (i, j) {
                    out.push(self.index(ii, jj));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellLabel {
    Fair,
    Tame,
    Smooth,
    AbnormalFlagged,
    Inconclusive,
    Unreached,
}

impl CellLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CellLabel::Fair => "fair",
            CellLabel::Tame => "tame",
            CellLabel::Smooth => "smooth",
            CellLabel::AbnormalFlagged => "abnormal-flagged",
            CellLabel::Inconclusive => "inconclusive",
            CellLabel::Unreached => "unreached",
        }
    }

    /// Smooth cells are tame by definition.
    pub fn is_tame(self) -> bool {
        matches!(self, CellLabel::Tame | CellLabel::Smooth)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmOrder {
    /// Anti-diagonal waves in 2D; on a line, blocks of `LINE_BLOCK` cells
    /// grown from cold-started block heads.
    #[default]
    Wavefront,
    /// Serpentine scan, one cell per wave.
    Boustrophedon,
    /// Every cell cold-started; one wave.
    Cold,
}

const LINE_BLOCK: usize = 8;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    pub solve: SolveOptions,
    pub classify: bool,
    pub order: WarmOrder,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            solve: SolveOptions {
                multistart_count: 4,
                ..SolveOptions::default()
            },
            classify: false,
            order: WarmOrder::Wavefront,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellResult {
    pub value: f64,
    pub label: CellLabel,
    /// Normal multiplier of the best candidate, when it has one.
    pub multiplier: Option<Vec<f64>>,
    pub clusters: usize,
    #[serde(skip)]
    pub best_control: Option<Control>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValueMap {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub class_labels: Vec<CellLabel>,
    pub jump_flags: Vec<bool>,
    pub cells: Vec<CellResult>,
}

impl ValueMap {
    /// A map from raw values, for diagnostics on external data. Infinite
    /// values are labelled unreached, finite ones inconclusive.
    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::Shape(format!("{} values for {} cells", values.len(), grid.len())));
        }
        let cells: Vec<CellResult> = values
            .iter()
            .map(|&v| CellResult {
                value: v,
                label: if v.is_finite() { CellLabel::Inconclusive } else { CellLabel::Unreached },
                multiplier: None,
                clusters: 0,
                best_control: None,
            })
            .collect();
        Ok(ValueMap {
            class_labels: cells.iter().map(|c| c.label).collect(),
            jump_flags: vec![false; values.len()],
            values,
            grid,
            cells,
        })
    }

    /// Columns `x,y,V,label,jump`; `y` is empty on a line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,V,label,jump")?;
        for k in 0..self.values.len() {
            let (i, j) = self.grid.coords(k);
            let x = fmt_num(self.grid.axes[0].value(i));
            let y = self.grid.axes.get(1).map_or(String::new(), |a| fmt_num(a.value(j)));
            writeln!(
                w,
                "{x},{y},{},{},{}",
                fmt_num(self.values[k]),
                self.class_labels[k].as_str(),
                u8::from(self.jump_flags[k])
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self, diag: Option<&ContinuityReport>) -> Value {
        let mut counts = serde_json::Map::new();
        for l in &self.class_labels {
            let e = counts.entry(l.as_str()).or_insert(json!(0));
            *e = json!(e.as_u64().unwrap_or(0) + 1);
        }
        let finite: Vec<f64> = self.values.iter().copied().filter(|v| v.is_finite()).collect();
        let all = vec![true; self.values.len()];
        let mut v = json!({
            "grid": self.grid,
            "cells": self.values.len(),
            "labels": counts,
            "min_value": finite.iter().copied().fold(f64::INFINITY, f64::min),
            "max_value": finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            "jump_cells": self.jump_flags.iter().filter(|b| **b).count(),
            "lipschitz": lipschitz_estimate(self, &all).ok(),
            "suspect_tame_cells": suspect_tame_cells(self),
        });
        if let Some(d) = diag {
            v["kappa_jump"] = json!(d.kappa_jump);
            v["lsc_candidates"] = json!(d.lsc_candidates);
            v["lsc_violations"] = json!(d.lsc_violations);
        }
        v
    }
}

/// Seed for a cell, independent of scheduling.
fn cell_seed(base: u64, k: usize) -> u64 {
    base ^ (k as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Wave index per cell and the neighbours each cell is seeded from.
fn schedule(grid: &GridSpec, order: WarmOrder) -> (Vec<usize>, Vec<Vec<usize>>) {
    let (nx, ny) = grid.shape();
    let n = grid.len();
    let mut wave = vec![0; n];
    let mut deps = vec![Vec::new(); n];
    match order {
        WarmOrder::Cold => {}
        WarmOrder::Wavefront if ny == 1 => {
            for i in 0..nx {
                wave[i] = i % LINE_BLOCK;
                if i % LINE_BLOCK != 0 {
                    deps[i].push(i - 1);
                }
            }
        }
        WarmOrder::Wavefront => {
            for j in 0..ny {
                for i in 0..nx {
                    let k = grid.index(i, j);
                    wave[k] = i + j;
                    if i > 0 {
                        deps[k].push(grid.index(i - 1, j));
                    }
                    if j > 0 {
                        deps[k].push(grid.index(i, j - 1));
                    }
                }
            }
        }
        WarmOrder::Boustrophedon => {
            let mut step = 0;
            for j in 0..ny {
                let cols: Vec<usize> = if j % 2 == 0 { (0..nx).collect() } else { (0..nx).rev().collect() };
                for (c, &i) in cols.iter().enumerate() {
                    let k = grid.index(i, j);
                    wave[k] = step;
                    step += 1;
                    if c > 0 {
                        deps[k].push(grid.index(cols[c - 1], j));
                    }
                    if j > 0 {
                        deps[k].push(grid.index(i, j - 1));
                    }
                }
            }
        }
    }
    (wave, deps)
}

fn solve_cell(spec: &ProblemSpec, x: &[f64], opts: &SweepOptions, seed: u64, seeds: Vec<Control>) -> CellResult {
    let solve = SolveOptions { seed, ..opts.solve.clone() };
    if opts.classify {
        let copts = ClassifyOptions { solve, seeds };
        return match classify::classify_point(spec, x, &copts) {
            Ok(r) => {
                let value = r.value();
                let label = if !value.is_finite() {
                    CellLabel::Unreached
                } else if r.smooth == Verdict::True {
                    CellLabel::Smooth
                } else if r.tame == Verdict::False {
                    CellLabel::AbnormalFlagged
                } else if r.tame == Verdict::True {
                    CellLabel::Tame
                } else if r.fair == Verdict::True {
                    CellLabel::Fair
                } else {
                    CellLabel::Inconclusive
                };
                CellResult {
                    value,
                    label,
                    multiplier: r.normal_covector().map(<[f64]>::to_vec),
                    clusters: r.candidates.near_optimal_clusters().len(),
                    best_control: r.candidates.best().map(|c| c.control.clone()),
                }
            }
            Err(_) => unreached(),
        };
    }
    match direct::solve_seeded(spec, x, &solve, &seeds) {
        Ok(set) => {
            let value = set.value();
            let best = set.best();
            CellResult {
                value,
                label: if value.is_finite() { CellLabel::Inconclusive } else { CellLabel::Unreached },
                multiplier: best.map(|c| c.multiplier_estimate.clone()),
                clusters: set.near_optimal_clusters().len(),
                best_control: best.map(|c| c.control.clone()),
            }
        }
        Err(_) => unreached(),
    }
}

fn unreached() -> CellResult {
    CellResult {
        value: f64::INFINITY,
        label: CellLabel::Unreached,
        multiplier: None,
        clusters: 0,
        best_control: None,
    }
}

/// Solves every cell of `grid`; per-cell failures become unreached cells.
pub fn value_map(spec: &ProblemSpec, grid: &GridSpec, opts: &SweepOptions) -> Result<ValueMap> {
    grid.validate()?;
    opts.solve.validate()?;
    if grid.fixed.len() != spec.dim() {
        return Err(Error::config("grid.fixed", "length must equal the state dimension"));
    }
    let chart = &spec.system.chart;
    for a in &grid.axes {
        if a.lo < chart.lower[a.coord] || a.hi > chart.upper[a.coord] {
            return Err(Error::config("grid.axes", "range leaves the chart bounds"));
        }
    }
    let (wave, deps) = schedule(grid, opts.order);
    let waves = wave.iter().copied().max().unwrap_or(0) + 1;
    let mut cells: Vec<Option<CellResult>> = vec![None; grid.len()];
    for w in 0..waves {
        let members: Vec<usize> = (0..grid.len()).filter(|&k| wave[k] == w).collect();
        let done = &cells;
        let solved = par::map_indexed(opts.solve.execution, members.len(), |idx| {
            let k = members[idx];
            let seeds: Vec<Control> = deps[k]
                .iter()
                .filter_map(|&d| done[d].as_ref().and_then(|c| c.best_control.clone()))
                .collect();
            solve_cell(spec, &grid.point(k), opts, cell_seed(opts.solve.seed, k), seeds)
        });
        for (k, c) in members.into_iter().zip(solved) {
            cells[k] = Some(c);
        }
    }
    let cells: Vec<CellResult> = cells.into_iter().map(|c| c.expect("every cell scheduled")).collect();
    Ok(ValueMap {
        grid: grid.clone(),
        values: cells.iter().map(|c| c.value).collect(),
        class_labels: cells.iter().map(|c| c.label).collect(),
        jump_flags: vec![false; grid.len()],
        cells,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuityReport {
    /// Max minus min over the 3x3 (or 3-cell) neighbourhood.
    pub oscillation: Vec<f64>,
    pub kappa_jump: f64,
    pub jump_flags: Vec<bool>,
    /// Cells exceeding the minimum of their neighbours by more than the jump
    /// threshold.
    pub lsc_candidates: Vec<usize>,
    /// Candidates that survive re-solving with doubled resolution.
    pub lsc_violations: Vec<usize>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn neighbor_diffs(map: &ValueMap, cells: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut out = Vec::new();
    for k in cells {
        for (nb, _) in map.grid.neighbors(k) {
            if nb > k && map.values[k].is_finite() && map.values[nb].is_finite() {
                out.push((map.values[k] - map.values[nb]).abs());
            }
        }
    }
    out
}

/// Jump flags and lower-semicontinuity candidates.
///
/// The jump threshold at a cell is `KAPPA_FACTOR` times the larger of the
/// global and the local (5x5 window) median neighbour difference, floored at
/// `1e-9 (1 + max |V|)` so that flat maps still resolve steps.
pub fn continuity_diagnostics(map: &ValueMap) -> ContinuityReport {
    let n = map.values.len();
    let vmax = map.values.iter().filter(|v| v.is_finite()).fold(0.0_f64, |a, v| a.max(v.abs()));
    let floor = 1e-9 * (1.0 + vmax);
    let global = median(neighbor_diffs(map, 0..n));
    let kappa_jump = (KAPPA_FACTOR * global).max(floor);
    let mut oscillation = vec![0.0; n];
    let mut jump_flags = vec![false; n];
    let mut lsc_candidates = Vec::new();
    for k in 0..n {
        if !map.values[k].is_finite() {
            continue;
        }
        let hood: Vec<f64> = map
            .grid
            .window(k, 1)
            .into_iter()
            .map(|j| map.values[j])
            .filter(|v| v.is_finite())
            .collect();
        let lo = hood.iter().copied().fold(map.values[k], f64::min);
        let hi = hood.iter().copied().fold(map.values[k], f64::max);
        oscillation[k] = hi - lo;
        let mut wide = map.grid.window(k, 2);
        wide.push(k);
        let local = median(neighbor_diffs(map, wide.into_iter()));
        let threshold = (KAPPA_FACTOR * local).max(kappa_jump);
        jump_flags[k] = oscillation[k] > threshold;
        let nb_min = hood.iter().copied().fold(f64::INFINITY, f64::min);
        if nb_min.is_finite() && map.values[k] - nb_min > threshold {
            lsc_candidates.push(k);
        }
    }
    ContinuityReport {
        oscillation,
        kappa_jump,
        jump_flags,
        lsc_candidates,
        lsc_violations: Vec::new(),
    }
}

/// Re-solves every lsc candidate with twice the control resolution, seeded
/// by its own and its neighbours' controls, and keeps those still above
/// their neighbours. Also copies the jump flags into `map`.
pub fn confirm_lsc(spec: &ProblemSpec, map: &mut ValueMap, report: &mut ContinuityReport, opts: &SweepOptions) {
    map.jump_flags.clone_from(&report.jump_flags);
    let fine = spec.with_intervals(2 * spec.intervals);
    let mut violations = Vec::new();
    for &k in &report.lsc_candidates {
        let hood = map.grid.window(k, 1);
        let seeds: Vec<Control> = hood
            .iter()
            .chain(std::iter::once(&k))
            .filter_map(|&j| map.cells[j].best_control.clone())
            .collect();
        let solve = SolveOptions {
            seed: cell_seed(opts.solve.seed, k),
            ..opts.solve.clone()
        };
        let refined = direct::solve_seeded(&fine, &map.grid.point(k), &solve, &seeds).map_or(f64::INFINITY, |s| s.value());
        let nb_min = hood.iter().map(|&j| map.values[j]).fold(f64::INFINITY, f64::min);
        let threshold = report.kappa_jump;
        if refined.min(map.values[k]) - nb_min > threshold {
            violations.push(k);
        }
    }
    report.lsc_violations = violations;
}

/// Largest `|V(a) - V(b)| / |a - b|` over adjacent cells both inside `mask`.
pub fn lipschitz_estimate(map: &ValueMap, mask: &[bool]) -> Result<f64> {
    if mask.len() != map.values.len() {
        return Err(Error::Shape("mask length differs from cell count".into()));
    }
    if (0..mask.len()).any(|k| mask[k] && !map.values[k].is_finite()) {
        return Err(Error::Unreachable);
    }
    let mut best = 0.0_f64;
    for k in 0..mask.len() {
        if !mask[k] {
            continue;
        }
        for (nb, d) in map.grid.neighbors(k) {
            if nb > k && mask[nb] {
                best = best.max((map.values[k] - map.values[nb]).abs() / d);
            }
        }
    }
    Ok(best)
}

/// Tame cells whose every neighbour is abnormal-flagged.
pub fn suspect_tame_cells(map: &ValueMap) -> Vec<usize> {
    (0..map.values.len())
        .filter(|&k| {
            let nbs = map.grid.neighbors(k);
            map.class_labels[k].is_tame()
                && !nbs.is_empty()
                && nbs.iter().all(|&(j, _)| map.class_labels[j] == CellLabel::AbnormalFlagged)
        })
        .collect()
}
