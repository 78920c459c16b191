//! Uniform-grid neighbour search with deterministic ordering.
//!
//! Particles are bucketed by cell and the buckets sorted by `(cell key,
//! index)`. Cells along `x` pack into consecutive keys, so the 3x3x3 block
//! around a cell is nine key ranges; those are looked up once per occupied
//! cell and shared by every particle in it.

use crate::exec::Execution;
use nalgebra::Point3;
use std::ops::Range;

const BIAS: i64 = 1 << 20;
const MASK: i64 = (1 << 21) - 1;

#[inline]
fn cell_of(p: &Point3<f64>, inv_cell: f64) -> [i64; 3] {
    [
        (p.x * inv_cell).floor() as i64,
        (p.y * inv_cell).floor() as i64,
        (p.z * inv_cell).floor() as i64,
    ]
}

#[inline]
fn pack(c: [i64; 3]) -> u64 {
    let x = (c[0] + BIAS).clamp(0, MASK);
    let y = (c[1] + BIAS).clamp(0, MASK);
    let z = (c[2] + BIAS).clamp(0, MASK);
    ((z << 42) | (y << 21) | x) as u64
}

#[inline]
fn unpack(key: u64) -> [i64; 3] {
    let k = key as i64;
    [
        (k & MASK) - BIAS,
        ((k >> 21) & MASK) - BIAS,
        ((k >> 42) & MASK) - BIAS,
    ]
}

/// Compressed neighbour lists: neighbours of `i` are
/// `indices[offsets[i]..offsets[i + 1]]`, in ascending grid order.
#[derive(Debug, Default, Clone)]
pub struct NeighborList {
    pub offsets: Vec<usize>,
    pub indices: Vec<u32>,
    sorted: Vec<(u64, u32)>,
    keys: Vec<u64>,
    /// Start of each occupied cell's run in `sorted`.
    runs: Vec<usize>,
    /// Nine key ranges per occupied cell.
    blocks: Vec<[Range<usize>; 9]>,
    /// Occupied-cell index of each particle.
    cell_rank: Vec<u32>,
    scratch: Vec<Vec<u32>>,
}

impl NeighborList {
    #[inline]
    pub fn of(&self, i: usize) -> &[u32] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Rebuilds the lists for all pairs closer than `radius`.
    pub fn rebuild(&mut self, positions: &[Point3<f64>], radius: f64, exec: Execution) {
        let n = positions.len();
        let inv_cell = 1.0 / radius;
        let r2 = radius * radius;

        self.sorted.clear();
        self.sorted.extend(
            positions
                .iter()
                .enumerate()
                .map(|(i, p)| (pack(cell_of(p, inv_cell)), i as u32)),
        );
        self.sorted.sort_unstable();
        self.keys.clear();
        self.keys.extend(self.sorted.iter().map(|e| e.0));

        self.runs.clear();
        self.cell_rank.resize(n, 0);
        for (s, &(key, i)) in self.sorted.iter().enumerate() {
            if s == 0 || key != self.sorted[s - 1].0 {
                self.runs.push(s);
            }
            self.cell_rank[i as usize] = (self.runs.len() - 1) as u32;
        }

        let keys = &self.keys;
        let sorted = &self.sorted;
        let runs = &self.runs;
        self.blocks
            .resize(runs.len(), std::array::from_fn(|_| 0..0));
        exec.fill(&mut self.blocks, |r| {
            let c = unpack(sorted[runs[r]].0);
            std::array::from_fn(|row| {
                let dy = (row % 3) as i64 - 1;
                let dz = (row / 3) as i64 - 1;
                let lo = pack([c[0] - 1, c[1] + dy, c[2] + dz]);
                let hi = pack([c[0] + 1, c[1] + dy, c[2] + dz]);
                keys.partition_point(|&k| k < lo)..keys.partition_point(|&k| k <= hi)
            })
        });

        let blocks = &self.blocks;
        let cell_rank = &self.cell_rank;
        self.scratch.resize_with(n, Vec::new);
        exec.for_each_mut(&mut self.scratch, |i, out| {
            out.clear();
            let p = &positions[i];
            for range in &blocks[cell_rank[i] as usize] {
                for &(_, j) in &sorted[range.clone()] {
                    let j_us = j as usize;
                    if j_us != i && (positions[j_us] - p).norm_squared() < r2 {
                        out.push(j);
                    }
                }
            }
        });

        self.offsets.clear();
        self.offsets.reserve(n + 1);
        self.indices.clear();
        self.offsets.push(0);
        for list in &self.scratch {
            self.indices.extend_from_slice(list);
            self.offsets.push(self.indices.len());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pack_round_trips() {
        for c in [[0, 0, 0], [-3, 7, -1], [1000, -2000, 5]] {
            assert_eq!(unpack(pack(c)), c);
        }
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Point3<f64>> = (0..400)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.05..0.1),
                    rng.gen_range(-0.02..0.02),
                )
            })
            .collect();
        let radius = 0.017;
        let mut nl = NeighborList::default();
        nl.rebuild(&pts, radius, Execution::Sequential);
        for i in 0..pts.len() {
            let mut got: Vec<u32> = nl.of(i).to_vec();
            got.sort_unstable();
            let want: Vec<u32> = (0..pts.len() as u32)
                .filter(|&j| j as usize != i && (pts[j as usize] - pts[i]).norm() < radius)
                .collect();
            assert_eq!(got, want, "particle {i}");
        }
        let mut par = NeighborList::default();
        par.rebuild(&pts, radius, Execution::Parallel);
        assert_eq!(par.indices, nl.indices);
        assert_eq!(par.offsets, nl.offsets);
    }
}
