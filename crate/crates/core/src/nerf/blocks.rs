//! Partition of a camera trajectory into overlapping axis-aligned blocks.

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::geom::Aabb;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub bounds: Aabb,
    pub cameras: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub blocks: Vec<Block>,
    pub block_size: f64,
    /// Shared length between neighbouring blocks, in world units.
    pub overlap: f64,
}

/// Block start offsets covering `[0, length]` with stride `size - overlap`;
/// the last block is shifted back so it ends exactly at `length`.
pub fn axis_starts(length: f64, size: f64, overlap: f64) -> Vec<f64> {
    if length <= size {
        return vec![0.0];
    }
    let stride = (size - overlap).max(1e-9);
    let mut starts = vec![0.0];
    while starts.last().unwrap() + size < length {
        let next = starts.last().unwrap() + stride;
        starts.push(next.min(length - size));
    }
    starts
}

pub fn partition_blocks(cameras: &[DVec3], block_size: f64, overlap: f64) -> BlockLayout {
    let bb = Aabb::from_points(cameras);
    let ext = bb.extent();
    let per_axis: Vec<Vec<(f64, f64)>> = (0..3)
        .map(|k| {
            let len = ext[k].max(0.0);
            axis_starts(len, block_size, overlap)
                .into_iter()
                .map(|s| (bb.min[k] + s, bb.min[k] + (s + block_size).min(len)))
                .collect()
        })
        .collect();
    let mut blocks = Vec::new();
    for x in &per_axis[0] {
        for y in &per_axis[1] {
            for z in &per_axis[2] {
                let bounds = Aabb::new(DVec3::new(x.0, y.0, z.0), DVec3::new(x.1, y.1, z.1));
                let cams = cameras.iter().enumerate().filter(|(_, c)| bounds.contains(**c)).map(|(i, _)| i).collect();
                blocks.push(Block { bounds, cameras: cams });
            }
        }
    }
    BlockLayout { blocks, block_size, overlap }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_cover() {
        assert_eq!(axis_starts(10.0, 4.0, 1.0), vec![0.0, 3.0, 6.0]);
        assert_eq!(axis_starts(3.0, 4.0, 1.0), vec![0.0]);
        assert_eq!(axis_starts(11.0, 4.0, 1.0), vec![0.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn trajectory_blocks() {
        let cams: Vec<DVec3> = (0..=20).map(|i| DVec3::new(i as f64 * 0.5, 0.0, 1.0)).collect();
        let l = partition_blocks(&cams, 4.0, 1.0);
        assert_eq!(l.blocks.len(), 3);
        let xs: Vec<f64> = l.blocks.iter().map(|b| b.bounds.min.x).collect();
        assert_eq!(xs, vec![0.0, 3.0, 6.0]);
        assert_eq!(l.blocks[2].bounds.max.x, 10.0);
        for i in 0..cams.len() {
            assert!(l.blocks.iter().any(|b| b.cameras.contains(&i)));
        }
        let small = partition_blocks(&cams[..4], 4.0, 1.0);
        assert_eq!(small.blocks.len(), 1);
        assert_eq!(small.blocks[0].cameras, vec![0, 1, 2, 3]);
    }
}
