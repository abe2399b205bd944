//! Baseline octree point-cloud geometry codec.
//!
//! Occupancy bytes of a breadth-first octree traversal are entropy-coded
//! with an adaptive range coder. Lossless mode codes down to unit voxels;
//! lossy mode stops `truncate_levels` above the leaves and the decoder
//! reconstructs one point per surviving node at its center, attaching a
//! local-density occupancy score to every reconstructed point.

mod external;
mod range;

pub use external::ExternalCodec;
pub use range::{OccupancyModel, RangeDecoder, RangeEncoder};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::cloud::{EventPointCloud, Voxel};
use crate::error::{Error, Result};
use crate::event::Polarity;

/// Deepest supported octree (cube side 2^40).
pub const MAX_DEPTH: u32 = 40;

const MAGIC: &[u8; 4] = b"EOC1";
const HEADER_BYTES: usize = 4 + 4 + 48 + 8 + 8 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecMode {
    Lossless,
    Lossy,
}

/// Octree codec settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OctreeConfig {
    pub mode: CodecMode,
    /// Number of bottom octree levels dropped in lossy mode.
    #[serde(default)]
    pub truncate_levels: u32,
    /// Chebyshev radius of the occupancy-score window.
    #[serde(default = "default_score_radius")]
    pub score_radius: u64,
}

fn default_score_radius() -> u64 {
    2
}

impl OctreeConfig {
    pub fn lossless() -> OctreeConfig {
        OctreeConfig {
            mode: CodecMode::Lossless,
            truncate_levels: 0,
            score_radius: default_score_radius(),
        }
    }

    pub fn lossy(truncate_levels: u32) -> OctreeConfig {
        OctreeConfig {
            mode: CodecMode::Lossy,
            truncate_levels,
            score_radius: default_score_radius(),
        }
    }

    pub fn with_score_radius(mut self, score_radius: u64) -> OctreeConfig {
        assert!(score_radius >= 1, "score radius must be at least 1");
        self.score_radius = score_radius;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == CodecMode::Lossless && self.truncate_levels != 0 {
            return Err(Error::InvalidJob(
                "lossless mode requires truncate_levels = 0".into(),
            ));
        }
        if !(1..=255).contains(&self.score_radius) {
            return Err(Error::InvalidJob("score radius must be in 1..=255".into()));
        }
        Ok(())
    }

    fn effective_truncation(&self, depth: u32) -> u32 {
        match self.mode {
            CodecMode::Lossless => 0,
            CodecMode::Lossy => self.truncate_levels.min(depth),
        }
    }
}

/// Self-describing bitstream header. All fields are fixed-width
/// little-endian integers in the serialized form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub polarity: Polarity,
    /// Octree depth L; the coding cube has side 2^L.
    pub depth: u32,
    /// Levels dropped above the leaves (0 = lossless).
    pub truncate_levels: u32,
    /// Chebyshev radius used for decoder-side occupancy scores.
    pub score_radius: u64,
    /// Per-axis minima of the coded cloud (cube origin).
    pub origin: [i64; 3],
    /// Per-axis maxima of the coded cloud (reconstruction clamp bound).
    pub bbox_max: [i64; 3],
    /// Point count of the encoded cloud.
    pub n_points: u64,
    /// Node count at the coded depth (equals `n_points` when lossless).
    pub n_coded_leaves: u64,
}

/// An encoded geometry payload plus its header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OctreeBitstream {
    pub header: BitstreamHeader,
    pub payload: Vec<u8>,
}

impl OctreeBitstream {
    /// Header-only stream describing an empty cloud. `encode` refuses
    /// empty clouds; pipelines use this when a polarity has no events.
    pub fn empty(polarity: Polarity) -> OctreeBitstream {
        OctreeBitstream {
            header: BitstreamHeader {
                polarity,
                depth: 0,
                truncate_levels: 0,
                score_radius: default_score_radius(),
                origin: [0; 3],
                bbox_max: [0; 3],
                n_points: 0,
                n_coded_leaves: 0,
            },
            payload: Vec::new(),
        }
    }

    /// Serialized size in bytes, header included.
    pub fn size_bytes(&self) -> usize {
        HEADER_BYTES + self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(self.size_bytes());
        out.extend_from_slice(MAGIC);
        out.push(h.polarity.bit() as u8);
        out.push(h.depth as u8);
        out.push(h.truncate_levels as u8);
        out.push(h.score_radius as u8);
        for v in h.origin.iter().chain(h.bbox_max.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&h.n_points.to_le_bytes());
        out.extend_from_slice(&h.n_coded_leaves.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<OctreeBitstream> {
        if bytes.len() < HEADER_BYTES {
            return Err(Error::MalformedHeader(format!(
                "stream of {} bytes is shorter than the {HEADER_BYTES}-byte header",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::MalformedHeader("bad magic, expected EOC1".into()));
        }
        let polarity = match bytes[4] {
            0 => Polarity::Neg,
            1 => Polarity::Pos,
            other => return Err(Error::MalformedHeader(format!("bad polarity byte {other}"))),
        };
        let depth = u32::from(bytes[5]);
        let truncate_levels = u32::from(bytes[6]);
        let score_radius = u64::from(bytes[7]);
        if depth > MAX_DEPTH {
            return Err(Error::MalformedHeader(format!("depth {depth} too large")));
        }
        if truncate_levels > depth {
            return Err(Error::MalformedHeader(format!(
                "truncation {truncate_levels} exceeds depth {depth}"
            )));
        }
        if score_radius < 1 {
            return Err(Error::MalformedHeader("score radius must be >= 1".into()));
        }
        let mut off = 8;
        let mut read_i64 = |bytes: &[u8]| {
            let v = i64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes"));
            off += 8;
            v
        };
        let origin = [read_i64(bytes), read_i64(bytes), read_i64(bytes)];
        let bbox_max = [read_i64(bytes), read_i64(bytes), read_i64(bytes)];
        let n_points = read_i64(bytes) as u64;
        let n_coded_leaves = read_i64(bytes) as u64;
        let payload_len = read_i64(bytes) as u64 as usize;
        if bytes.len() - HEADER_BYTES != payload_len {
            return Err(Error::MalformedHeader(format!(
                "payload length field {payload_len} disagrees with {} remaining bytes",
                bytes.len() - HEADER_BYTES
            )));
        }
        Ok(OctreeBitstream {
            header: BitstreamHeader {
                polarity,
                depth,
                truncate_levels,
                score_radius,
                origin,
                bbox_max,
                n_points,
                n_coded_leaves,
            },
            payload: bytes[HEADER_BYTES..].to_vec(),
        })
    }
}

fn morton_key(rel: [u64; 3], depth: u32) -> u128 {
    let mut key: u128 = 0;
    for level in (0..depth).rev() {
        let group = (((rel[0] >> level) & 1) << 2)
            | (((rel[1] >> level) & 1) << 1)
            | ((rel[2] >> level) & 1);
        key = (key << 3) | u128::from(group);
    }
    key
}

/// Occupancy bytes of the breadth-first traversal, exposed for structural
/// tests. `keys` must be sorted Morton keys; returns one byte per internal
/// node above `coded_depth` plus the node count at the coded depth.
fn occupancy_stream(keys: &[u128], depth: u32, coded_depth: u32) -> (Vec<u8>, u64) {
    let mut ranges: Vec<(usize, usize)> = vec![(0, keys.len())];
    let mut bytes = Vec::new();
    for d in 0..coded_depth {
        let shift = 3 * (depth - d - 1);
        let mut next = Vec::with_capacity(ranges.len() * 2);
        for &(start, end) in &ranges {
            let mut occ = 0u8;
            let mut i = start;
            while i < end {
                let group = ((keys[i] >> shift) & 7) as u8;
                occ |= 1 << group;
                let mut j = i + 1;
                while j < end && ((keys[j] >> shift) & 7) as u8 == group {
                    j += 1;
                }
                next.push((i, j));
                i = j;
            }
            bytes.push(occ);
        }
        ranges = next;
    }
    (bytes, ranges.len() as u64)
}

/// Encode a cloud. The bounding cube has side 2^L with
/// L = ceil(log2(max per-axis extent + 1)) and origin at the per-axis minima.
pub fn encode(pc: &EventPointCloud, cfg: &OctreeConfig) -> Result<OctreeBitstream> {
    cfg.validate()?;
    let (min, max) = pc.bounds().ok_or(Error::EmptyCloud)?;
    let extent = (0..3)
        .map(|a| (max[a] - min[a]) as u64)
        .max()
        .expect("three axes");
    let mut depth = 0;
    while (1u64 << depth) < extent + 1 {
        depth += 1;
        if depth > MAX_DEPTH {
            return Err(Error::CoordinateOverflow {
                extent,
                max_depth: MAX_DEPTH,
            });
        }
    }

    let truncation = cfg.effective_truncation(depth);
    let coded_depth = depth - truncation;

    let mut keys: Vec<u128> = pc
        .points()
        .iter()
        .map(|p| {
            morton_key(
                [
                    (p.x - min[0]) as u64,
                    (p.y - min[1]) as u64,
                    (p.z - min[2]) as u64,
                ],
                depth,
            )
        })
        .collect();
    keys.sort_unstable();

    let (occupancy, n_coded_leaves) = occupancy_stream(&keys, depth, coded_depth);
    let payload = if occupancy.is_empty() {
        Vec::new()
    } else {
        let mut enc = RangeEncoder::new();
        let mut model = OccupancyModel::new();
        for &b in &occupancy {
            model.encode(&mut enc, b);
        }
        enc.finish()
    };

    Ok(OctreeBitstream {
        header: BitstreamHeader {
            polarity: pc.polarity(),
            depth,
            truncate_levels: truncation,
            score_radius: cfg.score_radius,
            origin: min,
            bbox_max: max,
            n_points: pc.len() as u64,
            n_coded_leaves,
        },
        payload,
    })
}

/// Decode a bitstream. Lossless streams reproduce the input set exactly;
/// lossy streams reconstruct one point per surviving node at its center
/// (clamped to the original bounding box) and attach occupancy scores.
pub fn decode(bs: &OctreeBitstream) -> Result<EventPointCloud> {
    let h = &bs.header;
    if h.n_points == 0 {
        if h.n_coded_leaves != 0 {
            return Err(Error::MalformedHeader(
                "empty stream advertises coded nodes".into(),
            ));
        }
        return Ok(EventPointCloud::new(h.polarity));
    }
    if h.truncate_levels > h.depth {
        return Err(Error::MalformedHeader("truncation exceeds depth".into()));
    }
    let coded_depth = h.depth - h.truncate_levels;

    let mut nodes: Vec<[u64; 3]> = vec![[0, 0, 0]];
    if coded_depth > 0 {
        let mut dec = RangeDecoder::new(&bs.payload)?;
        let mut model = OccupancyModel::new();
        for d in 0..coded_depth {
            let shift = h.depth - d - 1;
            let mut next = Vec::with_capacity(nodes.len() * 2);
            for parent in &nodes {
                let occ = model.decode(&mut dec)?;
                for group in 0..8u64 {
                    if occ & (1 << group) != 0 {
                        next.push([
                            parent[0] | ((group >> 2) & 1) << shift,
                            parent[1] | ((group >> 1) & 1) << shift,
                            parent[2] | (group & 1) << shift,
                        ]);
                    }
                }
            }
            if next.len() as u64 > h.n_coded_leaves {
                return Err(Error::CorruptPayload(format!(
                    "{} nodes at depth {} exceed the advertised {} coded leaves",
                    next.len(),
                    d + 1,
                    h.n_coded_leaves
                )));
            }
            nodes = next;
        }
    }
    if nodes.len() as u64 != h.n_coded_leaves {
        return Err(Error::CorruptPayload(format!(
            "decoded {} coded leaves, header advertises {}",
            nodes.len(),
            h.n_coded_leaves
        )));
    }

    if h.truncate_levels == 0 {
        let points: Vec<Voxel> = nodes
            .iter()
            .map(|rel| {
                Voxel::new(
                    h.origin[0] + rel[0] as i64,
                    h.origin[1] + rel[1] as i64,
                    h.origin[2] + rel[2] as i64,
                )
            })
            .collect();
        let cloud = EventPointCloud::from_points(h.polarity, points);
        if cloud.len() as u64 != h.n_points {
            return Err(Error::CorruptPayload(format!(
                "decoded {} points, header advertises {}",
                cloud.len(),
                h.n_points
            )));
        }
        return Ok(cloud);
    }

    // Lossy reconstruction: node centers, clamped to the original bounds.
    let half = 1i64 << (h.truncate_levels - 1);
    let points: Vec<Voxel> = nodes
        .iter()
        .map(|rel| {
            let center =
                |axis: usize| (h.origin[axis] + rel[axis] as i64 + half).min(h.bbox_max[axis]);
            Voxel::new(center(0), center(1), center(2))
        })
        .collect();
    let mut cloud = EventPointCloud::from_points(h.polarity, points);
    let scores = occupancy_scores(cloud.points(), h.score_radius);
    cloud.set_scores(scores)?;
    Ok(cloud)
}

/// Score of each point: the count of same-cloud points within Chebyshev
/// radius `r` (itself included) over the window volume (2r+1)^3.
pub fn occupancy_scores(points: &[Voxel], radius: u64) -> Vec<f64> {
    let set: HashSet<Voxel> = points.iter().copied().collect();
    let r = radius as i64;
    let window = {
        let side = 2 * radius + 1;
        (side * side * side) as f64
    };
    points
        .iter()
        .map(|p| {
            let mut hits = 0u64;
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if set.contains(&Voxel::new(p.x + dx, p.y + dy, p.z + dz)) {
                            hits += 1;
                        }
                    }
                }
            }
            hits as f64 / window
        })
        .collect()
}

/// Bits per event: total compressed bits of both polarity streams over the
/// original (pre-voxelization) event count. Header bytes count.
pub fn rate_bpe(pos_bytes: usize, neg_bytes: usize, n_original_events: u64) -> Result<f64> {
    if n_original_events == 0 {
        return Err(Error::ZeroEvents);
    }
    Ok(8.0 * (pos_bytes + neg_bytes) as f64 / n_original_events as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud_of(points: Vec<Voxel>) -> EventPointCloud {
        EventPointCloud::from_points(Polarity::Pos, points)
    }

    #[test]
    fn single_point_round_trip() {
        let pc = cloud_of(vec![Voxel::new(0, 0, 0)]);
        let bs = encode(&pc, &OctreeConfig::lossless()).unwrap();
        assert_eq!(bs.header.depth, 0);
        assert!(bs.payload.is_empty());
        assert_eq!(decode(&bs).unwrap(), pc);
    }

    #[test]
    fn full_corner_cube_is_one_ff_byte() {
        let corners: Vec<Voxel> = (0..8)
            .map(|i| Voxel::new(i >> 2 & 1, i >> 1 & 1, i & 1))
            .collect();
        let pc = cloud_of(corners);
        let keys: Vec<u128> = pc
            .points()
            .iter()
            .map(|p| morton_key([p.x as u64, p.y as u64, p.z as u64], 1))
            .collect();
        let (bytes, leaves) = occupancy_stream(&keys, 1, 1);
        assert_eq!(bytes, vec![0xff]);
        assert_eq!(leaves, 8);

        let bs = encode(&pc, &OctreeConfig::lossless()).unwrap();
        assert_eq!(decode(&bs).unwrap(), pc);
    }

    #[test]
    fn empty_cloud_is_rejected_by_encode() {
        let pc = EventPointCloud::new(Polarity::Neg);
        assert!(matches!(
            encode(&pc, &OctreeConfig::lossless()),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn empty_bitstream_decodes_to_empty_cloud() {
        let bs = OctreeBitstream::empty(Polarity::Neg);
        let bytes = bs.to_bytes();
        assert_eq!(bytes.len(), HEADER_BYTES);
        let back = OctreeBitstream::from_bytes(&bytes).unwrap();
        assert!(decode(&back).unwrap().is_empty());
    }

    #[test]
    fn bitstream_bytes_round_trip() {
        let pc = cloud_of(vec![
            Voxel::new(3, 1, 4),
            Voxel::new(1, 5, 9),
            Voxel::new(2, 6, 5),
        ]);
        let bs = encode(&pc, &OctreeConfig::lossy(1)).unwrap();
        let back = OctreeBitstream::from_bytes(&bs.to_bytes()).unwrap();
        assert_eq!(back, bs);
    }

    #[test]
    fn root_truncation_yields_cube_center() {
        let pc = cloud_of(vec![
            Voxel::new(0, 0, 0),
            Voxel::new(7, 7, 7),
            Voxel::new(3, 5, 1),
        ]);
        let bs = encode(&pc, &OctreeConfig::lossy(32)).unwrap();
        assert_eq!(bs.header.depth, 3);
        assert_eq!(bs.header.truncate_levels, 3);
        let dec = decode(&bs).unwrap();
        assert_eq!(dec.points(), &[Voxel::new(4, 4, 4)]);
        assert_eq!(dec.scores(), Some(&[1.0 / 125.0][..]));
    }

    #[test]
    fn lossy_centers_stay_in_bounds() {
        let pc = cloud_of(vec![
            Voxel::new(0, 0, 0),
            Voxel::new(5, 2, 2),
            Voxel::new(2, 5, 5),
        ]);
        let bs = encode(&pc, &OctreeConfig::lossy(2)).unwrap();
        let dec = decode(&bs).unwrap();
        for p in dec.points() {
            for (axis, c) in [p.x, p.y, p.z].into_iter().enumerate() {
                assert!(c >= bs.header.origin[axis]);
                assert!(c <= bs.header.bbox_max[axis]);
            }
        }
    }

    #[test]
    fn isolated_point_score_is_window_reciprocal() {
        let scores = occupancy_scores(&[Voxel::new(10, 10, 10)], 2);
        assert_eq!(scores, vec![1.0 / 125.0]);
    }

    #[test]
    fn scores_match_direct_recount() {
        let points = vec![
            Voxel::new(0, 0, 0),
            Voxel::new(1, 1, 1),
            Voxel::new(2, 2, 2),
            Voxel::new(9, 9, 9),
        ];
        let scores = occupancy_scores(&points, 2);
        // first three are within Chebyshev 2 of each other
        assert_eq!(scores[0], 3.0 / 125.0);
        assert_eq!(scores[3], 1.0 / 125.0);
    }

    #[test]
    fn lossy_scores_match_a_window_recount() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let n = rng.gen_range(5..300usize);
            let points: Vec<Voxel> = (0..n)
                .map(|_| {
                    Voxel::new(
                        rng.gen_range(0..32),
                        rng.gen_range(0..32),
                        rng.gen_range(0..32),
                    )
                })
                .collect();
            let pc = cloud_of(points);
            let radius = rng.gen_range(1..=3u64);
            let cfg = OctreeConfig::lossy(rng.gen_range(1..=3)).with_score_radius(radius);
            let dec = decode(&encode(&pc, &cfg).unwrap()).unwrap();
            let scores = dec.scores().expect("lossy decode carries scores");
            let window = {
                let side = (2 * radius + 1) as f64;
                side * side * side
            };
            for (p, &score) in dec.points().iter().zip(scores) {
                assert!(score > 0.0 && score <= 1.0);
                let recount = dec
                    .points()
                    .iter()
                    .filter(|q| p.chebyshev(**q) <= radius)
                    .count();
                assert_eq!(score, recount as f64 / window);
            }
        }
    }

    #[test]
    fn corrupt_payload_is_detected() {
        let points: Vec<Voxel> = (0..40)
            .map(|i| Voxel::new(i * 7 % 31, i * 13 % 29, i * 5 % 23))
            .collect();
        let pc = cloud_of(points);
        let bs = encode(&pc, &OctreeConfig::lossless()).unwrap();

        let mut truncated = bs.clone();
        truncated.payload.truncate(bs.payload.len() / 2);
        assert!(matches!(decode(&truncated), Err(Error::CorruptPayload(_))));

        let mut wrong_count = bs.clone();
        wrong_count.header.n_coded_leaves -= 1;
        assert!(matches!(
            decode(&wrong_count),
            Err(Error::CorruptPayload(_))
        ));
    }

    #[test]
    fn bpe_arithmetic() {
        assert_eq!(rate_bpe(1000, 1048, 1024).unwrap(), 16.0);
        assert_eq!(
            rate_bpe(1000, 1048, 2048).unwrap(),
            rate_bpe(1000, 1048, 1024).unwrap() / 2.0
        );
        assert!(matches!(rate_bpe(1, 1, 0), Err(Error::ZeroEvents)));
    }

    #[test]
    fn truncation_never_grows_the_stream() {
        let points: Vec<Voxel> = (0..200)
            .map(|i| Voxel::new(i * 31 % 64, i * 17 % 64, i * 7 % 64))
            .collect();
        let pc = cloud_of(points);
        let mut sizes = Vec::new();
        let lossless = encode(&pc, &OctreeConfig::lossless()).unwrap();
        sizes.push(lossless.size_bytes());
        for t in 1..=lossless.header.depth {
            let bs = encode(&pc, &OctreeConfig::lossy(t)).unwrap();
            sizes.push(bs.size_bytes());
        }
        for w in sizes.windows(2) {
            assert!(w[0] >= w[1], "sizes not monotone: {sizes:?}");
        }
    }
}
