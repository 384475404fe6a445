//! Binary sequence container, JSON manifest, codebook export, and the
//! end-to-end generation pipeline.
//!
//! Record files (`*.nftl`), little-endian:
//!
//! ```text
//! magic "NFTL" | u32 version | u64 record count
//! per record: u64 payload length | payload
//! payload: u64 id | u32 mode | u32 T | u32 P | u32 K | u32 N | u32 S
//!          | T x 3 f32 positions | T x 3 f32 gps | P x 3 f32 cloud
//!          | per slot: u32 optimal | K x u32 top-K flat | K x f32 SE | (2N + S) x f32 soft target
//! ```

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::channel::{channel_vector, LinkParams};
use crate::codebook::{build_codebook, ArrayConfig, BeamIndex3D, Codebook3D, CodebookDims, CoverageRanges};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::oracle::{label_slots, soft_targets, SoftTarget};
use crate::scene::{enumerate_paths, Scene};
use crate::seed::{sequence_seed, substream};
use crate::trajectory::{
    add_gps_noise, generate_trajectory, sample_point_cloud, GroundRegion, MotionMode, TrajectoryConfig, TASK_MODE_COUNT,
};

pub const DATASET_MAGIC: [u8; 4] = *b"NFTL";
pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;
pub const CODEBOOK_MAGIC: [u8; 4] = *b"NFCB";
pub const CODEBOOK_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCENE_FILE: &str = "scene.json";

const MAX_SEQUENCE_ATTEMPTS: u64 = 64;

/// Oracle output for one slot, stored at label precision.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotLabel {
    pub optimal: u32,
    pub topk: Vec<u32>,
    pub se: Vec<f32>,
    /// Concatenated soft targets: theta (N), phi (N), r (S).
    pub soft: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub id: u64,
    pub mode: u32,
    pub positions: Vec<[f32; 3]>,
    pub gps: Vec<[f32; 3]>,
    pub cloud: Vec<[f32; 3]>,
    pub labels: Vec<SlotLabel>,
}

fn widen(p: &[f32; 3]) -> [f64; 3] {
    [p[0] as f64, p[1] as f64, p[2] as f64]
}

fn narrow(p: Vec3) -> [f32; 3] {
    [p.x as f32, p.y as f32, p.z as f32]
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions_f64(&self) -> Vec<[f64; 3]> {
        self.positions.iter().map(widen).collect()
    }

    pub fn gps_f64(&self) -> Vec<[f64; 3]> {
        self.gps.iter().map(widen).collect()
    }

    pub fn cloud_f64(&self) -> Vec<[f64; 3]> {
        self.cloud.iter().map(widen).collect()
    }

    pub fn optimal(&self, slot: usize, dims: CodebookDims) -> Result<BeamIndex3D> {
        let l = self.labels.get(slot).ok_or(Error::Index { what: "slot", index: slot, len: self.labels.len() })?;
        dims.unflatten(l.optimal as usize)
    }

    pub fn soft_target(&self, slot: usize, dims: CodebookDims) -> Result<SoftTarget> {
        let l = self.labels.get(slot).ok_or(Error::Index { what: "slot", index: slot, len: self.labels.len() })?;
        if l.soft.len() != 2 * dims.n + dims.s {
            return Err(Error::Inconsistent(format!(
                "soft target length {} for N={}, S={}",
                l.soft.len(),
                dims.n,
                dims.s
            )));
        }
        let v: Vec<f64> = l.soft.iter().map(|&x| x as f64).collect();
        Ok(SoftTarget { theta: v[..dims.n].to_vec(), phi: v[dims.n..2 * dims.n].to_vec(), r: v[2 * dims.n..].to_vec() })
    }
}

fn truncated(what: &'static str) -> impl Fn(io::Error) -> Error {
    move |e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Truncated(format!("dataset ended inside {what}"))
        } else {
            Error::Io(e)
        }
    }
}

fn encode_record(r: &SequenceRecord, dims: CodebookDims) -> Result<Vec<u8>> {
    let t = r.positions.len();
    let k = r.labels.first().map_or(0, |l| l.topk.len());
    if r.gps.len() != t || r.labels.len() != t {
        return Err(Error::Inconsistent(format!(
            "record {}: {} positions, {} gps, {} labels",
            r.id,
            t,
            r.gps.len(),
            r.labels.len()
        )));
    }
    let mut b = Vec::new();
    b.write_u64::<LittleEndian>(r.id)?;
    b.write_u32::<LittleEndian>(r.mode)?;
    for v in [t, r.cloud.len(), k, dims.n, dims.s] {
        b.write_u32::<LittleEndian>(v as u32)?;
    }
    for p in r.positions.iter().chain(&r.gps).chain(&r.cloud) {
        for &c in p {
            b.write_f32::<LittleEndian>(c)?;
        }
    }
    for l in &r.labels {
        if l.topk.len() != k || l.se.len() != k || l.soft.len() != 2 * dims.n + dims.s {
            return Err(Error::Inconsistent(format!("record {}: ragged slot label", r.id)));
        }
        b.write_u32::<LittleEndian>(l.optimal)?;
        for &i in &l.topk {
            b.write_u32::<LittleEndian>(i)?;
        }
        for &x in l.se.iter().chain(&l.soft) {
            b.write_f32::<LittleEndian>(x)?;
        }
    }
    Ok(b)
}

/// Per-record shape read back from a payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RecordShape {
    t: usize,
    p: usize,
    k: usize,
    dims: CodebookDims,
}

fn decode_record(payload: &[u8]) -> Result<(SequenceRecord, RecordShape)> {
    let mut c = Cursor::new(payload);
    let bad = |_: io::Error| Error::Inconsistent("record payload shorter than its declared shape".into());
    let id = c.read_u64::<LittleEndian>().map_err(bad)?;
    let mode = c.read_u32::<LittleEndian>().map_err(bad)?;
    let mut hdr = [0usize; 5];
    for h in &mut hdr {
        *h = c.read_u32::<LittleEndian>().map_err(bad)? as usize;
    }
    let [t, p, k, n, s] = hdr;
    let dims = CodebookDims::new(n, s)?;
    let points = |count: usize, c: &mut Cursor<&[u8]>| -> Result<Vec<[f32; 3]>> {
        let mut flat = vec![0f32; count * 3];
        c.read_f32_into::<LittleEndian>(&mut flat).map_err(bad)?;
        Ok(flat.chunks_exact(3).map(|q| [q[0], q[1], q[2]]).collect())
    };
    let positions = points(t, &mut c)?;
    let gps = points(t, &mut c)?;
    let cloud = points(p, &mut c)?;
    let mut labels = Vec::with_capacity(t);
    for _ in 0..t {
        let optimal = c.read_u32::<LittleEndian>().map_err(bad)?;
        let mut topk = vec![0u32; k];
        c.read_u32_into::<LittleEndian>(&mut topk).map_err(bad)?;
        let mut se = vec![0f32; k];
        c.read_f32_into::<LittleEndian>(&mut se).map_err(bad)?;
        let mut soft = vec![0f32; 2 * n + s];
        c.read_f32_into::<LittleEndian>(&mut soft).map_err(bad)?;
        labels.push(SlotLabel { optimal, topk, se, soft });
    }
    if c.position() as usize != payload.len() {
        return Err(Error::Inconsistent(format!(
            "record {id}: {} trailing payload bytes",
            payload.len() - c.position() as usize
        )));
    }
    Ok((SequenceRecord { id, mode, positions, gps, cloud, labels }, RecordShape { t, p, k, dims }))
}

/// Writes a record file. Every record must use codebook `dims`.
pub fn write_records<W: Write>(records: &[SequenceRecord], dims: CodebookDims, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(&DATASET_MAGIC)?;
    w.write_u32::<LittleEndian>(DATASET_VERSION)?;
    w.write_u64::<LittleEndian>(records.len() as u64)?;
    for r in records {
        let payload = encode_record(r, dims)?;
        w.write_u64::<LittleEndian>(payload.len() as u64)?;
        w.write_all(&payload)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a record file, checking structure but not manifest consistency.
pub fn read_records<R: Read>(r: R) -> Result<Vec<SequenceRecord>> {
    Ok(read_records_with_shape(r)?.into_iter().map(|(rec, _)| rec).collect())
}

fn read_records_with_shape<R: Read>(r: R) -> Result<Vec<(SequenceRecord, RecordShape)>> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated("magic"))?;
    if magic != DATASET_MAGIC {
        return Err(Error::BadMagic { expected: DATASET_MAGIC, found: magic });
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated("header"))?;
    if version != DATASET_VERSION {
        return Err(Error::BadVersion { found: version, supported: DATASET_VERSION });
    }
    let count = r.read_u64::<LittleEndian>().map_err(truncated("header"))?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.read_u64::<LittleEndian>().map_err(truncated("record length"))? as usize;
        let mut payload = Vec::new();
        (&mut r).take(len as u64).read_to_end(&mut payload)?;
        if payload.len() != len {
            return Err(Error::Truncated(format!("record payload has {} of {len} bytes", payload.len())));
        }
        out.push(decode_record(&payload)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Inconsistent(format!("trailing bytes after {count} records")));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn desk() -> Self {
        Self { train: 500, val: 100, test: 100 }
    }

    pub fn full_scale() -> Self {
        Self { train: 12000, val: 1500, test: 1500 }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.nftl", self.name())
    }
}

/// Generation parameters for a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub array: ArrayConfig,
    pub dims: CodebookDims,
    pub ranges: CoverageRanges,
    pub link: LinkParams,
    pub trajectory: TrajectoryConfig,
    pub ground: GroundRegion,
    pub counts: SplitCounts,
    pub t_prev: usize,
    pub t_pred: usize,
    pub dt: f64,
    pub sigma_gps: f64,
    pub points: usize,
    pub k: usize,
    pub gamma: f64,
    pub master_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            array: ArrayConfig::xl_default(),
            dims: CodebookDims { n: 20, s: 10 },
            ranges: CoverageRanges::default(),
            link: LinkParams::default(),
            trajectory: TrajectoryConfig::default(),
            ground: GroundRegion::default(),
            counts: SplitCounts::desk(),
            t_prev: 10,
            t_pred: 10,
            dt: 0.1,
            sigma_gps: 0.5,
            points: 256,
            k: 3,
            gamma: 0.5,
            master_seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn slots(&self) -> usize {
        self.t_prev + self.t_pred
    }

    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        self.ranges.validate()?;
        if self.t_prev < 2 || self.t_pred < 1 {
            return Err(Error::Config(format!(
                "need T_prev >= 2 and T_pred >= 1, got {} and {}",
                self.t_prev, self.t_pred
            )));
        }
        if self.points == 0 || self.k == 0 || self.k > self.dims.len() {
            return Err(Error::Config(format!("invalid points {} or K {}", self.points, self.k)));
        }
        if !(self.dt > 0.0) || !(self.sigma_gps >= 0.0) {
            return Err(Error::Config(format!("invalid dt {} or sigma_gps {}", self.dt, self.sigma_gps)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub split: Split,
    pub file: String,
    /// Sequence ids are `first_id .. first_id + records`.
    pub first_id: u64,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub scene_file: String,
    pub config: DatasetConfig,
    pub splits: Vec<SplitInfo>,
}

impl DatasetManifest {
    pub fn split(&self, s: Split) -> Result<&SplitInfo> {
        self.splits
            .iter()
            .find(|i| i.split == s)
            .ok_or_else(|| Error::Inconsistent(format!("manifest lists no {} split", s.name())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::BadVersion { found: m.version, supported: MANIFEST_VERSION });
        }
        m.config.validate()?;
        let mut ranges: Vec<(u64, u64)> =
            m.splits.iter().map(|s| (s.first_id, s.first_id + s.records as u64)).collect();
        ranges.sort_unstable();
        if ranges.windows(2).any(|w| w[0].1 > w[1].0) {
            return Err(Error::Inconsistent("splits overlap in sequence ids".into()));
        }
        Ok(m)
    }

    /// Checks one split's records against the manifest.
    fn check_split(&self, info: &SplitInfo, records: &[(SequenceRecord, RecordShape)]) -> Result<()> {
        let c = &self.config;
        if records.len() != info.records {
            return Err(Error::Inconsistent(format!(
                "{}: manifest says {} records, file holds {}",
                info.split.name(),
                info.records,
                records.len()
            )));
        }
        let want = RecordShape { t: c.slots(), p: c.points, k: c.k, dims: c.dims };
        for (i, (r, shape)) in records.iter().enumerate() {
            if *shape != want {
                return Err(Error::Inconsistent(format!("record {}: shape {shape:?}, manifest {want:?}", r.id)));
            }
            if r.id != info.first_id + i as u64 {
                return Err(Error::Inconsistent(format!("record {} out of order in {}", r.id, info.split.name())));
            }
            if r.mode as usize >= TASK_MODE_COUNT {
                return Err(Error::Inconsistent(format!("record {}: mode {}", r.id, r.mode)));
            }
            let len = c.dims.len() as u32;
            if r.labels.iter().any(|l| l.optimal >= len || l.topk.iter().any(|&f| f >= len)) {
                return Err(Error::Inconsistent(format!("record {}: beam index >= {len}", r.id)));
            }
        }
        Ok(())
    }
}

/// Reads one split of a dataset directory, verified against its manifest.
pub fn read_split(dir: &Path, manifest: &DatasetManifest, split: Split) -> Result<Vec<SequenceRecord>> {
    let info = manifest.split(split)?;
    let recs = read_records_with_shape(File::open(dir.join(&info.file))?)?;
    manifest.check_split(info, &recs)?;
    Ok(recs.into_iter().map(|(r, _)| r).collect())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    DatasetManifest::from_json(&fs::read_to_string(dir.join(MANIFEST_FILE))?)
}

/// Manifest, scene, and all three splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub scene: Scene,
    pub train: Vec<SequenceRecord>,
    pub val: Vec<SequenceRecord>,
    pub test: Vec<SequenceRecord>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[SequenceRecord] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let scene = Scene::from_json(&fs::read_to_string(dir.join(&manifest.scene_file))?)?;
    Ok(Dataset {
        train: read_split(dir, &manifest, Split::Train)?,
        val: read_split(dir, &manifest, Split::Val)?,
        test: read_split(dir, &manifest, Split::Test)?,
        manifest,
        scene,
    })
}

/// One labelled sequence; regenerated from a fresh substream while any slot has no signal.
pub fn generate_sequence(scene: &Scene, cfg: &DatasetConfig, codebook: &Codebook3D, id: u64) -> Result<SequenceRecord> {
    let wrap = |e: Error| Error::Sequence { id, source: Box::new(e) };
    let seed = sequence_seed(cfg.master_seed, id);
    for attempt in 0..MAX_SEQUENCE_ATTEMPTS {
        let s = substream(seed, attempt);
        let mode = MotionMode::from_id((substream(s, 0) % TASK_MODE_COUNT as u64) as usize).map_err(wrap)?;
        let positions =
            generate_trajectory(scene, mode, cfg.slots(), cfg.dt, substream(s, 1), &cfg.trajectory).map_err(wrap)?;
        let gps = add_gps_noise(&positions, cfg.sigma_gps, substream(s, 2)).map_err(wrap)?;
        let cloud = sample_point_cloud(scene, cfg.points, substream(s, 3), &cfg.ground).map_err(wrap)?;
        let channels = positions
            .iter()
            .map(|&p| Ok(channel_vector(&cfg.array, &enumerate_paths(&cfg.array, scene, p)?, scene, p)))
            .collect::<Result<Vec<_>>>()
            .map_err(wrap)?;
        let slots = label_slots(&channels, codebook, &cfg.link, cfg.k).map_err(wrap)?;
        if slots.iter().any(|l| matches!(l, Err(Error::NoSignal))) {
            continue;
        }
        let mut labels = Vec::with_capacity(slots.len());
        for l in slots {
            let l = l.map_err(wrap)?;
            let st = soft_targets(&l, cfg.gamma, cfg.dims).map_err(wrap)?;
            labels.push(SlotLabel {
                optimal: l.topk[0].flat as u32,
                topk: l.topk.iter().map(|b| b.flat as u32).collect(),
                se: l.topk.iter().map(|b| b.se as f32).collect(),
                soft: st.theta.iter().chain(&st.phi).chain(&st.r).map(|&x| x as f32).collect(),
            });
        }
        return Ok(SequenceRecord {
            id,
            mode: mode.id() as u32,
            positions: positions.into_iter().map(narrow).collect(),
            gps: gps.into_iter().map(narrow).collect(),
            cloud: cloud.into_iter().map(narrow).collect(),
            labels,
        });
    }
    Err(wrap(Error::Generation(format!("every slot set lost the signal after {MAX_SEQUENCE_ATTEMPTS} attempts"))))
}

/// Sequences `ids`, generated in parallel and returned in id order.
pub fn generate_records(
    scene: &Scene,
    cfg: &DatasetConfig,
    codebook: &Codebook3D,
    ids: std::ops::Range<u64>,
) -> Result<Vec<SequenceRecord>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ids.into_par_iter().map(|id| generate_sequence(scene, cfg, codebook, id)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ids.map(|id| generate_sequence(scene, cfg, codebook, id)).collect()
    }
}

/// Generates and writes a full dataset directory; returns its manifest.
pub fn generate_dataset(scene: &Scene, cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    scene.validate()?;
    fs::create_dir_all(out_dir)?;
    let codebook = build_codebook(&cfg.array, cfg.dims, cfg.ranges)?;
    fs::write(out_dir.join(SCENE_FILE), scene.to_json()?)?;
    let mut splits = Vec::new();
    let mut next = 0u64;
    for (split, n) in [(Split::Train, cfg.counts.train), (Split::Val, cfg.counts.val), (Split::Test, cfg.counts.test)] {
        let ids = next..next + n as u64;
        let recs = generate_records(scene, cfg, &codebook, ids)?;
        write_records(&recs, cfg.dims, File::create(out_dir.join(split.file_name()))?)?;
        splits.push(SplitInfo { split, file: split.file_name(), first_id: next, records: n });
        next += n as u64;
    }
    let manifest =
        DatasetManifest { version: MANIFEST_VERSION, scene_file: SCENE_FILE.into(), config: cfg.clone(), splits };
    fs::write(out_dir.join(MANIFEST_FILE), manifest.to_json()?)?;
    Ok(manifest)
}

/// Codebook export, little-endian: magic `NFCB`, `u32` version, `u32` N, S, M,
/// M_y, M_z, `f64` d_y, d_z, f_c, the six range bounds (θ, φ, r min/max),
/// the θ, φ, r grids as `f64`, then `N*N*S*M` interleaved `f32` (re, im)
/// pairs in flat-codeword order.
pub fn write_codebook<W: Write>(cb: &Codebook3D, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(&CODEBOOK_MAGIC)?;
    w.write_u32::<LittleEndian>(CODEBOOK_VERSION)?;
    let a = cb.array;
    for v in [cb.dims.n, cb.dims.s, a.num_antennas(), a.m_y, a.m_z] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    let r = cb.ranges;
    for v in [a.d_y, a.d_z, a.f_c, r.theta_min, r.theta_max, r.phi_min, r.phi_max, r.r_min, r.r_max] {
        w.write_f64::<LittleEndian>(v)?;
    }
    let g = cb.grid();
    for d in crate::codebook::BeamDim::ALL {
        for &v in g.grid(d) {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    for flat in 0..cb.len() {
        let (re, im) = cb.codeword_parts(flat);
        for (x, y) in re.iter().zip(im) {
            w.write_f32::<LittleEndian>(*x as f32)?;
            w.write_f32::<LittleEndian>(*y as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Header of a codebook export plus its codewords.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookExport {
    pub dims: CodebookDims,
    pub array: ArrayConfig,
    pub ranges: CoverageRanges,
    pub grids: [Vec<f64>; 3],
    /// Interleaved (re, im) per antenna, codeword-major.
    pub data: Vec<f32>,
}

pub fn read_codebook<R: Read>(r: R) -> Result<CodebookExport> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated("magic"))?;
    if magic != CODEBOOK_MAGIC {
        return Err(Error::BadMagic { expected: CODEBOOK_MAGIC, found: magic });
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated("header"))?;
    if version != CODEBOOK_VERSION {
        return Err(Error::BadVersion { found: version, supported: CODEBOOK_VERSION });
    }
    let mut u = [0usize; 5];
    for x in &mut u {
        *x = r.read_u32::<LittleEndian>().map_err(truncated("header"))? as usize;
    }
    let [n, s, m, m_y, m_z] = u;
    let mut f = [0f64; 9];
    r.read_f64_into::<LittleEndian>(&mut f).map_err(truncated("header"))?;
    let array = ArrayConfig::new(m_y, m_z, f[0], f[1], f[2])?;
    if array.num_antennas() != m {
        return Err(Error::Inconsistent(format!("M = {m} but array is {m_y} x {m_z}")));
    }
    let ranges =
        CoverageRanges { theta_min: f[3], theta_max: f[4], phi_min: f[5], phi_max: f[6], r_min: f[7], r_max: f[8] };
    let dims = CodebookDims::new(n, s)?;
    let mut grids = [vec![0.0; n], vec![0.0; n], vec![0.0; s]];
    for g in &mut grids {
        r.read_f64_into::<LittleEndian>(g).map_err(truncated("grids"))?;
    }
    let mut data = vec![0f32; dims.len() * m * 2];
    r.read_f32_into::<LittleEndian>(&mut data).map_err(truncated("codewords"))?;
    Ok(CodebookExport { dims, array, ranges, grids, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneConfig};
    use proptest::prelude::*;

    fn small_cfg() -> DatasetConfig {
        DatasetConfig {
            array: ArrayConfig::half_wavelength(8, 8, 7e9).unwrap(),
            dims: CodebookDims::new(4, 3).unwrap(),
            counts: SplitCounts { train: 3, val: 2, test: 1 },
            t_prev: 3,
            t_pred: 2,
            points: 16,
            master_seed: 11,
            ..DatasetConfig::default()
        }
    }

    fn sample_record(id: u64, t: usize, p: usize, k: usize, dims: CodebookDims) -> SequenceRecord {
        let f = |i: usize| [i as f32 * 0.5, -(i as f32), 1e-3 * i as f32];
        SequenceRecord {
            id,
            mode: (id % 10) as u32,
            positions: (0..t).map(f).collect(),
            gps: (0..t).map(|i| f(i + 7)).collect(),
            cloud: (0..p).map(|i| f(i + 100)).collect(),
            labels: (0..t)
                .map(|i| SlotLabel {
                    optimal: (i % dims.len()) as u32,
                    topk: (0..k).map(|j| ((i + j) % dims.len()) as u32).collect(),
                    se: (0..k).map(|j| 5.0 - j as f32).collect(),
                    soft: (0..2 * dims.n + dims.s).map(|j| j as f32 / 7.0).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn empty_file_round_trips() {
        let dims = CodebookDims::new(4, 3).unwrap();
        let mut buf = Vec::new();
        write_records(&[], dims, &mut buf).unwrap();
        assert_eq!(buf.len(), 16);
        assert!(read_records(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn parse_errors_are_distinct() {
        let dims = CodebookDims::new(4, 3).unwrap();
        let recs = vec![sample_record(0, 4, 5, 2, dims), sample_record(1, 4, 5, 2, dims)];
        let mut buf = Vec::new();
        write_records(&recs, dims, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[3] = b'X';
        assert!(matches!(read_records(bad.as_slice()), Err(Error::BadMagic { .. })));
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_records(bad.as_slice()), Err(Error::BadVersion { found: 2, .. })));
        for cut in [3, 10, 20, 40, buf.len() / 2, buf.len() - 1] {
            assert!(matches!(read_records(&buf[..cut]), Err(Error::Truncated(_))), "cut {cut}");
        }
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_records(extra.as_slice()), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn generation_is_deterministic_and_consistent() {
        let scene = generate_scene(3, &SceneConfig::default()).unwrap();
        let cfg = small_cfg();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = generate_dataset(&scene, &cfg, a.path()).unwrap();
        generate_dataset(&scene, &cfg, b.path()).unwrap();
        for f in ["train.nftl", "val.nftl", "test.nftl", MANIFEST_FILE, SCENE_FILE] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        assert_eq!(m.split(Split::Val).unwrap().records, 2);
        let ds = read_dataset(a.path()).unwrap();
        assert_eq!(ds.train.len(), 3);
        assert_eq!(ds.test[0].id, 5);
        for r in ds.train.iter().chain(&ds.val).chain(&ds.test) {
            assert_eq!(r.len(), 5);
            assert_eq!(r.cloud.len(), 16);
            for slot in 0..5 {
                let st = r.soft_target(slot, cfg.dims).unwrap();
                for v in [&st.theta, &st.phi, &st.r] {
                    assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
                assert!(r.labels[slot].optimal < 48);
                assert_eq!(r.labels[slot].optimal, r.labels[slot].topk[0]);
            }
        }
    }

    #[test]
    fn manifest_detects_count_mismatch() {
        let scene = generate_scene(3, &SceneConfig::default()).unwrap();
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&scene, &cfg, dir.path()).unwrap();
        let mut m = read_manifest(dir.path()).unwrap();
        m.splits[0].records = 4;
        fs::write(dir.path().join(MANIFEST_FILE), m.to_json().unwrap()).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Inconsistent(_))));

        let mut m2 = m.clone();
        m2.splits[0].records = 3;
        m2.config.points = 17;
        fs::write(dir.path().join(MANIFEST_FILE), m2.to_json().unwrap()).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Inconsistent(_))));

        let mut m3 = m.clone();
        m3.splits[0].records = 3;
        m3.splits[1].first_id = 2;
        assert!(matches!(DatasetManifest::from_json(&m3.to_json().unwrap()), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn sequence_errors_carry_id() {
        let scene = generate_scene(3, &SceneConfig::default()).unwrap();
        let mut cfg = small_cfg();
        cfg.trajectory.max_retries = 0;
        let cb = build_codebook(&cfg.array, cfg.dims, cfg.ranges).unwrap();
        let err = generate_sequence(&scene, &cfg, &cb, 42).unwrap_err();
        assert!(matches!(err, Error::Sequence { id: 42, .. }));
    }

    #[test]
    fn codebook_export_round_trip() {
        let cfg = small_cfg();
        let cb = build_codebook(&cfg.array, cfg.dims, cfg.ranges).unwrap();
        let mut buf = Vec::new();
        write_codebook(&cb, &mut buf).unwrap();
        let e = read_codebook(buf.as_slice()).unwrap();
        assert_eq!(e.dims, cfg.dims);
        assert_eq!(e.array, cfg.array);
        assert_eq!(e.grids[2], cb.grid().grid(crate::codebook::BeamDim::R));
        let w = cb.codeword(7);
        let off = 7 * 64 * 2;
        for (m, c) in w.iter().enumerate() {
            assert_eq!(e.data[off + 2 * m], c.re as f32);
            assert_eq!(e.data[off + 2 * m + 1], c.im as f32);
        }
        assert!(matches!(read_codebook(&buf[..buf.len() - 2]), Err(Error::Truncated(_))));
    }

    proptest! {
        #[test]
        fn records_round_trip_bitwise(
            n in 1usize..6, s in 1usize..5, t in 1usize..6, p in 0usize..9, k in 1usize..4, count in 0usize..4,
            bits in any::<u32>(),
        ) {
            let dims = CodebookDims::new(n, s).unwrap();
            let mut recs: Vec<_> = (0..count as u64).map(|i| sample_record(i, t, p, k, dims)).collect();
            if let Some(r) = recs.first_mut() {
                r.positions[0][0] = f32::from_bits(bits & 0x7f7f_ffff);
            }
            let mut buf = Vec::new();
            write_records(&recs, dims, &mut buf).unwrap();
            let back = read_records(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), recs.len());
            for (a, b) in back.iter().zip(&recs) {
                prop_assert_eq!(a.id, b.id);
                let bits_a: Vec<u32> = a.positions.iter().flatten().map(|x| x.to_bits()).collect();
                let bits_b: Vec<u32> = b.positions.iter().flatten().map(|x| x.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
                prop_assert_eq!(a, b);
            }
        }
    }
}
