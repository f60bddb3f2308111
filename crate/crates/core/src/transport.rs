//! Video source and sink.
//!
//! Raw 8-bit grayscale frames (binary PGM) or an opaque byte stream are
//! serialized into one stream, each frame prefixed by an 8-byte header
//! (frame index, byte length; both u32 big-endian), and cut into fixed-size
//! packet payloads. The receiver places packet payloads by sequence number
//! and repairs lost byte ranges with freeze-frame concealment: a missing
//! byte is copied from the same position of the last fully delivered frame,
//! or set to mid-gray when no frame has been delivered yet.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::fec_framing::FLAG_RAW_FRAMES;

pub const FRAME_PREFIX_LEN: usize = 8;
pub const MIN_PAYLOAD_SIZE: usize = 64;
pub const MAX_PAYLOAD_SIZE: usize = 8192;
/// Fill value for bytes with no earlier delivered frame to copy from.
pub const CONCEAL_FILL: u8 = 128;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {reason}", path.display())]
    Parse { path: PathBuf, reason: String },
    #[error("{}: frame is {found_w}x{found_h}, sequence is {expected_w}x{expected_h}", path.display())]
    DimensionMismatch { path: PathBuf, expected_w: usize, expected_h: usize, found_w: usize, found_h: usize },
    #[error("no frames in {}", .0.display())]
    NoFrames(PathBuf),
    #[error("payload size {0} outside [{MIN_PAYLOAD_SIZE}, {MAX_PAYLOAD_SIZE}]")]
    PayloadSize(usize),
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoFrame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl VideoFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, TransportError> {
        if width == 0 || height == 0 {
            return Err(TransportError::InvalidFrame(format!("zero dimension {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(TransportError::InvalidFrame(format!(
                "{} pixels for {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("nonzero dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn parse_pgm(bytes: &[u8]) -> Result<Self, String> {
        let mut pos = 0;
        let mut token = || -> Result<&[u8], String> {
            loop {
                match bytes.get(pos) {
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(c) if c.is_ascii_whitespace() => pos += 1,
                    Some(_) => break,
                    None => return Err("truncated header".into()),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(|c| !c.is_ascii_whitespace()) {
                pos += 1;
            }
            Ok(&bytes[start..pos])
        };
        if token()? != b"P5" {
            return Err("not a binary PGM (P5)".into());
        }
        let mut number = |name: &str| -> Result<usize, String> {
            std::str::from_utf8(token()?)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| format!("bad {name}"))
        };
        let width = number("width")?;
        let height = number("height")?;
        let maxval = number("maxval")?;
        if maxval != 255 {
            return Err(format!("unsupported maxval {maxval}"));
        }
        // exactly one whitespace byte separates the header from the raster
        let raster = pos + 1;
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| "dimensions overflow".to_string())?;
        if bytes.len() < raster || bytes.len() - raster != expected {
            return Err(format!(
                "expected {expected} pixel bytes, found {}",
                bytes.len().saturating_sub(raster)
            ));
        }
        Self::new(width, height, bytes[raster..].to_vec()).map_err(|e| e.to_string())
    }
}

pub fn read_pgm(path: &Path) -> Result<VideoFrame, TransportError> {
    let bytes = fs::read(path).map_err(|source| TransportError::Io { path: path.into(), source })?;
    VideoFrame::parse_pgm(&bytes).map_err(|reason| TransportError::Parse { path: path.into(), reason })
}

pub fn write_pgm(path: &Path, frame: &VideoFrame) -> Result<(), TransportError> {
    let io = |source| TransportError::Io { path: path.into(), source };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&frame.to_pgm()).map_err(io)
}

/// Loads every `*.pgm` file in `dir`, in lexicographic file-name order.
pub fn load_frame_sequence(dir: &Path) -> Result<Vec<VideoFrame>, TransportError> {
    let io = |source| TransportError::Io { path: dir.into(), source };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()).map_err(io))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(TransportError::NoFrames(dir.into()));
    }
    let mut frames: Vec<VideoFrame> = Vec::with_capacity(paths.len());
    for path in &paths {
        let frame = read_pgm(path)?;
        if let Some(first) = frames.first() {
            if (first.width, first.height) != (frame.width, frame.height) {
                return Err(TransportError::DimensionMismatch {
                    path: path.clone(),
                    expected_w: first.width,
                    expected_h: first.height,
                    found_w: frame.width,
                    found_h: frame.height,
                });
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Deterministic moving test pattern: a diagonal gradient drifting one
/// pixel per frame with a bright square bouncing between the borders.
/// Integer-only, so identical on every platform.
pub fn synthetic_frames(width: usize, height: usize, count: usize) -> Vec<VideoFrame> {
    fn bounce(t: usize, span: usize) -> usize {
        if span == 0 {
            return 0;
        }
        let phase = t % (2 * span);
        if phase < span { phase } else { 2 * span - phase }
    }
    let side = (width.min(height) / 4).max(1);
    (0..count)
        .map(|t| {
            let x0 = bounce(2 * t, width - side);
            let y0 = bounce(t, height - side);
            let pixels = (0..height)
                .flat_map(|y| (0..width).map(move |x| (x, y)))
                .map(|(x, y)| {
                    if (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y) {
                        240
                    } else {
                        ((x + 2 * y + t) % 200) as u8 + 16
                    }
                })
                .collect();
            VideoFrame::new(width, height, pixels).expect("consistent dimensions")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    /// Fixed-size raw frames.
    RawFrames,
    /// A single opaque byte stream.
    Opaque,
}

impl StreamKind {
    pub fn flags(self) -> u8 {
        match self {
            Self::RawFrames => FLAG_RAW_FRAMES,
            Self::Opaque => 0,
        }
    }
}

/// Transport packet before framing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub seq: u32,
    pub flags: u8,
    pub payload: Vec<u8>,
}

/// Shape of a segmented stream, known to both ends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamLayout {
    pub kind: StreamKind,
    pub frame_lengths: Vec<usize>,
    pub payload_size: usize,
}

impl StreamLayout {
    pub fn stream_len(&self) -> usize {
        self.frame_lengths.iter().map(|l| l + FRAME_PREFIX_LEN).sum()
    }

    pub fn packet_count(&self) -> usize {
        self.stream_len().div_ceil(self.payload_size)
    }

    /// Byte range of packet `seq` within the stream.
    pub fn packet_range(&self, seq: usize) -> std::ops::Range<usize> {
        let start = seq * self.payload_size;
        start..(start + self.payload_size).min(self.stream_len())
    }

    /// Stream byte range holding the data of each frame.
    fn frame_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut offset = 0;
        self.frame_lengths
            .iter()
            .map(|&len| {
                let start = offset + FRAME_PREFIX_LEN;
                offset = start + len;
                start..offset
            })
            .collect()
    }
}

/// Serializes `frames` into one prefixed stream cut into `payload_size`
/// chunks.
pub fn segment<F: AsRef<[u8]>>(
    frames: &[F],
    kind: StreamKind,
    payload_size: usize,
) -> Result<(Vec<Packet>, StreamLayout), TransportError> {
    if !(MIN_PAYLOAD_SIZE..=MAX_PAYLOAD_SIZE).contains(&payload_size) {
        return Err(TransportError::PayloadSize(payload_size));
    }
    let mut stream = Vec::new();
    for (i, frame) in frames.iter().enumerate() {
        let frame = frame.as_ref();
        stream.extend_from_slice(&(i as u32).to_be_bytes());
        stream.extend_from_slice(&(frame.len() as u32).to_be_bytes());
        stream.extend_from_slice(frame);
    }
    let flags = kind.flags();
    let packets = stream
        .chunks(payload_size)
        .enumerate()
        .map(|(seq, chunk)| Packet { seq: seq as u32, flags, payload: chunk.to_vec() })
        .collect();
    let layout = StreamLayout {
        kind,
        frame_lengths: frames.iter().map(|f| f.as_ref().len()).collect(),
        payload_size,
    };
    Ok((packets, layout))
}

/// Frame emitted by the reassembler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceivedFrame {
    pub index: usize,
    pub bytes: Vec<u8>,
    pub concealed: bool,
}

/// Streaming receiver. Packets must be resolved (delivered or lost) in
/// sequence order; frames are emitted as soon as every packet overlapping
/// them has been resolved.
#[derive(Debug)]
pub struct Reassembler {
    layout: StreamLayout,
    frame_ranges: Vec<std::ops::Range<usize>>,
    stream: Vec<u8>,
    valid: Vec<bool>,
    next_seq: usize,
    next_frame: usize,
    last_good: Option<Vec<u8>>,
    packets_delivered: u64,
    packets_lost: u64,
}

impl Reassembler {
    pub fn new(layout: StreamLayout) -> Self {
        let len = layout.stream_len();
        Self {
            frame_ranges: layout.frame_ranges(),
            layout,
            stream: vec![0; len],
            valid: vec![false; len],
            next_seq: 0,
            next_frame: 0,
            last_good: None,
            packets_delivered: 0,
            packets_lost: 0,
        }
    }

    pub fn layout(&self) -> &StreamLayout {
        &self.layout
    }

    pub fn next_seq(&self) -> usize {
        self.next_seq
    }

    pub fn packets_delivered(&self) -> u64 {
        self.packets_delivered
    }

    pub fn packets_lost(&self) -> u64 {
        self.packets_lost
    }

    pub fn is_finished(&self) -> bool {
        self.next_frame == self.frame_ranges.len() && self.next_seq >= self.layout.packet_count()
    }

    /// Resolves the next packet. `None` marks it lost; a payload of the
    /// wrong length is also treated as lost.
    pub fn push(&mut self, payload: Option<&[u8]>) -> Vec<ReceivedFrame> {
        let seq = self.next_seq;
        if seq >= self.layout.packet_count() {
            return Vec::new();
        }
        let range = self.layout.packet_range(seq);
        match payload {
            Some(p) if p.len() == range.len() => {
                self.stream[range.clone()].copy_from_slice(p);
                self.valid[range.clone()].fill(true);
                self.packets_delivered += 1;
            }
            _ => self.packets_lost += 1,
        }
        self.next_seq += 1;
        self.emit_ready(range.end)
    }

    /// Marks every unresolved packet lost and flushes all frames.
    pub fn finish(&mut self) -> Vec<ReceivedFrame> {
        let mut out = Vec::new();
        while self.next_seq < self.layout.packet_count() {
            out.extend(self.push(None));
        }
        out.extend(self.emit_ready(self.layout.stream_len()));
        out
    }

    fn emit_ready(&mut self, resolved: usize) -> Vec<ReceivedFrame> {
        let mut out = Vec::new();
        while let Some(range) = self.frame_ranges.get(self.next_frame).cloned() {
            if range.end > resolved {
                break;
            }
            let mut bytes = self.stream[range.clone()].to_vec();
            let valid = &self.valid[range];
            let concealed = valid.iter().any(|v| !v);
            if concealed {
                for (i, _) in valid.iter().enumerate().filter(|(_, v)| !**v) {
                    bytes[i] = self
                        .last_good
                        .as_ref()
                        .and_then(|g| g.get(i).copied())
                        .unwrap_or(CONCEAL_FILL);
                }
            } else {
                self.last_good = Some(bytes.clone());
            }
            out.push(ReceivedFrame { index: self.next_frame, bytes, concealed });
            self.next_frame += 1;
        }
        out
    }
}

/// PSNR in dB; `+inf` for identical inputs. Serialized as the string
/// `"inf"` in that case.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Db(pub f64);

impl Db {
    pub fn is_lossless(self) -> bool {
        self.0 == f64::INFINITY
    }
}

impl fmt::Display for Db {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_lossless() {
            f.write_str("inf")
        } else {
            write!(f, "{:.2}", self.0)
        }
    }
}

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.is_lossless() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Db {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Db(v)),
            Repr::Str(s) if s == "inf" => Ok(Db(f64::INFINITY)),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("invalid PSNR `{s}`"))),
        }
    }
}

/// PSNR over two equally sized 8-bit buffers.
pub fn psnr_bytes(reference: &[u8], received: &[u8]) -> Result<Db, TransportError> {
    if reference.len() != received.len() {
        return Err(TransportError::SizeMismatch(reference.len(), 1, received.len(), 1));
    }
    if reference.is_empty() {
        return Ok(Db(f64::INFINITY));
    }
    let sse: u64 = reference
        .iter()
        .zip(received)
        .map(|(&a, &b)| {
            let d = a as i64 - b as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(Db(f64::INFINITY));
    }
    let mse = sse as f64 / reference.len() as f64;
    Ok(Db(10.0 * (255.0 * 255.0 / mse).log10()))
}

pub fn psnr(reference: &VideoFrame, received: &VideoFrame) -> Result<Db, TransportError> {
    if (reference.width, reference.height) != (received.width, received.height) {
        return Err(TransportError::SizeMismatch(
            reference.width,
            reference.height,
            received.width,
            received.height,
        ));
    }
    psnr_bytes(&reference.pixels, &received.pixels)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransportMetrics {
    pub bits_sent: u64,
    pub bit_errors_pre_fec: u64,
    pub bit_errors_post_fec: u64,
    pub packets_sent: u64,
    pub packets_lost: u64,
    pub frames_delivered: u64,
    pub frames_concealed: u64,
    pub psnr_per_frame: Vec<Db>,
}

/// Batch form of [`Reassembler`]: `received[i]` is packet `i`'s payload or
/// `None` if it was lost; missing trailing entries count as lost. PSNR is
/// measured against `reference` when given.
pub fn reassemble(
    layout: &StreamLayout,
    received: &[Option<Vec<u8>>],
    reference: Option<&[Vec<u8>]>,
) -> Result<(Vec<Vec<u8>>, TransportMetrics), TransportError> {
    let mut rx = Reassembler::new(layout.clone());
    let mut frames = Vec::with_capacity(layout.frame_lengths.len());
    for p in received.iter().take(layout.packet_count()) {
        frames.extend(rx.push(p.as_deref()));
    }
    frames.extend(rx.finish());

    let mut metrics = TransportMetrics {
        packets_sent: layout.packet_count() as u64,
        packets_lost: rx.packets_lost(),
        ..Default::default()
    };
    for f in &frames {
        if f.concealed {
            metrics.frames_concealed += 1;
        } else {
            metrics.frames_delivered += 1;
        }
        if let Some(reference) = reference {
            metrics.psnr_per_frame.push(psnr_bytes(&reference[f.index], &f.bytes)?);
        }
    }
    Ok((frames.into_iter().map(|f| f.bytes).collect(), metrics))
}
